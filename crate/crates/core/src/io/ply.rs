use crate::cloud::{PointCloud, Rgb};
use crate::geometry::Point3;

use super::{assemble, header_lines, FormatError, LoadedCloud, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    /// `None` for list properties.
    properties: Vec<(String, Option<Scalar>)>,
}

impl Element {
    fn fixed_stride(&self) -> Option<usize> {
        self.properties.iter().map(|(_, t)| t.map(Scalar::size)).sum()
    }
}

fn scalar(name: &str, line: usize) -> Result<Scalar, FormatError> {
    Ok(match name {
        "char" | "int8" => Scalar::I8,
        "uchar" | "uint8" => Scalar::U8,
        "short" | "int16" => Scalar::I16,
        "ushort" | "uint16" => Scalar::U16,
        "int" | "int32" => Scalar::I32,
        "uint" | "uint32" => Scalar::U32,
        "float" | "float32" => Scalar::F32,
        "double" | "float64" => Scalar::F64,
        other => {
            return Err(FormatError::Header {
                line,
                message: format!("unknown property type `{other}`"),
            })
        }
    })
}

pub(super) fn parse(bytes: &[u8]) -> Result<LoadedCloud, FormatError> {
    let (lines, body_offset) = header_lines(bytes, "end_header")?;
    let header_err = |line: usize, message: String| FormatError::Header { line, message };

    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for (i, (line_no, line)) in lines.iter().enumerate() {
        let line_no = *line_no;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if i == 0 {
            if tokens != ["ply"] {
                return Err(header_err(line_no, "expected `ply` magic".into()));
            }
            continue;
        }
        match tokens.first().copied() {
            None | Some("comment") | Some("obj_info") | Some("end_header") => {}
            Some("format") => {
                encoding = Some(match tokens.get(1).copied() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLittleEndian,
                    Some("binary_big_endian") => return Err(FormatError::BigEndian),
                    _ => return Err(header_err(line_no, format!("unsupported format line `{line}`"))),
                });
            }
            Some("element") => {
                let (Some(name), Some(count), None) = (tokens.get(1), tokens.get(2), tokens.get(3)) else {
                    return Err(header_err(line_no, format!("malformed element line `{line}`")));
                };
                let count = count
                    .parse()
                    .map_err(|_| header_err(line_no, format!("bad element count `{count}`")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let Some(element) = elements.last_mut() else {
                    return Err(header_err(line_no, "property before any element".into()));
                };
                match tokens.as_slice() {
                    ["property", "list", count_ty, item_ty, name] => {
                        scalar(count_ty, line_no)?;
                        scalar(item_ty, line_no)?;
                        element.properties.push((name.to_string(), None));
                    }
                    ["property", ty, name] => {
                        element.properties.push((name.to_string(), Some(scalar(ty, line_no)?)));
                    }
                    _ => return Err(header_err(line_no, format!("malformed property line `{line}`"))),
                }
            }
            Some(other) => return Err(header_err(line_no, format!("unknown header keyword `{other}`"))),
        }
    }
    let last_line = lines.last().map(|l| l.0).unwrap_or(1);
    let encoding = encoding.ok_or_else(|| header_err(last_line, "missing format line".into()))?;
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| header_err(last_line, "no vertex element".into()))?;
    let vertex = &elements[vertex_pos];
    if vertex.properties.iter().any(|(_, t)| t.is_none()) {
        return Err(FormatError::Unsupported("list properties on vertex element".into()));
    }
    let column = |name: &str| vertex.properties.iter().position(|(n, _)| n == name);
    let (Some(ix), Some(iy), Some(iz)) = (column("x"), column("y"), column("z")) else {
        return Err(header_err(last_line, "vertex element lacks x, y or z".into()));
    };
    let rgb = match (column("red"), column("green"), column("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };

    let mut points = Vec::with_capacity(vertex.count);
    let mut colors: Option<Vec<Rgb>> = rgb.map(|_| Vec::with_capacity(vertex.count));
    let body = &bytes[body_offset..];

    match encoding {
        Encoding::Ascii => {
            let header_line_count = lines.last().map(|l| l.0).unwrap_or(0);
            let mut rows = std::str::from_utf8(body)
                .map_err(|_| FormatError::Body {
                    line: header_line_count + 1,
                    message: "body is not valid UTF-8".into(),
                })?
                .lines()
                .enumerate()
                .map(|(i, l)| (header_line_count + 1 + i, l))
                .filter(|(_, l)| !l.trim().is_empty());
            let skip: usize = elements[..vertex_pos].iter().map(|e| e.count).sum();
            for _ in 0..skip {
                rows.next().ok_or(FormatError::Body {
                    line: header_line_count,
                    message: "body ends before vertex data".into(),
                })?;
            }
            let mut values = vec![0.0f64; vertex.properties.len()];
            for k in 0..vertex.count {
                let (line, text) = rows.next().ok_or_else(|| FormatError::Body {
                    line: header_line_count,
                    message: format!("expected {} vertices, found {k}", vertex.count),
                })?;
                let mut tokens = text.split_whitespace();
                for v in values.iter_mut() {
                    let token = tokens.next().ok_or_else(|| FormatError::Body {
                        line,
                        message: "too few values in vertex".into(),
                    })?;
                    *v = parse_number(token).ok_or_else(|| FormatError::Body {
                        line,
                        message: format!("cannot parse `{token}`"),
                    })?;
                }
                points.push(Point3::new(values[ix], values[iy], values[iz]));
                if let (Some(c), Some([r, g, b])) = (colors.as_mut(), rgb) {
                    c.push([to_channel(values[r]), to_channel(values[g]), to_channel(values[b])]);
                }
            }
        }
        Encoding::BinaryLittleEndian => {
            let mut offset = 0usize;
            for e in &elements[..vertex_pos] {
                let stride = e.fixed_stride().ok_or_else(|| {
                    FormatError::Unsupported(format!("list properties in binary element `{}`", e.name))
                })?;
                offset += stride * e.count;
            }
            let layout: Vec<(usize, Scalar)> = vertex
                .properties
                .iter()
                .scan(0usize, |at, (_, t)| {
                    let t = t.expect("checked above");
                    let here = *at;
                    *at += t.size();
                    Some((here, t))
                })
                .collect();
            let stride = vertex.fixed_stride().expect("checked above");
            let expected = offset + stride * vertex.count;
            if body.len() < expected {
                return Err(FormatError::Truncated {
                    expected,
                    actual: body.len(),
                });
            }
            let read = |record: &[u8], col: usize| {
                let (at, t) = layout[col];
                t.read_le(&record[at..at + t.size()])
            };
            for record in body[offset..expected].chunks_exact(stride) {
                points.push(Point3::new(read(record, ix), read(record, iy), read(record, iz)));
                if let (Some(c), Some([r, g, b])) = (colors.as_mut(), rgb) {
                    c.push([
                        to_channel(read(record, r)),
                        to_channel(read(record, g)),
                        to_channel(read(record, b)),
                    ]);
                }
            }
        }
    }
    Ok(assemble(points, colors))
}

fn parse_number(token: &str) -> Option<f64> {
    match token.to_ascii_lowercase().as_str() {
        "nan" | "-nan" => Some(f64::NAN),
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => token.parse().ok(),
    }
}

fn to_channel(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub(super) fn write(cloud: &PointCloud, ascii: bool) -> Vec<u8> {
    let n = cloud.len();
    let colors = cloud.colors();
    let mut out = Vec::with_capacity(256 + n * (24 + if colors.is_some() { 3 } else { 0 }));
    let format = if ascii { "ascii" } else { "binary_little_endian" };
    let ty = if ascii { "float" } else { "double" };
    let mut header = format!("ply\nformat {format} 1.0\nelement vertex {n}\n");
    for axis in ["x", "y", "z"] {
        header.push_str(&format!("property {ty} {axis}\n"));
    }
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());
    if ascii {
        use std::fmt::Write as _;
        let mut text = String::with_capacity(n * 40);
        for (i, p) in cloud.points().iter().enumerate() {
            let _ = write!(text, "{:.6} {:.6} {:.6}", p.x, p.y, p.z);
            if let Some(c) = colors {
                let [r, g, b] = c[i];
                let _ = write!(text, " {r} {g} {b}");
            }
            text.push('\n');
        }
        out.extend_from_slice(text.as_bytes());
    } else {
        for (i, p) in cloud.points().iter().enumerate() {
            out.extend_from_slice(&p.x.to_le_bytes());
            out.extend_from_slice(&p.y.to_le_bytes());
            out.extend_from_slice(&p.z.to_le_bytes());
            if let Some(c) = colors {
                out.extend_from_slice(&c[i]);
            }
        }
    }
    out
}
