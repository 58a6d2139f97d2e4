use crate::cloud::PointCloud;
use crate::geometry::Point3;

use super::{assemble, header_lines, FormatError, LoadedCloud, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Data {
    Ascii,
    Binary,
}

struct Field {
    name: String,
    size: usize,
    kind: char,
    count: usize,
}

pub(super) fn parse(bytes: &[u8]) -> Result<LoadedCloud, FormatError> {
    let (lines, body_offset) = header_lines(bytes, "DATA")?;
    let header_err = |line: usize, message: String| FormatError::Header { line, message };

    let mut names: Vec<String> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    let mut kinds: Vec<char> = Vec::new();
    let mut counts: Option<Vec<usize>> = None;
    let mut width: Option<usize> = None;
    let mut height: usize = 1;
    let mut points_decl: Option<usize> = None;
    let mut data = None;
    let mut last_line = 1;

    for (line_no, line) in &lines {
        let line_no = *line_no;
        last_line = line_no;
        let mut tokens = line.split_whitespace();
        let Some(key) = tokens.next() else { continue };
        if key.starts_with('#') {
            continue;
        }
        let rest: Vec<&str> = tokens.collect();
        let numbers = |rest: &[&str]| -> Result<Vec<usize>, FormatError> {
            rest.iter()
                .map(|t| t.parse().map_err(|_| header_err(line_no, format!("bad number `{t}` in {key}"))))
                .collect()
        };
        let single = |rest: &[&str]| -> Result<usize, FormatError> {
            match numbers(rest)?.as_slice() {
                [v] => Ok(*v),
                _ => Err(header_err(line_no, format!("{key} takes one value"))),
            }
        };
        match key {
            "VERSION" | "VIEWPOINT" => {}
            "FIELDS" => names = rest.iter().map(|s| s.to_string()).collect(),
            "SIZE" => sizes = numbers(&rest)?,
            "TYPE" => {
                kinds = rest
                    .iter()
                    .map(|t| match *t {
                        "F" | "I" | "U" => Ok(t.chars().next().unwrap()),
                        other => Err(header_err(line_no, format!("unknown TYPE `{other}`"))),
                    })
                    .collect::<Result<_, _>>()?
            }
            "COUNT" => counts = Some(numbers(&rest)?),
            "WIDTH" => width = Some(single(&rest)?),
            "HEIGHT" => height = single(&rest)?,
            "POINTS" => points_decl = Some(single(&rest)?),
            "DATA" => {
                data = Some(match rest.as_slice() {
                    ["ascii"] => Data::Ascii,
                    ["binary"] => Data::Binary,
                    ["binary_compressed"] => {
                        return Err(FormatError::Unsupported("binary_compressed PCD data".into()))
                    }
                    _ => return Err(header_err(line_no, format!("unsupported DATA line `{line}`"))),
                })
            }
            other => return Err(header_err(line_no, format!("unknown header keyword `{other}`"))),
        }
    }
    let data = data.ok_or_else(|| header_err(last_line, "missing DATA line".into()))?;
    let counts = counts.unwrap_or_else(|| vec![1; names.len()]);
    if sizes.len() != names.len() || kinds.len() != names.len() || counts.len() != names.len() {
        return Err(header_err(last_line, "FIELDS, SIZE, TYPE and COUNT lengths differ".into()));
    }
    let n = match (points_decl, width) {
        (Some(p), _) => p,
        (None, Some(w)) => w * height,
        (None, None) => return Err(header_err(last_line, "missing POINTS and WIDTH".into())),
    };
    let fields: Vec<Field> = names
        .into_iter()
        .zip(sizes)
        .zip(kinds)
        .zip(counts)
        .map(|(((name, size), kind), count)| Field {
            name,
            size,
            kind,
            count,
        })
        .collect();
    let mut coord_cols = [usize::MAX; 3];
    let mut coord_types = [Scalar::F64; 3];
    for (axis, name) in ["x", "y", "z"].iter().enumerate() {
        let Some(i) = fields.iter().position(|f| f.name == *name) else {
            return Err(header_err(last_line, format!("missing field `{name}`")));
        };
        let f = &fields[i];
        coord_types[axis] = match (f.kind, f.size, f.count) {
            ('F', 4, 1) => Scalar::F32,
            ('F', 8, 1) => Scalar::F64,
            _ => {
                return Err(FormatError::Unsupported(format!(
                    "field `{name}` must be a single FLOAT32 or FLOAT64"
                )))
            }
        };
        coord_cols[axis] = i;
    }

    let body = &bytes[body_offset..];
    let mut points = Vec::with_capacity(n);
    match data {
        Data::Binary => {
            let stride: usize = fields.iter().map(|f| f.size * f.count).sum();
            let offsets: Vec<usize> = fields
                .iter()
                .scan(0, |at, f| {
                    let here = *at;
                    *at += f.size * f.count;
                    Some(here)
                })
                .collect();
            let expected = stride * n;
            if body.len() < expected {
                return Err(FormatError::Truncated {
                    expected,
                    actual: body.len(),
                });
            }
            let at = coord_cols.map(|c| offsets[c]);
            for record in body[..expected].chunks_exact(stride.max(1)) {
                let read = |axis: usize| {
                    let t = coord_types[axis];
                    t.read_le(&record[at[axis]..at[axis] + t.size()])
                };
                points.push(Point3::new(read(0), read(1), read(2)));
            }
        }
        Data::Ascii => {
            // Token position of each field's first value.
            let token_at: Vec<usize> = fields
                .iter()
                .scan(0, |at, f| {
                    let here = *at;
                    *at += f.count;
                    Some(here)
                })
                .collect();
            let cols = coord_cols.map(|c| token_at[c]);
            let text = std::str::from_utf8(body).map_err(|_| FormatError::Body {
                line: last_line + 1,
                message: "body is not valid UTF-8".into(),
            })?;
            let mut rows = text
                .lines()
                .enumerate()
                .map(|(i, l)| (last_line + 1 + i, l))
                .filter(|(_, l)| !l.trim().is_empty());
            for k in 0..n {
                let (line, row) = rows.next().ok_or_else(|| FormatError::Body {
                    line: last_line,
                    message: format!("expected {n} points, found {k}"),
                })?;
                let tokens: Vec<&str> = row.split_whitespace().collect();
                let value = |axis: usize| -> Result<f64, FormatError> {
                    let token = tokens.get(cols[axis]).ok_or_else(|| FormatError::Body {
                        line,
                        message: "too few values in point".into(),
                    })?;
                    match token.to_ascii_lowercase().as_str() {
                        "nan" => Ok(f64::NAN),
                        _ => token.parse().map_err(|_| FormatError::Body {
                            line,
                            message: format!("cannot parse `{token}`"),
                        }),
                    }
                };
                points.push(Point3::new(value(0)?, value(1)?, value(2)?));
            }
        }
    }
    Ok(assemble(points, None))
}

pub(super) fn write(cloud: &PointCloud, ascii: bool) -> Vec<u8> {
    let n = cloud.len();
    let (data, size) = if ascii { ("ascii", 4) } else { ("binary", 8) };
    let header = format!(
        "# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\nFIELDS x y z\nSIZE {size} {size} {size}\n\
         TYPE F F F\nCOUNT 1 1 1\nWIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA {data}\n"
    );
    let mut out = Vec::with_capacity(header.len() + n * 24);
    out.extend_from_slice(header.as_bytes());
    if ascii {
        use std::fmt::Write as _;
        let mut text = String::with_capacity(n * 36);
        for p in cloud.points() {
            let _ = writeln!(text, "{:.6} {:.6} {:.6}", p.x, p.y, p.z);
        }
        out.extend_from_slice(text.as_bytes());
    } else {
        for p in cloud.points() {
            out.extend_from_slice(&p.x.to_le_bytes());
            out.extend_from_slice(&p.y.to_le_bytes());
            out.extend_from_slice(&p.z.to_le_bytes());
        }
    }
    out
}
