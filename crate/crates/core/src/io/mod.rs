//! Point cloud files (PLY and PCD, ASCII or binary little-endian) and the
//! colored error-map export.
//!
//! Readers take `x`, `y`, `z` from any numeric PLY type or from PCD FLOAT32 /
//! FLOAT64 fields, keep PLY `red`/`green`/`blue` when present, and skip every
//! other property. Points with a non-finite coordinate are dropped and
//! counted. Writers emit doubles for binary output (bit-exact round trip) and
//! six decimals for ASCII.

mod pcd;
mod ply;

use std::path::{Path, PathBuf};

use crate::cloud::{PointCloud, Rgb};
use crate::geometry::Point3;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("header line {line}: {message}")]
    Header { line: usize, message: String },
    #[error("line {line}: {message}")]
    Body { line: usize, message: String },
    #[error("truncated binary body: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("big-endian binary data is not supported")]
    BigEndian,
    #[error("unsupported: {0}")]
    Unsupported(String),
}

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{}: unsupported extension (expected .ply or .pcd)", .0.display())]
    UnsupportedExtension(PathBuf),
    #[error("{distances} distances supplied for {points} points")]
    LengthMismatch { points: usize, distances: usize },
    #[error("error-map maximum must be positive and finite, got {0}")]
    BadMaximum(f64),
    #[error("distance {index} is NaN")]
    NanDistance { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Ply,
    Pcd,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<Self, IoError> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("ply") => Ok(Self::Ply),
            Some("pcd") => Ok(Self::Pcd),
            _ => Err(IoError::UnsupportedExtension(path.to_path_buf())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    #[default]
    Binary,
    Ascii,
}

/// A cloud read from disk and the number of non-finite points dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCloud {
    pub cloud: PointCloud,
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    pub(crate) fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    /// `bytes` must be exactly `size()` long.
    pub(crate) fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

/// Splits a text header off `bytes`. Returns `(1-based line number, line)`
/// pairs up to and including the first line whose first token is
/// `terminator`, and the byte offset just past that line.
pub(crate) fn header_lines(bytes: &[u8], terminator: &str) -> Result<(Vec<(usize, String)>, usize), FormatError> {
    let mut lines = Vec::new();
    let mut start = 0;
    let mut line_no = 0;
    while start < bytes.len() {
        line_no += 1;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| start + p)
            .unwrap_or(bytes.len());
        let raw = &bytes[start..end];
        let text = std::str::from_utf8(raw)
            .map_err(|_| FormatError::Header {
                line: line_no,
                message: "header is not valid UTF-8".into(),
            })?
            .trim_end_matches('\r')
            .to_string();
        let done = text.split_whitespace().next() == Some(terminator);
        lines.push((line_no, text));
        start = (end + 1).min(bytes.len());
        if done {
            return Ok((lines, start));
        }
    }
    Err(FormatError::Header {
        line: line_no.max(1),
        message: format!("header ends without `{terminator}`"),
    })
}

pub(crate) fn assemble(points: Vec<Point3>, colors: Option<Vec<Rgb>>) -> LoadedCloud {
    let keep: Vec<bool> = points
        .iter()
        .map(|p| p.x.is_finite() && p.y.is_finite() && p.z.is_finite())
        .collect();
    let dropped = keep.iter().filter(|k| !**k).count();
    let (points, colors) = if dropped == 0 {
        (points, colors)
    } else {
        let pts = points.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| p).collect();
        let cols = colors.map(|c| c.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(c, _)| c).collect());
        (pts, cols)
    };
    LoadedCloud {
        cloud: PointCloud::from_parts_unchecked(points, colors),
        dropped,
    }
}

/// Parses an in-memory file of the given format.
pub fn parse_cloud(bytes: &[u8], format: CloudFormat) -> Result<LoadedCloud, FormatError> {
    match format {
        CloudFormat::Ply => ply::parse(bytes),
        CloudFormat::Pcd => pcd::parse(bytes),
    }
}

/// Serializes a cloud. PCD output carries geometry only.
pub fn encode_cloud(cloud: &PointCloud, format: CloudFormat, encoding: Encoding) -> Vec<u8> {
    let ascii = encoding == Encoding::Ascii;
    match format {
        CloudFormat::Ply => ply::write(cloud, ascii),
        CloudFormat::Pcd => pcd::write(cloud, ascii),
    }
}

/// Reads a `.ply` or `.pcd` file; the encoding is taken from the header.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<LoadedCloud, IoError> {
    let path = path.as_ref();
    let format = CloudFormat::from_path(path)?;
    let bytes = std::fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let loaded = parse_cloud(&bytes, format).map_err(|source| IoError::Format {
        path: path.to_path_buf(),
        source,
    })?;
    if loaded.dropped > 0 {
        log::warn!("{}: dropped {} non-finite points", path.display(), loaded.dropped);
    }
    Ok(loaded)
}

/// Writes a binary cloud, format chosen by extension.
pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<(), IoError> {
    write_cloud_with(path, cloud, Encoding::Binary)
}

pub fn write_cloud_with(path: impl AsRef<Path>, cloud: &PointCloud, encoding: Encoding) -> Result<(), IoError> {
    let path = path.as_ref();
    let format = CloudFormat::from_path(path)?;
    std::fs::write(path, encode_cloud(cloud, format, encoding)).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Blue-to-red ramp on `t = clamp(d / max, 0, 1)`: red is `round(255 t)`,
/// blue is its complement `255 − red`.
pub fn error_color(d: f64, max: f64) -> Rgb {
    let t = (d / max).clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    [r, 0, 255 - r]
}

/// Colors `cloud` by per-point distance.
pub fn export_error_map(cloud: &PointCloud, distances: &[f64], max: f64) -> Result<PointCloud, IoError> {
    if distances.len() != cloud.len() {
        return Err(IoError::LengthMismatch {
            points: cloud.len(),
            distances: distances.len(),
        });
    }
    if !(max > 0.0 && max.is_finite()) {
        return Err(IoError::BadMaximum(max));
    }
    if let Some(index) = distances.iter().position(|d| d.is_nan()) {
        return Err(IoError::NanDistance { index });
    }
    let colors = distances.iter().map(|&d| error_color(d, max)).collect();
    Ok(PointCloud::from_parts_unchecked(cloud.points().to_vec(), Some(colors)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_ply(text: &str) -> Result<LoadedCloud, FormatError> {
        parse_cloud(text.as_bytes(), CloudFormat::Ply)
    }

    #[test]
    fn ascii_ply_literals() {
        let loaded = parse_ply(
            "ply\nformat ascii 1.0\ncomment hi\nelement vertex 3\nproperty float x\nproperty float y\n\
             property float z\nproperty float intensity\nend_header\n0.5 1 2 9\n-3 4.25 5 9\n1e3 0 -0.125 9\n",
        )
        .unwrap();
        assert_eq!(loaded.dropped, 0);
        assert_eq!(
            loaded.cloud.points(),
            &[
                Point3::new(0.5, 1.0, 2.0),
                Point3::new(-3.0, 4.25, 5.0),
                Point3::new(1000.0, 0.0, -0.125)
            ]
        );
    }

    #[test]
    fn nan_vertex_is_dropped() {
        let mut text = String::from(
            "ply\nformat ascii 1.0\nelement vertex 10\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        );
        for i in 0..10 {
            if i == 4 {
                text.push_str("nan 0 0\n");
            } else {
                text.push_str(&format!("{i} 0 0\n"));
            }
        }
        let loaded = parse_ply(&text).unwrap();
        assert_eq!(loaded.cloud.len(), 9);
        assert_eq!(loaded.dropped, 1);
    }

    #[test]
    fn malformed_header_names_the_line() {
        let err = parse_ply("ply\nformat ascii 1.0\nelement vertex three\nend_header\n").unwrap_err();
        assert!(matches!(err, FormatError::Header { line: 3, .. }), "{err}");
        let err = parse_ply("ply\nformat ascii 1.0\nelement vertex 1\nproperty quad x\nend_header\n").unwrap_err();
        assert!(matches!(err, FormatError::Header { line: 4, .. }), "{err}");
    }

    #[test]
    fn truncated_binary_reports_byte_counts() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
        bytes.extend_from_slice(&[0u8; 20]);
        let err = parse_cloud(&bytes, CloudFormat::Ply).unwrap_err();
        assert!(matches!(err, FormatError::Truncated { expected: 24, actual: 20 }), "{err}");
    }

    #[test]
    fn big_endian_and_lists_are_rejected() {
        let err = parse_ply("ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n").unwrap_err();
        assert!(matches!(err, FormatError::BigEndian));
        let err = parse_ply(
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n\
             property list uchar int idx\nend_header\n0 0 0 1 1\n",
        )
        .unwrap_err();
        assert!(matches!(err, FormatError::Unsupported(_)));
    }

    #[test]
    fn binary_ply_skips_other_elements_and_reads_colors() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement camera 1\nproperty double f\n\
element vertex 2\nproperty uchar red\nproperty float x\nproperty uchar green\nproperty float y\n\
property float z\nproperty uchar blue\nend_header\n"
            .to_vec();
        bytes.extend_from_slice(&7.0f64.to_le_bytes());
        for (i, p) in [[1.0f32, 2.0, 3.0], [4.0, 5.0, 6.0]].iter().enumerate() {
            bytes.push(10 + i as u8);
            bytes.extend_from_slice(&p[0].to_le_bytes());
            bytes.push(20);
            bytes.extend_from_slice(&p[1].to_le_bytes());
            bytes.extend_from_slice(&p[2].to_le_bytes());
            bytes.push(30);
        }
        let loaded = parse_cloud(&bytes, CloudFormat::Ply).unwrap();
        assert_eq!(loaded.cloud.points(), &[Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)]);
        assert_eq!(loaded.cloud.colors().unwrap(), &[[10, 20, 30], [11, 20, 30]]);
    }

    #[test]
    fn pcd_ascii_with_extra_fields() {
        let text = "# .PCD v0.7\nVERSION 0.7\nFIELDS x y z intensity\nSIZE 4 4 4 4\nTYPE F F F F\nCOUNT 1 1 1 1\n\
                    WIDTH 2\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS 2\nDATA ascii\n1 2 3 0.5\n4 5 6 0.7\n";
        let loaded = parse_cloud(text.as_bytes(), CloudFormat::Pcd).unwrap();
        assert_eq!(loaded.cloud.points(), &[Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)]);
    }

    #[test]
    fn pcd_rejects_compressed_and_integer_coordinates() {
        let head = "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH 1\nHEIGHT 1\nPOINTS 1\n";
        let err = parse_cloud(format!("{head}DATA binary_compressed\n").as_bytes(), CloudFormat::Pcd).unwrap_err();
        assert!(matches!(err, FormatError::Unsupported(_)));
        let int_head = head.replace("TYPE F F F", "TYPE I I I");
        let err = parse_cloud(format!("{int_head}DATA ascii\n1 2 3\n").as_bytes(), CloudFormat::Pcd).unwrap_err();
        assert!(matches!(err, FormatError::Unsupported(_)));
    }

    #[test]
    fn binary_round_trips_are_bit_exact() {
        let cloud = PointCloud::new(vec![Point3::new(0.1, -2.0 / 3.0, 1e-300), Point3::new(f64::MAX, 5.0, -0.0)])
            .unwrap()
            .with_colors(vec![[1, 2, 3], [4, 5, 6]])
            .unwrap();
        for format in [CloudFormat::Ply, CloudFormat::Pcd] {
            let back = parse_cloud(&encode_cloud(&cloud, format, Encoding::Binary), format).unwrap();
            for (a, b) in back.cloud.points().iter().zip(cloud.points()) {
                for k in 0..3 {
                    assert_eq!(a[k].to_bits(), b[k].to_bits());
                }
            }
        }
        let back = parse_cloud(&encode_cloud(&cloud, CloudFormat::Ply, Encoding::Binary), CloudFormat::Ply).unwrap();
        assert_eq!(back.cloud.colors(), cloud.colors());
    }

    #[test]
    fn ascii_round_trip_within_a_micrometer() {
        let cloud = PointCloud::new(vec![Point3::new(1.23456789, -9.87654321, 0.0000004)]).unwrap();
        for format in [CloudFormat::Ply, CloudFormat::Pcd] {
            let back = parse_cloud(&encode_cloud(&cloud, format, Encoding::Ascii), format).unwrap();
            assert!((back.cloud.points()[0] - cloud.points()[0]).abs().max() <= 1e-6);
        }
    }

    #[test]
    fn ramp_endpoints_and_midpoint() {
        assert_eq!(error_color(0.0, 2.0), [0, 0, 255]);
        assert_eq!(error_color(2.0, 2.0), [255, 0, 0]);
        assert_eq!(error_color(5.0, 2.0), [255, 0, 0]);
        assert_eq!(error_color(1.0, 2.0), [128, 0, 127]);
    }

    #[test]
    fn error_map_preconditions() {
        let cloud = PointCloud::new(vec![Point3::origin()]).unwrap();
        assert!(matches!(
            export_error_map(&cloud, &[], 1.0),
            Err(IoError::LengthMismatch { points: 1, distances: 0 })
        ));
        assert!(matches!(export_error_map(&cloud, &[0.5], 0.0), Err(IoError::BadMaximum(_))));
        let colored = export_error_map(&cloud, &[0.5], 1.0).unwrap();
        assert_eq!(colored.colors().unwrap(), &[[128, 0, 127]]);
    }

    #[test]
    fn unknown_extension_is_rejected() {
        assert!(matches!(
            read_cloud("cloud.xyz"),
            Err(IoError::UnsupportedExtension(_))
        ));
    }
}
