use mapeval::io::{self, CloudFormat, Encoding};
use mapeval::perturb::Sampler;
use mapeval::{Point3, PointCloud, Rgb};
use proptest::prelude::*;

fn coords() -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(prop::array::uniform3(-1e4..1e4f64).prop_map(Point3::from), 1..300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binary_round_trip_is_bit_exact(pts in coords(), pcd in any::<bool>()) {
        let format = if pcd { CloudFormat::Pcd } else { CloudFormat::Ply };
        let cloud = PointCloud::new(pts).unwrap();
        let bytes = io::encode_cloud(&cloud, format, Encoding::Binary);
        let back = io::parse_cloud(&bytes, format).unwrap();
        prop_assert_eq!(back.dropped, 0);
        prop_assert_eq!(back.cloud.points(), cloud.points());
    }

    #[test]
    fn ply_colors_round_trip(pts in coords(), seed in any::<u64>()) {
        let mut s = Sampler::new(seed);
        let colors: Vec<Rgb> = pts.iter().map(|_| [s.below(256) as u8, s.below(256) as u8, s.below(256) as u8]).collect();
        let cloud = PointCloud::new(pts).unwrap().with_colors(colors.clone()).unwrap();
        for encoding in [Encoding::Binary, Encoding::Ascii] {
            let back = io::parse_cloud(&io::encode_cloud(&cloud, CloudFormat::Ply, encoding), CloudFormat::Ply).unwrap();
            prop_assert_eq!(back.cloud.colors(), Some(colors.as_slice()));
        }
    }

    #[test]
    fn ascii_round_trip_within_print_precision(pts in coords(), pcd in any::<bool>()) {
        let format = if pcd { CloudFormat::Pcd } else { CloudFormat::Ply };
        let cloud = PointCloud::new(pts).unwrap();
        let back = io::parse_cloud(&io::encode_cloud(&cloud, format, Encoding::Ascii), format).unwrap();
        for (a, b) in cloud.points().iter().zip(back.cloud.points()) {
            // Six decimals in f32: relative f32 rounding dominates at 1e4.
            prop_assert!((a - b).amax() <= 1e-6 + 1e-6 * a.coords.amax());
        }
    }
}

#[test]
fn million_point_files_round_trip() {
    let mut s = Sampler::new(41);
    let pts: Vec<Point3> = (0..1_000_000)
        .map(|_| Point3::new(s.uniform() * 100.0, s.uniform() * 50.0, s.normal()))
        .collect();
    let cloud = PointCloud::new(pts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for name in ["big.ply", "big.pcd"] {
        let path = dir.path().join(name);
        io::write_cloud(&path, &cloud).unwrap();
        let back = io::read_cloud(&path).unwrap();
        assert_eq!(back.cloud.len(), 1_000_000);
        assert!(back.cloud.points() == cloud.points(), "{name} differs");
    }
}

#[test]
fn error_map_file_has_uchar_colors() {
    let cloud = PointCloud::new(vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)]).unwrap();
    let colored = io::export_error_map(&cloud, &[0.0, 0.1, 0.5], 0.2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("error_map.ply");
    io::write_cloud(&path, &colored).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header = String::from_utf8_lossy(&bytes[..bytes.windows(10).position(|w| w == b"end_header").unwrap()]).to_string();
    assert!(header.contains("format binary_little_endian 1.0"));
    for c in ["red", "green", "blue"] {
        assert!(header.contains(&format!("property uchar {c}")), "{header}");
    }
    let back = io::read_cloud(&path).unwrap();
    assert_eq!(back.cloud.colors().unwrap(), &[[0, 0, 255], [128, 0, 127], [255, 0, 0]]);
}

#[test]
fn missing_file_names_the_path() {
    let err = io::read_cloud("/nonexistent/dir/cloud.ply").unwrap_err();
    assert!(err.to_string().contains("/nonexistent/dir/cloud.ply"), "{err}");
}
