use crate::geometry::Point3;

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CloudError {
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("{colors} colors supplied for {points} points")]
    ColorCountMismatch { points: usize, colors: usize },
}

/// Ordered set of 3D points in meters, optionally colored.
///
/// Every stored coordinate is finite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
    colors: Option<Vec<Rgb>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self, CloudError> {
        if let Some(index) = points.iter().position(|p| !is_finite(p)) {
            return Err(CloudError::NonFinite { index });
        }
        Ok(Self {
            points,
            colors: None,
        })
    }

    /// Keeps only finite points; returns the cloud and the number dropped.
    pub fn from_points_lossy(points: Vec<Point3>) -> (Self, usize) {
        let before = points.len();
        let points: Vec<Point3> = points.into_iter().filter(is_finite).collect();
        let dropped = before - points.len();
        (
            Self {
                points,
                colors: None,
            },
            dropped,
        )
    }

    pub(crate) fn from_parts_unchecked(points: Vec<Point3>, colors: Option<Vec<Rgb>>) -> Self {
        debug_assert!(colors.as_ref().is_none_or(|c| c.len() == points.len()));
        Self { points, colors }
    }

    pub fn with_colors(mut self, colors: Vec<Rgb>) -> Result<Self, CloudError> {
        if colors.len() != self.points.len() {
            return Err(CloudError::ColorCountMismatch {
                points: self.points.len(),
                colors: colors.len(),
            });
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn without_colors(mut self) -> Self {
        self.colors = None;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[Rgb]> {
        self.colors.as_deref()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// Axis-aligned bounds `(min, max)`, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }
}

fn is_finite(p: &Point3) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_and_filters_non_finite() {
        let pts = vec![Point3::origin(), Point3::new(f64::NAN, 0.0, 0.0), Point3::new(1.0, 1.0, f64::INFINITY)];
        assert_eq!(PointCloud::new(pts.clone()), Err(CloudError::NonFinite { index: 1 }));
        let (cloud, dropped) = PointCloud::from_points_lossy(pts);
        assert_eq!(cloud.len(), 1);
        assert_eq!(dropped, 2);
    }

    #[test]
    fn color_count_must_match() {
        let cloud = PointCloud::new(vec![Point3::origin(); 3]).unwrap();
        assert!(cloud.clone().with_colors(vec![[0, 0, 0]; 2]).is_err());
        assert_eq!(cloud.with_colors(vec![[1, 2, 3]; 3]).unwrap().colors().unwrap().len(), 3);
    }

    #[test]
    fn bounds_cover_points() {
        let cloud = PointCloud::new(vec![Point3::new(1.0, -2.0, 0.5), Point3::new(-1.0, 3.0, 0.0)]).unwrap();
        let (lo, hi) = cloud.bounds().unwrap();
        assert_eq!(lo, Point3::new(-1.0, -2.0, 0.0));
        assert_eq!(hi, Point3::new(1.0, 3.0, 0.5));
        assert!(PointCloud::default().bounds().is_none());
    }
}
