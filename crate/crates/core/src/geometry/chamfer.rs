use super::{Aabb, Bvh, GeometryError, Point, PointCloud, Result};

/// Nearest-neighbour index over a fixed point set.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Point>,
    bvh: Bvh,
}

impl PointIndex {
    pub fn new(points: &[Point]) -> Self {
        let boxes: Vec<Aabb> = points.iter().map(|p| Aabb { min: *p, max: *p }).collect();
        Self { points: points.to_vec(), bvh: Bvh::build(&boxes, 4) }
    }

    /// Index and Euclidean distance of the nearest point; lowest index on ties.
    pub fn nearest(&self, p: &Point) -> Option<(usize, f64)> {
        self.bvh.nearest(p, |i| (p - self.points[i]).norm())
    }
}

fn mean_nearest(from: &[Point], to: &PointIndex) -> f64 {
    let sum: f64 = from.iter().map(|p| to.nearest(p).expect("non-empty index").1).sum();
    sum / from.len() as f64
}

/// Symmetric Chamfer distance: half the sum of the two mean nearest-neighbour
/// Euclidean distances.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::Contract("chamfer distance of an empty cloud"));
    }
    let ia = PointIndex::new(&a.points);
    let ib = PointIndex::new(&b.points);
    Ok(0.5 * (mean_nearest(&a.points, &ib) + mean_nearest(&b.points, &ia)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Point::new(p[0], p[1], p[2])).collect())
    }

    fn brute(a: &PointCloud, b: &PointCloud) -> f64 {
        let one = |x: &[Point], y: &[Point]| {
            x.iter()
                .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / x.len() as f64
        };
        0.5 * (one(&a.points, &b.points) + one(&b.points, &a.points))
    }

    #[test]
    fn hand_examples() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer(&cloud(&[[0.0, 0.0, 0.0]]), &cloud(&[[1.0, 0.0, 0.0]])).unwrap(), 1.0);
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let b = cloud(&[[0.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&a, &b).unwrap(), 0.25);
    }

    #[test]
    fn empty_is_contract_error() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        assert!(chamfer(&a, &PointCloud::default()).is_err());
        assert!(chamfer(&PointCloud::default(), &a).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_nonnegative_and_exact(
            a in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..60),
            b in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..60),
        ) {
            let (a, b) = (cloud(&a), cloud(&b));
            let ab = chamfer(&a, &b).unwrap();
            let ba = chamfer(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - brute(&a, &b)).abs() <= 1e-12);
        }
    }
}
