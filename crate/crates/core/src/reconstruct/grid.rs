use super::{ReconstructError, Result};
use crate::geometry::Point;

/// Field samples on a cubic lattice over `[-bound, bound]^3`, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub resolution: usize,
    pub bound: f64,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn cell_size(&self) -> f64 {
        2.0 * self.bound / (self.resolution - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        lattice_coord(i, self.resolution, self.bound)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Point {
        Point::new(self.coord(i), self.coord(j), self.coord(k))
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution * (j + self.resolution * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }
}

fn lattice_coord(i: usize, resolution: usize, bound: f64) -> f64 {
    -bound + i as f64 * (2.0 * bound / (resolution - 1) as f64)
}

/// Samples `field` at every lattice point, `slab_layers` z-layers per call.
/// Results do not depend on the slab size.
pub fn evaluate_grid<F>(resolution: usize, bound: f64, slab_layers: usize, mut field: F) -> Result<ScalarGrid>
where
    F: FnMut(&[Point]) -> Result<Vec<f64>>,
{
    if resolution < 2 {
        return Err(ReconstructError::Config(format!("grid resolution {resolution} < 2")));
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(ReconstructError::Config(format!("grid bound {bound} must be positive")));
    }
    let r = resolution;
    let layers = slab_layers.max(1);
    let mut values = Vec::with_capacity(r * r * r);
    let mut k0 = 0;
    while k0 < r {
        let k1 = (k0 + layers).min(r);
        let mut pts = Vec::with_capacity((k1 - k0) * r * r);
        for k in k0..k1 {
            for j in 0..r {
                for i in 0..r {
                    pts.push(Point::new(
                        lattice_coord(i, r, bound),
                        lattice_coord(j, r, bound),
                        lattice_coord(k, r, bound),
                    ));
                }
            }
        }
        let v = field(&pts)?;
        if v.len() != pts.len() {
            return Err(ReconstructError::Contract("field returned the wrong number of values"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ReconstructError::Contract("field returned a non-finite value"));
        }
        values.extend(v);
        k0 = k1;
    }
    Ok(ScalarGrid { resolution, bound, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(pts: &[Point]) -> Result<Vec<f64>> {
        Ok(pts.iter().map(|p| p.coords.norm() - 0.5).collect())
    }

    #[test]
    fn analytic_values_at_lattice_points() {
        let g = evaluate_grid(9, 1.1, 2, sphere).unwrap();
        for k in 0..9 {
            for j in 0..9 {
                for i in 0..9 {
                    assert_eq!(g.get(i, j, k), g.point(i, j, k).coords.norm() - 0.5);
                }
            }
        }
        assert_eq!(g.coord(0), -1.1);
        assert!((g.coord(8) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn resolution_two_is_cube_corners() {
        let g = evaluate_grid(2, 1.0, 1, sphere).unwrap();
        assert_eq!(g.values.len(), 8);
        assert!(g.values.iter().all(|&v| (v - (3f64.sqrt() - 0.5)).abs() < 1e-15));
    }

    #[test]
    fn slab_partition_does_not_matter() {
        let a = evaluate_grid(13, 1.1, 1, sphere).unwrap();
        for slab in [2, 5, 13, 100] {
            assert_eq!(evaluate_grid(13, 1.1, slab, sphere).unwrap(), a);
        }
    }

    #[test]
    fn rejects_bad_resolution() {
        assert!(evaluate_grid(1, 1.0, 1, sphere).is_err());
    }
}
