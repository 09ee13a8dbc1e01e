use rand::Rng;
use rand_distr::{weighted::WeightedIndex, Distribution};

use super::{GeometryError, Point, PointCloud, Result, TriangleSoup, Vec3};

/// Area-weighted uniform surface samples. Degenerate triangles are never
/// chosen.
pub fn sample_surface<R: Rng + ?Sized>(soup: &TriangleSoup, n: usize, rng: &mut R) -> Result<PointCloud> {
    Ok(PointCloud::new(sample_surface_with_faces(soup, n, rng)?.0))
}

/// As [`sample_surface`], also returning the source triangle of each point.
pub fn sample_surface_with_faces<R: Rng + ?Sized>(
    soup: &TriangleSoup,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<Point>, Vec<usize>)> {
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let weights: Vec<f64> = (0..soup.triangles.len())
        .map(|t| if soup.is_degenerate(t) { 0.0 } else { soup.area(t) })
        .collect();
    let dist = WeightedIndex::new(&weights)
        .map_err(|_| GeometryError::Contract("surface sampling needs a non-degenerate triangle"))?;
    let mut points = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let t = dist.sample(rng);
        let [a, b, c] = soup.corners(t);
        let s = rng.random::<f64>().sqrt();
        let r2 = rng.random::<f64>();
        let p = a.coords * (1.0 - s) + b.coords * (s * (1.0 - r2)) + c.coords * (s * r2);
        points.push(Point::from(p));
        faces.push(t);
    }
    Ok((points, faces))
}

/// Similarity transform into the canonical frame: `p' = (p - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Point,
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self { center: Point::origin(), scale: 1.0 }
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::from((p - self.center) / self.scale)
    }

    pub fn invert(&self, p: &Point) -> Point {
        self.center + p.coords * self.scale
    }

    pub fn offset(&self) -> Vec3 {
        self.center.coords
    }
}

/// Centres the bounding box at the origin and scales the farthest vertex to
/// radius 1.
pub fn normalize(soup: &TriangleSoup) -> Result<(TriangleSoup, Normalization)> {
    let bbox = soup
        .bounding_box()
        .ok_or(GeometryError::Contract("cannot normalize a soup without vertices"))?;
    let center = bbox.center();
    let radius = soup.vertices.iter().map(|v| (v - center).norm()).fold(0.0, f64::max);
    if radius.is_nan() || radius <= 0.0 {
        return Err(GeometryError::Contract("cannot normalize a soup of coincident vertices"));
    }
    let t = Normalization { center, scale: radius };
    let vertices = soup.vertices.iter().map(|v| t.apply(v)).collect();
    Ok((TriangleSoup { vertices, triangles: soup.triangles.clone() }, t))
}
