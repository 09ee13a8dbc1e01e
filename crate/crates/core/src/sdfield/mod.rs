//! Training supervision: query points labelled with exact unsigned distances,
//! their binary archive and the split manifest.

mod archive;
mod manifest;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{self, GeometryError, Point, TriangleBvh, TriangleSoup};

pub use archive::{decode_archive, encode_archive, read_archive, write_archive, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use manifest::{load_manifest, parse_manifest, Manifest, ManifestEntry, Split};

#[derive(Debug, Error)]
pub enum SdfieldError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: corrupt archive ({field}): {msg}")]
    Integrity { path: String, field: &'static str, msg: String },
    #[error("{path}:{line}: {msg}")]
    Manifest { path: String, line: usize, msg: String },
    #[error("{path}: duplicate shape id {id:?}")]
    DuplicateId { path: String, id: String },
    #[error("invalid sampling configuration: {0}")]
    Config(String),
}

pub type Result<T, E = SdfieldError> = std::result::Result<T, E>;

/// Half-width of the cube that holds ambient queries and the grid.
pub const DOMAIN_BOUND: f64 = 1.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub n_input: usize,
    /// Queries per noise level.
    pub n_near: usize,
    pub n_uniform: usize,
    pub sigma_small: f64,
    pub sigma_large: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { n_input: 128 * 128, n_near: 8192, n_uniform: 4096, sigma_small: 0.01, sigma_large: 0.1 }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_input == 0 {
            return Err(SdfieldError::Config("n_input must be positive".into()));
        }
        if self.n_near == 0 && self.n_uniform == 0 {
            return Err(SdfieldError::Config("at least one query group must be non-empty".into()));
        }
        for (name, s) in [("sigma_small", self.sigma_small), ("sigma_large", self.sigma_large)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(SdfieldError::Config(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn query_count(&self) -> usize {
        2 * self.n_near + self.n_uniform
    }
}

/// Encoder input cloud plus labelled queries for one shape, stored at the
/// archive's 32-bit precision.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub shape_id: String,
    pub input_cloud: Vec<[f32; 3]>,
    pub queries: Vec<[f32; 3]>,
    /// `h[i]` is the unsigned distance of `queries[i]`.
    pub h: Vec<f32>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn input_points(&self) -> Vec<Point> {
        self.input_cloud.iter().map(to_point).collect()
    }

    pub fn query_points(&self) -> Vec<Point> {
        self.queries.iter().map(to_point).collect()
    }
}

pub fn to_point(p: &[f32; 3]) -> Point {
    Point::new(p[0] as f64, p[1] as f64, p[2] as f64)
}

pub fn to_f32(p: &Point) -> [f32; 3] {
    [p.x as f32, p.y as f32, p.z as f32]
}

/// Draws the encoder cloud and three query groups (small noise, large noise,
/// uniform in the domain cube) and labels queries against `soup`.
///
/// Labels are computed from the 32-bit rounded query so stored pairs agree.
pub fn generate_samples<R: Rng + ?Sized>(
    shape_id: &str,
    soup: &TriangleSoup,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<SampleSet> {
    cfg.validate()?;
    let input = geometry::sample_surface(soup, cfg.n_input, rng)?;
    let mut queries = Vec::with_capacity(cfg.query_count());
    for sigma in [cfg.sigma_small, cfg.sigma_large] {
        let noise = Normal::new(0.0, sigma).map_err(|e| SdfieldError::Config(e.to_string()))?;
        let surface = geometry::sample_surface(soup, cfg.n_near, rng)?;
        for p in surface.points {
            let d = nalgebra::Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
            queries.push(to_f32(&(p + d)));
        }
    }
    for _ in 0..cfg.n_uniform {
        let mut c = [0f32; 3];
        for v in &mut c {
            *v = rng.random_range(-DOMAIN_BOUND..DOMAIN_BOUND) as f32;
        }
        queries.push(c);
    }
    let h = label(soup, &queries)?;
    Ok(SampleSet {
        shape_id: shape_id.to_string(),
        input_cloud: input.points.iter().map(to_f32).collect(),
        queries,
        h,
    })
}

/// Unsigned distance of each query to `soup`, rounded to 32 bits.
pub fn label(soup: &TriangleSoup, queries: &[[f32; 3]]) -> Result<Vec<f32>> {
    let bvh = TriangleBvh::build(soup);
    queries
        .iter()
        .map(|q| Ok(bvh.unsigned_distance(soup, &to_point(q))?.0 as f32))
        .collect()
}
