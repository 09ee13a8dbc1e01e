//! Inference: latent code, decoder grid, marching cubes and Chamfer reports.

mod grid;
mod marching;
mod tables;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::autodiff::{Graph, Tensor};
use crate::geometry::{self, GeometryError, Normalization, Point, PointCloud, TriangleSoup};
use crate::nn::{ModelParams, NnError};
use crate::rng::stream;
use crate::sdfield::{self, to_f32, Manifest, SdfieldError, Split, DOMAIN_BOUND};
use crate::training::{latent_code, points_tensor, TrainingError};

pub use grid::{evaluate_grid, ScalarGrid};
pub use marching::{marching_cubes, marching_cubes_detailed, Extraction};

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sdfield(#[from] SdfieldError),
    #[error("shape {id:?}: {msg}")]
    Shape { id: String, msg: String },
    #[error("invalid reconstruction configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Contract(&'static str),
}

pub type Result<T, E = ReconstructError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructConfig {
    pub resolution: usize,
    /// Half-width of the extraction cube.
    pub bound: f64,
    /// Surface samples per mesh for Chamfer evaluation.
    pub eval_points: usize,
    /// Encoder input size drawn from a scan.
    pub input_points: usize,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self { resolution: 100, bound: DOMAIN_BOUND, eval_points: 30_000, input_points: 128 * 128 }
    }
}

impl ReconstructConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(ReconstructError::Config("resolution must be at least 2".into()));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(ReconstructError::Config("bound must be positive".into()));
        }
        if self.eval_points == 0 || self.input_points == 0 {
            return Err(ReconstructError::Config("eval_points and input_points must be positive".into()));
        }
        Ok(())
    }
}

/// Decoder values for `z` at arbitrary points, evaluated in 32-bit precision.
pub fn decoder_values(params: &ModelParams<f32>, z: &Tensor<f32>, points: &[Point]) -> Result<Vec<f64>> {
    let mut g = Graph::<f32>::new();
    let bound = params.bind(&mut g, false);
    let zv = g.constant(z.clone());
    let pts: Vec<[f32; 3]> = points.iter().map(to_f32).collect();
    let q = g.constant(points_tensor(&pts));
    let f = params.arch.decode(&mut g, &bound, zv, q)?;
    Ok(g.value(f).data().iter().map(|&v| v as f64).collect())
}

/// Decoder grid, one z-layer per forward pass.
pub fn evaluate_decoder_grid(params: &ModelParams<f32>, z: &Tensor<f32>, resolution: usize, bound: f64) -> Result<ScalarGrid> {
    evaluate_grid(resolution, bound, 1, |pts| decoder_values(params, z, pts))
}

/// Zero level set of the decoder conditioned on `cloud` (encoder mean, or
/// `z = 0` for decoder-only registries), in the cloud's frame.
pub fn reconstruct_from_cloud(params: &ModelParams<f32>, cloud: &[[f32; 3]], cfg: &ReconstructConfig) -> Result<TriangleSoup> {
    cfg.validate()?;
    let z = latent_code(params, cloud)?;
    let grid = evaluate_decoder_grid(params, &z, cfg.resolution, cfg.bound)?;
    Ok(marching_cubes(&grid, 0.0))
}

/// Raw scan given to [`reconstruct`].
#[derive(Debug, Clone)]
pub enum Scan {
    Mesh(TriangleSoup),
    Cloud(PointCloud),
}

/// Normalises a scan and draws the encoder input from it: surface samples
/// for meshes, a subset without replacement for clouds larger than `n`.
pub fn prepare_input<R: Rng + ?Sized>(scan: &Scan, n: usize, rng: &mut R) -> Result<(Vec<[f32; 3]>, Normalization)> {
    match scan {
        Scan::Mesh(soup) => {
            let (norm, t) = geometry::normalize(soup)?;
            let cloud = geometry::sample_surface(&norm, n, rng)?;
            Ok((cloud.points.iter().map(to_f32).collect(), t))
        }
        Scan::Cloud(cloud) => {
            if cloud.is_empty() {
                return Err(ReconstructError::Contract("input cloud is empty"));
            }
            // A cloud is normalised like the soup of its points.
            let soup = TriangleSoup { vertices: cloud.points.clone(), triangles: Vec::new() };
            let (norm, t) = geometry::normalize(&soup)?;
            let picked: Vec<[f32; 3]> = if norm.vertices.len() > n {
                let mut idx = index::sample(rng, norm.vertices.len(), n).into_vec();
                idx.sort_unstable();
                idx.iter().map(|&i| to_f32(&norm.vertices[i])).collect()
            } else {
                norm.vertices.iter().map(to_f32).collect()
            };
            Ok((picked, t))
        }
    }
}

/// Full inference on a raw scan. Returns the mesh in the normalised frame
/// together with the transform back to the scan's frame.
pub fn reconstruct(params: &ModelParams<f32>, scan: &Scan, cfg: &ReconstructConfig, seed: u64) -> Result<(TriangleSoup, Normalization)> {
    let mut rng = stream(seed, "reconstruct");
    let (cloud, t) = prepare_input(scan, cfg.input_points, &mut rng)?;
    Ok((reconstruct_from_cloud(params, &cloud, cfg)?, t))
}

/// Metadata lines recorded with an exported mesh.
pub fn transform_comments(t: &Normalization, seed: u64) -> Vec<String> {
    vec![
        format!("frame normalized; original = normalized * {} + ({}, {}, {})", t.scale, t.center.x, t.center.y, t.center.z),
        format!("seed {seed}"),
    ]
}

/// Percentile with linear interpolation at rank `p / 100 * (n - 1)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeScore {
    pub id: String,
    pub chamfer_x1e3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub split: Split,
    pub seed: u64,
    pub shapes: Vec<ShapeScore>,
    /// `(p, value)` for p in 5, 50, 95.
    pub percentiles: [(u32, f64); 3],
}

impl Report {
    pub fn from_scores(split: Split, seed: u64, shapes: Vec<ShapeScore>) -> Result<Self> {
        if shapes.is_empty() {
            return Err(ReconstructError::Contract("no shapes to report"));
        }
        let mut v: Vec<f64> = shapes.iter().map(|s| s.chamfer_x1e3).collect();
        v.sort_by(f64::total_cmp);
        let percentiles = [5, 50, 95].map(|p| (p, percentile(&v, p as f64)));
        Ok(Self { split, seed, shapes, percentiles })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,shape,chamfer_x1e3\n");
        for r in &self.shapes {
            let _ = writeln!(s, "{},{},{}", self.split, r.id, r.chamfer_x1e3);
        }
        s.push_str("\npercentile,chamfer_x1e3\n");
        for (p, v) in self.percentiles {
            let _ = writeln!(s, "{p},{v}");
        }
        let _ = write!(s, "\nseed,{}\n", self.seed);
        s
    }
}

/// Ground-truth mesh stored next to an archive.
pub fn ground_truth_path(archive: &Path) -> PathBuf {
    archive.with_extension("ply")
}

/// Chamfer between two meshes from `n` samples each, both drawn with the
/// same generator seed.
pub fn mesh_chamfer(a: &TriangleSoup, b: &TriangleSoup, n: usize, seed: u64, label: &str) -> Result<f64> {
    let pa = geometry::sample_surface(a, n, &mut stream(seed, label))?;
    let pb = geometry::sample_surface(b, n, &mut stream(seed, label))?;
    Ok(geometry::chamfer(&pa, &pb)?)
}

/// Reconstructs every shape of `split` from its archived input cloud and
/// scores it against the stored ground truth.
pub fn evaluate(
    params: &ModelParams<f32>,
    manifest: &Manifest,
    split: Split,
    cfg: &ReconstructConfig,
    seed: u64,
    mut progress: impl FnMut(&ShapeScore),
) -> Result<Report> {
    cfg.validate()?;
    let mut scores = Vec::new();
    for e in manifest.split(split) {
        let fail = |msg: String| ReconstructError::Shape { id: e.id.clone(), msg };
        let set = sdfield::read_archive(&e.path).map_err(|err| fail(err.to_string()))?;
        let truth = geometry::load_mesh(&ground_truth_path(&e.path)).map_err(|err| fail(err.to_string()))?;
        let mesh = reconstruct_from_cloud(params, &set.input_cloud, cfg)?;
        if mesh.is_empty() {
            return Err(fail("reconstruction has no zero crossing".into()));
        }
        let cd = mesh_chamfer(&mesh, &truth, cfg.eval_points, seed, &format!("eval:{}", e.id))
            .map_err(|err| fail(err.to_string()))?;
        let score = ShapeScore { id: e.id.clone(), chamfer_x1e3: cd * 1e3 };
        progress(&score);
        scores.push(score);
    }
    Report::from_scores(split, seed, scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_definition() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 50.5);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 100.0);
        assert_eq!(percentile(&[3.0], 5.0), 3.0);
    }

    #[test]
    fn single_shape_report_has_equal_percentiles() {
        let r = Report::from_scores(Split::Test, 4, vec![ShapeScore { id: "a".into(), chamfer_x1e3: 2.5 }]).unwrap();
        assert!(r.percentiles.iter().all(|&(_, v)| v == 2.5));
        let csv = r.to_csv();
        assert!(csv.starts_with("split,shape,chamfer_x1e3\ntest,a,2.5\n\npercentile,chamfer_x1e3\n5,2.5\n50,2.5\n95,2.5\n"));
    }

    #[test]
    fn percentiles_are_ordered() {
        let shapes = [9.0, 1.0, 4.0, 7.5, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &c)| ShapeScore { id: i.to_string(), chamfer_x1e3: c })
            .collect();
        let r = Report::from_scores(Split::Test, 0, shapes).unwrap();
        let [(_, a), (_, b), (_, c)] = r.percentiles;
        assert!(a <= b && b <= c);
    }

    #[test]
    fn self_chamfer_is_zero() {
        let s = geometry::shapes::torus(0.7, 0.2, 32, 16);
        assert_eq!(mesh_chamfer(&s, &s, 2000, 3, "x").unwrap(), 0.0);
    }

    #[test]
    fn config_defaults() {
        let c = ReconstructConfig::default();
        assert_eq!(c.resolution, 100);
        assert_eq!(c.bound, 1.1);
        assert_eq!(c.eval_points, 30_000);
    }
}
