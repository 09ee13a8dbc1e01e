//! Triangle soups, exact point-to-triangle distances, surface sampling and
//! Chamfer distance.

mod bvh;
mod chamfer;
mod distance;
mod mesh_io;
mod sampling;
pub mod shapes;

use std::path::PathBuf;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

pub use bvh::{Aabb, Bvh, TriangleBvh};
pub use chamfer::{chamfer, PointIndex};
pub use distance::{point_segment_distance, point_triangle_distance};
pub use mesh_io::{
    load_mesh, obj_string, parse_obj, parse_ply, ply_bytes, write_mesh, write_obj, write_ply, MeshFormat,
};
pub use sampling::{normalize, sample_surface, sample_surface_with_faces, Normalization};

pub type Point = Point3<f64>;
pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{location}: {msg}")]
    Parse { path: String, location: String, msg: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("triangle {triangle} references vertex {index} but only {count} vertices exist")]
    IndexOutOfRange { triangle: usize, index: u32, count: usize },
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("{0}")]
    Contract(&'static str),
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// Unordered triangle list with no connectivity guarantees.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleSoup {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleSoup {
    /// Validates indices and coordinates.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFinite(i));
        }
        let count = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= count) {
                return Err(GeometryError::IndexOutOfRange { triangle: t, index, count });
            }
        }
        Ok(Self { vertices, triangles })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Zero-area (or numerically collinear) triangle.
    pub fn is_degenerate(&self, t: usize) -> bool {
        let [a, b, c] = self.corners(t);
        let cross = (b - a).cross(&(c - a)).norm();
        let longest = (b - a).norm_squared().max((c - a).norm_squared()).max((c - b).norm_squared());
        cross <= 1e-12 * longest
    }

    pub fn degenerate_mask(&self) -> Vec<bool> {
        (0..self.triangles.len()).map(|t| self.is_degenerate(t)).collect()
    }

    pub fn bounding_box(&self) -> Option<Aabb> {
        Aabb::from_points(self.vertices.iter())
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }
}

/// Point set with an optional provenance tag.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub tag: Option<String>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points, tag: None }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
