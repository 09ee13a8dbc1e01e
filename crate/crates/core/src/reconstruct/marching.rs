use std::collections::HashMap;

use super::tables::TRI_TABLE;
use super::ScalarGrid;
use crate::geometry::{Point, TriangleSoup};

/// Corner offsets in table order.
const CORNERS: [[usize; 3]; 8] =
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];

/// Corner pairs of the twelve cube edges in table order.
const EDGES: [[usize; 2]; 12] =
    [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];

/// Extraction result with per-vertex provenance.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub soup: TriangleSoup,
    /// Lattice endpoints `(lower, upper)` of the edge carrying each vertex.
    pub vertex_edges: Vec<[[usize; 3]; 2]>,
    /// Grid values after nudging exact iso hits.
    pub values: Vec<f64>,
}

/// Zero-crossing mesh of `grid` at `iso`.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> TriangleSoup {
    marching_cubes_detailed(grid, iso).soup
}

/// Lattice values exactly equal to `iso` are raised by `1e-6 * max|v|`
/// first so no vertex lands on a lattice point. Vertices are shared between
/// cells through their lattice edge.
pub fn marching_cubes_detailed(grid: &ScalarGrid, iso: f64) -> Extraction {
    let r = grid.resolution;
    let scale = grid.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let nudge = 1e-6 * if scale > 0.0 { scale } else { 1.0 };
    let values: Vec<f64> = grid.values.iter().map(|&v| if v == iso { v + nudge } else { v }).collect();
    let at = |p: [usize; 3]| values[grid.index(p[0], p[1], p[2])];

    let mut vertices = Vec::new();
    let mut vertex_edges = Vec::new();
    let mut triangles = Vec::new();
    let mut by_edge: HashMap<usize, u32> = HashMap::new();

    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let corner = |c: usize| [i + CORNERS[c][0], j + CORNERS[c][1], k + CORNERS[c][2]];
                let mut case = 0usize;
                for c in 0..8 {
                    if at(corner(c)) < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut cell_vertex = [u32::MAX; 12];
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    let mut ids = [0u32; 3];
                    for (slot, &e) in ids.iter_mut().zip(tri) {
                        let e = e as usize;
                        if cell_vertex[e] == u32::MAX {
                            let (a, b) = (corner(EDGES[e][0]), corner(EDGES[e][1]));
                            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                            let axis = (0..3).find(|&d| lo[d] != hi[d]).expect("edge spans one axis");
                            let key = 3 * grid.index(lo[0], lo[1], lo[2]) + axis;
                            cell_vertex[e] = *by_edge.entry(key).or_insert_with(|| {
                                let (fa, fb) = (at(lo), at(hi));
                                let pa = grid.point(lo[0], lo[1], lo[2]);
                                let pb = grid.point(hi[0], hi[1], hi[2]);
                                let t = (iso - fa) / (fb - fa);
                                vertices.push(Point::from(pa.coords + (pb - pa) * t));
                                vertex_edges.push([lo, hi]);
                                (vertices.len() - 1) as u32
                            });
                        }
                        *slot = cell_vertex[e];
                    }
                    triangles.push(ids);
                }
            }
        }
    }
    Extraction { soup: TriangleSoup { vertices, triangles }, vertex_edges, values }
}
