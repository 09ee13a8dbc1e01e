//! Procedural test shapes.

use std::collections::HashMap;
use std::f64::consts::TAU;

use super::{Point, TriangleSoup};

/// Unit-radius icosphere; each subdivision quadruples the face count.
pub fn icosphere(subdivisions: u32) -> TriangleSoup {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let mut vertices: Vec<Point> =
        raw.iter().map(|&(x, y, z)| Point::from(Point::new(x, y, z).coords.normalize())).collect();
    let mut triangles: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, vertices: &mut Vec<Point>| -> u32 {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = (vertices[a as usize].coords + vertices[b as usize].coords).normalize();
                vertices.push(Point::from(m));
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for [a, b, c] in triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    TriangleSoup { vertices, triangles }
}

/// Torus around the z axis with tube centre radius `major` and tube radius
/// `minor`.
pub fn torus(major: f64, minor: f64, segments: u32, sides: u32) -> TriangleSoup {
    let mut vertices = Vec::with_capacity((segments * sides) as usize);
    for i in 0..segments {
        let u = TAU * i as f64 / segments as f64;
        for j in 0..sides {
            let v = TAU * j as f64 / sides as f64;
            let r = major + minor * v.cos();
            vertices.push(Point::new(r * u.cos(), r * u.sin(), minor * v.sin()));
        }
    }
    let id = |i: u32, j: u32| (i % segments) * sides + (j % sides);
    let mut triangles = Vec::with_capacity((2 * segments * sides) as usize);
    for i in 0..segments {
        for j in 0..sides {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    TriangleSoup { vertices, triangles }
}

/// Axis-aligned box centred at the origin, two triangles per face.
pub fn cuboid(hx: f64, hy: f64, hz: f64) -> TriangleSoup {
    let vertices = (0..8)
        .map(|k| {
            let s = |bit: u32, h: f64| if k & bit != 0 { h } else { -h };
            Point::new(s(1, hx), s(2, hy), s(4, hz))
        })
        .collect();
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let triangles = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    TriangleSoup { vertices, triangles }
}

/// Two disjoint triangles whose areas are in ratio 3:1.
pub fn two_triangles() -> TriangleSoup {
    TriangleSoup {
        vertices: vec![
            Point::new(0.0, 0.0, 0.0),
            Point::new(3.0, 0.0, 0.0),
            Point::new(0.0, 1.0, 0.0),
            Point::new(0.0, 0.0, 1.0),
            Point::new(1.0, 0.0, 1.0),
            Point::new(0.0, 1.0, 1.0),
        ],
        triangles: vec![[0, 1, 2], [3, 4, 5]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TriangleBvh;

    #[test]
    fn icosphere_counts_and_radius() {
        let s = icosphere(3);
        assert_eq!(s.triangles.len(), 20 * 64);
        assert_eq!(s.vertices.len(), 642);
        assert!(s.vertices.iter().all(|v| (v.coords.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn icosphere_origin_distance_is_facet_inradius() {
        let s = icosphere(3);
        let bvh = TriangleBvh::build(&s);
        let (d, _, _) = bvh.unsigned_distance(&s, &Point::origin()).unwrap();
        assert!(d < 1.0 && d > 0.99, "{d}");
    }

    #[test]
    fn closed_shapes_have_expected_areas() {
        let c = cuboid(1.0, 2.0, 3.0);
        assert!((c.surface_area() - 2.0 * (4.0 * 2.0 + 4.0 * 6.0 + 2.0 * 6.0) / 1.0).abs() < 1e-12);
        let t = torus(1.0, 0.25, 64, 32);
        let exact = 4.0 * std::f64::consts::PI.powi(2) * 1.0 * 0.25;
        assert!((t.surface_area() / exact - 1.0).abs() < 0.01);
    }
}
