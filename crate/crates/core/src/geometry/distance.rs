use super::Point;

/// Closest point to `p` on the segment `a`-`b` and its distance.
pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> (f64, Point) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = a + ab * t;
    ((p - q).norm(), q)
}

/// Exact Euclidean projection of `p` onto the closed triangle `tri`.
///
/// Walks the Voronoi regions (three vertices, three edges, face) of the
/// triangle. Degenerate triangles fall back to the nearest of their edges.
pub fn point_triangle_distance(p: &Point, tri: &[Point; 3]) -> (f64, Point) {
    let [a, b, c] = tri;
    let ab = b - a;
    let ac = c - a;
    let n = ab.cross(&ac);
    let longest = ab.norm_squared().max(ac.norm_squared()).max((c - b).norm_squared());
    if n.norm() <= 1e-12 * longest || longest == 0.0 {
        return [(a, b), (b, c), (c, a)]
            .iter()
            .map(|(u, v)| point_segment_distance(p, u, v))
            .fold((f64::INFINITY, *a), |best, cur| if cur.0 < best.0 { cur } else { best });
    }

    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ((p - a).norm(), *a);
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return ((p - b).norm(), *b);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        let q = a + ab * v;
        return ((p - q).norm(), q);
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return ((p - c).norm(), *c);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        let q = a + ac * w;
        return ((p - q).norm(), q);
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        let q = b + (c - b) * w;
        return ((p - q).norm(), q);
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    let q = a + ab * v + ac * w;
    ((p - q).norm(), q)
}
