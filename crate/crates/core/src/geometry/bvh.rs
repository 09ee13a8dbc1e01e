use super::{point_triangle_distance, GeometryError, Point, Result, TriangleSoup};

const SAH_BINS: usize = 12;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Point::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Self> {
        let mut b = Self::empty();
        let mut any = false;
        for p in points {
            b.grow(p);
            any = true;
        }
        any.then_some(b)
    }

    pub fn grow(&mut self, p: &Point) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        out.grow(&other.min);
        out.grow(&other.max);
        out
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|k| self.min[k] > self.max[k])
    }

    pub fn center(&self) -> Point {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn surface_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let d = self.max - self.min;
        2.0 * (d.x * d.y + d.y * d.z + d.z * d.x)
    }

    /// Squared distance from `p` to the box (zero inside).
    pub fn distance_squared(&self, p: &Point) -> f64 {
        (0..3)
            .map(|k| {
                let v = if p[k] < self.min[k] {
                    self.min[k] - p[k]
                } else if p[k] > self.max[k] {
                    p[k] - self.max[k]
                } else {
                    0.0
                };
                v * v
            })
            .sum()
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.min[k] && self.max[k] >= other.max[k])
    }
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: u32, count: u32 },
    Inner { left: u32, right: u32 },
}

#[derive(Debug, Clone)]
struct Node {
    bbox: Aabb,
    kind: NodeKind,
}

/// Binary bounding volume hierarchy over abstract primitives, built with a
/// binned surface-area heuristic.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl Bvh {
    /// Builds over `boxes`; leaves hold at most `max_leaf` primitives unless
    /// their centroids coincide.
    pub fn build(boxes: &[Aabb], max_leaf: usize) -> Self {
        let mut bvh = Self { nodes: Vec::new(), order: (0..boxes.len() as u32).collect() };
        if boxes.is_empty() {
            return bvh;
        }
        let centroids: Vec<Point> = boxes.iter().map(Aabb::center).collect();
        let mut order = std::mem::take(&mut bvh.order);
        bvh.build_node(&mut order, 0, boxes, &centroids, max_leaf.max(1));
        bvh.order = order;
        bvh
    }

    fn build_node(
        &mut self,
        order: &mut [u32],
        offset: usize,
        boxes: &[Aabb],
        centroids: &[Point],
        max_leaf: usize,
    ) -> u32 {
        let bbox = order.iter().fold(Aabb::empty(), |b, &i| b.union(&boxes[i as usize]));
        let id = self.nodes.len() as u32;
        let leaf = NodeKind::Leaf { start: offset as u32, count: order.len() as u32 };
        self.nodes.push(Node { bbox, kind: leaf });
        if order.len() <= max_leaf {
            return id;
        }
        let Some(mid) = split(order, boxes, centroids) else {
            return id;
        };
        let (lo, hi) = order.split_at_mut(mid);
        let left = self.build_node(lo, offset, boxes, centroids, max_leaf);
        let right = self.build_node(hi, offset + mid, boxes, centroids, max_leaf);
        self.nodes[id as usize].kind = NodeKind::Inner { left, right };
        id
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Primitive index lists of all leaves.
    pub fn leaves(&self) -> Vec<&[u32]> {
        self.nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Leaf { start, count } => {
                    Some(&self.order[start as usize..(start + count) as usize])
                }
                NodeKind::Inner { .. } => None,
            })
            .collect()
    }

    /// True when every node's box contains its children's boxes and every
    /// leaf box contains its primitives' boxes.
    pub fn check_nesting(&self, boxes: &[Aabb]) -> bool {
        self.nodes.iter().all(|n| match n.kind {
            NodeKind::Inner { left, right } => {
                n.bbox.contains(&self.nodes[left as usize].bbox)
                    && n.bbox.contains(&self.nodes[right as usize].bbox)
            }
            NodeKind::Leaf { start, count } => self.order[start as usize..(start + count) as usize]
                .iter()
                .all(|&i| n.bbox.contains(&boxes[i as usize])),
        })
    }

    /// Primitive minimising `dist(i)`, with ties going to the lower index.
    /// `dist` must be bounded below by the Euclidean distance from `p` to the
    /// primitive's box.
    pub fn nearest(&self, p: &Point, mut dist: impl FnMut(usize) -> f64) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        let mut stack: Vec<(u32, f64)> = vec![(0, self.nodes[0].bbox.distance_squared(p))];
        while let Some((id, box_d2)) = stack.pop() {
            if let Some((_, bd)) = best {
                // Small slack so equal-distance ties inside the box are still visited.
                if box_d2 > bd * bd * (1.0 + 1e-12) {
                    continue;
                }
            }
            match self.nodes[id as usize].kind {
                NodeKind::Leaf { start, count } => {
                    for &i in &self.order[start as usize..(start + count) as usize] {
                        let i = i as usize;
                        let d = dist(i);
                        let better = match best {
                            None => true,
                            Some((bi, bd)) => d < bd || (d == bd && i < bi),
                        };
                        if better {
                            best = Some((i, d));
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left as usize].bbox.distance_squared(p);
                    let dr = self.nodes[right as usize].bbox.distance_squared(p);
                    // Push the farther child first so the nearer one is visited first.
                    if dl <= dr {
                        stack.push((right, dr));
                        stack.push((left, dl));
                    } else {
                        stack.push((left, dl));
                        stack.push((right, dr));
                    }
                }
            }
        }
        best
    }
}

/// Partitions `order` and returns the split position, or `None` when all
/// centroids coincide.
fn split(order: &mut [u32], boxes: &[Aabb], centroids: &[Point]) -> Option<usize> {
    let cb = Aabb::from_points(order.iter().map(|&i| &centroids[i as usize]))?;
    let extent = cb.max - cb.min;
    if extent.iter().all(|&e| e <= 0.0) {
        return None;
    }

    let bin_of = |axis: usize, i: u32| -> usize {
        let e = extent[axis];
        let rel = (centroids[i as usize][axis] - cb.min[axis]) / e;
        ((rel * SAH_BINS as f64) as usize).min(SAH_BINS - 1)
    };

    let mut best: Option<(f64, usize, usize)> = None;
    for axis in 0..3 {
        if extent[axis] <= 0.0 {
            continue;
        }
        let mut bins = [(Aabb::empty(), 0usize); SAH_BINS];
        for &i in order.iter() {
            let b = &mut bins[bin_of(axis, i)];
            b.0 = b.0.union(&boxes[i as usize]);
            b.1 += 1;
        }
        let mut right_area = [0.0; SAH_BINS];
        let mut right_count = [0usize; SAH_BINS];
        let (mut acc, mut n) = (Aabb::empty(), 0);
        for k in (1..SAH_BINS).rev() {
            acc = acc.union(&bins[k].0);
            n += bins[k].1;
            right_area[k] = acc.surface_area();
            right_count[k] = n;
        }
        let (mut acc, mut n) = (Aabb::empty(), 0);
        for k in 1..SAH_BINS {
            acc = acc.union(&bins[k - 1].0);
            n += bins[k - 1].1;
            if n == 0 || right_count[k] == 0 {
                continue;
            }
            let cost = acc.surface_area() * n as f64 + right_area[k] * right_count[k] as f64;
            if best.is_none_or(|(c, _, _)| cost < c) {
                best = Some((cost, axis, k));
            }
        }
    }

    let mid = match best {
        Some((_, axis, k)) => partition(order, |i| bin_of(axis, i) < k),
        None => 0,
    };
    if mid == 0 || mid == order.len() {
        // Median fallback along the widest axis.
        let axis = (0..3).max_by(|&a, &b| extent[a].total_cmp(&extent[b])).unwrap();
        order.sort_by(|&a, &b| {
            centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis]).then(a.cmp(&b))
        });
        return Some(order.len() / 2);
    }
    Some(mid)
}

fn partition(order: &mut [u32], pred: impl Fn(u32) -> bool) -> usize {
    let mut mid = 0;
    for j in 0..order.len() {
        if pred(order[j]) {
            order.swap(mid, j);
            mid += 1;
        }
    }
    mid
}

/// BVH over the triangles of a soup, answering exact unsigned-distance
/// queries. Degenerate triangles are included.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    bvh: Bvh,
    triangle_count: usize,
}

impl TriangleBvh {
    pub const MAX_LEAF: usize = 4;

    pub fn build(soup: &TriangleSoup) -> Self {
        let boxes = triangle_boxes(soup);
        Self { bvh: Bvh::build(&boxes, Self::MAX_LEAF), triangle_count: soup.triangles.len() }
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    /// `(distance, closest point, triangle index)` of the nearest triangle.
    pub fn unsigned_distance(&self, soup: &TriangleSoup, p: &Point) -> Result<(f64, Point, usize)> {
        if soup.triangles.is_empty() || self.bvh.is_empty() {
            return Err(GeometryError::Contract("unsigned distance query on an empty soup"));
        }
        if soup.triangles.len() != self.triangle_count {
            return Err(GeometryError::Contract("BVH was built for a different soup"));
        }
        let (t, _) = self
            .bvh
            .nearest(p, |t| point_triangle_distance(p, &soup.corners(t)).0)
            .expect("non-empty hierarchy");
        let (d, q) = point_triangle_distance(p, &soup.corners(t));
        Ok((d, q, t))
    }
}

pub(crate) fn triangle_boxes(soup: &TriangleSoup) -> Vec<Aabb> {
    (0..soup.triangles.len())
        .map(|t| Aabb::from_points(soup.corners(t).iter()).expect("three corners"))
        .collect()
}
