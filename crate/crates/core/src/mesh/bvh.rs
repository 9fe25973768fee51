use crate::vec3::{self, Vec3};

use super::Mesh;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Aabb {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: [f64::INFINITY; 3],
            hi: [f64::NEG_INFINITY; 3],
        }
    }

    pub(crate) fn of_triangle(t: &[Vec3; 3]) -> Self {
        let mut b = Aabb::empty();
        for p in t {
            b.grow(*p);
        }
        b
    }

    fn grow(&mut self, p: Vec3) {
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(p[k]);
            self.hi[k] = self.hi[k].max(p[k]);
        }
    }

    fn merge(&mut self, o: &Aabb) {
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(o.lo[k]);
            self.hi[k] = self.hi[k].max(o.hi[k]);
        }
    }

    pub(crate) fn overlaps(&self, o: &Aabb) -> bool {
        (0..3).all(|k| self.lo[k] <= o.hi[k] && o.lo[k] <= self.hi[k])
    }

    fn dist2(&self, p: Vec3) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let e = if p[k] < self.lo[k] {
                self.lo[k] - p[k]
            } else if p[k] > self.hi[k] {
                p[k] - self.hi[k]
            } else {
                0.0
            };
            d += e * e;
        }
        d
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: `start..end` into `order`. Interior: children `left`, `right`.
    start: usize,
    end: usize,
    left: usize,
    right: usize,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.left == usize::MAX
    }
}

/// Result of a closest-point query against a triangle set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub face: usize,
    pub point: Vec3,
    pub barycentric: [f64; 3],
    pub dist2: f64,
}

/// Bounding-volume hierarchy over the faces of a mesh snapshot.
#[derive(Debug, Clone)]
pub struct TriangleIndex {
    tris: Vec<[Vec3; 3]>,
    boxes: Vec<Aabb>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl TriangleIndex {
    pub fn new(m: &Mesh) -> Self {
        Self::with_faces(m, None)
    }

    /// Indexes only faces with `mask[f] == true`; reported face ids still
    /// refer to the full mesh.
    pub fn with_faces(m: &Mesh, mask: Option<&[bool]>) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..m.n_faces()).map(|f| m.face_points(f)).collect();
        let boxes: Vec<Aabb> = tris.iter().map(Aabb::of_triangle).collect();
        let mut order: Vec<usize> = (0..tris.len())
            .filter(|&f| mask.is_none_or(|mk| mk[f]))
            .collect();
        let centroids: Vec<Vec3> = tris
            .iter()
            .map(|t| vec3::scale(vec3::add(vec3::add(t[0], t[1]), t[2]), 1.0 / 3.0))
            .collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            let n = order.len();
            build(&boxes, &centroids, &mut order, 0, n, &mut nodes);
        }
        TriangleIndex {
            tris,
            boxes,
            order,
            nodes,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Exact closest point on the indexed surface. `None` only when empty.
    pub fn closest_point(&self, q: Vec3) -> Option<ClosestPoint> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<ClosestPoint> = None;
        let mut best_d = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds.dist2(q) > best_d {
                continue;
            }
            if node.is_leaf() {
                for &f in &self.order[node.start..node.end] {
                    let (p, b) = closest_on_triangle(q, &self.tris[f]);
                    let d = vec3::dist2(p, q);
                    if d < best_d || (d == best_d && best.is_some_and(|c| f < c.face)) {
                        best_d = d;
                        best = Some(ClosestPoint {
                            face: f,
                            point: p,
                            barycentric: b,
                            dist2: d,
                        });
                    }
                }
            } else {
                let (l, r) = (node.left, node.right);
                let dl = self.nodes[l].bounds.dist2(q);
                let dr = self.nodes[r].bounds.dist2(q);
                // Visit the nearer child first (pushed last).
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }

    pub fn distance(&self, q: Vec3) -> Option<f64> {
        self.closest_point(q).map(|c| c.dist2.sqrt())
    }

    /// Faces whose bounding boxes overlap `query`, in ascending order.
    pub(crate) fn overlapping(&self, query: &Aabb, out: &mut Vec<usize>) {
        out.clear();
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if !node.bounds.overlaps(query) {
                continue;
            }
            if node.is_leaf() {
                for &f in &self.order[node.start..node.end] {
                    if self.boxes[f].overlaps(query) {
                        out.push(f);
                    }
                }
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
        out.sort_unstable();
    }

    pub(crate) fn triangle(&self, f: usize) -> &[Vec3; 3] {
        &self.tris[f]
    }

    pub(crate) fn face_box(&self, f: usize) -> &Aabb {
        &self.boxes[f]
    }
}

fn build(
    boxes: &[Aabb],
    centroids: &[Vec3],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut bounds = Aabb::empty();
    let mut cb = Aabb::empty();
    for &f in &order[start..end] {
        bounds.merge(&boxes[f]);
        cb.grow(centroids[f]);
    }
    let id = nodes.len();
    nodes.push(Node {
        bounds,
        start,
        end,
        left: usize::MAX,
        right: usize::MAX,
    });
    if end - start <= LEAF_SIZE {
        return id;
    }
    let axis = (0..3)
        .max_by(|&a, &b| (cb.hi[a] - cb.lo[a]).total_cmp(&(cb.hi[b] - cb.lo[b])))
        .unwrap();
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis].total_cmp(&centroids[b][axis])
    });
    let left = build(boxes, centroids, order, start, mid, nodes);
    let right = build(boxes, centroids, order, mid, end, nodes);
    nodes[id].left = left;
    nodes[id].right = right;
    id
}

/// Closest point on a triangle and its barycentric coordinates
/// (Voronoi-region classification).
pub(crate) fn closest_on_triangle(p: Vec3, t: &[Vec3; 3]) -> (Vec3, [f64; 3]) {
    let [a, b, c] = *t;
    let ab = vec3::sub(b, a);
    let ac = vec3::sub(c, a);
    let ap = vec3::sub(p, a);
    let d1 = vec3::dot(ab, ap);
    let d2 = vec3::dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }
    let bp = vec3::sub(p, b);
    let d3 = vec3::dot(ab, bp);
    let d4 = vec3::dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (vec3::add(a, vec3::scale(ab, v)), [1.0 - v, v, 0.0]);
    }
    let cp = vec3::sub(p, c);
    let d5 = vec3::dot(ab, cp);
    let d6 = vec3::dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (vec3::add(a, vec3::scale(ac, w)), [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (vec3::add(b, vec3::scale(vec3::sub(c, b), w)), [0.0, 1.0 - w, w]);
    }
    let denom = va + vb + vc;
    if denom == 0.0 {
        // Degenerate triangle: fall back to the nearest vertex.
        let da = vec3::dist2(p, a);
        let db = vec3::dist2(p, b);
        let dc = vec3::dist2(p, c);
        return if da <= db && da <= dc {
            (a, [1.0, 0.0, 0.0])
        } else if db <= dc {
            (b, [0.0, 1.0, 0.0])
        } else {
            (c, [0.0, 0.0, 1.0])
        };
    }
    let v = vb / denom;
    let w = vc / denom;
    (
        vec3::add(a, vec3::add(vec3::scale(ab, v), vec3::scale(ac, w))),
        [1.0 - v - w, v, w],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_template, subdivide};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closest_point_matches_brute_force() {
        let m = subdivide(&build_template(62).unwrap()).unwrap();
        let idx = TriangleIndex::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let q = [
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ];
            let brute = (0..m.n_faces())
                .map(|f| vec3::dist2(closest_on_triangle(q, &m.face_points(f)).0, q))
                .fold(f64::INFINITY, f64::min);
            let got = idx.closest_point(q).unwrap();
            assert_eq!(got.dist2, brute);
        }
    }

    #[test]
    fn interior_projection() {
        let t = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let (p, b) = closest_on_triangle([0.25, 0.25, 3.0], &t);
        assert_eq!(p, [0.25, 0.25, 0.0]);
        assert!((b[0] - 0.5).abs() < 1e-15);
    }
}
