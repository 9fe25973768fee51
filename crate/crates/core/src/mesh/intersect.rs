//! Exact triangle-triangle intersection and self-intersection counting.

use rayon::prelude::*;

use crate::vec3::{self, Vec3};

use super::bvh::{Aabb, TriangleIndex};
use super::Mesh;

/// Signed distances below this (mm) are treated as lying on the plane.
const PLANE_EPS: f64 = 1e-10;

fn plane_distances(t: &[Vec3; 3], other: &[Vec3; 3]) -> Option<[f64; 3]> {
    let n = vec3::normalize(vec3::cross(
        vec3::sub(t[1], t[0]),
        vec3::sub(t[2], t[0]),
    ))?;
    let d = -vec3::dot(n, t[0]);
    let mut out = [0.0; 3];
    for k in 0..3 {
        let v = vec3::dot(n, other[k]) + d;
        out[k] = if v.abs() < PLANE_EPS { 0.0 } else { v };
    }
    Some(out)
}

/// Interval of the intersection line covered by a triangle, given projected
/// vertices and their signed plane distances. Requires the vertices to
/// straddle (or touch) the plane.
fn interval(p: [f64; 3], d: [f64; 3]) -> (f64, f64) {
    // Pick the vertex alone on its side of the plane.
    let lone = if (d[0] > 0.0) == (d[1] > 0.0) && d[0] != 0.0 && d[1] != 0.0 {
        2
    } else if (d[0] > 0.0) == (d[2] > 0.0) && d[0] != 0.0 && d[2] != 0.0 {
        1
    } else if (d[1] > 0.0) == (d[2] > 0.0) && d[1] != 0.0 && d[2] != 0.0 {
        0
    } else if d[0] != 0.0 {
        0
    } else if d[1] != 0.0 {
        1
    } else {
        2
    };
    let (a, b) = ((lone + 1) % 3, (lone + 2) % 3);
    let cross = |o: usize| -> f64 {
        let denom = d[lone] - d[o];
        if denom == 0.0 {
            p[o]
        } else {
            p[lone] + (p[o] - p[lone]) * d[lone] / denom
        }
    };
    let (s, t) = (cross(a), cross(b));
    if s <= t {
        (s, t)
    } else {
        (t, s)
    }
}

/// True when two triangles share at least one point.
pub fn triangles_intersect(t1: &[Vec3; 3], t2: &[Vec3; 3]) -> bool {
    let Some(d1) = plane_distances(t2, t1) else {
        return false;
    };
    if d1.iter().all(|&x| x > 0.0) || d1.iter().all(|&x| x < 0.0) {
        return false;
    }
    let Some(d2) = plane_distances(t1, t2) else {
        return false;
    };
    if d2.iter().all(|&x| x > 0.0) || d2.iter().all(|&x| x < 0.0) {
        return false;
    }
    let n1 = vec3::cross(vec3::sub(t1[1], t1[0]), vec3::sub(t1[2], t1[0]));
    if d1.iter().all(|&x| x == 0.0) {
        return coplanar_intersect(n1, t1, t2);
    }
    let n2 = vec3::cross(vec3::sub(t2[1], t2[0]), vec3::sub(t2[2], t2[0]));
    let dir = vec3::cross(n1, n2);
    let axis = (0..3)
        .max_by(|&a, &b| dir[a].abs().total_cmp(&dir[b].abs()))
        .unwrap();
    let p1 = [t1[0][axis], t1[1][axis], t1[2][axis]];
    let p2 = [t2[0][axis], t2[1][axis], t2[2][axis]];
    let (a0, a1) = interval(p1, d1);
    let (b0, b1) = interval(p2, d2);
    a0 <= b1 && b0 <= a1
}

fn coplanar_intersect(n: Vec3, t1: &[Vec3; 3], t2: &[Vec3; 3]) -> bool {
    let drop = (0..3)
        .max_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs()))
        .unwrap();
    let (i, j) = match drop {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let a: [[f64; 2]; 3] = [[t1[0][i], t1[0][j]], [t1[1][i], t1[1][j]], [t1[2][i], t1[2][j]]];
    let b: [[f64; 2]; 3] = [[t2[0][i], t2[0][j]], [t2[1][i], t2[1][j]], [t2[2][i], t2[2][j]]];
    for k in 0..3 {
        for l in 0..3 {
            if segments_intersect(a[k], a[(k + 1) % 3], b[l], b[(l + 1) % 3]) {
                return true;
            }
        }
    }
    point_in_triangle(a[0], &b) || point_in_triangle(b[0], &a)
}

fn orient2(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient2(q1, q2, p1);
    let d2 = orient2(q1, q2, p2);
    let d3 = orient2(p1, p2, q1);
    let d4 = orient2(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

fn point_in_triangle(p: [f64; 2], t: &[[f64; 2]; 3]) -> bool {
    let a = orient2(t[0], t[1], p);
    let b = orient2(t[1], t[2], p);
    let c = orient2(t[2], t[0], p);
    (a >= 0.0 && b >= 0.0 && c >= 0.0) || (a <= 0.0 && b <= 0.0 && c <= 0.0)
}

#[inline]
fn share_vertex(a: &[usize; 3], b: &[usize; 3]) -> bool {
    a.iter().any(|v| b.contains(v))
}

/// Per-face flag: does the face intersect any face it shares no vertex with?
pub fn self_intersecting_faces(m: &Mesh) -> Vec<bool> {
    let index = TriangleIndex::new(m);
    let hits: Vec<Vec<usize>> = (0..m.n_faces())
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            let b = index.face_box(i);
            // Widen so pairs classified as touching by the plane epsilon are never culled.
            let q = Aabb {
                lo: vec3::sub(b.lo, [1e-9; 3]),
                hi: vec3::add(b.hi, [1e-9; 3]),
            };
            index.overlapping(&q, buf);
            let ti = index.triangle(i);
            buf.iter()
                .copied()
                .filter(|&j| j > i && !share_vertex(&m.faces[i], &m.faces[j]))
                .filter(|&j| triangles_intersect(ti, index.triangle(j)))
                .collect()
        })
        .collect();
    let mut flags = vec![false; m.n_faces()];
    for (i, js) in hits.iter().enumerate() {
        if !js.is_empty() {
            flags[i] = true;
        }
        for &j in js {
            flags[j] = true;
        }
    }
    flags
}

/// All-pairs reference for [`self_intersecting_faces`].
pub fn self_intersecting_faces_brute(m: &Mesh) -> Vec<bool> {
    let tris: Vec<[Vec3; 3]> = (0..m.n_faces()).map(|f| m.face_points(f)).collect();
    let mut flags = vec![false; m.n_faces()];
    for i in 0..tris.len() {
        for j in i + 1..tris.len() {
            if !share_vertex(&m.faces[i], &m.faces[j]) && triangles_intersect(&tris[i], &tris[j]) {
                flags[i] = true;
                flags[j] = true;
            }
        }
    }
    flags
}

/// Fraction of faces that intersect a non-adjacent face.
pub fn count_self_intersecting_faces(m: &Mesh) -> f64 {
    if m.n_faces() == 0 {
        return 0.0;
    }
    let flags = self_intersecting_faces(m);
    flags.iter().filter(|&&f| f).count() as f64 / m.n_faces() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_template, subdivide};

    #[test]
    fn crossing_triangles_intersect() {
        let a = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        let b = [[0.5, 0.5, -1.0], [0.5, 0.5, 1.0], [1.5, 1.5, 0.5]];
        assert!(triangles_intersect(&a, &b));
        assert!(triangles_intersect(&b, &a));
    }

    #[test]
    fn separated_triangles_do_not() {
        let a = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let b = [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]];
        assert!(!triangles_intersect(&a, &b));
        // Planes cross but the triangles do not reach each other.
        let c = [[5.0, 5.0, -1.0], [5.0, 5.0, 1.0], [6.0, 6.0, 0.0]];
        assert!(!triangles_intersect(&a, &c));
    }

    #[test]
    fn coplanar_overlap_and_separation() {
        let a = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let b = [[0.2, 0.2, 0.0], [2.0, 0.2, 0.0], [0.2, 2.0, 0.0]];
        let c = [[3.0, 3.0, 0.0], [4.0, 3.0, 0.0], [3.0, 4.0, 0.0]];
        assert!(triangles_intersect(&a, &b));
        assert!(!triangles_intersect(&a, &c));
    }

    #[test]
    fn convex_meshes_have_no_self_intersections() {
        let s = 1.0 / 3f64.sqrt();
        let t = Mesh::new(
            vec![[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]],
            vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
            0,
        )
        .unwrap();
        assert_eq!(count_self_intersecting_faces(&t), 0.0);
        let mut m = build_template(62).unwrap();
        for _ in 0..3 {
            m = subdivide(&m).unwrap();
        }
        assert_eq!(count_self_intersecting_faces(&m), 0.0);
    }

    #[test]
    fn reflected_vertex_creates_intersections() {
        let mut m = subdivide(&build_template(62).unwrap()).unwrap();
        m.vertices[0] = vec3::scale(m.vertices[0], -1.0);
        let fast = self_intersecting_faces(&m);
        assert_eq!(fast, self_intersecting_faces_brute(&m));
        assert!(count_self_intersecting_faces(&m) > 0.0);
    }
}
