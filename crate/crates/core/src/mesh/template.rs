use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

use super::Mesh;

/// Near-uniform points on the unit sphere from the golden-angle spiral, with
/// the pole offset that depends on `n` (offset Fibonacci lattice).
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let eps = match n {
        0..24 => 0.33,
        24..177 => 1.33,
        177..890 => 3.33,
        890..4000 => 10.0,
        4000..11000 => 27.0,
        11000..40000 => 75.0,
        _ => 214.0,
    };
    let span = n as f64 - 1.0 + 2.0 * eps;
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + eps) / span;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Closed genus-0 unit sphere with exactly `n_vertices` vertices, built as
/// the convex hull of a Fibonacci lattice.
pub fn build_template(n_vertices: usize) -> Result<Mesh> {
    if n_vertices < 12 {
        return Err(Error::invalid(format!(
            "template needs at least 12 vertices, got {n_vertices}"
        )));
    }
    let points = fibonacci_sphere(n_vertices);
    let faces = convex_hull(&points)?;
    let mesh = Mesh::new(points, faces, 0)?;
    mesh.check_closed_manifold()?;
    Ok(mesh)
}

fn orient(a: Vec3, b: Vec3, c: Vec3, p: Vec3) -> f64 {
    vec3::dot(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)), vec3::sub(p, a))
}

/// Incremental hull; every input point must end up as a hull vertex.
pub(crate) fn convex_hull(points: &[Vec3]) -> Result<Vec<[usize; 3]>> {
    let n = points.len();
    if n < 4 {
        return Err(Error::Degenerate("convex hull needs at least 4 points".into()));
    }
    let extent = points
        .iter()
        .map(|p| vec3::norm(*p))
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let eps = 1e-12 * extent * extent * extent;

    // Seed tetrahedron from well-separated points.
    let i0 = 0;
    let i1 = (1..n)
        .max_by(|&a, &b| {
            vec3::dist2(points[a], points[i0]).total_cmp(&vec3::dist2(points[b], points[i0]))
        })
        .unwrap();
    let line = vec3::sub(points[i1], points[i0]);
    let i2 = (0..n)
        .filter(|&k| k != i0 && k != i1)
        .max_by(|&a, &b| {
            let da = vec3::norm2(vec3::cross(line, vec3::sub(points[a], points[i0])));
            let db = vec3::norm2(vec3::cross(line, vec3::sub(points[b], points[i0])));
            da.total_cmp(&db)
        })
        .unwrap();
    let i3 = (0..n)
        .filter(|&k| k != i0 && k != i1 && k != i2)
        .max_by(|&a, &b| {
            orient(points[i0], points[i1], points[i2], points[a])
                .abs()
                .total_cmp(&orient(points[i0], points[i1], points[i2], points[b]).abs())
        })
        .unwrap();
    if orient(points[i0], points[i1], points[i2], points[i3]).abs() <= eps {
        return Err(Error::Degenerate("input points are coplanar".into()));
    }

    let mut faces: Vec<Option<[usize; 3]>> = Vec::new();
    let seed = [i0, i1, i2, i3];
    for (a, b, c, d) in [(0, 1, 2, 3), (0, 3, 1, 2), (0, 2, 3, 1), (1, 3, 2, 0)] {
        let (a, b, c, d) = (seed[a], seed[b], seed[c], seed[d]);
        // Outward means the opposite seed vertex lies behind the face.
        if orient(points[a], points[b], points[c], points[d]) < 0.0 {
            faces.push(Some([a, b, c]));
        } else {
            faces.push(Some([a, c, b]));
        }
    }

    for p in 0..n {
        if seed.contains(&p) {
            continue;
        }
        let visible: Vec<usize> = faces
            .iter()
            .enumerate()
            .filter_map(|(i, f)| {
                f.filter(|f| orient(points[f[0]], points[f[1]], points[f[2]], points[p]) > eps)
                    .map(|_| i)
            })
            .collect();
        if visible.is_empty() {
            return Err(Error::Degenerate(format!(
                "point {p} is not strictly outside the hull"
            )));
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for &fi in &visible {
            let f = faces[fi].unwrap();
            for k in 0..3 {
                directed.insert((f[k], f[(k + 1) % 3]), fi);
            }
        }
        let mut horizon = Vec::new();
        for &fi in &visible {
            let f = faces[fi].unwrap();
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if !directed.contains_key(&(b, a)) {
                    horizon.push((a, b));
                }
            }
        }
        for &fi in &visible {
            faces[fi] = None;
        }
        for (a, b) in horizon {
            faces.push(Some([a, b, p]));
        }
    }

    let out: Vec<[usize; 3]> = faces.into_iter().flatten().collect();
    let mut used = vec![false; n];
    for f in &out {
        for &v in f {
            used[v] = true;
        }
    }
    if let Some(v) = used.iter().position(|u| !u) {
        return Err(Error::Degenerate(format!("point {v} is interior to the hull")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_genus_zero_identities() {
        for (n, e, f) in [(12, 30, 20), (17, 45, 30), (62, 180, 120)] {
            let m = build_template(n).unwrap();
            assert_eq!(m.n_vertices(), n);
            assert_eq!(m.edges().len(), e);
            assert_eq!(m.n_faces(), f);
            assert_eq!(m.level, 0);
        }
    }

    #[test]
    fn template_vertices_on_unit_sphere() {
        let m = build_template(62).unwrap();
        for v in &m.vertices {
            assert!((vec3::norm(*v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normals_point_outward() {
        let m = build_template(62).unwrap();
        let normals = m.face_normals().unwrap();
        for (fi, n) in normals.iter().enumerate() {
            let [a, b, c] = m.face_points(fi);
            let centroid = vec3::scale(vec3::add(vec3::add(a, b), c), 1.0 / 3.0);
            assert!(vec3::dot(*n, centroid) > 0.0, "face {fi}");
            assert!((vec3::norm(*n) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_vertices_rejected() {
        assert!(build_template(11).is_err());
    }

    #[test]
    fn coplanar_input_is_an_error() {
        let pts: Vec<Vec3> = (0..6).map(|i| [i as f64, (i * i) as f64, 0.0]).collect();
        assert!(convex_hull(&pts).is_err());
    }
}
