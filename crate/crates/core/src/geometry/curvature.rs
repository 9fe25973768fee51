//! Discrete mean curvature from the cotangent Laplace-Beltrami operator with
//! mixed Voronoi areas (Meyer et al.).
//!
//! Per vertex `v`, `L_v = sum_j (cot a_vj + cot b_vj) (x_j - x_v)` and
//! `H_v = sign * |L_v| / (4 A_v)`, positive when `L_v` points against the
//! outward vertex normal, so a convex sphere of radius r has `H = 1/r`.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::vec3::{self, Vec3};

use super::dual::{cross3, dot3, sub3, Dual, Scalar};

/// Laplacian contributions and mixed-area contributions of one triangle to
/// its three corners.
fn triangle_terms<S: Scalar>(p: [[S; 3]; 3]) -> Option<([[S; 3]; 3], [S; 3])> {
    let twice_area = {
        let c = cross3(sub3(p[1], p[0]), sub3(p[2], p[0]));
        dot3(c, c).sqrt()
    };
    if !(twice_area.val() > 0.0) {
        return None;
    }
    let area = twice_area * S::cst(0.5);
    // dots[k]: dot product of the two edges leaving corner k.
    let mut dots = [S::cst(0.0); 3];
    let mut cots = [S::cst(0.0); 3];
    for k in 0..3 {
        let (i, j) = ((k + 1) % 3, (k + 2) % 3);
        dots[k] = dot3(sub3(p[i], p[k]), sub3(p[j], p[k]));
        cots[k] = dots[k] / twice_area;
    }
    let mut lap = [[S::cst(0.0); 3]; 3];
    for k in 0..3 {
        // Edge (i, j) is opposite corner k.
        let (i, j) = ((k + 1) % 3, (k + 2) % 3);
        let e = sub3(p[j], p[i]);
        for c in 0..3 {
            lap[i][c] = lap[i][c] + cots[k] * e[c];
            lap[j][c] = lap[j][c] - cots[k] * e[c];
        }
    }
    let obtuse = (0..3).find(|&k| dots[k].val() < 0.0);
    let mut mixed = [S::cst(0.0); 3];
    match obtuse {
        Some(o) => {
            for (k, m) in mixed.iter_mut().enumerate() {
                *m = if k == o { area * S::cst(0.5) } else { area * S::cst(0.25) };
            }
        }
        None => {
            for k in 0..3 {
                let (i, j) = ((k + 1) % 3, (k + 2) % 3);
                let eki = sub3(p[i], p[k]);
                let ekj = sub3(p[j], p[k]);
                // |x_k - x_i|^2 cot(angle at j) + |x_k - x_j|^2 cot(angle at i)
                mixed[k] = (dot3(eki, eki) * cots[j] + dot3(ekj, ekj) * cots[i]) * S::cst(0.125);
            }
        }
    }
    Some((lap, mixed))
}

struct Accumulated {
    lap: Vec<Vec3>,
    area: Vec<f64>,
    normals: Vec<Vec3>,
}

fn accumulate(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<Accumulated> {
    let n = vertices.len();
    let mut lap = vec![[0.0; 3]; n];
    let mut area = vec![0.0; n];
    let mut normals = vec![[0.0; 3]; n];
    for (fi, f) in faces.iter().enumerate() {
        let p = [vertices[f[0]], vertices[f[1]], vertices[f[2]]];
        let (l, a) = triangle_terms(p).ok_or(Error::DegenerateFace(fi))?;
        let fn_ = vec3::cross(vec3::sub(p[1], p[0]), vec3::sub(p[2], p[0]));
        for c in 0..3 {
            lap[f[c]] = vec3::add(lap[f[c]], l[c]);
            area[f[c]] += a[c];
            normals[f[c]] = vec3::add(normals[f[c]], fn_);
        }
    }
    if let Some(v) = area.iter().position(|&a| !(a > 0.0)) {
        return Err(Error::Degenerate(format!("vertex {v} has zero mixed area")));
    }
    Ok(Accumulated { lap, area, normals })
}

#[inline]
fn sign_of(lap: Vec3, normal: Vec3) -> f64 {
    if vec3::dot(lap, normal) <= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Per-vertex signed mean curvature (1/mm) of a closed manifold mesh.
pub fn mean_curvature(m: &Mesh) -> Result<Vec<f64>> {
    m.check_closed_manifold()?;
    mean_curvature_unchecked(&m.vertices, &m.faces)
}

/// As [`mean_curvature`] without the manifold check; for meshes whose
/// connectivity is known to be a closed template.
pub fn mean_curvature_unchecked(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<Vec<f64>> {
    let acc = accumulate(vertices, faces)?;
    Ok((0..vertices.len())
        .map(|v| sign_of(acc.lap[v], acc.normals[v]) * vec3::norm(acc.lap[v]) / (4.0 * acc.area[v]))
        .collect())
}

/// Vector-Jacobian product: gradient of `sum_v grad_h[v] * H_v` with respect
/// to vertex positions. The sign of each `H_v` is treated as locally constant.
pub fn mean_curvature_vjp(vertices: &[Vec3], faces: &[[usize; 3]], grad_h: &[f64]) -> Result<Vec<Vec3>> {
    let acc = accumulate(vertices, faces)?;
    let n = vertices.len();
    // dH/dL and dH/dA per vertex, already scaled by grad_h.
    let mut g_lap = vec![[0.0; 3]; n];
    let mut g_area = vec![0.0; n];
    for v in 0..n {
        if grad_h[v] == 0.0 {
            continue;
        }
        let l = acc.lap[v];
        let ln = vec3::norm(l);
        let s = sign_of(l, acc.normals[v]);
        let a = acc.area[v];
        if ln > 0.0 {
            g_lap[v] = vec3::scale(l, grad_h[v] * s / (4.0 * a * ln));
        }
        g_area[v] = -grad_h[v] * s * ln / (4.0 * a * a);
    }
    let mut out = vec![[0.0; 3]; n];
    for (fi, f) in faces.iter().enumerate() {
        let mut p = [[Dual::<9>::cst(0.0); 3]; 3];
        for c in 0..3 {
            for k in 0..3 {
                p[c][k] = Dual::var(vertices[f[c]][k], 3 * c + k);
            }
        }
        let (l, a) = triangle_terms(p).ok_or(Error::DegenerateFace(fi))?;
        let mut grad = [0.0; 9];
        for c in 0..3 {
            let v = f[c];
            for k in 0..3 {
                let w = g_lap[v][k];
                if w != 0.0 {
                    for (g, d) in grad.iter_mut().zip(l[c][k].d) {
                        *g += w * d;
                    }
                }
            }
            let w = g_area[v];
            if w != 0.0 {
                for (g, d) in grad.iter_mut().zip(a[c].d) {
                    *g += w * d;
                }
            }
        }
        for c in 0..3 {
            for k in 0..3 {
                out[f[c]][k] += grad[3 * c + k];
            }
        }
    }
    Ok(out)
}
