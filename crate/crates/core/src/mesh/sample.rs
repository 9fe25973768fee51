use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vec3::Vec3;

use super::Mesh;

/// Points drawn on a mesh surface, remembering where they came from so
/// values (positions, curvature) can be re-interpolated later.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub face_ids: Vec<usize>,
    pub barycentric: Vec<[f64; 3]>,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn from_points(points: Vec<Vec3>) -> Self {
        let n = points.len();
        SurfaceSamples {
            points,
            face_ids: vec![0; n],
            barycentric: vec![[1.0, 0.0, 0.0]; n],
        }
    }

    /// Recomputes positions on `m` (same connectivity as the sampled mesh).
    pub fn positions_on(&self, m: &Mesh) -> Vec<Vec3> {
        self.face_ids
            .iter()
            .zip(&self.barycentric)
            .map(|(&f, b)| interpolate(m, f, b))
            .collect()
    }

    /// Barycentric interpolation of a per-vertex scalar field.
    pub fn interpolate_scalar(&self, faces: &[[usize; 3]], values: &[f64]) -> Vec<f64> {
        self.face_ids
            .iter()
            .zip(&self.barycentric)
            .map(|(&f, b)| {
                let t = faces[f];
                b[0] * values[t[0]] + b[1] * values[t[1]] + b[2] * values[t[2]]
            })
            .collect()
    }
}

#[inline]
fn interpolate(m: &Mesh, f: usize, b: &[f64; 3]) -> Vec3 {
    let [p0, p1, p2] = m.face_points(f);
    [
        b[0] * p0[0] + b[1] * p1[0] + b[2] * p2[0],
        b[0] * p0[1] + b[1] * p1[1] + b[2] * p2[1],
        b[0] * p0[2] + b[1] * p1[2] + b[2] * p2[2],
    ]
}

/// Area-uniform surface sampling, deterministic for a given seed.
pub fn sample_surface(m: &Mesh, count: usize, seed: u64) -> Result<SurfaceSamples> {
    sample_surface_masked(m, count, seed, None)
}

/// As [`sample_surface`], restricted to faces with `face_mask[f] == true`.
pub fn sample_surface_masked(
    m: &Mesh,
    count: usize,
    seed: u64,
    face_mask: Option<&[bool]>,
) -> Result<SurfaceSamples> {
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut cdf = Vec::with_capacity(m.n_faces());
    let mut total = 0.0;
    for f in 0..m.n_faces() {
        if face_mask.is_none_or(|mask| mask[f]) {
            total += m.face_area(f);
        }
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("mesh has no sampleable area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SurfaceSamples {
        points: Vec::with_capacity(count),
        face_ids: Vec::with_capacity(count),
        barycentric: Vec::with_capacity(count),
    };
    for _ in 0..count {
        let u: f64 = rng.random::<f64>() * total;
        let f = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        let r1 = rng.random::<f64>().sqrt();
        let r2: f64 = rng.random();
        let b = [1.0 - r1, r1 * (1.0 - r2), r1 * r2];
        out.points.push(interpolate(m, f, &b));
        out.face_ids.push(f);
        out.barycentric.push(b);
    }
    Ok(out)
}
