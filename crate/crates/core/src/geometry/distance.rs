//! Point-set and surface-to-surface distances.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{sample_surface_masked, Mesh, PointIndex, TriangleIndex};
use crate::vec3::{self, Vec3};

use super::stats::quantile_sorted;

/// Default seed for metric sampling, so metrics are reproducible.
pub const METRIC_SEED: u64 = 0x5eed_d157;

/// Symmetric chamfer distance (mean squared nearest-neighbor distance in each
/// direction, summed).
pub fn chamfer_distance(px: &[Vec3], py: &[Vec3]) -> Result<f64> {
    if px.is_empty() || py.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty point set"));
    }
    let iy = PointIndex::new(py.to_vec());
    let ix = PointIndex::new(px.to_vec());
    Ok(one_sided(&iy, px)? + one_sided(&ix, py)?)
}

fn one_sided(index: &PointIndex, pts: &[Vec3]) -> Result<f64> {
    let d: Vec<f64> = pts
        .par_iter()
        .map(|&p| index.nearest(p).map(|(_, d2)| d2))
        .collect::<Result<_>>()?;
    Ok(d.iter().sum::<f64>() / pts.len() as f64)
}

/// Faces whose three vertices are all included by a per-vertex mask.
pub fn face_mask_from_vertices(m: &Mesh, vertex_mask: &[bool]) -> Result<Vec<bool>> {
    if vertex_mask.len() != m.n_vertices() {
        return Err(Error::ShapeMismatch(format!(
            "mask has {} entries, mesh has {} vertices",
            vertex_mask.len(),
            m.n_vertices()
        )));
    }
    Ok(m.faces.iter().map(|f| f.iter().all(|&v| vertex_mask[v])).collect())
}

/// Sampling parameters shared by the surface metrics.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSampling<'a> {
    pub n_samples: usize,
    pub seed: u64,
    /// Per-vertex inclusion mask applied to both meshes (same topology).
    pub vertex_mask: Option<&'a [bool]>,
}

impl SurfaceSampling<'_> {
    pub fn new(n_samples: usize) -> Self {
        SurfaceSampling {
            n_samples,
            seed: METRIC_SEED,
            vertex_mask: None,
        }
    }
}

/// Unsigned distances from points sampled on `mx` to the surface `my`, and
/// from points sampled on `my` to `mx`.
pub fn directed_surface_distances(mx: &Mesh, my: &Mesh, opts: &SurfaceSampling) -> Result<(Vec<f64>, Vec<f64>)> {
    let (fx, fy) = match opts.vertex_mask {
        Some(mask) => (
            Some(face_mask_from_vertices(mx, mask)?),
            Some(face_mask_from_vertices(my, mask)?),
        ),
        None => (None, None),
    };
    let sx = sample_surface_masked(mx, opts.n_samples, opts.seed, fx.as_deref())?;
    let sy = sample_surface_masked(my, opts.n_samples, opts.seed ^ 0x9e37_79b9, fy.as_deref())?;
    let tx = TriangleIndex::with_faces(mx, fx.as_deref());
    let ty = TriangleIndex::with_faces(my, fy.as_deref());
    if tx.is_empty() || ty.is_empty() {
        return Err(Error::invalid("mask excludes every face"));
    }
    let dist = |idx: &TriangleIndex, pts: &[Vec3]| -> Vec<f64> {
        pts.par_iter().map(|&p| idx.distance(p).unwrap_or(0.0)).collect()
    };
    Ok((dist(&ty, &sx.points), dist(&tx, &sy.points)))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean symmetric point-to-surface distance (mm).
pub fn symmetric_surface_distance(mx: &Mesh, my: &Mesh, n_samples: usize) -> Result<f64> {
    symmetric_surface_distance_with(mx, my, &SurfaceSampling::new(n_samples))
}

pub fn symmetric_surface_distance_with(mx: &Mesh, my: &Mesh, opts: &SurfaceSampling) -> Result<f64> {
    let (a, b) = directed_surface_distances(mx, my, opts)?;
    Ok(0.5 * (mean(&a) + mean(&b)))
}

/// `q`-th percentile (0 < q <= 100) of the pooled symmetric point-to-surface
/// distances.
pub fn hausdorff_percentile(mx: &Mesh, my: &Mesh, q: f64, n_samples: usize) -> Result<f64> {
    hausdorff_percentile_with(mx, my, q, &SurfaceSampling::new(n_samples))
}

pub fn hausdorff_percentile_with(mx: &Mesh, my: &Mesh, q: f64, opts: &SurfaceSampling) -> Result<f64> {
    if !(q > 0.0 && q <= 100.0) {
        return Err(Error::invalid(format!("percentile must be in (0, 100], got {q}")));
    }
    let (mut a, b) = directed_surface_distances(mx, my, opts)?;
    a.extend(b);
    a.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&a, q / 100.0))
}

/// Per-WM-vertex thickness: the mean of the distance from the vertex to the
/// GM surface and the distance from that closest GM point back to the WM
/// surface.
pub fn cortical_thickness(wm: &Mesh, gm: &Mesh) -> Vec<f64> {
    let tw = TriangleIndex::new(wm);
    let tg = TriangleIndex::new(gm);
    wm.vertices
        .par_iter()
        .map(|&v| {
            let Some(c) = tg.closest_point(v) else {
                return 0.0;
            };
            let back = tw.distance(c.point).unwrap_or(0.0);
            0.5 * (c.dist2.sqrt() + back)
        })
        .collect()
}

pub fn mean_thickness(wm: &Mesh, gm: &Mesh) -> f64 {
    mean(&cortical_thickness(wm, gm))
}

/// Transfers a per-vertex field from `src` to the vertices of `dst` by
/// barycentric interpolation at the closest point of `src`.
pub fn transfer_vertex_field(src: &Mesh, values: &[f64], dst: &Mesh) -> Vec<f64> {
    let idx = TriangleIndex::new(src);
    dst.vertices
        .par_iter()
        .map(|&p| match idx.closest_point(p) {
            Some(c) => {
                let f = src.faces[c.face];
                let b = c.barycentric;
                b[0] * values[f[0]] + b[1] * values[f[1]] + b[2] * values[f[2]]
            }
            None => 0.0,
        })
        .collect()
}

/// Closest-point distance from a point to a mesh, brute force. Test oracle.
#[doc(hidden)]
pub fn point_mesh_distance_brute(m: &Mesh, p: Vec3) -> f64 {
    (0..m.n_faces())
        .map(|f| {
            let (q, _) = crate::mesh::closest_on_triangle(p, &m.face_points(f));
            vec3::dist2(p, q)
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}
