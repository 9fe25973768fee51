//! Training losses on predicted vertex positions and their weight schedule.
//!
//! Every loss is a tape operation taking an `[N, 3]` position node and
//! returning a scalar, with a hand-written backward pass.

mod schedule;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mean_curvature_unchecked, mean_curvature_vjp, percentile_bounds, taubin_smooth};
use crate::mesh::{sample_surface, Mesh, PointIndex, SurfaceSamples, Topology};
use crate::nn::{Tape, Tensor, Var};
use crate::vec3::{self, Vec3};

pub use schedule::{scheduled_weights, LossSchedule, LossWeights, WeightRamp};

/// Which surface a target describes; selects the curvature clipping range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surface {
    White,
    Gray,
}

impl Surface {
    pub fn name(self) -> &'static str {
        match self {
            Surface::White => "wm",
            Surface::Gray => "gm",
        }
    }
}

/// Target preprocessing for the curvature term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvatureOptions {
    pub taubin_lambda: f64,
    pub taubin_mu: f64,
    /// Zero disables smoothing.
    pub taubin_iterations: usize,
    pub white_clip: [f64; 2],
    pub gray_clip: [f64; 2],
}

impl Default for CurvatureOptions {
    fn default() -> Self {
        CurvatureOptions {
            taubin_lambda: 0.5,
            taubin_mu: -0.53,
            taubin_iterations: 5,
            white_clip: [0.001, 0.999],
            gray_clip: [0.01, 0.99],
        }
    }
}

impl CurvatureOptions {
    pub fn clip(&self, s: Surface) -> [f64; 2] {
        match s {
            Surface::White => self.white_clip,
            Surface::Gray => self.gray_clip,
        }
    }
}

/// A ground-truth surface prepared once for repeated loss evaluation.
#[derive(Debug, Clone)]
pub struct SurfaceTarget {
    pub surface: Surface,
    pub mesh: Mesh,
    pub samples: SurfaceSamples,
    pub index: Arc<PointIndex>,
    /// Smoothed, clipped mean curvature at each sample.
    pub curvature: Vec<f64>,
}

impl SurfaceTarget {
    pub fn new(mesh: Mesh, surface: Surface, n_samples: usize, seed: u64, opts: &CurvatureOptions) -> Result<Self> {
        mesh.check_closed_manifold()?;
        let samples = sample_surface(&mesh, n_samples, seed)?;
        let curvature = target_curvature(&mesh, &samples, opts.clip(surface), opts)?;
        let index = Arc::new(PointIndex::new(samples.points.clone()));
        Ok(SurfaceTarget {
            surface,
            mesh,
            samples,
            index,
            curvature,
        })
    }

    /// Target from precomputed samples and per-sample curvature.
    pub fn from_parts(surface: Surface, mesh: Mesh, samples: SurfaceSamples, curvature: Vec<f64>) -> Result<Self> {
        if curvature.len() != samples.len() {
            return Err(Error::ShapeMismatch("one curvature value per sample".into()));
        }
        let index = Arc::new(PointIndex::new(samples.points.clone()));
        Ok(SurfaceTarget {
            surface,
            mesh,
            samples,
            index,
            curvature,
        })
    }
}

/// Per-vertex curvature of the smoothed target, clipped to percentile
/// bounds, interpolated at the samples.
fn target_curvature(mesh: &Mesh, samples: &SurfaceSamples, clip: [f64; 2], opts: &CurvatureOptions) -> Result<Vec<f64>> {
    let smooth = if opts.taubin_iterations > 0 {
        taubin_smooth(mesh, opts.taubin_lambda, opts.taubin_mu, opts.taubin_iterations)?
    } else {
        mesh.clone()
    };
    let h = mean_curvature_unchecked(&smooth.vertices, &smooth.faces)?;
    let (lo, hi) = percentile_bounds(&h, clip[0], clip[1])?;
    let h: Vec<f64> = h.iter().map(|v| v.clamp(lo, hi)).collect();
    Ok(samples.interpolate_scalar(&mesh.faces, &h))
}

fn positions(t: &Tape, v: Var) -> Result<Vec<Vec3>> {
    match t.shape(v) {
        [_, 3] => Ok(t.data(v).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()),
        s => Err(Error::ShapeMismatch(format!("positions must be [N, 3], got {s:?}"))),
    }
}

fn scatter_samples(faces: &[[usize; 3]], samples: &SurfaceSamples, g_pts: &[Vec3], out: &mut [f64]) {
    for ((&f, b), g) in samples.face_ids.iter().zip(&samples.barycentric).zip(g_pts) {
        for (k, &v) in faces[f].iter().enumerate() {
            for c in 0..3 {
                out[3 * v + c] += b[k] * g[c];
            }
        }
    }
}

fn check_faces(faces: &[[usize; 3]], n: usize) -> Result<()> {
    if faces.iter().flatten().any(|&v| v >= n) {
        return Err(Error::InvalidMesh(format!("face references a vertex beyond {n}")));
    }
    Ok(())
}

/// Nearest-neighbor correspondences between predicted samples and a target.
struct Matches {
    /// For each predicted sample: nearest target sample.
    to_target: Vec<usize>,
    /// For each target sample: nearest predicted sample.
    to_pred: Vec<usize>,
}

fn match_samples(pred: &[Vec3], target: &SurfaceTarget) -> Result<Matches> {
    let to_target = pred
        .par_iter()
        .map(|&p| target.index.nearest(p).map(|(i, _)| i))
        .collect::<Result<_>>()?;
    let pi = PointIndex::new(pred.to_vec());
    let to_pred = target
        .samples
        .points
        .par_iter()
        .map(|&q| pi.nearest(q).map(|(i, _)| i))
        .collect::<Result<_>>()?;
    Ok(Matches { to_target, to_pred })
}

impl Tape {
    /// Mean squared distance between corresponding vertices.
    pub fn matched_loss(&mut self, pred: Var, target: &[Vec3]) -> Result<Var> {
        let p = positions(self, pred)?;
        if p.len() != target.len() {
            return Err(Error::ShapeMismatch(format!(
                "matched loss needs equal vertex counts ({} vs {})",
                p.len(),
                target.len()
            )));
        }
        let n = p.len() as f64;
        let value = p.iter().zip(target).map(|(a, b)| vec3::dist2(*a, *b)).sum::<f64>() / n;
        let target = target.to_vec();
        Ok(self.push(
            Tensor::scalar(value),
            &[pred],
            Box::new(move |t, g, gr| {
                let s = 2.0 * g[0] / n;
                let pd = t.data(pred);
                let gp = gr.of(pred);
                for (i, y) in target.iter().enumerate() {
                    for c in 0..3 {
                        gp[3 * i + c] += s * (pd[3 * i + c] - y[c]);
                    }
                }
            }),
        ))
    }

    /// Symmetric chamfer distance between points sampled on the predicted
    /// surface (fixed faces and barycentric weights) and the target samples.
    pub fn chamfer_loss(&mut self, pred: Var, faces: &[[usize; 3]], samples: &SurfaceSamples, target: &SurfaceTarget) -> Result<Var> {
        let verts = positions(self, pred)?;
        check_faces(faces, verts.len())?;
        let mesh = Mesh {
            vertices: verts,
            faces: faces.to_vec(),
            level: 0,
        };
        let px = samples.positions_on(&mesh);
        if px.is_empty() || target.samples.is_empty() {
            return Err(Error::invalid("chamfer loss of an empty sample set"));
        }
        let m = match_samples(&px, target)?;
        let py = &target.samples.points;
        let (nx, ny) = (px.len() as f64, py.len() as f64);
        let a: f64 = px.iter().zip(&m.to_target).map(|(p, &j)| vec3::dist2(*p, py[j])).sum::<f64>() / nx;
        let b: f64 = py.iter().zip(&m.to_pred).map(|(q, &i)| vec3::dist2(*q, px[i])).sum::<f64>() / ny;
        let faces = faces.to_vec();
        let samples = samples.clone();
        let py = py.clone();
        Ok(self.push(
            Tensor::scalar(a + b),
            &[pred],
            Box::new(move |_, g, gr| {
                let mut gpts = vec![[0.0; 3]; px.len()];
                for (i, &j) in m.to_target.iter().enumerate() {
                    gpts[i] = vec3::scale(vec3::sub(px[i], py[j]), 2.0 * g[0] / nx);
                }
                for (j, &i) in m.to_pred.iter().enumerate() {
                    gpts[i] = vec3::add(gpts[i], vec3::scale(vec3::sub(px[i], py[j]), 2.0 * g[0] / ny));
                }
                scatter_samples(&faces, &samples, &gpts, gr.of(pred));
            }),
        ))
    }

    /// Symmetric squared difference of mean curvature between spatially
    /// nearest sample pairs of the prediction and the prepared target.
    pub fn curvature_loss(&mut self, pred: Var, faces: &[[usize; 3]], samples: &SurfaceSamples, target: &SurfaceTarget) -> Result<Var> {
        let verts = positions(self, pred)?;
        check_faces(faces, verts.len())?;
        let h = mean_curvature_unchecked(&verts, faces)?;
        let hx = samples.interpolate_scalar(faces, &h);
        let mesh = Mesh {
            vertices: verts,
            faces: faces.to_vec(),
            level: 0,
        };
        let px = samples.positions_on(&mesh);
        if px.is_empty() || target.samples.is_empty() {
            return Err(Error::invalid("curvature loss of an empty sample set"));
        }
        let m = match_samples(&px, target)?;
        let hy = target.curvature.clone();
        let (nx, ny) = (px.len() as f64, hy.len() as f64);
        let a: f64 = hx.iter().zip(&m.to_target).map(|(x, &j)| (x - hy[j]).powi(2)).sum::<f64>() / nx;
        let b: f64 = hy.iter().zip(&m.to_pred).map(|(y, &i)| (y - hx[i]).powi(2)).sum::<f64>() / ny;
        let faces = faces.to_vec();
        let samples = samples.clone();
        let n_vertices = mesh.vertices.len();
        Ok(self.push(
            Tensor::scalar(a + b),
            &[pred],
            Box::new(move |t, g, gr| {
                let mut g_hx = vec![0.0; hx.len()];
                for (i, &j) in m.to_target.iter().enumerate() {
                    g_hx[i] += 2.0 * g[0] * (hx[i] - hy[j]) / nx;
                }
                for (j, &i) in m.to_pred.iter().enumerate() {
                    g_hx[i] += 2.0 * g[0] * (hx[i] - hy[j]) / ny;
                }
                let mut g_h = vec![0.0; n_vertices];
                for ((&f, bary), gs) in samples.face_ids.iter().zip(&samples.barycentric).zip(&g_hx) {
                    for (k, &v) in faces[f].iter().enumerate() {
                        g_h[v] += bary[k] * gs;
                    }
                }
                let verts: Vec<Vec3> = t.data(pred).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
                // The forward pass already succeeded on these positions.
                let gv = mean_curvature_vjp(&verts, &faces, &g_h).expect("curvature defined in forward");
                let gp = gr.of(pred);
                for (i, d) in gv.iter().enumerate() {
                    for c in 0..3 {
                        gp[3 * i + c] += d[c];
                    }
                }
            }),
        ))
    }

    /// Mean squared difference of unit normals over faces sharing an edge.
    pub fn spring_loss(&mut self, pred: Var, topo: &Topology) -> Result<Var> {
        let p = positions(self, pred)?;
        check_faces(&topo.faces, p.len())?;
        if topo.face_pairs.is_empty() {
            return Err(Error::invalid("spring loss needs adjacent faces"));
        }
        let mut cross = Vec::with_capacity(topo.faces.len());
        let mut normals = Vec::with_capacity(topo.faces.len());
        for (fi, f) in topo.faces.iter().enumerate() {
            let c = vec3::cross(vec3::sub(p[f[1]], p[f[0]]), vec3::sub(p[f[2]], p[f[0]]));
            let n = vec3::normalize(c).ok_or(Error::DegenerateFace(fi))?;
            cross.push(c);
            normals.push(n);
        }
        let np = topo.face_pairs.len() as f64;
        let value = topo
            .face_pairs
            .iter()
            .map(|&[i, j]| vec3::dist2(normals[i], normals[j]))
            .sum::<f64>()
            / np;
        let topo_faces = topo.faces.clone();
        let pairs = topo.face_pairs.clone();
        Ok(self.push(
            Tensor::scalar(value),
            &[pred],
            Box::new(move |_, g, gr| {
                let mut gn = vec![[0.0; 3]; normals.len()];
                for &[i, j] in &pairs {
                    let d = vec3::scale(vec3::sub(normals[i], normals[j]), 2.0 * g[0] / np);
                    gn[i] = vec3::add(gn[i], d);
                    gn[j] = vec3::sub(gn[j], d);
                }
                let gp = gr.of(pred);
                for (fi, f) in topo_faces.iter().enumerate() {
                    let n = normals[fi];
                    let c = cross[fi];
                    // d n / d c = (I - n n^T) / |c|
                    let gc = vec3::scale(vec3::sub(gn[fi], vec3::scale(n, vec3::dot(n, gn[fi]))), 1.0 / vec3::norm(c));
                    let e1 = vec3::sub(p[f[1]], p[f[0]]);
                    let e2 = vec3::sub(p[f[2]], p[f[0]]);
                    let g1 = vec3::cross(e2, gc);
                    let g2 = vec3::cross(gc, e1);
                    for k in 0..3 {
                        gp[3 * f[1] + k] += g1[k];
                        gp[3 * f[2] + k] += g2[k];
                        gp[3 * f[0] + k] -= g1[k] + g2[k];
                    }
                }
            }),
        ))
    }

    /// Mean of `(l / mean(l) - 1)^2` over edges: the variance of edge lengths
    /// normalized by their mean, hence invariant to uniform scaling.
    pub fn edge_loss(&mut self, pred: Var, edges: &[[usize; 2]]) -> Result<Var> {
        let p = positions(self, pred)?;
        if edges.is_empty() || edges.iter().flatten().any(|&v| v >= p.len()) {
            return Err(Error::invalid("edge loss needs edges within the vertex range"));
        }
        let len: Vec<f64> = edges.iter().map(|&[a, b]| vec3::norm(vec3::sub(p[a], p[b]))).collect();
        let ne = len.len() as f64;
        let mean = len.iter().sum::<f64>() / ne;
        if !(mean > 0.0) {
            return Err(Error::Degenerate("zero mean edge length".into()));
        }
        let value = len.iter().map(|l| (l / mean - 1.0).powi(2)).sum::<f64>() / ne;
        let edges = edges.to_vec();
        Ok(self.push(
            Tensor::scalar(value),
            &[pred],
            Box::new(move |_, g, gr| {
                let s: f64 = len.iter().map(|l| (l / mean - 1.0) * l).sum::<f64>() / (mean * mean * ne);
                let gp = gr.of(pred);
                for (&[a, b], &l) in edges.iter().zip(&len) {
                    if l == 0.0 {
                        continue;
                    }
                    let dl = 2.0 * g[0] / ne * ((l / mean - 1.0) / mean - s);
                    let u = vec3::scale(vec3::sub(p[a], p[b]), dl / l);
                    for k in 0..3 {
                        gp[3 * a + k] += u[k];
                        gp[3 * b + k] -= u[k];
                    }
                }
            }),
        ))
    }
}

/// Loss values for one surface.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermValues {
    pub chamfer: f64,
    pub matched: f64,
    pub curvature: f64,
    pub spring: f64,
    pub edge: f64,
}

impl TermValues {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.chamfer * self.chamfer + w.matched * self.matched + w.curvature * self.curvature + w.spring * self.spring + w.edge * self.edge
    }
}

/// Builds the five terms for one surface and their weighted sum.
pub struct SurfaceLoss {
    pub total: Var,
    pub values: TermValues,
}

/// Evaluates every term for `pred` against `target` on `tape`.
pub fn surface_loss(
    tape: &mut Tape,
    pred: Var,
    topo: &Topology,
    samples: &SurfaceSamples,
    target: &SurfaceTarget,
    weights: &LossWeights,
) -> Result<SurfaceLoss> {
    let chamfer = tape.chamfer_loss(pred, &topo.faces, samples, target)?;
    let matched = tape.matched_loss(pred, &target.mesh.vertices)?;
    let curvature = tape.curvature_loss(pred, &topo.faces, samples, target)?;
    let spring = tape.spring_loss(pred, topo)?;
    let edge = tape.edge_loss(pred, &topo.edges)?;
    let values = TermValues {
        chamfer: tape.data(chamfer)[0],
        matched: tape.data(matched)[0],
        curvature: tape.data(curvature)[0],
        spring: tape.data(spring)[0],
        edge: tape.data(edge)[0],
    };
    let total = tape.weighted_sum(&[
        (chamfer, weights.chamfer),
        (matched, weights.matched),
        (curvature, weights.curvature),
        (spring, weights.spring),
        (edge, weights.edge),
    ])?;
    Ok(SurfaceLoss { total, values })
}

fn eval_on_mesh(m: &Mesh, f: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> Result<f64> {
    let mut t = Tape::inference();
    let flat: Vec<f64> = m.vertices.iter().flatten().copied().collect();
    let v = t.constant(Tensor::new(vec![m.n_vertices(), 3], flat)?);
    let out = f(&mut t, v)?;
    Ok(t.data(out)[0])
}

/// Spring loss of a mesh.
pub fn spring_loss(m: &Mesh) -> Result<f64> {
    let topo = m.topology();
    eval_on_mesh(m, |t, v| t.spring_loss(v, &topo))
}

/// Edge loss of a mesh.
pub fn edge_loss(m: &Mesh) -> Result<f64> {
    let edges = m.edges();
    eval_on_mesh(m, |t, v| t.edge_loss(v, &edges))
}

/// Matched-vertex loss between two meshes with the same vertex count.
pub fn matched_loss(mx: &Mesh, my: &Mesh) -> Result<f64> {
    eval_on_mesh(mx, |t, v| t.matched_loss(v, &my.vertices))
}

/// Chamfer loss of `mx` sampled with `samples` against a prepared target.
pub fn chamfer_loss(mx: &Mesh, samples: &SurfaceSamples, target: &SurfaceTarget) -> Result<f64> {
    eval_on_mesh(mx, |t, v| t.chamfer_loss(v, &mx.faces, samples, target))
}

/// Curvature loss of `mx` sampled with `samples` against a prepared target.
pub fn curvature_loss(mx: &Mesh, samples: &SurfaceSamples, target: &SurfaceTarget) -> Result<f64> {
    eval_on_mesh(mx, |t, v| t.curvature_loss(v, &mx.faces, samples, target))
}
