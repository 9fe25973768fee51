//! Reconstruction metrics per subject and age trends over a cohort.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cortical_thickness, face_mask_from_vertices, fit_quadratic_trend, quadratic_residuals, transfer_vertex_field};
use crate::geometry::stats::quantile_sorted;
use crate::mesh::{count_self_intersecting_faces, sample_surface_masked, Mesh, TriangleIndex};
use crate::model::Model;
use crate::train::{mix_seed, EvalCase};

/// Metric names in record order.
pub const METRIC_NAMES: [&str; 8] = [
    "ssd_wm",
    "ssd_gm",
    "hd90_wm",
    "hd90_gm",
    "thickness_error",
    "mean_thickness",
    "sif_wm",
    "sif_gm",
];

/// Surface metrics of one predicted WM/GM pair against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    /// Mean symmetric surface distance (mm).
    pub ssd_wm: f64,
    pub ssd_gm: f64,
    /// 90th percentile of the pooled point-to-surface distances (mm).
    pub hd90_wm: f64,
    pub hd90_gm: f64,
    /// Mean absolute per-vertex thickness difference (mm).
    pub thickness_error: f64,
    /// Mean predicted thickness (mm), the quantity tracked across ages.
    pub mean_thickness: f64,
    /// Fraction of predicted faces that intersect a non-adjacent face.
    pub sif_wm: f64,
    pub sif_gm: f64,
}

impl Metrics {
    pub fn values(&self) -> [f64; 8] {
        [
            self.ssd_wm,
            self.ssd_gm,
            self.hd90_wm,
            self.hd90_gm,
            self.thickness_error,
            self.mean_thickness,
            self.sif_wm,
            self.sif_gm,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        METRIC_NAMES.iter().position(|&n| n == name).map(|i| self.values()[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Points sampled per surface for distances.
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_samples: 100_000,
            seed: crate::geometry::distance::METRIC_SEED,
        }
    }
}

/// Seed for sampling a mesh, derived from its coordinates so a mesh gets
/// the same samples whichever side of a comparison it is on.
fn content_seed(m: &Mesh, seed: u64) -> u64 {
    m.vertices.iter().flatten().fold(seed, |h, x| mix_seed(h, x.to_bits()))
}

/// Point-to-surface distances from samples on `a` to `b` and back.
fn pooled_distances(a: &Mesh, b: &Mesh, mask: Option<&[bool]>, opts: &EvalOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    let face_mask = |m: &Mesh| mask.map(|k| face_mask_from_vertices(m, k)).transpose();
    let (fa, fb) = (face_mask(a)?, face_mask(b)?);
    let sa = sample_surface_masked(a, opts.n_samples, content_seed(a, opts.seed), fa.as_deref())?;
    let sb = sample_surface_masked(b, opts.n_samples, content_seed(b, opts.seed), fb.as_deref())?;
    let (ta, tb) = (TriangleIndex::with_faces(a, fa.as_deref()), TriangleIndex::with_faces(b, fb.as_deref()));
    if ta.is_empty() || tb.is_empty() {
        return Err(Error::invalid("mask excludes every face"));
    }
    let dist = |idx: &TriangleIndex, pts: &[crate::vec3::Vec3]| -> Vec<f64> {
        pts.par_iter().map(|&p| idx.distance(p).unwrap_or(0.0)).collect()
    };
    Ok((dist(&tb, &sa.points), dist(&ta, &sb.points)))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric surface distance and 90th-percentile Hausdorff distance.
/// Both are unchanged when the meshes are swapped.
pub fn surface_errors(a: &Mesh, b: &Mesh, mask: Option<&[bool]>, opts: &EvalOptions) -> Result<(f64, f64)> {
    let (da, db) = pooled_distances(a, b, mask, opts)?;
    let ssd = 0.5 * (mean(&da) + mean(&db));
    let mut all: Vec<f64> = da.into_iter().chain(db).collect();
    all.sort_by(f64::total_cmp);
    Ok((ssd, quantile_sorted(&all, 0.9)))
}

/// All eight metrics for a predicted pair. `mask` (true = include) is a
/// per-vertex flag on the ground-truth topology; the prediction must share
/// that topology when a mask is given.
pub fn evaluate_pair(pred_wm: &Mesh, pred_gm: &Mesh, gt_wm: &Mesh, gt_gm: &Mesh, mask: Option<&[bool]>, opts: &EvalOptions) -> Result<Metrics> {
    if let Some(k) = mask {
        for m in [pred_wm, pred_gm, gt_wm, gt_gm] {
            if m.n_vertices() != k.len() {
                return Err(Error::ShapeMismatch(format!(
                    "mask has {} entries but a mesh has {} vertices",
                    k.len(),
                    m.n_vertices()
                )));
            }
        }
    }
    let (ssd_wm, hd90_wm) = surface_errors(pred_wm, gt_wm, mask, opts)?;
    let (ssd_gm, hd90_gm) = surface_errors(pred_gm, gt_gm, mask, opts)?;

    let pred_t = cortical_thickness(pred_wm, pred_gm);
    let gt_t = cortical_thickness(gt_wm, gt_gm);
    let pred_on_gt = transfer_vertex_field(pred_wm, &pred_t, gt_wm);
    let keep = |i: usize| mask.is_none_or(|k| k[i]);
    let (mut err, mut n) = (0.0, 0usize);
    for i in (0..gt_t.len()).filter(|&i| keep(i)) {
        err += (pred_on_gt[i] - gt_t[i]).abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("mask excludes every vertex"));
    }
    let kept: Vec<f64> = (0..pred_t.len()).filter(|&i| keep(i)).map(|i| pred_t[i]).collect();
    Ok(Metrics {
        ssd_wm,
        ssd_gm,
        hd90_wm,
        hd90_gm,
        thickness_error: err / n as f64,
        mean_thickness: mean(&kept),
        sif_wm: count_self_intersecting_faces(pred_wm),
        sif_gm: count_self_intersecting_faces(pred_gm),
    })
}

/// One evaluated subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject: String,
    pub age: Option<f64>,
    pub metrics: Metrics,
}

/// Reconstructs every case with `model`, the template placed by the
/// phantom's [`template_affine`](crate::synth::SubjectSample::template_affine),
/// and scores it against the phantom surfaces.
pub fn evaluate_model(model: &Model, cases: &[EvalCase], opts: &EvalOptions) -> Result<Vec<SubjectRecord>> {
    cases
        .iter()
        .map(|c| {
            let affine = c.subject.subject.template_affine(model.config.template_radius)?;
            let (wm, gm) = model.reconstruct(&c.image, &affine)?;
            let metrics = evaluate_pair(&wm, &gm, &c.subject.subject.wm, &c.subject.subject.gm, None, opts)?;
            Ok(SubjectRecord {
                subject: c.subject.id.clone(),
                age: None,
                metrics,
            })
        })
        .collect()
}

/// Mean of every metric over records.
pub fn summarize(records: &[SubjectRecord]) -> Result<BTreeMap<String, f64>> {
    if records.is_empty() {
        return Err(Error::invalid("no records to summarize"));
    }
    let mut out = BTreeMap::new();
    for (k, name) in METRIC_NAMES.iter().enumerate() {
        let s: f64 = records.iter().map(|r| r.metrics.values()[k]).sum();
        out.insert(name.to_string(), s / records.len() as f64);
    }
    Ok(out)
}

/// CSV table: subject id, age, then the eight metrics.
pub fn records_csv(records: &[SubjectRecord]) -> String {
    let mut s = String::from("subject,age");
    for n in METRIC_NAMES {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for r in records {
        s.push_str(&csv_field(&r.subject));
        s.push(',');
        if let Some(a) = r.age {
            let _ = write!(s, "{a}");
        }
        for v in r.metrics.values() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn csv_field(x: &str) -> String {
    if x.contains([',', '"', '\n']) {
        format!("\"{}\"", x.replace('"', "\"\""))
    } else {
        x.to_string()
    }
}

/// Quadratic age fit of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    /// `(c0, c1, c2)` of `value = c0 + c1 age + c2 age^2`.
    pub coefficients: [f64; 3],
    pub ages: Vec<f64>,
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// Quadratic fit against age for every metric. Needs at least three
/// distinct ages; records without an age are an error.
pub fn cohort_trend(records: &[SubjectRecord]) -> Result<BTreeMap<String, TrendFit>> {
    let ages = records
        .iter()
        .map(|r| r.age.ok_or_else(|| Error::invalid(format!("subject {} has no age", r.subject))))
        .collect::<Result<Vec<f64>>>()?;
    let mut out = BTreeMap::new();
    for (k, name) in METRIC_NAMES.iter().enumerate() {
        let values: Vec<f64> = records.iter().map(|r| r.metrics.values()[k]).collect();
        let coefficients = fit_quadratic_trend(&ages, &values)?;
        let residuals = quadratic_residuals(&coefficients, &ages, &values);
        out.insert(
            name.to_string(),
            TrendFit {
                coefficients,
                ages: ages.clone(),
                values,
                residuals,
            },
        );
    }
    Ok(out)
}
