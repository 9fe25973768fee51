//! Domain-randomized synthetic scans.
//!
//! A scan is drawn from a [`SubjectSample`] by sampling per-label Gaussian
//! intensities, blending them across the cortex with a sigmoid partial-volume
//! model of the signed distances, smoothing, adding noise, and then applying
//! random gamma, bias field and acquisition resolution.

mod config;
pub mod filters;
mod kmeans;
mod phantom;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::volume::{apply_affine, invert_affine, sample_trilinear, spacing_of, Volume};

pub use config::SynthConfig;
pub use kmeans::{kmeans_1d, kmeans_labels, KMeans};
pub use phantom::{build_subject, phantom_meshes, PhantomSpec, SubjectSample, CSF_SHELL_MM};

use filters::{gaussian_blur, upsample_control_grid};

/// Label codes used in subject label maps.
pub mod labels {
    pub const WM: u8 = 1;
    pub const GM: u8 = 2;
    pub const CSF: u8 = 3;
    /// Non-brain tissue classes from k-means.
    pub const EXTRA_1: u8 = 4;
    pub const EXTRA_2: u8 = 5;
}

const CONTRAST_RETRIES: usize = 1000;

/// Sigmoid partial-volume fraction `1 / (1 + exp(-rho d))`.
pub fn pv_fraction(d: f64, rho: f64) -> f64 {
    1.0 / (1.0 + (-rho * d).exp())
}

/// WM, GM and CSF weights at a voxel with inside-positive signed distances.
pub fn pv_weights(d_wm: f64, d_gm: f64, rho: f64) -> [f64; 3] {
    let p_gm = pv_fraction(d_gm, rho);
    let w_wm = pv_fraction(d_wm, rho).min(p_gm);
    let w_gm = (p_gm - w_wm).clamp(0.0, 1.0);
    [w_wm, w_gm, 1.0 - p_gm]
}

/// Per-label intensity distribution, indexed by label code.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contrast {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

pub fn sample_contrast(config: &SynthConfig, labels_present: &[u8], seed: u64) -> Result<Contrast> {
    for l in [labels::WM, labels::GM, labels::CSF] {
        if !labels_present.contains(&l) {
            return Err(Error::invalid(format!("label {l} (WM/GM/CSF) missing from subject")));
        }
    }
    let n = *labels_present.iter().max().unwrap() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [m0, m1] = config.mean_range;
    let [s0, s1] = config.std_range;
    for _ in 0..CONTRAST_RETRIES {
        let mut means = vec![0.0; n];
        let mut stds = vec![0.0; n];
        for &l in labels_present {
            means[l as usize] = rng.random_range(m0..m1);
            stds[l as usize] = if s1 > s0 { rng.random_range(s0..s1) } else { s0 };
        }
        let (w, g, c) = (
            means[labels::WM as usize],
            means[labels::GM as usize],
            means[labels::CSF as usize],
        );
        let d = config.min_contrast;
        if (w - g).abs() >= d && (g - c).abs() >= d && (w - c).abs() >= d {
            return Ok(Contrast { means, stds });
        }
    }
    Err(Error::Infeasible(format!(
        "no contrast with pairwise gap {} in mean range {:?} after {CONTRAST_RETRIES} draws",
        config.min_contrast, config.mean_range
    )))
}

fn check_subject(s: &SubjectSample) -> Result<()> {
    if !s.labels.same_grid(&s.wm_sdf.volume) || !s.labels.same_grid(&s.gm_sdf.volume) {
        return Err(Error::ShapeMismatch("subject label and distance grids differ".into()));
    }
    Ok(())
}

/// Mean image, smoothed, plus label noise. `smoothing_std` is in voxels.
pub fn compose_image_with(
    subject: &SubjectSample,
    contrast: &Contrast,
    rho: f64,
    smoothing_std: f64,
    seed: u64,
) -> Result<Volume<f64>> {
    check_subject(subject)?;
    let lab = &subject.labels;
    if lab.data.iter().any(|&l| l as usize >= contrast.means.len()) {
        return Err(Error::invalid("label without a sampled contrast"));
    }
    let mut img = lab.map(|_| 0.0);
    let m = &contrast.means;
    for (i, v) in img.data.iter_mut().enumerate() {
        let l = lab.data[i];
        *v = if (labels::WM..=labels::CSF).contains(&l) {
            let w = pv_weights(subject.wm_sdf.volume.data[i], subject.gm_sdf.volume.data[i], rho);
            w[0] * m[labels::WM as usize] + w[1] * m[labels::GM as usize] + w[2] * m[labels::CSF as usize]
        } else {
            m[l as usize]
        };
    }
    let mut img = gaussian_blur(&img, [smoothing_std; 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    for (v, &l) in img.data.iter_mut().zip(&lab.data) {
        let z: f64 = unit.sample(&mut rng);
        *v += z * contrast.stds[l as usize];
    }
    Ok(img)
}

/// Draws the partial-volume steepness and smoothing width from `config`.
pub fn compose_image(subject: &SubjectSample, contrast: &Contrast, config: &SynthConfig, seed: u64) -> Result<Volume<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = uniform(&mut rng, config.pv_rho_range);
    let smooth = uniform(&mut rng, config.smoothing_std_range);
    compose_image_with(subject, contrast, rho, smooth, rng.random())
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// `((img - min) / (max - min))^gamma`, mapped back to `[min, max]`.
pub fn apply_gamma(img: &Volume<f64>, gamma: f64) -> Volume<f64> {
    let (lo, hi) = img.min_max();
    let range = hi - lo;
    if !(range > 0.0) {
        return img.clone();
    }
    img.map(|&v| lo + range * ((v - lo) / range).clamp(0.0, 1.0).powf(gamma))
}

/// Multiplies by `exp(B)` with `B` the trilinear upsampling of an `n^3`
/// control grid.
pub fn apply_bias_field_with(img: &Volume<f64>, controls: &[f64], n: usize) -> Result<Volume<f64>> {
    if controls.len() != n * n * n {
        return Err(Error::ShapeMismatch(format!("{} bias controls for a {n}^3 grid", controls.len())));
    }
    let log_field = upsample_control_grid(controls, n, img.dims);
    let mut out = img.clone();
    for (v, b) in out.data.iter_mut().zip(log_field) {
        *v *= b.exp();
    }
    Ok(out)
}

pub fn apply_bias_field(img: &Volume<f64>, config: &SynthConfig, seed: u64) -> Result<Volume<f64>> {
    let n = config.bias_grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, config.bias_log_std).map_err(|e| Error::invalid(e.to_string()))?;
    let controls: Vec<f64> = (0..n * n * n).map(|_| normal.sample(&mut rng)).collect();
    apply_bias_field_with(img, &controls, n)
}

/// 1 mm grid covering the same field of view as `affine`/`dims`, with the
/// same origin and axis directions.
fn one_mm_grid(dims: [usize; 3], affine: &crate::volume::Affine) -> ([usize; 3], crate::volume::Affine) {
    let sp = spacing_of(affine);
    let mut a = *affine;
    let mut d = [0usize; 3];
    for k in 0..3 {
        for r in 0..3 {
            a[r][k] = affine[r][k] / sp[k];
        }
        d[k] = (((dims[k] - 1) as f64 * sp[k]).round() as usize) + 1;
    }
    (d, a)
}

/// Trilinearly resamples to a 1 mm grid over the same field of view and
/// min-max normalizes to [0, 1].
pub fn conform(img: &Volume<f64>) -> Result<Volume<f64>> {
    if img.is_one_mm() {
        return Ok(img.min_max_normalized());
    }
    let (dims, affine) = one_mm_grid(img.dims, &img.affine);
    let to_src = crate::volume::compose(&invert_affine(&img.affine)?, &affine);
    let mut out = Volume {
        dims,
        affine,
        data: Vec::with_capacity(dims[0] * dims[1] * dims[2]),
    };
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = apply_affine(&to_src, [i as f64, j as f64, k as f64]);
                out.data.push(sample_trilinear(img, p));
            }
        }
    }
    Ok(out.min_max_normalized())
}

const FWHM_TO_STD: f64 = 2.354_820_045_030_949_4;

/// Simulates an acquisition at `spacing` (mm): Gaussian slice profile,
/// sampling on a coarse grid with a seeded sub-voxel offset, trilinear
/// resampling back to 1 mm, min-max normalization.
pub fn simulate_resolution(img: &Volume<f64>, spacing: [f64; 3], seed: u64) -> Result<Volume<f64>> {
    let native = img.spacing();
    for k in 0..3 {
        if !(spacing[k] >= native[k] - 1e-9) {
            return Err(Error::invalid(format!(
                "spacing {:?} finer than native {:?}",
                spacing, native
            )));
        }
    }
    if (0..3).all(|k| (spacing[k] - native[k]).abs() <= 1e-9) {
        return conform(img);
    }
    let mut sigma = [0.0; 3];
    let mut ratio = [1.0; 3];
    for k in 0..3 {
        let s = ((spacing[k] / FWHM_TO_STD).powi(2) - (native[k] / FWHM_TO_STD).powi(2)).max(0.0).sqrt();
        sigma[k] = s / native[k];
        ratio[k] = spacing[k] / native[k];
    }
    let blurred = gaussian_blur(img, sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offset = [0.0; 3];
    let mut low_dims = [0usize; 3];
    for k in 0..3 {
        let extent = (img.dims[k] - 1) as f64;
        offset[k] = if ratio[k] > 1.0 + 1e-9 {
            rng.random_range(0.0..ratio[k].min(extent.max(1e-9)))
        } else {
            0.0
        };
        low_dims[k] = ((extent - offset[k]) / ratio[k]).floor() as usize + 1;
    }
    let mut low = Volume {
        dims: low_dims,
        affine: crate::volume::IDENTITY,
        data: Vec::with_capacity(low_dims.iter().product()),
    };
    for k in 0..low_dims[2] {
        for j in 0..low_dims[1] {
            for i in 0..low_dims[0] {
                let p = [
                    offset[0] + i as f64 * ratio[0],
                    offset[1] + j as f64 * ratio[1],
                    offset[2] + k as f64 * ratio[2],
                ];
                low.data.push(sample_trilinear(&blurred, p));
            }
        }
    }
    let (dims, affine) = one_mm_grid(img.dims, &img.affine);
    let to_src = crate::volume::compose(&invert_affine(&img.affine)?, &affine);
    let mut out = Volume {
        dims,
        affine,
        data: Vec::with_capacity(dims[0] * dims[1] * dims[2]),
    };
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = apply_affine(&to_src, [i as f64, j as f64, k as f64]);
                let q = [
                    (p[0] - offset[0]) / ratio[0],
                    (p[1] - offset[1]) / ratio[1],
                    (p[2] - offset[2]) / ratio[2],
                ];
                out.data.push(sample_trilinear(&low, q));
            }
        }
    }
    Ok(out.min_max_normalized())
}

/// Random choices made by [`generate`], for logging and statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationRecord {
    pub seed: u64,
    pub contrast: Contrast,
    pub gamma: Option<f64>,
    pub bias: bool,
    pub spacing: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub image: Volume<f64>,
    pub wm: Mesh,
    pub gm: Mesh,
    pub record: GenerationRecord,
}

/// Draws a resolution from the menu: isotropic, or one random coarse axis.
pub fn sample_spacing(config: &SynthConfig, rng: &mut ChaCha8Rng) -> [f64; 3] {
    if rng.random::<f64>() < config.isotropic_probability {
        let s = uniform(rng, config.isotropic_spacing);
        [s; 3]
    } else {
        let axis = rng.random_range(0..3);
        let mut sp = [1.0; 3];
        sp[axis] = uniform(rng, config.anisotropic_spacing);
        sp
    }
}

/// Full pipeline from a subject to a normalized 1 mm scan; `seed` drives
/// every random choice.
pub fn generate(subject: &SubjectSample, config: &SynthConfig, seed: u64) -> Result<Generated> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let contrast = sample_contrast(config, &subject.label_set(), rng.random())?;
    let mut img = compose_image(subject, &contrast, config, rng.random())?;
    let gamma = if rng.random::<f64>() < config.gamma_probability {
        Some(uniform(&mut rng, config.gamma_log_range).exp())
    } else {
        None
    };
    if let Some(g) = gamma {
        img = apply_gamma(&img, g);
    }
    let bias = rng.random::<f64>() < config.bias_probability;
    let bias_seed: u64 = rng.random();
    if bias {
        img = apply_bias_field(&img, config, bias_seed)?;
    }
    let spacing = sample_spacing(config, &mut rng);
    let image = simulate_resolution(&img, spacing, rng.random())?;
    Ok(Generated {
        image,
        wm: subject.wm.clone(),
        gm: subject.gm.clone(),
        record: GenerationRecord {
            seed,
            contrast,
            gamma,
            bias,
            spacing,
        },
    })
}
