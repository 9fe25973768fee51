//! Phantom subject pools and the stream of synthetic training scans.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{CurvatureOptions, Surface, SurfaceTarget};
use crate::mesh::Mesh;
use crate::synth::{build_subject, generate, PhantomSpec, SubjectSample, SynthConfig};
use crate::volume::Volume;

/// SplitMix64 finalizer over two words; derives independent seeds from a
/// base seed and a counter.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Size and seed of the phantom suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_subjects: usize,
    pub validation_subjects: usize,
    /// Edge length of the cubic 1 mm grid.
    pub volume_size: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_subjects: 40,
            validation_subjects: 10,
            volume_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Validation => 2,
            Split::Test => 3,
        }
    }
}

/// Phantom `index` of a split: even indices are concentric spheres with
/// random radii, thickness and center, odd indices are perturbed blobs.
pub fn phantom_spec(seed: u64, split: Split, index: usize) -> PhantomSpec {
    let s = mix_seed(mix_seed(seed, split.tag()), index as u64);
    if index % 2 == 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let r_wm = rng.random_range(6.5..8.5);
        let r_gm = r_wm + rng.random_range(2.0..3.0);
        let center = [0; 3].map(|_: i32| rng.random_range(-1.0..1.0));
        PhantomSpec::TwoSphere { r_wm, r_gm, center }
    } else {
        PhantomSpec::Blob { seed: s }
    }
}

/// A phantom with its loss targets prepared.
#[derive(Debug, Clone)]
pub struct PreparedSubject {
    pub id: String,
    pub subject: SubjectSample,
    pub wm: SurfaceTarget,
    pub gm: SurfaceTarget,
}

impl PreparedSubject {
    /// Builds the subject on a cubic grid with ground-truth meshes in the
    /// topology of `template` and `n_samples` target samples per surface.
    pub fn new(
        id: String,
        spec: &PhantomSpec,
        template: &Mesh,
        volume_size: usize,
        n_samples: usize,
        seed: u64,
        curvature: &CurvatureOptions,
    ) -> Result<Self> {
        let subject = build_subject(spec, template, [volume_size; 3])?;
        let wm = SurfaceTarget::new(subject.wm.clone(), Surface::White, n_samples, mix_seed(seed, 1), curvature)?;
        let gm = SurfaceTarget::new(subject.gm.clone(), Surface::Gray, n_samples, mix_seed(seed, 2), curvature)?;
        Ok(PreparedSubject { id, subject, wm, gm })
    }
}

/// A held-out subject with one fixed synthetic scan.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub subject: PreparedSubject,
    pub image: Volume<f64>,
}

/// Training pool plus fixed validation scans.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<PreparedSubject>,
    pub validation: Vec<EvalCase>,
}

/// Builds `count` prepared subjects of one split in parallel.
pub fn prepare_split(
    data: &DataConfig,
    split: Split,
    count: usize,
    template: &Mesh,
    n_samples: usize,
    curvature: &CurvatureOptions,
) -> Result<Vec<PreparedSubject>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let spec = phantom_spec(data.seed, split, i);
            let id = format!("{}-{i:03}", split_name(split));
            let seed = mix_seed(mix_seed(data.seed, split.tag() + 16), i as u64);
            PreparedSubject::new(id, &spec, template, data.volume_size, n_samples, seed, curvature)
        })
        .collect()
}

/// Fixed scans for held-out subjects: scan `i` is synthesized with a seed
/// derived from the split seed, so evaluation is repeatable.
pub fn eval_cases(subjects: Vec<PreparedSubject>, synth: &SynthConfig, seed: u64) -> Result<Vec<EvalCase>> {
    subjects
        .into_par_iter()
        .enumerate()
        .map(|(i, subject)| {
            let image = generate(&subject.subject, synth, mix_seed(seed ^ 0xe7a1, i as u64))?.image;
            Ok(EvalCase { subject, image })
        })
        .collect()
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Validation => "val",
        Split::Test => "test",
    }
}

impl Dataset {
    /// The phantom suite for a model whose finest level is `template`.
    pub fn phantoms(
        data: &DataConfig,
        synth: &SynthConfig,
        template: &Mesh,
        n_samples: usize,
        curvature: &CurvatureOptions,
    ) -> Result<Self> {
        if data.train_subjects == 0 || data.validation_subjects == 0 {
            return Err(Error::invalid("training needs at least one train and one validation subject"));
        }
        let train = prepare_split(data, Split::Train, data.train_subjects, template, n_samples, curvature)?;
        let val = prepare_split(data, Split::Validation, data.validation_subjects, template, n_samples, curvature)?;
        let validation = eval_cases(val, synth, mix_seed(data.seed, Split::Validation.tag()))?;
        Ok(Dataset { train, validation })
    }
}

/// The scan used at one training iteration.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub iteration: u64,
    pub subject: usize,
    pub image: Volume<f64>,
}

/// Draws the subject and synthesizes its scan for `iteration`. Depends only
/// on `(seed, iteration)`, so a resumed run sees the same scans.
pub fn training_sample(train: &[PreparedSubject], synth: &SynthConfig, seed: u64, iteration: u64) -> Result<TrainingSample> {
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let s = mix_seed(seed ^ 0x7a11, iteration);
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    let subject = rng.random_range(0..train.len());
    let image = generate(&train[subject].subject, synth, rng.random())?.image;
    Ok(TrainingSample {
        iteration,
        subject,
        image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_template, subdivide};

    #[test]
    fn seeds_are_spread() {
        let a: Vec<u64> = (0..100).map(|i| mix_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_ne!(mix_seed(1, 0), mix_seed(0, 1));
    }

    #[test]
    fn splits_do_not_share_phantoms() {
        for i in 0..6 {
            assert_ne!(phantom_spec(0, Split::Train, i), phantom_spec(0, Split::Validation, i));
            assert_eq!(phantom_spec(3, Split::Test, i), phantom_spec(3, Split::Test, i));
        }
        assert!(matches!(phantom_spec(0, Split::Train, 0), PhantomSpec::TwoSphere { .. }));
        assert!(matches!(phantom_spec(0, Split::Train, 1), PhantomSpec::Blob { .. }));
    }

    #[test]
    fn samples_are_repeatable() {
        let mut t = build_template(62).unwrap();
        for _ in 0..2 {
            t = subdivide(&t).unwrap();
        }
        let data = DataConfig {
            volume_size: 32,
            ..Default::default()
        };
        let subjects = prepare_split(&data, Split::Train, 2, &t, 500, &CurvatureOptions::default()).unwrap();
        let synth = SynthConfig::default();
        let a = training_sample(&subjects, &synth, 5, 9).unwrap();
        let b = training_sample(&subjects, &synth, 5, 9).unwrap();
        assert_eq!(a.subject, b.subject);
        assert_eq!(a.image.data, b.image.data);
        assert!(a.image.is_one_mm());
        let c = training_sample(&subjects, &synth, 5, 10).unwrap();
        assert_ne!(a.image.data, c.image.data);
    }
}
