//! The optimization loop: scheduled losses on freshly synthesized scans,
//! AdamW updates with a decaying learning rate, periodic validation with
//! plateau stopping, and resumable checkpoints.

mod data;
mod optim;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::losses::{surface_loss, CurvatureOptions, LossSchedule, LossWeights, SurfaceTarget, TermValues};
use crate::mesh::sample_surface;
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, Model, ModelConfig, OptimizerState};
use crate::nn::{Tape, Var};
use crate::synth::SynthConfig;
use crate::volume::{Affine, Volume};

pub use data::{
    eval_cases, mix_seed, phantom_spec, prepare_split, training_sample, DataConfig, Dataset, EvalCase, PreparedSubject,
    Split, TrainingSample,
};
pub use optim::{adamw_step, AdamW};

/// How the learning rate moves from its initial to its final value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LrDecay {
    /// Straight line over the whole run.
    Linear,
    /// Initial value until `at` (fraction of the run), final value after.
    Step { at: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub profile: String,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub lr_decay: LrDecay,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub max_iterations: u64,
    pub validation_interval: u64,
    /// Validations without sufficient improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    /// Points sampled per surface for the chamfer and curvature terms.
    pub n_samples: usize,
    /// Loss weight ramps; by default they end a quarter into the run.
    pub schedule: Option<LossSchedule>,
    pub curvature: CurvatureOptions,
    pub synth: SynthConfig,
    pub data: DataConfig,
    /// Progress records are written every this many iterations.
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Phantom-scale run: 32³ scans, levels 0..3.
    pub fn desk() -> Self {
        TrainConfig {
            profile: "desk".into(),
            lr_initial: 1e-4,
            lr_final: 5e-5,
            lr_decay: LrDecay::Linear,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            max_iterations: 5000,
            validation_interval: 500,
            patience: 5,
            min_delta: 1e-4,
            seed: 0,
            n_samples: 10_000,
            schedule: None,
            curvature: CurvatureOptions::default(),
            synth: SynthConfig::default(),
            data: DataConfig::default(),
            log_interval: 10,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: TrainConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::from_profile(&self.profile)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_initial > 0.0 && self.lr_final > 0.0 && self.lr_final <= self.lr_initial) {
            return Err(Error::invalid("learning rates must satisfy 0 < lr_final <= lr_initial"));
        }
        if let LrDecay::Step { at } = self.lr_decay {
            if !(0.0..=1.0).contains(&at) {
                return Err(Error::invalid("step decay point must be a fraction of the run"));
            }
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return Err(Error::invalid("betas must be in [0, 1) and eps positive"));
        }
        if !(self.weight_decay >= 0.0) || !(self.min_delta >= 0.0) {
            return Err(Error::invalid("weight decay and min_delta must be non-negative"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if self.validation_interval == 0 || self.log_interval == 0 || self.n_samples == 0 {
            return Err(Error::invalid("intervals and sample counts must be positive"));
        }
        self.schedule().validate()?;
        self.synth.validate()?;
        self.model_config()?;
        Ok(())
    }

    pub fn schedule(&self) -> LossSchedule {
        self.schedule.clone().unwrap_or_else(|| LossSchedule::for_run(self.max_iterations))
    }

    /// Learning rate used at `iteration`.
    pub fn lr_at(&self, iteration: u64) -> f64 {
        let frac = if self.max_iterations == 0 {
            1.0
        } else {
            (iteration as f64 / self.max_iterations as f64).min(1.0)
        };
        match self.lr_decay {
            LrDecay::Linear => self.lr_initial + (self.lr_final - self.lr_initial) * frac,
            LrDecay::Step { at } if frac < at => self.lr_initial,
            LrDecay::Step { .. } => self.lr_final,
        }
    }

    pub fn optimizer(&self, iteration: u64) -> AdamW {
        AdamW {
            lr: self.lr_at(iteration),
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One scan with its targets.
#[derive(Clone, Copy)]
pub struct Batch<'a> {
    pub image: &'a Volume<f64>,
    pub affine: &'a Affine,
    pub wm: &'a SurfaceTarget,
    pub gm: &'a SurfaceTarget,
    /// Seeds the points sampled on the predicted surfaces.
    pub sample_seed: u64,
}

/// Loss terms of one step, per surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: u64,
    pub lr: f64,
    pub total: f64,
    pub wm: TermValues,
    pub gm: TermValues,
}

impl LossReport {
    /// `"wm.chamfer"`, `"gm.edge"`, ... for all ten terms.
    pub fn terms(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (s, v) in [("wm", &self.wm), ("gm", &self.gm)] {
            for (k, x) in [
                ("chamfer", v.chamfer),
                ("matched", v.matched),
                ("curvature", v.curvature),
                ("spring", v.spring),
                ("edge", v.edge),
            ] {
                out.insert(format!("{s}.{k}"), x);
            }
        }
        out
    }
}

/// Total loss node plus the per-term values.
pub struct LossGraph {
    pub total: Var,
    pub wm: TermValues,
    pub gm: TermValues,
}

/// Forward pass and both surface losses with weights `w`.
pub fn build_losses(model: &Model, tape: &mut Tape, p: &crate::model::Bound, batch: &Batch, w: &LossWeights, n_samples: usize) -> Result<LossGraph> {
    let r = model.forward(tape, p, batch.image, batch.affine)?;
    let level = model.config.max_level as usize;
    let topo = model.template.topologies[level].clone();
    let mut terms = Vec::with_capacity(2);
    for (k, (v, target)) in [(r.white(), batch.wm), (r.gray, batch.gm)].into_iter().enumerate() {
        let mesh = model.mesh_from(tape, v, level)?;
        let samples = sample_surface(&mesh, n_samples, mix_seed(batch.sample_seed, k as u64))?;
        terms.push(surface_loss(tape, v, &topo, &samples, target, w)?);
    }
    let total = tape.add(terms[0].total, terms[1].total)?;
    Ok(LossGraph {
        total,
        wm: terms[0].values,
        gm: terms[1].values,
    })
}

/// Forward, reverse pass and one AdamW update. Parameters and moments are
/// rounded to `f32` afterwards so the in-memory state equals what a
/// checkpoint stores.
pub fn train_step(
    model: &mut Model,
    opt: &mut OptimizerState,
    batch: &Batch,
    weights: &LossWeights,
    hp: &AdamW,
    iteration: u64,
    n_samples: usize,
) -> Result<LossReport> {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape);
    let g = build_losses(model, &mut tape, &p, batch, weights, n_samples).map_err(|e| match e {
        Error::NonFinite(what) => Error::NonFinite(format!(
            "{what} in the forward pass at iteration {iteration} (sample seed {})",
            batch.sample_seed
        )),
        e => e,
    })?;
    let total = tape.data(g.total)[0];
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss at iteration {iteration} (sample seed {}): wm {:?}, gm {:?}",
            batch.sample_seed, g.wm, g.gm
        )));
    }
    let mut grads = tape.backward(g.total)?;
    let grads: Vec<Vec<f64>> = p
        .vars
        .iter()
        .zip(model.params.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    drop(tape);
    adamw_step(&mut model.params, &grads, opt, hp).map_err(|e| match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} at iteration {iteration}")),
        e => e,
    })?;
    model.params.round_to_f32();
    opt.round_to_f32();
    Ok(LossReport {
        iteration,
        lr: hp.lr,
        total,
        wm: g.wm,
        gm: g.gm,
    })
}

/// Loss values without an update.
pub fn evaluate_losses(model: &Model, batch: &Batch, weights: &LossWeights, n_samples: usize) -> Result<(f64, TermValues, TermValues)> {
    let mut tape = Tape::inference();
    let p = model.params.bind(&mut tape);
    let g = build_losses(model, &mut tape, &p, batch, weights, n_samples)?;
    Ok((tape.data(g.total)[0], g.wm, g.gm))
}

/// Mean over cases of the average WM and GM chamfer loss.
pub fn validation_chamfer(model: &Model, cases: &[EvalCase], n_samples: usize) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::invalid("empty validation set"));
    }
    let w = LossWeights {
        chamfer: 1.0,
        matched: 0.0,
        curvature: 0.0,
        spring: 0.0,
        edge: 0.0,
    };
    let per_case = cases
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let affine = c.subject.subject.template_affine(model.config.template_radius)?;
            let batch = Batch {
                image: &c.image,
                affine: &affine,
                wm: &c.subject.wm,
                gm: &c.subject.gm,
                sample_seed: mix_seed(0x7a1d, i as u64),
            };
            let (_, wm, gm) = evaluate_losses(model, &batch, &w, n_samples)?;
            Ok(0.5 * (wm.chamfer + gm.chamfer))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_case.iter().sum::<f64>() / per_case.len() as f64)
}

/// Plateau bookkeeping carried across checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationState {
    /// `(iteration, mean validation chamfer)` of every validation so far.
    pub history: Vec<(u64, f64)>,
    /// Lowest value so far; the best checkpoint holds these parameters.
    pub best: Option<(u64, f64)>,
    /// Value that the next validation must beat by `min_delta`.
    pub reference: Option<f64>,
    /// Consecutive validations without such an improvement.
    pub stalled: usize,
}

/// What to do after a validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// New lowest value; the best checkpoint should be rewritten.
    Improved,
    Continue,
    Stop,
}

impl ValidationState {
    /// Records a validation. The first one sets the baseline; afterwards a
    /// value counts as progress only when it beats the reference by more
    /// than `min_delta`.
    pub fn record(&mut self, iteration: u64, value: f64, min_delta: f64, patience: usize) -> Verdict {
        self.history.push((iteration, value));
        let new_best = self.best.is_none_or(|(_, b)| value < b);
        if new_best {
            self.best = Some((iteration, value));
        }
        match self.reference {
            None => self.reference = Some(value),
            Some(r) if value < r - min_delta => {
                self.reference = Some(value);
                self.stalled = 0;
            }
            Some(_) => self.stalled += 1,
        }
        if self.stalled >= patience {
            Verdict::Stop
        } else if new_best {
            Verdict::Improved
        } else {
            Verdict::Continue
        }
    }

    pub fn last_validated(&self) -> Option<u64> {
        self.history.last().map(|&(i, _)| i)
    }
}

/// Where a run keeps its files and how it reports progress.
pub struct RunOptions<'a> {
    pub out_dir: PathBuf,
    /// Continue from this checkpoint (written by an earlier run).
    pub resume: Option<PathBuf>,
    /// Save `last.ckpt` and return when this iteration is reached.
    pub halt_at: Option<u64>,
    /// Newline-delimited JSON progress records.
    pub log: Option<&'a mut dyn Write>,
    /// Initialization seed of a fresh model.
    pub init_seed: u64,
}

impl RunOptions<'_> {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions {
            out_dir: out_dir.into(),
            resume: None,
            halt_at: None,
            log: None,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Plateau,
    MaxIterations,
    Halted,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    /// Iterations completed.
    pub iterations: u64,
    pub stop: StopReason,
    pub validation: ValidationState,
    pub wall_seconds: f64,
}

impl TrainOutcome {
    pub fn initial_validation(&self) -> Option<f64> {
        self.validation.history.first().map(|&(_, v)| v)
    }

    pub fn final_validation(&self) -> Option<f64> {
        self.validation.history.last().map(|&(_, v)| v)
    }
}

fn write_record(log: &mut Option<&mut dyn Write>, value: serde_json::Value) -> Result<()> {
    if let Some(w) = log.as_mut() {
        writeln!(w, "{value}").map_err(|e| Error::io("training log", e))?;
    }
    Ok(())
}

fn checkpoint_state(config: &TrainConfig, v: &ValidationState) -> Result<serde_json::Value> {
    // Floats go through their bit patterns so resuming restores them exactly.
    let bits = |x: f64| format!("{:016x}", x.to_bits());
    Ok(json!({
        "train_config": serde_json::to_value(config)?,
        "history": v.history.iter().map(|&(i, x)| json!([i, bits(x)])).collect::<Vec<_>>(),
        "best": v.best.map(|(i, x)| json!([i, bits(x)])),
        "reference": v.reference.map(bits),
        "stalled": v.stalled,
    }))
}

fn restore_state(state: &serde_json::Value) -> Result<ValidationState> {
    let bad = || Error::invalid("checkpoint has no usable training state");
    let float = |v: &serde_json::Value| -> Result<f64> {
        let s = v.as_str().ok_or_else(bad)?;
        Ok(f64::from_bits(u64::from_str_radix(s, 16).map_err(|_| bad())?))
    };
    let pair = |v: &serde_json::Value| -> Result<(u64, f64)> {
        let a = v.as_array().filter(|a| a.len() == 2).ok_or_else(bad)?;
        Ok((a[0].as_u64().ok_or_else(bad)?, float(&a[1])?))
    };
    let history = state["history"].as_array().ok_or_else(bad)?.iter().map(pair).collect::<Result<_>>()?;
    let best = match &state["best"] {
        serde_json::Value::Null => None,
        v => Some(pair(v)?),
    };
    let reference = match &state["reference"] {
        serde_json::Value::Null => None,
        v => Some(float(v)?),
    };
    let stalled = state["stalled"].as_u64().ok_or_else(bad)? as usize;
    Ok(ValidationState {
        history,
        best,
        reference,
        stalled,
    })
}

/// Trains on `data` until the validation chamfer plateaus or
/// `max_iterations` is reached. Writes `best.ckpt` (lowest validation
/// chamfer) and `last.ckpt` (resumable state) into `opts.out_dir`.
///
/// Scans are synthesized by a producer thread one step ahead of the
/// optimizer; each scan depends only on the seed and the iteration.
pub fn run_training(config: &TrainConfig, data: &Dataset, opts: RunOptions) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::invalid("training needs non-empty train and validation sets"));
    }
    let RunOptions {
        out_dir,
        resume,
        halt_at,
        mut log,
        init_seed,
    } = opts;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let best_path = out_dir.join("best.ckpt");
    let last_path = out_dir.join("last.ckpt");

    let (mut model, mut opt, mut vstate, start) = match &resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let vs = restore_state(&ck.state)?;
            let opt = ck.optimizer.clone().ok_or_else(|| Error::invalid(format!("{} has no optimizer state", path.display())))?;
            let it = ck.iteration;
            (ck.into_model()?, opt, vs, it)
        }
        None => {
            let mut m = Model::new(config.model_config()?, init_seed)?;
            m.params.round_to_f32();
            let opt = OptimizerState::zeros(&m.params);
            (m, opt, ValidationState::default(), 0)
        }
    };
    if model.config != config.model_config()? {
        return Err(Error::ShapeMismatch(format!("checkpoint architecture differs from profile {}", config.profile)));
    }

    let schedule = config.schedule();
    let clock = Instant::now();
    let save = |model: &Model, opt: &OptimizerState, vs: &ValidationState, it: u64, path: &Path| -> Result<()> {
        let mut ck = Checkpoint::from_model(model);
        ck.iteration = it;
        ck.optimizer = Some(opt.clone());
        ck.state = checkpoint_state(config, vs)?;
        save_checkpoint(path, &ck)
    };

    let end = config.max_iterations;
    let mut stop = StopReason::MaxIterations;
    let mut i = start;
    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::sync_channel::<Result<TrainingSample>>(2);
        let train = &data.train;
        let synth = &config.synth;
        let seed = config.seed;
        let last = halt_at.unwrap_or(end).min(end);
        scope.spawn(move || {
            for it in start..last {
                if tx.send(training_sample(train, synth, seed, it)).is_err() {
                    break;
                }
            }
        });
        loop {
            if halt_at == Some(i) && i < end {
                save(&model, &opt, &vstate, i, &last_path)?;
                stop = StopReason::Halted;
                return Ok(());
            }
            let due = i % config.validation_interval == 0 || i == end;
            if due && vstate.last_validated() != Some(i) {
                let v = validation_chamfer(&model, &data.validation, config.n_samples)?;
                let verdict = vstate.record(i, v, config.min_delta, config.patience);
                write_record(
                    &mut log,
                    json!({"iteration": i, "validation_chamfer": v, "stalled": vstate.stalled,
                           "wall_time": clock.elapsed().as_secs_f64()}),
                )?;
                if verdict == Verdict::Improved || !best_path.exists() {
                    save(&model, &opt, &vstate, i, &best_path)?;
                }
                save(&model, &opt, &vstate, i, &last_path)?;
                if verdict == Verdict::Stop {
                    stop = StopReason::Plateau;
                    return Ok(());
                }
            }
            if i >= end {
                return Ok(());
            }
            let sample = rx
                .recv()
                .map_err(|_| Error::invalid("sample producer stopped early"))??;
            debug_assert_eq!(sample.iteration, i);
            let subject = &data.train[sample.subject];
            let affine = subject.subject.template_affine(model.config.template_radius)?;
            let batch = Batch {
                image: &sample.image,
                affine: &affine,
                wm: &subject.wm,
                gm: &subject.gm,
                sample_seed: mix_seed(config.seed ^ 0x5a3b, i),
            };
            let report = train_step(
                &mut model,
                &mut opt,
                &batch,
                &schedule.weights_at(i),
                &config.optimizer(i),
                i,
                config.n_samples,
            )?;
            if i % config.log_interval == 0 {
                let mut rec = serde_json::to_value(&report)?;
                rec["wall_time"] = json!(clock.elapsed().as_secs_f64());
                rec["subject"] = json!(subject.id);
                write_record(&mut log, rec)?;
            }
            i += 1;
        }
    })?;
    if stop != StopReason::Halted && !last_path.exists() {
        save(&model, &opt, &vstate, i, &last_path)?;
    }
    Ok(TrainOutcome {
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        iterations: i,
        stop,
        validation: vstate,
        wall_seconds: clock.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests;
