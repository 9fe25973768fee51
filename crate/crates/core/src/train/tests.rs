use std::sync::OnceLock;

use super::*;
use crate::model::IDENTITY;
use crate::synth::{generate, PhantomSpec};

fn small_config() -> TrainConfig {
    TrainConfig {
        max_iterations: 6,
        validation_interval: 3,
        n_samples: 600,
        log_interval: 1,
        data: DataConfig {
            train_subjects: 2,
            validation_subjects: 1,
            ..Default::default()
        },
        ..TrainConfig::desk()
    }
}

fn template(level: usize) -> crate::mesh::Mesh {
    let m = Model::new(ModelConfig::desk(), 0).unwrap();
    m.template.hierarchy.meshes[level].clone()
}

fn dataset() -> &'static Dataset {
    static D: OnceLock<Dataset> = OnceLock::new();
    D.get_or_init(|| {
        let c = small_config();
        Dataset::phantoms(&c.data, &c.synth, &template(3), c.n_samples, &c.curvature).unwrap()
    })
}

/// One two-sphere phantom with a fixed scan.
fn sphere_case() -> &'static (PreparedSubject, Volume<f64>) {
    static S: OnceLock<(PreparedSubject, Volume<f64>)> = OnceLock::new();
    S.get_or_init(|| {
        let spec = PhantomSpec::two_sphere(7.0, 9.5);
        let s = PreparedSubject::new("sphere".into(), &spec, &template(3), 32, 2000, 1, &CurvatureOptions::default()).unwrap();
        let img = generate(&s.subject, &crate::synth::SynthConfig::default(), 4).unwrap().image;
        (s, img)
    })
}

fn batch<'a>(s: &'a (PreparedSubject, Volume<f64>)) -> Batch<'a> {
    Batch {
        image: &s.1,
        affine: &IDENTITY,
        wm: &s.0.wm,
        gm: &s.0.gm,
        sample_seed: 3,
    }
}

#[test]
fn learning_rate_endpoints() {
    let c = TrainConfig::desk();
    assert_eq!(c.lr_at(0), 1e-4);
    assert_eq!(c.lr_at(c.max_iterations), 5e-5);
    assert!((c.lr_at(2500) - 7.5e-5).abs() < 1e-18);
    let s = TrainConfig {
        lr_decay: LrDecay::Step { at: 0.5 },
        ..c
    };
    assert_eq!(s.lr_at(2499), 1e-4);
    assert_eq!(s.lr_at(2500), 5e-5);
}

#[test]
fn config_validation() {
    let mut c = TrainConfig::desk();
    c.lr_final = 2e-4;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::desk();
    c.patience = 0;
    assert!(c.validate().is_err());
    assert!(TrainConfig::from_json(r#"{"patience": 3}"#).unwrap().patience == 3);
    assert!(TrainConfig::from_json(r#"{"patiense": 3}"#).is_err());
    assert_eq!(TrainConfig::from_json("{}").unwrap(), TrainConfig::desk());
}

#[test]
fn plateau_rule() {
    let mut v = ValidationState::default();
    assert_eq!(v.record(0, 10.0, f64::INFINITY, 1), Verdict::Improved);
    assert_eq!(v.record(5, 1.0, f64::INFINITY, 1), Verdict::Stop);
    assert_eq!(v.best, Some((5, 1.0)));

    let mut v = ValidationState::default();
    v.record(0, 10.0, 0.5, 2);
    assert_eq!(v.record(1, 9.0, 0.5, 2), Verdict::Improved);
    // Better, but not by min_delta: new best, still a stall.
    assert_eq!(v.record(2, 8.8, 0.5, 2), Verdict::Improved);
    assert_eq!(v.stalled, 1);
    assert_eq!(v.record(3, 8.9, 0.5, 2), Verdict::Stop);
    assert_eq!(v.best, Some((2, 8.8)));
}

#[test]
fn report_lists_every_term_for_both_surfaces() {
    let s = sphere_case();
    let m = Model::new(ModelConfig::desk(), 0).unwrap();
    let w = LossSchedule::default().weights_at(0);
    let (total, wm, gm) = evaluate_losses(&m, &batch(s), &w, 500).unwrap();
    let r = LossReport {
        iteration: 0,
        lr: 1e-4,
        total,
        wm,
        gm,
    };
    let keys: Vec<String> = r.terms().into_keys().collect();
    let mut want = vec![];
    for s in ["gm", "wm"] {
        for k in ["chamfer", "curvature", "edge", "matched", "spring"] {
            want.push(format!("{s}.{k}"));
        }
    }
    assert_eq!(keys, want);
    assert!((total - (wm.weighted(&w) + gm.weighted(&w))).abs() < 1e-9 * total.abs().max(1.0));
}

#[test]
fn matched_only_weights_give_matched_total() {
    let s = sphere_case();
    let m = Model::new(ModelConfig::desk(), 0).unwrap();
    let (total, wm, gm) = evaluate_losses(&m, &batch(s), &LossWeights::only_matched(1.0), 500).unwrap();
    assert_eq!(total, wm.matched + gm.matched);
}

#[test]
fn identical_state_gives_identical_reports() {
    let s = sphere_case();
    let w = LossSchedule::default().weights_at(0);
    let run = || {
        let mut m = Model::new(ModelConfig::desk(), 2).unwrap();
        m.params.round_to_f32();
        let mut opt = OptimizerState::zeros(&m.params);
        let mut out = vec![];
        for i in 0..2 {
            out.push(train_step(&mut m, &mut opt, &batch(s), &w, &AdamW::default(), i, 500).unwrap());
        }
        (out, m.params)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}

#[test]
fn matched_loss_decreases_from_identity() {
    let s = sphere_case();
    let mut m = Model::new(ModelConfig::desk(), 1).unwrap();
    m.params.round_to_f32();
    let mut opt = OptimizerState::zeros(&m.params);
    let w = LossWeights::only_matched(1.0);
    let hp = TrainConfig::desk().optimizer(0);
    let mut prev = f64::INFINITY;
    for i in 0..50 {
        let r = train_step(&mut m, &mut opt, &batch(s), &w, &hp, i, 200).unwrap();
        let matched = r.wm.matched + r.gm.matched;
        assert!(matched < prev, "iteration {i}: {matched} >= {prev}");
        prev = matched;
    }
}

#[test]
fn nan_parameter_aborts_with_diagnostic() {
    let s = sphere_case();
    let mut m = Model::new(ModelConfig::desk(), 0).unwrap();
    let i = m.params.position("gray.l2.b").unwrap();
    m.params.tensors_mut()[i].data[0] = f64::NAN;
    let mut opt = OptimizerState::zeros(&m.params);
    let w = LossSchedule::default().weights_at(0);
    let err = train_step(&mut m, &mut opt, &batch(s), &w, &AdamW::default(), 7, 300).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert!(err.to_string().contains("iteration 7"), "{err}");
}

#[test]
fn stops_at_first_validation_without_progress() {
    let dir = tempfile::tempdir().unwrap();
    let c = TrainConfig {
        patience: 1,
        min_delta: f64::INFINITY,
        validation_interval: 2,
        max_iterations: 20,
        ..small_config()
    };
    let out = run_training(&c, dataset(), RunOptions::new(dir.path())).unwrap();
    assert_eq!(out.stop, StopReason::Plateau);
    assert_eq!(out.iterations, 2);
    assert!(out.best_checkpoint.exists() && out.last_checkpoint.exists());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let c = small_config();
    let full_dir = tempfile::tempdir().unwrap();
    let mut log = Vec::new();
    let mut opts = RunOptions::new(full_dir.path());
    opts.log = Some(&mut log);
    let full = run_training(&c, dataset(), opts).unwrap();
    assert_eq!(full.stop, StopReason::MaxIterations);
    assert_eq!(full.iterations, 6);

    let dir = tempfile::tempdir().unwrap();
    let mut opts = RunOptions::new(dir.path());
    opts.halt_at = Some(4);
    let half = run_training(&c, dataset(), opts).unwrap();
    assert_eq!(half.stop, StopReason::Halted);
    let mut opts = RunOptions::new(dir.path());
    opts.resume = Some(half.last_checkpoint.clone());
    let resumed = run_training(&c, dataset(), opts).unwrap();

    let a = load_checkpoint(&full.last_checkpoint).unwrap();
    let b = load_checkpoint(&resumed.last_checkpoint).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.optimizer, b.optimizer);
    assert_eq!(full.validation, resumed.validation);

    let best = full.validation.best.unwrap().1;
    assert!(best <= full.final_validation().unwrap());
    let lines: Vec<serde_json::Value> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.iter().filter(|r| r.get("validation_chamfer").is_some()).count(), 3);
    assert!(lines.iter().any(|r| r["wm"]["chamfer"].is_number() && r["lr"].is_number()));
}

#[test]
fn resume_rejects_other_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    let mut cfg = ModelConfig::desk();
    cfg.gcn_channels = 4;
    let mut ck = Checkpoint::from_model(&Model::new(cfg, 0).unwrap());
    ck.optimizer = Some(OptimizerState::zeros(&ck.params));
    ck.state = checkpoint_state(&small_config(), &ValidationState::default()).unwrap();
    save_checkpoint(&path, &ck).unwrap();
    let mut opts = RunOptions::new(dir.path());
    opts.resume = Some(path);
    assert!(run_training(&small_config(), dataset(), opts).is_err());
}
