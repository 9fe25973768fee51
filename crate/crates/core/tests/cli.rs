//! End-to-end runs of the command-line binary.

use std::path::Path;
use std::process::{Command, Output};

use cortexflow::model::{save_checkpoint, Checkpoint, Model, ModelConfig};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cortexflow"));
    c.env_remove("CORTEXFLOW_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, seed: &str) -> Value {
    let prefix = dir.join(name);
    json_of(&run(&["synth", "--json", "--seed", seed, "--phantom", "two-sphere:r=8,10.5", "--out", p(&prefix)]))
}

#[test]
fn synth_is_repeatable_and_echoes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a", "5");
    synth(dir.path(), "b", "5");
    for ext in [".nii.gz", ".wm.ply", ".gm.ply", ".affine.txt"] {
        let x = std::fs::read(dir.path().join(format!("a{ext}"))).unwrap();
        let y = std::fs::read(dir.path().join(format!("b{ext}"))).unwrap();
        assert_eq!(x, y, "{ext}");
    }
    let cfg: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.config.json")).unwrap()).unwrap();
    assert_eq!(cfg["synth"]["gamma_probability"], 0.33);
    assert_eq!(cfg["synth"]["bias_probability"], 0.75);
    assert_eq!(cfg["synth"]["seed"], 5);
    let affine = std::fs::read_to_string(dir.path().join("a.affine.txt")).unwrap();
    let rows: Vec<Vec<f64>> = affine
        .lines()
        .map(|l| l.split_whitespace().map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.len() == 4));
    assert_eq!(rows[3], vec![0.0, 0.0, 0.0, 1.0]);
    let t = a["mean_thickness"].as_f64().unwrap();
    assert!((t - 2.5).abs() < 0.05, "thickness {t}");
}

#[test]
fn malformed_config_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"gamma_probability\": 0.3,\n  oops\n}").unwrap();
    let out = run(&["synth", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn missing_checkpoint_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "s", "1");
    let missing = dir.path().join("nope.ckpt");
    let out = run(&[
        "reconstruct",
        "--volume",
        p(&dir.path().join("s.nii.gz")),
        "--checkpoint",
        p(&missing),
        "--out",
        p(&dir.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(p(&missing)));
}

#[test]
fn reconstruct_writes_identical_genus_zero_meshes() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "s", "2");
    let ck = dir.path().join("m.ckpt");
    let mut model = Model::new(ModelConfig::desk(), 3).unwrap();
    model.params.round_to_f32();
    save_checkpoint(&ck, &Checkpoint::from_model(&model)).unwrap();
    let vol = dir.path().join("s.nii.gz");
    let mut outs = vec![];
    for name in ["r1", "r2"] {
        let v = json_of(&run(&[
            "reconstruct",
            "--json",
            "--reproducible",
            "--volume",
            p(&vol),
            "--checkpoint",
            p(&ck),
            "--out",
            p(&dir.path().join(name)),
        ]));
        assert_eq!(v["euler_characteristic"], 2);
        outs.push(name);
    }
    for ext in [".wm.ply", ".gm.ply"] {
        let a = std::fs::read(dir.path().join(format!("r1{ext}"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("r2{ext}"))).unwrap();
        assert_eq!(a, b);
        let m = cortexflow::mesh::io::read_mesh(dir.path().join(format!("r1{ext}"))).unwrap();
        assert_eq!(m.euler_characteristic(), 2);
        m.check_closed_manifold().unwrap();
    }
    let metrics = json_of(&run(&["metrics", "--json", "--mesh", p(&dir.path().join("r1.wm.ply"))]));
    assert_eq!(metrics["vertices"], 3842);
    assert_eq!(metrics["closed_manifold"], true);
}

#[test]
fn wrong_volume_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.nii");
    std::fs::write(&bad, b"not a nifti file").unwrap();
    let ck = dir.path().join("m.ckpt");
    save_checkpoint(&ck, &Checkpoint::from_model(&Model::new(ModelConfig::desk(), 0).unwrap())).unwrap();
    let out = run(&["reconstruct", "--volume", p(&bad), "--checkpoint", p(&ck), "--out", p(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn subdivide_six_levels() {
    let v = json_of(&run(&["subdivide", "--json", "--levels", "6"]));
    assert_eq!(v["vertices"], 245_762);
    assert_eq!(v["vertices_per_level"][3], 3842);
}

#[test]
fn eval_pair_and_cohort() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "s", "4");
    let (wm, gm) = (dir.path().join("s.wm.ply"), dir.path().join("s.gm.ply"));
    let records = dir.path().join("records.ndjson");
    for (i, age) in ["30", "50", "70"].iter().enumerate() {
        let v = json_of(&run(&[
            "eval",
            "--json",
            "--samples",
            "2000",
            "--pred-wm",
            p(&wm),
            "--pred-gm",
            p(&gm),
            "--gt-wm",
            p(&wm),
            "--gt-gm",
            p(&gm),
            "--subject",
            &format!("s{i}"),
            "--age",
            age,
            "--records",
            p(&records),
        ]));
        assert!(v["metrics"]["ssd_wm"].as_f64().unwrap() < 1e-9);
    }
    let csv = dir.path().join("table.csv");
    let trend = json_of(&run(&["eval", "--json", "--cohort", p(&records), "--csv", p(&csv)]));
    let c = &trend["mean_thickness"]["coefficients"];
    assert!(c[1].as_f64().unwrap().abs() < 1e-9);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 4);
}

#[test]
fn threads_from_environment_and_human_output() {
    let out = bin().env("CORTEXFLOW_THREADS", "1").args(["subdivide", "--levels", "1"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("vertices: 242"), "{text}");
    let bad = bin().env("CORTEXFLOW_THREADS", "0").args(["subdivide"]).output().unwrap();
    assert!(!bad.status.success());
}
