use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use cortexflow::eval::{cohort_trend, evaluate_pair, records_csv, EvalOptions, SubjectRecord};
use cortexflow::geometry::{hausdorff_percentile, mean_curvature, mean_thickness, symmetric_surface_distance};
use cortexflow::mesh::io::{read_mesh, write_mesh};
use cortexflow::mesh::{build_template, count_self_intersecting_faces, subdivide};
use cortexflow::model::{load_checkpoint, ModelConfig, TemplateHierarchy};
use cortexflow::nifti::{read_volume, write_volume, DataType};
use cortexflow::synth::{build_subject, conform, generate, PhantomSpec, SynthConfig};
use cortexflow::train::{run_training, Dataset, RunOptions, TrainConfig};
use cortexflow::volume::parse_affine;

#[derive(Parser)]
#[command(name = "cortexflow", version, about = "Cortical surface reconstruction by template deformation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Random seed (overrides the seed in a config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration file for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Architecture profile.
    #[arg(long, global = true, value_parser = ["desk", "full"])]
    profile: Option<String>,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads.
    #[arg(long, global = true, env = "CORTEXFLOW_THREADS")]
    threads: Option<usize>,
    /// Deterministic reductions (all kernels reduce in a fixed order, so
    /// this only pins the thread count to 1 when none is given).
    #[arg(long, global = true)]
    reproducible: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a phantom scan with its ground-truth surfaces.
    Synth {
        /// Phantom, e.g. "two-sphere:r=8,10.5" or "blob:seed=3".
        #[arg(long, default_value = "two-sphere:r=8,10.5")]
        phantom: String,
        /// Grid edge length in voxels (1 mm).
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Template level of the ground-truth meshes (default: profile's finest).
        #[arg(long)]
        level: Option<u32>,
        /// Output prefix; writes .nii.gz, .wm.ply, .gm.ply, .config.json and .affine.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the phantom suite.
    Train {
        /// Output directory for checkpoints and the progress log.
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from (weights, optimizer and plateau state).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the configured iteration cap.
        #[arg(long)]
        max_iterations: Option<u64>,
    },
    /// Reconstruct WM and GM surfaces from a scan.
    Reconstruct {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// 4x4 template-to-scanner affine (text, four rows).
        #[arg(long)]
        affine: Option<PathBuf>,
        /// Output prefix; writes <prefix>.wm.ply and <prefix>.gm.ply.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted surfaces against ground truth, or fit age trends.
    Eval(EvalArgs),
    /// Subdivide a mesh (default: the template) a number of times.
    Subdivide {
        /// Mesh to subdivide instead of the template.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 62)]
        template_vertices: usize,
        #[arg(long, default_value_t = 1)]
        levels: u32,
        /// Where to write the result (PLY or OFF by extension).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Geometric summary of a mesh, optionally against a reference.
    Metrics {
        /// Mesh to summarize.
        #[arg(long)]
        mesh: PathBuf,
        /// Reference surface for distance metrics.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Outer surface paired with --mesh for thickness.
        #[arg(long)]
        gm: Option<PathBuf>,
        /// Surface samples for distance metrics.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted WM surface (needs the other three surfaces too).
    #[arg(long, requires_all = ["pred_gm", "gt_wm", "gt_gm"], conflicts_with = "cohort")]
    pred_wm: Option<PathBuf>,
    #[arg(long)]
    pred_gm: Option<PathBuf>,
    /// Ground-truth WM surface, in the same topology as the prediction.
    #[arg(long)]
    gt_wm: Option<PathBuf>,
    #[arg(long)]
    gt_gm: Option<PathBuf>,
    /// Per-vertex mask, one 0/1 per line (1 = include).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Surface samples for distance metrics.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Subject identifier stored in the record.
    #[arg(long, default_value = "subject")]
    subject: String,
    /// Age in years, needed for cohort trends.
    #[arg(long)]
    age: Option<f64>,
    /// Append the record to this newline-delimited JSON file.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Fit age trends over the records in this newline-delimited JSON file.
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// Write a CSV table of the records.
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// An input file that does not exist; reported with exit code 2.
#[derive(Debug)]
struct MissingInput(PathBuf);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "no such file: {}", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(MissingInput(path.to_path_buf()).into())
    }
}

fn read_text(path: &Path) -> Result<String> {
    require(path)?;
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Prints `value` as JSON, or each top-level field as `key: value`.
fn emit(json_mode: bool, value: &Value) {
    if json_mode {
        println!("{value}");
        return;
    }
    match value.as_object() {
        Some(map) => {
            for (k, v) in map {
                match v {
                    Value::String(s) => println!("{k}: {s}"),
                    v => println!("{k}: {v}"),
                }
            }
        }
        None => println!("{value}"),
    }
}

fn model_config(g: &Global) -> Result<ModelConfig> {
    Ok(ModelConfig::from_profile(g.profile.as_deref().unwrap_or("desk"))?)
}

fn cmd_synth(g: &Global, phantom: &str, size: usize, level: Option<u32>, out: &Path) -> Result<Value> {
    let mut config = match &g.config {
        Some(p) => SynthConfig::from_json(&read_text(p)?).with_context(|| format!("config {}", p.display()))?,
        None => SynthConfig::default(),
    };
    if let Some(s) = g.seed {
        config.seed = s;
    }
    config.validate()?;
    let spec: PhantomSpec = phantom.parse()?;
    let mut mc = model_config(g)?;
    if let Some(l) = level {
        mc.max_level = l;
    }
    let template = TemplateHierarchy::new(&mc)?;
    let subject = build_subject(&spec, &template.hierarchy.meshes[mc.max_level as usize], [size; 3])?;
    let generated = generate(&subject, &config, config.seed)?;

    let paths = [".nii.gz", ".wm.ply", ".gm.ply", ".config.json", ".affine.txt"].map(|s| with_suffix(out, s));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_volume(&generated.image, &paths[0], DataType::F32)?;
    write_mesh(&generated.wm, &paths[1])?;
    write_mesh(&generated.gm, &paths[2])?;
    let resolved = json!({
        "synth": config,
        "phantom": spec,
        "size": size,
        "level": mc.max_level,
        "generation": generated.record,
    });
    std::fs::write(&paths[3], serde_json::to_string_pretty(&resolved)? + "\n")
        .with_context(|| format!("writing {}", paths[3].display()))?;
    // Template placement for `reconstruct --affine`.
    let affine = subject.template_affine(mc.template_radius)?;
    let rows: Vec<String> = affine.iter().map(|r| r.map(|x| x.to_string()).join(" ")).collect();
    std::fs::write(&paths[4], rows.join("\n") + "\n").with_context(|| format!("writing {}", paths[4].display()))?;
    Ok(json!({
        "volume": paths[0],
        "wm": paths[1],
        "gm": paths[2],
        "config": paths[3],
        "affine": paths[4],
        "mean_thickness": mean_thickness(&generated.wm, &generated.gm),
        "gamma": generated.record.gamma,
        "bias": generated.record.bias,
        "spacing": generated.record.spacing,
    }))
}

fn cmd_train(g: &Global, out: &Path, resume: Option<&Path>, max_iterations: Option<u64>) -> Result<Value> {
    let mut config = match &g.config {
        Some(p) => TrainConfig::from_json(&read_text(p)?).with_context(|| format!("config {}", p.display()))?,
        None => TrainConfig::desk(),
    };
    if let Some(s) = g.seed {
        config.seed = s;
    }
    if let Some(p) = &g.profile {
        config.profile = p.clone();
    }
    if let Some(n) = max_iterations {
        config.max_iterations = n;
    }
    config.validate()?;
    if let Some(r) = resume {
        require(r)?;
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("train_config.json"), serde_json::to_string_pretty(&config)? + "\n")?;

    let mc = config.model_config()?;
    let template = TemplateHierarchy::new(&mc)?;
    let finest = &template.hierarchy.meshes[mc.max_level as usize];
    let data = Dataset::phantoms(&config.data, &config.synth, finest, config.n_samples, &config.curvature)?;

    let log_path = out.join("train.ndjson");
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    let mut opts = RunOptions::new(out);
    opts.resume = resume.map(Path::to_path_buf);
    opts.log = Some(&mut log);
    opts.init_seed = config.seed;
    let outcome = run_training(&config, &data, opts)?;
    log.flush()?;
    let mut v = serde_json::to_value(&outcome)?;
    v["log"] = json!(log_path);
    Ok(v)
}

fn cmd_reconstruct(volume: &Path, checkpoint: &Path, affine: Option<&Path>, out: &Path) -> Result<Value> {
    require(checkpoint)?;
    require(volume)?;
    let img = read_volume(volume).with_context(|| format!("reading {}", volume.display()))?;
    let img = conform(&img)?;
    let affine = match affine {
        Some(p) => parse_affine(&read_text(p)?)?,
        None => cortexflow::model::IDENTITY,
    };
    let model = load_checkpoint(checkpoint)
        .and_then(|ck| ck.into_model())
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let (wm, gm) = model.reconstruct(&img, &affine)?;
    let (pw, pg) = (with_suffix(out, ".wm.ply"), with_suffix(out, ".gm.ply"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_mesh(&wm, &pw)?;
    write_mesh(&gm, &pg)?;
    Ok(json!({
        "wm": pw,
        "gm": pg,
        "vertices": wm.n_vertices(),
        "faces": wm.n_faces(),
        "euler_characteristic": wm.euler_characteristic(),
    }))
}

fn read_mask(path: &Path) -> Result<Vec<bool>> {
    read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| match l {
            "1" => Ok(true),
            "0" => Ok(false),
            other => bail!("mask entries must be 0 or 1, got {other:?}"),
        })
        .collect()
}

fn read_records(path: &Path) -> Result<Vec<SubjectRecord>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn cmd_eval(a: &EvalArgs) -> Result<Value> {
    if let Some(c) = &a.cohort {
        let records = read_records(c)?;
        if let Some(csv) = &a.csv {
            std::fs::write(csv, records_csv(&records))?;
        }
        return Ok(serde_json::to_value(cohort_trend(&records)?)?);
    }
    let (Some(pw), Some(pg), Some(gw), Some(gg)) = (&a.pred_wm, &a.pred_gm, &a.gt_wm, &a.gt_gm) else {
        bail!("eval needs --pred-wm, --pred-gm, --gt-wm and --gt-gm, or --cohort");
    };
    let load = |p: &PathBuf| -> Result<_> {
        require(p)?;
        read_mesh(p).with_context(|| format!("reading {}", p.display()))
    };
    let mask = a.mask.as_deref().map(read_mask).transpose()?;
    let opts = EvalOptions {
        n_samples: a.samples,
        ..Default::default()
    };
    let metrics = evaluate_pair(&load(pw)?, &load(pg)?, &load(gw)?, &load(gg)?, mask.as_deref(), &opts)?;
    let record = SubjectRecord {
        subject: a.subject.clone(),
        age: a.age,
        metrics,
    };
    if let Some(r) = &a.records {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(r)?;
        writeln!(f, "{}", serde_json::to_string(&record)?)?;
    }
    if let Some(csv) = &a.csv {
        std::fs::write(csv, records_csv(std::slice::from_ref(&record)))?;
    }
    Ok(serde_json::to_value(record)?)
}

fn cmd_subdivide(input: Option<&Path>, template_vertices: usize, levels: u32, out: Option<&Path>) -> Result<Value> {
    let mut m = match input {
        Some(p) => {
            require(p)?;
            read_mesh(p)?
        }
        None => build_template(template_vertices)?,
    };
    let mut counts = vec![m.n_vertices()];
    for _ in 0..levels {
        m = subdivide(&m)?;
        counts.push(m.n_vertices());
    }
    if let Some(p) = out {
        write_mesh(&m, p)?;
    }
    Ok(json!({
        "vertices": m.n_vertices(),
        "faces": m.n_faces(),
        "vertices_per_level": counts,
        "euler_characteristic": m.euler_characteristic(),
    }))
}

fn cmd_metrics(mesh: &Path, reference: Option<&Path>, gm: Option<&Path>, samples: usize) -> Result<Value> {
    require(mesh)?;
    let m = read_mesh(mesh)?;
    let h = mean_curvature(&m)?;
    let mut v = json!({
        "vertices": m.n_vertices(),
        "faces": m.n_faces(),
        "euler_characteristic": m.euler_characteristic(),
        "closed_manifold": m.check_closed_manifold().is_ok(),
        "sif_fraction": count_self_intersecting_faces(&m),
        "mean_curvature": h.iter().sum::<f64>() / h.len().max(1) as f64,
    });
    if let Some(r) = reference {
        require(r)?;
        let r = read_mesh(r)?;
        v["symmetric_distance"] = json!(symmetric_surface_distance(&m, &r, samples)?);
        v["hausdorff_p90"] = json!(hausdorff_percentile(&m, &r, 90.0, samples)?);
    }
    if let Some(g) = gm {
        require(g)?;
        v["mean_thickness"] = json!(mean_thickness(&m, &read_mesh(g)?));
    }
    Ok(v)
}

fn run(cli: Cli) -> Result<Value> {
    let g = &cli.global;
    let threads = g.threads.or(g.reproducible.then_some(1));
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Synth { phantom, size, level, out } => cmd_synth(g, phantom, *size, *level, out),
        Command::Train {
            out,
            resume,
            max_iterations,
        } => cmd_train(g, out, resume.as_deref(), *max_iterations),
        Command::Reconstruct {
            volume,
            checkpoint,
            affine,
            out,
        } => cmd_reconstruct(volume, checkpoint, affine.as_deref(), out),
        Command::Eval(a) => cmd_eval(a),
        Command::Subdivide {
            input,
            template_vertices,
            levels,
            out,
        } => cmd_subdivide(input.as_deref(), *template_vertices, *levels, out.as_deref()),
        Command::Metrics {
            mesh,
            reference,
            gm,
            samples,
        } => cmd_metrics(mesh, reference.as_deref(), gm.as_deref(), *samples),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_mode = cli.global.json;
    match run(cli) {
        Ok(v) => {
            emit(json_mode, &v);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = if e.downcast_ref::<MissingInput>().is_some() { 2 } else { 1 };
            if json_mode {
                println!("{}", json!({"error": format!("{e:#}")}));
            }
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
