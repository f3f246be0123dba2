//! The subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::anyhow;
use hopfir::data::{load_dataset, save_dataset, synth_dataset, DataFormat, Dataset};
use hopfir::export::{heatmap_ppm, write_attention_csv, AttentionMap};
use hopfir::gradsuite::{gradient_suite, SuiteOptions};
use hopfir::metrics::{EvalReport, Protocol};
use hopfir::model::{HopFirModel, MODEL_KEYS};
use hopfir::skeleton::SkeletonGraph;
use hopfir::train::{
    evaluate, load_checkpoint, predict_all, read_checkpoint_header, CheckpointHeader, TrainState, Trainer, TRAIN_KEYS,
};
use hopfir::Real;
use serde_json::{json, Map, Value};

use crate::settings::{differing_keys, load_skeleton, resolve, CliResult, Failure, Settings, EXIT_GRADCHECK};
use crate::ConfigArgs;

/// Factor applied to analytic gradients by `--corrupt-backward`.
const CORRUPTION: f64 = 1.5;

pub struct TrainArgs {
    pub cfg: ConfigArgs,
    pub out: PathBuf,
    pub f64: bool,
    pub data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub synth: Option<usize>,
    pub synth_eval: Option<usize>,
    pub resume: Option<PathBuf>,
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Failure::data(anyhow!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, bytes).map_err(|e| Failure::data(anyhow!("cannot write {}: {e}", path.display())))
}

fn load(path: &Path, skeleton: &SkeletonGraph) -> CliResult<Dataset> {
    Ok(load_dataset(path, DataFormat::from_path(path), skeleton)?)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn git_describe() -> String {
    process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn key_map(keys: &[&str], value_of: impl Fn(&str) -> Option<String>) -> Value {
    let map: Map<String, Value> = keys
        .iter()
        .map(|k| (k.to_string(), Value::String(value_of(k).unwrap_or_default())))
        .collect();
    Value::Object(map)
}

pub fn train(args: &TrainArgs) -> CliResult {
    let settings = resolve(&args.cfg)?;
    let skeleton = load_skeleton(args.cfg.skeleton.as_deref(), settings.model.hops)?;
    let (train_data, train_source) = match (&args.data, args.synth) {
        (Some(p), _) => (load(p, &skeleton)?, p.display().to_string()),
        (None, Some(n)) => (synth_dataset(n, settings.train.seed, &skeleton)?, format!("synthetic:{n}")),
        (None, None) => return Err(Failure::data(anyhow!("no training data; pass --data PATH or --synth N"))),
    };
    let (eval_data, eval_source) = match (&args.eval_data, args.synth_eval) {
        (Some(p), _) => (Some(load(p, &skeleton)?), Some(p.display().to_string())),
        (None, Some(n)) => {
            // a disjoint synthetic draw: the first samples of the stream are the training set
            let all = synth_dataset(args.synth.unwrap_or(0) + n, settings.train.seed, &skeleton)?;
            let (_, eval) = all.split_at(args.synth.unwrap_or(0));
            (Some(eval), Some(format!("synthetic:{n}")))
        }
        (None, None) => (None, None),
    };
    create_dir(&args.out)?;
    let precision = if args.f64 { "f64" } else { "f32" };
    let manifest = json!({
        "command": "train",
        "version": env!("CARGO_PKG_VERSION"),
        "git": git_describe(),
        "started_unix": unix_now(),
        "out_dir": args.out.display().to_string(),
        "precision": precision,
        "seed": settings.train.seed,
        "model": key_map(MODEL_KEYS, |k| settings.model.value_of(k)),
        "train": key_map(TRAIN_KEYS, |k| settings.train.value_of(k)),
        "train_data": train_source,
        "eval_data": eval_source,
        "resume": args.resume.as_ref().map(|p| p.display().to_string()),
        "skeleton": skeleton.to_text(),
    });
    write_file(&args.out.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("json"))?;
    let config_text = format!("{}{}", settings.model.to_text(), settings.train.to_text());
    write_file(&args.out.join("config.txt"), config_text)?;
    if args.f64 {
        run_train::<f64>(args, &settings, &skeleton, &train_data, eval_data.as_ref())
    } else {
        run_train::<f32>(args, &settings, &skeleton, &train_data, eval_data.as_ref())
    }
}

fn run_train<T: Real>(
    args: &TrainArgs,
    settings: &Settings,
    skeleton: &SkeletonGraph,
    train: &Dataset,
    eval: Option<&Dataset>,
) -> CliResult {
    let mut state = match &args.resume {
        Some(path) => {
            let (state, header) = load_checkpoint::<T>(path).map_err(|e| Failure::from(e).context(path.display().to_string()))?;
            let diff = differing_keys(&header.model_config()?, &settings.model);
            if !diff.is_empty() {
                return Err(Failure::config(anyhow!(
                    "checkpoint {} was trained with a different model config: {}",
                    path.display(),
                    diff.join(", ")
                )));
            }
            state
        }
        None => TrainState::new(HopFirModel::<T>::build(&settings.model, skeleton)?),
    };
    println!(
        "training {} parameters ({}) on {} samples",
        state.model.num_parameters(),
        T::NAME,
        train.len()
    );
    let trainer = Trainer::new(settings.train.clone()).with_output(&args.out);
    let report = trainer.run(&mut state, train, eval)?;
    for r in &report.epochs {
        let eval = r.eval_mpjpe_mm.map_or(String::new(), |e| format!(" eval MPJPE {e:.2}mm"));
        println!("epoch {:>4} step {:>7} lr {:.3e} loss {:.5}{eval}", r.epoch, r.step, r.lr, r.train_loss);
    }
    if let Some(best) = state.best_mpjpe_mm {
        println!("best eval MPJPE {best:.2}mm");
    }
    Ok(())
}

fn check_expected(header: &CheckpointHeader, cfg: &ConfigArgs) -> CliResult {
    if cfg.config.is_none() && cfg.set.is_empty() && cfg.seed.is_none() {
        return Ok(());
    }
    let expected = resolve(cfg)?.model;
    let diff = differing_keys(&header.model_config()?, &expected);
    if diff.is_empty() {
        Ok(())
    } else {
        Err(Failure::config(anyhow!("checkpoint and config differ in: {}", diff.join(", "))))
    }
}

fn print_report(r: &EvalReport) {
    println!("{:<14} {:>10}", "metric", "value");
    println!("{:<14} {:>10.3}", "MPJPE (mm)", r.mpjpe_mm);
    if let Some(p) = r.p_mpjpe_mm {
        println!("{:<14} {:>10.3}", "P-MPJPE (mm)", p);
    }
    if let Some(p) = r.pck_150 {
        println!("{:<14} {:>10.4}", "PCK@150mm", p);
    }
    if let Some(a) = r.auc {
        println!("{:<14} {:>10.4}", "AUC", a);
    }
    for (action, e) in r.per_action.iter().flatten() {
        println!("  {action:<12} {e:>10.3}");
    }
}

/// Run `f` with the checkpoint loaded at its stored precision.
macro_rules! with_checkpoint {
    ($path:expr, |$state:ident| $body:expr) => {{
        let header = read_checkpoint_header($path).map_err(|e| Failure::from(e).context($path.display().to_string()))?;
        match header.precision.as_str() {
            "f64" => {
                let ($state, _) = load_checkpoint::<f64>($path)?;
                $body
            }
            _ => {
                let ($state, _) = load_checkpoint::<f32>($path)?;
                $body
            }
        }
    }};
}

pub fn eval(checkpoint: &Path, data: &Path, protocol: &str, out: &Path, cfg: &ConfigArgs) -> CliResult {
    let protocol: Protocol = protocol.parse()?;
    let header = read_checkpoint_header(checkpoint).map_err(|e| Failure::from(e).context(checkpoint.display().to_string()))?;
    check_expected(&header, cfg)?;
    let report = with_checkpoint!(checkpoint, |state| {
        let d = load(data, &state.model.skeleton)?;
        evaluate(&state.model, &d, protocol, 256)?
    });
    create_dir(out)?;
    write_file(&out.join("report.json"), report.to_json())?;
    print_report(&report);
    Ok(())
}

pub fn infer(checkpoint: &Path, data: &Path, out: &Path) -> CliResult {
    let (pred, joints) = with_checkpoint!(checkpoint, |state| {
        let d = load(data, &state.model.skeleton)?;
        (predict_all(&state.model, &d, 256)?, d.joints)
    });
    let mut csv = String::from("sample");
    for j in 0..joints {
        let _ = write!(csv, ",j{j}x,j{j}y,j{j}z");
    }
    csv.push('\n');
    for (i, pose) in pred.chunks(joints * 3).enumerate() {
        let _ = write!(csv, "{i}");
        for v in pose {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    create_dir(out)?;
    write_file(&out.join("predictions.csv"), csv)?;
    println!("wrote {} predictions to {}", pred.len() / (joints * 3).max(1), out.display());
    Ok(())
}

pub fn gradcheck(cfg: &ConfigArgs, seeds: u64, coords: usize, corrupt: bool) -> CliResult {
    let settings = resolve(cfg)?;
    let skeleton = load_skeleton(cfg.skeleton.as_deref(), settings.model.hops)?;
    let first = settings.model.seed;
    let opts = SuiteOptions {
        seeds: (first..first + seeds.max(1)).collect(),
        coords,
        corrupt: corrupt.then_some(CORRUPTION),
        ..Default::default()
    };
    let checks = gradient_suite(&settings.model, &skeleton, &opts)?;
    println!("{:<16} {:>12} {:>8}  status", "layer", "max rel err", "coords");
    let mut failures = Vec::new();
    let mut layers: Vec<&str> = Vec::new();
    for c in &checks {
        if !layers.contains(&c.layer.as_str()) {
            layers.push(&c.layer);
        }
    }
    for layer in layers {
        let of_layer: Vec<_> = checks.iter().filter(|c| c.layer == layer).collect();
        let worst = of_layer
            .iter()
            .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
            .expect("at least one seed");
        let passed = of_layer.iter().all(|c| c.report.passed);
        let coords = of_layer.iter().map(|c| c.report.checked).min().unwrap_or(0);
        println!(
            "{layer:<16} {:>12.3e} {coords:>8}  {}",
            worst.report.max_rel_error,
            if passed { "ok" } else { "FAIL" }
        );
        if !passed {
            let at = worst
                .report
                .worst
                .map_or("non-finite output".to_string(), |(input, coord)| format!("input {input}, coordinate {coord}"));
            failures.push(format!("{layer} (seed {}, {at})", worst.seed));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_GRADCHECK,
            error: anyhow!("gradient check failed: {}", failures.join("; ")),
        })
    }
}

pub fn inspect_attention(checkpoint: &Path, data: &Path, sample: usize, out: &Path, cell: usize) -> CliResult {
    let maps = with_checkpoint!(checkpoint, |state| {
        let d = load(data, &state.model.skeleton)?;
        if sample >= d.len() {
            return Err(Failure::data(anyhow!("sample {sample} out of range for {} samples", d.len())));
        }
        let (x, _) = d.batch(&[sample])?;
        let (_, attn) = state.model.predict_with_attention(&x)?;
        let n = d.joints;
        attn.into_iter()
            .map(|(label, t)| AttentionMap::new(label, n, t.data().iter().map(|v| v.to_f64_lossy()).collect()))
            .collect::<hopfir::Result<Vec<_>>>()?
    });
    if maps.is_empty() {
        return Err(Failure::config(anyhow!("the model has no hop-attention layers")));
    }
    create_dir(out)?;
    write_file(&out.join("attention.csv"), write_attention_csv(&maps)?)?;
    for m in &maps {
        write_file(&out.join(format!("{}.ppm", m.label)), heatmap_ppm(m, cell))?;
    }
    println!("wrote {} attention maps to {}", maps.len(), out.display());
    Ok(())
}

pub fn synth_data(count: usize, seed: u64, out: &Path, skeleton: Option<&Path>) -> CliResult {
    let g = load_skeleton(skeleton, 1)?;
    let d = synth_dataset(count, seed, &g)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_dataset(out, DataFormat::from_path(out), &d)?;
    println!("wrote {count} samples to {}", out.display());
    Ok(())
}
