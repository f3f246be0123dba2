//! Optimizer, schedules, the epoch loop, evaluation and checkpoints.

mod adam;
mod checkpoint;
mod config;

pub use adam::{clip_grad_norm, Adam, BETA1, BETA2, EPSILON};
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, read_checkpoint_header, save_checkpoint, state_from_bytes, CheckpointHeader,
    TrainState, CHECKPOINT_MAGIC,
};
pub use config::{Regime, TrainConfig, TRAIN_KEYS};

use std::fs::{self, File};
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::Ctx;
use crate::metrics::{pose_loss, EvalReport, Protocol};
use crate::model::HopFirModel;
use crate::rng::{stream, Stream};
use crate::scalar::Real;
use crate::tensor::Tape;

/// Environment variable capping evaluation worker threads.
pub const THREADS_ENV: &str = "HOPFIR_THREADS";

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub lr: f64,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    pub eval_mpjpe_mm: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// Runs epochs and, with an output directory, writes `log.jsonl`,
/// `last.ckpt` and `best.ckpt` (lowest evaluation MPJPE).
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub out_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Self {
        Trainer { config, out_dir: None }
    }

    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    /// Continue from `state.epoch` up to `config.epochs`. Evaluation uses
    /// `eval` when given.
    pub fn run<T: Real>(&self, state: &mut TrainState<T>, train: &Dataset, eval: Option<&Dataset>) -> Result<TrainReport> {
        let cfg = &self.config;
        cfg.validate()?;
        if train.is_empty() && state.epoch < cfg.epochs {
            return Err(Error::Data("training split is empty".into()));
        }
        state.adam.weight_decay = cfg.weight_decay;
        let mut log = match &self.out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("log.jsonl");
                let f = File::options()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                Some((f, path))
            }
            None => None,
        };
        let mut report = TrainReport::default();
        let mut indices: Vec<usize> = (0..train.len()).collect();
        while state.epoch < cfg.epochs {
            if cfg.max_steps > 0 && state.adam.step >= cfg.max_steps as u64 {
                break;
            }
            let epoch = state.epoch;
            let lr = cfg.lr_at(epoch);
            indices.sort_unstable();
            indices.shuffle(&mut stream(cfg.seed, Stream::Shuffle, epoch as u64));
            let mut loss_sum = 0.0;
            let mut batches = 0usize;
            for (b, chunk) in indices.chunks(cfg.batch_size).enumerate() {
                if cfg.max_steps > 0 && state.adam.step >= cfg.max_steps as u64 {
                    break;
                }
                let loss = train_step(state, train, chunk, cfg, lr)
                    .map_err(|e| match e {
                        Error::NonFinite(what) => Error::NonFinite(format!("{what} (epoch {epoch}, batch {b})")),
                        other => other,
                    })?;
                loss_sum += loss;
                batches += 1;
                report.step_losses.push(loss);
            }
            state.epoch += 1;
            let last = state.epoch == cfg.epochs
                || (cfg.max_steps > 0 && state.adam.step >= cfg.max_steps as u64);
            let due = if cfg.eval_every == 0 { last } else { state.epoch.is_multiple_of(cfg.eval_every) || last };
            let eval_mpjpe_mm = match eval {
                Some(d) if due && !d.is_empty() => Some(evaluate(&state.model, d, Protocol::P1, cfg.batch_size)?.mpjpe_mm),
                _ => None,
            };
            let improved = matches!((eval_mpjpe_mm, state.best_mpjpe_mm), (Some(e), None) if e.is_finite())
                || matches!((eval_mpjpe_mm, state.best_mpjpe_mm), (Some(e), Some(best)) if e < best);
            if improved {
                state.best_mpjpe_mm = eval_mpjpe_mm;
            }
            let record = EpochRecord {
                epoch,
                step: state.adam.step,
                lr,
                train_loss: loss_sum / batches.max(1) as f64,
                eval_mpjpe_mm,
            };
            if let (Some((f, path)), Some(dir)) = (log.as_mut(), &self.out_dir) {
                let line = serde_json::to_string(&record).map_err(|e| Error::Format(e.to_string()))?;
                writeln!(f, "{line}").map_err(|e| Error::io(&*path, e))?;
                save_checkpoint(&dir.join("last.ckpt"), state, Some(cfg))?;
                if improved {
                    save_checkpoint(&dir.join("best.ckpt"), state, Some(cfg))?;
                }
            }
            report.epochs.push(record);
        }
        Ok(report)
    }
}

/// One forward/backward/update on the given sample indices; returns the loss.
pub fn train_step<T: Real>(
    state: &mut TrainState<T>,
    data: &Dataset,
    batch: &[usize],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let (x, y) = data.batch::<T>(batch)?;
    let (loss, mut grads) = {
        let tape = Tape::new();
        let cx = Ctx::new(&tape, &state.model.params).training(stream(cfg.seed, Stream::Dropout, state.adam.step));
        let pred = state.model.forward(&cx, tape.constant(x))?;
        let loss = pose_loss(&tape, pred, tape.constant(y), cfg.loss_alpha, cfg.loss_beta)?;
        let value = tape.value(loss).item()?.to_f64_lossy();
        if !value.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        tape.backward(loss)?;
        (value, cx.param_grads(&state.model.params))
    };
    if cfg.clip_norm > 0.0 {
        clip_grad_norm(&mut grads, cfg.clip_norm);
    }
    state.adam.step(&mut state.model.params, &grads, lr)?;
    Ok(loss)
}

/// `HOPFIR_THREADS` when set and positive, else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Eval-mode predictions for every sample, sample-major `N × 3` meters.
/// Batches are sharded across worker threads.
pub fn predict_all<T: Real>(model: &HopFirModel<T>, data: &Dataset, batch_size: usize) -> Result<Vec<f64>> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let batches: Vec<&[usize]> = indices.chunks(batch_size.max(1)).collect();
    let threads = worker_threads().min(batches.len()).max(1);
    let run = |shard: &[&[usize]]| -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for b in shard {
            let (x, _) = data.batch::<T>(b)?;
            out.extend(model.predict(&x)?.data().iter().map(|v| v.to_f64_lossy()));
        }
        Ok(out)
    };
    if threads == 1 {
        return run(&batches);
    }
    let per = batches.len().div_ceil(threads);
    let parts: Vec<Result<Vec<f64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = batches.chunks(per).map(|shard| s.spawn(move || run(shard))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("predict", "worker thread panicked"))))
            .collect()
    });
    let mut out = Vec::with_capacity(data.len() * data.joints * 3);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn evaluate<T: Real>(model: &HopFirModel<T>, data: &Dataset, protocol: Protocol, batch_size: usize) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let pred = predict_all(model, data, batch_size)?;
    let actions = data.actions();
    EvalReport::compute(&pred, &data.targets(), data.joints, Some(&actions), protocol)
}
