//! Configuration resolution (defaults, then the file, then `--set`) and the
//! mapping from errors to exit codes.

use std::fs;
use std::path::Path;

use anyhow::anyhow;
use hopfir::model::{parse_pairs, HopFirConfig, MODEL_KEYS};
use hopfir::skeleton::SkeletonGraph;
use hopfir::train::{TrainConfig, TRAIN_KEYS};
use hopfir::Error;

use crate::ConfigArgs;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_GRADCHECK: u8 = 4;

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(e: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_CONFIG, error: e.into() }
    }

    pub fn data(e: impl Into<anyhow::Error>) -> Self {
        Failure { code: EXIT_DATA, error: e.into() }
    }

    pub fn context(mut self, what: impl std::fmt::Display + Send + Sync + 'static) -> Self {
        self.error = self.error.context(what);
        self
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFinite(_) => EXIT_NUMERICAL,
            Error::Data(_) | Error::Format(_) | Error::Io { .. } | Error::RawIo(_) => EXIT_DATA,
            _ => EXIT_CONFIG,
        };
        Failure { code, error: e.into() }
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

/// Resolved model and training configuration.
#[derive(Debug, Clone)]
pub struct Settings {
    pub model: HopFirConfig,
    pub train: TrainConfig,
}

fn apply(settings: &mut Settings, key: &str, value: &str) -> CliResult {
    if settings.model.set(key, value)? || settings.train.set(key, value)? {
        Ok(())
    } else {
        Err(Failure::config(anyhow!(
            "unknown config key {key:?}; model keys: {}; training keys: {}",
            MODEL_KEYS.join(", "),
            TRAIN_KEYS.join(", ")
        )))
    }
}

/// Defaults, then the config file, then each `--set`, then `--seed`, which
/// sets both the model and the training seed.
pub fn resolve(args: &ConfigArgs) -> CliResult<Settings> {
    let mut s = Settings {
        model: HopFirConfig::default(),
        train: TrainConfig::default(),
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::config(anyhow!("cannot read config file {}: {e}", path.display())))?;
        for (k, v) in parse_pairs(&text)? {
            apply(&mut s, &k, &v).map_err(|f| f.context(format!("in {}", path.display())))?;
        }
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::config(anyhow!("--set expects KEY=VALUE, got {kv:?}")))?;
        apply(&mut s, k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        s.model.seed = seed;
        s.train.seed = seed;
    }
    s.model.validate()?;
    s.train.validate()?;
    Ok(s)
}

pub fn load_skeleton(path: Option<&Path>, hops: usize) -> CliResult<SkeletonGraph> {
    match path {
        None => Ok(SkeletonGraph::human36m(hops)),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::config(anyhow!("cannot read skeleton file {}: {e}", p.display())))?;
            Ok(SkeletonGraph::parse(&text, hops).map_err(|e| Failure::config(e).context(p.display().to_string()))?)
        }
    }
}

/// Keys whose values differ between two model configurations.
pub fn differing_keys(a: &HopFirConfig, b: &HopFirConfig) -> Vec<String> {
    MODEL_KEYS
        .iter()
        .filter(|k| a.value_of(k) != b.value_of(k))
        .map(|k| format!("{k} ({} vs {})", a.value_of(k).unwrap_or_default(), b.value_of(k).unwrap_or_default()))
        .collect()
}
