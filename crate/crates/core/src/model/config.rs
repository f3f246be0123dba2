//! Model hyperparameters and the line-based `key = value` config format.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{ActivationKind, HaVariant, ReductionSchedule};

/// Which building blocks fill the block slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleMode {
    /// Vanilla GCN modules, no attention, no refinement.
    GcnOnly,
    /// HopGCN modules, no attention, no refinement.
    HopGcnOnly,
    /// HopGCN modules plus refinement.
    HopGcnIjr,
    /// Full HGF modules, no refinement.
    HopGcnHgf,
    Full,
}

impl ModuleMode {
    pub fn uses_hgf(self) -> bool {
        matches!(self, ModuleMode::HopGcnHgf | ModuleMode::Full)
    }

    pub fn uses_ijr(self) -> bool {
        matches!(self, ModuleMode::HopGcnIjr | ModuleMode::Full)
    }
}

impl FromStr for ModuleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn_only" => Ok(ModuleMode::GcnOnly),
            "hopgcn_only" => Ok(ModuleMode::HopGcnOnly),
            "hopgcn_ijr" => Ok(ModuleMode::HopGcnIjr),
            "hopgcn_hgf" => Ok(ModuleMode::HopGcnHgf),
            "full" => Ok(ModuleMode::Full),
            other => Err(Error::Config(format!("unknown module mode {other:?}"))),
        }
    }
}

impl fmt::Display for ModuleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModuleMode::GcnOnly => "gcn_only",
            ModuleMode::HopGcnOnly => "hopgcn_only",
            ModuleMode::HopGcnIjr => "hopgcn_ijr",
            ModuleMode::HopGcnHgf => "hopgcn_hgf",
            ModuleMode::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopFirConfig {
    pub channels: usize,
    pub hops: usize,
    pub blocks: usize,
    /// Module slots of one block, over `H` (graph module) and `I` (refinement).
    pub arrangement: String,
    pub ha_variant: HaVariant,
    pub with_projection: bool,
    pub heads: usize,
    pub dropout: f64,
    pub activation: ActivationKind,
    pub module_mode: ModuleMode,
    pub reduction: ReductionSchedule,
    /// Width of the per-sample global feature is `channels / global_divisor`.
    pub global_divisor: usize,
    /// Add a squashed learnable graph to every hop matrix and normalize.
    pub learnable_graph: bool,
    pub seed: u64,
}

impl Default for HopFirConfig {
    fn default() -> Self {
        HopFirConfig {
            channels: 128,
            hops: 3,
            blocks: 3,
            arrangement: "HHI".into(),
            ha_variant: HaVariant::Hss,
            with_projection: false,
            heads: 4,
            dropout: 0.5,
            activation: ActivationKind::PRelu,
            module_mode: ModuleMode::Full,
            reduction: ReductionSchedule::default(),
            global_divisor: 2,
            learnable_graph: true,
            seed: 0,
        }
    }
}

/// Canonical key order of [`HopFirConfig::to_text`].
pub const MODEL_KEYS: &[&str] = &[
    "channels",
    "hops",
    "blocks",
    "arrangement",
    "ha_variant",
    "with_projection",
    "heads",
    "dropout",
    "activation",
    "module_mode",
    "reduction",
    "global_divisor",
    "learnable_graph",
    "seed",
];

/// Split config text into `(key, value)` pairs, dropping blank lines and
/// `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl HopFirConfig {
    /// Apply one setting. Returns `false` when the key is not a model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "channels" => self.channels = parse_value(key, value)?,
            "hops" => self.hops = parse_value(key, value)?,
            "blocks" => self.blocks = parse_value(key, value)?,
            "arrangement" => self.arrangement = value.to_ascii_uppercase(),
            "ha_variant" => self.ha_variant = value.parse()?,
            "with_projection" => self.with_projection = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "activation" => self.activation = value.parse()?,
            "module_mode" => self.module_mode = value.parse()?,
            "reduction" => self.reduction = value.parse()?,
            "global_divisor" => self.global_divisor = parse_value(key, value)?,
            "learnable_graph" => self.learnable_graph = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parse a model-only config; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = HopFirConfig::default();
        for (k, v) in parse_pairs(text)? {
            if !c.set(&k, &v)? {
                return Err(Error::Config(format!("unknown config key {k:?}")));
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn value_of(&self, key: &str) -> Option<String> {
        Some(match key {
            "channels" => self.channels.to_string(),
            "hops" => self.hops.to_string(),
            "blocks" => self.blocks.to_string(),
            "arrangement" => self.arrangement.clone(),
            "ha_variant" => self.ha_variant.to_string(),
            "with_projection" => self.with_projection.to_string(),
            "heads" => self.heads.to_string(),
            "dropout" => self.dropout.to_string(),
            "activation" => self.activation.to_string(),
            "module_mode" => self.module_mode.to_string(),
            "reduction" => self.reduction.to_string(),
            "global_divisor" => self.global_divisor.to_string(),
            "learnable_graph" => self.learnable_graph.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// Canonical form: every key once, in [`MODEL_KEYS`] order.
    pub fn to_text(&self) -> String {
        MODEL_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.value_of(k).expect("known key")))
            .collect()
    }

    pub fn global_dim(&self) -> usize {
        self.channels / self.global_divisor.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        if !(1..=4).contains(&self.hops) {
            return bad(format!("hops must be in 1..=4, got {}", self.hops));
        }
        if self.blocks == 0 {
            return bad("blocks must be positive".into());
        }
        if self.arrangement.is_empty() || !self.arrangement.chars().all(|c| c == 'H' || c == 'I') {
            return bad(format!("arrangement {:?} must be a non-empty string over H and I", self.arrangement));
        }
        if self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return bad(format!("channels {} not divisible by {} heads", self.channels, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.global_divisor == 0 || !self.channels.is_multiple_of(self.global_divisor) {
            return bad(format!(
                "channels {} not divisible by global_divisor {}",
                self.channels, self.global_divisor
            ));
        }
        self.reduction.dims(self.channels, self.hops)?;
        Ok(())
    }
}
