//! Optimization hyperparameters and the learning-rate schedule.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::{LOSS_ALPHA, LOSS_BETA};
use crate::model::{parse_pairs, parse_value};

/// Named learning-rate presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Ground-truth 2D inputs: 1e-3, ×0.9 every 4 epochs.
    Gt2d,
    /// Detected 2D inputs: 6e-3 scaled by 0.2 for the first 4 epochs, then
    /// ×0.95 every 4 epochs.
    Detected2d,
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gt2d" => Ok(Regime::Gt2d),
            "detected2d" => Ok(Regime::Detected2d),
            other => Err(Error::Config(format!("unknown regime {other:?}"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Gt2d => "gt2d",
            Regime::Detected2d => "detected2d",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub regime: Regime,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Multiplier on `lr` during the first `warm_epochs`; it stays applied
    /// afterwards and decay counts from the end of that window.
    pub warm_factor: f64,
    pub warm_epochs: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps (0 = no limit).
    pub max_steps: usize,
    /// Seed of the shuffle and dropout streams.
    pub seed: u64,
    /// Evaluate every this many epochs (0 = only after the last epoch).
    pub eval_every: usize,
    pub weight_decay: f64,
    /// Global gradient-norm bound (0 = off).
    pub clip_norm: f64,
    pub loss_alpha: f64,
    pub loss_beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let mut c = TrainConfig {
            regime: Regime::Gt2d,
            lr: 0.0,
            lr_decay: 0.0,
            lr_decay_every: 0,
            warm_factor: 0.0,
            warm_epochs: 0,
            batch_size: 64,
            epochs: 30,
            max_steps: 0,
            seed: 0,
            eval_every: 1,
            weight_decay: 0.0,
            clip_norm: 0.0,
            loss_alpha: LOSS_ALPHA,
            loss_beta: LOSS_BETA,
        };
        c.apply_regime(Regime::Gt2d);
        c
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "regime",
    "lr",
    "lr_decay",
    "lr_decay_every",
    "warm_factor",
    "warm_epochs",
    "batch_size",
    "epochs",
    "max_steps",
    "train_seed",
    "eval_every",
    "weight_decay",
    "clip_norm",
    "loss_alpha",
    "loss_beta",
];

impl TrainConfig {
    /// Overwrite the schedule fields with the regime's preset.
    pub fn apply_regime(&mut self, regime: Regime) {
        self.regime = regime;
        let (lr, decay, every, warm_factor, warm_epochs) = match regime {
            Regime::Gt2d => (0.001, 0.90, 4, 1.0, 0),
            Regime::Detected2d => (0.006, 0.95, 4, 0.2, 4),
        };
        self.lr = lr;
        self.lr_decay = decay;
        self.lr_decay_every = every;
        self.warm_factor = warm_factor;
        self.warm_epochs = warm_epochs;
    }

    /// Returns `false` for keys that are not training keys. Setting
    /// `regime` resets the schedule fields to its preset.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "regime" => self.apply_regime(value.parse()?),
            "lr" => self.lr = parse_value(key, value)?,
            "lr_decay" => self.lr_decay = parse_value(key, value)?,
            "lr_decay_every" => self.lr_decay_every = parse_value(key, value)?,
            "warm_factor" => self.warm_factor = parse_value(key, value)?,
            "warm_epochs" => self.warm_epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "max_steps" => self.max_steps = parse_value(key, value)?,
            "train_seed" => self.seed = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "loss_alpha" => self.loss_alpha = parse_value(key, value)?,
            "loss_beta" => self.loss_beta = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn value_of(&self, key: &str) -> Option<String> {
        Some(match key {
            "regime" => self.regime.to_string(),
            "lr" => self.lr.to_string(),
            "lr_decay" => self.lr_decay.to_string(),
            "lr_decay_every" => self.lr_decay_every.to_string(),
            "warm_factor" => self.warm_factor.to_string(),
            "warm_epochs" => self.warm_epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "max_steps" => self.max_steps.to_string(),
            "train_seed" => self.seed.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "loss_alpha" => self.loss_alpha.to_string(),
            "loss_beta" => self.loss_beta.to_string(),
            _ => return None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (k, v) in parse_pairs(text)? {
            if !c.set(&k, &v)? {
                return Err(Error::Config(format!("unknown config key {k:?}")));
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Canonical form, `regime` first so later keys override its preset.
    pub fn to_text(&self) -> String {
        TRAIN_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.value_of(k).expect("known key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (name, f) in [("lr_decay", self.lr_decay), ("warm_factor", self.warm_factor)] {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("{name} must be in (0, 1], got {f}"));
            }
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.weight_decay < 0.0 || self.clip_norm < 0.0 || self.loss_alpha < 0.0 || self.loss_beta < 0.0 {
            return bad("weight_decay, clip_norm and loss weights must be nonnegative".into());
        }
        Ok(())
    }

    /// `lr · w · decay^⌊max(epoch − warm_epochs, 0) / every⌋`, where `w` is
    /// `warm_factor` (1 when there is no warm window).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let w = if self.warm_epochs > 0 { self.warm_factor } else { 1.0 };
        let k = epoch.saturating_sub(self.warm_epochs) / self.lr_decay_every;
        self.lr * w * self.lr_decay.powi(k as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        let gt = TrainConfig::default();
        assert_eq!(gt.lr_at(0), 0.001);
        assert_eq!(gt.lr_at(3), 0.001);
        assert!((gt.lr_at(4) - 0.0009).abs() < 1e-18);
        let mut det = TrainConfig::default();
        det.set("regime", "detected2d").unwrap();
        assert!((det.lr_at(0) - 0.0012).abs() < 1e-18);
        assert_eq!(det.lr_at(3), det.lr_at(0));
        assert_eq!(det.lr_at(7), det.lr_at(0));
        assert!((det.lr_at(8) - 0.0012 * 0.95).abs() < 1e-18);
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.set("regime", "detected2d").unwrap();
        c.set("batch_size", "64").unwrap();
        let t = c.to_text();
        assert_eq!(TrainConfig::parse(&t).unwrap(), c);
        assert_eq!(TrainConfig::parse(&t).unwrap().to_text(), t);
        assert!(TrainConfig::parse("lr = 0").is_err());
        assert!(TrainConfig::parse("channels = 3").is_err());
    }
}
