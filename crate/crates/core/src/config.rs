//! Training configuration, the learning-rate decay law, and the flat
//! `key = value` document format used for every config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Initial rate plus the constants of `eta0 / (1 + coeff * i)^power`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub eta0: f64,
    pub decay_coeff: f64,
    pub decay_power: f64,
}

impl ScheduleParams {
    pub const DEFAULT_DECAY_COEFF: f64 = 0.0001;
    pub const DEFAULT_DECAY_POWER: f64 = 0.75;

    pub fn new(eta0: f64) -> Self {
        Self {
            eta0,
            decay_coeff: Self::DEFAULT_DECAY_COEFF,
            decay_power: Self::DEFAULT_DECAY_POWER,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0) {
            return Err(Error::Validation(format!("eta0 must be > 0, got {}", self.eta0)));
        }
        if !(self.decay_coeff >= 0.0) || !(self.decay_power >= 0.0) {
            return Err(Error::Validation(
                "decay_coeff and decay_power must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Learning rate at optimizer step `i`.
pub fn lr_at_step(sched: &ScheduleParams, i: u64) -> f64 {
    sched.eta0 / (1.0 + sched.decay_coeff * i as f64).powf(sched.decay_power)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Labeled batch size per domain; the unlabeled batch is `2 * s`.
    pub s: usize,
    /// Confidence threshold for pseudo-targets.
    pub tau: f64,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_backbone: f64,
    pub lr_classifier: f64,
    pub decay_coeff: f64,
    pub decay_power: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            s: 24,
            tau: 0.9,
            total_steps: 10_000,
            eval_interval: 500,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_backbone: 0.001,
            lr_classifier: 0.01,
            decay_coeff: ScheduleParams::DEFAULT_DECAY_COEFF,
            decay_power: ScheduleParams::DEFAULT_DECAY_POWER,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "s",
        "tau",
        "total_steps",
        "eval_interval",
        "momentum",
        "weight_decay",
        "lr_backbone",
        "lr_classifier",
        "decay_coeff",
        "decay_power",
        "seed",
    ];

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Validation(format!(
                "tau must satisfy 0 <= tau <= 1, got {}",
                self.tau
            )));
        }
        if self.s < 1 {
            return Err(Error::Validation("s must be >= 1".into()));
        }
        if self.total_steps < 1 {
            return Err(Error::Validation("total_steps must be >= 1".into()));
        }
        if self.eval_interval < 1 || self.eval_interval > self.total_steps {
            return Err(Error::Validation(format!(
                "eval_interval must satisfy 1 <= eval_interval <= total_steps ({}), got {}",
                self.total_steps, self.eval_interval
            )));
        }
        if !(self.lr_backbone > 0.0) || !(self.lr_classifier > 0.0) {
            return Err(Error::Validation("learning rates must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Validation("momentum must be in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Validation("weight_decay must be >= 0".into()));
        }
        self.backbone_schedule().validate()?;
        Ok(())
    }

    pub fn backbone_schedule(&self) -> ScheduleParams {
        ScheduleParams {
            eta0: self.lr_backbone,
            decay_coeff: self.decay_coeff,
            decay_power: self.decay_power,
        }
    }

    pub fn classifier_schedule(&self) -> ScheduleParams {
        ScheduleParams {
            eta0: self.lr_classifier,
            decay_coeff: self.decay_coeff,
            decay_power: self.decay_power,
        }
    }

    /// Overwrite fields from `doc`, consuming the recognised keys.
    pub fn apply(&mut self, doc: &mut KvDocument) -> Result<()> {
        doc.take_into("s", &mut self.s)?;
        doc.take_into("tau", &mut self.tau)?;
        doc.take_into("total_steps", &mut self.total_steps)?;
        doc.take_into("eval_interval", &mut self.eval_interval)?;
        doc.take_into("momentum", &mut self.momentum)?;
        doc.take_into("weight_decay", &mut self.weight_decay)?;
        doc.take_into("lr_backbone", &mut self.lr_backbone)?;
        doc.take_into("lr_classifier", &mut self.lr_classifier)?;
        doc.take_into("decay_coeff", &mut self.decay_coeff)?;
        doc.take_into("decay_power", &mut self.decay_power)?;
        doc.take_into("seed", &mut self.seed)?;
        Ok(())
    }

    pub fn write_kv(&self, out: &mut String) {
        let _ = writeln!(out, "s = {}", self.s);
        let _ = writeln!(out, "tau = {}", self.tau);
        let _ = writeln!(out, "total_steps = {}", self.total_steps);
        let _ = writeln!(out, "eval_interval = {}", self.eval_interval);
        let _ = writeln!(out, "momentum = {}", self.momentum);
        let _ = writeln!(out, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(out, "lr_backbone = {}", self.lr_backbone);
        let _ = writeln!(out, "lr_classifier = {}", self.lr_classifier);
        let _ = writeln!(out, "decay_coeff = {}", self.decay_coeff);
        let _ = writeln!(out, "decay_power = {}", self.decay_power);
        let _ = writeln!(out, "seed = {}", self.seed);
    }
}

/// Load a [`TrainConfig`]; absent keys keep their defaults, unknown keys fail.
pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let mut doc = KvDocument::load(path)?;
    let mut cfg = TrainConfig::default();
    cfg.apply(&mut doc)?;
    doc.finish()?;
    cfg.validate()?;
    Ok(cfg)
}

/// A parsed `key = value` document. Keys are removed as they are consumed so
/// that leftovers can be reported as unknown.
#[derive(Clone, Debug, Default)]
pub struct KvDocument {
    entries: BTreeMap<String, String>,
}

impl KvDocument {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for raw in text.lines() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    key: line.to_string(),
                    message: "expected `key = value`".into(),
                });
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config {
                    key,
                    message: "empty key".into(),
                });
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config {
                    key,
                    message: "duplicate key".into(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| Error::Config {
                key: key.to_string(),
                message: format!("cannot parse value `{raw}`"),
            }),
        }
    }

    pub fn take_into<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Fail if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_keys().next() {
            None => Ok(()),
            Some(key) => Err(Error::Config {
                key,
                message: "unknown key".into(),
            }),
        }
    }
}
