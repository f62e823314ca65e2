//! Training configuration and its flat `key = value` file format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::backbone::ModelKind;
use crate::dataset::NegExclude;
use crate::eval::ExcludeMode;
use crate::hsic::HsicMode;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// Multiplier on the sample-weight step size; 0 disables re-weighting.
    pub lambda: f64,
    pub epochs_max: usize,
    pub batch_size: usize,
    pub lr_theta: f64,
    pub l2_reg: f64,
    pub patience: usize,
    pub seed: u64,
    /// Anchor penalty `gamma * mean((w - 1)^2)`.
    pub weight_penalty: f64,
    pub w_max: f64,
    pub inner_weight_steps: usize,
    /// Base Adam step for the weight logits, scaled by `lambda`.
    pub weight_lr: f64,
    pub hsic_mode: HsicMode,
    pub mask_temperature: f64,
    pub embed_dim: usize,
    pub shared_dim: usize,
    pub neg_exclude: NegExclude,
    pub eval_k: usize,
    pub eval_exclude: ExcludeMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Vbpr,
            lambda: 0.1,
            epochs_max: 200,
            batch_size: 1024,
            lr_theta: 1e-3,
            l2_reg: 1e-4,
            patience: 10,
            seed: 0,
            weight_penalty: 0.1,
            w_max: 2.0,
            inner_weight_steps: 1,
            weight_lr: 0.1,
            hsic_mode: HsicMode::PerItem,
            mask_temperature: 1.0,
            embed_dim: 64,
            shared_dim: 64,
            neg_exclude: NegExclude::All,
            eval_k: 20,
            eval_exclude: ExcludeMode::Train,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V, ConfigError>
where
    V::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: V::Err| ConfigError::BadValue {
        key: key.to_owned(),
        msg: e.to_string(),
    })
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "model",
        "lambda",
        "epochs_max",
        "batch_size",
        "lr_theta",
        "l2_reg",
        "patience",
        "seed",
        "weight_penalty",
        "w_max",
        "inner_weight_steps",
        "weight_lr",
        "hsic.mode",
        "mask.temperature",
        "embed_dim",
        "shared_dim",
        "neg_exclude",
        "eval_k",
        "eval_exclude",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "model" => self.model = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "epochs_max" => self.epochs_max = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr_theta" => self.lr_theta = parse(key, value)?,
            "l2_reg" => self.l2_reg = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "weight_penalty" | "gamma" => self.weight_penalty = parse(key, value)?,
            "w_max" => self.w_max = parse(key, value)?,
            "inner_weight_steps" => self.inner_weight_steps = parse(key, value)?,
            "weight_lr" => self.weight_lr = parse(key, value)?,
            "hsic.mode" | "hsic_mode" => self.hsic_mode = parse(key, value)?,
            "mask.temperature" | "mask_temperature" => self.mask_temperature = parse(key, value)?,
            "embed_dim" | "d" => self.embed_dim = parse(key, value)?,
            "shared_dim" => self.shared_dim = parse(key, value)?,
            "neg_exclude" => self.neg_exclude = parse(key, value)?,
            "eval_k" => self.eval_k = parse(key, value)?,
            "eval_exclude" => self.eval_exclude = parse(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_owned())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "model" => self.model.to_string(),
            "lambda" => self.lambda.to_string(),
            "epochs_max" => self.epochs_max.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr_theta" => self.lr_theta.to_string(),
            "l2_reg" => self.l2_reg.to_string(),
            "patience" => self.patience.to_string(),
            "seed" => self.seed.to_string(),
            "weight_penalty" => self.weight_penalty.to_string(),
            "w_max" => self.w_max.to_string(),
            "inner_weight_steps" => self.inner_weight_steps.to_string(),
            "weight_lr" => self.weight_lr.to_string(),
            "hsic.mode" => self.hsic_mode.to_string(),
            "mask.temperature" => self.mask_temperature.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "shared_dim" => self.shared_dim.to_string(),
            "neg_exclude" => self.neg_exclude.to_string(),
            "eval_k" => self.eval_k.to_string(),
            "eval_exclude" => self.eval_exclude.to_string(),
            _ => return None,
        })
    }

    /// Applies every `key = value` line; `#` and `;` start comments and
    /// `[section]` headers are ignored.
    pub fn apply_ini(&mut self, text: &str) -> Result<(), ConfigError> {
        for (key, value) in parse_ini(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn from_ini(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_ini(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Every key, one per line, in [`Self::KEYS`] order.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("known key"));
        }
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_owned()));
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.w_max > 1.0) {
            return bad("w_max must be > 1");
        }
        if !(self.weight_penalty >= 0.0) || !(self.lr_theta >= 0.0) || !(self.l2_reg >= 0.0) || !(self.weight_lr >= 0.0)
        {
            return bad("rates and penalties must be >= 0");
        }
        if !(self.mask_temperature > 0.0) {
            return bad("mask.temperature must be > 0");
        }
        if self.embed_dim == 0 || (self.model == ModelKind::Vbpr && self.shared_dim < 2) {
            return bad("embed_dim must be >= 1 and shared_dim >= 2");
        }
        if self.eval_k == 0 {
            return bad("eval_k must be >= 1");
        }
        Ok(())
    }
}

/// Flat INI-style pairs in file order.
pub fn parse_ini(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: n + 1 })?;
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}
