//! The model configuration and its flat `key=value` file format.
//!
//! ```text
//! # comments and blank lines are ignored
//! lr=0.001
//! hidden_layers=[512,256]
//! optimizer=adam
//! pivot=[1,0]
//! ```
//!
//! Every key is optional; omitted keys take the values of [`ModelConfig::default`].

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::ActivationKind;
use crate::optim::OptimizerKind;

/// Maximum number of encoder layers.
pub const MAX_HIDDEN_LAYERS: usize = 5;

/// Which axis of the rating matrix forms the autoencoder's input rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pivot {
    /// Pivot indexes `[0, 1]`: one row per user, one column per item.
    User,
    /// Pivot indexes `[1, 0]`: one row per item, one column per user.
    Item,
}

impl Pivot {
    pub fn from_indexes(indexes: &[u8]) -> Option<Pivot> {
        match indexes {
            [0, 1] => Some(Pivot::User),
            [1, 0] => Some(Pivot::Item),
            _ => None,
        }
    }

    pub fn indexes(self) -> [u8; 2] {
        match self {
            Pivot::User => [0, 1],
            Pivot::Item => [1, 0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pivot::User => "user",
            Pivot::Item => "item",
        }
    }
}

impl fmt::Display for Pivot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pivot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "user" => return Ok(Pivot::User),
            "item" => return Ok(Pivot::Item),
            _ => {}
        }
        let indexes: Vec<u8> = parse_list(t)?;
        Pivot::from_indexes(&indexes).ok_or_else(|| format!("pivot must be [0,1] or [1,0], got `{s}`"))
    }
}

/// Full training configuration: the seventeen tunable parameters plus a seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden_layers: Vec<usize>,
    pub drop_prob: f64,
    pub noise_prob: f64,
    pub train_batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub activation: ActivationKind,
    pub dense_refeed: usize,
    pub dense_refeed_rounding: bool,
    pub decoder_constraint: bool,
    pub mean_normalization: bool,
    pub prediction_rounding: bool,
    pub pivot: Pivot,
    pub test_mask_rate: f64,
    pub test_split_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lr: 0.001,
            weight_decay: 0.001,
            hidden_layers: vec![512, 256],
            drop_prob: 0.3,
            noise_prob: 0.2,
            train_batch_size: 128,
            epochs: 20,
            optimizer: OptimizerKind::Adam,
            activation: ActivationKind::Relu,
            dense_refeed: 1,
            dense_refeed_rounding: true,
            decoder_constraint: false,
            mean_normalization: true,
            prediction_rounding: false,
            pivot: Pivot::User,
            test_mask_rate: 0.5,
            test_split_rate: 0.3,
            seed: 42,
        }
    }
}

/// Config keys in file order.
pub const KEYS: [&str; 18] = [
    "lr",
    "weight_decay",
    "hidden_layers",
    "drop_prob",
    "noise_prob",
    "train_batch_size",
    "epochs",
    "optimizer",
    "activation",
    "dense_refeed",
    "dense_refeed_rounding",
    "decoder_constraint",
    "mean_normalization",
    "prediction_rounding",
    "pivot",
    "test_mask_rate",
    "test_split_rate",
    "seed",
];

impl ModelConfig {
    /// Checks every field invariant; `lines` maps keys to the line that set them.
    fn validate_at(&self, lines: &HashMap<&str, usize>) -> Result<()> {
        let fail = |key: &str, msg: String| Err(Error::config(key, lines.get(key).copied().unwrap_or(0), msg));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail("lr", format!("must be positive, got {}", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail("weight_decay", format!("must be non-negative, got {}", self.weight_decay));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.len() > MAX_HIDDEN_LAYERS {
            return fail(
                "hidden_layers",
                format!("need 1 to {MAX_HIDDEN_LAYERS} layers, got {}", self.hidden_layers.len()),
            );
        }
        if self.hidden_layers.contains(&0) {
            return fail("hidden_layers", "layer sizes must be at least 1".into());
        }
        for (key, p) in [
            ("drop_prob", self.drop_prob),
            ("noise_prob", self.noise_prob),
            ("test_mask_rate", self.test_mask_rate),
            ("test_split_rate", self.test_split_rate),
        ] {
            if !(0.0..1.0).contains(&p) {
                return fail(key, format!("probability must lie in [0, 1), got {p}"));
            }
        }
        if self.train_batch_size == 0 {
            return fail("train_batch_size", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at(&HashMap::new())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ModelConfig::default();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(line, line_no, "expected key=value"));
            };
            let key = key.trim();
            let value = value.trim();
            let Some(&canonical) = KEYS.iter().find(|k| **k == key) else {
                return Err(Error::config(key, line_no, "unknown key"));
            };
            if seen.insert(canonical, line_no).is_some() {
                return Err(Error::config(key, line_no, "duplicate key"));
            }
            config
                .set(canonical, value)
                .map_err(|msg| Error::config(key, line_no, msg))?;
        }
        config.validate_at(&seen)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Assigns one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "lr" => self.lr = parse_scalar(value)?,
            "weight_decay" => self.weight_decay = parse_scalar(value)?,
            "hidden_layers" => self.hidden_layers = parse_list(value)?,
            "drop_prob" => self.drop_prob = parse_scalar(value)?,
            "noise_prob" => self.noise_prob = parse_scalar(value)?,
            "train_batch_size" => self.train_batch_size = parse_scalar(value)?,
            "epochs" => self.epochs = parse_scalar(value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "activation" => self.activation = value.parse()?,
            "dense_refeed" => self.dense_refeed = parse_scalar(value)?,
            "dense_refeed_rounding" => self.dense_refeed_rounding = parse_bool(value)?,
            "decoder_constraint" => self.decoder_constraint = parse_bool(value)?,
            "mean_normalization" => self.mean_normalization = parse_bool(value)?,
            "prediction_rounding" => self.prediction_rounding = parse_bool(value)?,
            "pivot" => self.pivot = value.parse()?,
            "test_mask_rate" => self.test_mask_rate = parse_scalar(value)?,
            "test_split_rate" => self.test_split_rate = parse_scalar(value)?,
            "seed" => self.seed = parse_scalar(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Textual value of one field, as written by [`ModelConfig::serialize`].
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lr" => self.lr.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "hidden_layers" => format_list(&self.hidden_layers),
            "drop_prob" => self.drop_prob.to_string(),
            "noise_prob" => self.noise_prob.to_string(),
            "train_batch_size" => self.train_batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "optimizer" => self.optimizer.to_string(),
            "activation" => self.activation.to_string(),
            "dense_refeed" => self.dense_refeed.to_string(),
            "dense_refeed_rounding" => self.dense_refeed_rounding.to_string(),
            "decoder_constraint" => self.decoder_constraint.to_string(),
            "mean_normalization" => self.mean_normalization.to_string(),
            "prediction_rounding" => self.prediction_rounding.to_string(),
            "pivot" => format_list(&self.pivot.indexes()),
            "test_mask_rate" => self.test_mask_rate.to_string(),
            "test_split_rate" => self.test_split_rate.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("known key"));
        }
        out
    }
}

fn parse_scalar<T: FromStr>(value: &str) -> Result<T, String> {
    value
        .trim()
        .parse()
        .map_err(|_| format!("malformed value `{value}`"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{value}`")),
    }
}

/// Parses `[a, b, c]`; the brackets are required.
pub fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String> {
    let inner = value
        .trim()
        .strip_prefix('[')
        .and_then(|v| v.strip_suffix(']'))
        .ok_or_else(|| format!("expected a bracketed list, got `{value}`"))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner.split(',').map(parse_scalar).collect()
}

pub fn format_list<T: fmt::Display>(items: &[T]) -> String {
    let parts: Vec<String> = items.iter().map(ToString::to_string).collect();
    format!("[{}]", parts.join(","))
}
