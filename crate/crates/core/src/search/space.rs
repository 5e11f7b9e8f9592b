use std::collections::HashSet;
use std::fmt::Debug;
use std::path::Path;
use std::str::FromStr;

use crate::config::{parse_list, ModelConfig, Pivot, MAX_HIDDEN_LAYERS};
use crate::error::{Error, Result};
use crate::nn::{ActivationKind, RngStream};
use crate::optim::OptimizerKind;

/// Value pools the random search draws each parameter from.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub drop_prob: Vec<f64>,
    pub noise_prob: Vec<f64>,
    pub test_mask_rate: Vec<f64>,
    pub test_split_rate: Vec<f64>,
    pub train_batch_size: Vec<usize>,
    pub epochs: Vec<usize>,
    pub dense_refeed: Vec<usize>,
    pub dense_refeed_rounding: Vec<bool>,
    pub decoder_constraint: Vec<bool>,
    pub mean_normalization: Vec<bool>,
    pub prediction_rounding: Vec<bool>,
    pub pivot: Vec<Pivot>,
    pub optimizer: Vec<OptimizerKind>,
    pub activation: Vec<ActivationKind>,
    /// Number of encoder layers.
    pub hidden_layer_count: Vec<usize>,
    /// Width of each encoder layer, drawn independently per layer.
    pub hidden_sizes: Vec<usize>,
}

/// Keys accepted in a space file.
pub const SPACE_KEYS: [&str; 18] = [
    "lr",
    "weight_decay",
    "drop_prob",
    "noise_prob",
    "test_mask_rate",
    "test_split_rate",
    "train_batch_size",
    "epochs",
    "dense_refeed",
    "dense_refeed_rounding",
    "decoder_constraint",
    "mean_normalization",
    "prediction_rounding",
    "pivot",
    "optimizer",
    "activation",
    "hidden_layer_count",
    "hidden_sizes",
];

fn tenths(from: u32) -> Vec<f64> {
    (from..10).map(|i| i as f64 / 10.0).collect()
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lr: vec![1e-4, 1e-3, 5e-3, 1e-2, 1e-1],
            weight_decay: vec![0.0, 1e-3, 5e-3, 1e-2, 1e-1],
            drop_prob: tenths(0),
            noise_prob: tenths(0),
            // A zero mask rate leaves nothing to evaluate.
            test_mask_rate: tenths(1),
            test_split_rate: vec![0.1, 0.2, 0.3, 0.4],
            train_batch_size: vec![32, 64, 128, 256, 512],
            epochs: vec![10, 20, 40],
            dense_refeed: vec![0, 1, 2, 3],
            dense_refeed_rounding: vec![true, false],
            decoder_constraint: vec![true, false],
            mean_normalization: vec![true, false],
            prediction_rounding: vec![true, false],
            pivot: vec![Pivot::User, Pivot::Item],
            optimizer: OptimizerKind::ALL.to_vec(),
            activation: ActivationKind::ALL.to_vec(),
            hidden_layer_count: (1..=MAX_HIDDEN_LAYERS).collect(),
            hidden_sizes: (1..=12).map(|p| 1usize << p).collect(),
        }
    }
}

fn pool<T: FromStr>(value: &str) -> Result<Vec<T>, String> {
    parse_list::<String>(value)?
        .iter()
        .map(|v| v.trim().parse::<T>().map_err(|_| format!("malformed value `{}`", v.trim())))
        .collect()
}

fn bool_pool(value: &str) -> Result<Vec<bool>, String> {
    pool::<String>(value)?
        .iter()
        .map(|v| match v.to_ascii_lowercase().as_str() {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("expected true or false, got `{v}`")),
        })
        .collect()
}

/// Splits `[a,[b,c],d]` at top-level commas, keeping nested brackets whole.
fn pivot_pool(value: &str) -> Result<Vec<Pivot>, String> {
    let inner = value
        .trim()
        .strip_prefix('[')
        .and_then(|v| v.strip_suffix(']'))
        .ok_or_else(|| format!("expected a bracketed list, got `{value}`"))?;
    let (mut parts, mut depth, mut start) = (Vec::new(), 0i32, 0);
    for (i, ch) in inner.char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&inner[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&inner[start..]);
    parts.into_iter().filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

impl SearchSpace {
    /// Reads a `key=[v1,v2,...]` file; keys not given keep their default
    /// pools. Lines may carry `#` comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut space = SearchSpace::default();
        let mut seen = HashSet::new();
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
            if !SPACE_KEYS.contains(&key) {
                return Err(Error::config(key, line_no, "unknown key"));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, line_no, "duplicate key"));
            }
            space
                .set(key, value.trim())
                .and_then(|()| space.check(key))
                .map_err(|msg| Error::config(key, line_no, msg))?;
        }
        Ok(space)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "lr" => self.lr = pool(value)?,
            "weight_decay" => self.weight_decay = pool(value)?,
            "drop_prob" => self.drop_prob = pool(value)?,
            "noise_prob" => self.noise_prob = pool(value)?,
            "test_mask_rate" => self.test_mask_rate = pool(value)?,
            "test_split_rate" => self.test_split_rate = pool(value)?,
            "train_batch_size" => self.train_batch_size = pool(value)?,
            "epochs" => self.epochs = pool(value)?,
            "dense_refeed" => self.dense_refeed = pool(value)?,
            "dense_refeed_rounding" => self.dense_refeed_rounding = bool_pool(value)?,
            "decoder_constraint" => self.decoder_constraint = bool_pool(value)?,
            "mean_normalization" => self.mean_normalization = bool_pool(value)?,
            "prediction_rounding" => self.prediction_rounding = bool_pool(value)?,
            "pivot" => self.pivot = pivot_pool(value)?,
            "optimizer" => self.optimizer = pool(value)?,
            "activation" => self.activation = pool(value)?,
            "hidden_layer_count" => self.hidden_layer_count = pool(value)?,
            "hidden_sizes" => self.hidden_sizes = pool(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Invariants of one pool.
    fn check(&self, key: &str) -> Result<(), String> {
        let nonempty = match key {
            "lr" => self.lr.len(),
            "weight_decay" => self.weight_decay.len(),
            "drop_prob" => self.drop_prob.len(),
            "noise_prob" => self.noise_prob.len(),
            "test_mask_rate" => self.test_mask_rate.len(),
            "test_split_rate" => self.test_split_rate.len(),
            "train_batch_size" => self.train_batch_size.len(),
            "epochs" => self.epochs.len(),
            "dense_refeed" => self.dense_refeed.len(),
            "dense_refeed_rounding" => self.dense_refeed_rounding.len(),
            "decoder_constraint" => self.decoder_constraint.len(),
            "mean_normalization" => self.mean_normalization.len(),
            "prediction_rounding" => self.prediction_rounding.len(),
            "pivot" => self.pivot.len(),
            "optimizer" => self.optimizer.len(),
            "activation" => self.activation.len(),
            "hidden_layer_count" => self.hidden_layer_count.len(),
            "hidden_sizes" => self.hidden_sizes.len(),
            _ => return Err("unknown key".into()),
        };
        if nonempty == 0 {
            return Err("pool must not be empty".into());
        }
        let probs = |pool: &[f64], low_ok: bool| {
            pool.iter().all(|&p| (0.0..1.0).contains(&p) && (low_ok || p > 0.0))
        };
        let ok = match key {
            "lr" => self.lr.iter().all(|&v| v.is_finite() && v > 0.0),
            "weight_decay" => self.weight_decay.iter().all(|&v| v.is_finite() && v >= 0.0),
            "drop_prob" => probs(&self.drop_prob, true),
            "noise_prob" => probs(&self.noise_prob, true),
            "test_split_rate" => probs(&self.test_split_rate, true),
            "test_mask_rate" => probs(&self.test_mask_rate, false),
            "train_batch_size" => !self.train_batch_size.contains(&0),
            "hidden_layer_count" => self.hidden_layer_count.iter().all(|&c| (1..=MAX_HIDDEN_LAYERS).contains(&c)),
            "hidden_sizes" => self.hidden_sizes.iter().all(|&s| s.is_power_of_two() && (2..=4096).contains(&s)),
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(match key {
                "test_mask_rate" => "values must lie in (0, 1)".into(),
                "hidden_layer_count" => format!("counts must lie in 1..={MAX_HIDDEN_LAYERS}"),
                "hidden_sizes" => "sizes must be powers of two in 2..=4096".into(),
                _ => "value out of range".into(),
            })
        }
    }

    pub fn validate(&self) -> Result<()> {
        for key in SPACE_KEYS {
            self.check(key).map_err(|msg| Error::config(key, 0, msg))?;
        }
        Ok(())
    }
}

/// One independent uniform draw from every pool, in a fixed order.
///
/// The returned config keeps the default seed; callers set it.
pub fn sample_config(space: &SearchSpace, rng: &mut RngStream) -> ModelConfig {
    let count = *rng.choose(&space.hidden_layer_count);
    let hidden_layers = (0..count).map(|_| *rng.choose(&space.hidden_sizes)).collect();
    ModelConfig {
        lr: *rng.choose(&space.lr),
        weight_decay: *rng.choose(&space.weight_decay),
        hidden_layers,
        drop_prob: *rng.choose(&space.drop_prob),
        noise_prob: *rng.choose(&space.noise_prob),
        train_batch_size: *rng.choose(&space.train_batch_size),
        epochs: *rng.choose(&space.epochs),
        optimizer: *rng.choose(&space.optimizer),
        activation: *rng.choose(&space.activation),
        dense_refeed: *rng.choose(&space.dense_refeed),
        dense_refeed_rounding: *rng.choose(&space.dense_refeed_rounding),
        decoder_constraint: *rng.choose(&space.decoder_constraint),
        mean_normalization: *rng.choose(&space.mean_normalization),
        prediction_rounding: *rng.choose(&space.prediction_rounding),
        pivot: *rng.choose(&space.pivot),
        test_mask_rate: *rng.choose(&space.test_mask_rate),
        test_split_rate: *rng.choose(&space.test_split_rate),
        ..ModelConfig::default()
    }
}
