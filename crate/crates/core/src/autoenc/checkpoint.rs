//! Single-file checkpoint: a text manifest followed by raw little-endian
//! `f32` arrays.
//!
//! ```text
//! flexencoder-checkpoint 1
//! precision=f32
//! n=943
//! dims=[943,64,4]
//! activation=TANH
//! tied=true
//! drop_prob=0.6
//! noise_prob=0.8
//! array=encoder.0.weight 64x943
//! ...
//! config.lr=0.01
//! extra.data=/path/to/data
//! payload_bytes=241744
//! end
//! <payload>
//! ```
//!
//! Arrays appear in the model's canonical parameter order: encoder weights,
//! encoder biases, decoder biases, untied decoder weights.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::{format_list, parse_list, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::ActivationKind;
use crate::scalar::Scalar;

use super::model::FlexModel;

const MAGIC: &str = "flexencoder-checkpoint 1";
const END: &str = "end";

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: FlexModel<T>,
    pub config: Option<ModelConfig>,
    /// Free-form single-line metadata, e.g. the data directory.
    pub extras: BTreeMap<String, String>,
}

fn array_names<T: Scalar>(model: &FlexModel<T>) -> Vec<String> {
    let mut names = Vec::new();
    for (l, layer) in model.encoder().iter().enumerate() {
        names.push(format!("encoder.{l}.weight {}x{}", layer.out_dim, layer.in_dim));
    }
    for (l, layer) in model.encoder().iter().enumerate() {
        names.push(format!("encoder.{l}.bias {}", layer.out_dim));
    }
    for (j, layer) in model.decoder().iter().enumerate() {
        names.push(format!("decoder.{j}.bias {}", layer.out_dim));
    }
    for (j, layer) in model.decoder().iter().enumerate() {
        if !layer.is_tied() {
            names.push(format!("decoder.{j}.weight {}x{}", layer.out_dim, layer.in_dim));
        }
    }
    names
}

pub fn checkpoint_bytes<T: Scalar>(
    model: &FlexModel<T>,
    config: Option<&ModelConfig>,
    extras: &BTreeMap<String, String>,
) -> Result<Vec<u8>> {
    let lens = model.param_lens();
    let mut manifest = String::new();
    let _ = writeln!(manifest, "{MAGIC}");
    let _ = writeln!(manifest, "precision=f32");
    let _ = writeln!(manifest, "n={}", model.input_dim());
    let _ = writeln!(manifest, "dims={}", format_list(&model.dims()));
    let _ = writeln!(manifest, "activation={}", model.activation().map_or("LINEAR", ActivationKind::name));
    let _ = writeln!(manifest, "tied={}", model.is_tied());
    let _ = writeln!(manifest, "drop_prob={}", model.drop_prob);
    let _ = writeln!(manifest, "noise_prob={}", model.noise_prob);
    for name in array_names(model) {
        let _ = writeln!(manifest, "array={name}");
    }
    if let Some(config) = config {
        for line in config.serialize().lines() {
            let _ = writeln!(manifest, "config.{line}");
        }
    }
    for (k, v) in extras {
        if k.contains(['\n', '=']) || v.contains('\n') {
            return Err(Error::Checkpoint {
                path: Default::default(),
                message: format!("extra `{k}` must be a single line without `=` in its key"),
            });
        }
        let _ = writeln!(manifest, "extra.{k}={v}");
    }
    let payload_len: usize = lens.iter().sum::<usize>() * 4;
    let _ = writeln!(manifest, "payload_bytes={payload_len}");
    let _ = writeln!(manifest, "{END}");

    let mut bytes = manifest.into_bytes();
    bytes.reserve(payload_len);
    let mut m = model.clone();
    for slot in m.param_slots_mut() {
        for v in slot.values.iter() {
            bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &FlexModel<T>,
    config: Option<&ModelConfig>,
    extras: &BTreeMap<String, String>,
) -> Result<()> {
    let bytes = checkpoint_bytes(model, config, extras).map_err(|e| match e {
        Error::Checkpoint { message, .. } => Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes).map_err(|message| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

pub fn parse_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, String> {
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut config_text = String::new();
    let mut extras = BTreeMap::new();
    let mut arrays = Vec::new();
    let mut offset = 0usize;
    let mut first = true;
    let mut ended = false;
    while offset < bytes.len() {
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or("manifest is not newline-terminated")?;
        let line = std::str::from_utf8(&bytes[offset..offset + end]).map_err(|_| "manifest is not UTF-8")?;
        offset += end + 1;
        if first {
            if line != MAGIC {
                return Err(format!("bad header `{line}`"));
            }
            first = false;
            continue;
        }
        if line == END {
            ended = true;
            break;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| format!("malformed manifest line `{line}`"))?;
        if let Some(k) = key.strip_prefix("config.") {
            let _ = writeln!(config_text, "{k}={value}");
        } else if let Some(k) = key.strip_prefix("extra.") {
            extras.insert(k.to_string(), value.to_string());
        } else if key == "array" {
            arrays.push(value.to_string());
        } else {
            fields.insert(key.to_string(), value.to_string());
        }
    }
    if !ended {
        return Err("manifest has no end marker".into());
    }
    let field = |k: &str| fields.get(k).ok_or_else(|| format!("manifest is missing `{k}`"));
    if field("precision")? != "f32" {
        return Err(format!("unsupported precision `{}`", field("precision")?));
    }
    let dims: Vec<usize> = parse_list(field("dims")?)?;
    let activation = match field("activation")?.as_str() {
        "LINEAR" => None,
        name => Some(name.parse::<ActivationKind>()?),
    };
    let tied = field("tied")? == "true";
    let drop_prob: f64 = field("drop_prob")?.parse().map_err(|_| "bad drop_prob")?;
    let noise_prob: f64 = field("noise_prob")?.parse().map_err(|_| "bad noise_prob")?;
    let payload_len: usize = field("payload_bytes")?.parse().map_err(|_| "bad payload_bytes")?;
    let n: usize = field("n")?.parse().map_err(|_| "bad n")?;
    if dims.first() != Some(&n) {
        return Err("n does not match dims".into());
    }

    let mut model = FlexModel::zeros(&dims, activation, tied, drop_prob, noise_prob).map_err(|e| e.to_string())?;
    if arrays != array_names(&model) {
        return Err("array table does not match the declared architecture".into());
    }
    let payload = &bytes[offset..];
    if payload.len() != payload_len || payload_len != model.param_count() * 4 {
        return Err(format!(
            "payload is {} bytes, manifest says {payload_len}, architecture needs {}",
            payload.len(),
            model.param_count() * 4
        ));
    }
    let mut chunks = payload.chunks_exact(4);
    for slot in model.param_slots_mut() {
        for v in slot.values.iter_mut() {
            let raw: [u8; 4] = chunks.next().expect("length checked").try_into().expect("chunk of 4");
            *v = T::lit(f32::from_le_bytes(raw) as f64);
        }
    }
    let config = if config_text.is_empty() {
        None
    } else {
        Some(ModelConfig::parse(&config_text).map_err(|e| e.to_string())?)
    };
    Ok(Checkpoint { model, config, extras })
}
