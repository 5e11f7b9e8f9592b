use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use crate::config::{ModelConfig, Pivot};
use crate::data::RatingTable;
use crate::error::{Error, Result};
use crate::nn::RngStream;
use crate::trainer::train;

use super::space::{sample_config, SearchSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrialStatus {
    Ok,
    Diverged,
}

impl fmt::Display for TrialStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialStatus::Ok => "ok",
            TrialStatus::Diverged => "diverged",
        })
    }
}

impl FromStr for TrialStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ok" => Ok(TrialStatus::Ok),
            "diverged" => Ok(TrialStatus::Diverged),
            _ => Err(format!("unknown status `{s}`")),
        }
    }
}

/// One row of the results file. `rmse` is present exactly when the status
/// is `ok`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub trial_id: usize,
    pub seed: u64,
    pub status: TrialStatus,
    pub rmse: Option<f64>,
    pub train_seconds: f64,
    pub config: ModelConfig,
}

/// Config columns of the results file, in order.
pub const CONFIG_COLUMNS: [&str; 17] = [
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
];

pub fn results_header() -> Vec<&'static str> {
    let mut cols = vec!["trial_id", "seed", "status", "rmse", "train_seconds"];
    cols.extend(CONFIG_COLUMNS);
    cols
}

impl TrialResult {
    fn record(&self) -> Vec<String> {
        let mut row = vec![
            self.trial_id.to_string(),
            self.seed.to_string(),
            self.status.to_string(),
            self.rmse.map(|r| r.to_string()).unwrap_or_default(),
            self.train_seconds.to_string(),
        ];
        for key in CONFIG_COLUMNS {
            row.push(match key {
                "hidden_layers" => {
                    let sizes: Vec<String> = self.config.hidden_layers.iter().map(ToString::to_string).collect();
                    sizes.join("|")
                }
                "pivot" => self.config.pivot.name().to_string(),
                _ => self.config.get(key).expect("config column"),
            });
        }
        row
    }

    fn from_record(record: &csv::StringRecord) -> Result<Self, String> {
        let header = results_header();
        if record.len() != header.len() {
            return Err(format!("expected {} fields, got {}", header.len(), record.len()));
        }
        let field = |i: usize| record[i].trim();
        let num = |i: usize| -> Result<f64, String> {
            field(i).parse().map_err(|_| format!("{}: malformed `{}`", header[i], field(i)))
        };
        let status: TrialStatus = field(2).parse()?;
        let rmse = match (status, field(3)) {
            (TrialStatus::Ok, v) => Some(num(3).map_err(|_| format!("rmse: malformed `{v}`"))?),
            (TrialStatus::Diverged, "") => None,
            (TrialStatus::Diverged, v) => return Err(format!("diverged trial carries rmse `{v}`")),
        };
        let seed: u64 = field(1).parse().map_err(|_| format!("seed: malformed `{}`", field(1)))?;
        let mut config = ModelConfig { seed, ..ModelConfig::default() };
        for (k, key) in CONFIG_COLUMNS.iter().enumerate() {
            let value = field(5 + k);
            let value = match *key {
                "hidden_layers" => format!("[{}]", value.replace('|', ",")),
                "pivot" => value.parse::<Pivot>()?.name().to_string(),
                _ => value.to_string(),
            };
            config.set(key, &value).map_err(|e| format!("{key}: {e}"))?;
        }
        Ok(TrialResult {
            trial_id: field(0).parse().map_err(|_| format!("trial_id: malformed `{}`", field(0)))?,
            seed,
            status,
            rmse,
            train_seconds: num(4)?,
            config,
        })
    }
}

/// Serializes results (in the given order) as CSV text.
pub fn results_to_csv(results: &[TrialResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(results_header())?;
    for r in results {
        w.write_record(r.record())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("ascii csv"))
}

pub fn parse_results(text: &str) -> Result<Vec<TrialResult>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != results_header() {
        return Err(Error::Parse {
            line: 1,
            message: "results header does not match the expected columns".into(),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        out.push(TrialResult::from_record(&record).map_err(|message| Error::Parse { line, message })?);
    }
    Ok(out)
}

pub fn load_results(path: &Path) -> Result<Vec<TrialResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text)
}

/// Rewrites the results file sorted by trial id.
pub fn write_results(path: &Path, results: &[TrialResult]) -> Result<()> {
    let mut sorted = results.to_vec();
    sorted.sort_by_key(|r| r.trial_id);
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, results_to_csv(&sorted)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs trial `trial_id`: seed `base_seed + trial_id` drives both sampling
/// and training. Only divergence is recorded as a failed trial; any other
/// error is returned.
pub fn run_trial(
    space: &SearchSpace,
    table: &RatingTable,
    trial_id: usize,
    base_seed: u64,
    record_timing: bool,
) -> Result<TrialResult> {
    let seed = base_seed.wrapping_add(trial_id as u64);
    let mut config = sample_config(space, &mut RngStream::new(seed));
    config.seed = seed;
    let start = Instant::now();
    let outcome = train::<f32>(&config, table);
    let train_seconds = if record_timing { start.elapsed().as_secs_f64() } else { 0.0 };
    let (status, rmse) = match outcome {
        Ok((_, report)) if report.rmse.is_finite() => (TrialStatus::Ok, Some(report.rmse)),
        Ok(_) | Err(Error::Diverged { .. }) => (TrialStatus::Diverged, None),
        Err(e) => return Err(e),
    };
    Ok(TrialResult {
        trial_id,
        seed,
        status,
        rmse,
        train_seconds,
        config,
    })
}

/// How a batch of trials is executed.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialPlan {
    pub n_trials: usize,
    pub base_seed: u64,
    pub workers: usize,
    /// When false, `train_seconds` is written as 0 so reruns are
    /// byte-identical.
    pub record_timing: bool,
}

/// Runs trials `0..n_trials`, skipping ids already present in `out`.
///
/// Each finished trial is appended to `out` immediately; once all are done
/// the file is rewritten in trial-id order, so its final content does not
/// depend on `workers`. Returns every result for the requested ids, sorted.
pub fn run_trials(space: &SearchSpace, table: &RatingTable, plan: &TrialPlan, out: Option<&Path>) -> Result<Vec<TrialResult>> {
    if plan.n_trials == 0 {
        return Err(Error::config("trials", 0, "need at least one trial"));
    }
    space.validate()?;
    let mut done: BTreeMap<usize, TrialResult> = BTreeMap::new();
    if let Some(path) = out.filter(|p| p.exists()) {
        for r in load_results(path)? {
            done.insert(r.trial_id, r);
        }
    }
    let pending: Vec<usize> = (0..plan.n_trials).filter(|i| !done.contains_key(i)).collect();

    let mut sink = match out {
        Some(path) => {
            let fresh = !path.exists() || fs::metadata(path).map_err(|e| Error::io(path, e))?.len() == 0;
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            if fresh {
                file.write_all(results_to_csv(&[])?.as_bytes()).map_err(|e| Error::io(path, e))?;
            }
            Some((path, file))
        }
        None => None,
    };
    let mut append = |r: &TrialResult| -> Result<()> {
        if let Some((path, file)) = sink.as_mut() {
            let text = results_to_csv(std::slice::from_ref(r))?;
            let row = text.split_once('\n').map_or("", |(_, row)| row);
            write_row(file, row).map_err(|e| Error::io(*path, e))?;
        }
        Ok(())
    };

    let workers = plan.workers.clamp(1, pending.len().max(1));
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let mut failure = None;
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<Result<TrialResult>>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, pending) = (&next, &abort, &pending);
            scope.spawn(move || loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let Some(&id) = pending.get(next.fetch_add(1, Ordering::SeqCst)) else {
                    break;
                };
                let result = run_trial(space, table, id, plan.base_seed, plan.record_timing);
                if tx.send(result).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for result in rx {
            match result.and_then(|r| append(&r).map(|()| r)) {
                Ok(r) => {
                    done.insert(r.trial_id, r);
                }
                Err(e) => {
                    abort.store(true, Ordering::SeqCst);
                    failure.get_or_insert(e);
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let all: Vec<TrialResult> = done.into_values().collect();
    if let Some(path) = out {
        write_results(path, &all)?;
    }
    Ok(all.into_iter().filter(|r| r.trial_id < plan.n_trials).collect())
}

fn write_row(file: &mut File, row: &str) -> std::io::Result<()> {
    file.write_all(row.as_bytes())?;
    file.flush()?;
    file.sync_data()
}
