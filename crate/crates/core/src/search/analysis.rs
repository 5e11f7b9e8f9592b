use crate::config::{format_list, parse_list, ModelConfig, Pivot};
use crate::error::{Error, Result};
use crate::nn::ActivationKind;
use crate::optim::OptimizerKind;

use super::trials::{TrialResult, TrialStatus};

/// Columns of the correlation matrix, in order.
pub const CORRELATION_LABELS: [&str; 14] = [
    "LR", "WeD", "DrP", "NoP", "TBS", "TMR", "Ep", "DeF", "DeFR", "DeC", "MeN", "PrR", "TSR", "RMSE",
];

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn numeric_row(config: &ModelConfig, rmse: f64) -> [f64; 14] {
    [
        config.lr,
        config.weight_decay,
        config.drop_prob,
        config.noise_prob,
        config.train_batch_size as f64,
        config.test_mask_rate,
        config.epochs as f64,
        config.dense_refeed as f64,
        flag(config.dense_refeed_rounding),
        flag(config.decoder_constraint),
        flag(config.mean_normalization),
        flag(config.prediction_rounding),
        config.test_split_rate,
        rmse,
    ]
}

fn ok_results(results: &[TrialResult]) -> impl Iterator<Item = (&TrialResult, f64)> {
    results
        .iter()
        .filter(|r| r.status == TrialStatus::Ok)
        .filter_map(|r| r.rmse.map(|rmse| (r, rmse)))
}

/// Labelled square matrix of Pearson coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.values[i][j])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.values) {
            out.push_str(label);
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Pearson correlation between the columns of `data` (one inner vector per
/// observation). The diagonal is 1; a constant column correlates 0 with
/// everything else.
pub fn pearson_matrix(labels: &[&str], data: &[Vec<f64>]) -> CorrelationMatrix {
    let k = labels.len();
    let n = data.len() as f64;
    let means: Vec<f64> = (0..k).map(|j| data.iter().map(|row| row[j]).sum::<f64>() / n).collect();
    let centred: Vec<Vec<f64>> = (0..k).map(|j| data.iter().map(|row| row[j] - means[j]).collect()).collect();
    let norms: Vec<f64> = centred.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        values[i][i] = 1.0;
        for j in i + 1..k {
            let r = if norms[i] > 0.0 && norms[j] > 0.0 {
                let dot: f64 = centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    CorrelationMatrix {
        labels: labels.iter().map(|s| s.to_string()).collect(),
        values,
    }
}

/// Correlation of the numeric and boolean parameters with RMSE over the
/// successful trials. Needs at least three of them.
pub fn correlation_matrix(results: &[TrialResult]) -> Result<CorrelationMatrix> {
    let data: Vec<Vec<f64>> = ok_results(results).map(|(r, rmse)| numeric_row(&r.config, rmse).to_vec()).collect();
    if data.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            have: data.len(),
        });
    }
    Ok(pearson_matrix(&CORRELATION_LABELS, &data))
}

/// One row of the best-configurations table.
#[derive(Clone, Debug, PartialEq)]
pub struct TopRow {
    pub set: usize,
    pub hidden_layers: Vec<usize>,
    pub weight_decay: f64,
    pub drop_prob: f64,
    pub noise_prob: f64,
    pub optimizer: OptimizerKind,
    pub activation: ActivationKind,
    pub decoder_constraint: bool,
    pub mean_normalization: bool,
    pub prediction_rounding: bool,
    pub pivot: Pivot,
    pub rmse: f64,
    pub lr: f64,
    pub seed: u64,
}

pub const TOP_COLUMNS: [&str; 14] = [
    "Set", "HLs", "WeD", "DrP", "NoP", "Opt", "Act", "DeC", "MeN", "PrR", "PI", "RMSE", "LR", "seed",
];

impl TopRow {
    pub fn from_result(set: usize, result: &TrialResult, rmse: f64) -> Self {
        let c = &result.config;
        TopRow {
            set,
            hidden_layers: c.hidden_layers.clone(),
            weight_decay: c.weight_decay,
            drop_prob: c.drop_prob,
            noise_prob: c.noise_prob,
            optimizer: c.optimizer,
            activation: c.activation,
            decoder_constraint: c.decoder_constraint,
            mean_normalization: c.mean_normalization,
            prediction_rounding: c.prediction_rounding,
            pivot: c.pivot,
            rmse,
            lr: c.lr,
            seed: result.seed,
        }
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.set.to_string(),
            format_list(&self.hidden_layers),
            self.weight_decay.to_string(),
            self.drop_prob.to_string(),
            self.noise_prob.to_string(),
            self.optimizer.to_string(),
            self.activation.to_string(),
            self.decoder_constraint.to_string(),
            self.mean_normalization.to_string(),
            self.prediction_rounding.to_string(),
            format_list(&self.pivot.indexes()),
            self.rmse.to_string(),
            self.lr.to_string(),
            self.seed.to_string(),
        ]
    }

    fn parse_fields(f: &csv::StringRecord) -> Result<Self, String> {
        if f.len() != TOP_COLUMNS.len() {
            return Err(format!("expected {} fields, got {}", TOP_COLUMNS.len(), f.len()));
        }
        let num = |i: usize| -> Result<f64, String> { f[i].trim().parse().map_err(|_| format!("{}: malformed `{}`", TOP_COLUMNS[i], &f[i])) };
        let boolean = |i: usize| -> Result<bool, String> { f[i].trim().parse().map_err(|_| format!("{}: malformed `{}`", TOP_COLUMNS[i], &f[i])) };
        Ok(TopRow {
            set: f[0].trim().parse().map_err(|_| format!("Set: malformed `{}`", &f[0]))?,
            hidden_layers: parse_list(&f[1])?,
            weight_decay: num(2)?,
            drop_prob: num(3)?,
            noise_prob: num(4)?,
            optimizer: f[5].parse()?,
            activation: f[6].parse()?,
            decoder_constraint: boolean(7)?,
            mean_normalization: boolean(8)?,
            prediction_rounding: boolean(9)?,
            pivot: f[10].parse()?,
            rmse: num(11)?,
            lr: num(12)?,
            seed: f[13].trim().parse().map_err(|_| format!("seed: malformed `{}`", &f[13]))?,
        })
    }
}

/// The `k` successful trials with the lowest RMSE, ties broken by trial id.
pub fn top_k(results: &[TrialResult], k: usize) -> Result<Vec<TopRow>> {
    let mut ok: Vec<(&TrialResult, f64)> = ok_results(results).collect();
    if ok.is_empty() {
        return Err(Error::EmptyResults);
    }
    ok.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.trial_id.cmp(&b.0.trial_id)));
    Ok(ok.into_iter().take(k).enumerate().map(|(i, (r, rmse))| TopRow::from_result(i + 1, r, rmse)).collect())
}

pub fn top_to_csv(rows: &[TopRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TOP_COLUMNS)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("ascii csv"))
}

pub fn parse_top(text: &str) -> Result<Vec<TopRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != TOP_COLUMNS {
        return Err(Error::Parse {
            line: 1,
            message: "top-k header does not match the expected columns".into(),
        });
    }
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            TopRow::parse_fields(&rec).map_err(|message| Error::Parse { line, message })
        })
        .collect()
}
