//! Epoch loop, the masked held-out evaluation protocol, and prediction.

use std::time::Instant;

use crate::autoenc::{build_model, dense_refeed, forward, round_to_grid, train_step, FlexModel, Mode};
use crate::config::ModelConfig;
use crate::data::{compute_means, dense_batch, make_batches, MeanTable, RatingTable, RowMatrix};
use crate::error::{Error, Result};
use crate::nn::{streams, RngStream};
use crate::optim::Optimizer;
use crate::scalar::Scalar;

/// Rows forwarded together during evaluation.
const EVAL_BATCH: usize = 256;

/// Outcome of one train-and-evaluate run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rmse: f64,
    /// Number of held-out ratings the RMSE is computed over.
    pub evaluated_count: usize,
    /// Training-loss RMSE after each epoch.
    pub train_history: Vec<f64>,
    pub seconds: f64,
}

/// Train and test rows after splitting and pivoting, plus train-side means.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: RowMatrix,
    pub test: RowMatrix,
    pub means: MeanTable,
}

impl Prepared {
    pub fn new(config: &ModelConfig, table: &RatingTable) -> Result<Self> {
        config.validate()?;
        if table.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (train, test) = table.split(config.test_split_rate, config.seed)?;
        let train = RowMatrix::pivot(&train, config.pivot);
        let test = RowMatrix::pivot(&test, config.pivot);
        let means = compute_means(&train)?;
        Ok(Prepared { train, test, means })
    }
}

/// Runs `config.epochs` epochs of mini-batch training.
///
/// Each epoch reshuffles rows, takes one update per batch followed by
/// `config.dense_refeed` re-fed updates, and reports
/// `√(Σ squared error / Σ mask)` over that epoch's (corrupted) batches to
/// `on_epoch`. A non-finite loss aborts with [`Error::Diverged`].
pub fn fit<T: Scalar>(
    model: &mut FlexModel<T>,
    config: &ModelConfig,
    train: &RowMatrix,
    means: &MeanTable,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    let root = RngStream::new(config.seed);
    let mut shuffle = root.fork(streams::SHUFFLE);
    let mut corrupt = root.fork(streams::CORRUPT);
    let mut optimizer = Optimizer::new(config.optimizer, &model.param_lens(), config.lr, config.weight_decay);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let batches = make_batches::<T>(
            train,
            means,
            config.train_batch_size,
            config.mean_normalization,
            shuffle.next_u64(),
        );
        let (mut sq, mut count) = (0.0, 0.0);
        for batch in &batches {
            let Some((loss, trace)) = train_step(model, batch, &mut optimizer, &mut corrupt)? else {
                continue;
            };
            if !loss.mmse.is_finite() {
                return Err(Error::Diverged { epoch, loss: loss.mmse });
            }
            sq += loss.mmse * loss.observed_count;
            count += loss.observed_count;
            if config.dense_refeed > 0 {
                let refed = dense_refeed(
                    model,
                    &trace,
                    batch,
                    config.dense_refeed,
                    config.dense_refeed_rounding,
                    &mut optimizer,
                    &mut corrupt,
                )?;
                if let Some(l) = refed.filter(|l| !l.mmse.is_finite()) {
                    return Err(Error::Diverged { epoch, loss: l.mmse });
                }
            }
        }
        let rmse = if count > 0.0 { (sq / count).sqrt() } else { 0.0 };
        if !model.is_finite() {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
        history.push(rmse);
        on_epoch(epoch, rmse);
    }
    Ok(history)
}

/// Builds, trains and evaluates a model on `table`.
pub fn train<T: Scalar>(config: &ModelConfig, table: &RatingTable) -> Result<(FlexModel<T>, EvalReport)> {
    train_with(config, table, |_, _| {})
}

/// [`train`] with a per-epoch callback receiving `(epoch, train_rmse)`.
pub fn train_with<T: Scalar>(
    config: &ModelConfig,
    table: &RatingTable,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(FlexModel<T>, EvalReport)> {
    let start = Instant::now();
    let data = Prepared::new(config, table)?;
    let mut model = build_model::<T>(config, data.train.n_cols())?;
    let history = fit(&mut model, config, &data.train, &data.means, on_epoch)?;
    let mut report = evaluate(&model, config, &data.train, &data.test, &data.means)?;
    report.train_history = history;
    report.seconds = start.elapsed().as_secs_f64();
    Ok((model, report))
}

/// Held-out evaluation.
///
/// Each row's test ratings are split by a seeded draw: a `test_mask_rate`
/// fraction become targets, the rest join the row's train ratings as input.
/// Predictions are denormalized (and optionally rounded) before the squared
/// error against each target is accumulated. Rows without targets are
/// skipped.
pub fn evaluate<T: Scalar>(
    model: &FlexModel<T>,
    config: &ModelConfig,
    train: &RowMatrix,
    test: &RowMatrix,
    means: &MeanTable,
) -> Result<EvalReport> {
    if train.n_rows() != test.n_rows() || train.n_cols() != test.n_cols() {
        return Err(Error::shape(
            "evaluate",
            format!("train {}x{}", train.n_rows(), train.n_cols()),
            format!("test {}x{}", test.n_rows(), test.n_cols()),
        ));
    }
    let mut rng = RngStream::new(config.seed).fork(streams::EVAL_MASK);
    let mut cases = Vec::new();
    for i in 0..test.n_rows() {
        let (cols, vals) = test.row(i);
        let mut input: Vec<(u32, f32)> = train.row(i).0.iter().copied().zip(train.row(i).1.iter().copied()).collect();
        let mut targets = Vec::new();
        for (&c, &v) in cols.iter().zip(vals) {
            if rng.bernoulli(config.test_mask_rate) {
                targets.push((c, v));
            } else {
                input.push((c, v));
            }
        }
        if !targets.is_empty() {
            input.sort_unstable_by_key(|e| e.0);
            cases.push(EvalCase { row: i, input, targets });
        }
    }
    if cases.is_empty() {
        return Err(Error::EmptyEvaluation);
    }

    let (mut sq, mut count) = (0.0f64, 0usize);
    for chunk in cases.chunks(EVAL_BATCH) {
        let predictions = predict_rows(model, config, chunk, means)?;
        for (case, pred) in chunk.iter().zip(&predictions) {
            for &(c, v) in &case.targets {
                let e = pred[c as usize] - v as f64;
                sq += e * e;
                count += 1;
            }
        }
    }
    Ok(EvalReport {
        rmse: (sq / count as f64).sqrt(),
        evaluated_count: count,
        train_history: Vec::new(),
        seconds: 0.0,
    })
}

struct EvalCase {
    row: usize,
    input: Vec<(u32, f32)>,
    targets: Vec<(u32, f32)>,
}

fn predict_rows<T: Scalar>(
    model: &FlexModel<T>,
    config: &ModelConfig,
    cases: &[EvalCase],
    means: &MeanTable,
) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<usize> = cases.iter().map(|c| c.row).collect();
    let split: Vec<(Vec<u32>, Vec<f32>)> = cases.iter().map(|c| c.input.iter().copied().unzip()).collect();
    let entries: Vec<(&[u32], &[f32])> = split.iter().map(|(c, v)| (c.as_slice(), v.as_slice())).collect();
    let men = config.mean_normalization.then_some(means);
    let batch = dense_batch::<T>(&rows, &entries, model.input_dim(), men);
    let out = forward(model, &batch, Mode::Eval, &mut RngStream::new(0))?.into_output();
    Ok(rows
        .iter()
        .enumerate()
        .map(|(r, &row)| {
            let mu = men.map_or(0.0, |m| m.mean(row));
            out.row(r)
                .iter()
                .map(|&q| finish_prediction(q.as_f64() + mu, config.prediction_rounding))
                .collect()
        })
        .collect())
}

fn finish_prediction(value: f64, rounding: bool) -> f64 {
    if rounding {
        round_to_grid(value)
    } else {
        value
    }
}

/// Predicts every column of a single row from its known ratings.
///
/// `mean` is the row's mean when the model was trained with mean
/// normalization; it is subtracted from the input and added to the output.
pub fn predict_row<T: Scalar>(
    model: &FlexModel<T>,
    cols: &[u32],
    values: &[f32],
    mean: Option<f64>,
    rounding: bool,
) -> Result<Vec<f64>> {
    let n = model.input_dim();
    if let Some(&c) = cols.iter().find(|&&c| c as usize >= n) {
        return Err(Error::shape("predict_row", format!("{n} columns"), format!("column {c}")));
    }
    let means = mean.map(|m| MeanTable {
        row_means: vec![m],
        global: m,
    });
    let batch = dense_batch::<T>(&[0], &[(cols, values)], n, means.as_ref());
    let out = forward(model, &batch, Mode::Eval, &mut RngStream::new(0))?.into_output();
    let mu = mean.unwrap_or(0.0);
    Ok(out.row(0).iter().map(|&q| finish_prediction(q.as_f64() + mu, rounding)).collect())
}

/// The `n` highest scores as `(index, score)`, ties broken by lower index.
pub fn top_n(scores: &[f64], n: usize) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(n);
    ranked
}

/// Eval-mode reconstruction RMSE over the observed entries of `rows`, on the
/// rating scale.
pub fn reconstruction_rmse<T: Scalar>(
    model: &FlexModel<T>,
    config: &ModelConfig,
    rows: &RowMatrix,
    means: &MeanTable,
) -> Result<f64> {
    let cases: Vec<EvalCase> = (0..rows.n_rows())
        .filter(|&i| rows.row_len(i) > 0)
        .map(|i| {
            let (c, v) = rows.row(i);
            let entries: Vec<(u32, f32)> = c.iter().copied().zip(v.iter().copied()).collect();
            EvalCase {
                row: i,
                input: entries.clone(),
                targets: entries,
            }
        })
        .collect();
    if cases.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let (mut sq, mut count) = (0.0f64, 0usize);
    for chunk in cases.chunks(EVAL_BATCH) {
        for (case, pred) in chunk.iter().zip(predict_rows(model, config, chunk, means)?) {
            for &(c, v) in &case.targets {
                sq += (pred[c as usize] - v as f64).powi(2);
                count += 1;
            }
        }
    }
    Ok((sq / count as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoenc::is_on_grid;
    use crate::config::Pivot;
    use crate::data::InputFormat;
    use crate::optim::OptimizerKind;

    fn toy_table(users: u32, items: u32, density: f64, seed: u64) -> RatingTable {
        let mut rng = RngStream::new(seed);
        let mut text = String::new();
        for u in 1..=users {
            for i in 1..=items {
                if rng.uniform() < density {
                    let r = 1 + (u as usize + i as usize + rng.below(2)) % 5;
                    text.push_str(&format!("{u}\t{i}\t{r}\t0\n"));
                }
            }
        }
        RatingTable::parse(&text, InputFormat::Tab4).unwrap()
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            hidden_layers: vec![8],
            epochs: 3,
            train_batch_size: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn overfits_a_memorizable_matrix() {
        let rows: Vec<Vec<(u32, f32)>> = (0..4)
            .map(|i| (0..4).map(|j| (j as u32, (1 + (i * 3 + j * 2) % 5) as f32)).collect())
            .collect();
        let train = RowMatrix::from_rows(Pivot::User, 4, &rows).unwrap();
        let means = compute_means(&train).unwrap();
        let config = ModelConfig {
            hidden_layers: vec![8],
            optimizer: OptimizerKind::Sgd,
            lr: 0.01,
            weight_decay: 0.0,
            drop_prob: 0.0,
            noise_prob: 0.0,
            dense_refeed: 0,
            mean_normalization: false,
            train_batch_size: 4,
            epochs: 500,
            ..ModelConfig::default()
        };
        let mut model = FlexModel::<f32>::zeros(&[4, 8], None, false, 0.0, 0.0).unwrap();
        model.init_weights(&mut RngStream::new(1));
        fit(&mut model, &config, &train, &means, |_, _| {}).unwrap();
        let rmse = reconstruction_rmse(&model, &config, &train, &means).unwrap();
        assert!(rmse < 0.05, "{rmse}");
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let table = toy_table(12, 10, 0.6, 1);
        let config = ModelConfig { epochs: 0, ..small_config() };
        let (model, report) = train::<f32>(&config, &table).unwrap();
        let init: FlexModel<f32> = build_model(&config, table.items().len()).unwrap();
        assert_eq!(model, init);
        assert!(report.train_history.is_empty());
        assert!(report.evaluated_count >= 1);
    }

    #[test]
    fn identical_seeds_give_identical_reports() {
        let table = toy_table(20, 15, 0.5, 2);
        let config = small_config();
        let (m1, r1) = train::<f32>(&config, &table).unwrap();
        let (m2, r2) = train::<f32>(&config, &table).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1.train_history, r2.train_history);
        assert_eq!(r1.rmse.to_bits(), r2.rmse.to_bits());
        assert_eq!(r1.evaluated_count, r2.evaluated_count);
    }

    #[test]
    fn zero_model_predicts_row_means_exactly() {
        let table = toy_table(10, 8, 0.7, 3);
        let config = ModelConfig {
            hidden_layers: vec![4],
            ..small_config()
        };
        let data = Prepared::new(&config, &table).unwrap();
        let model = FlexModel::<f64>::zeros(&[8, 4], None, false, 0.0, 0.0).unwrap();
        for i in 0..data.train.n_rows() {
            let (c, v) = data.train.row(i);
            let mu = data.means.mean(i);
            let pred = predict_row(&model, c, v, Some(mu), false).unwrap();
            assert!(pred.iter().all(|&p| p == mu));
        }
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let table = toy_table(10, 8, 0.7, 3);
        let config = ModelConfig {
            mean_normalization: true,
            test_mask_rate: 0.5,
            ..small_config()
        };
        let mut data = Prepared::new(&config, &table).unwrap();
        // Make every test rating equal its row mean; a zero model then
        // predicts each one exactly.
        let rows: Vec<Vec<(u32, f32)>> = (0..data.test.n_rows())
            .map(|i| data.test.row(i).0.iter().map(|&c| (c, data.means.mean(i) as f32)).collect())
            .collect();
        data.test = RowMatrix::from_rows(Pivot::User, data.test.n_cols(), &rows).unwrap();
        data.means.row_means.iter_mut().for_each(|m| *m = (*m as f32) as f64);
        let model = FlexModel::<f64>::zeros(&[8, 4], None, false, 0.0, 0.0).unwrap();
        let report = evaluate(&model, &config, &data.train, &data.test, &data.means).unwrap();
        assert_eq!(report.rmse, 0.0);
    }

    #[test]
    fn target_values_never_reach_the_input() {
        let table = toy_table(16, 12, 0.6, 4);
        let config = ModelConfig { test_mask_rate: 0.5, ..small_config() };
        let data = Prepared::new(&config, &table).unwrap();
        let mut model: FlexModel<f64> = build_model(&config, data.train.n_cols()).unwrap();
        fit(&mut model, &config, &data.train, &data.means, |_, _| {}).unwrap();
        let base = evaluate(&model, &config, &data.train, &data.test, &data.means).unwrap();

        // Reflect every target value (v -> 6 - v). If targets never enter the
        // input, the new RMSE must equal one recomputed from predictions made
        // without any target values.
        let mut rng = RngStream::new(config.seed).fork(streams::EVAL_MASK);
        let mut rows = Vec::new();
        let mut shifted = 0;
        for i in 0..data.test.n_rows() {
            let (c, v) = data.test.row(i);
            let mut row = Vec::new();
            for (&c, &v) in c.iter().zip(v) {
                if rng.bernoulli(config.test_mask_rate) {
                    row.push((c, 6.0 - v));
                    shifted += 1;
                } else {
                    row.push((c, v));
                }
            }
            rows.push(row);
        }
        assert!(shifted > 0);
        let perturbed = RowMatrix::from_rows(Pivot::User, data.test.n_cols(), &rows).unwrap();
        let moved = evaluate(&model, &config, &data.train, &perturbed, &data.means).unwrap();
        assert_eq!(moved.evaluated_count, base.evaluated_count);

        let mut rng = RngStream::new(config.seed).fork(streams::EVAL_MASK);
        let (mut sq, mut n) = (0.0, 0);
        for i in 0..data.test.n_rows() {
            let (tc, tv) = data.test.row(i);
            let mut input: Vec<(u32, f32)> = data.train.row(i).0.iter().copied().zip(data.train.row(i).1.iter().copied()).collect();
            let mut targets = Vec::new();
            for (&c, &v) in tc.iter().zip(tv) {
                if rng.bernoulli(config.test_mask_rate) {
                    targets.push((c, 6.0 - v));
                } else {
                    input.push((c, v));
                }
            }
            if targets.is_empty() {
                continue;
            }
            input.sort_unstable_by_key(|e| e.0);
            let (c, v): (Vec<u32>, Vec<f32>) = input.into_iter().unzip();
            let pred = predict_row(&model, &c, &v, Some(data.means.mean(i)), false).unwrap();
            for (c, v) in targets {
                sq += (pred[c as usize] - v as f64).powi(2);
                n += 1;
            }
        }
        assert_eq!(n, moved.evaluated_count);
        assert!(((sq / n as f64).sqrt() - moved.rmse).abs() < 1e-12);
    }

    #[test]
    fn rounded_predictions_lie_on_the_grid() {
        let table = toy_table(10, 8, 0.7, 5);
        let config = small_config();
        let data = Prepared::new(&config, &table).unwrap();
        let model: FlexModel<f32> = build_model(&config, data.train.n_cols()).unwrap();
        let (c, v) = data.train.row(0);
        let pred = predict_row(&model, c, v, Some(data.means.mean(0)), true).unwrap();
        assert!(pred.iter().all(|&p| is_on_grid(p)));
    }

    #[test]
    fn empty_row_prediction_is_finite() {
        let config = small_config();
        let model: FlexModel<f32> = build_model(&config, 7).unwrap();
        let pred = predict_row(&model, &[], &[], Some(3.5), false).unwrap();
        assert_eq!(pred.len(), 7);
        assert!(pred.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn top_n_matches_a_full_sort() {
        let mut rng = RngStream::new(6);
        let scores: Vec<f64> = (0..50).map(|_| rng.uniform()).collect();
        let mut sorted: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        assert_eq!(top_n(&scores, 10), sorted[..10].to_vec());
        assert_eq!(top_n(&[1.0, 2.0, 2.0, 0.5], 2), vec![(1, 2.0), (2, 2.0)]);
        assert_eq!(top_n(&[1.0], 5).len(), 1);
    }

    #[test]
    fn tiny_mask_rate_can_leave_nothing_to_evaluate() {
        let table = toy_table(4, 4, 0.5, 7);
        let config = ModelConfig {
            test_mask_rate: 0.0,
            ..small_config()
        };
        assert!(matches!(train::<f32>(&config, &table), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn divergence_names_the_epoch() {
        let table = toy_table(20, 15, 0.5, 8);
        let config = ModelConfig {
            lr: 1e6,
            optimizer: OptimizerKind::Sgd,
            mean_normalization: false,
            epochs: 20,
            ..small_config()
        };
        match train::<f32>(&config, &table) {
            Err(Error::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
