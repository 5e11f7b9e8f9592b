use crate::error::Result;
use crate::nn::{DenseMatrix, RngStream};
use crate::optim::Optimizer;
use crate::scalar::Scalar;

use super::grid::round_to_grid;
use super::loss::{masked_mse, LossReport};
use super::model::{FlexModel, Gradients};
use super::network::{backward, forward, ForwardTrace, Mode, RowBatch};

impl<T: Scalar> FlexModel<T> {
    pub fn apply_gradients(&mut self, optimizer: &mut Optimizer<T>, grads: &Gradients<T>) -> Result<()> {
        let slices = grads.as_slices();
        optimizer.apply(&mut self.param_slots_mut(), &slices)
    }
}

/// One train-mode forward, loss, backward and optimizer update.
///
/// Returns `None` without touching the model when the batch has no observed
/// entries.
pub fn train_step<T: Scalar>(
    model: &mut FlexModel<T>,
    batch: &RowBatch<T>,
    optimizer: &mut Optimizer<T>,
    rng: &mut RngStream,
) -> Result<Option<(LossReport, ForwardTrace<T>)>> {
    if batch.observed() <= 0.0 {
        return Ok(None);
    }
    let trace = forward(model, batch, Mode::Train, rng)?;
    let loss = masked_mse(&batch.y, trace.output(), &batch.mask)?;
    if !loss.mmse.is_finite() {
        return Ok(Some((loss, trace)));
    }
    let grads = backward(model, &trace, batch)?;
    model.apply_gradients(optimizer, &grads)?;
    Ok(Some((loss, trace)))
}

/// Turns a network output into a re-feeding target.
///
/// With rounding on, each entry is snapped to the rating grid on the rating
/// scale: when the batch carries row means the value is shifted up by the
/// row mean, rounded, and shifted back.
pub fn refeed_target<T: Scalar>(output: &DenseMatrix<T>, row_means: Option<&[T]>, rounding: bool) -> DenseMatrix<T> {
    let mut target = output.clone();
    if rounding {
        for r in 0..target.rows() {
            let mu = row_means.map_or(T::zero(), |m| m[r]);
            for v in target.row_mut(r) {
                *v = round_to_grid(*v + mu) - mu;
            }
        }
    }
    target
}

/// Dense re-feeding: `k` extra updates, each treating the previous output
/// as a fully observed (gradient-detached) example.
///
/// Returns the loss of the last re-fed pass, or `None` when `k = 0`.
#[allow(clippy::too_many_arguments)]
pub fn dense_refeed<T: Scalar>(
    model: &mut FlexModel<T>,
    trace: &ForwardTrace<T>,
    batch: &RowBatch<T>,
    k: usize,
    rounding: bool,
    optimizer: &mut Optimizer<T>,
    rng: &mut RngStream,
) -> Result<Option<LossReport>> {
    let mut output = trace.output().clone();
    let mut last = None;
    for _ in 0..k {
        let target = refeed_target(&output, batch.row_means.as_deref(), rounding);
        let refed = RowBatch {
            mask: DenseMatrix::filled(target.rows(), target.cols(), T::one()),
            x: target.clone(),
            y: target,
            rows: batch.rows.clone(),
            row_means: batch.row_means.clone(),
        };
        let t = forward(model, &refed, Mode::Train, rng)?;
        let loss = masked_mse(&refed.y, t.output(), &refed.mask)?;
        if loss.mmse.is_finite() {
            let grads = backward(model, &t, &refed)?;
            model.apply_gradients(optimizer, &grads)?;
        }
        output = t.into_output();
        last = Some(loss);
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoenc::{build_model, grid::is_on_grid};
    use crate::config::ModelConfig;
    use crate::optim::OptimizerKind;

    fn setup() -> (FlexModel<f64>, RowBatch<f64>, Optimizer<f64>) {
        let config = ModelConfig {
            hidden_layers: vec![6, 3],
            noise_prob: 0.0,
            drop_prob: 0.0,
            ..ModelConfig::default()
        };
        let model = build_model(&config, 5).unwrap();
        let x = DenseMatrix::from_fn(4, 5, |i, j| if (i + j) % 2 == 0 { ((i + 2 * j) % 5 + 1) as f64 } else { 0.0 });
        let mask = x.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
        let batch = RowBatch::new(x.clone(), x, mask).unwrap();
        let opt = Optimizer::new(OptimizerKind::Adam, &model.param_lens(), 0.01, 0.0);
        (model, batch, opt)
    }

    #[test]
    fn zero_refeeds_leave_the_model_alone() {
        let (mut model, batch, mut opt) = setup();
        let mut rng = RngStream::new(1);
        let (_, trace) = train_step(&mut model, &batch, &mut opt, &mut rng).unwrap().unwrap();
        let after_primary = model.clone();
        let out = dense_refeed(&mut model, &trace, &batch, 0, true, &mut opt, &mut rng).unwrap();
        assert!(out.is_none());
        assert_eq!(model, after_primary);
        assert_eq!(opt.state.steps(), 1);
    }

    #[test]
    fn refeed_updates_k_times() {
        let (mut model, batch, mut opt) = setup();
        let mut rng = RngStream::new(1);
        let (_, trace) = train_step(&mut model, &batch, &mut opt, &mut rng).unwrap().unwrap();
        let out = dense_refeed(&mut model, &trace, &batch, 2, false, &mut opt, &mut rng).unwrap();
        assert!(out.unwrap().mmse.is_finite());
        assert_eq!(opt.state.steps(), 3);
    }

    #[test]
    fn rounded_targets_lie_on_grid() {
        let q = DenseMatrix::from_fn(3, 7, |i, j| (i as f64 - 1.3) * 2.7 + j as f64 * 0.61);
        let t = refeed_target(&q, None, true);
        assert!(t.as_slice().iter().all(|&v| is_on_grid(v)));
        let means = [3.2, 3.7, 2.9];
        let t = refeed_target(&q, Some(&means), true);
        for (r, &mu) in means.iter().enumerate() {
            assert!(t.row(r).iter().all(|&v| is_on_grid(v + mu)));
        }
        assert_eq!(refeed_target(&q, None, false), q);
    }

    #[test]
    fn identity_fixed_point_refeeds_with_zero_loss() {
        let mut model = FlexModel::<f64>::zeros(&[4, 4], None, false, 0.0, 0.0).unwrap();
        *model.encoder_weight_mut(0) = DenseMatrix::identity(4);
        *model.decoder_weight_mut(0).unwrap() = DenseMatrix::identity(4);
        let batch = RowBatch::dense(DenseMatrix::from_fn(2, 4, |i, j| (i + j + 1) as f64));
        let mut rng = RngStream::new(0);
        let trace = forward(&model, &batch, Mode::Train, &mut rng).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &model.param_lens(), 0.1, 0.0);
        let loss = dense_refeed(&mut model, &trace, &batch, 1, false, &mut opt, &mut rng).unwrap().unwrap();
        assert!(loss.mmse < 1e-20);
    }

    #[test]
    fn tied_weights_stay_tied_after_updates() {
        let config = ModelConfig {
            hidden_layers: vec![4, 2],
            decoder_constraint: true,
            ..ModelConfig::default()
        };
        let mut model: FlexModel<f64> = build_model(&config, 5).unwrap();
        let (_, batch, _) = setup();
        let mut opt = Optimizer::new(OptimizerKind::Rmsprop, &model.param_lens(), 0.01, 0.01);
        let mut rng = RngStream::new(2);
        let before = model.encoder_weight(0).clone();
        for _ in 0..3 {
            let (_, trace) = train_step(&mut model, &batch, &mut opt, &mut rng).unwrap().unwrap();
            dense_refeed(&mut model, &trace, &batch, 1, true, &mut opt, &mut rng).unwrap();
            for j in 0..model.depth() {
                let mirror = model.depth() - 1 - j;
                assert_eq!(model.decoder_weight(j), model.encoder_weight(mirror).transpose());
            }
        }
        assert_ne!(&before, model.encoder_weight(0));
    }

    #[test]
    fn empty_batch_is_skipped() {
        let (mut model, _, mut opt) = setup();
        let zeros = DenseMatrix::zeros(2, 5);
        let batch = RowBatch::new(zeros.clone(), zeros.clone(), zeros).unwrap();
        assert!(train_step(&mut model, &batch, &mut opt, &mut RngStream::new(0)).unwrap().is_none());
    }
}
