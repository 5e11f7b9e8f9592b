use crate::autoenc::{backward, forward, masked_mse, FlexModel, Mode, RowBatch};
use crate::error::Result;
use crate::scalar::Scalar;

use super::RngStream;

fn loss<T: Scalar>(model: &FlexModel<T>, batch: &RowBatch<T>) -> Result<f64> {
    let trace = forward(model, batch, Mode::Eval, &mut RngStream::new(0))?;
    Ok(masked_mse(&batch.y, trace.output(), &batch.mask)?.mmse)
}

/// Largest relative disagreement between backprop and central differences.
///
/// Every free parameter is perturbed by `±eps`; the relative error is
/// `|analytic − fd| / max(|analytic|, |fd|, 1e-8)`. Noise and dropout are
/// disabled (eval-mode forward), so run this on `f64` models.
pub fn grad_check<T: Scalar>(model: &FlexModel<T>, batch: &RowBatch<T>, eps: f64) -> Result<f64> {
    let trace = forward(model, batch, Mode::Eval, &mut RngStream::new(0))?;
    let grads = backward(model, &trace, batch)?;
    let analytic: Vec<Vec<f64>> = grads
        .as_slices()
        .iter()
        .map(|s| s.iter().map(|v| v.as_f64()).collect())
        .collect();

    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (slot, values) in analytic.iter().enumerate() {
        for (i, &an) in values.iter().enumerate() {
            let original = probe.param_slots_mut()[slot].values[i];
            probe.param_slots_mut()[slot].values[i] = original + T::lit(eps);
            let plus = loss(&probe, batch)?;
            probe.param_slots_mut()[slot].values[i] = original - T::lit(eps);
            let minus = loss(&probe, batch)?;
            probe.param_slots_mut()[slot].values[i] = original;
            let fd = (plus - minus) / (2.0 * eps);
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoenc::build_model;
    use crate::config::ModelConfig;
    use crate::nn::{ActivationKind, DenseMatrix};

    fn batch(rows: usize, n: usize, seed: u64) -> RowBatch<f64> {
        let mut rng = RngStream::new(seed);
        let x = DenseMatrix::from_fn(rows, n, |_, _| {
            if rng.uniform() < 0.6 {
                (rng.below(9) + 2) as f64 * 0.5
            } else {
                0.0
            }
        });
        let mask = x.map(|v| if v != 0.0 { 1.0 } else { 0.0 });
        RowBatch::new(x.clone(), x, mask).unwrap()
    }

    #[test]
    fn linear_single_sample() {
        let mut model = FlexModel::<f64>::zeros(&[5, 3], None, false, 0.0, 0.0).unwrap();
        model.init_weights(&mut RngStream::new(4));
        let err = grad_check(&model, &batch(1, 5, 2), 1e-6).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn three_layer_nets_all_activations() {
        for tied in [false, true] {
            for act in ActivationKind::ALL {
                let config = ModelConfig {
                    hidden_layers: vec![5, 3, 4],
                    activation: act,
                    decoder_constraint: tied,
                    seed: 17,
                    ..ModelConfig::default()
                };
                let mut model: FlexModel<f64> = build_model(&config, 6).unwrap();
                let mut rng = RngStream::new(9);
                for j in 0..model.depth() {
                    for b in model.encoder_bias_mut(j).iter_mut() {
                        *b = rng.uniform_range(-0.5, 0.5);
                    }
                    for b in model.decoder_bias_mut(j).iter_mut() {
                        *b = rng.uniform_range(-0.5, 0.5);
                    }
                }
                let err = grad_check(&model, &batch(3, 6, 5), 1e-5).unwrap();
                assert!(err < 1e-4, "{act} tied={tied}: {err}");
            }
        }
    }
}
