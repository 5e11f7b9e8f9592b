//! Dense arithmetic, activations, seeded randomness and masks.

mod activation;
mod gradcheck;
mod matrix;
mod rng;

pub use activation::{
    apply as apply_activation, apply_grad as apply_activation_grad, ActivationKind, ELU_ALPHA,
    LRELU_SLOPE, SELU_ALPHA, SELU_LAMBDA,
};
pub use gradcheck::grad_check;
pub use matrix::{gemm, DenseMatrix, MatView};
pub use rng::{streams, RngStream};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) fn check_probability(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidProbability(p))
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1/(1-p)`, so every entry has expectation 1.
pub fn dropout_mask<T: Scalar>(rng: &mut RngStream, p: f64, len: usize) -> Result<Vec<T>> {
    check_probability(p)?;
    let keep = T::lit(1.0 / (1.0 - p));
    Ok((0..len)
        .map(|_| if rng.uniform() < p { T::zero() } else { keep })
        .collect())
}

/// Input-corruption mask: 0 with probability `p`, otherwise exactly 1.
pub fn noise_mask<T: Scalar>(rng: &mut RngStream, p: f64, len: usize) -> Result<Vec<T>> {
    check_probability(p)?;
    Ok((0..len)
        .map(|_| if rng.uniform() < p { T::zero() } else { T::one() })
        .collect())
}
