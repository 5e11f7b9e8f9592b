use std::fmt;
use std::str::FromStr;

use crate::scalar::Scalar;

/// Negative-side slope of LRELU.
pub const LRELU_SLOPE: f64 = 0.01;
/// ELU saturation scale.
pub const ELU_ALPHA: f64 = 1.0;
/// Self-normalizing constants for SELU.
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Selu,
    Relu,
    Relu6,
    Elu,
    Lrelu,
    Sigmoid,
    Tanh,
    Swish,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 8] = [
        ActivationKind::Selu,
        ActivationKind::Relu,
        ActivationKind::Relu6,
        ActivationKind::Elu,
        ActivationKind::Lrelu,
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Swish,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Selu => "SELU",
            ActivationKind::Relu => "RELU",
            ActivationKind::Relu6 => "RELU6",
            ActivationKind::Elu => "ELU",
            ActivationKind::Lrelu => "LRELU",
            ActivationKind::Sigmoid => "SIGMOID",
            ActivationKind::Tanh => "TANH",
            ActivationKind::Swish => "SWISH",
        }
    }

    /// Points where the derivative jumps.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            ActivationKind::Relu | ActivationKind::Lrelu | ActivationKind::Elu | ActivationKind::Selu => &[0.0],
            ActivationKind::Relu6 => &[0.0, 6.0],
            ActivationKind::Sigmoid | ActivationKind::Tanh | ActivationKind::Swish => &[],
        }
    }

    pub fn activate<T: Scalar>(self, x: T) -> T {
        let zero = T::zero();
        match self {
            ActivationKind::Relu => x.max(zero),
            ActivationKind::Relu6 => x.max(zero).min(T::lit(6.0)),
            ActivationKind::Elu => elu(x, T::lit(ELU_ALPHA)),
            ActivationKind::Lrelu => {
                if x > zero {
                    x
                } else {
                    T::lit(LRELU_SLOPE) * x
                }
            }
            ActivationKind::Selu => T::lit(SELU_LAMBDA) * elu(x, T::lit(SELU_ALPHA)),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Swish => x * sigmoid(x),
        }
    }

    /// Exact derivative; at a kink the right-hand derivative.
    pub fn activate_grad<T: Scalar>(self, x: T) -> T {
        let zero = T::zero();
        let one = T::one();
        match self {
            ActivationKind::Relu => {
                if x >= zero {
                    one
                } else {
                    zero
                }
            }
            ActivationKind::Relu6 => {
                if x >= zero && x < T::lit(6.0) {
                    one
                } else {
                    zero
                }
            }
            ActivationKind::Elu => {
                if x >= zero {
                    one
                } else {
                    T::lit(ELU_ALPHA) * x.exp()
                }
            }
            ActivationKind::Lrelu => {
                if x >= zero {
                    one
                } else {
                    T::lit(LRELU_SLOPE)
                }
            }
            ActivationKind::Selu => {
                let lambda = T::lit(SELU_LAMBDA);
                if x >= zero {
                    lambda
                } else {
                    lambda * T::lit(SELU_ALPHA) * x.exp()
                }
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (one - s)
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                one - t * t
            }
            ActivationKind::Swish => {
                let s = sigmoid(x);
                s + x * s * (one - s)
            }
        }
    }
}

fn elu<T: Scalar>(x: T, alpha: T) -> T {
    if x > T::zero() {
        x
    } else {
        alpha * x.exp_m1()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    // Split by sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Applies an optional activation; `None` is the identity (linear layer).
pub fn apply<T: Scalar>(act: Option<ActivationKind>, x: T) -> T {
    act.map_or(x, |a| a.activate(x))
}

pub fn apply_grad<T: Scalar>(act: Option<ActivationKind>, x: T) -> T {
    act.map_or(T::one(), |a| a.activate_grad(x))
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.name() == upper)
            .ok_or_else(|| format!("unknown activation `{s}`"))
    }
}
