//! Parameter update rules with coupled L2 weight decay.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const RMSPROP_RHO: f64 = 0.9;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adagrad,
    Rmsprop,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Sgd,
        OptimizerKind::Adam,
        OptimizerKind::Adagrad,
        OptimizerKind::Rmsprop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "SGD",
            OptimizerKind::Adam => "ADAM",
            OptimizerKind::Adagrad => "ADAGRAD",
            OptimizerKind::Rmsprop => "RMSPROP",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == upper)
            .ok_or_else(|| format!("unknown optimizer `{s}`"))
    }
}

/// A mutable parameter buffer handed to the optimizer.
pub struct ParamSlot<'a, T> {
    pub values: &'a mut [T],
    /// Weight matrices take L2 decay; biases do not.
    pub decay: bool,
}

/// Per-parameter accumulators for one training run.
#[derive(Clone, Debug)]
pub struct OptimState<T> {
    kind: OptimizerKind,
    /// ADAM first moment.
    first: Vec<Vec<T>>,
    /// ADAM/RMSPROP second moment, ADAGRAD squared-gradient sum.
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(kind: OptimizerKind, lens: &[usize]) -> Self {
        let zeros = |on: bool| {
            lens.iter()
                .map(|&n| if on { vec![T::zero(); n] } else { Vec::new() })
                .collect()
        };
        OptimState {
            kind,
            first: zeros(kind == OptimizerKind::Adam),
            second: zeros(kind != OptimizerKind::Sgd),
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update over every parameter.
    ///
    /// The effective gradient is `g + weight_decay·w` for decayed slots, then
    /// the kind's rule is applied. RMSPROP divides its decayed average by
    /// `1 - ρᵗ` like ADAM does, which bounds its first step by `lr`.
    pub fn step(
        &mut self,
        params: &mut [ParamSlot<'_, T>],
        grads: &[&[T]],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        let expected = self.first.len().max(self.second.len());
        if self.kind != OptimizerKind::Sgd && params.len() != expected {
            return Err(Error::shape("optimizer_step", format!("{expected} accumulators"), format!("{} params", params.len())));
        }
        if params.len() != grads.len() {
            return Err(Error::shape("optimizer_step", format!("{} params", params.len()), format!("{} grads", grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let acc = self.second.get(i).map_or(p.values.len(), Vec::len);
            if p.values.len() != g.len() || (self.kind != OptimizerKind::Sgd && acc != g.len()) {
                return Err(Error::shape("optimizer_step", format!("param {i} of len {}", p.values.len()), format!("grad of len {}", g.len())));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let lr_t = T::lit(lr);
        let wd = T::lit(weight_decay);
        let eps = T::lit(EPSILON);
        let one = T::one();

        for (i, (slot, grad)) in params.iter_mut().zip(grads).enumerate() {
            let decay = slot.decay && weight_decay != 0.0;
            let values = &mut *slot.values;
            let effective = |w: T, g: T| if decay { g + wd * w } else { g };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &g) in values.iter_mut().zip(grad.iter()) {
                        *w -= lr_t * effective(*w, g);
                    }
                }
                OptimizerKind::Adam => {
                    let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
                    let c1 = T::lit(1.0 - ADAM_BETA1.powi(t));
                    let c2 = T::lit(1.0 - ADAM_BETA2.powi(t));
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (((w, &g), m), v) in values.iter_mut().zip(grad.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let g = effective(*w, g);
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w -= lr_t * m_hat / (v_hat.sqrt() + eps);
                    }
                }
                OptimizerKind::Adagrad => {
                    for ((w, &g), s) in values.iter_mut().zip(grad.iter()).zip(self.second[i].iter_mut()) {
                        let g = effective(*w, g);
                        *s += g * g;
                        *w -= lr_t * g / (s.sqrt() + eps);
                    }
                }
                OptimizerKind::Rmsprop => {
                    let rho = T::lit(RMSPROP_RHO);
                    let c = T::lit(1.0 - RMSPROP_RHO.powi(t));
                    for ((w, &g), s) in values.iter_mut().zip(grad.iter()).zip(self.second[i].iter_mut()) {
                        let g = effective(*w, g);
                        *s = rho * *s + (one - rho) * g * g;
                        *w -= lr_t * g / ((*s / c).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// An [`OptimState`] together with its learning rate and weight decay.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub state: OptimState<T>,
    pub lr: f64,
    pub weight_decay: f64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lens: &[usize], lr: f64, weight_decay: f64) -> Self {
        Optimizer {
            state: OptimState::new(kind, lens),
            lr,
            weight_decay,
        }
    }

    pub fn apply(&mut self, params: &mut [ParamSlot<'_, T>], grads: &[&[T]]) -> Result<()> {
        self.state.step(params, grads, self.lr, self.weight_decay)
    }
}

/// Free-function form of [`OptimState::step`].
pub fn optimizer_step<T: Scalar>(
    state: &mut OptimState<T>,
    params: &mut [ParamSlot<'_, T>],
    grads: &[&[T]],
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    state.step(params, grads, lr, weight_decay)
}
