use crate::error::{Error, Result};
use crate::nn::{apply_activation, apply_activation_grad, dropout_mask, gemm, noise_mask, DenseMatrix, RngStream};
use crate::scalar::Scalar;

use super::loss::loss_gradient;
use super::model::{FlexModel, Gradients};

/// Dense rows fed to the network.
///
/// `x` and `y` hold ratings (or mean-centred ratings) with missing entries
/// at 0; `mask` marks which entries count toward the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct RowBatch<T> {
    pub x: DenseMatrix<T>,
    pub y: DenseMatrix<T>,
    pub mask: DenseMatrix<T>,
    /// Pivoted row index of each batch row.
    pub rows: Vec<usize>,
    /// Per-row offset added back to reach the rating scale (mean
    /// normalization); `None` when values are raw ratings.
    pub row_means: Option<Vec<T>>,
}

impl<T: Scalar> RowBatch<T> {
    /// Batch whose input, target and mask are given explicitly.
    pub fn new(x: DenseMatrix<T>, y: DenseMatrix<T>, mask: DenseMatrix<T>) -> Result<Self> {
        if x.shape() != y.shape() || x.shape() != mask.shape() {
            return Err(Error::shape(
                "RowBatch",
                format!("x {:?}", x.shape()),
                format!("y {:?}, mask {:?}", y.shape(), mask.shape()),
            ));
        }
        let rows = (0..x.rows()).collect();
        Ok(RowBatch {
            x,
            y,
            mask,
            rows,
            row_means: None,
        })
    }

    /// Fully observed batch with `x = y`.
    pub fn dense(values: DenseMatrix<T>) -> Self {
        let mask = DenseMatrix::filled(values.rows(), values.cols(), T::one());
        RowBatch {
            rows: (0..values.rows()).collect(),
            x: values.clone(),
            y: values,
            mask,
            row_means: None,
        }
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.x.cols()
    }

    pub fn observed(&self) -> f64 {
        self.mask.as_slice().iter().map(|v| v.as_f64()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Input noise and bottleneck dropout active.
    Train,
    Eval,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// Network input after masking and corruption.
    pub input: DenseMatrix<T>,
    /// Pre-activations per layer, forward order.
    pub pre: Vec<DenseMatrix<T>>,
    /// Layer outputs per layer; the bottleneck entry is post-dropout.
    pub post: Vec<DenseMatrix<T>>,
    /// Bottleneck inverted-dropout mask, when dropout ran.
    pub dropout: Option<DenseMatrix<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Decoder output `q`.
    pub fn output(&self) -> &DenseMatrix<T> {
        self.post.last().expect("at least two layers")
    }

    pub fn into_output(mut self) -> DenseMatrix<T> {
        self.post.pop().expect("at least two layers")
    }
}

/// Runs the stack on `batch.x`.
///
/// Entries where `batch.mask` is 0 are zeroed before anything else, so
/// unobserved positions never reach the network. In train mode each input
/// entry is then zeroed with probability `noise_prob` (no rescale) and the
/// bottleneck output is multiplied by an inverted-dropout mask.
pub fn forward<T: Scalar>(
    model: &FlexModel<T>,
    batch: &RowBatch<T>,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<ForwardTrace<T>> {
    if batch.width() != model.input_dim() {
        return Err(Error::shape(
            "forward",
            format!("model input width {}", model.input_dim()),
            format!("batch width {}", batch.width()),
        ));
    }
    if batch.mask.shape() != batch.x.shape() {
        return Err(Error::shape("forward", format!("x {:?}", batch.x.shape()), format!("mask {:?}", batch.mask.shape())));
    }
    let b = batch.len();
    let mut input = batch.x.clone();
    for (v, &m) in input.as_mut_slice().iter_mut().zip(batch.mask.as_slice()) {
        if m == T::zero() {
            *v = T::zero();
        }
    }
    if mode == Mode::Train && model.noise_prob > 0.0 {
        let noise: Vec<T> = noise_mask(rng, model.noise_prob, input.as_slice().len())?;
        for (v, m) in input.as_mut_slice().iter_mut().zip(noise) {
            *v *= m;
        }
    }

    let depth = model.depth();
    let total = 2 * depth;
    let mut pre = Vec::with_capacity(total);
    let mut post: Vec<DenseMatrix<T>> = Vec::with_capacity(total);
    let mut dropout = None;
    for li in 0..total {
        let layer = model.layer(li);
        let prev = if li == 0 { &input } else { &post[li - 1] };
        let mut z = DenseMatrix::zeros(b, layer.out_dim);
        for r in 0..b {
            z.row_mut(r).copy_from_slice(&layer.bias);
        }
        gemm(T::one(), prev.view(), model.weight_view(li).t(), T::one(), &mut z)?;
        let mut a = match layer.activation {
            Some(_) => z.map(|v| apply_activation(layer.activation, v)),
            None => z.clone(),
        };
        if li + 1 == depth && mode == Mode::Train && model.drop_prob > 0.0 {
            let mask = DenseMatrix::new(b, layer.out_dim, dropout_mask(rng, model.drop_prob, b * layer.out_dim)?)?;
            for (v, &m) in a.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                *v *= m;
            }
            dropout = Some(mask);
        }
        pre.push(z);
        post.push(a);
    }
    Ok(ForwardTrace {
        input,
        pre,
        post,
        dropout,
    })
}

/// Exact gradients of the masked MSE of `trace` against `batch.y`.
///
/// Tied decoder layers contribute `a_prevᵀ·δ` to their mirror encoder
/// weight, on top of that layer's own `δᵀ·a_prev` term.
pub fn backward<T: Scalar>(model: &FlexModel<T>, trace: &ForwardTrace<T>, batch: &RowBatch<T>) -> Result<Gradients<T>> {
    let mut grads = model.zero_gradients();
    let mut delta = loss_gradient(&batch.y, trace.output(), &batch.mask)?;
    let depth = model.depth();
    for li in (0..2 * depth).rev() {
        let layer = model.layer(li);
        if li + 1 == depth {
            if let Some(mask) = &trace.dropout {
                for (d, &m) in delta.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *d *= m;
                }
            }
        }
        if layer.activation.is_some() {
            for (d, &z) in delta.as_mut_slice().iter_mut().zip(trace.pre[li].as_slice()) {
                *d *= apply_activation_grad(layer.activation, z);
            }
        }
        let prev = if li == 0 { &trace.input } else { &trace.post[li - 1] };

        if li < depth {
            gemm(T::one(), delta.view().t(), prev.view(), T::one(), &mut grads.encoder_weights[li])?;
            column_sums_into(&delta, &mut grads.encoder_biases[li]);
        } else {
            let j = li - depth;
            match (grads.decoder_weights[j].as_mut(), layer.tied_to) {
                (Some(gw), _) => gemm(T::one(), delta.view().t(), prev.view(), T::one(), gw)?,
                (None, Some(mirror)) => gemm(
                    T::one(),
                    prev.view().t(),
                    delta.view(),
                    T::one(),
                    &mut grads.encoder_weights[mirror],
                )?,
                (None, None) => unreachable!("untied layer without weight gradient"),
            }
            column_sums_into(&delta, &mut grads.decoder_biases[j]);
        }

        if li > 0 {
            let mut next = DenseMatrix::zeros(delta.rows(), layer.in_dim);
            gemm(T::one(), delta.view(), model.weight_view(li), T::zero(), &mut next)?;
            delta = next;
        }
    }
    Ok(grads)
}

fn column_sums_into<T: Scalar>(m: &DenseMatrix<T>, out: &mut [T]) {
    for r in 0..m.rows() {
        for (o, &v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
}
