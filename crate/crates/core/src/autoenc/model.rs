use crate::config::{ModelConfig, MAX_HIDDEN_LAYERS};
use crate::error::{Error, Result};
use crate::nn::{streams, ActivationKind, DenseMatrix, MatView, RngStream};
use crate::optim::ParamSlot;
use crate::scalar::Scalar;

/// One fully connected layer `c = f(W·x + b)`.
///
/// A tied decoder layer stores no weight: its matrix is the transpose of the
/// encoder layer named by `tied_to`, read through a transposed view.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    weight: Option<DenseMatrix<T>>,
    pub bias: Vec<T>,
    /// `None` is a linear layer.
    pub activation: Option<ActivationKind>,
    pub tied_to: Option<usize>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn weight(&self) -> Option<&DenseMatrix<T>> {
        self.weight.as_ref()
    }

    pub fn is_tied(&self) -> bool {
        self.tied_to.is_some()
    }
}

/// Symmetric encoder/decoder stack `n → h₁ → … → h_k → … → h₁ → n`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlexModel<T> {
    n: usize,
    encoder: Vec<LayerParams<T>>,
    decoder: Vec<LayerParams<T>>,
    pub drop_prob: f64,
    pub noise_prob: f64,
}

/// Gradient buffers laid out like the model's free parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub encoder_weights: Vec<DenseMatrix<T>>,
    pub encoder_biases: Vec<Vec<T>>,
    pub decoder_biases: Vec<Vec<T>>,
    /// `None` for tied layers, whose gradient lands in the encoder weight.
    pub decoder_weights: Vec<Option<DenseMatrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Flat views in canonical parameter order (see [`FlexModel::param_slots_mut`]).
    pub fn as_slices(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        out.extend(self.encoder_weights.iter().map(DenseMatrix::as_slice));
        out.extend(self.encoder_biases.iter().map(Vec::as_slice));
        out.extend(self.decoder_biases.iter().map(Vec::as_slice));
        out.extend(self.decoder_weights.iter().flatten().map(DenseMatrix::as_slice));
        out
    }

    pub fn max_abs(&self) -> T {
        self.as_slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Glorot-style uniform bound for a layer.
pub fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl<T: Scalar> FlexModel<T> {
    /// Zero-initialized stack over `dims = [n, h₁, …, h_k]`.
    pub fn zeros(
        dims: &[usize],
        activation: Option<ActivationKind>,
        tied: bool,
        drop_prob: f64,
        noise_prob: f64,
    ) -> Result<Self> {
        crate::nn::check_probability(drop_prob)?;
        crate::nn::check_probability(noise_prob)?;
        if dims.len() < 2 {
            return Err(Error::config("hidden_layers", 0, "at least one hidden layer is required"));
        }
        if dims.len() - 1 > MAX_HIDDEN_LAYERS {
            return Err(Error::config(
                "hidden_layers",
                0,
                format!("at most {MAX_HIDDEN_LAYERS} encoder layers, got {}", dims.len() - 1),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::config("hidden_layers", 0, "layer sizes must be at least 1"));
        }
        let k = dims.len() - 1;
        let encoder = (0..k)
            .map(|l| LayerParams {
                in_dim: dims[l],
                out_dim: dims[l + 1],
                weight: Some(DenseMatrix::zeros(dims[l + 1], dims[l])),
                bias: vec![T::zero(); dims[l + 1]],
                activation,
                tied_to: None,
            })
            .collect();
        let decoder = (0..k)
            .map(|j| {
                let mirror = k - 1 - j;
                let (in_dim, out_dim) = (dims[mirror + 1], dims[mirror]);
                LayerParams {
                    in_dim,
                    out_dim,
                    weight: (!tied).then(|| DenseMatrix::zeros(out_dim, in_dim)),
                    bias: vec![T::zero(); out_dim],
                    activation: if j + 1 == k { None } else { activation },
                    tied_to: tied.then_some(mirror),
                }
            })
            .collect();
        Ok(FlexModel {
            n: dims[0],
            encoder,
            decoder,
            drop_prob,
            noise_prob,
        })
    }

    /// Fills every stored weight from `U(-√(6/(in+out)), +√(6/(in+out)))`.
    pub fn init_weights(&mut self, rng: &mut RngStream) {
        for layer in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            let bound = init_bound(layer.in_dim, layer.out_dim);
            if let Some(w) = layer.weight.as_mut() {
                for v in w.as_mut_slice() {
                    *v = T::lit(rng.uniform_range(-bound, bound));
                }
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.n
    }

    /// `[n, h₁, …, h_k]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.n)
            .chain(self.encoder.iter().map(|l| l.out_dim))
            .collect()
    }

    /// Number of encoder layers; the bottleneck is the output of the last one.
    pub fn depth(&self) -> usize {
        self.encoder.len()
    }

    pub fn is_tied(&self) -> bool {
        self.decoder.iter().any(LayerParams::is_tied)
    }

    pub fn activation(&self) -> Option<ActivationKind> {
        self.encoder[0].activation
    }

    pub fn encoder(&self) -> &[LayerParams<T>] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[LayerParams<T>] {
        &self.decoder
    }

    /// Layers in forward order: encoder then decoder.
    pub fn layers(&self) -> impl Iterator<Item = &LayerParams<T>> {
        self.encoder.iter().chain(self.decoder.iter())
    }

    pub(crate) fn layer(&self, index: usize) -> &LayerParams<T> {
        let k = self.encoder.len();
        if index < k {
            &self.encoder[index]
        } else {
            &self.decoder[index - k]
        }
    }

    /// Weight of a layer in forward order as an `out×in` view.
    pub(crate) fn weight_view(&self, index: usize) -> MatView<'_, T> {
        let layer = self.layer(index);
        match (&layer.weight, layer.tied_to) {
            (Some(w), _) => w.view(),
            (None, Some(mirror)) => self.encoder[mirror]
                .weight
                .as_ref()
                .expect("encoder weights are always stored")
                .view()
                .t(),
            (None, None) => unreachable!("untied layer without weight"),
        }
    }

    pub fn encoder_weight(&self, l: usize) -> &DenseMatrix<T> {
        self.encoder[l].weight.as_ref().expect("encoder weights are always stored")
    }

    pub fn encoder_weight_mut(&mut self, l: usize) -> &mut DenseMatrix<T> {
        self.encoder[l].weight.as_mut().expect("encoder weights are always stored")
    }

    /// Materialized decoder weight; for tied layers, a fresh transpose.
    pub fn decoder_weight(&self, j: usize) -> DenseMatrix<T> {
        self.weight_view(self.encoder.len() + j).to_matrix()
    }

    /// Stored decoder weight, `None` when tied.
    pub fn decoder_weight_mut(&mut self, j: usize) -> Option<&mut DenseMatrix<T>> {
        self.decoder[j].weight.as_mut()
    }

    pub fn encoder_bias_mut(&mut self, l: usize) -> &mut Vec<T> {
        &mut self.encoder[l].bias
    }

    pub fn decoder_bias_mut(&mut self, j: usize) -> &mut Vec<T> {
        &mut self.decoder[j].bias
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            encoder_weights: self
                .encoder
                .iter()
                .map(|l| DenseMatrix::zeros(l.out_dim, l.in_dim))
                .collect(),
            encoder_biases: self.encoder.iter().map(|l| vec![T::zero(); l.out_dim]).collect(),
            decoder_biases: self.decoder.iter().map(|l| vec![T::zero(); l.out_dim]).collect(),
            decoder_weights: self
                .decoder
                .iter()
                .map(|l| l.weight.as_ref().map(|w| DenseMatrix::zeros(w.rows(), w.cols())))
                .collect(),
        }
    }

    /// Free parameters in canonical order: encoder weights, encoder biases,
    /// decoder biases, untied decoder weights.
    pub fn param_slots_mut(&mut self) -> Vec<ParamSlot<'_, T>> {
        let mut enc_w = Vec::new();
        let mut enc_b = Vec::new();
        for layer in &mut self.encoder {
            let LayerParams { weight, bias, .. } = layer;
            enc_w.push(ParamSlot {
                values: weight.as_mut().expect("encoder weight").as_mut_slice(),
                decay: true,
            });
            enc_b.push(ParamSlot {
                values: bias.as_mut_slice(),
                decay: false,
            });
        }
        let mut dec_b = Vec::new();
        let mut dec_w = Vec::new();
        for layer in &mut self.decoder {
            let LayerParams { weight, bias, .. } = layer;
            dec_b.push(ParamSlot {
                values: bias.as_mut_slice(),
                decay: false,
            });
            if let Some(w) = weight.as_mut() {
                dec_w.push(ParamSlot {
                    values: w.as_mut_slice(),
                    decay: true,
                });
            }
        }
        enc_w.into_iter().chain(enc_b).chain(dec_b).chain(dec_w).collect()
    }

    /// Lengths of [`FlexModel::param_slots_mut`], in the same order.
    pub fn param_lens(&self) -> Vec<usize> {
        let mut lens: Vec<usize> = self.encoder.iter().map(|l| l.in_dim * l.out_dim).collect();
        lens.extend(self.encoder.iter().map(|l| l.out_dim));
        lens.extend(self.decoder.iter().map(|l| l.out_dim));
        lens.extend(self.decoder.iter().filter(|l| !l.is_tied()).map(|l| l.in_dim * l.out_dim));
        lens
    }

    pub fn param_count(&self) -> usize {
        self.param_lens().iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(|l| {
            l.bias.iter().all(|v| v.is_finite()) && l.weight.as_ref().is_none_or(DenseMatrix::is_finite)
        })
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> FlexModel<U> {
        let conv = |l: &LayerParams<T>| LayerParams {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            weight: l.weight.as_ref().map(|w| {
                DenseMatrix::new(w.rows(), w.cols(), w.as_slice().iter().map(|v| U::lit(v.as_f64())).collect())
                    .expect("same shape")
            }),
            bias: l.bias.iter().map(|v| U::lit(v.as_f64())).collect(),
            activation: l.activation,
            tied_to: l.tied_to,
        };
        FlexModel {
            n: self.n,
            encoder: self.encoder.iter().map(conv).collect(),
            decoder: self.decoder.iter().map(conv).collect(),
            drop_prob: self.drop_prob,
            noise_prob: self.noise_prob,
        }
    }
}

/// Builds and initializes the network described by `config` for input width `n`.
///
/// Hidden layers use the configured activation; the final decoder layer is
/// linear so predictions can leave the activation's range.
pub fn build_model<T: Scalar>(config: &ModelConfig, n: usize) -> Result<FlexModel<T>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if config.hidden_layers.is_empty() {
        return Err(Error::config("hidden_layers", 0, "empty hidden-layer list"));
    }
    let dims: Vec<usize> = std::iter::once(n).chain(config.hidden_layers.iter().copied()).collect();
    let mut model = FlexModel::zeros(
        &dims,
        Some(config.activation),
        config.decoder_constraint,
        config.drop_prob,
        config.noise_prob,
    )?;
    model.init_weights(&mut RngStream::new(config.seed).fork(streams::INIT));
    Ok(model)
}
