//! Gated ConvNet acoustic model.
//!
//! A stack of weight-normalized GLU convolutions (widths and sizes from
//! [`ArchSpec::expand`]), a width-1 GLU layer of `fc_size` units, and a
//! linear output layer with one score per label. Dropout follows every GLU
//! layer, never the output layer.

mod arch;
mod checkpoint;
mod layers;

pub use arch::{ArchSpec, LayerSpec};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{GluLayer, LinearLayer, WeightNorm};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::pad;
use crate::tensor::Matrix;
use layers::{GluCache, LinearCache};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("zero-norm weight direction in output channel {channel}")]
    ZeroNorm { channel: usize },
    #[error("shape mismatch: expected dimension {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("sequence shorter than kernel: {frames} frames, kernel width {kw}")]
    SequenceTooShort { frames: usize, kw: usize },
    #[error("dropout retain probability must be in (0, 1], got {0}")]
    InvalidDropout(f64),
    #[error("backward called without a recorded train-mode forward pass")]
    NoTape,
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Bernoulli keep-mask with retain probability `p`.
pub fn dropout_mask(len: usize, p: f64, seed: u64) -> Result<Vec<bool>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mask_from_rng(len, p, &mut rng)
}

fn mask_from_rng<R: Rng>(len: usize, p: f64, rng: &mut R) -> Result<Vec<bool>, ModelError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(ModelError::InvalidDropout(p));
    }
    Ok((0..len).map(|_| rng.gen::<f64>() < p).collect())
}

/// Inverted dropout: kept entries are divided by `p`, dropped ones zeroed.
pub fn apply_dropout(x: &mut [f64], mask: &[bool], p: f64) {
    let scale = 1.0 / p;
    for (v, &keep) in x.iter_mut().zip(mask) {
        *v = if keep { *v * scale } else { 0.0 };
    }
}

/// All trainable tensors of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub conv: Vec<GluLayer>,
    pub fc1: GluLayer,
    pub fc_out: LinearLayer,
}

impl ModelParams {
    /// Tensors in declaration order: per conv layer `W.v, W.g, V.v, V.g, b,
    /// c`; then the same for fc1; then `out.v, out.g, out.b`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.conv {
            out.extend(l.tensors());
        }
        out.extend(self.fc1.tensors());
        out.extend(self.fc_out.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.conv {
            out.extend(l.tensors_mut());
        }
        out.extend(self.fc1.tensors_mut());
        out.extend(self.fc_out.tensors_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// A zero-filled container with the same shapes, used for gradients.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }
}

/// Recorded intermediates of a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    conv: Vec<(GluCache, Option<Vec<bool>>)>,
    fc1: (GluCache, Option<Vec<bool>>),
    out: LinearCache,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `T x n_labels` unnormalized scores.
    pub emissions: Matrix,
    tape: Option<Tape>,
}

impl ForwardPass {
    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticModel {
    pub arch: ArchSpec,
    pub params: ModelParams,
}

impl AcousticModel {
    /// Randomly initialized model.
    pub fn new(arch: ArchSpec, seed: u64) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = Vec::with_capacity(arch.n_conv_layers);
        let mut d_in = arch.input_dim;
        for l in arch.expand() {
            conv.push(GluLayer::init(d_in, l.hu, l.kw, &mut rng));
            d_in = l.hu;
        }
        let fc1 = GluLayer::init(d_in, arch.fc_size, 1, &mut rng);
        let fc_out = LinearLayer::init(arch.fc_size, arch.n_labels, &mut rng);
        Ok(Self {
            arch,
            params: ModelParams { conv, fc1, fc_out },
        })
    }

    /// Model with every tensor zero (directions included); callers fill in
    /// values before use.
    pub fn zeros(arch: ArchSpec) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut conv = Vec::with_capacity(arch.n_conv_layers);
        let mut d_in = arch.input_dim;
        for l in arch.expand() {
            conv.push(GluLayer::zeros(d_in, l.hu, l.kw));
            d_in = l.hu;
        }
        let fc1 = GluLayer::zeros(d_in, arch.fc_size, 1);
        let fc_out = LinearLayer::zeros(arch.fc_size, arch.n_labels);
        Ok(Self {
            arch,
            params: ModelParams { conv, fc1, fc_out },
        })
    }

    pub fn total_pad(&self) -> usize {
        self.params.conv.iter().map(|l| l.kw - 1).sum()
    }

    fn dropout_rates(&self) -> (Vec<f64>, f64) {
        let layers = self.arch.expand();
        (
            layers.iter().map(|l| l.dropout).collect(),
            self.arch.dropout_last,
        )
    }

    /// Runs the network on already padded input. Train mode applies dropout
    /// (masks drawn from `seed`) and records a tape for [`backward`](Self::backward).
    pub fn forward(&self, input: &Matrix, mode: Mode, seed: u64) -> Result<ForwardPass, ModelError> {
        if input.cols() != self.arch.input_dim {
            return Err(ModelError::ShapeMismatch {
                expected: self.arch.input_dim,
                got: input.cols(),
            });
        }
        let (conv_p, fc_p) = self.dropout_rates();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = mode == Mode::Train;

        let mut run_glu = |layer: &GluLayer,
                           x: &Matrix,
                           p: f64|
         -> Result<(Matrix, GluCache, Option<Vec<bool>>), ModelError> {
            let (mut h, cache) = layer.forward_cached(x)?;
            let mask = if train && p < 1.0 {
                let m = mask_from_rng(h.as_slice().len(), p, &mut rng)?;
                apply_dropout(h.as_mut_slice(), &m, p);
                Some(m)
            } else {
                None
            };
            Ok((h, cache, mask))
        };

        let mut conv_tape = Vec::with_capacity(self.params.conv.len());
        let mut x = input.clone();
        for (layer, &p) in self.params.conv.iter().zip(&conv_p) {
            let (h, cache, mask) = run_glu(layer, &x, p)?;
            conv_tape.push((cache, mask));
            x = h;
        }
        let (h, fc1_cache, fc1_mask) = run_glu(&self.params.fc1, &x, fc_p)?;
        let (emissions, out_cache) = self.params.fc_out.forward_cached(&h)?;

        let tape = train.then_some(Tape {
            conv: conv_tape,
            fc1: (fc1_cache, fc1_mask),
            out: out_cache,
        });
        Ok(ForwardPass { emissions, tape })
    }

    /// Pads unpadded features by `total_pad` and runs [`forward`](Self::forward);
    /// the output has as many frames as `features`.
    pub fn forward_unpadded(
        &self,
        features: &Matrix,
        mode: Mode,
        seed: u64,
    ) -> Result<ForwardPass, ModelError> {
        self.forward(&pad(features, self.total_pad()), mode, seed)
    }

    /// Reverse-mode pass: gradients of a scalar loss w.r.t. every parameter
    /// given `d loss / d emissions`. Reuses the forward pass's dropout masks.
    pub fn backward(&self, pass: &ForwardPass, grad_emissions: &Matrix) -> Result<ModelParams, ModelError> {
        let tape = pass.tape.as_ref().ok_or(ModelError::NoTape)?;
        if grad_emissions.rows() != pass.emissions.rows()
            || grad_emissions.cols() != pass.emissions.cols()
        {
            return Err(ModelError::ShapeMismatch {
                expected: pass.emissions.cols(),
                got: grad_emissions.cols(),
            });
        }
        let (conv_p, fc_p) = self.dropout_rates();
        let mut grads = self.params.zeros_like();

        let mut g = self
            .params
            .fc_out
            .backward(&tape.out, grad_emissions, &mut grads.fc_out);
        undo_dropout(&mut g, tape.fc1.1.as_deref(), fc_p);
        let mut g = self
            .params
            .fc1
            .backward(&tape.fc1.0, &g, &mut grads.fc1, true)
            .expect("input gradient requested");
        for i in (0..self.params.conv.len()).rev() {
            let (cache, mask) = &tape.conv[i];
            undo_dropout(&mut g, mask.as_deref(), conv_p[i]);
            let next = self.params.conv[i].backward(cache, &g, &mut grads.conv[i], i > 0);
            match next {
                Some(n) => g = n,
                None => break,
            }
        }
        Ok(grads)
    }
}

fn undo_dropout(g: &mut Matrix, mask: Option<&[bool]>, p: f64) {
    if let Some(mask) = mask {
        apply_dropout(g.as_mut_slice(), mask, p);
    }
}
