use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture of the gated ConvNet. Dropout values are retain
/// probabilities; per-layer hidden units, kernel widths and dropout are
/// interpolated linearly from the first to the last conv layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub n_conv_layers: usize,
    pub dropout_first: f64,
    pub dropout_last: f64,
    pub hu_first: usize,
    pub hu_last: usize,
    pub kw_first: usize,
    pub kw_last: usize,
    pub fc_size: usize,
    #[serde(default = "default_labels")]
    pub n_labels: usize,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
}

fn default_labels() -> usize {
    30
}

fn default_input_dim() -> usize {
    40
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub hu: usize,
    pub kw: usize,
    /// Retain probability.
    pub dropout: f64,
}

fn lerp(first: f64, last: f64, i: usize, n: usize) -> f64 {
    if n <= 1 {
        first
    } else {
        first + i as f64 * (last - first) / (n - 1) as f64
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

impl ArchSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidArch(msg.to_string()));
        if self.n_conv_layers == 0 {
            return bad("n_conv_layers must be >= 1");
        }
        for (name, p) in [
            ("dropout_first", self.dropout_first),
            ("dropout_last", self.dropout_last),
        ] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(ModelError::InvalidArch(format!(
                    "{name} must be a retain probability in (0, 1], got {p}"
                )));
            }
        }
        if self.kw_first == 0 || self.kw_last == 0 {
            return bad("kernel widths must be >= 1");
        }
        if self.hu_first == 0 || self.hu_last == 0 || self.fc_size == 0 {
            return bad("hidden sizes must be >= 1");
        }
        if self.n_labels == 0 || self.input_dim == 0 {
            return bad("n_labels and input_dim must be >= 1");
        }
        Ok(())
    }

    /// Per-layer `(hu, kw, dropout)`, rounding hu and kw half-up.
    pub fn expand(&self) -> Vec<LayerSpec> {
        let n = self.n_conv_layers;
        (0..n)
            .map(|i| LayerSpec {
                hu: round_half_up(lerp(self.hu_first as f64, self.hu_last as f64, i, n)),
                kw: round_half_up(lerp(self.kw_first as f64, self.kw_last as f64, i, n)),
                dropout: lerp(self.dropout_first, self.dropout_last, i, n),
            })
            .collect()
    }

    /// Frames lost by the conv stack, `sum(kw_i - 1)`.
    pub fn total_pad(&self) -> usize {
        self.expand().iter().map(|l| l.kw - 1).sum()
    }

    /// Trainable parameter count, including weight-norm scales.
    pub fn param_count(&self) -> usize {
        let mut d_in = self.input_dim;
        let mut total = 0;
        let glu = |d_in: usize, d_out: usize, kw: usize| 2 * (d_out * d_in * kw + 2 * d_out);
        for l in self.expand() {
            total += glu(d_in, l.hu, l.kw);
            d_in = l.hu;
        }
        total += glu(d_in, self.fc_size, 1);
        total += self.n_labels * self.fc_size + 2 * self.n_labels;
        total
    }

    pub fn wsj_low_dropout() -> Self {
        Self {
            n_conv_layers: 17,
            dropout_first: 0.25,
            dropout_last: 0.25,
            hu_first: 100,
            hu_last: 375,
            kw_first: 3,
            kw_last: 21,
            fc_size: 1000,
            n_labels: 30,
            input_dim: 40,
        }
    }

    pub fn libri_low_dropout() -> Self {
        Self {
            n_conv_layers: 17,
            dropout_first: 0.25,
            dropout_last: 0.25,
            hu_first: 200,
            hu_last: 750,
            kw_first: 13,
            kw_last: 27,
            fc_size: 1500,
            n_labels: 30,
            input_dim: 40,
        }
    }

    pub fn libri_high_dropout() -> Self {
        Self {
            n_conv_layers: 19,
            dropout_first: 0.20,
            dropout_last: 0.60,
            hu_first: 200,
            hu_last: 1000,
            kw_first: 13,
            kw_last: 29,
            fc_size: 2000,
            n_labels: 30,
            input_dim: 40,
        }
    }
}
