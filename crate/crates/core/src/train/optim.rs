use serde::{Deserialize, Serialize};

use super::TrainError;

/// How the global gradient norm is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    /// Rescale to norm `eps` only when the norm exceeds it.
    #[default]
    MaxNorm,
    /// `max(|g|, eps) * g / |g|`: small gradients are scaled up to `eps`,
    /// large ones pass through.
    Literal,
    Off,
}

pub fn global_norm(grads: &[&[f64]]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Clips the collection in place as one vector; returns the norm before
/// clipping. A zero gradient is left untouched.
pub fn clip_gradient(grads: &mut [&mut [f64]], eps: f64, mode: ClipMode) -> f64 {
    let norm = global_norm(&grads.iter().map(|g| &**g).collect::<Vec<_>>());
    if norm == 0.0 || !norm.is_finite() {
        return norm;
    }
    let scale = match mode {
        ClipMode::MaxNorm if norm > eps => eps / norm,
        ClipMode::Literal => norm.max(eps) / norm,
        _ => return norm,
    };
    rescale(grads, scale);
    if mode == ClipMode::MaxNorm {
        // rounding can leave the result a few ulps above eps
        for _ in 0..8 {
            let after = global_norm(&grads.iter().map(|g| &**g).collect::<Vec<_>>());
            if after <= eps {
                break;
            }
            rescale(grads, (eps / after).min(1.0 - f64::EPSILON));
        }
    }
    norm
}

fn rescale(grads: &mut [&mut [f64]], scale: f64) {
    for g in grads.iter_mut() {
        g.iter_mut().for_each(|x| *x *= scale);
    }
}

/// SGD with classical momentum: `v <- mu v - lr g; theta <- theta + v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(learning_rate: f64, momentum: f64, shapes: &[usize]) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }
}

pub fn sgd_momentum_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    opt: &mut OptimState,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != opt.velocity.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} parameter tensors, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            opt.velocity.len()
        )));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(&opt.velocity).enumerate() {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "tensor {i}: {} parameters, {} gradients, {} velocity",
                p.len(),
                g.len(),
                v.len()
            )));
        }
    }
    let (lr, mu) = (opt.learning_rate, opt.momentum);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut opt.velocity) {
        for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vi = mu * *vi - lr * gi;
            *pi += *vi;
        }
    }
    Ok(())
}
