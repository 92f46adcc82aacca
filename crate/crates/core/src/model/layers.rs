//! Weight-normalized gated convolution and linear layers with hand-written
//! backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tensor::{axpy, dot, sigmoid, Matrix};

/// Kernel in weight-norm form: per output channel, `w = g * v / ||v||`.
/// `direction` is stored `out x fan_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightNorm {
    pub direction: Vec<f64>,
    pub scale: Vec<f64>,
    pub fan_in: usize,
}

impl WeightNorm {
    pub fn zeros(out: usize, fan_in: usize) -> Self {
        Self {
            direction: vec![0.0; out * fan_in],
            scale: vec![0.0; out],
            fan_in,
        }
    }

    /// Uniform direction in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, scale set to
    /// the direction norm so the initial effective weight equals `v`.
    pub fn init<R: Rng>(out: usize, fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let direction: Vec<f64> = (0..out * fan_in)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let scale = direction
            .chunks_exact(fan_in)
            .map(|row| dot(row, row).sqrt())
            .collect();
        Self {
            direction,
            scale,
            fan_in,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.scale.len()
    }

    /// Effective weights. Fails on a zero-norm direction row.
    pub fn effective(&self) -> Result<Vec<f64>, ModelError> {
        let mut w = Vec::with_capacity(self.direction.len());
        for (o, row) in self.direction.chunks_exact(self.fan_in).enumerate() {
            let norm = dot(row, row).sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(ModelError::ZeroNorm { channel: o });
            }
            let k = self.scale[o] / norm;
            w.extend(row.iter().map(|v| k * v));
        }
        Ok(w)
    }

    /// Chains `d loss / d w` into `grad.direction` and `grad.scale`.
    pub fn backward(&self, grad_w: &[f64], grad: &mut WeightNorm) {
        for o in 0..self.out_channels() {
            let range = o * self.fan_in..(o + 1) * self.fan_in;
            let v = &self.direction[range.clone()];
            let gw = &grad_w[range.clone()];
            let norm = dot(v, v).sqrt();
            let g = self.scale[o];
            let dg = dot(gw, v) / norm;
            grad.scale[o] += dg;
            let a = g / norm;
            let b = g * dg / (norm * norm);
            for ((dv, &gwi), &vi) in grad.direction[range].iter_mut().zip(gw).zip(v) {
                *dv += a * gwi - b * vi;
            }
        }
    }

    pub fn tensors(&self) -> [&[f64]; 2] {
        [&self.direction, &self.scale]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.direction, &mut self.scale]
    }
}

/// `h = (X*W + b) . sigmoid(X*V + c)` with a 1-D valid convolution of width
/// `kw`. Kernels are laid out `out x kw x in` so that a window of `kw`
/// consecutive input rows is one contiguous slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GluLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub kw: usize,
    pub w: WeightNorm,
    pub v: WeightNorm,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// Intermediates kept for the backward pass of one GLU layer.
#[derive(Debug, Clone)]
pub(crate) struct GluCache {
    input: Matrix,
    w: Vec<f64>,
    v: Vec<f64>,
    linear: Matrix,
    gate: Matrix,
}

impl GluLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, kw: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            kw,
            w: WeightNorm::zeros(out_dim, in_dim * kw),
            v: WeightNorm::zeros(out_dim, in_dim * kw),
            b: vec![0.0; out_dim],
            c: vec![0.0; out_dim],
        }
    }

    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, kw: usize, rng: &mut R) -> Self {
        Self {
            in_dim,
            out_dim,
            kw,
            w: WeightNorm::init(out_dim, in_dim * kw, rng),
            v: WeightNorm::init(out_dim, in_dim * kw, rng),
            b: vec![0.0; out_dim],
            c: vec![0.0; out_dim],
        }
    }

    pub fn output_frames(&self, input_frames: usize) -> Result<usize, ModelError> {
        if input_frames < self.kw {
            Err(ModelError::SequenceTooShort {
                frames: input_frames,
                kw: self.kw,
            })
        } else {
            Ok(input_frames - self.kw + 1)
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<usize, ModelError> {
        if x.cols() != self.in_dim {
            return Err(ModelError::ShapeMismatch {
                expected: self.in_dim,
                got: x.cols(),
            });
        }
        self.output_frames(x.rows())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, ModelError> {
        Ok(self.forward_cached(x)?.0)
    }

    pub(crate) fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, GluCache), ModelError> {
        let t_out = self.check_input(x)?;
        let w = self.w.effective()?;
        let v = self.v.effective()?;
        let fan_in = self.in_dim * self.kw;
        let mut linear = Matrix::zeros(t_out, self.out_dim);
        let mut gate = Matrix::zeros(t_out, self.out_dim);
        let mut out = Matrix::zeros(t_out, self.out_dim);
        for t in 0..t_out {
            let window = x.rows_slice(t, self.kw);
            for o in 0..self.out_dim {
                let kernel = o * fan_in..(o + 1) * fan_in;
                let a = self.b[o] + dot(&w[kernel.clone()], window);
                let s = sigmoid(self.c[o] + dot(&v[kernel], window));
                linear.set(t, o, a);
                gate.set(t, o, s);
                out.set(t, o, a * s);
            }
        }
        Ok((
            out,
            GluCache {
                input: x.clone(),
                w,
                v,
                linear,
                gate,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad`; returns `d loss / d X`
    /// when `want_input` is set.
    pub(crate) fn backward(
        &self,
        cache: &GluCache,
        grad_out: &Matrix,
        grad: &mut GluLayer,
        want_input: bool,
    ) -> Option<Matrix> {
        let fan_in = self.in_dim * self.kw;
        let t_out = grad_out.rows();
        let mut gw = vec![0.0; cache.w.len()];
        let mut gv = vec![0.0; cache.v.len()];
        let mut gx = want_input.then(|| Matrix::zeros(cache.input.rows(), self.in_dim));
        for t in 0..t_out {
            let window = cache.input.rows_slice(t, self.kw);
            for o in 0..self.out_dim {
                let dh = grad_out.get(t, o);
                if dh == 0.0 {
                    continue;
                }
                let a = cache.linear.get(t, o);
                let s = cache.gate.get(t, o);
                let da = dh * s;
                let db = dh * a * s * (1.0 - s);
                grad.b[o] += da;
                grad.c[o] += db;
                let kernel = o * fan_in..(o + 1) * fan_in;
                axpy(da, window, &mut gw[kernel.clone()]);
                axpy(db, window, &mut gv[kernel.clone()]);
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx.as_mut_slice()[t * self.in_dim..(t + self.kw) * self.in_dim];
                    axpy(da, &cache.w[kernel.clone()], dst);
                    axpy(db, &cache.v[kernel], dst);
                }
            }
        }
        self.w.backward(&gw, &mut grad.w);
        self.v.backward(&gv, &mut grad.v);
        gx
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let [wd, ws] = self.w.tensors();
        let [vd, vs] = self.v.tensors();
        vec![wd, ws, vd, vs, &self.b, &self.c]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let [wd, ws] = self.w.tensors_mut();
        let [vd, vs] = self.v.tensors_mut();
        vec![wd, ws, vd, vs, &mut self.b, &mut self.c]
    }
}

/// Frame-wise affine output layer, weight-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: WeightNorm,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LinearCache {
    input: Matrix,
    w: Vec<f64>,
}

impl LinearLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: WeightNorm::zeros(out_dim, in_dim),
            b: vec![0.0; out_dim],
        }
    }

    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            in_dim,
            out_dim,
            w: WeightNorm::init(out_dim, in_dim, rng),
            b: vec![0.0; out_dim],
        }
    }

    pub(crate) fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, LinearCache), ModelError> {
        if x.cols() != self.in_dim {
            return Err(ModelError::ShapeMismatch {
                expected: self.in_dim,
                got: x.cols(),
            });
        }
        let w = self.w.effective()?;
        let mut out = Matrix::zeros(x.rows(), self.out_dim);
        for t in 0..x.rows() {
            let row = x.row(t);
            for o in 0..self.out_dim {
                let v = self.b[o] + dot(&w[o * self.in_dim..(o + 1) * self.in_dim], row);
                out.set(t, o, v);
            }
        }
        Ok((
            out,
            LinearCache {
                input: x.clone(),
                w,
            },
        ))
    }

    pub(crate) fn backward(
        &self,
        cache: &LinearCache,
        grad_out: &Matrix,
        grad: &mut LinearLayer,
    ) -> Matrix {
        let mut gw = vec![0.0; cache.w.len()];
        let mut gx = Matrix::zeros(cache.input.rows(), self.in_dim);
        for t in 0..grad_out.rows() {
            let row = cache.input.row(t);
            for o in 0..self.out_dim {
                let d = grad_out.get(t, o);
                if d == 0.0 {
                    continue;
                }
                grad.b[o] += d;
                let kernel = o * self.in_dim..(o + 1) * self.in_dim;
                axpy(d, row, &mut gw[kernel.clone()]);
                axpy(d, &cache.w[kernel], gx.row_mut(t));
            }
        }
        self.w.backward(&gw, &mut grad.w);
        gx
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let [wd, ws] = self.w.tensors();
        vec![wd, ws, &self.b]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let [wd, ws] = self.w.tensors_mut();
        vec![wd, ws, &mut self.b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn unit_norm_direction_is_identity() {
        let wn = WeightNorm {
            direction: vec![0.6, 0.8, 0.0, 1.0],
            scale: vec![1.0, 1.0],
            fan_in: 2,
        };
        assert_eq!(wn.effective().unwrap(), wn.direction);
    }

    #[test]
    fn zero_norm_direction_rejected() {
        let wn = WeightNorm::zeros(2, 3);
        assert!(matches!(
            wn.effective(),
            Err(ModelError::ZeroNorm { channel: 0 })
        ));
    }

    #[test]
    fn direction_scale_invariance() {
        let mut r = rng();
        let wn = WeightNorm::init(3, 5, &mut r);
        let mut scaled = wn.clone();
        scaled.direction.iter_mut().for_each(|v| *v *= 3.7);
        for (a, b) in wn.effective().unwrap().iter().zip(scaled.effective().unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sequence_shorter_than_kernel() {
        let layer = GluLayer::init(2, 2, 4, &mut rng());
        let err = layer.forward(&Matrix::zeros(3, 2)).unwrap_err();
        assert!(err.to_string().contains("sequence shorter than kernel"));
    }

    #[test]
    fn zero_gate_input_halves_linear_path() {
        let mut r = rng();
        let mut layer = GluLayer::init(2, 3, 2, &mut r);
        layer.v.scale.iter_mut().for_each(|g| *g = 0.0);
        layer.b = vec![0.1, -0.2, 0.3];
        let x = Matrix::from_vec(4, 2, vec![0.5, -1.0, 2.0, 0.3, -0.7, 0.9, 1.1, 0.0]);
        let h = layer.forward(&x).unwrap();
        let w = layer.w.effective().unwrap();
        for t in 0..3 {
            for o in 0..3 {
                let a = layer.b[o] + dot(&w[o * 4..o * 4 + 4], x.rows_slice(t, 2));
                assert!((h.get(t, o) - 0.5 * a).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_linear_path_gives_zero() {
        let mut layer = GluLayer::init(2, 3, 2, &mut rng());
        layer.w.scale.iter_mut().for_each(|g| *g = 0.0);
        let x = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(layer.forward(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }
}
