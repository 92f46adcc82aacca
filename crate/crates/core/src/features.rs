//! Log-mel filterbank (MFSC) front end: framing, Hamming window, power
//! spectrum, triangular mel filters and log compression, plus per-utterance
//! normalization and the symmetric zero padding the conv stack needs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::tensor::Matrix;

pub const SAMPLE_RATE: u32 = 16_000;
/// Floor added to filterbank energies before the log.
pub const ENERGY_FLOOR: f64 = 1e-10;
/// Variance floor used by [`normalize`].
pub const VARIANCE_FLOOR: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("audio too short: {samples} samples, need at least {window} for one window")]
    AudioTooShort { samples: usize, window: usize },
    #[error("empty waveform")]
    Empty,
    #[error("unsupported sample rate {got} Hz (expected {expected} Hz)")]
    SampleRate { got: u32, expected: u32 },
    #[error("unsupported wav format: {0}")]
    Format(String),
    #[error("invalid frontend configuration: {0}")]
    Config(String),
    #[error("malformed feature file: {0}")]
    FeatureFile(String),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    /// Reads a mono 16-bit PCM RIFF/WAVE file. Stereo input is rejected.
    pub fn read_wav<P: AsRef<Path>>(path: P) -> Result<Self, FeatureError> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(FeatureError::Format(format!(
                "{} channels; only mono audio is accepted",
                spec.channels
            )));
        }
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(FeatureError::Format(format!(
                "{:?} {}-bit samples; only 16-bit PCM is accepted",
                spec.sample_format, spec.bits_per_sample
            )));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<Vec<_>, _>>()?;
        if samples.is_empty() {
            return Err(FeatureError::Empty);
        }
        Ok(Self {
            samples,
            sample_rate: spec.sample_rate,
        })
    }

    /// Writes the waveform as mono 16-bit PCM, clamping to [-1, 1].
    pub fn write_wav<P: AsRef<Path>>(&self, path: P) -> Result<(), FeatureError> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v)?;
        }
        writer.finalize()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfscConfig {
    pub n_mels: usize,
    pub window_ms: f64,
    pub stride_ms: f64,
    pub sample_rate: u32,
}

impl Default for MfscConfig {
    fn default() -> Self {
        Self {
            n_mels: 40,
            window_ms: 25.0,
            stride_ms: 10.0,
            sample_rate: SAMPLE_RATE,
        }
    }
}

impl MfscConfig {
    pub fn window_samples(&self) -> usize {
        (self.sample_rate as f64 * self.window_ms / 1000.0).round() as usize
    }

    pub fn stride_samples(&self) -> usize {
        (self.sample_rate as f64 * self.stride_ms / 1000.0).round() as usize
    }

    pub fn fft_size(&self) -> usize {
        self.window_samples().next_power_of_two()
    }

    /// Number of frames produced for `num_samples` input samples.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        let win = self.window_samples();
        if num_samples < win {
            0
        } else {
            (num_samples - win) / self.stride_samples() + 1
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters evaluated on the `fft_size / 2 + 1` bin
/// frequencies. Band edges are equally spaced in mel from 0 Hz to Nyquist.
pub fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32) -> Matrix {
    let n_bins = fft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut bank = Matrix::zeros(n_mels, n_bins);
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            let w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            bank.set(m, k, w);
        }
    }
    bank
}

/// Center frequency (Hz) of mel band `band`.
pub fn mel_band_center(band: usize, n_mels: usize, sample_rate: u32) -> f64 {
    let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
    mel_to_hz(mel_max * (band + 1) as f64 / (n_mels + 1) as f64)
}

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Reusable MFSC extractor holding the window, filterbank and FFT plan.
pub struct Mfsc {
    config: MfscConfig,
    window: Vec<f64>,
    filters: Matrix,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Mfsc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mfsc").field("config", &self.config).finish()
    }
}

impl Mfsc {
    pub fn new(config: MfscConfig) -> Result<Self, FeatureError> {
        if config.n_mels == 0 {
            return Err(FeatureError::Config("n_mels must be positive".into()));
        }
        if !(config.window_ms >= config.stride_ms && config.stride_ms > 0.0) {
            return Err(FeatureError::Config(
                "window_ms must be >= stride_ms > 0".into(),
            ));
        }
        if config.stride_samples() == 0 {
            return Err(FeatureError::Config("stride shorter than one sample".into()));
        }
        let n_fft = config.fft_size();
        let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
        Ok(Self {
            window: hamming(config.window_samples()),
            filters: mel_filterbank(config.n_mels, n_fft, config.sample_rate),
            fft,
            config,
        })
    }

    pub fn config(&self) -> &MfscConfig {
        &self.config
    }

    pub fn compute(&self, wave: &Waveform) -> Result<Matrix, FeatureError> {
        if wave.samples.is_empty() {
            return Err(FeatureError::Empty);
        }
        if wave.sample_rate != self.config.sample_rate {
            return Err(FeatureError::SampleRate {
                got: wave.sample_rate,
                expected: self.config.sample_rate,
            });
        }
        let win = self.config.window_samples();
        let stride = self.config.stride_samples();
        let n_frames = self.config.num_frames(wave.samples.len());
        if n_frames == 0 {
            return Err(FeatureError::AudioTooShort {
                samples: wave.samples.len(),
                window: win,
            });
        }
        let n_fft = self.config.fft_size();
        let n_bins = n_fft / 2 + 1;
        let mut out = Matrix::zeros(n_frames, self.config.n_mels);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut power = vec![0.0; n_bins];
        for t in 0..n_frames {
            let frame = &wave.samples[t * stride..t * stride + win];
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < win {
                    Complex::new(frame[i] as f64 * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let row = out.row_mut(t);
            for (m, v) in row.iter_mut().enumerate() {
                let energy = crate::tensor::dot(self.filters.row(m), &power);
                *v = (ENERGY_FLOOR + energy).ln();
            }
        }
        Ok(out)
    }
}

/// One-shot MFSC computation. Returns a `T x n_mels` matrix of log
/// filterbank energies.
pub fn compute_mfsc(
    wave: &Waveform,
    n_mels: usize,
    window_ms: f64,
    stride_ms: f64,
) -> Result<Matrix, FeatureError> {
    let config = MfscConfig {
        n_mels,
        window_ms,
        stride_ms,
        ..MfscConfig::default()
    };
    Mfsc::new(config)?.compute(wave)
}

/// Per-coefficient zero-mean, unit-variance normalization over the frames of
/// one sequence. Variances below [`VARIANCE_FLOOR`] are floored.
pub fn normalize(features: &Matrix) -> Matrix {
    let (t, d) = (features.rows(), features.cols());
    let mut out = features.clone();
    if t == 0 {
        return out;
    }
    for c in 0..d {
        let mean = (0..t).map(|r| features.get(r, c)).sum::<f64>() / t as f64;
        let var = (0..t)
            .map(|r| {
                let x = features.get(r, c) - mean;
                x * x
            })
            .sum::<f64>()
            / t as f64;
        let scale = 1.0 / var.max(VARIANCE_FLOOR).sqrt();
        for r in 0..t {
            out.set(r, c, (features.get(r, c) - mean) * scale);
        }
    }
    out
}

/// Adds `total_pad` zero frames: `ceil(total_pad / 2)` in front and
/// `floor(total_pad / 2)` at the back.
pub fn pad(features: &Matrix, total_pad: usize) -> Matrix {
    let front = total_pad.div_ceil(2);
    let d = features.cols();
    let mut out = Matrix::zeros(features.rows() + total_pad, d);
    out.as_mut_slice()[front * d..(front + features.rows()) * d]
        .copy_from_slice(features.as_slice());
    out
}

/// Writes `u32 T`, `u32 d`, then `T*d` little-endian `f32` values row-major.
pub fn write_feature_file<P: AsRef<Path>>(path: P, m: &Matrix) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> std::io::Result<()> {
    w.write_all(&(m.rows() as u32).to_le_bytes())?;
    w.write_all(&(m.cols() as u32).to_le_bytes())?;
    for &v in m.as_slice() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_feature_file<P: AsRef<Path>>(path: P) -> Result<Matrix, FeatureError> {
    let mut r = BufReader::new(File::open(path)?);
    read_matrix(&mut r)
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<Matrix, FeatureError> {
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let rows = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u32::from_le_bytes(word) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| FeatureError::FeatureFile("dimension overflow".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 4 {
        return Err(FeatureError::FeatureFile(format!(
            "expected {} payload bytes for {rows}x{cols}, found {}",
            n * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Matrix::from_vec(rows, cols, data))
}
