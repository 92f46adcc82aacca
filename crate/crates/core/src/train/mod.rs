//! Training loop, dataset ingestion and error-rate evaluation.

mod data;
mod metrics;
mod optim;
mod plot;

pub use data::{load_features, load_utterances, Manifest, ManifestEntry, Utterance};
pub use metrics::{best_path, edit_distance, greedy_decode, ler, wer, ErrorCounts};
pub use optim::{clip_gradient, global_norm, sgd_momentum_step, ClipMode, OptimState};
pub use plot::render_svg;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criterion::{asg_loss, ctc_loss, Criterion, CriterionError, LetterDict, TransitionTable};
use crate::features::FeatureError;
use crate::model::{AcousticModel, Checkpoint, Mode, ModelError, ModelParams};
use crate::tensor::Matrix;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty training set")]
    Empty,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss on utterance {0}")]
    NonFinite(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Criterion(#[from] CriterionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub criterion: Criterion,
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_eps: f64,
    pub clip_mode: ClipMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Add `#` at both ends of every training target.
    pub surround_silence: bool,
    /// Worker threads for per-utterance gradients; results are reduced in a
    /// fixed order, so any value gives identical updates.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            criterion: Criterion::Asg,
            learning_rate: 0.05,
            momentum: 0.9,
            clip_eps: 0.2,
            clip_mode: ClipMode::MaxNorm,
            batch_size: 4,
            epochs: 25,
            seed: 0,
            surround_silence: true,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.jobs == 0 {
            return bad("jobs must be >= 1");
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_ler: f64,
    pub train_wer: f64,
    pub skipped: usize,
    pub utterances: usize,
    pub wall_time_s: f64,
}

struct UttGrad {
    loss: f64,
    model: ModelParams,
    transitions: Option<TransitionTable>,
}

pub struct Trainer {
    pub model: AcousticModel,
    pub transitions: Option<TransitionTable>,
    pub config: TrainConfig,
    pub dict: LetterDict,
    opt: OptimState,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: AcousticModel, config: TrainConfig, dict: LetterDict) -> Result<Self, TrainError> {
        let transitions = match config.criterion {
            Criterion::Asg => Some(TransitionTable::zeros(model.arch.n_labels)),
            Criterion::Ctc => None,
        };
        Self::with_transitions(model, transitions, config, dict)
    }

    pub fn from_checkpoint(ckpt: Checkpoint, config: TrainConfig, dict: LetterDict) -> Result<Self, TrainError> {
        if ckpt.criterion != config.criterion {
            return Err(TrainError::Config(format!(
                "checkpoint was trained with {}, config asks for {}",
                ckpt.criterion, config.criterion
            )));
        }
        Self::with_transitions(ckpt.model, ckpt.transitions, config, dict)
    }

    fn with_transitions(
        model: AcousticModel,
        transitions: Option<TransitionTable>,
        config: TrainConfig,
        dict: LetterDict,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let want = config.criterion.n_outputs(&dict);
        if model.arch.n_labels != want {
            return Err(TrainError::Config(format!(
                "{} needs {want} output labels, architecture has {}",
                config.criterion, model.arch.n_labels
            )));
        }
        let mut shapes: Vec<usize> = model.params.tensors().iter().map(|t| t.len()).collect();
        if let Some(tr) = &transitions {
            shapes.push(tr.trans.as_slice().len());
            shapes.push(tr.start.len());
        }
        let opt = OptimState::new(config.learning_rate, config.momentum, &shapes);
        Ok(Self {
            model,
            transitions,
            config,
            dict,
            opt,
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            criterion: self.config.criterion,
            transitions: self.transitions.clone(),
        }
    }

    /// Loss and gradients for one utterance; `None` if the target cannot
    /// fit in the available frames.
    fn utterance_grad(&self, utt: &Utterance, seed: u64) -> Result<Option<UttGrad>, TrainError> {
        let pass = self.model.forward_unpadded(&utt.features, Mode::Train, seed)?;
        let (loss, grad_e, grad_tr) = match self.config.criterion {
            Criterion::Ctc => match ctc_loss(&pass.emissions, &utt.target, self.dict.blank()) {
                Ok(out) => (out.loss, out.grad, None),
                Err(CriterionError::Infeasible { .. }) => return Ok(None),
                Err(e) => return Err(e.into()),
            },
            Criterion::Asg => {
                let tr = self.transitions.as_ref().expect("asg trainer has transitions");
                match asg_loss(&pass.emissions, tr, &utt.target) {
                    Ok(out) => (out.loss, out.grad_emissions, Some(out.grad_transitions)),
                    Err(CriterionError::Infeasible { .. }) => return Ok(None),
                    Err(e) => return Err(e.into()),
                }
            }
        };
        if !loss.is_finite() {
            return Err(TrainError::NonFinite(utt.id.clone()));
        }
        let model = self.model.backward(&pass, &grad_e)?;
        Ok(Some(UttGrad {
            loss,
            model,
            transitions: grad_tr,
        }))
    }

    fn batch_grads(&self, batch: &[(&Utterance, u64)]) -> Vec<Result<Option<UttGrad>, TrainError>> {
        let jobs = self.config.jobs.min(batch.len()).max(1);
        if jobs == 1 {
            return batch.iter().map(|(u, s)| self.utterance_grad(u, *s)).collect();
        }
        let chunk = batch.len().div_ceil(jobs);
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|(u, s)| self.utterance_grad(u, *s))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        })
    }

    /// One pass over `data` in a seeded shuffled order. Each minibatch
    /// gradient is the mean over its feasible utterances, clipped, then
    /// applied with momentum.
    pub fn train_epoch(&mut self, data: &[Utterance]) -> Result<EpochStats, TrainError> {
        if data.is_empty() {
            return Err(TrainError::Empty);
        }
        let start = Instant::now();
        let epoch_seed = self
            .config
            .seed
            .wrapping_add((self.epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let seeded: Vec<(&Utterance, u64)> = order.iter().map(|&i| (&data[i], rng.next_u64())).collect();

        let mut total_loss = 0.0;
        let mut used_total = 0;
        let mut skipped = 0;
        for batch in seeded.chunks(self.config.batch_size) {
            let mut grad_model = self.model.params.zeros_like();
            let mut grad_tr = self.transitions.as_ref().map(|t| TransitionTable::zeros(t.n_labels()));
            let mut used = 0;
            for result in self.batch_grads(batch) {
                let Some(g) = result? else {
                    skipped += 1;
                    continue;
                };
                used += 1;
                total_loss += g.loss;
                for (acc, x) in grad_model.tensors_mut().into_iter().zip(g.model.tensors()) {
                    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
                }
                if let (Some(acc), Some(x)) = (grad_tr.as_mut(), g.transitions.as_ref()) {
                    let dst = acc.trans.as_mut_slice().iter_mut().chain(acc.start.iter_mut());
                    let src = x.trans.as_slice().iter().chain(&x.start);
                    dst.zip(src).for_each(|(a, b)| *a += b);
                }
            }
            if used == 0 {
                continue;
            }
            used_total += used;
            let inv = 1.0 / used as f64;
            let mut grads: Vec<&mut [f64]> = grad_model.tensors_mut();
            if let Some(acc) = grad_tr.as_mut() {
                grads.push(acc.trans.as_mut_slice());
                grads.push(&mut acc.start);
            }
            for g in grads.iter_mut() {
                g.iter_mut().for_each(|x| *x *= inv);
            }
            clip_gradient(&mut grads, self.config.clip_eps, self.config.clip_mode);
            let grads: Vec<&[f64]> = grads.into_iter().map(|g| &*g).collect();
            let mut params: Vec<&mut [f64]> = self.model.params.tensors_mut();
            if let Some(tr) = self.transitions.as_mut() {
                params.push(tr.trans.as_mut_slice());
                params.push(&mut tr.start);
            }
            sgd_momentum_step(&mut params, &grads, &mut self.opt)?;
        }
        self.epoch += 1;
        let counts = self.evaluate(data)?;
        Ok(EpochStats {
            epoch: self.epoch,
            loss: if used_total > 0 {
                total_loss / used_total as f64
            } else {
                f64::NAN
            },
            train_ler: counts.ler(),
            train_wer: counts.wer(),
            skipped,
            utterances: used_total,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }

    /// Eval-mode emissions for unpadded features.
    pub fn emissions(&self, features: &Matrix) -> Result<Matrix, TrainError> {
        Ok(self.model.forward_unpadded(features, Mode::Eval, 0)?.emissions)
    }

    pub fn greedy(&self, features: &Matrix) -> Result<String, TrainError> {
        Ok(greedy_decode(&self.emissions(features)?, self.config.criterion, &self.dict))
    }

    /// Greedy-decoding error counts over `data`.
    pub fn evaluate(&self, data: &[Utterance]) -> Result<ErrorCounts, TrainError> {
        let mut counts = ErrorCounts::default();
        for u in data {
            counts.add(&u.text, &self.greedy(&u.features)?);
        }
        Ok(counts)
    }
}
