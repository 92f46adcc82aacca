//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic `GLUASRCK`, `u32` version, `u32` header length, a
//! JSON header (architecture, criterion, tensor lengths), then every tensor
//! as little-endian `f32` in declaration order. For ASG models the
//! transition matrix (row-major) and start scores follow the network.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AcousticModel, ArchSpec, ModelError};
use crate::criterion::{Criterion, TransitionTable};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GLUASRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AcousticModel,
    pub criterion: Criterion,
    pub transitions: Option<TransitionTable>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arch: ArchSpec,
    criterion: Criterion,
    tensors: Vec<usize>,
}

impl Checkpoint {
    fn tensor_lengths(&self) -> Vec<usize> {
        let mut lens: Vec<usize> = self.model.params.tensors().iter().map(|t| t.len()).collect();
        if let Some(tr) = &self.transitions {
            lens.push(tr.trans.as_slice().len());
            lens.push(tr.start.len());
        }
        lens
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), ModelError> {
        let header = Header {
            arch: self.model.arch.clone(),
            criterion: self.criterion,
            tensors: self.tensor_lengths(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        let mut put = |xs: &[f64]| -> std::io::Result<()> {
            for &x in xs {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
            Ok(())
        };
        for t in self.model.params.tensors() {
            put(t)?;
        }
        if let Some(tr) = &self.transitions {
            put(tr.trans.as_slice())?;
            put(&tr.start)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("bad magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        r.read_exact(&mut word)?;
        let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)
            .map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;

        let mut model = AcousticModel::zeros(header.arch)?;
        let n_labels = model.arch.n_labels;
        let mut transitions = match header.criterion {
            Criterion::Asg => Some(TransitionTable::zeros(n_labels)),
            Criterion::Ctc => None,
        };
        let mut ckpt_tensors: Vec<&mut [f64]> = model.params.tensors_mut();
        if let Some(tr) = transitions.as_mut() {
            ckpt_tensors.push(tr.trans.as_mut_slice());
            ckpt_tensors.push(&mut tr.start);
        }
        if ckpt_tensors.len() != header.tensors.len()
            || ckpt_tensors
                .iter()
                .zip(&header.tensors)
                .any(|(t, &n)| t.len() != n)
        {
            return Err(ModelError::Checkpoint(
                "tensor shapes do not match the architecture".into(),
            ));
        }
        for t in ckpt_tensors {
            for v in t.iter_mut() {
                r.read_exact(&mut word)?;
                *v = f32::from_le_bytes(word) as f64;
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(ModelError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            model,
            criterion: header.criterion,
            transitions,
        })
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, ModelError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    /// Rounds every parameter to `f32`, matching what a save/load cycle
    /// produces.
    pub fn quantized(mut self) -> Self {
        for t in self.model.params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        if let Some(tr) = self.transitions.as_mut() {
            tr.trans
                .as_mut_slice()
                .iter_mut()
                .chain(tr.start.iter_mut())
                .for_each(|v| *v = *v as f32 as f64);
        }
        self
    }
}
