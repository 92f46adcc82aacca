//! Letter-based speech recognition toolkit.
//!
//! The pipeline runs log-mel filterbank features ([`features`]) through a
//! gated convolutional acoustic model ([`model`]) trained with the CTC or ASG
//! criterion ([`criterion`], [`train`]), and decodes with a lexicon-constrained
//! beam search over an ARPA n-gram language model ([`lm`], [`decoder`]).
//! [`config`] holds the JSON run configuration; [`synth`] generates a small
//! tonal corpus for smoke tests.

pub mod config;
pub mod criterion;
pub mod decoder;
pub mod features;
pub mod lm;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;
