//! Desk-scale pipeline for adapting small masked-language-model encoders to a
//! specialised domain: corpus curation, language identification, subword
//! tokenization, dynamic-masking pre-training, fine-tuning and scoring.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod hashing;
pub mod io;
pub mod langid;
pub mod metrics;
pub mod mlm;
pub mod optim;
pub mod plot;
pub mod subtok;
pub mod synth;
pub mod tasks;
pub mod tensor;
pub mod textprep;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
