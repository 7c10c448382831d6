//! Few-shot meta-learning for regression over mutation-annotated protein
//! sequences.
//!
//! The crate is organised bottom-up:
//!
//! - [`engine`]: tensors and reverse-mode gradients
//! - [`mutenc`]: mutation parsing and sequence encodings
//! - [`dataio`]: record ingestion, quality control, splitting, scaling
//! - [`net`]: the transformer regressor and its checkpoint format
//! - [`metatrain`]: episodic first-order MAML and the fine-tuning baseline
//! - [`evalkit`]: NMSE, experiment protocols, reports, synthetic tasks
//! - [`cli`]: the `metaforge` command-line front end

pub mod cli;
pub mod dataio;
pub mod engine;
pub mod evalkit;
pub mod metatrain;
pub mod net;
pub mod mutenc;
pub mod error;

pub use error::{Error, Result};
