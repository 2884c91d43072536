//! Soft-prompt language expansion for a small encoder-decoder speech recognizer.
//!
//! The crate trains nothing but prompt parameters when a new language is added:
//! the base model stays frozen, so recognition of already-supported languages
//! is bit-for-bit unchanged after every expansion. Pieces:
//!
//! - [`tape`]: dense-matrix arithmetic with reverse-mode differentiation,
//!   recorded on a [`tape::Tape`] and checked against finite differences.
//! - [`model`]: the frozen encoder-decoder transformer, greedy decoding and
//!   language identification.
//! - [`spt`]: soft prompt parameter sets (encoder / decoder / entire) and the
//!   prompt training loop.
//! - [`lapt`]: language-aware prompt tuning: cross-lingual similarity votes,
//!   language prompts derived from token embeddings, shared/separate variants.
//! - [`continual`]: the expansion workflow, per-language registry, forgetting
//!   audits and the full fine-tune baseline used for contrast.
//! - [`synthdata`]: deterministic synthetic multilingual corpora with
//!   controllable cross-language relatedness.
//! - [`eval`]: character error rate and language-identification accuracy.
//! - [`checkpoint`] / [`config`]: bit-exact persistence and the canonical
//!   run configuration every artifact embeds.

pub mod checkpoint;
pub mod config;
pub mod container;
pub mod continual;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod hashing;
pub mod lapt;
pub mod model;
pub mod optim;
pub mod rng;
pub mod spt;
pub mod synthdata;
pub mod tape;
pub mod tensor;

pub use config::RunConfig;
pub use continual::{ForgettingReport, LanguageRegistry};
pub use error::{Error, Result};
pub use lapt::{LaptMode, SimilarityVector};
pub use model::{BaseModel, ModelConfig};
pub use spt::{PromptMode, PromptSet, TrainConfig};
pub use synthdata::{Corpus, LanguageSpec, Utterance};
pub use tape::Tape;
pub use tensor::Tensor;
