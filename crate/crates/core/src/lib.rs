//! Retrieval-augmented next-token prediction for code with a black-box
//! language model.
//!
//! The engine replays an in-domain corpus through the model and stores, for
//! every token the model gets wrong, the embedding of its context together
//! with the correct token. At completion time the nearest stored contexts
//! vote on the next token, and their vote is mixed into the model's own
//! distribution with a weight derived from a Beta posterior over the model's
//! error rate.
//!
//! Module map:
//!
//! - [`tokenizer`]: code lexer, vocabularies, token classes
//! - [`lm`]: the language-model contract, reference n-gram model, HTTP adapter
//! - [`datastore`]: decoupled (mistakes-only) and full key-value stores
//! - [`retrieval`]: exact L2 search and the retrieval distribution
//! - [`combiner`]: observation windows, λ, interpolation, completion
//! - [`harness`]: metrics, experiments, sweeps, synthetic suites

mod binio;
pub mod combiner;
pub mod datastore;
pub mod error;
pub mod harness;
pub mod lm;
pub mod retrieval;
pub mod tokenizer;

pub use combiner::{CombinerConfig, Completion, Engine, Mode};
pub use datastore::{Datastore, StoreMode};
pub use error::{Error, Result};
pub use lm::{ContextEmbedding, LanguageModel, NgramConfig, NgramLm, RemoteConfig, RemoteLm, TokenDistribution};
pub use retrieval::{NeighborSet, RetrievalIndex};
pub use tokenizer::{TokenClass, TokenId, Vocabulary};
