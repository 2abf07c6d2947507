//! Black-box language model contract and its two backends.

mod distribution;
mod ngram;
mod remote;

pub use distribution::{ContextEmbedding, TokenDistribution, MASS_TOLERANCE};
pub use ngram::{NgramConfig, NgramLm, DEFAULT_DIM, EMBED_DECAY, EMBED_WINDOW, LM_MAGIC};
pub use remote::{RemoteConfig, RemoteLm};

use crate::error::Result;
use crate::tokenizer::TokenId;

/// What the engine may ask of a language model: a next-token distribution and
/// a context embedding. Both must be deterministic functions of the context.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn embedding_dim(&self) -> usize;

    /// Next-token distribution given the whole preceding context.
    fn predict(&self, context: &[TokenId]) -> Result<TokenDistribution>;

    fn embed(&self, context: &[TokenId]) -> Result<ContextEmbedding>;
}

impl<L: LanguageModel + ?Sized> LanguageModel for &L {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn embedding_dim(&self) -> usize {
        (**self).embedding_dim()
    }
    fn predict(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        (**self).predict(context)
    }
    fn embed(&self, context: &[TokenId]) -> Result<ContextEmbedding> {
        (**self).embed(context)
    }
}

impl<L: LanguageModel + ?Sized> LanguageModel for Box<L> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn embedding_dim(&self) -> usize {
        (**self).embedding_dim()
    }
    fn predict(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        (**self).predict(context)
    }
    fn embed(&self, context: &[TokenId]) -> Result<ContextEmbedding> {
        (**self).embed(context)
    }
}
