//! Reference language model: add-k smoothed n-gram counts with backoff, plus a
//! seeded hashed projection of the recent context as its embedding.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::distribution::{ContextEmbedding, TokenDistribution};
use super::LanguageModel;
use crate::binio::{Reader, WriteLe};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, TokenSequence};

pub const LM_MAGIC: &[u8; 6] = b"KNMLM1";

/// Number of trailing context tokens that feed the embedding.
pub const EMBED_WINDOW: usize = 8;
/// Per-position weight decay of the embedding, `DECAY^(distance from end)`.
pub const EMBED_DECAY: f64 = 0.7;
pub const DEFAULT_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgramConfig {
    pub order: usize,
    pub smoothing_k: f64,
    pub dim: usize,
    pub seed: u64,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig {
            order: 3,
            smoothing_k: 0.01,
            dim: DEFAULT_DIM,
            seed: 0,
        }
    }
}

impl NgramConfig {
    fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.order) {
            return Err(Error::InvalidArgument(format!(
                "n-gram order must be 1, 2 or 3, got {}",
                self.order
            )));
        }
        if !(self.smoothing_k > 0.0 && self.smoothing_k.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smoothing k must be positive, got {}",
                self.smoothing_k
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Continuations {
    total: u64,
    next: HashMap<TokenId, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    config: NgramConfig,
    vocab_size: usize,
    /// `tables[h]` maps a packed history of `h` tokens to what followed it.
    tables: Vec<HashMap<u64, Continuations>>,
}

fn pack(history: &[TokenId]) -> u64 {
    history.iter().fold(0u64, |acc, t| (acc << 32) | t.0 as u64)
}

impl NgramLm {
    /// Counts n-grams of every order up to `config.order` within each sequence.
    pub fn train(corpus: &[TokenSequence], vocab_size: usize, config: NgramConfig) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if vocab_size == 0 {
            return Err(Error::InvalidArgument("vocabulary is empty".into()));
        }
        let mut tables = vec![HashMap::<u64, Continuations>::new(); config.order];
        for seq in corpus {
            for (t, &tok) in seq.iter().enumerate() {
                if tok.index() >= vocab_size {
                    return Err(Error::InvalidArgument(format!(
                        "token id {tok} outside vocabulary of {vocab_size}"
                    )));
                }
                for (h, table) in tables.iter_mut().enumerate() {
                    if h > t {
                        break;
                    }
                    let entry = table.entry(pack(&seq[t - h..t])).or_default();
                    entry.total += 1;
                    *entry.next.entry(tok).or_default() += 1;
                }
            }
        }
        Ok(NgramLm {
            config,
            vocab_size,
            tables,
        })
    }

    pub fn config(&self) -> &NgramConfig {
        &self.config
    }

    /// Longest seen history among the trailing `order - 1` tokens.
    fn continuations(&self, context: &[TokenId]) -> Option<&Continuations> {
        let longest = (self.config.order - 1).min(context.len());
        (0..=longest).rev().find_map(|h| {
            self.tables[h]
                .get(&pack(&context[context.len() - h..]))
                .filter(|c| c.total > 0)
        })
    }

    /// Add-k probability of `token` after `context`, with backoff.
    pub fn prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        let k = self.config.smoothing_k;
        let v = self.vocab_size as f64;
        match self.continuations(context) {
            Some(c) => {
                let n = c.next.get(&token).copied().unwrap_or(0) as f64;
                (n + k) / (c.total as f64 + k * v)
            }
            None => 1.0 / v,
        }
    }

    /// Natural-log perplexity of `sequences` under the model.
    pub fn perplexity(&self, sequences: &[TokenSequence]) -> f64 {
        let mut nll = 0.0;
        let mut n = 0usize;
        for seq in sequences {
            for t in 0..seq.len() {
                nll -= self.prob(&seq[..t], seq[t]).ln();
                n += 1;
            }
        }
        if n == 0 {
            return f64::NAN;
        }
        (nll / n as f64).exp()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Header `KNMLM1, order u32, smoothing_k f64, vocab_size u32, dim u32,
    /// seed u64`, then per history length: context count and sorted tables.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(LM_MAGIC);
        out.put_u32(self.config.order as u32);
        out.put_f64(self.config.smoothing_k);
        out.put_u32(self.vocab_size as u32);
        out.put_u32(self.config.dim as u32);
        out.put_u64(self.config.seed);
        for table in &self.tables {
            let mut keys: Vec<_> = table.keys().copied().collect();
            keys.sort_unstable();
            out.put_u64(keys.len() as u64);
            for key in keys {
                let c = &table[&key];
                let mut next: Vec<_> = c.next.iter().map(|(t, n)| (*t, *n)).collect();
                next.sort_unstable();
                out.put_u64(key);
                out.put_u64(c.total);
                out.put_u32(next.len() as u32);
                for (tok, n) in next {
                    out.put_u32(tok.0);
                    out.put_u64(n);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(6)? != LM_MAGIC {
            return Err(Error::Format("not a reference LM file (bad magic)".into()));
        }
        let config = NgramConfig {
            order: r.u32()? as usize,
            smoothing_k: r.f64()?,
            dim: 0,
            seed: 0,
        };
        let vocab_size = r.u32()? as usize;
        let config = NgramConfig {
            dim: r.u32()? as usize,
            seed: r.u64()?,
            ..config
        };
        config.validate().map_err(|e| Error::Format(e.to_string()))?;
        let mut tables = Vec::with_capacity(config.order);
        for _ in 0..config.order {
            let n_ctx = r.u64()? as usize;
            let mut table = HashMap::with_capacity(n_ctx.min(r.remaining() / 20));
            for _ in 0..n_ctx {
                let key = r.u64()?;
                let total = r.u64()?;
                let n_next = r.u32()? as usize;
                let mut next = HashMap::with_capacity(n_next.min(r.remaining() / 12));
                for _ in 0..n_next {
                    let tok = TokenId(r.u32()?);
                    if tok.index() >= vocab_size {
                        return Err(Error::Format(format!("token id {tok} out of range")));
                    }
                    next.insert(tok, r.u64()?);
                }
                table.insert(key, Continuations { total, next });
            }
            tables.push(table);
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(NgramLm {
            config,
            vocab_size,
            tables,
        })
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Projection coordinate in [-1, 1) for (token, offset from end, dimension).
fn projection(seed: u64, token: TokenId, offset: usize, dim: usize) -> f64 {
    let h = splitmix(splitmix(splitmix(seed ^ token.0 as u64) ^ offset as u64) ^ dim as u64);
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

impl LanguageModel for NgramLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn embedding_dim(&self) -> usize {
        self.config.dim
    }

    fn predict(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        let v = self.vocab_size;
        let Some(c) = self.continuations(context) else {
            return Ok(TokenDistribution::uniform(v));
        };
        let k = self.config.smoothing_k;
        let denom = c.total as f64 + k * v as f64;
        let mut probs = vec![k / denom; v];
        for (tok, n) in &c.next {
            probs[tok.index()] = (*n as f64 + k) / denom;
        }
        Ok(TokenDistribution::from_raw(probs))
    }

    /// Zero vector for the empty context, otherwise the L2-normalized,
    /// position-decayed sum of per-(token, offset) hashed directions.
    fn embed(&self, context: &[TokenId]) -> Result<ContextEmbedding> {
        let dim = self.config.dim;
        let mut acc = vec![0.0f64; dim];
        let mut weight = 1.0;
        for (offset, &tok) in context.iter().rev().take(EMBED_WINDOW).enumerate() {
            for (i, a) in acc.iter_mut().enumerate() {
                *a += weight * projection(self.config.seed, tok, offset, i);
            }
            weight *= EMBED_DECAY;
        }
        let norm = acc.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 0.0 {
            for a in &mut acc {
                *a /= norm;
            }
        }
        ContextEmbedding::new(acc.into_iter().map(|a| a as f32).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ids(v: &[u32]) -> Vec<TokenId> {
        v.iter().map(|&i| TokenId(i)).collect()
    }

    fn cfg(order: usize, k: f64) -> NgramConfig {
        NgramConfig {
            order,
            smoothing_k: k,
            ..NgramConfig::default()
        }
    }

    #[test]
    fn add_one_bigram_probability() {
        // vocab: EOL, UNK, a=2, b=3
        let lm = NgramLm::train(&[ids(&[2, 3])], 4, cfg(2, 1.0)).unwrap();
        let d = lm.predict(&ids(&[2])).unwrap();
        assert_abs_diff_eq!(d.probs()[3], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(d.probs()[0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn unseen_context_backs_off_to_unigram() {
        let lm = NgramLm::train(&[ids(&[2, 3, 3])], 5, cfg(2, 0.5)).unwrap();
        let backoff = lm.predict(&ids(&[4])).unwrap();
        let unigram = lm.predict(&[]).unwrap();
        assert_eq!(backoff, unigram);
        assert_abs_diff_eq!(unigram.probs()[3], 2.5 / 5.5, epsilon = 1e-15);
    }

    #[test]
    fn bigram_argmax_follows_counts() {
        let lm = NgramLm::train(&[ids(&[2, 3, 2, 3])], 4, cfg(2, 0.1)).unwrap();
        assert_eq!(lm.predict(&ids(&[2])).unwrap().argmax(), TokenId(3));
    }

    #[test]
    fn empty_sequences_give_uniform() {
        let lm = NgramLm::train(&[vec![]], 7, cfg(3, 1.0)).unwrap();
        let d = lm.predict(&ids(&[2, 3])).unwrap();
        assert!(d.probs().iter().all(|p| (*p - 1.0 / 7.0).abs() < 1e-15));
        assert!(matches!(NgramLm::train(&[], 7, cfg(3, 1.0)), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(NgramLm::train(&[ids(&[2])], 4, cfg(4, 1.0)).is_err());
        assert!(NgramLm::train(&[ids(&[2])], 4, cfg(2, 0.0)).is_err());
        assert!(NgramLm::train(&[ids(&[9])], 4, cfg(2, 1.0)).is_err());
    }

    #[test]
    fn embedding_of_empty_context_is_zero() {
        let lm = NgramLm::train(&[ids(&[2, 3])], 4, cfg(2, 1.0)).unwrap();
        let e = lm.embed(&[]).unwrap();
        assert_eq!(e.dim(), DEFAULT_DIM);
        assert!(e.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn embedding_is_unit_norm_and_windowed() {
        let lm = NgramLm::train(&[ids(&[2, 3])], 8, cfg(2, 1.0)).unwrap();
        let mut a = ids(&[4; 30]);
        let mut b = a.clone();
        a[9] = TokenId(5);
        b[9] = TokenId(6);
        let ea = lm.embed(&a).unwrap();
        assert_eq!(ea, lm.embed(&b).unwrap());
        let norm: f32 = ea.as_slice().iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
        b[29] = TokenId(7);
        assert_ne!(ea, lm.embed(&b).unwrap());
    }

    #[test]
    fn bytes_roundtrip() {
        let lm = NgramLm::train(&[ids(&[2, 3, 4, 2, 3, 5]), ids(&[5, 4])], 6, cfg(3, 0.25)).unwrap();
        let bytes = lm.to_bytes();
        assert_eq!(&bytes[..6], LM_MAGIC);
        let back = NgramLm::from_bytes(&bytes).unwrap();
        assert_eq!(back, lm);
        assert_eq!(back.to_bytes(), bytes);
        assert!(matches!(
            NgramLm::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        assert!(matches!(NgramLm::from_bytes(b"KNMDS1xxxx"), Err(Error::Format(_))));
    }
}
