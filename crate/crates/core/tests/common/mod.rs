#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use knm_core::lm::{ContextEmbedding, LanguageModel, TokenDistribution};
use knm_core::tokenizer::{read_corpus, TokenSequence};
use knm_core::{Result, TokenId, Vocabulary};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("data")
        .join(name)
}

/// The 120-token toy corpus and its vocabulary.
pub fn toy_corpus() -> (Vocabulary, Vec<TokenSequence>) {
    let records = read_corpus(data("toy120.jsonl")).unwrap();
    let vocab = Vocabulary::build(records.iter().map(|r| r.text.as_str())).unwrap();
    let seqs: Vec<_> = records.iter().map(|r| vocab.tokenize(&r.text)).collect();
    assert_eq!(seqs.iter().map(Vec::len).sum::<usize>(), 120);
    (vocab, seqs)
}

pub fn ids(v: &[u32]) -> Vec<TokenId> {
    v.iter().map(|&i| TokenId(i)).collect()
}

/// Straightforward add-k n-gram with backoff to the longest history that was
/// ever followed by a token, kept separate from the library's implementation.
pub struct OracleNgram {
    order: usize,
    k: f64,
    v: usize,
    counts: HashMap<Vec<u32>, HashMap<u32, u64>>,
}

impl OracleNgram {
    pub fn train(corpus: &[TokenSequence], order: usize, k: f64, v: usize) -> Self {
        let mut counts: HashMap<Vec<u32>, HashMap<u32, u64>> = HashMap::new();
        for seq in corpus {
            let raw: Vec<u32> = seq.iter().map(|t| t.0).collect();
            for t in 0..raw.len() {
                for h in 0..order.min(t + 1) {
                    *counts
                        .entry(raw[t - h..t].to_vec())
                        .or_default()
                        .entry(raw[t])
                        .or_default() += 1;
                }
            }
        }
        OracleNgram { order, k, v, counts }
    }

    pub fn prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        let raw: Vec<u32> = context.iter().map(|t| t.0).collect();
        let longest = (self.order - 1).min(raw.len());
        for h in (0..=longest).rev() {
            if let Some(next) = self.counts.get(&raw[raw.len() - h..]) {
                let total: u64 = next.values().sum();
                let c = next.get(&token.0).copied().unwrap_or(0);
                return (c as f64 + self.k) / (total as f64 + self.k * self.v as f64);
            }
        }
        1.0 / self.v as f64
    }

    /// Most probable next token, lowest id on ties.
    pub fn argmax(&self, context: &[TokenId]) -> TokenId {
        let mut best = (f64::NEG_INFINITY, 0u32);
        for id in 0..self.v as u32 {
            let p = self.prob(context, TokenId(id));
            if p > best.0 {
                best = (p, id);
            }
        }
        TokenId(best.1)
    }
}

/// Every (index, distance) pair, sorted by distance then index.
pub fn exhaustive_scan(keys: &[f32], dim: usize, query: &[f32], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = keys
        .chunks(dim)
        .enumerate()
        .map(|(i, row)| {
            let mut acc = 0.0f64;
            for j in 0..dim {
                let d = query[j] as f64 - row[j] as f64;
                acc += d * d;
            }
            (i, acc)
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all.into_iter().map(|(i, sq)| (i, sq.sqrt())).collect()
}

/// Wraps a model and counts calls, optionally burning CPU on each predict to
/// stand in for an expensive network.
pub struct CostlyLm<L> {
    pub inner: L,
    pub work: usize,
}

impl<L: LanguageModel> LanguageModel for CostlyLm<L> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim()
    }

    fn predict(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        let mut x = 1.0f64;
        for i in 0..self.work {
            x = (x * 1.000_000_1 + i as f64).sqrt();
        }
        std::hint::black_box(x);
        self.inner.predict(context)
    }

    fn embed(&self, context: &[TokenId]) -> Result<ContextEmbedding> {
        self.inner.embed(context)
    }
}

/// A model that is wrong everywhere: it always puts its mass on one fixed
/// token that never occurs in the corpora it is used with.
pub struct WrongLm<L> {
    pub inner: L,
    pub always: TokenId,
}

impl<L: LanguageModel> LanguageModel for WrongLm<L> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim()
    }

    fn predict(&self, _context: &[TokenId]) -> Result<TokenDistribution> {
        let mut p = vec![0.0; self.vocab_size()];
        p[self.always.index()] = 1.0;
        TokenDistribution::new(p)
    }

    fn embed(&self, context: &[TokenId]) -> Result<ContextEmbedding> {
        self.inner.embed(context)
    }
}

/// A model that knows the true continuation of the given prefixes and defers
/// to `inner` elsewhere.
pub struct LookupLm<L> {
    pub inner: L,
    pub known: HashMap<Vec<TokenId>, TokenId>,
}

impl<L: LanguageModel> LookupLm<L> {
    /// Learns every prefix of `corpus` whose continuation is unambiguous.
    pub fn memorize(inner: L, corpus: &[TokenSequence]) -> Self {
        let mut seen: HashMap<Vec<TokenId>, Option<TokenId>> = HashMap::new();
        for seq in corpus {
            for t in 0..seq.len() {
                seen.entry(seq[..t].to_vec())
                    .and_modify(|e| {
                        if *e != Some(seq[t]) {
                            *e = None;
                        }
                    })
                    .or_insert(Some(seq[t]));
            }
        }
        let known = seen.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect();
        LookupLm { inner, known }
    }
}

impl<L: LanguageModel> LanguageModel for LookupLm<L> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim()
    }

    fn predict(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        match self.known.get(context) {
            Some(tok) => {
                let mut p = vec![0.0; self.vocab_size()];
                p[tok.index()] = 1.0;
                TokenDistribution::new(p)
            }
            None => self.inner.predict(context),
        }
    }

    fn embed(&self, context: &[TokenId]) -> Result<ContextEmbedding> {
        self.inner.embed(context)
    }
}
