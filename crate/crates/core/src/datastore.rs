//! Key-value datastores built by replaying a corpus through a language model.
//!
//! A *decoupled* store keeps only the positions where the model's argmax
//! prediction misses the actual next token; a *full* store keeps every
//! position, as a classic nearest-neighbor LM does. Both record the corpus
//! size and the number of misses, whose ratio is the model's error rate.
//!
//! # File format
//!
//! ```text
//! magic "KNMDS1" | version u32 | mode u8 | dim u32
//! total_tokens u64 | mistake_tokens u64 | entry_count u64
//! entry_count x { key: dim x f32, value: u32 }
//! crc32(entries) u32
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{Reader, WriteLe};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::tokenizer::{TokenId, TokenSequence};

pub const DS_MAGIC: &[u8; 6] = b"KNMDS1";
pub const DS_VERSION: u32 = 1;
/// Bytes before the first entry.
pub const HEADER_BYTES: usize = 6 + 4 + 1 + 4 + 8 + 8 + 8;
/// Bytes after the last entry.
pub const TRAILER_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StoreMode {
    /// Only positions the model gets wrong.
    Decoupled,
    /// Every position.
    Full,
}

impl StoreMode {
    pub fn name(self) -> &'static str {
        match self {
            StoreMode::Decoupled => "decoupled",
            StoreMode::Full => "full",
        }
    }

    fn code(self) -> u8 {
        match self {
            StoreMode::Decoupled => 0,
            StoreMode::Full => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(StoreMode::Decoupled),
            1 => Ok(StoreMode::Full),
            other => Err(Error::Format(format!("unknown datastore mode {other}"))),
        }
    }
}

impl std::str::FromStr for StoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decoupled" => Ok(StoreMode::Decoupled),
            "full" => Ok(StoreMode::Full),
            other => Err(Error::Config(format!("unknown datastore mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datastore {
    mode: StoreMode,
    dim: usize,
    total_tokens: u64,
    mistake_tokens: u64,
    /// Row-major keys, `dim` floats per entry.
    keys: Vec<f32>,
    values: Vec<TokenId>,
}

struct SequencePass {
    keys: Vec<f32>,
    values: Vec<TokenId>,
    mistakes: u64,
}

fn replay_sequence(seq: &[TokenId], lm: &dyn LanguageModel, mode: StoreMode, dim: usize) -> Result<SequencePass> {
    let mut pass = SequencePass {
        keys: Vec::new(),
        values: Vec::new(),
        mistakes: 0,
    };
    for (t, &actual) in seq.iter().enumerate() {
        let context = &seq[..t];
        let wrong = lm.predict(context)?.argmax() != actual;
        if wrong {
            pass.mistakes += 1;
        }
        if wrong || mode == StoreMode::Full {
            let key = lm.embed(context)?;
            if key.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: key.dim(),
                });
            }
            pass.keys.extend_from_slice(key.as_slice());
            pass.values.push(actual);
        }
    }
    Ok(pass)
}

impl Datastore {
    /// Assembles a store from raw parts, checking every structural invariant.
    pub fn from_parts(
        mode: StoreMode,
        dim: usize,
        total_tokens: u64,
        mistake_tokens: u64,
        keys: Vec<f32>,
        values: Vec<TokenId>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("datastore dimension must be positive".into()));
        }
        if keys.len() != values.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: values.len() * dim,
                found: keys.len(),
            });
        }
        if keys.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidArgument("datastore keys must be finite".into()));
        }
        if mistake_tokens > total_tokens {
            return Err(Error::InvalidArgument(format!(
                "{mistake_tokens} mistakes exceed {total_tokens} tokens"
            )));
        }
        let expected = match mode {
            StoreMode::Decoupled => mistake_tokens,
            StoreMode::Full => total_tokens,
        };
        if values.len() as u64 != expected {
            return Err(Error::InvalidArgument(format!(
                "{mode:?} store must hold {expected} entries, got {}",
                values.len()
            )));
        }
        Ok(Datastore {
            mode,
            dim,
            total_tokens,
            mistake_tokens,
            keys,
            values,
        })
    }

    /// Store of the positions where `lm`'s argmax misses the next token.
    pub fn build_decoupled(corpus: &[TokenSequence], lm: &dyn LanguageModel, dim: usize) -> Result<Self> {
        Self::build(corpus, lm, dim, StoreMode::Decoupled)
    }

    /// Store of every position, for the fixed-coefficient baseline.
    pub fn build_full(corpus: &[TokenSequence], lm: &dyn LanguageModel, dim: usize) -> Result<Self> {
        Self::build(corpus, lm, dim, StoreMode::Full)
    }

    /// Sequences are replayed in parallel; entries are concatenated in
    /// sequence order, then position order.
    pub fn build(corpus: &[TokenSequence], lm: &dyn LanguageModel, dim: usize, mode: StoreMode) -> Result<Self> {
        if lm.embedding_dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: lm.embedding_dim(),
            });
        }
        let total: usize = corpus.iter().map(Vec::len).sum();
        if total == 0 {
            return Err(Error::EmptyCorpus);
        }
        let passes = corpus
            .par_iter()
            .map(|seq| replay_sequence(seq, lm, mode, dim))
            .collect::<Result<Vec<_>>>()?;
        let mut keys = Vec::new();
        let mut values = Vec::new();
        let mut mistakes = 0;
        for pass in passes {
            keys.extend(pass.keys);
            values.extend(pass.values);
            mistakes += pass.mistakes;
        }
        Self::from_parts(mode, dim, total as u64, mistakes, keys, values)
    }

    pub fn mode(&self) -> StoreMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn mistake_tokens(&self) -> u64 {
        self.mistake_tokens
    }

    /// Error rate of the model on the corpus, used as the prior of a miss.
    /// Zero for a store built from no tokens.
    pub fn error_rate(&self) -> f64 {
        if self.total_tokens == 0 {
            0.0
        } else {
            self.mistake_tokens as f64 / self.total_tokens as f64
        }
    }

    pub fn keys(&self) -> &[f32] {
        &self.keys
    }

    pub fn values(&self) -> &[TokenId] {
        &self.values
    }

    pub fn key(&self, i: usize) -> &[f32] {
        &self.keys[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value(&self, i: usize) -> TokenId {
        self.values[i]
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[f32], TokenId)> + '_ {
        self.keys.chunks_exact(self.dim).zip(self.values.iter().copied())
    }

    /// Size of the serialized form in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_BYTES + self.len() * (4 * self.dim + 4) + TRAILER_BYTES
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(DS_MAGIC);
        out.put_u32(DS_VERSION);
        out.put_u8(self.mode.code());
        out.put_u32(self.dim as u32);
        out.put_u64(self.total_tokens);
        out.put_u64(self.mistake_tokens);
        out.put_u64(self.len() as u64);
        for (key, value) in self.entries() {
            for &k in key {
                out.put_f32(k);
            }
            out.put_u32(value.0);
        }
        let crc = crc32fast::hash(&out[HEADER_BYTES..]);
        out.put_u32(crc);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(6)? != DS_MAGIC {
            return Err(Error::Format("not a datastore file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != DS_VERSION {
            return Err(Error::Format(format!("unsupported datastore version {version}")));
        }
        let mode = StoreMode::from_code(r.u8()?)?;
        let dim = r.u32()? as usize;
        let total_tokens = r.u64()?;
        let mistake_tokens = r.u64()?;
        let count = r.u64()? as usize;
        let record = 4 * dim + 4;
        let body_len = count
            .checked_mul(record)
            .filter(|len| len.checked_add(TRAILER_BYTES) == Some(r.remaining()))
            .ok_or_else(|| {
                Error::Format(format!(
                    "expected {count} entries of {record} bytes plus checksum, found {} bytes",
                    r.remaining()
                ))
            })?;
        let body = r.take(body_len)?;
        let stored = r.u32()?;
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut body = Reader::new(body);
        let mut keys = Vec::with_capacity(count * dim);
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            for _ in 0..dim {
                keys.push(body.f32()?);
            }
            values.push(TokenId(body.u32()?));
        }
        Self::from_parts(mode, dim, total_tokens, mistake_tokens, keys, values)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// `(sequence, position)` of every argmax miss, in corpus order.
pub fn mistake_positions(corpus: &[TokenSequence], lm: &dyn LanguageModel) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (s, seq) in corpus.iter().enumerate() {
        for t in 0..seq.len() {
            if lm.predict(&seq[..t])?.argmax() != seq[t] {
                out.push((s, t));
            }
        }
    }
    Ok(out)
}
