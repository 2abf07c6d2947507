use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classify::{classify, Language, TokenClass};
use super::lexer::{lex, LexemeKind};
use crate::error::{Error, Result};

pub const EOL_TOKEN: &str = "<EOL>";
pub const UNK_TOKEN: &str = "<UNK>";

/// Index into a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const EOL: TokenId = TokenId(0);
    pub const UNK: TokenId = TokenId(1);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

/// Integer-coded token sequence; contexts are prefixes of these.
pub type TokenSequence = Vec<TokenId>;

/// Bijection between token strings and ids. Ids 0 and 1 are reserved for
/// end-of-line and unknown; the rest follow first occurrence in the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// A vocabulary holding only the two reserved tokens.
    pub fn new() -> Self {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        v.push(EOL_TOKEN);
        v.push(UNK_TOKEN);
        v
    }

    fn push(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = TokenId::from(self.id_to_token.len());
        self.token_to_id.insert(token.to_owned(), id);
        self.id_to_token.push(token.to_owned());
        id
    }

    /// Collects every distinct lexeme of `sources`, in first-occurrence order.
    pub fn build<'a, I>(sources: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut v = Vocabulary::new();
        for text in sources {
            v.extend_from(text);
        }
        if v.len() == 2 {
            return Err(Error::EmptyCorpus);
        }
        Ok(v)
    }

    /// Adds the lexemes of `text` not yet present.
    pub fn extend_from(&mut self, text: &str) {
        for lx in lex(text) {
            match lx.kind {
                LexemeKind::Newline | LexemeKind::Unknown => {}
                _ => {
                    self.push(lx.text);
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Id of `token`, or UNK when absent.
    pub fn id(&self, token: &str) -> TokenId {
        self.token_to_id.get(token).copied().unwrap_or(TokenId::UNK)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.id_to_token
            .get(id.index())
            .map(String::as_str)
            .unwrap_or(UNK_TOKEN)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.id_to_token.iter().map(String::as_str)
    }

    /// Lexes `text` and maps each lexeme to its id.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        lex(text)
            .into_iter()
            .map(|lx| match lx.kind {
                LexemeKind::Newline => TokenId::EOL,
                LexemeKind::Unknown => TokenId::UNK,
                _ => self.id(lx.text),
            })
            .collect()
    }

    pub fn class_of(&self, id: TokenId, language: Language) -> TokenClass {
        classify(self.token(id), language)
    }

    /// Joins tokens with single spaces, except that closers (`) ] } ; ,`)
    /// attach to the previous token and end-of-line becomes `\n`.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        let mut line_start = true;
        for &id in ids {
            if id == TokenId::EOL {
                out.push('\n');
                line_start = true;
                continue;
            }
            let tok = self.token(id);
            if !line_start && !is_closer(tok) {
                out.push(' ');
            }
            out.push_str(tok);
            line_start = false;
        }
        out
    }

    /// Writes one token per line; the zero-based line number is the id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for tok in &self.id_to_token {
            writeln!(w, "{tok}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let r = BufReader::new(fs::File::open(path)?);
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if v.token_to_id.contains_key(&line) {
                return Err(Error::Format(format!(
                    "duplicate token `{line}` on line {}",
                    lineno + 1
                )));
            }
            v.push(&line);
        }
        if v.id_to_token.len() < 2 || v.id_to_token[0] != EOL_TOKEN || v.id_to_token[1] != UNK_TOKEN {
            return Err(Error::Format(
                "vocabulary must start with the reserved <EOL> and <UNK> lines".into(),
            ));
        }
        Ok(v)
    }
}

fn is_closer(tok: &str) -> bool {
    matches!(tok, ")" | "]" | "}" | ";" | ",")
}
