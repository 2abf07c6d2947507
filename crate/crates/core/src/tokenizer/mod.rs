//! Lexing, vocabularies and token classes.

mod classify;
mod corpus;
mod lexer;
mod vocab;

pub use classify::{classify, Language, TokenClass};
pub use corpus::{read_corpus, write_corpus, SourceRecord};
pub use lexer::{lex, Lexeme, LexemeKind};
pub use vocab::{TokenId, TokenSequence, Vocabulary, EOL_TOKEN, UNK_TOKEN};
