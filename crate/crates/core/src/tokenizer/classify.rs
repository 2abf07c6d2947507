use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::lexer::{OPERATORS, PUNCTUATION};
use super::vocab::EOL_TOKEN;

/// Evaluation breakdown axis for token accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenClass {
    Punctuation,
    Identifier,
    Operator,
    Keyword,
    Literal,
}

impl TokenClass {
    pub const ALL: [TokenClass; 5] = [
        TokenClass::Punctuation,
        TokenClass::Identifier,
        TokenClass::Operator,
        TokenClass::Keyword,
        TokenClass::Literal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TokenClass::Punctuation => "Punctuation",
            TokenClass::Identifier => "Identifier",
            TokenClass::Operator => "Operator",
            TokenClass::Keyword => "Keyword",
            TokenClass::Literal => "Literal",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TokenClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Language {
    #[default]
    Java,
    Python,
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "java" => Ok(Language::Java),
            "python" => Ok(Language::Python),
            other => Err(format!("unknown language `{other}`")),
        }
    }
}

const JAVA_KEYWORDS: &[&str] = &[
    "abstract",
    "assert",
    "boolean",
    "break",
    "byte",
    "case",
    "catch",
    "char",
    "class",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extends",
    "final",
    "finally",
    "float",
    "for",
    "goto",
    "if",
    "implements",
    "import",
    "instanceof",
    "int",
    "interface",
    "long",
    "native",
    "new",
    "null",
    "package",
    "private",
    "protected",
    "public",
    "return",
    "short",
    "static",
    "strictfp",
    "super",
    "switch",
    "synchronized",
    "this",
    "throw",
    "throws",
    "transient",
    "try",
    "var",
    "void",
    "volatile",
    "while",
];

// True/False are classified as literals, not keywords.
const PYTHON_KEYWORDS: &[&str] = &[
    "None", "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del", "elif", "else",
    "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal", "not", "or",
    "pass", "raise", "return", "try", "while", "with", "yield",
];

fn is_literal(token: &str, language: Language) -> bool {
    let first = token.as_bytes()[0];
    if first.is_ascii_digit() || first == b'"' || first == b'\'' {
        return true;
    }
    match language {
        Language::Java => token == "true" || token == "false",
        Language::Python => token == "True" || token == "False",
    }
}

/// Maps a token string to exactly one class.
///
/// The reserved end-of-line token counts as punctuation. `::`, `->` and `...`
/// are operators.
pub fn classify(token: &str, language: Language) -> TokenClass {
    if token.is_empty() {
        return TokenClass::Identifier;
    }
    if token == EOL_TOKEN {
        return TokenClass::Punctuation;
    }
    let mut chars = token.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if PUNCTUATION.contains(&c) {
            return TokenClass::Punctuation;
        }
    }
    if OPERATORS.contains(&token) {
        return TokenClass::Operator;
    }
    if is_literal(token, language) {
        return TokenClass::Literal;
    }
    let keywords = match language {
        Language::Java => JAVA_KEYWORDS,
        Language::Python => PYTHON_KEYWORDS,
    };
    if keywords.contains(&token) {
        return TokenClass::Keyword;
    }
    TokenClass::Identifier
}
