//! Hand-written code lexer shared by every model in an experiment.
//!
//! Produces identifiers, numbers, string/char literals (kept whole, quotes
//! included), operators (longest match), punctuation and line breaks.
//! Spaces, tabs and carriage returns separate lexemes and are dropped.
//! Anything else becomes an [`LexemeKind::Unknown`] lexeme of one character.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LexemeKind {
    Identifier,
    Number,
    Str,
    Operator,
    Punctuation,
    Newline,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexeme<'a> {
    pub text: &'a str,
    pub kind: LexemeKind,
}

/// Multi-character operators, longest first so that greedy matching works.
pub(crate) const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "...", "**=", "//=", "->", "::", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=",
    "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>", "**", "//", ":=", "+", "-", "*", "/", "%", "=", "<", ">",
    "!", "&", "|", "^", "~", "?", "@",
];

pub(crate) const PUNCTUATION: &[char] = &['(', ')', '{', '}', '[', ']', ';', ',', '.', ':'];

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

/// Splits `text` into lexemes. Total and deterministic.
pub fn lex(text: &str) -> Vec<Lexeme<'_>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let c = text[i..].chars().next().expect("in bounds");
        let start = i;
        let kind = match c {
            ' ' | '\t' | '\r' => {
                i += 1;
                continue;
            }
            '\n' => {
                i += 1;
                LexemeKind::Newline
            }
            c if is_ident_start(c) => {
                i += 1;
                while i < bytes.len() && is_ident_continue(bytes[i] as char) {
                    i += 1;
                }
                LexemeKind::Identifier
            }
            c if c.is_ascii_digit() => {
                i = scan_number(bytes, i);
                LexemeKind::Number
            }
            '"' | '\'' => {
                i = scan_string(text, i, c);
                LexemeKind::Str
            }
            _ => {
                // '.' and ':' are punctuation unless they start "...", "::" or ":=".
                if let Some(op) = OPERATORS.iter().find(|op| text[i..].starts_with(**op)) {
                    i += op.len();
                    LexemeKind::Operator
                } else if PUNCTUATION.contains(&c) {
                    i += 1;
                    LexemeKind::Punctuation
                } else {
                    i += c.len_utf8();
                    LexemeKind::Unknown
                }
            }
        };
        out.push(Lexeme {
            text: &text[start..i],
            kind,
        });
    }
    out
}

fn scan_number(bytes: &[u8], mut i: usize) -> usize {
    let hex = bytes[i] == b'0' && matches!(bytes.get(i + 1), Some(b'x') | Some(b'X'));
    i += 1;
    while i < bytes.len() {
        let b = bytes[i];
        let digit_next = bytes.get(i + 1).is_some_and(u8::is_ascii_digit);
        let exponent_sign = (b == b'+' || b == b'-') && !hex && matches!(bytes[i - 1], b'e' | b'E');
        if b.is_ascii_alphanumeric() || b == b'_' || ((b == b'.' || exponent_sign) && digit_next) {
            i += 1;
        } else {
            break;
        }
    }
    i
}

/// Strings never span lines; an unterminated literal stops before the newline.
fn scan_string(text: &str, start: usize, quote: char) -> usize {
    let mut chars = text[start + 1..].char_indices();
    while let Some((off, c)) = chars.next() {
        match c {
            '\\' => {
                if let Some((off2, c2)) = chars.next() {
                    if c2 == '\n' {
                        return start + 1 + off2;
                    }
                } else {
                    return start + 1 + off + 1;
                }
            }
            '\n' => return start + 1 + off,
            c if c == quote => return start + 1 + off + 1,
            _ => {}
        }
    }
    text.len()
}
