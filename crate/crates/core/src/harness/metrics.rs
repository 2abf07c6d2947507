use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

/// Percentage of positions where the prediction equals the reference.
pub fn token_accuracy(predictions: &[TokenId], actuals: &[TokenId]) -> Result<f64> {
    if predictions.len() != actuals.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: actuals.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = predictions.iter().zip(actuals).filter(|(p, a)| p == a).count();
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let subst = prev[j] + usize::from(ca != cb);
            cur[j + 1] = subst.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `100 · (1 − lev(a, b) / max(|a|, |b|))`, lengths in characters; two empty
/// strings are fully similar.
pub fn edit_similarity(a: &str, b: &str) -> f64 {
    let max = a.chars().count().max(b.chars().count());
    if max == 0 {
        return 100.0;
    }
    100.0 * (1.0 - levenshtein(a, b) as f64 / max as f64)
}

/// 1 when the strings agree after stripping trailing whitespace, else 0.
pub fn exact_match(a: &str, b: &str) -> u8 {
    u8::from(a.trim_end() == b.trim_end())
}
