use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

/// Allowed deviation of a distribution's total mass from 1.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Normalized probability vector over the whole vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    /// Wraps `probs` after checking non-negativity and unit mass.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidArgument(format!("invalid probability {bad}")));
        }
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidArgument(format!("probabilities sum to {mass}, not 1")));
        }
        Ok(TokenDistribution { probs })
    }

    /// Normalizes non-negative weights with positive total mass.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let mass: f64 = weights.iter().sum();
        if mass.is_nan() || mass <= 0.0 {
            return Err(Error::InvalidArgument("weights have no mass".into()));
        }
        for w in &mut weights {
            *w /= mass;
        }
        Ok(TokenDistribution { probs: weights })
    }

    pub fn uniform(vocab_size: usize) -> Self {
        assert!(vocab_size > 0, "uniform distribution over an empty vocabulary");
        TokenDistribution {
            probs: vec![1.0 / vocab_size as f64; vocab_size],
        }
    }

    /// Numerically stable softmax (max-shifted).
    pub fn softmax(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::EmptyInput);
        }
        if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(Error::InvalidArgument("logits must not be NaN or +inf".into()));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::from_weights(logits.iter().map(|l| (l - max).exp()).collect())
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!(probs.iter().all(|p| *p >= 0.0));
        TokenDistribution { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs.get(id.index()).copied().unwrap_or(0.0)
    }

    /// Most probable token; ties go to the lowest id.
    pub fn argmax(&self) -> TokenId {
        argmax(&self.probs)
    }

    pub fn mass(&self) -> f64 {
        self.probs.iter().sum()
    }
}

pub(crate) fn argmax(probs: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    TokenId::from(best)
}

/// Fixed-dimension context vector produced by a language model.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEmbedding(Vec<f32>);

impl ContextEmbedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("embedding has non-finite entries".into()));
        }
        Ok(ContextEmbedding(values))
    }

    pub fn zeros(dim: usize) -> Self {
        ContextEmbedding(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn argmax_ties_go_to_lowest_id() {
        let d = TokenDistribution::new(vec![0.25, 0.375, 0.375]).unwrap();
        assert_eq!(d.argmax(), TokenId(1));
        assert_eq!(TokenDistribution::uniform(4).argmax(), TokenId(0));
    }

    #[test]
    fn rejects_invalid_vectors() {
        assert!(TokenDistribution::new(vec![0.5, 0.4]).is_err());
        assert!(TokenDistribution::new(vec![1.5, -0.5]).is_err());
        assert!(TokenDistribution::new(vec![]).is_err());
        assert!(TokenDistribution::from_weights(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn softmax_is_shift_stable() {
        let d = TokenDistribution::softmax(&[1000.0, 1000.0 + 2f64.ln()]).unwrap();
        assert_abs_diff_eq!(d.probs()[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.probs()[1], 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn embedding_rejects_nan() {
        assert!(ContextEmbedding::new(vec![0.0, f32::NAN]).is_err());
    }
}
