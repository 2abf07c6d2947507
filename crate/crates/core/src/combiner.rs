//! Interpolation of the language model with the retrieval distribution.
//!
//! The retrieval weight λ is the posterior probability that the model is about
//! to make a mistake. Its prior is a Beta distribution centred on the model's
//! error rate over the datastore corpus, with pseudo-count `N`; the evidence
//! is how often the model missed on the last `N` positions of the context
//! being completed. λ is the posterior mean:
//!
//! ```text
//! λ = (err·N + α) / (N + n)      n observed positions, α of them misses
//! ```
//!
//! which for a full window (`n == N`) is `(α/N + err) / 2`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lm::{LanguageModel, TokenDistribution};
use crate::retrieval::{knm_distribution, NeighborSet, RetrievalIndex};
use crate::tokenizer::TokenId;

/// Outcome of replaying one context position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Observation {
    /// The model's argmax matched the actual token (event E).
    LmCorrect,
    /// The model's argmax missed (event E').
    LmMistake,
    /// Both the model and the retrieval top-1 were right; the position
    /// carries no evidence.
    Excluded,
}

/// A missing retrieval result counts as a retrieval miss.
pub fn classify_observation(lm_argmax: TokenId, retrieval_top1: Option<TokenId>, actual: TokenId) -> Observation {
    if lm_argmax != actual {
        Observation::LmMistake
    } else if retrieval_top1 == Some(actual) {
        Observation::Excluded
    } else {
        Observation::LmCorrect
    }
}

/// How excluded positions enter the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExcludedPolicy {
    /// Dropped; the window reaches further back instead.
    #[default]
    Skip,
    /// Counted as a correct prediction.
    CountAsCorrect,
}

impl FromStr for ExcludedPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skip" => Ok(ExcludedPolicy::Skip),
            "count_as_correct" => Ok(ExcludedPolicy::CountAsCorrect),
            other => Err(Error::Config(format!("unknown excluded policy `{other}`"))),
        }
    }
}

/// The last `size` evidence-bearing observations of a context, oldest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationWindow {
    size: usize,
    events: Vec<Observation>,
}

impl ObservationWindow {
    pub fn empty(size: usize) -> Self {
        ObservationWindow {
            size,
            events: Vec::new(),
        }
    }

    /// Selects the window from the per-position observations of a context.
    pub fn from_history(history: &[Observation], size: usize, policy: ExcludedPolicy) -> Self {
        let mut events: Vec<Observation> = history
            .iter()
            .rev()
            .filter_map(|&o| match (o, policy) {
                (Observation::Excluded, ExcludedPolicy::Skip) => None,
                (Observation::Excluded, ExcludedPolicy::CountAsCorrect) => Some(Observation::LmCorrect),
                (o, _) => Some(o),
            })
            .take(size)
            .collect();
        events.reverse();
        ObservationWindow { size, events }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn events(&self) -> &[Observation] {
        &self.events
    }

    /// Number of observed positions, at most `size`.
    pub fn observed(&self) -> usize {
        self.events.len()
    }

    /// Number of model mistakes in the window.
    pub fn alpha(&self) -> usize {
        self.events.iter().filter(|&&o| o == Observation::LmMistake).count()
    }
}

/// `Beta(err·N, (1 − err)·N)` prior over the probability of a model mistake.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl BetaPrior {
    pub fn from_error_rate(err: f64, n: usize) -> Self {
        let err = err.clamp(0.0, 1.0);
        BetaPrior {
            a: err * n as f64,
            b: (1.0 - err) * n as f64,
        }
    }

    /// Mean of the posterior after `alpha` mistakes in `observed` positions.
    pub fn posterior_mean(&self, alpha: usize, observed: usize) -> f64 {
        let denom = self.a + self.b + observed as f64;
        if denom == 0.0 {
            return 0.0;
        }
        (self.a + alpha as f64) / denom
    }
}

/// Posterior-mean retrieval weight; equals `err` when nothing is observed.
pub fn compute_lambda(window: &ObservationWindow, err: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&err), "error rate {err} out of range");
    let n = window.size();
    if n == 0 {
        return err.clamp(0.0, 1.0);
    }
    // Written as (err·N + α)/(N + n) so a full window reproduces
    // (α/N + err)/2 up to one rounding.
    let err = err.clamp(0.0, 1.0);
    (err * n as f64 + window.alpha() as f64) / (n + window.observed()) as f64
}

/// `λ·p_knm + (1 − λ)·p_lm`; without retrieval evidence returns `p_lm`.
pub fn interpolate(
    p_lm: &TokenDistribution,
    p_knm: Option<&TokenDistribution>,
    lambda: f64,
) -> Result<TokenDistribution> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    let Some(p_knm) = p_knm else {
        return Ok(p_lm.clone());
    };
    if p_knm.len() != p_lm.len() {
        return Err(Error::VocabMismatch {
            expected: p_lm.len(),
            found: p_knm.len(),
        });
    }
    let probs = p_lm
        .probs()
        .iter()
        .zip(p_knm.probs())
        .map(|(lm, knm)| lambda * knm + (1.0 - lambda) * lm)
        .collect();
    Ok(TokenDistribution::from_raw(probs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Decoupled store, λ from the Beta posterior.
    KnmBayesian,
    /// Decoupled store, λ fixed by hand.
    KnmFixedLambda,
    /// Decoupled store, λ equal to the prior error rate.
    KnmPriorOnly,
    /// Full store, λ fixed by hand.
    KnnLmBaseline,
    /// No retrieval.
    LmOnly,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::KnmBayesian,
        Mode::KnmFixedLambda,
        Mode::KnmPriorOnly,
        Mode::KnnLmBaseline,
        Mode::LmOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::KnmBayesian => "knm_bayesian",
            Mode::KnmFixedLambda => "knm_fixed_lambda",
            Mode::KnmPriorOnly => "knm_prior_only",
            Mode::KnnLmBaseline => "knn_lm_baseline",
            Mode::LmOnly => "lm_only",
        }
    }

    pub fn uses_retrieval(self) -> bool {
        self != Mode::LmOnly
    }

    /// Whether the mode expects the full store rather than the decoupled one.
    pub fn uses_full_store(self) -> bool {
        self == Mode::KnnLmBaseline
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinerConfig {
    pub mode: Mode,
    /// Neighbors retrieved per query.
    pub k: usize,
    /// Observation window size `N`, also the prior's pseudo-count.
    pub window: usize,
    /// λ for the fixed-coefficient modes.
    pub fixed_lambda: f64,
    pub excluded: ExcludedPolicy,
}

impl Default for CombinerConfig {
    fn default() -> Self {
        CombinerConfig {
            mode: Mode::KnmBayesian,
            k: 8,
            window: 8,
            fixed_lambda: 0.1,
            excluded: ExcludedPolicy::Skip,
        }
    }
}

impl CombinerConfig {
    pub fn with_mode(mode: Mode) -> Self {
        CombinerConfig {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window size N must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fixed_lambda) {
            return Err(Error::Config(format!(
                "fixed lambda {} outside [0, 1]",
                self.fixed_lambda
            )));
        }
        Ok(())
    }
}

/// Everything the model and the index say about one context.
#[derive(Debug, Clone)]
pub struct Evidence {
    pub p_lm: TokenDistribution,
    pub neighbors: NeighborSet,
    pub p_knm: Option<TokenDistribution>,
}

impl Evidence {
    /// Observation for this context once its actual next token is known.
    pub fn observe(&self, actual: TokenId) -> Observation {
        classify_observation(self.p_lm.argmax(), self.neighbors.top1(), actual)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub token: TokenId,
    pub distribution: TokenDistribution,
    pub lambda: f64,
}

/// A language model, an optional index and a combination rule.
pub struct Engine<'a> {
    lm: &'a dyn LanguageModel,
    index: Option<&'a RetrievalIndex>,
    config: CombinerConfig,
}

impl<'a> Engine<'a> {
    /// Retrieval modes need an index whose dimension matches the model's
    /// embeddings and whose values fit the model's vocabulary.
    pub fn new(lm: &'a dyn LanguageModel, index: Option<&'a RetrievalIndex>, config: CombinerConfig) -> Result<Self> {
        config.validate()?;
        if let Some(index) = index {
            if index.dim() != lm.embedding_dim() {
                return Err(Error::DimensionMismatch {
                    expected: lm.embedding_dim(),
                    found: index.dim(),
                });
            }
            if let Some(v) = index.store().values().iter().find(|v| v.index() >= lm.vocab_size()) {
                return Err(Error::VocabMismatch {
                    expected: lm.vocab_size(),
                    found: v.index() + 1,
                });
            }
        } else if config.mode.uses_retrieval() {
            return Err(Error::InvalidArgument(format!(
                "mode {} needs a datastore",
                config.mode
            )));
        }
        Ok(Engine { lm, index, config })
    }

    pub fn config(&self) -> &CombinerConfig {
        &self.config
    }

    pub fn lm(&self) -> &dyn LanguageModel {
        self.lm
    }

    /// Error rate of the model on the datastore corpus; zero without a store.
    pub fn error_rate(&self) -> f64 {
        self.index.map_or(0.0, |i| i.store().error_rate())
    }

    pub fn evidence(&self, context: &[TokenId]) -> Result<Evidence> {
        let p_lm = self.lm.predict(context)?;
        let (neighbors, p_knm) = match self.index {
            Some(index) if self.config.mode.uses_retrieval() => {
                let query = self.lm.embed(context)?;
                let neighbors = index.search(query.as_slice(), self.config.k)?;
                let p_knm = knm_distribution(&neighbors, self.lm.vocab_size());
                (neighbors, p_knm)
            }
            _ => (NeighborSet::default(), None),
        };
        Ok(Evidence { p_lm, neighbors, p_knm })
    }

    /// Rebuilds the observation window of `context` by replaying its own
    /// prefixes, most recent first, until the window is full.
    pub fn replay_window(&self, context: &[TokenId]) -> Result<ObservationWindow> {
        let n = self.config.window;
        let mut history = Vec::new();
        let mut kept = 0;
        for i in (0..context.len()).rev() {
            if kept == n {
                break;
            }
            let obs = self.evidence(&context[..i])?.observe(context[i]);
            if !(obs == Observation::Excluded && self.config.excluded == ExcludedPolicy::Skip) {
                kept += 1;
            }
            history.push(obs);
        }
        history.reverse();
        Ok(ObservationWindow::from_history(&history, n, self.config.excluded))
    }

    pub fn lambda(&self, window: &ObservationWindow) -> f64 {
        match self.config.mode {
            Mode::KnmBayesian => compute_lambda(window, self.error_rate()),
            Mode::KnmFixedLambda | Mode::KnnLmBaseline => self.config.fixed_lambda,
            Mode::KnmPriorOnly => self.error_rate(),
            Mode::LmOnly => 0.0,
        }
    }

    /// Combines precomputed evidence under a known window.
    pub fn combine(&self, evidence: &Evidence, window: &ObservationWindow) -> Result<Completion> {
        self.combine_parts(&evidence.p_lm, evidence.p_knm.as_ref(), window)
    }

    pub fn combine_parts(
        &self,
        p_lm: &TokenDistribution,
        p_knm: Option<&TokenDistribution>,
        window: &ObservationWindow,
    ) -> Result<Completion> {
        let lambda = self.lambda(window);
        let distribution = interpolate(p_lm, p_knm, lambda)?;
        Ok(Completion {
            token: distribution.argmax(),
            distribution,
            lambda,
        })
    }

    fn window_for(&self, context: &[TokenId]) -> Result<ObservationWindow> {
        if self.config.mode == Mode::KnmBayesian {
            self.replay_window(context)
        } else {
            Ok(ObservationWindow::empty(self.config.window))
        }
    }

    /// Next-token prediction for `context`.
    pub fn complete_token(&self, context: &[TokenId]) -> Result<Completion> {
        let window = self.window_for(context)?;
        self.combine(&self.evidence(context)?, &window)
    }

    /// Greedy decoding until end-of-line or `max_tokens`. The window is taken
    /// from the given context and stays fixed while decoding, since generated
    /// tokens have no ground truth to compare against.
    pub fn complete_line(&self, context: &[TokenId], max_tokens: usize) -> Result<Vec<TokenId>> {
        let window = self.window_for(context)?;
        self.complete_line_with_window(context, &window, max_tokens)
    }

    pub fn complete_line_with_window(
        &self,
        context: &[TokenId],
        window: &ObservationWindow,
        max_tokens: usize,
    ) -> Result<Vec<TokenId>> {
        if max_tokens == 0 {
            return Err(Error::InvalidArgument("max_tokens must be at least 1".into()));
        }
        let mut ctx = context.to_vec();
        let mut out = Vec::new();
        while out.len() < max_tokens {
            let next = self.combine(&self.evidence(&ctx)?, window)?.token;
            out.push(next);
            if next == TokenId::EOL {
                break;
            }
            ctx.push(next);
        }
        Ok(out)
    }
}

pub fn complete_token(
    context: &[TokenId],
    lm: &dyn LanguageModel,
    index: Option<&RetrievalIndex>,
    config: CombinerConfig,
) -> Result<Completion> {
    Engine::new(lm, index, config)?.complete_token(context)
}

pub fn complete_line(
    context: &[TokenId],
    lm: &dyn LanguageModel,
    index: Option<&RetrievalIndex>,
    config: CombinerConfig,
    max_tokens: usize,
) -> Result<Vec<TokenId>> {
    Engine::new(lm, index, config)?.complete_line(context, max_tokens)
}
