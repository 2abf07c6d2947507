//! Experiment orchestration: corpora in, one report per combiner setting out.
//!
//! Every test position is probed once (model distribution, embedding and the
//! nearest neighbors in each store at the largest `k` any setting asks for);
//! all modes and settings are then scored from that shared probe.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, LmSpec};
use super::metrics::{edit_similarity, exact_match};
use crate::combiner::{
    classify_observation, CombinerConfig, Engine, ExcludedPolicy, Mode, Observation, ObservationWindow,
};
use crate::datastore::{Datastore, StoreMode};
use crate::error::{Error, Result, StageExt};
use crate::lm::{LanguageModel, NgramConfig, NgramLm, RemoteConfig, RemoteLm, TokenDistribution};
use crate::retrieval::{knm_distribution, NeighborSet, RetrievalIndex};
use crate::tokenizer::{read_corpus, SourceRecord, TokenClass, TokenId, TokenSequence, Vocabulary};

pub const LAMBDA_BINS: usize = 20;
const CLASSES: usize = TokenClass::ALL.len();

/// Combiner settings shared by every mode of one report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub k: usize,
    pub window: usize,
    pub fixed_lambda: f64,
    pub excluded: ExcludedPolicy,
}

impl Settings {
    pub fn combiner(&self, mode: Mode) -> CombinerConfig {
        CombinerConfig {
            mode,
            k: self.k,
            window: self.window,
            fixed_lambda: self.fixed_lambda,
            excluded: self.excluded,
        }
    }
}

impl From<&ExperimentConfig> for Settings {
    fn from(c: &ExperimentConfig) -> Self {
        Settings {
            k: c.k,
            window: c.window,
            fixed_lambda: c.fixed_lambda,
            excluded: c.excluded,
        }
    }
}

/// Scores of one mode under one setting.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeReport {
    pub mode: Mode,
    pub tokens: u64,
    pub correct: u64,
    /// Indexed by [`TokenClass::index`].
    pub class_tokens: [u64; CLASSES],
    pub class_correct: [u64; CLASSES],
    pub line_items: u64,
    pub line_exact: u64,
    pub line_es_sum: f64,
    pub lambda_histogram: [u64; LAMBDA_BINS],
    pub lambda_sum: f64,
    pub db_bytes: u64,
    /// Time spent in the model and index calls this mode needs.
    pub seconds: f64,
}

impl ModeReport {
    fn new(mode: Mode, db_bytes: u64) -> Self {
        ModeReport {
            mode,
            tokens: 0,
            correct: 0,
            class_tokens: [0; CLASSES],
            class_correct: [0; CLASSES],
            line_items: 0,
            line_exact: 0,
            line_es_sum: 0.0,
            lambda_histogram: [0; LAMBDA_BINS],
            lambda_sum: 0.0,
            db_bytes,
            seconds: 0.0,
        }
    }

    fn record_token(&mut self, class: usize, hit: bool, lambda: f64) {
        self.tokens += 1;
        self.class_tokens[class] += 1;
        if hit {
            self.correct += 1;
            self.class_correct[class] += 1;
        }
        self.lambda_histogram[lambda_bin(lambda)] += 1;
        self.lambda_sum += lambda;
    }

    fn merge(&mut self, other: &ModeReport) {
        self.tokens += other.tokens;
        self.correct += other.correct;
        for c in 0..CLASSES {
            self.class_tokens[c] += other.class_tokens[c];
            self.class_correct[c] += other.class_correct[c];
        }
        self.line_items += other.line_items;
        self.line_exact += other.line_exact;
        self.line_es_sum += other.line_es_sum;
        for (a, b) in self.lambda_histogram.iter_mut().zip(&other.lambda_histogram) {
            *a += b;
        }
        self.lambda_sum += other.lambda_sum;
        self.seconds += other.seconds;
    }

    pub fn token_accuracy(&self) -> f64 {
        percent(self.correct, self.tokens).unwrap_or(0.0)
    }

    /// `None` when the test set has no token of this class.
    pub fn class_accuracy(&self, class: TokenClass) -> Option<f64> {
        percent(self.class_correct[class.index()], self.class_tokens[class.index()])
    }

    pub fn line_em(&self) -> Option<f64> {
        percent(self.line_exact, self.line_items)
    }

    pub fn line_es(&self) -> Option<f64> {
        (self.line_items > 0).then(|| self.line_es_sum / self.line_items as f64)
    }

    pub fn mean_lambda(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.lambda_sum / self.tokens as f64
        }
    }

    pub fn tokens_per_second(&self) -> f64 {
        if self.seconds > 0.0 {
            self.tokens as f64 / self.seconds
        } else {
            f64::INFINITY
        }
    }
}

fn percent(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Bin of `lambda` among [`LAMBDA_BINS`] equal-width bins over `[0, 1]`.
pub fn lambda_bin(lambda: f64) -> usize {
    ((lambda * LAMBDA_BINS as f64) as usize).min(LAMBDA_BINS - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub settings: Settings,
    /// Model error rate on the datastore corpus.
    pub error_rate: f64,
    pub decoupled_entries: usize,
    pub full_entries: Option<usize>,
    pub modes: Vec<ModeReport>,
}

#[derive(Serialize)]
struct Record<'a> {
    mode: &'a str,
    metric: &'a str,
    value: Option<f64>,
}

impl EvalReport {
    pub fn mode(&self, mode: Mode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    /// Token accuracy of `mode`, panicking if it was not evaluated.
    pub fn accuracy(&self, mode: Mode) -> f64 {
        self.mode(mode)
            .unwrap_or_else(|| panic!("mode {mode} not in report"))
            .token_accuracy()
    }

    /// One JSON object per line, one line per (mode, metric) cell. Wall-clock
    /// throughput is left out unless `timing` is set, so that identical runs
    /// produce identical bytes.
    pub fn records(&self, timing: bool) -> String {
        let mut out = String::new();
        let mut push = |mode: &str, metric: &str, value: Option<f64>| {
            let line = serde_json::to_string(&Record { mode, metric, value }).expect("plain record");
            out.push_str(&line);
            out.push('\n');
        };
        push("all", "k", Some(self.settings.k as f64));
        push("all", "N", Some(self.settings.window as f64));
        push("all", "lambda", Some(self.settings.fixed_lambda));
        push("all", "error_rate", Some(self.error_rate));
        push("all", "decoupled_entries", Some(self.decoupled_entries as f64));
        push("all", "full_entries", self.full_entries.map(|n| n as f64));
        for m in &self.modes {
            let name = m.mode.name();
            push(name, "tokens", Some(m.tokens as f64));
            push(name, "token_accuracy", Some(m.token_accuracy()));
            for class in TokenClass::ALL {
                push(
                    name,
                    &format!("tokens_{}", class.name()),
                    Some(m.class_tokens[class.index()] as f64),
                );
                push(name, &format!("accuracy_{}", class.name()), m.class_accuracy(class));
            }
            push(name, "line_items", Some(m.line_items as f64));
            push(name, "line_em", m.line_em());
            push(name, "line_es", m.line_es());
            push(name, "db_bytes", Some(m.db_bytes as f64));
            push(name, "mean_lambda", Some(m.mean_lambda()));
            for (i, count) in m.lambda_histogram.iter().enumerate() {
                push(name, &format!("lambda_bin_{i:02}"), Some(*count as f64));
            }
            if timing {
                push(name, "tokens_per_second", Some(m.tokens_per_second()));
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "k={} N={} lambda={} error_rate={:.4} decoupled={} full={}",
            self.settings.k,
            self.settings.window,
            self.settings.fixed_lambda,
            self.error_rate,
            self.decoupled_entries,
            self.full_entries.map_or("-".to_owned(), |n| n.to_string()),
        );
        let _ = write!(out, "{:<18}{:>8}", "mode", "acc");
        for class in TokenClass::ALL {
            let _ = write!(out, "{:>8}", &class.name()[..class.name().len().min(7)]);
        }
        let _ = writeln!(
            out,
            "{:>8}{:>8}{:>8}{:>12}{:>12}",
            "EM", "ES", "lambda", "db_bytes", "tok/s"
        );
        let cell = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:.2}"));
        for m in &self.modes {
            let _ = write!(out, "{:<18}{:>8.2}", m.mode.name(), m.token_accuracy());
            for class in TokenClass::ALL {
                let _ = write!(out, "{:>8}", cell(m.class_accuracy(class)));
            }
            let _ = writeln!(
                out,
                "{:>8}{:>8}{:>8.3}{:>12}{:>12.0}",
                cell(m.line_em()),
                cell(m.line_es()),
                m.mean_lambda(),
                m.db_bytes,
                m.tokens_per_second()
            );
        }
        out
    }

    /// Retrieval modes whose throughput falls more than `floor` times below
    /// `lm_only`, as human-readable complaints.
    pub fn check_throughput(&self, floor: f64) -> Vec<String> {
        let Some(base) = self.mode(Mode::LmOnly) else {
            return Vec::new();
        };
        self.modes
            .iter()
            .filter(|m| m.mode.uses_retrieval())
            .filter_map(|m| {
                let slowdown = base.tokens_per_second() / m.tokens_per_second();
                (slowdown > floor).then(|| format!("{} is {slowdown:.1}x slower than lm_only (floor {floor}x)", m.mode))
            })
            .collect()
    }
}

/// One line-completion item: complete `seq[..cut]` and compare against
/// `seq[cut..end]`, where `end` is the position of the line's end-of-line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineItem {
    pub sequence: usize,
    pub cut: usize,
    pub end: usize,
}

/// Model, stores and test data, ready to be scored under any settings.
pub struct Experiment {
    config: ExperimentConfig,
    vocab: Vocabulary,
    lm: Box<dyn LanguageModel>,
    decoupled: RetrievalIndex,
    full: Option<RetrievalIndex>,
    test: Vec<TokenSequence>,
    classes: Vec<usize>,
    lines: Vec<LineItem>,
}

struct Probe {
    p_lm: TokenDistribution,
    decoupled: NeighborSet,
    full: NeighborSet,
    lm_secs: f64,
    embed_secs: f64,
    decoupled_secs: f64,
    full_secs: f64,
}

struct Plan<'a> {
    settings: Vec<Settings>,
    engines: Vec<Vec<Engine<'a>>>,
    k_max: usize,
    retrieval: bool,
    full: bool,
}

fn tokenize_all(vocab: &Vocabulary, records: &[SourceRecord]) -> Vec<TokenSequence> {
    records.iter().map(|r| vocab.tokenize(&r.text)).collect()
}

fn nonempty(seqs: &[TokenSequence]) -> Result<()> {
    if seqs.iter().all(Vec::is_empty) {
        return Err(Error::EmptyCorpus);
    }
    Ok(())
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        Self::prepare_with(config, |lm| lm)
    }

    /// Like [`Experiment::prepare`], with the configured model passed through
    /// `wrap` before anything is built from it, e.g. to add caching or
    /// instrumentation.
    pub fn prepare_with(
        config: ExperimentConfig,
        wrap: impl FnOnce(Box<dyn LanguageModel>) -> Box<dyn LanguageModel>,
    ) -> Result<Self> {
        config.validate()?;
        let db_records = read_corpus(&config.db_corpus).stage("load datastore corpus")?;
        let test_records = read_corpus(&config.test_corpus).stage("load test corpus")?;
        let lm_records = match &config.lm_corpus {
            Some(path) if matches!(config.lm, LmSpec::TrainReference) => {
                Some(read_corpus(path).stage("load LM corpus")?)
            }
            _ => None,
        };

        let vocab = match &config.vocab {
            Some(path) => Vocabulary::load(path),
            None => Vocabulary::build(lm_records.iter().flatten().chain(&db_records).map(|r| r.text.as_str())),
        }
        .stage("vocabulary")?;

        let db = tokenize_all(&vocab, &db_records);
        let test = tokenize_all(&vocab, &test_records);
        nonempty(&db).stage("tokenize datastore corpus")?;
        nonempty(&test).stage("tokenize test corpus")?;

        let lm = Self::language_model(&config, &vocab, lm_records.as_deref(), &db).stage("language model")?;
        let lm = wrap(lm);

        let decoupled =
            Datastore::build(&db, lm.as_ref(), config.dim, StoreMode::Decoupled).stage("build decoupled datastore")?;
        let full = if config.modes.contains(&Mode::KnnLmBaseline) {
            Some(Datastore::build(&db, lm.as_ref(), config.dim, StoreMode::Full).stage("build full datastore")?)
        } else {
            None
        };
        if let Some(dir) = &config.db_dir {
            Self::write_stores(dir, &decoupled, full.as_ref()).stage("write datastores")?;
        }

        let classes = (0..vocab.len())
            .map(|i| vocab.class_of(TokenId(i as u32), config.language).index())
            .collect();
        let lines = if config.line_task {
            line_items(&test, config.seed, config.max_line_items)
        } else {
            Vec::new()
        };
        Ok(Experiment {
            vocab,
            lm,
            decoupled: RetrievalIndex::new(decoupled),
            full: full.map(RetrievalIndex::new),
            test,
            classes,
            lines,
            config,
        })
    }

    fn language_model(
        config: &ExperimentConfig,
        vocab: &Vocabulary,
        lm_records: Option<&[SourceRecord]>,
        db: &[TokenSequence],
    ) -> Result<Box<dyn LanguageModel>> {
        Ok(match &config.lm {
            LmSpec::TrainReference => {
                let owned;
                let corpus = match lm_records {
                    Some(records) => {
                        owned = tokenize_all(vocab, records);
                        &owned[..]
                    }
                    None => db,
                };
                let ngram = NgramConfig {
                    order: config.lm_order,
                    smoothing_k: config.smoothing_k,
                    dim: config.dim,
                    seed: config.seed,
                };
                Box::new(NgramLm::train(corpus, vocab.len(), ngram)?)
            }
            LmSpec::ReferenceFile(path) => {
                let lm = NgramLm::load(path)?;
                if lm.vocab_size() != vocab.len() {
                    return Err(Error::VocabMismatch {
                        expected: vocab.len(),
                        found: lm.vocab_size(),
                    });
                }
                Box::new(lm)
            }
            LmSpec::Remote(url) => Box::new(RemoteLm::new(RemoteConfig {
                base_url: url.clone(),
                vocab_size: vocab.len(),
                dim: config.dim,
                timeout: config.remote_timeout,
                max_in_flight: config.remote_max_in_flight,
                top_k: config.remote_top_k,
            })?),
        })
    }

    fn write_stores(dir: &Path, decoupled: &Datastore, full: Option<&Datastore>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        decoupled.save(dir.join("decoupled.knm"))?;
        if let Some(full) = full {
            full.save(dir.join("full.knm"))?;
        }
        Ok(())
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn lm(&self) -> &dyn LanguageModel {
        self.lm.as_ref()
    }

    pub fn decoupled(&self) -> &RetrievalIndex {
        &self.decoupled
    }

    pub fn full(&self) -> Option<&RetrievalIndex> {
        self.full.as_ref()
    }

    pub fn test_sequences(&self) -> &[TokenSequence] {
        &self.test
    }

    pub fn line_items(&self) -> &[LineItem] {
        &self.lines
    }

    /// Scores the configured modes under the configured settings.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let settings = Settings::from(&self.config);
        Ok(self.evaluate_many(&[settings])?.remove(0))
    }

    /// Scores the configured modes under each of `settings`, sharing the
    /// model and index calls between them.
    pub fn evaluate_many(&self, settings: &[Settings]) -> Result<Vec<EvalReport>> {
        if settings.is_empty() {
            return Err(Error::InvalidArgument("no settings to evaluate".into()));
        }
        let plan = self.plan(settings).stage("evaluate")?;
        let per_sequence = (0..self.test.len())
            .into_par_iter()
            .map(|s| self.score_sequence(s, &plan))
            .collect::<Result<Vec<_>>>()
            .stage("evaluate")?;

        let modes = &self.config.modes;
        Ok(settings
            .iter()
            .enumerate()
            .map(|(si, &settings)| {
                let mut reports: Vec<ModeReport> =
                    modes.iter().map(|&m| ModeReport::new(m, self.db_bytes(m))).collect();
                for seq in &per_sequence {
                    for (mi, report) in reports.iter_mut().enumerate() {
                        report.merge(&seq[si][mi]);
                    }
                }
                EvalReport {
                    settings,
                    error_rate: self.decoupled.store().error_rate(),
                    decoupled_entries: self.decoupled.store().len(),
                    full_entries: self.full.as_ref().map(|f| f.store().len()),
                    modes: reports,
                }
            })
            .collect())
    }

    fn db_bytes(&self, mode: Mode) -> u64 {
        if mode.uses_full_store() {
            self.full.as_ref().map_or(0, |f| f.store().encoded_len() as u64)
        } else if mode.uses_retrieval() {
            self.decoupled.store().encoded_len() as u64
        } else {
            0
        }
    }

    fn plan(&self, settings: &[Settings]) -> Result<Plan<'_>> {
        let engines = settings
            .iter()
            .map(|s| {
                self.config
                    .modes
                    .iter()
                    .map(|&mode| {
                        let index = if mode.uses_full_store() {
                            self.full.as_ref()
                        } else {
                            Some(&self.decoupled)
                        };
                        Engine::new(self.lm.as_ref(), index, s.combiner(mode))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Plan {
            settings: settings.to_vec(),
            engines,
            k_max: settings.iter().map(|s| s.k).max().unwrap_or(1),
            retrieval: self.config.modes.iter().any(|m| m.uses_retrieval()),
            full: self.config.modes.iter().any(|m| m.uses_full_store()),
        })
    }

    fn probe(&self, context: &[TokenId], plan: &Plan) -> Result<Probe> {
        let clock = Instant::now();
        let p_lm = self.lm.predict(context)?;
        let lm_secs = clock.elapsed().as_secs_f64();
        let mut probe = Probe {
            p_lm,
            decoupled: NeighborSet::default(),
            full: NeighborSet::default(),
            lm_secs,
            embed_secs: 0.0,
            decoupled_secs: 0.0,
            full_secs: 0.0,
        };
        if !plan.retrieval {
            return Ok(probe);
        }
        let clock = Instant::now();
        let query = self.lm.embed(context)?;
        probe.embed_secs = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        probe.decoupled = self.decoupled.search(query.as_slice(), plan.k_max)?;
        probe.decoupled_secs = clock.elapsed().as_secs_f64();

        if let (true, Some(full)) = (plan.full, &self.full) {
            let clock = Instant::now();
            probe.full = full.search(query.as_slice(), plan.k_max)?;
            probe.full_secs = clock.elapsed().as_secs_f64();
        }
        Ok(probe)
    }

    /// Retrieval distributions of a probe under one setting's `k`.
    fn retrieval_at(&self, probe: &Probe, k: usize) -> (Option<TokenDistribution>, Option<TokenDistribution>) {
        let v = self.lm.vocab_size();
        (
            knm_distribution(&probe.decoupled.truncated(k), v),
            knm_distribution(&probe.full.truncated(k), v),
        )
    }

    fn pick<'p>(
        mode: Mode,
        decoupled: &'p Option<TokenDistribution>,
        full: &'p Option<TokenDistribution>,
    ) -> Option<&'p TokenDistribution> {
        if mode.uses_full_store() {
            full.as_ref()
        } else if mode.uses_retrieval() {
            decoupled.as_ref()
        } else {
            None
        }
    }

    fn score_sequence(&self, s: usize, plan: &Plan) -> Result<Vec<Vec<ModeReport>>> {
        let seq = &self.test[s];
        let modes = &self.config.modes;
        let mut out: Vec<Vec<ModeReport>> = plan
            .settings
            .iter()
            .map(|_| modes.iter().map(|&m| ModeReport::new(m, 0)).collect())
            .collect();
        let mut history: Vec<Observation> = Vec::with_capacity(seq.len());

        for (t, &actual) in seq.iter().enumerate() {
            let probe = self.probe(&seq[..t], plan)?;
            let class = self.classes[actual.index()];
            for (si, settings) in plan.settings.iter().enumerate() {
                let (p_dec, p_full) = self.retrieval_at(&probe, settings.k);
                let window = ObservationWindow::from_history(&history, settings.window, settings.excluded);
                for (mi, &mode) in modes.iter().enumerate() {
                    let p_knm = Self::pick(mode, &p_dec, &p_full);
                    let c = plan.engines[si][mi].combine_parts(&probe.p_lm, p_knm, &window)?;
                    let report = &mut out[si][mi];
                    report.record_token(class, c.token == actual, c.lambda);
                    report.seconds += probe.lm_secs
                        + if mode.uses_full_store() {
                            probe.embed_secs + probe.full_secs
                        } else if mode.uses_retrieval() {
                            probe.embed_secs + probe.decoupled_secs
                        } else {
                            0.0
                        };
                }
            }
            history.push(classify_observation(
                probe.p_lm.argmax(),
                probe.decoupled.top1(),
                actual,
            ));
        }

        let first = self.lines.partition_point(|l| l.sequence < s);
        for item in self.lines[first..].iter().take_while(|l| l.sequence == s) {
            self.score_line(item, &history, plan, &mut out)?;
        }
        Ok(out)
    }

    fn score_line(
        &self,
        item: &LineItem,
        history: &[Observation],
        plan: &Plan,
        out: &mut [Vec<ModeReport>],
    ) -> Result<()> {
        let seq = &self.test[item.sequence];
        let reference = self.vocab.detokenize(&seq[item.cut..item.end]);
        // Greedy paths of different modes mostly coincide; probe each
        // generated prefix once.
        let mut memo: HashMap<Vec<TokenId>, Probe> = HashMap::new();
        let mut context = seq[..item.cut].to_vec();
        for (si, settings) in plan.settings.iter().enumerate() {
            let window = ObservationWindow::from_history(&history[..item.cut], settings.window, settings.excluded);
            for (mi, &mode) in self.config.modes.iter().enumerate() {
                let mut generated: Vec<TokenId> = Vec::new();
                while generated.len() < self.config.line_max_tokens {
                    if !memo.contains_key(&generated) {
                        context.truncate(item.cut);
                        context.extend_from_slice(&generated);
                        let probe = self.probe(&context, plan)?;
                        memo.insert(generated.clone(), probe);
                    }
                    let probe = &memo[&generated];
                    let (p_dec, p_full) = self.retrieval_at(probe, settings.k);
                    let p_knm = Self::pick(mode, &p_dec, &p_full);
                    let next = plan.engines[si][mi].combine_parts(&probe.p_lm, p_knm, &window)?.token;
                    if next == TokenId::EOL {
                        break;
                    }
                    generated.push(next);
                }
                let prediction = self.vocab.detokenize(&generated);
                let report = &mut out[si][mi];
                report.line_items += 1;
                report.line_exact += u64::from(exact_match(&prediction, &reference));
                report.line_es_sum += edit_similarity(&prediction, &reference);
            }
        }
        Ok(())
    }
}

/// Seeded line-completion items: every line of at least two tokens is cut at
/// a uniform position in `[1, len − 1]`. `limit` caps the number of items
/// (0 for no cap).
pub fn line_items(test: &[TokenSequence], seed: u64, limit: usize) -> Vec<LineItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for (s, seq) in test.iter().enumerate() {
        let mut start = 0;
        while start < seq.len() {
            let end = seq[start..]
                .iter()
                .position(|&t| t == TokenId::EOL)
                .map_or(seq.len(), |p| start + p);
            let len = end - start;
            if len >= 2 {
                items.push(LineItem {
                    sequence: s,
                    cut: start + rng.gen_range(1..len),
                    end,
                });
                if items.len() == limit {
                    return items;
                }
            }
            start = end + 1;
        }
    }
    items
}

/// Prepares and scores an experiment under its configured settings.
pub fn run_experiment(config: ExperimentConfig) -> Result<EvalReport> {
    Experiment::prepare(config)?.evaluate()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    K,
    Window,
    Lambda,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::Window => "N",
            SweepAxis::Lambda => "lambda",
        }
    }

    fn apply(self, base: Settings, value: f64) -> Result<Settings> {
        let count = || {
            if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!(
                    "{} must be a positive integer, got {value}",
                    self.name()
                )))
            }
        };
        let s = match self {
            SweepAxis::K => Settings { k: count()?, ..base },
            SweepAxis::Window => Settings {
                window: count()?,
                ..base
            },
            SweepAxis::Lambda => Settings {
                fixed_lambda: value,
                ..base
            },
        };
        s.combiner(Mode::KnmBayesian).validate()?;
        Ok(s)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepAxis::K),
            "N" | "n" | "window" => Ok(SweepAxis::Window),
            "lambda" | "fixed_lambda" => Ok(SweepAxis::Lambda),
            _ => Err(Error::Config(format!("unknown sweep axis `{s}` (k, N or lambda)"))),
        }
    }
}

/// One report per value of `axis`, everything else as configured.
pub fn sweep(config: ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<EvalReport>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let base = Settings::from(&config);
    let settings = values
        .iter()
        .map(|&v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    Experiment::prepare(config)?.evaluate_many(&settings)
}

/// CSV with one row per (value, mode).
pub fn sweep_csv(axis: SweepAxis, values: &[f64], reports: &[EvalReport]) -> String {
    let mut out = format!(
        "{},mode,token_accuracy,line_em,line_es,mean_lambda,db_bytes\n",
        axis.name()
    );
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
    for (value, report) in values.iter().zip(reports) {
        for m in &report.modes {
            let _ = writeln!(
                out,
                "{value},{},{:.4},{},{},{:.6},{}",
                m.mode,
                m.token_accuracy(),
                cell(m.line_em()),
                cell(m.line_es()),
                m.mean_lambda(),
                m.db_bytes
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> TokenSequence {
        v.iter().map(|&i| TokenId(i)).collect()
    }

    #[test]
    fn lambda_bins() {
        assert_eq!(lambda_bin(0.0), 0);
        assert_eq!(lambda_bin(0.049), 0);
        assert_eq!(lambda_bin(0.05), 1);
        assert_eq!(lambda_bin(0.999), 19);
        assert_eq!(lambda_bin(1.0), 19);
    }

    #[test]
    fn line_cuts_stay_inside_lines() {
        // a b c EOL d EOL e f EOL
        let test = vec![ids(&[2, 3, 4, 0, 5, 0, 6, 7, 0]), ids(&[8, 9])];
        let items = line_items(&test, 3, 0);
        assert_eq!(items.len(), 3);
        assert_eq!((items[0].sequence, items[0].end), (0, 3));
        assert!((1..=2).contains(&items[0].cut));
        assert_eq!((items[1].cut, items[1].end), (7, 8));
        assert_eq!((items[2].sequence, items[2].cut, items[2].end), (1, 1, 2));
        assert_eq!(items, line_items(&test, 3, 0));
        assert_eq!(line_items(&test, 3, 2).len(), 2);
    }

    #[test]
    fn sweep_axes() {
        let base = Settings {
            k: 8,
            window: 8,
            fixed_lambda: 0.1,
            excluded: ExcludedPolicy::Skip,
        };
        assert_eq!(SweepAxis::K.apply(base, 4.0).unwrap().k, 4);
        assert_eq!(SweepAxis::Window.apply(base, 32.0).unwrap().window, 32);
        assert_eq!(SweepAxis::Lambda.apply(base, 0.0).unwrap().fixed_lambda, 0.0);
        assert!(SweepAxis::K.apply(base, 1.5).is_err());
        assert!(SweepAxis::Window.apply(base, 0.0).is_err());
        assert!(SweepAxis::Lambda.apply(base, 1.5).is_err());
        assert_eq!("N".parse::<SweepAxis>().unwrap(), SweepAxis::Window);
        assert!("q".parse::<SweepAxis>().is_err());
    }
}
