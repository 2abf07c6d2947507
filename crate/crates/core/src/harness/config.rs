//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the directory of the config file.
//!
//! ```text
//! db_corpus   = db.jsonl        # in-domain corpus for the datastores
//! test_corpus = test.jsonl
//! lm_corpus   = general.jsonl   # training corpus of the reference LM
//! lm          = ref             # ref | ref:<lm file> | url:<base url>
//! k = 8
//! N = 8
//! lambda = 0.1
//! modes = knm_bayesian, lm_only
//! seed = 7
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::combiner::{CombinerConfig, ExcludedPolicy, Mode};
use crate::error::{Error, Result};
use crate::lm::DEFAULT_DIM;
use crate::tokenizer::Language;

/// Where next-token predictions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum LmSpec {
    /// Train the reference n-gram model on `lm_corpus`.
    TrainReference,
    /// Load a saved reference model.
    ReferenceFile(PathBuf),
    /// Remote model at this base URL.
    Remote(String),
}

impl LmSpec {
    pub fn parse(s: &str, base: &Path) -> Result<Self> {
        let s = s.trim();
        if s == "ref" || s == "ref:" {
            Ok(LmSpec::TrainReference)
        } else if let Some(path) = s.strip_prefix("ref:") {
            Ok(LmSpec::ReferenceFile(base.join(path)))
        } else if let Some(url) = s.strip_prefix("url:") {
            if url.is_empty() {
                return Err(Error::Config("empty remote LM URL".into()));
            }
            Ok(LmSpec::Remote(url.to_owned()))
        } else {
            Err(Error::Config(format!(
                "LM spec `{s}` must be `ref`, `ref:<path>` or `url:<base>`"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub db_corpus: PathBuf,
    pub test_corpus: PathBuf,
    /// Training corpus for a reference LM; defaults to `db_corpus`.
    pub lm_corpus: Option<PathBuf>,
    /// Vocabulary file; built from the LM and datastore corpora when absent.
    pub vocab: Option<PathBuf>,
    pub lm: LmSpec,
    pub lm_order: usize,
    pub smoothing_k: f64,
    pub dim: usize,
    pub k: usize,
    pub window: usize,
    pub fixed_lambda: f64,
    pub excluded: ExcludedPolicy,
    pub modes: Vec<Mode>,
    pub seed: u64,
    pub language: Language,
    pub line_task: bool,
    pub line_max_tokens: usize,
    /// Cap on line-completion items; 0 evaluates every eligible line.
    pub max_line_items: usize,
    /// Where to write the datastore files, if anywhere.
    pub db_dir: Option<PathBuf>,
    /// Machine-readable report destination.
    pub out: Option<PathBuf>,
    /// Include wall-clock throughput in machine-readable records.
    pub emit_timing: bool,
    /// Largest tolerated slowdown of a retrieval mode relative to `lm_only`.
    pub throughput_floor: f64,
    pub remote_timeout: Duration,
    pub remote_max_in_flight: usize,
    pub remote_top_k: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(db_corpus: impl Into<PathBuf>, test_corpus: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            db_corpus: db_corpus.into(),
            test_corpus: test_corpus.into(),
            lm_corpus: None,
            vocab: None,
            lm: LmSpec::TrainReference,
            lm_order: 3,
            smoothing_k: 0.01,
            dim: DEFAULT_DIM,
            k: 8,
            window: 8,
            fixed_lambda: 0.1,
            excluded: ExcludedPolicy::Skip,
            modes: Mode::ALL.to_vec(),
            seed: 0,
            language: Language::Java,
            line_task: true,
            line_max_tokens: 16,
            max_line_items: 0,
            db_dir: None,
            out: None,
            emit_timing: false,
            throughput_floor: 5.0,
            remote_timeout: Duration::from_secs(30),
            remote_max_in_flight: 8,
            remote_top_k: None,
        }
    }

    pub fn combiner(&self, mode: Mode) -> CombinerConfig {
        CombinerConfig {
            mode,
            k: self.k,
            window: self.window,
            fixed_lambda: self.fixed_lambda,
            excluded: self.excluded,
        }
    }

    pub fn lm_corpus(&self) -> &Path {
        self.lm_corpus.as_deref().unwrap_or(&self.db_corpus)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Config("no modes configured".into()));
        }
        if self.line_max_tokens == 0 {
            return Err(Error::Config("line_max_tokens must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.throughput_floor.is_nan() || self.throughput_floor < 1.0 {
            return Err(Error::Config("throughput_floor must be at least 1".into()));
        }
        self.combiner(Mode::KnmBayesian).validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let line = match line.find(" #") {
                Some(i) => line[..i].trim_end(),
                None => line,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim().to_owned();
            if kv.insert(key.clone(), value.trim().to_owned()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }

        let mut take = |k: &str| kv.remove(k);
        let path = |v: String| base.join(v);
        let db = take("db_corpus").ok_or_else(|| Error::Config("missing db_corpus".into()))?;
        let test = take("test_corpus").ok_or_else(|| Error::Config("missing test_corpus".into()))?;
        let mut cfg = ExperimentConfig::new(path(db), path(test));

        if let Some(v) = take("lm_corpus") {
            cfg.lm_corpus = Some(path(v));
        }
        if let Some(v) = take("vocab") {
            cfg.vocab = Some(path(v));
        }
        if let Some(v) = take("lm") {
            cfg.lm = LmSpec::parse(&v, base)?;
        }
        if let Some(v) = take("lm_order") {
            cfg.lm_order = num("lm_order", &v)?;
        }
        if let Some(v) = take("smoothing_k") {
            cfg.smoothing_k = num("smoothing_k", &v)?;
        }
        if let Some(v) = take("dim").or_else(|| take("d")) {
            cfg.dim = num("dim", &v)?;
        }
        if let Some(v) = take("k") {
            cfg.k = num("k", &v)?;
        }
        if let Some(v) = take("N").or_else(|| take("window")) {
            cfg.window = num("N", &v)?;
        }
        if let Some(v) = take("lambda").or_else(|| take("fixed_lambda")) {
            cfg.fixed_lambda = num("lambda", &v)?;
        }
        if let Some(v) = take("excluded") {
            cfg.excluded = v.parse()?;
        }
        if let Some(v) = take("modes") {
            cfg.modes = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(Mode::from_str)
                .collect::<Result<_>>()?;
        }
        if let Some(v) = take("seed") {
            cfg.seed = num("seed", &v)?;
        }
        if let Some(v) = take("language") {
            cfg.language = v.parse().map_err(Error::Config)?;
        }
        if let Some(v) = take("line_task") {
            cfg.line_task = boolean("line_task", &v)?;
        }
        if let Some(v) = take("line_max_tokens") {
            cfg.line_max_tokens = num("line_max_tokens", &v)?;
        }
        if let Some(v) = take("max_line_items") {
            cfg.max_line_items = num("max_line_items", &v)?;
        }
        if let Some(v) = take("db_dir") {
            cfg.db_dir = Some(path(v));
        }
        if let Some(v) = take("out") {
            cfg.out = Some(path(v));
        }
        if let Some(v) = take("emit_timing") {
            cfg.emit_timing = boolean("emit_timing", &v)?;
        }
        if let Some(v) = take("throughput_floor") {
            cfg.throughput_floor = num("throughput_floor", &v)?;
        }
        if let Some(v) = take("remote_timeout_ms") {
            cfg.remote_timeout = Duration::from_millis(num("remote_timeout_ms", &v)?);
        }
        if let Some(v) = take("remote_max_in_flight") {
            cfg.remote_max_in_flight = num("remote_max_in_flight", &v)?;
        }
        if let Some(v) = take("remote_top_k") {
            cfg.remote_top_k = Some(num("remote_top_k", &v)?);
        }
        if let Some(unknown) = kv.keys().next() {
            return Err(Error::Config(format!("unknown key `{unknown}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{v}`: {e}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}
