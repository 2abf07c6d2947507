//! Seeded domain-shift suite.
//!
//! A general corpus of Java-like statements trains the reference model. The
//! datastore and test corpora are drawn from the same statement grammar but
//! also carry a set of fixed multi-token "idioms" (one per line) that the
//! general corpus never strings together. The model alone mispredicts most
//! idiom tokens; a datastore built from the in-domain corpus can recover them.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, LmSpec};
use crate::error::Result;
use crate::tokenizer::{write_corpus, SourceRecord};

const NAMES: &[&str] = &[
    "count", "index", "value", "result", "buffer", "item", "node", "total", "size", "data", "key", "list", "map",
    "text", "line", "flag", "offset", "limit", "start", "end", "left", "right", "parent", "child",
];
const METHODS: &[&str] = &[
    "add", "get", "put", "remove", "append", "clear", "contains", "length", "next", "close", "update", "apply",
];
const TYPES: &[&str] = &["int", "long", "double", "boolean"];
const NUMBERS: &[&str] = &["0", "1", "2", "10", "100"];
const IDIOM_EXTRAS: &[&str] = &["new", "this", "null", "return"];

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSuiteConfig {
    pub seed: u64,
    pub idioms: usize,
    pub idiom_len: usize,
    /// Occurrences of every idiom in the datastore corpus.
    pub db_repeats: usize,
    /// Occurrences of every idiom in the test corpus.
    pub test_repeats: usize,
    pub general_files: usize,
    pub db_files: usize,
    pub test_files: usize,
    /// Ordinary statements per file, before idioms are inserted.
    pub background_lines: usize,
}

impl Default for ShiftSuiteConfig {
    fn default() -> Self {
        ShiftSuiteConfig {
            seed: 7,
            idioms: 30,
            idiom_len: 4,
            db_repeats: 20,
            test_repeats: 10,
            general_files: 60,
            db_files: 30,
            test_files: 15,
            background_lines: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSuite {
    pub general: Vec<SourceRecord>,
    pub db: Vec<SourceRecord>,
    pub test: Vec<SourceRecord>,
    pub idioms: Vec<Vec<&'static str>>,
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

/// Skewed towards the front of the pool so the model has favourites to learn.
fn pick_skewed<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    let i = rng.gen_range(0..pool.len()).min(rng.gen_range(0..pool.len()));
    pool[i]
}

fn statement(rng: &mut ChaCha8Rng, depth: &mut usize) -> String {
    let name = |rng: &mut ChaCha8Rng| pick_skewed(rng, NAMES);
    match rng.gen_range(0..10) {
        0 | 1 => format!(
            "{} {} = {} + {} ;",
            pick(rng, TYPES),
            name(rng),
            name(rng),
            pick(rng, NUMBERS)
        ),
        2 | 3 => format!(
            "{} = {} . {} ( {} ) ;",
            name(rng),
            name(rng),
            pick_skewed(rng, METHODS),
            name(rng)
        ),
        4 => format!("{} . {} ( ) ;", name(rng), pick_skewed(rng, METHODS)),
        5 => {
            *depth += 1;
            format!("if ( {} > {} ) {{", name(rng), pick(rng, NUMBERS))
        }
        6 => {
            *depth += 1;
            format!("for ( int i = 0 ; i < {} ; i ++ ) {{", name(rng))
        }
        7 => format!("return {} ;", name(rng)),
        8 => format!("{} += {} ;", name(rng), pick(rng, NUMBERS)),
        _ if *depth > 0 => {
            *depth -= 1;
            "}".to_owned()
        }
        _ => format!("{} = null ;", name(rng)),
    }
}

fn background_file(rng: &mut ChaCha8Rng, lines: usize) -> Vec<String> {
    let mut depth = 0;
    let mut out: Vec<String> = (0..lines).map(|_| statement(rng, &mut depth)).collect();
    out.extend(std::iter::repeat_n("}".to_owned(), depth));
    out
}

fn make_idioms(rng: &mut ChaCha8Rng, count: usize, len: usize) -> Vec<Vec<&'static str>> {
    let pool: Vec<&'static str> = NAMES.iter().chain(METHODS).chain(IDIOM_EXTRAS).copied().collect();
    let mut heads = pool.clone();
    heads.shuffle(rng);
    assert!(
        count <= heads.len(),
        "at most {} idioms have distinct first tokens",
        heads.len()
    );
    heads
        .into_iter()
        .take(count)
        .map(|head| {
            let mut idiom = vec![head];
            while idiom.len() < len {
                let next = pick(rng, &pool);
                if Some(&next) != idiom.last() {
                    idiom.push(next);
                }
            }
            idiom
        })
        .collect()
}

fn split_with_idioms(
    rng: &mut ChaCha8Rng,
    prefix: &str,
    files: usize,
    background_lines: usize,
    idioms: &[Vec<&str>],
    repeats: usize,
) -> Vec<SourceRecord> {
    let mut occurrences: Vec<usize> = (0..idioms.len())
        .flat_map(|i| std::iter::repeat_n(i, repeats))
        .collect();
    occurrences.shuffle(rng);
    (0..files)
        .map(|f| {
            let mut lines = background_file(rng, background_lines);
            for &i in occurrences.iter().skip(f).step_by(files) {
                let at = rng.gen_range(0..=lines.len());
                lines.insert(at, idioms[i].join(" "));
            }
            SourceRecord {
                path: format!("{prefix}/F{f:03}.java"),
                text: lines.join("\n") + "\n",
            }
        })
        .collect()
}

pub fn generate(cfg: &ShiftSuiteConfig) -> ShiftSuite {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let idioms = make_idioms(&mut rng, cfg.idioms, cfg.idiom_len);
    let general = (0..cfg.general_files)
        .map(|f| SourceRecord {
            path: format!("general/F{f:03}.java"),
            text: background_file(&mut rng, cfg.background_lines).join("\n") + "\n",
        })
        .collect();
    let db = split_with_idioms(
        &mut rng,
        "db",
        cfg.db_files,
        cfg.background_lines,
        &idioms,
        cfg.db_repeats,
    );
    let test = split_with_idioms(
        &mut rng,
        "test",
        cfg.test_files,
        cfg.background_lines,
        &idioms,
        cfg.test_repeats,
    );
    ShiftSuite {
        general,
        db,
        test,
        idioms,
    }
}

impl ShiftSuite {
    /// Writes `general.jsonl`, `db.jsonl`, `test.jsonl` and a ready-to-run
    /// `experiment.cfg` into `dir`; returns the parsed config.
    pub fn write(&self, dir: impl AsRef<Path>, seed: u64) -> Result<ExperimentConfig> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_corpus(dir.join("general.jsonl"), &self.general)?;
        write_corpus(dir.join("db.jsonl"), &self.db)?;
        write_corpus(dir.join("test.jsonl"), &self.test)?;
        let text = format!(
            "# domain-shift suite\n\
             lm_corpus = general.jsonl\n\
             db_corpus = db.jsonl\n\
             test_corpus = test.jsonl\n\
             lm = ref\n\
             lm_order = 3\n\
             smoothing_k = 0.01\n\
             k = 8\n\
             N = 8\n\
             lambda = 0.1\n\
             seed = {seed}\n"
        );
        fs::write(dir.join("experiment.cfg"), &text)?;
        let cfg = ExperimentConfig::parse(&text, dir)?;
        debug_assert_eq!(cfg.lm, LmSpec::TrainReference);
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_counts_idioms() {
        let cfg = ShiftSuiteConfig::default();
        let a = generate(&cfg);
        assert_eq!(a, generate(&cfg));
        assert_eq!(a.idioms.len(), 30);
        let heads: std::collections::HashSet<_> = a.idioms.iter().map(|i| i[0]).collect();
        assert_eq!(heads.len(), 30);
        for idiom in &a.idioms {
            let line = idiom.join(" ");
            let count = |recs: &[SourceRecord]| {
                recs.iter()
                    .map(|r| r.text.lines().filter(|l| *l == line).count())
                    .sum::<usize>()
            };
            assert!(count(&a.db) >= 20, "{line}");
            assert!(count(&a.test) >= 10, "{line}");
            assert_eq!(count(&a.general), 0, "{line}");
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate(&ShiftSuiteConfig::default());
        let b = generate(&ShiftSuiteConfig {
            seed: 8,
            ..ShiftSuiteConfig::default()
        });
        assert_ne!(a.test, b.test);
    }
}
