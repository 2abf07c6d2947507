use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use knm_core::combiner::{CombinerConfig, ExcludedPolicy};
use knm_core::harness::{self, ExperimentConfig, ShiftSuiteConfig, SweepAxis};
use knm_core::tokenizer::read_corpus;
use knm_core::{
    Datastore, Engine, Error, LanguageModel, Mode, NgramConfig, NgramLm, RemoteConfig, RemoteLm, Result,
    RetrievalIndex, StoreMode, Vocabulary,
};

#[derive(Parser)]
#[command(
    name = "knm",
    version,
    about = "Mistakes-only retrieval for next-token code completion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the reference n-gram model on a JSONL corpus.
    TrainLm {
        #[arg(long)]
        corpus: PathBuf,
        /// Vocabulary file; built from the corpus and written here with --write-vocab.
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        write_vocab: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.01)]
        smoothing: f64,
        #[arg(long, default_value_t = knm_core::lm::DEFAULT_DIM)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay a corpus through the model and write a datastore.
    BuildDb {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// `ref:<lm file>` or `url:<base url>`.
        #[arg(long)]
        lm: String,
        #[arg(long, default_value_t = knm_core::lm::DEFAULT_DIM)]
        dim: usize,
        #[arg(long, default_value = "decoupled")]
        mode: StoreMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete the next token, or the rest of the line, after a context file.
    Complete {
        /// Datastore; required by every mode except lm_only.
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        lm: String,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        context_file: PathBuf,
        #[arg(long)]
        line: bool,
        #[arg(long, default_value = "knm_bayesian")]
        mode: Mode,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long = "n", default_value_t = 8)]
        window: usize,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, default_value = "skip")]
        excluded: ExcludedPolicy,
        #[arg(long, default_value_t = 16)]
        max_tokens: usize,
        #[arg(long, default_value_t = knm_core::lm::DEFAULT_DIM)]
        dim: usize,
    },
    /// Run an experiment described by a config file.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Records destination, overriding the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate one config under several values of k, N or lambda.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write the synthetic domain-shift suite and its experiment config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn open_lm(spec: &str, vocab: &Vocabulary, dim: usize) -> Result<Box<dyn LanguageModel>> {
    if let Some(path) = spec.strip_prefix("ref:").filter(|p| !p.is_empty()) {
        let lm = NgramLm::load(path)?;
        if lm.vocab_size() != vocab.len() {
            return Err(Error::VocabMismatch {
                expected: vocab.len(),
                found: lm.vocab_size(),
            });
        }
        Ok(Box::new(lm))
    } else if let Some(url) = spec.strip_prefix("url:").filter(|u| !u.is_empty()) {
        Ok(Box::new(RemoteLm::new(RemoteConfig::new(url, vocab.len(), dim))?))
    } else {
        Err(Error::Config(format!(
            "--lm `{spec}` must be `ref:<file>` or `url:<base>`"
        )))
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::TrainLm {
            corpus,
            vocab,
            write_vocab,
            out,
            order,
            smoothing,
            dim,
            seed,
        } => {
            let records = read_corpus(&corpus)?;
            let vocab = if write_vocab {
                let v = Vocabulary::build(records.iter().map(|r| r.text.as_str()))?;
                v.save(&vocab)?;
                v
            } else {
                Vocabulary::load(&vocab)?
            };
            let seqs: Vec<_> = records.iter().map(|r| vocab.tokenize(&r.text)).collect();
            let config = NgramConfig {
                order,
                smoothing_k: smoothing,
                dim,
                seed,
            };
            let lm = NgramLm::train(&seqs, vocab.len(), config)?;
            lm.save(&out)?;
            eprintln!(
                "trained order-{order} model over {} tokens, perplexity {:.3}",
                vocab.len(),
                lm.perplexity(&seqs)
            );
        }
        Command::BuildDb {
            corpus,
            vocab,
            lm,
            dim,
            mode,
            out,
        } => {
            let vocab = Vocabulary::load(&vocab)?;
            let lm = open_lm(&lm, &vocab, dim)?;
            let seqs: Vec<_> = read_corpus(&corpus)?.iter().map(|r| vocab.tokenize(&r.text)).collect();
            let store = Datastore::build(&seqs, lm.as_ref(), dim, mode)?;
            store.save(&out)?;
            eprintln!(
                "{} entries from {} tokens (error rate {:.4}), {} bytes",
                store.len(),
                store.total_tokens(),
                store.error_rate(),
                store.encoded_len()
            );
        }
        Command::Complete {
            db,
            lm,
            vocab,
            context_file,
            line,
            mode,
            k,
            window,
            lambda,
            excluded,
            max_tokens,
            dim,
        } => {
            let vocab = Vocabulary::load(&vocab)?;
            let lm = open_lm(&lm, &vocab, dim)?;
            let index = match db {
                Some(path) => {
                    let store = Datastore::load(&path)?;
                    let wanted = if mode.uses_full_store() {
                        StoreMode::Full
                    } else {
                        StoreMode::Decoupled
                    };
                    if mode.uses_retrieval() && store.mode() != wanted {
                        return Err(Error::Config(format!(
                            "mode {mode} needs a {} datastore, {} is {}",
                            wanted.name(),
                            path.display(),
                            store.mode().name()
                        )));
                    }
                    Some(RetrievalIndex::new(store))
                }
                None => None,
            };
            let config = CombinerConfig {
                mode,
                k,
                window,
                fixed_lambda: lambda,
                excluded,
            };
            let engine = Engine::new(lm.as_ref(), index.as_ref(), config)?;
            let context = vocab.tokenize(&fs::read_to_string(&context_file)?);
            if line {
                let mut tokens = engine.complete_line(&context, max_tokens)?;
                if tokens.last() == Some(&knm_core::TokenId::EOL) {
                    tokens.pop();
                }
                println!("{}", vocab.detokenize(&tokens));
            } else {
                let completion = engine.complete_token(&context)?;
                println!("{}", vocab.token(completion.token));
                eprintln!("lambda {:.6}", completion.lambda);
            }
        }
        Command::Eval { config, out } => {
            let mut config = ExperimentConfig::load(&config)?;
            if out.is_some() {
                config.out = out;
            }
            let (timing, floor, out) = (config.emit_timing, config.throughput_floor, config.out.clone());
            let report = harness::run_experiment(config)?;
            eprint!("{}", report.to_table());
            for warning in report.check_throughput(floor) {
                eprintln!("warning: {warning}");
            }
            write_output(out.as_deref(), &report.records(timing))?;
        }
        Command::Sweep {
            config,
            axis,
            values,
            csv,
        } => {
            let config = ExperimentConfig::load(&config)?;
            let reports = harness::sweep(config, axis, &values)?;
            for (value, report) in values.iter().zip(&reports) {
                eprintln!("{axis} = {value}");
                eprint!("{}", report.to_table());
            }
            write_output(csv.as_deref(), &harness::sweep_csv(axis, &values, &reports))?;
        }
        Command::Synth { out, seed } => {
            let suite = harness::generate_shift_suite(&ShiftSuiteConfig {
                seed,
                ..ShiftSuiteConfig::default()
            });
            suite.write(&out, seed)?;
            eprintln!("wrote {}", out.join("experiment.cfg").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
