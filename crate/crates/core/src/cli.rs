//! Command-line front end. Exit codes: 0 success, 2 usage or validation
//! error, 3 model error.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::corpus::{generate_synthetic, split_corpus, Corpus, CorpusError, Document};
use crate::eval::PipelineCounts;
use crate::pipeline::{train, Bundle, EntitySource, PipelineConfig, PipelineError};
use crate::relation::FeatureSetKind;
use crate::tokenizer;

#[derive(Debug, Parser)]
#[command(name = "numex", version, about = "Numerical attribute/value extraction from clinical text")]
pub struct Cli {
    /// Global seed; per-command seeds and config seeds fall back to it.
    #[arg(long, global = true, env = "NUMEX_SEED")]
    pub seed: Option<u64>,
    /// Ignore unknown fields in corpus files instead of rejecting them.
    #[arg(long, global = true)]
    pub lenient: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureArg {
    Run1,
    Run2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EntitiesArg {
    Gold,
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RelEvalArg {
    GoldEntities,
    EndToEnd,
}

impl RelEvalArg {
    fn as_str(self) -> &'static str {
        match self {
            RelEvalArg::GoldEntities => "gold-entities",
            RelEvalArg::EndToEnd => "end-to-end",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic annotated corpus (JSONL).
    Synth {
        #[arg(short = 'n', long)]
        n: usize,
        #[arg(short, long)]
        output: PathBuf,
        /// Generator settings are read from its [generator] table.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Seeded train/test split of a corpus.
    Split {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long)]
        train_count: usize,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Check a corpus file against the annotation invariants.
    Validate { input: PathBuf },
    /// Print tokens with offsets, one per line; sentences separated by a blank line.
    Tokenize {
        #[arg(long, conflicts_with = "input")]
        text: Option<String>,
        #[arg(short, long)]
        input: Option<PathBuf>,
    },
    /// Train the CRF, POS tagger and SVM into a bundle directory.
    Train {
        #[arg(short, long)]
        corpus: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        features: Option<FeatureArg>,
    },
    /// Predict entities and relations.
    Extract {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, long, conflicts_with = "text", required_unless_present = "text")]
        input: Option<PathBuf>,
        #[arg(long)]
        text: Option<String>,
        /// Gold entities skip the CRF and score relations only.
        #[arg(long, value_enum, default_value = "predicted")]
        entities: EntitiesArg,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Strict evaluation of predictions against gold.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
        #[arg(long, value_enum, default_value = "end-to-end")]
        rel_eval: RelEvalArg,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Model(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_model_error() {
            CliError::Model(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

fn io_usage(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Usage(format!("{}: {e}", path.display()))
}

/// Writes to stdout; a closed pipe on the reading side is not an error.
fn emit(s: &str) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    match out.write_all(s.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(CliError::Usage(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn read_corpus(path: &Path, lenient: bool) -> Result<Corpus, CliError> {
    let f = File::open(path).map_err(io_usage(path))?;
    Corpus::read(BufReader::new(f), !lenient).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_corpus(path: &Path, corpus: &Corpus) -> Result<(), CliError> {
    let f = File::create(path).map_err(io_usage(path))?;
    let mut w = BufWriter::new(f);
    corpus.write(&mut w)?;
    w.flush().map_err(io_usage(path))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => Ok(PipelineConfig::from_toml(&fs::read_to_string(p).map_err(io_usage(p))?)?),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Synth { n, output, config } => {
            let cfg = load_config(config.as_deref())?;
            let corpus = generate_synthetic(n, seed, &cfg.generator);
            write_corpus(&output, &corpus)
        }
        Command::Split {
            input,
            train_count,
            train_out,
            test_out,
        } => {
            let corpus = read_corpus(&input, cli.lenient)?;
            let (tr, te) = split_corpus(&corpus, train_count, seed)?;
            write_corpus(&train_out, &tr)?;
            write_corpus(&test_out, &te)
        }
        Command::Validate { input } => {
            let corpus = read_corpus(&input, cli.lenient)?;
            for d in &corpus.documents {
                d.validate()?;
            }
            emit(&format!("ok: {} documents\n", corpus.len()))
        }
        Command::Tokenize { text, input } => {
            let text = match (text, input) {
                (Some(t), _) => t,
                (None, Some(p)) => fs::read_to_string(&p).map_err(io_usage(&p))?,
                (None, None) => {
                    let mut s = String::new();
                    io::stdin()
                        .read_to_string(&mut s)
                        .map_err(|e| CliError::Usage(format!("stdin: {e}")))?;
                    s
                }
            };
            let mut out = String::new();
            for (i, s) in tokenizer::sentences("stdin", &text).iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                for t in &s.tokens {
                    out.push_str(&format!("{}\t{}\t{}\n", t.text, t.start, t.end));
                }
            }
            emit(&out)
        }
        Command::Train {
            corpus,
            output,
            config,
            features,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = cli.seed {
                cfg.set_seed(s);
            }
            if let Some(f) = features {
                cfg.relation.feature_set = match f {
                    FeatureArg::Run1 => FeatureSetKind::Run1,
                    FeatureArg::Run2 => FeatureSetKind::Run2,
                };
            }
            let corpus = read_corpus(&corpus, cli.lenient)?;
            let bundle = train(&corpus, &cfg)?;
            for w in &bundle.manifest.warnings {
                eprintln!("warning: {w}");
            }
            bundle.save(&output)?;
            Ok(())
        }
        Command::Extract {
            model,
            input,
            text,
            entities,
            output,
        } => {
            let bundle = Bundle::load(&model)?;
            let corpus = match (input, text) {
                (Some(p), _) => read_corpus(&p, cli.lenient)?,
                (None, Some(t)) => Corpus::new(vec![Document::new("text-0001", t)])?,
                (None, None) => unreachable!("clap requires --input or --text"),
            };
            let source = match entities {
                EntitiesArg::Gold => EntitySource::Gold,
                EntitiesArg::Predicted => EntitySource::Predicted,
            };
            let pred = bundle.extract_corpus(&corpus, source)?;
            match output {
                Some(p) => write_corpus(&p, &pred),
                None => emit(&pred.to_jsonl()),
            }
        }
        Command::Eval {
            gold,
            pred,
            format,
            rel_eval,
        } => {
            let gold = read_corpus(&gold, cli.lenient)?;
            let pred = read_corpus(&pred, cli.lenient)?;
            let report = evaluate(&gold, &pred, rel_eval)?;
            match format {
                FormatArg::Table => emit(&report.to_table()),
                FormatArg::Json => emit(&(report.to_json() + "\n")),
            }
        }
    }
}

fn span_multiset(d: &Document) -> BTreeMap<(crate::corpus::EntityKind, usize, usize), usize> {
    let mut m = BTreeMap::new();
    for e in &d.entities {
        *m.entry(e.span_key()).or_insert(0) += 1;
    }
    m
}

/// Pairs documents by id and scores them. In gold-entities mode the predicted
/// entities must be exactly the gold ones.
pub fn evaluate(
    gold: &Corpus,
    pred: &Corpus,
    mode: RelEvalArg,
) -> Result<crate::eval::PipelineReport, CliError> {
    let by_id: HashMap<&str, &Document> = pred.documents.iter().map(|d| (d.id.as_str(), d)).collect();
    let missing: Vec<&str> = gold
        .documents
        .iter()
        .map(|d| d.id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    let gold_ids: std::collections::HashSet<&str> = gold.documents.iter().map(|d| d.id.as_str()).collect();
    let extra: Vec<&str> = pred
        .documents
        .iter()
        .map(|d| d.id.as_str())
        .filter(|id| !gold_ids.contains(id))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CliError::Usage(format!(
            "document ids differ; missing from predictions: [{}]; not in gold: [{}]",
            missing.join(", "),
            extra.join(", ")
        )));
    }
    let mut counts = PipelineCounts::default();
    for g in &gold.documents {
        let p = by_id[g.id.as_str()];
        if p.text != g.text {
            return Err(CliError::Usage(format!("document {}: text differs from gold", g.id)));
        }
        p.validate()?;
        if mode == RelEvalArg::GoldEntities && span_multiset(g) != span_multiset(p) {
            return Err(CliError::Usage(format!(
                "document {}: gold-entities mode needs predictions made from gold entities (extract --entities gold)",
                g.id
            )));
        }
        counts
            .add_document(g, p)
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(counts.report(mode.as_str()))
}
