mod config;

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use tokenprobe::baselines::{kmeans_centroid_cluster, random_sampling, rule_based_sampling, KMeansConfig, Seeding};
use tokenprobe::corpus::{greedy_tokenize, scan, scan_files, ScanSummary};
use tokenprobe::embedstore::{load_model_bundle, ModelBundle, TokenId};
use tokenprobe::hunter::{hunt_with, traverse, HuntError, HuntOptions, HuntReport};
use tokenprobe::metrics::score_with_ledger;
use tokenprobe::oracle::{HttpOracle, MockOracle, OracleClient};
use tokenprobe::simlab::{generate, read_truth, SimSpec};
use tokenprobe::taxonomy::{classify_token_type, ClassifiedToken, SymptomLabel, WordList};
use tokenprobe::SCHEMA_VERSION;

use config::{HunterArgs, OracleArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "tokenprobe", version, about = "Find glitch tokens in LLM vocabularies by clustering token embeddings")]
struct Cli {
    /// Worker threads for graph building and oracle queries
    #[arg(long, global = true, env = "TOKENPROBE_JOBS")]
    jobs: Option<usize>,
    /// JSON config file ({"hunter": {...}, "oracle": {...}}); flags and env win
    #[arg(long, global = true, env = "TOKENPROBE_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Iterative cluster-and-sample search
    Hunt {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write each iteration's graph and partition here
        #[arg(long)]
        dump_dir: Option<PathBuf>,
        #[command(flatten)]
        hunter: HunterArgs,
        #[command(flatten)]
        oracle: OracleArgs,
    },
    /// Test every token in the vocabulary
    Traverse {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        oracle: OracleArgs,
    },
    /// Non-oracle comparison detectors
    Baseline {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sampling fraction for random and rule methods
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        /// Word list for the rule method (one word per line)
        #[arg(long)]
        wordlist: Option<PathBuf>,
        /// Cluster count for the k-means method
        #[arg(long, default_value_t = 50)]
        clusters: usize,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        /// Uniform seeding instead of k-means++
        #[arg(long)]
        plain_seeding: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Label token strings with their type, and reported tokens with their symptom
    Classify {
        /// JSON array of token strings, or a hunt report
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        wordlist: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count glitch-token occurrences in tokenized text
    Scan {
        /// Glitch ids: a JSON array or a hunt report
        #[arg(long)]
        glitch: PathBuf,
        /// Pre-tokenized JSONL files (one JSON id array per line)
        #[arg(long, num_args = 1..)]
        stream: Vec<PathBuf>,
        /// Raw text files, tokenized by approximate greedy longest match
        #[arg(long, num_args = 1.., requires = "embeddings")]
        text: Vec<PathBuf>,
        /// Bundle whose vocabulary bounds the ids
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Vocabulary size when no bundle is given
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic bundle with planted glitch tokens
    Simulate {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        m: usize,
        #[arg(long, default_value_t = 200)]
        glitch: usize,
        #[arg(long, default_value_t = 3)]
        clusters: usize,
        #[arg(long, default_value_t = 0.1)]
        tightness: f64,
        #[arg(long, default_value_t = 0.0)]
        scatter: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precision and recall of a report against a truth file
    Score {
        report: PathBuf,
        truth: PathBuf,
        /// Write the report with the evaluation attached
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Random,
    Rule,
    Kmeans,
}

/// Error with the process exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: anyhow::Error) -> Self {
        Self { code: 2, error }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

impl From<HuntError> for Failure {
    fn from(err: HuntError) -> Self {
        let code = match &err {
            HuntError::Oracle(_) => 3,
            HuntError::Config(_) | HuntError::EmbeddingTooSmall(_) => 2,
            _ => 1,
        };
        Self {
            code,
            error: err.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_bundle(dir: &Path) -> Result<ModelBundle, Failure> {
    load_model_bundle(dir)
        .with_context(|| format!("loading bundle {}", dir.display()))
        .map_err(Failure::config)
}

/// Ids from a JSON array or from the `glitch_tokens` of a report.
fn read_ids(path: &Path) -> anyhow::Result<BTreeSet<TokenId>> {
    let value = read_json(path)?;
    if value.is_array() {
        return serde_json::from_value(value).with_context(|| format!("{} is not an id array", path.display()));
    }
    let report: HuntReport =
        serde_json::from_value(value).with_context(|| format!("{} is neither an id array nor a report", path.display()))?;
    Ok(report.ids())
}

fn oracle_client(args: &OracleArgs, run: &RunConfig, bundle: &ModelBundle) -> Result<Box<dyn OracleClient>, Failure> {
    if let Some(truth) = &args.mock {
        let planted = read_truth(truth)
            .with_context(|| format!("reading mock truth {}", truth.display()))
            .map_err(Failure::config)?;
        if let Some(bad) = planted.iter().find(|&&id| id as usize >= bundle.len()) {
            return Err(Failure::config(anyhow!("mock truth id {bad} outside vocabulary of {}", bundle.len())));
        }
        return Ok(Box::new(MockOracle::new(&bundle.vocab, planted)));
    }
    if run.oracle.endpoint_url.is_none() {
        return Err(Failure::config(anyhow!("exactly one of --oracle-url or --mock is required")));
    }
    let client = HttpOracle::new(&run.oracle).map_err(|e| Failure::config(e.into()))?;
    Ok(Box::new(client))
}

fn merged(cli: &Cli, hunter: Option<&HunterArgs>, oracle: &OracleArgs) -> Result<RunConfig, Failure> {
    let mut run = RunConfig::from_file(cli.config.as_deref()).map_err(Failure::config)?;
    if let Some(h) = hunter {
        h.apply(&mut run.hunter);
    }
    oracle.apply(&mut run.oracle);
    if let Some(jobs) = cli.jobs {
        run.oracle.concurrency_limit = run.oracle.concurrency_limit.min(jobs.max(1));
    }
    if oracle.mock.is_some() {
        run.oracle.endpoint_url = None;
        run.oracle.model_name = "mock".into();
    }
    run.hunter.validate().map_err(|e| Failure::config(e.into()))?;
    run.oracle.validate().map_err(|e| Failure::config(e.into()))?;
    Ok(run)
}

fn echo(run: &RunConfig, embeddings: &Path, oracle: &OracleArgs) -> Value {
    let mut v = serde_json::to_value(run).expect("config serializes");
    v["embeddings"] = Value::String(embeddings.display().to_string());
    v["mock"] = oracle.mock.as_ref().map_or(Value::Null, |p| Value::String(p.display().to_string()));
    v
}

fn summarize(report: &HuntReport) {
    eprintln!(
        "{} glitch tokens; {} queries, {} tokens tested; termination {:?} after {} iterations",
        report.glitch_tokens.len(),
        report.ledger.queries,
        report.ledger.tokens_tested,
        report.termination,
        report.iterations
    );
}

fn cmd_hunt(
    cli: &Cli,
    embeddings: &Path,
    out: &Path,
    dump_dir: Option<PathBuf>,
    hunter: &HunterArgs,
    oracle: &OracleArgs,
) -> CmdResult {
    let run = merged(cli, Some(hunter), oracle)?;
    let bundle = load_bundle(embeddings)?;
    let client = oracle_client(oracle, &run, &bundle)?;
    let mut report = hunt_with(&bundle, client.as_ref(), &run.oracle, &run.hunter, &HuntOptions { dump_dir })?;
    report.config = echo(&run, embeddings, oracle);
    write_json(out, &report)?;
    summarize(&report);
    Ok(())
}

fn cmd_traverse(cli: &Cli, embeddings: &Path, out: &Path, oracle: &OracleArgs) -> CmdResult {
    let run = merged(cli, None, oracle)?;
    let bundle = load_bundle(embeddings)?;
    let client = oracle_client(oracle, &run, &bundle)?;
    let mut report = traverse(&bundle, client.as_ref(), &run.oracle, &run.hunter)?;
    report.config = echo(&run, embeddings, oracle);
    write_json(out, &report)?;
    summarize(&report);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_baseline(
    method: Method,
    embeddings: &Path,
    out: &Path,
    fraction: f64,
    wordlist: Option<&Path>,
    clusters: usize,
    max_iters: usize,
    plain_seeding: bool,
    seed: u64,
) -> CmdResult {
    let bundle = load_bundle(embeddings)?;
    let (name, ids, config) = match method {
        Method::Random => {
            let ids = random_sampling(bundle.len(), fraction, seed).map_err(|e| Failure::config(e.into()))?;
            ("random_sampling", ids, serde_json::json!({ "fraction": fraction, "seed": seed }))
        }
        Method::Rule => {
            let words = load_words(wordlist)?;
            let ids = rule_based_sampling(&bundle.vocab, &words, fraction, seed).map_err(|e| Failure::config(e.into()))?;
            let list = wordlist.map_or("bundled".to_string(), |p| p.display().to_string());
            ("rule_based_sampling", ids, serde_json::json!({ "fraction": fraction, "seed": seed, "wordlist": list }))
        }
        Method::Kmeans => {
            let cfg = KMeansConfig {
                k: clusters,
                max_iters,
                seeding: if plain_seeding { Seeding::Random } else { Seeding::PlusPlus },
            };
            let outcome = kmeans_centroid_cluster(&bundle.matrix, &cfg, seed).map_err(|e| Failure::config(e.into()))?;
            ("kmeans_centroid", outcome.members, serde_json::json!({ "kmeans": cfg, "seed": seed }))
        }
    };
    let mut config = config;
    config["embeddings"] = Value::String(embeddings.display().to_string());
    let report = HuntReport::baseline(name, config, ids, &bundle);
    write_json(out, &report)?;
    eprintln!("{name}: {} tokens reported", report.glitch_tokens.len());
    Ok(())
}

fn load_words(path: Option<&Path>) -> Result<WordList, Failure> {
    match path {
        Some(p) => WordList::load(p).map_err(|e| Failure::config(e.into())),
        None => Ok(WordList::bundled()),
    }
}

fn cmd_classify(tokens: &Path, wordlist: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let words = load_words(wordlist)?;
    let value = read_json(tokens).map_err(Failure::config)?;
    let rows: Vec<(TokenId, String, Option<SymptomLabel>)> = if value.is_array() {
        let strings: Vec<String> = serde_json::from_value(value)
            .context("token file must be an array of strings or a report")
            .map_err(Failure::config)?;
        strings.into_iter().enumerate().map(|(i, s)| (i as TokenId, s, None)).collect()
    } else {
        let report: HuntReport = serde_json::from_value(value)
            .context("token file must be an array of strings or a report")
            .map_err(Failure::config)?;
        report.glitch_tokens.into_iter().map(|t| (t.id, t.string, t.symptom)).collect()
    };
    let mut labelled = Vec::with_capacity(rows.len());
    for (id, string, symptom) in rows {
        let token_type = classify_token_type(&string, &words)
            .with_context(|| format!("token {id}"))
            .map_err(Failure::config)?;
        labelled.push(ClassifiedToken { id, token_type, symptom });
    }
    match out {
        Some(path) => write_json(path, &labelled)?,
        None => println!("{}", serde_json::to_string_pretty(&labelled).map_err(anyhow::Error::from)?),
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ScanReport {
    schema_version: u32,
    #[serde(flatten)]
    summary: ScanSummary,
    glitch_ratio_percent: String,
    /// Set when any input went through greedy tokenization.
    approximate: bool,
    unencodable: u64,
}

fn cmd_scan(
    glitch: &Path,
    streams: &[PathBuf],
    texts: &[PathBuf],
    embeddings: Option<&Path>,
    vocab_size: Option<usize>,
    out: Option<&Path>,
) -> CmdResult {
    if streams.is_empty() && texts.is_empty() {
        return Err(Failure::config(anyhow!("give at least one --stream or --text file")));
    }
    let glitch: HashSet<TokenId> = read_ids(glitch).map_err(Failure::config)?.into_iter().collect();
    let bundle = embeddings.map(load_bundle).transpose()?;
    let n = match (&bundle, vocab_size) {
        (Some(b), _) => b.len(),
        (None, Some(n)) => n,
        (None, None) => return Err(Failure::config(anyhow!("--embeddings or --vocab-size is required"))),
    };
    let mut summary = scan_files(streams, &glitch, n).map_err(anyhow::Error::from)?;
    let mut unencodable = 0;
    if let Some(bundle) = &bundle {
        for path in texts {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let tok = greedy_tokenize(&text, &bundle.vocab);
            unencodable += tok.unencodable;
            summary = summary.merge(scan(&tok.stream, &glitch, n).map_err(anyhow::Error::from)?);
        }
    }
    let report = ScanReport {
        schema_version: SCHEMA_VERSION,
        glitch_ratio_percent: summary.percent(),
        summary,
        approximate: !texts.is_empty(),
        unencodable,
    };
    match out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?),
    }
    eprintln!(
        "{} glitch of {} tokens ({})",
        report.summary.glitch_count, report.summary.total_count, report.glitch_ratio_percent
    );
    Ok(())
}

fn cmd_simulate(spec: SimSpec, out: &Path) -> CmdResult {
    let sim = generate(&spec).map_err(|e| Failure::config(e.into()))?;
    sim.write(out).map_err(anyhow::Error::from)?;
    eprintln!(
        "wrote {} tokens ({} planted in {} clusters) to {}",
        spec.n,
        sim.planted.len(),
        sim.clusters.len(),
        out.display()
    );
    Ok(())
}

fn cmd_score(report_path: &Path, truth: &Path, out: Option<&Path>) -> CmdResult {
    let mut report: HuntReport = serde_json::from_value(read_json(report_path).map_err(Failure::config)?)
        .with_context(|| format!("{} is not a report", report_path.display()))
        .map_err(Failure::config)?;
    let truth = read_ids(truth).map_err(Failure::config)?;
    let eval = score_with_ledger(&report.ids(), &truth, report.ledger);
    println!(
        "precision {:.4} recall {:.4} (tp {}, fp {}, fn {})",
        eval.precision, eval.recall, eval.counts.tp, eval.counts.fp, eval.counts.fn_
    );
    report.evaluation = Some(eval);
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring worker pool")?;
    }
    match &cli.command {
        Command::Hunt {
            embeddings,
            out,
            dump_dir,
            hunter,
            oracle,
        } => cmd_hunt(cli, embeddings, out, dump_dir.clone(), hunter, oracle),
        Command::Traverse { embeddings, out, oracle } => cmd_traverse(cli, embeddings, out, oracle),
        Command::Baseline {
            method,
            embeddings,
            out,
            fraction,
            wordlist,
            clusters,
            max_iters,
            plain_seeding,
            seed,
        } => cmd_baseline(
            *method,
            embeddings,
            out,
            *fraction,
            wordlist.as_deref(),
            *clusters,
            *max_iters,
            *plain_seeding,
            *seed,
        ),
        Command::Classify { tokens, wordlist, out } => cmd_classify(tokens, wordlist.as_deref(), out.as_deref()),
        Command::Scan {
            glitch,
            stream,
            text,
            embeddings,
            vocab_size,
            out,
        } => cmd_scan(glitch, stream, text, embeddings.as_deref(), *vocab_size, out.as_deref()),
        Command::Simulate {
            n,
            m,
            glitch,
            clusters,
            tightness,
            scatter,
            seed,
            out,
        } => cmd_simulate(
            SimSpec {
                n: *n,
                m: *m,
                glitch_count: *glitch,
                cluster_count: *clusters,
                cluster_tightness: *tightness,
                scatter_fraction: *scatter,
                seed: *seed,
            },
            out,
        ),
        Command::Score { report, truth, out } => cmd_score(report, truth, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let kind = match f.code {
                2 => "config error",
                3 => "oracle aborted",
                _ => "error",
            };
            eprintln!("tokenprobe: {kind}: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
