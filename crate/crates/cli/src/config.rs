use std::fs;
use std::path::Path;

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use tokenprobe::hunter::HunterConfig;
use tokenprobe::leiden::Objective;
use tokenprobe::oracle::{LengthUnit, OracleConfig};
use tokenprobe::teg::RhoMode;

/// Settings merged from flags, environment and the JSON config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hunter: HunterConfig,
    pub oracle: OracleConfig,
}

impl RunConfig {
    pub fn from_file(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Cpm,
    Modularity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LengthArg {
    Scalars,
    Bytes,
    Graphemes,
}

#[derive(Debug, Clone, Default, Args)]
pub struct HunterArgs {
    /// Neighbors per token in the embedding graph
    #[arg(long, env = "TOKENPROBE_K")]
    pub k: Option<usize>,
    /// Clustering resolution (larger gives more clusters)
    #[arg(long, env = "TOKENPROBE_RESOLUTION")]
    pub resolution: Option<f64>,
    /// Clustering objective
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    /// Fraction of each cluster sent to the oracle
    #[arg(long = "sample-frac", env = "TOKENPROBE_SAMPLE_FRAC")]
    pub sample_frac: Option<f64>,
    /// Minimum tokens sampled per cluster
    #[arg(long)]
    pub min_sample: Option<usize>,
    /// Glitch rate a cluster sample needs to be kept (0 means at least one)
    #[arg(long = "threshold-r")]
    pub threshold_r: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Skip the final per-token confirmation
    #[arg(long)]
    pub no_verify: bool,
    /// Take rho as the nearest strictly positive distance
    #[arg(long)]
    pub strict_rho: bool,
    #[arg(long, env = "TOKENPROBE_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct OracleArgs {
    /// OpenAI-compatible completions endpoint
    #[arg(long, env = "GLITCH_ORACLE_URL", conflicts_with = "mock")]
    pub oracle_url: Option<String>,
    /// Ground-truth file (JSON array of ids) for the built-in mock oracle
    #[arg(long)]
    pub mock: Option<std::path::PathBuf>,
    #[arg(long, env = "GLITCH_ORACLE_MODEL")]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Queries per task; majority decides
    #[arg(long)]
    pub repeats: Option<u32>,
    /// Request timeout in seconds
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Parallel oracle requests
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Glitch score threshold
    #[arg(long = "glitch-threshold", allow_negative_numbers = true)]
    pub glitch_threshold: Option<i32>,
    /// Use the chat completions request and response shape
    #[arg(long)]
    pub chat: bool,
    #[arg(long, value_enum)]
    pub length_unit: Option<LengthArg>,
    #[arg(long)]
    pub max_retries: Option<u32>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl HunterArgs {
    pub fn apply(&self, cfg: &mut HunterConfig) {
        set(&mut cfg.k, self.k);
        set(&mut cfg.resolution, self.resolution);
        set(
            &mut cfg.objective,
            self.objective.map(|o| match o {
                ObjectiveArg::Cpm => Objective::Cpm,
                ObjectiveArg::Modularity => Objective::Modularity,
            }),
        );
        set(&mut cfg.sample_fraction, self.sample_frac);
        set(&mut cfg.min_sample, self.min_sample);
        set(&mut cfg.threshold_r, self.threshold_r);
        set(&mut cfg.max_iterations, self.max_iterations);
        set(&mut cfg.seed, self.seed);
        if self.no_verify {
            cfg.verify_final = false;
        }
        if self.strict_rho {
            cfg.rho_mode = RhoMode::Strict;
        }
    }
}

impl OracleArgs {
    pub fn apply(&self, cfg: &mut OracleConfig) {
        if self.oracle_url.is_some() {
            cfg.endpoint_url = self.oracle_url.clone();
        }
        set(&mut cfg.model_name, self.model.clone());
        set(&mut cfg.temperature, self.temperature);
        set(&mut cfg.max_tokens, self.max_tokens);
        set(&mut cfg.repeats, self.repeats);
        set(&mut cfg.request_timeout_secs, self.timeout);
        set(&mut cfg.concurrency_limit, self.concurrency);
        set(&mut cfg.glitch_threshold, self.glitch_threshold);
        set(&mut cfg.max_retries, self.max_retries);
        set(
            &mut cfg.length_unit,
            self.length_unit.map(|u| match u {
                LengthArg::Scalars => LengthUnit::Scalars,
                LengthArg::Bytes => LengthUnit::Bytes,
                LengthArg::Graphemes => LengthUnit::Graphemes,
            }),
        );
        if self.chat {
            cfg.chat_mode = true;
        }
    }
}
