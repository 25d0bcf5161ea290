//! Embedding-guided glitch-token search: build the token graph over the
//! active set, cluster it, sample every cluster against the oracle, keep the
//! clusters that produced glitches, repeat until nothing changes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedstore::{ModelBundle, StoreError, TokenId};
use crate::leiden::{leiden_with, LeidenConfig, LeidenError, Objective, Resolution};
use crate::metrics::EvalSummary;
use crate::oracle::{glitch_test_many, BudgetLedger, GlitchVerdict, Ledger, OracleClient, OracleConfig, OracleError};
use crate::taxonomy::SymptomLabel;
use crate::teg::{build_teg_with, RhoMode, TegConfig, TegError};
use crate::SCHEMA_VERSION;

#[derive(Debug, Error)]
pub enum HuntError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("embedding matrix too small to search (n={0})")]
    EmbeddingTooSmall(usize),
    #[error("invalid hunter config: {0}")]
    Config(String),
    #[error(transparent)]
    Teg(#[from] TegError),
    #[error(transparent)]
    Leiden(#[from] LeidenError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot write dump {path}: {source}")]
    Dump {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HunterConfig {
    pub k: usize,
    pub resolution: f64,
    pub objective: Objective,
    pub rho_mode: RhoMode,
    pub sample_fraction: f64,
    pub min_sample: usize,
    pub threshold_r: f64,
    pub max_iterations: usize,
    pub verify_final: bool,
    pub seed: u64,
}

impl Default for HunterConfig {
    fn default() -> Self {
        Self {
            k: 50,
            resolution: 75.0,
            objective: Objective::Modularity,
            rho_mode: RhoMode::Inclusive,
            sample_fraction: 0.05,
            min_sample: 1,
            threshold_r: 0.0,
            max_iterations: 100,
            verify_final: true,
            seed: 0,
        }
    }
}

impl HunterConfig {
    pub fn validate(&self) -> Result<(), HuntError> {
        let bad = |m: String| Err(HuntError::Config(m));
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return bad(format!("resolution {} must be positive", self.resolution));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad(format!("sample_fraction {} not in (0, 1]", self.sample_fraction));
        }
        if self.min_sample == 0 {
            return bad("min_sample must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.threshold_r) {
            return bad(format!("threshold_r {} not in [0, 1]", self.threshold_r));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        Ok(())
    }

    /// Sample size for a community of `size` tokens.
    pub fn sample_size(&self, size: usize) -> usize {
        let frac = (self.sample_fraction * size as f64).ceil() as usize;
        self.min_sample.max(frac).min(size)
    }

    /// Whether a community with `hits` glitches among `sampled` draws is kept.
    /// At r = 0 at least one glitch is required.
    pub fn keeps(&self, hits: usize, sampled: usize) -> bool {
        if sampled == 0 {
            return false;
        }
        let rate = hits as f64 / sampled as f64;
        if self.threshold_r == 0.0 {
            rate > 0.0
        } else {
            rate >= self.threshold_r
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Every community was kept.
    Fixpoint,
    /// No community was kept.
    Empty,
    MaxIterations,
    /// Two or fewer tokens left; sent straight to verification.
    TooSmall,
    /// Every token was tested.
    Exhaustive,
    /// Non-oracle baseline.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub active: usize,
    pub k: usize,
    pub clusters: usize,
    pub sampled: usize,
    pub new_tests: usize,
    pub kept_clusters: usize,
    pub kept_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedToken {
    pub id: TokenId,
    pub string: String,
    /// `None` when the token was never oracle-tested.
    pub score: Option<i32>,
    pub symptom: Option<SymptomLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HuntReport {
    pub schema_version: u32,
    pub method: String,
    pub config: serde_json::Value,
    pub termination: Termination,
    pub iterations: usize,
    pub verified: bool,
    pub ledger: BudgetLedger,
    pub glitch_tokens: Vec<ReportedToken>,
    #[serde(default)]
    pub trace: Vec<IterationTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvalSummary>,
}

impl HuntReport {
    /// Report for a detector that never queries the oracle.
    pub fn baseline(method: &str, config: serde_json::Value, ids: impl IntoIterator<Item = TokenId>, bundle: &ModelBundle) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            method: method.into(),
            config,
            termination: Termination::Baseline,
            iterations: 0,
            verified: false,
            ledger: BudgetLedger::default(),
            glitch_tokens: ids
                .into_iter()
                .map(|id| ReportedToken {
                    id,
                    string: bundle.vocab.get(id).unwrap_or_default().to_string(),
                    score: None,
                    symptom: None,
                })
                .collect(),
            trace: Vec::new(),
            evaluation: None,
        }
    }

    pub fn ids(&self) -> std::collections::BTreeSet<TokenId> {
        self.glitch_tokens.iter().map(|t| t.id).collect()
    }

    /// JSON with timing fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.ledger.wall_ms = 0;
        if let Some(e) = r.evaluation.as_mut() {
            e.ledger.wall_ms = 0;
        }
        r
    }
}

/// Extra knobs that do not change the result.
#[derive(Debug, Clone, Default)]
pub struct HuntOptions {
    /// Writes each iteration's graph (JSONL) and partition (JSON) here.
    pub dump_dir: Option<PathBuf>,
}

fn reported(id: TokenId, bundle: &ModelBundle, verdict: Option<&GlitchVerdict>) -> ReportedToken {
    ReportedToken {
        id,
        string: bundle.vocab.get(id).unwrap_or_default().to_string(),
        score: verdict.map(|v| v.score),
        symptom: verdict.and_then(|v| v.symptom),
    }
}

fn dump(dir: &Path, name: &str, write: impl FnOnce(&mut fs::File) -> std::io::Result<()>) -> Result<(), HuntError> {
    let path = dir.join(name);
    let err = |source| HuntError::Dump {
        path: path.display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(err)?;
    let mut f = fs::File::create(&path).map_err(err)?;
    write(&mut f).map_err(err)
}

fn config_echo(cfg: &HunterConfig, oracle: &OracleConfig) -> serde_json::Value {
    serde_json::json!({ "hunter": cfg, "oracle": oracle })
}

pub fn hunt(
    bundle: &ModelBundle,
    client: &dyn OracleClient,
    oracle: &OracleConfig,
    cfg: &HunterConfig,
) -> Result<HuntReport, HuntError> {
    hunt_with(bundle, client, oracle, cfg, &HuntOptions::default())
}

pub fn hunt_with(
    bundle: &ModelBundle,
    client: &dyn OracleClient,
    oracle: &OracleConfig,
    cfg: &HunterConfig,
    opts: &HuntOptions,
) -> Result<HuntReport, HuntError> {
    cfg.validate()?;
    oracle.validate().map_err(|e| HuntError::Config(e.0))?;
    let n = bundle.len();
    if n < 2 {
        return Err(HuntError::EmbeddingTooSmall(n));
    }
    let start = Instant::now();
    let ledger = Ledger::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache: BTreeMap<TokenId, GlitchVerdict> = BTreeMap::new();
    let mut active: Vec<TokenId> = (0..n as TokenId).collect();
    let mut trace = Vec::new();
    let leiden_cfg = LeidenConfig::new(Resolution::new(cfg.resolution)?).with_objective(cfg.objective);
    let mut termination = Termination::MaxIterations;

    for iteration in 1..=cfg.max_iterations {
        if active.len() <= 2 {
            termination = Termination::TooSmall;
            break;
        }
        let k = cfg.k.min(active.len() - 1);
        let sub = bundle.matrix.select_rows(&active)?;
        let graph = build_teg_with(&sub, &TegConfig { k, rho_mode: cfg.rho_mode })?;
        let partition = leiden_with(&graph, &leiden_cfg, rng.next_u64()).partition;
        if let Some(dir) = &opts.dump_dir {
            dump(dir, &format!("iteration_{iteration}_graph.jsonl"), |f| graph.write_jsonl(f))?;
            dump(dir, &format!("iteration_{iteration}_partition.json"), |f| {
                let labelled: Vec<(TokenId, usize)> =
                    active.iter().copied().zip(partition.assignment().iter().copied()).collect();
                serde_json::to_writer(f, &labelled).map_err(std::io::Error::other)
            })?;
        }

        let communities: Vec<Vec<TokenId>> = partition
            .communities()
            .into_iter()
            .map(|c| c.into_iter().map(|local| active[local]).collect())
            .collect();
        let samples: Vec<Vec<TokenId>> = communities
            .iter()
            .map(|members| {
                let s = cfg.sample_size(members.len());
                let mut picked: Vec<TokenId> = index::sample(&mut rng, members.len(), s)
                    .into_iter()
                    .map(|i| members[i])
                    .collect();
                picked.sort_unstable();
                picked
            })
            .collect();
        let mut untested: Vec<TokenId> = samples.iter().flatten().copied().filter(|t| !cache.contains_key(t)).collect();
        untested.sort_unstable();
        untested.dedup();
        for v in glitch_test_many(&untested, &bundle.vocab, oracle, client, &ledger)? {
            cache.insert(v.token, v);
        }

        let mut kept: Vec<TokenId> = Vec::new();
        let mut kept_clusters = 0;
        for (members, sample) in communities.iter().zip(&samples) {
            let hits = sample.iter().filter(|t| cache[*t].is_glitch).count();
            if cfg.keeps(hits, sample.len()) {
                kept.extend(members);
                kept_clusters += 1;
            }
        }
        kept.sort_unstable();
        trace.push(IterationTrace {
            iteration,
            active: active.len(),
            k,
            clusters: communities.len(),
            sampled: samples.iter().map(Vec::len).sum(),
            new_tests: untested.len(),
            kept_clusters,
            kept_tokens: kept.len(),
        });
        log::info!(
            "iteration {iteration}: {} active, {} clusters, kept {} tokens",
            active.len(),
            communities.len(),
            kept.len()
        );

        if kept.is_empty() {
            active = kept;
            termination = Termination::Empty;
            break;
        }
        if kept.len() == active.len() {
            termination = Termination::Fixpoint;
            break;
        }
        active = kept;
    }

    let glitch_tokens = if cfg.verify_final {
        let untested: Vec<TokenId> = active.iter().copied().filter(|t| !cache.contains_key(t)).collect();
        for v in glitch_test_many(&untested, &bundle.vocab, oracle, client, &ledger)? {
            cache.insert(v.token, v);
        }
        active
            .iter()
            .filter(|t| cache[*t].is_glitch)
            .map(|&t| reported(t, bundle, cache.get(&t)))
            .collect()
    } else {
        active.iter().map(|&t| reported(t, bundle, cache.get(&t))).collect()
    };

    ledger.set_wall_ms(start.elapsed().as_millis() as u64);
    Ok(HuntReport {
        schema_version: SCHEMA_VERSION,
        method: "hunt".into(),
        config: config_echo(cfg, oracle),
        termination,
        iterations: trace.len(),
        verified: cfg.verify_final,
        ledger: ledger.snapshot(),
        glitch_tokens,
        trace,
        evaluation: None,
    })
}

/// Tests every token of the vocabulary.
pub fn traverse(
    bundle: &ModelBundle,
    client: &dyn OracleClient,
    oracle: &OracleConfig,
    cfg: &HunterConfig,
) -> Result<HuntReport, HuntError> {
    oracle.validate().map_err(|e| HuntError::Config(e.0))?;
    let start = Instant::now();
    let ledger = Ledger::default();
    let all: Vec<TokenId> = (0..bundle.len() as TokenId).collect();
    let verdicts = glitch_test_many(&all, &bundle.vocab, oracle, client, &ledger)?;
    ledger.set_wall_ms(start.elapsed().as_millis() as u64);
    Ok(HuntReport {
        schema_version: SCHEMA_VERSION,
        method: "traverse".into(),
        config: config_echo(cfg, oracle),
        termination: Termination::Exhaustive,
        iterations: 0,
        verified: true,
        ledger: ledger.snapshot(),
        glitch_tokens: verdicts
            .iter()
            .filter(|v| v.is_glitch)
            .map(|v| reported(v.token, bundle, Some(v)))
            .collect(),
        trace: Vec::new(),
        evaluation: None,
    })
}
