//! Proxy-task oracle: prompts an LLM (or the deterministic mock) with the
//! repetition, spelling and length tasks and turns the answers into a glitch
//! score.

mod http;
mod mock;
pub mod prompt;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedstore::{TokenId, Vocabulary};
use crate::taxonomy::{classify_symptom, SymptomLabel};

pub use http::{query_completion, HttpOracle, KEY_ENV};
pub use mock::{corrupt, MockOracle};
pub use prompt::{
    evaluate_response, evaluate_response_with, expected_answer, expected_answer_with,
    render_prompt, LengthUnit, ProxyTask,
};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle request timed out")]
    Timeout,
    #[error("network error: {0}")]
    Network(String),
    #[error("HTTP status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no oracle endpoint configured")]
    NotConfigured,
    #[error("token {token} vocabulary lookup failed")]
    UnknownToken { token: TokenId },
    #[error("oracle aborted after {attempts} attempts: {last}")]
    Aborted {
        attempts: u32,
        #[source]
        last: Box<OracleError>,
    },
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid oracle config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Queries per task; the task verdict is the majority.
    pub repeats: u32,
    pub request_timeout_secs: f64,
    pub concurrency_limit: usize,
    pub glitch_threshold: i32,
    /// Read `choices[0].message.content` and send chat messages.
    pub chat_mode: bool,
    pub length_unit: LengthUnit,
    pub max_retries: u32,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            endpoint_url: None,
            model_name: "mock".into(),
            temperature: 0.0,
            max_tokens: 64,
            repeats: 1,
            request_timeout_secs: 60.0,
            concurrency_limit: 8,
            glitch_threshold: -2,
            chat_mode: false,
            length_unit: LengthUnit::Scalars,
            max_retries: 3,
        }
    }
}

impl OracleConfig {
    /// Five-run majority voting.
    pub fn verify_mode(mut self) -> Self {
        self.repeats = 5;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ConfigError(format!("temperature {} < 0", self.temperature)));
        }
        if self.repeats == 0 {
            return Err(ConfigError("repeats must be >= 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(ConfigError("max_tokens must be >= 1".into()));
        }
        if self.concurrency_limit == 0 {
            return Err(ConfigError("concurrency_limit must be >= 1".into()));
        }
        if !(self.request_timeout_secs > 0.0 && self.request_timeout_secs.is_finite()) {
            return Err(ConfigError("request_timeout must be positive".into()));
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs)
    }
}

/// Anything that completes a prompt.
pub trait OracleClient: Send + Sync {
    fn complete(&self, prompt: &str, config: &OracleConfig) -> Result<String, OracleError>;
}

/// Query and token accounting. Token counts are whitespace-split
/// approximations, not tokenizer counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub queries: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub retries: u64,
    pub tokens_tested: u64,
    pub wall_ms: u64,
}

/// Thread-safe ledger shared by concurrent oracle workers.
#[derive(Debug, Default)]
pub struct Ledger {
    inner: Mutex<BudgetLedger>,
}

impl Ledger {
    pub fn snapshot(&self) -> BudgetLedger {
        *self.inner.lock().expect("ledger lock")
    }

    fn update(&self, f: impl FnOnce(&mut BudgetLedger)) {
        f(&mut self.inner.lock().expect("ledger lock"));
    }

    pub fn set_wall_ms(&self, ms: u64) {
        self.update(|l| l.wall_ms = ms);
    }
}

fn whitespace_tokens(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: ProxyTask,
    pub raw_response: String,
    pub expected: String,
    pub per: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlitchVerdict {
    pub token: TokenId,
    pub outcomes: Vec<TaskOutcome>,
    /// Negated count of passed tasks, in `-3..=0`.
    pub score: i32,
    pub is_glitch: bool,
    pub symptom: Option<SymptomLabel>,
}

impl GlitchVerdict {
    pub fn from_outcomes(token: TokenId, token_str: &str, outcomes: Vec<TaskOutcome>, threshold: i32) -> Self {
        let score = -outcomes.iter().map(|o| i32::from(o.per)).sum::<i32>();
        let is_glitch = score >= threshold;
        let symptom = if is_glitch {
            outcomes
                .iter()
                .find(|o| o.per == 0)
                .map(|o| classify_symptom(o.task, token_str, &o.raw_response))
        } else {
            None
        };
        Self {
            token,
            outcomes,
            score,
            is_glitch,
            symptom,
        }
    }
}

fn query_with_retry(
    client: &dyn OracleClient,
    prompt: &str,
    config: &OracleConfig,
    ledger: &Ledger,
) -> Result<String, OracleError> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match client.complete(prompt, config) {
            Ok(text) => {
                ledger.update(|l| {
                    l.queries += 1;
                    l.prompt_tokens += whitespace_tokens(prompt);
                    l.completion_tokens += whitespace_tokens(&text);
                });
                return Ok(text);
            }
            Err(err) => {
                ledger.update(|l| l.retries += 1);
                log::warn!("oracle attempt {attempts} failed: {err}");
                if attempts > config.max_retries {
                    return Err(OracleError::Aborted {
                        attempts,
                        last: Box::new(err),
                    });
                }
            }
        }
    }
}

/// Runs the full three-task battery on one token.
pub fn glitch_test(
    token: TokenId,
    vocab: &Vocabulary,
    config: &OracleConfig,
    client: &dyn OracleClient,
    ledger: &Ledger,
) -> Result<GlitchVerdict, OracleError> {
    let token_str = vocab.get(token).ok_or(OracleError::UnknownToken { token })?;
    let mut outcomes = Vec::with_capacity(3);
    for task in ProxyTask::ALL {
        let prompt = render_prompt(task, token_str);
        let mut first_response = None;
        let mut first_failure = None;
        let mut passes = 0;
        for _ in 0..config.repeats {
            let response = query_with_retry(client, &prompt, config, ledger)?;
            let per = evaluate_response_with(task, token_str, &response, config.length_unit);
            passes += u32::from(per);
            if per == 0 && first_failure.is_none() {
                first_failure = Some(response.clone());
            }
            first_response.get_or_insert(response);
        }
        let per = u8::from(passes * 2 > config.repeats);
        let raw_response = if per == 0 { first_failure } else { first_response };
        outcomes.push(TaskOutcome {
            task,
            raw_response: raw_response.unwrap_or_default(),
            expected: expected_answer_with(task, token_str, config.length_unit),
            per,
        });
    }
    ledger.update(|l| l.tokens_tested += 1);
    Ok(GlitchVerdict::from_outcomes(
        token,
        token_str,
        outcomes,
        config.glitch_threshold,
    ))
}

/// Tests every token with up to `concurrency_limit` workers. Verdicts come
/// back in the order of `tokens`, independent of completion order.
pub fn glitch_test_many(
    tokens: &[TokenId],
    vocab: &Vocabulary,
    config: &OracleConfig,
    client: &dyn OracleClient,
    ledger: &Ledger,
) -> Result<Vec<GlitchVerdict>, OracleError> {
    let workers = config.concurrency_limit.clamp(1, tokens.len().max(1));
    if workers == 1 {
        return tokens
            .iter()
            .map(|&t| glitch_test(t, vocab, config, client, ledger))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let results: Mutex<Vec<Option<Result<GlitchVerdict, OracleError>>>> =
        Mutex::new((0..tokens.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= tokens.len() {
                    break;
                }
                let r = glitch_test(tokens[i], vocab, config, client, ledger);
                if r.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let mut out = Vec::with_capacity(tokens.len());
    for r in results.into_inner().expect("results lock") {
        match r {
            Some(Ok(v)) => out.push(v),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    Ok(out)
}
