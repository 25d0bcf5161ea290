use reqwest::blocking::Client;
use serde_json::{json, Value};

use super::{OracleClient, OracleConfig, OracleError};

/// Environment variable holding the bearer token for live endpoints.
pub const KEY_ENV: &str = "GLITCH_ORACLE_KEY";

/// Client for an OpenAI-compatible completions (or chat completions) endpoint.
#[derive(Debug, Clone)]
pub struct HttpOracle {
    client: Client,
    url: String,
    api_key: Option<String>,
}

impl HttpOracle {
    pub fn new(config: &OracleConfig) -> Result<Self, OracleError> {
        let url = config.endpoint_url.clone().ok_or(OracleError::NotConfigured)?;
        let client = Client::builder()
            .timeout(config.request_timeout())
            .build()
            .map_err(|e| OracleError::Network(e.to_string()))?;
        Ok(Self {
            client,
            url,
            api_key: std::env::var(KEY_ENV).ok().filter(|k| !k.is_empty()),
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    fn request_body(prompt: &str, config: &OracleConfig) -> Value {
        if config.chat_mode {
            json!({
                "model": config.model_name,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": config.temperature,
                "max_tokens": config.max_tokens,
            })
        } else {
            json!({
                "model": config.model_name,
                "prompt": prompt,
                "temperature": config.temperature,
                "max_tokens": config.max_tokens,
            })
        }
    }
}

fn map_reqwest(err: reqwest::Error) -> OracleError {
    if err.is_timeout() {
        OracleError::Timeout
    } else {
        OracleError::Network(err.to_string())
    }
}

/// Pulls the completion text out of a response body.
pub(crate) fn extract_text(body: &Value, chat_mode: bool) -> Result<String, OracleError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| OracleError::Protocol("response has no choices[0]".into()))?;
    let text = if chat_mode {
        choice.get("message").and_then(|m| m.get("content"))
    } else {
        choice.get("text")
    };
    text.and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| {
            let field = if chat_mode { "message.content" } else { "text" };
            OracleError::Protocol(format!("choices[0].{field} missing or not a string"))
        })
}

impl OracleClient for HttpOracle {
    fn complete(&self, prompt: &str, config: &OracleConfig) -> Result<String, OracleError> {
        let mut req = self.client.post(&self.url).json(&Self::request_body(prompt, config));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(map_reqwest)?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(map_reqwest)?;
        if !status.is_success() {
            return Err(OracleError::HttpStatus {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&bytes).chars().take(512).collect(),
            });
        }
        let body: Value = serde_json::from_slice(&bytes)
            .map_err(|e| OracleError::Protocol(format!("invalid JSON body: {e}")))?;
        extract_text(&body, config.chat_mode)
    }
}

/// One-shot completion against the configured endpoint.
pub fn query_completion(prompt: &str, config: &OracleConfig) -> Result<String, OracleError> {
    HttpOracle::new(config)?.complete(prompt, config)
}
