//! Chat-completions client that turns one prompt into one forecast.
//!
//! Requests carry a JSON-schema `response_format` asking for
//! `{"prediction": number}`; anything else is a schema violation and is
//! retried up to `max_retries` times.

pub mod cache;
pub mod prompt;

use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use crate::views::{ForecastRequest, ProviderError, ViewProvider};
pub use cache::{cached_batch, CacheError, CacheRecord, ViewCache};
pub use prompt::{build_prompts, format_pct, PromptBundle};

/// Name of the single numeric field in the structured response.
pub const PREDICTION_FIELD: &str = "prediction";

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    /// Base URL up to and including the API version, e.g. `http://host:8000/v1`.
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token; unset means no auth header.
    pub api_key_env_var_name: String,
    pub max_retries: usize,
    pub timeout: Duration,
    pub temperature: f64,
    pub parallelism: usize,
    /// Sleep before retry `k` is `k * backoff`.
    pub backoff: Duration,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "default".into(),
            api_key_env_var_name: "OPENAI_API_KEY".into(),
            max_retries: 3,
            timeout: Duration::from_secs(60),
            temperature: 1.0,
            parallelism: 8,
            backoff: Duration::from_millis(250),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if self.timeout.is_zero() {
            return Err(ClientError::Config("timeout must be positive".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ClientError::Config("temperature must be finite and >= 0".into()));
        }
        if self.parallelism == 0 {
            return Err(ClientError::Config("parallelism must be at least 1".into()));
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("timeout after {0:?}")]
    Timeout(Duration),
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("schema violation after {attempts} attempts: {last}")]
    SchemaViolation { attempts: usize, last: String },
    #[error("config: {0}")]
    Config(String),
}

impl ClientError {
    fn is_retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) | ClientError::Timeout(_) | ClientError::SchemaViolation { .. } => true,
            ClientError::Http { status, .. } => *status == 429 || *status >= 500,
            ClientError::Config(_) => false,
        }
    }
}

/// A parsed forecast and how many retries it took.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forecast {
    pub value: f64,
    pub retries: usize,
}

/// The `response_format` block requesting a single float.
pub fn response_format() -> Value {
    json!({
        "type": "json_schema",
        "json_schema": {
            "name": "daily_return_forecast",
            "strict": true,
            "schema": {
                "type": "object",
                "properties": { PREDICTION_FIELD: { "type": "number" } },
                "required": [PREDICTION_FIELD],
                "additionalProperties": false
            }
        }
    })
}

pub fn request_body(config: &EndpointConfig, bundle: &PromptBundle) -> Value {
    json!({
        "model": config.model_name,
        "messages": [
            { "role": "system", "content": bundle.system_text },
            { "role": "user", "content": bundle.user_text }
        ],
        "temperature": config.temperature,
        "response_format": response_format()
    })
}

/// Extract the prediction from a chat-completions response body.
pub fn parse_response(body: &str) -> Result<f64, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response is not JSON: {e}"))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or("missing choices[0].message.content")?;
    parse_content(content)
}

/// The message content must be exactly `{"prediction": <finite number>}`.
pub fn parse_content(content: &str) -> Result<f64, String> {
    let v: Value = serde_json::from_str(content.trim()).map_err(|_| format!("content is not JSON: {content:?}"))?;
    let obj = v.as_object().ok_or("content is not a JSON object")?;
    if obj.len() != 1 {
        return Err(format!("expected only `{PREDICTION_FIELD}`, got {} fields", obj.len()));
    }
    let x = obj
        .get(PREDICTION_FIELD)
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("`{PREDICTION_FIELD}` missing or not a number"))?;
    if !x.is_finite() {
        return Err("prediction is not finite".into());
    }
    Ok(x)
}

/// Blocking HTTP client for one endpoint; cheap to share across threads.
#[derive(Clone)]
pub struct LlmClient {
    config: EndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl LlmClient {
    pub fn new(config: EndpointConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = std::env::var(&config.api_key_env_var_name).ok().filter(|k| !k.is_empty());
        Ok(Self { config, agent, api_key })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn post_once(&self, body: &str) -> Result<f64, ClientError> {
        let mut req = self.agent.post(self.config.url()).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| self.map_transport(e))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| self.map_transport(e))?;
        if !(200..300).contains(&status) {
            return Err(ClientError::Http { status, body: text });
        }
        parse_response(&text).map_err(|last| ClientError::SchemaViolation { attempts: 1, last })
    }

    fn map_transport(&self, e: ureq::Error) -> ClientError {
        match e {
            ureq::Error::Timeout(_) => ClientError::Timeout(self.config.timeout),
            other => ClientError::Transport(other.to_string()),
        }
    }

    /// One forecast, retrying non-conforming answers and transient failures.
    pub fn query_forecast(&self, bundle: &PromptBundle) -> Result<Forecast, ClientError> {
        let body = request_body(&self.config, bundle).to_string();
        let mut last = None;
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 && !self.config.backoff.is_zero() {
                std::thread::sleep(self.config.backoff * attempt as u32);
            }
            match self.post_once(&body) {
                Ok(value) => return Ok(Forecast { value, retries: attempt }),
                Err(e) if e.is_retryable() => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(match last.expect("at least one attempt") {
            ClientError::SchemaViolation { last, .. } => ClientError::SchemaViolation {
                attempts: self.config.max_retries + 1,
                last,
            },
            other => other,
        })
    }
}

/// Free-function form of [`LlmClient::query_forecast`].
pub fn query_forecast(config: &EndpointConfig, bundle: &PromptBundle) -> Result<Forecast, ClientError> {
    LlmClient::new(config.clone())?.query_forecast(bundle)
}

impl ViewProvider for LlmClient {
    fn forecast(&self, request: &ForecastRequest<'_>) -> Result<f64, ProviderError> {
        let c = request.context;
        let bundle = build_prompts(
            request.as_of,
            &c.meta,
            &c.asset_returns_pct,
            &c.sector_returns_pct,
            &c.market_returns_pct,
        );
        self.query_forecast(&bundle).map(|f| f.value).map_err(|e| match e {
            ClientError::SchemaViolation { .. } => ProviderError::InvalidResponse(e.to_string()),
            other => ProviderError::Transport(other.to_string()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_parsing_is_strict() {
        assert_eq!(parse_content("{\"prediction\": 0.12}"), Ok(0.12));
        assert_eq!(parse_content(" {\"prediction\": -3} \n"), Ok(-3.0));
        assert!(parse_content("The answer is 0.12").is_err());
        assert!(parse_content("{\"prediction\": \"0.12\"}").is_err());
        assert!(parse_content("{\"prediction\": 0.1, \"why\": \"x\"}").is_err());
        assert!(parse_content("[0.12]").is_err());
    }

    #[test]
    fn response_envelope() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"{\"prediction\": 0.12}"}}]}"#;
        assert_eq!(parse_response(body), Ok(0.12));
        assert!(parse_response(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn body_carries_schema_and_messages() {
        let bundle = PromptBundle {
            system_text: "sys".into(),
            user_text: "usr".into(),
        };
        let b = request_body(&EndpointConfig::default(), &bundle);
        assert_eq!(b["messages"][0]["role"], "system");
        assert_eq!(b["messages"][1]["content"], "usr");
        assert_eq!(b["response_format"]["type"], "json_schema");
        assert_eq!(
            b["response_format"]["json_schema"]["schema"]["required"][0],
            PREDICTION_FIELD
        );
        assert_eq!(b["temperature"], 1.0);
    }

    #[test]
    fn config_validation() {
        let bad = EndpointConfig {
            timeout: Duration::ZERO,
            ..EndpointConfig::default()
        };
        assert!(LlmClient::new(bad).is_err());
    }
}
