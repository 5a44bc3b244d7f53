//! HTTP clients for hosted scorer/LLM services.
//!
//! The wire protocol lives behind [`AnalyzeTransport`] so the client logic
//! (rate limiting, retries, response parsing) is testable against scripted
//! transports without a network.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{ChatCompleter, OracleError, SamplingConfig, ToxicityOracle};

pub const ENV_TOXICITY_API_KEY: &str = "DETOX_TOXICITY_API_KEY";
pub const ENV_LLM_API_KEY: &str = "DETOX_LLM_API_KEY";

/// Raw HTTP reply: status code plus body text.
#[derive(Debug, Clone)]
pub struct TransportReply {
    pub status: u16,
    pub body: String,
}

/// Posts a JSON body and returns the raw reply. Errors are transport-level
/// (connection refused, timeout) and count as transient.
pub trait AnalyzeTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
    ) -> Result<TransportReply, OracleError>;
}

/// Client-side rate limiter enforcing a minimum interval between requests.
/// The hosted scorer's free tier allows 1 request per second, which is the
/// default.
pub struct RateLimiter {
    interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(requests_per_second: f64) -> Self {
        let interval = if requests_per_second > 0.0 {
            Duration::from_secs_f64(1.0 / requests_per_second)
        } else {
            Duration::ZERO
        };
        Self {
            interval,
            last: Mutex::new(None),
        }
    }

    /// Blocks until a request is allowed.
    pub fn acquire(&self) {
        let mut last = self.last.lock().unwrap();
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.interval {
                std::thread::sleep(self.interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

impl Default for RateLimiter {
    fn default() -> Self {
        Self::new(1.0)
    }
}

/// Retry budget and backoff base for transient failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    /// Maximum total attempts, including the first.
    pub max_attempts: usize,
    /// Backoff before attempt n is `base * 2^(n-2)`.
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: usize) -> Duration {
        if attempt <= 1 {
            Duration::ZERO
        } else {
            self.backoff_base * (1 << (attempt - 2).min(16)) as u32
        }
    }
}

/// Client for a hosted toxicity analysis service speaking the analyze
/// request/response JSON with the TOXICITY attribute.
pub struct RemoteToxicityClient<T> {
    transport: T,
    endpoint: String,
    api_key: String,
    rate: RateLimiter,
    retry: RetryPolicy,
    attempts_seen: Mutex<usize>,
}

impl<T: AnalyzeTransport> RemoteToxicityClient<T> {
    /// Builds the client. A missing or empty key is a configuration error
    /// raised before any network call.
    pub fn new(
        transport: T,
        endpoint: impl Into<String>,
        api_key: Option<String>,
        rate: RateLimiter,
        retry: RetryPolicy,
    ) -> Result<Self, OracleError> {
        let api_key = api_key.filter(|k| !k.is_empty()).ok_or_else(|| {
            OracleError::Config(format!(
                "toxicity API key missing; set {ENV_TOXICITY_API_KEY} or pass one in config"
            ))
        })?;
        Ok(Self {
            transport,
            endpoint: endpoint.into(),
            api_key,
            rate,
            retry,
            attempts_seen: Mutex::new(0),
        })
    }

    /// Reads the key from `DETOX_TOXICITY_API_KEY`.
    pub fn from_env(
        transport: T,
        endpoint: impl Into<String>,
        rate: RateLimiter,
        retry: RetryPolicy,
    ) -> Result<Self, OracleError> {
        let key = std::env::var(ENV_TOXICITY_API_KEY).ok();
        Self::new(transport, endpoint, key, rate, retry)
    }

    /// Total transport attempts made over the client's lifetime.
    pub fn attempts(&self) -> usize {
        *self.attempts_seen.lock().unwrap()
    }

    fn request_body(text: &str) -> Value {
        json!({
            "comment": { "text": text },
            "requestedAttributes": { "TOXICITY": {} },
        })
    }

    fn parse_score(body: &str) -> Result<f64, OracleError> {
        let value: Value = serde_json::from_str(body)
            .map_err(|e| OracleError::Protocol(format!("response is not JSON: {e}")))?;
        let score = value["attributeScores"]["TOXICITY"]["summaryScore"]["value"]
            .as_f64()
            .ok_or_else(|| {
                OracleError::Protocol(
                    "response lacks attributeScores.TOXICITY.summaryScore.value".into(),
                )
            })?;
        if !(0.0..=1.0).contains(&score) {
            return Err(OracleError::Protocol(format!(
                "TOXICITY score {score} outside [0, 1]"
            )));
        }
        Ok(score)
    }
}

impl<T: AnalyzeTransport> ToxicityOracle for RemoteToxicityClient<T> {
    fn score(&self, text: &str) -> Result<f64, OracleError> {
        let url = format!("{}?key={}", self.endpoint, self.api_key);
        let body = Self::request_body(text);
        let mut last: Option<(u16, String)> = None;

        for attempt in 1..=self.retry.max_attempts {
            std::thread::sleep(self.retry.backoff(attempt));
            self.rate.acquire();
            *self.attempts_seen.lock().unwrap() += 1;

            match self.transport.post_json(&url, &[], &body) {
                Ok(reply) if reply.status == 200 => return Self::parse_score(&reply.body),
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    last = Some((reply.status, reply.body));
                }
                Ok(reply) => {
                    // Other client errors are permanent.
                    return Err(OracleError::Service {
                        attempts: attempt,
                        status: reply.status,
                        message: reply.body,
                    });
                }
                Err(err) => {
                    last = Some((0, err.to_string()));
                }
            }
        }

        let (status, message) = last.unwrap_or((0, "no attempt made".into()));
        Err(OracleError::Service {
            attempts: self.retry.max_attempts,
            status,
            message,
        })
    }
}

/// Builds a remote toxicity oracle; convenience wrapper matching the
/// module-level operation set.
pub fn remote_toxicity_client<T: AnalyzeTransport>(
    transport: T,
    endpoint: impl Into<String>,
    api_key: Option<String>,
    requests_per_second: f64,
    max_attempts: usize,
) -> Result<RemoteToxicityClient<T>, OracleError> {
    RemoteToxicityClient::new(
        transport,
        endpoint,
        api_key,
        RateLimiter::new(requests_per_second),
        RetryPolicy {
            max_attempts,
            ..RetryPolicy::default()
        },
    )
}

/// Completion-style chat client: the instruction and input are joined into a
/// single prompt and posted to a completions endpoint.
pub struct RemoteChatCompleter<T> {
    transport: T,
    endpoint: String,
    api_key: String,
    model: String,
    sampling: SamplingConfig,
    rate: RateLimiter,
}

impl<T: AnalyzeTransport> RemoteChatCompleter<T> {
    pub fn new(
        transport: T,
        endpoint: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        sampling: SamplingConfig,
    ) -> Result<Self, OracleError> {
        let api_key = api_key.filter(|k| !k.is_empty()).ok_or_else(|| {
            OracleError::Config(format!(
                "LLM API key missing; set {ENV_LLM_API_KEY} or pass one in config"
            ))
        })?;
        Ok(Self {
            transport,
            endpoint: endpoint.into(),
            api_key,
            model: model.into(),
            sampling,
            rate: RateLimiter::new(1.0),
        })
    }
}

impl<T: AnalyzeTransport> ChatCompleter for RemoteChatCompleter<T> {
    fn complete(&self, instruction: &str, input: &str) -> Result<String, OracleError> {
        self.rate.acquire();
        let body = json!({
            "model": self.model,
            "prompt": format!("{instruction}\n\n{input}"),
            "max_tokens": self.sampling.max_length,
            "temperature": self.sampling.temperature,
            "top_p": self.sampling.top_p,
        });
        let headers = vec![(
            "Authorization".to_string(),
            format!("Bearer {}", self.api_key),
        )];
        let reply = self.transport.post_json(&self.endpoint, &headers, &body)?;
        if reply.status != 200 {
            return Err(OracleError::Service {
                attempts: 1,
                status: reply.status,
                message: reply.body,
            });
        }
        let value: Value = serde_json::from_str(&reply.body)
            .map_err(|e| OracleError::Protocol(format!("response is not JSON: {e}")))?;
        value["choices"][0]["text"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| OracleError::Protocol("response lacks choices[0].text".into()))
    }
}

/// Real HTTP transport backed by a blocking reqwest client.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, OracleError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| OracleError::Config(format!("http client: {e}")))?;
        Ok(Self { client })
    }
}

impl AnalyzeTransport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
    ) -> Result<TransportReply, OracleError> {
        let mut request = self
            .client
            .post(url)
            .header("Content-Type", "application/json")
            .body(serde_json::to_string(body).expect("JSON body serializes"));
        for (name, value) in headers {
            request = request.header(name, value);
        }
        let response = request
            .send()
            .map_err(|e| OracleError::Protocol(format!("transport failure: {e}")))?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| OracleError::Protocol(format!("body read failure: {e}")))?;
        Ok(TransportReply { status, body })
    }
}
