//! Chat-completions backend for any OpenAI-compatible HTTP endpoint.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest};
use crate::error::Error;
use crate::Result;

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireContent,
}

#[derive(Deserialize)]
struct WireContent {
    content: String,
}

/// Token bucket holding at most one request's worth of credit, so calls
/// are spaced at least 1/rate apart.
struct RateLimiter {
    rate: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    fn new(rate: f64) -> Self {
        RateLimiter {
            rate,
            state: Mutex::new((1.0, Instant::now())),
        }
    }

    fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                let now = Instant::now();
                let elapsed = now.duration_since(state.1).as_secs_f64();
                state.0 = (state.0 + elapsed * self.rate).min(1.0);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - state.0) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

/// Backend speaking the OpenAI chat-completions wire format.
pub struct HttpBackend {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
}

impl HttpBackend {
    /// Creates a backend for a base URL such as `http://localhost:8000`,
    /// `https://host/v1`, or a full `.../chat/completions` path.
    /// `rate_limit` caps requests per second; pass `None` to disable.
    pub fn new(base_url: &str, api_key: Option<String>, rate_limit: Option<f64>) -> Result<Self> {
        let base = base_url.trim_end_matches('/');
        if base.is_empty() {
            return Err(Error::Validation("backend endpoint is empty".to_string()));
        }
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        };
        if let Some(rate) = rate_limit {
            if !(rate > 0.0) {
                return Err(Error::Validation(format!(
                    "rate limit must be positive, got {rate}"
                )));
            }
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(HttpBackend {
            url,
            api_key,
            client,
            limiter: rate_limit.map(RateLimiter::new),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl ChatBackend for HttpBackend {
    fn send(&self, request: &ChatRequest) -> Result<String> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let body = WireRequest {
            model: &request.model,
            messages: vec![
                WireMessage {
                    role: "system",
                    content: &request.system_message,
                },
                WireMessage {
                    role: "user",
                    content: &request.user_message,
                },
            ],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut builder = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .text()
            .map_err(|e| Error::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            let body: String = text.chars().take(200).collect();
            return Err(Error::Protocol { status, body });
        }
        let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| {
            Error::Transport(format!("malformed completion response: {e}"))
        })?;
        match parsed.choices.into_iter().next() {
            Some(choice) => Ok(choice.message.content),
            None => Err(Error::Transport(
                "completion response has no choices".to_string(),
            )),
        }
    }
}
