//! Chat-completion client with response caching, retries, and in-flight
//! request de-duplication.
//!
//! Every request is keyed by a digest over (model, system message, user
//! message, temperature, max_tokens). Responses land in an append-only
//! JSON-lines cache, so a rerun with a warm cache never touches the
//! network and is fully deterministic.

mod http;
mod mock;

pub use http::HttpBackend;
pub use mock::{MockBackend, MockScript, PlantedRule};

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::jsonl;
use crate::Result;

/// One chat-completion request: a system message and a user message.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub system_message: String,
    pub user_message: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Builds a request with the toolkit defaults: temperature 0.0 and a
    /// 100-token response budget.
    pub fn new(model: &str, system_message: &str, user_message: &str) -> Self {
        ChatRequest {
            model: model.to_string(),
            system_message: system_message.to_string(),
            user_message: user_message.to_string(),
            temperature: 0.0,
            max_tokens: 100,
        }
    }

    /// Cache key: SHA-256 over all request fields, length-prefixed so
    /// field boundaries cannot collide.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for field in [&self.model, &self.system_message, &self.user_message] {
            hasher.update((field.len() as u64).to_le_bytes());
            hasher.update(field.as_bytes());
        }
        hasher.update(self.temperature.to_le_bytes());
        hasher.update((self.max_tokens as u64).to_le_bytes());
        let bytes = hasher.finalize();
        let mut out = String::with_capacity(64);
        for b in bytes {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

/// Completion text plus bookkeeping about how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub raw_text: String,
    pub model_id: String,
    /// True when served from the cache without a backend call.
    pub cached: bool,
    /// Backend attempts made for this response; 0 on a cache hit.
    pub attempts: u32,
}

/// Anything that can answer a chat request with raw completion text.
pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String>;
}

/// Exponential backoff schedule for retryable failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    fn delay_after(&self, attempt: u32) -> Duration {
        let factor = 1u32 << (attempt - 1).min(16);
        (self.base_delay * factor).min(Duration::from_secs(10))
    }
}

fn retryable(error: &Error) -> bool {
    match error {
        Error::Transport(_) => true,
        Error::Protocol { status, .. } => *status == 429 || (500..=599).contains(status),
        _ => false,
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    digest: String,
    model_id: String,
    raw_text: String,
    created_at: u64,
}

struct Cache {
    entries: HashMap<String, String>,
    writer: Option<File>,
}

impl Cache {
    fn in_memory() -> Self {
        Cache {
            entries: HashMap::new(),
            writer: None,
        }
    }

    /// Loads an existing cache file (later lines win) and reopens it for
    /// appending.
    fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            for line in jsonl::read_jsonl::<CacheLine>(&text)? {
                entries.insert(line.digest, line.raw_text);
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Cache {
            entries,
            writer: Some(writer),
        })
    }

    fn get(&self, digest: &str) -> Option<String> {
        self.entries.get(digest).cloned()
    }

    /// Records a response at most once; later insertions with the same
    /// digest are ignored.
    fn insert(&mut self, digest: &str, model_id: &str, raw_text: &str) -> Result<()> {
        if self.entries.contains_key(digest) {
            return Ok(());
        }
        if let Some(writer) = &mut self.writer {
            let line = jsonl::to_json_line(&CacheLine {
                digest: digest.to_string(),
                model_id: model_id.to_string(),
                raw_text: raw_text.to_string(),
                created_at: jsonl::unix_now(),
            });
            writer.write_all(line.as_bytes())?;
            writer.flush()?;
        }
        self.entries.insert(digest.to_string(), raw_text.to_string());
        Ok(())
    }

    fn len(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Default)]
struct InflightSlot {
    done: Mutex<bool>,
    cv: Condvar,
}

impl InflightSlot {
    fn wait(&self) {
        let mut done = self.done.lock().unwrap();
        while !*done {
            done = self.cv.wait(done).unwrap();
        }
    }

    fn finish(&self) {
        *self.done.lock().unwrap() = true;
        self.cv.notify_all();
    }
}

/// Caching, retrying chat-completion client over any [`ChatBackend`].
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    cache: Mutex<Cache>,
    inflight: Mutex<HashMap<String, Arc<InflightSlot>>>,
}

impl LlmClient {
    /// Client with an in-memory cache only.
    pub fn new(backend: Arc<dyn ChatBackend>, retry: RetryPolicy) -> Self {
        LlmClient {
            backend,
            retry,
            cache: Mutex::new(Cache::in_memory()),
            inflight: Mutex::new(HashMap::new()),
        }
    }

    /// Client backed by an append-only cache file, created if absent.
    pub fn with_cache_file(
        backend: Arc<dyn ChatBackend>,
        retry: RetryPolicy,
        path: &Path,
    ) -> Result<Self> {
        Ok(LlmClient {
            backend,
            retry,
            cache: Mutex::new(Cache::open(path)?),
            inflight: Mutex::new(HashMap::new()),
        })
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    /// Returns the completion for a request, consulting the cache first.
    /// Concurrent identical requests share a single backend call.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let digest = request.digest();
        loop {
            if let Some(raw_text) = self.cache.lock().unwrap().get(&digest) {
                return Ok(ChatResponse {
                    raw_text,
                    model_id: request.model.clone(),
                    cached: true,
                    attempts: 0,
                });
            }
            let (slot, leader) = {
                let mut inflight = self.inflight.lock().unwrap();
                match inflight.get(&digest) {
                    Some(slot) => (Arc::clone(slot), false),
                    None => {
                        let slot = Arc::new(InflightSlot::default());
                        inflight.insert(digest.clone(), Arc::clone(&slot));
                        (slot, true)
                    }
                }
            };
            if !leader {
                // Wait for the in-flight request, then re-check the cache.
                // If the leader failed, the next pass takes the lead.
                slot.wait();
                continue;
            }
            let outcome = self.send_with_retry(request);
            let cache_result = match &outcome {
                Ok((raw_text, _)) => self
                    .cache
                    .lock()
                    .unwrap()
                    .insert(&digest, &request.model, raw_text),
                Err(_) => Ok(()),
            };
            self.inflight.lock().unwrap().remove(&digest);
            slot.finish();
            let (raw_text, attempts) = outcome?;
            cache_result?;
            return Ok(ChatResponse {
                raw_text,
                model_id: request.model.clone(),
                cached: false,
                attempts,
            });
        }
    }

    fn send_with_retry(&self, request: &ChatRequest) -> Result<(String, u32)> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.backend.send(request) {
                Ok(raw_text) => return Ok((raw_text, attempt)),
                Err(e) if attempt < self.retry.max_attempts && retryable(&e) => {
                    std::thread::sleep(self.retry.delay_after(attempt));
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Pulls the first standalone integer in `0..=scale_max` out of raw model
/// output, scanning left to right. Digit runs are taken whole, so a "10"
/// never matches as a "1"; `None` means no usable grade was found.
pub fn extract_grade(raw_text: &str, scale_max: u8) -> Option<u8> {
    let bytes = raw_text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if let Ok(value) = raw_text[start..i].parse::<u64>() {
                if value <= scale_max as u64 {
                    return Some(value as u8);
                }
            }
        } else {
            i += 1;
        }
    }
    None
}
