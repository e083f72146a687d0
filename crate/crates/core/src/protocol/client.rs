//! Blocking HTTP client for the wire protocol.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{ChatRequest, ChatResponse, EmbedRequest, EmbedResponse, ErrorBody, Health, InferenceBackend};
use crate::error::ProtocolError;

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate poisoned") += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    base_url: String,
    http: reqwest::blocking::Client,
    gate: Gate,
}

impl HttpBackend {
    pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

    pub fn new(base_url: impl Into<String>) -> Result<Self, ProtocolError> {
        Self::with_options(base_url, Self::DEFAULT_MAX_IN_FLIGHT, Duration::from_secs(120))
    }

    pub fn with_options(
        base_url: impl Into<String>,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Result<Self, ProtocolError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProtocolError::Transport(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            http,
            gate: Gate::new(max_in_flight),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// One retry on transport failure, then the error surfaces.
    fn call<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<T, ProtocolError> {
        let _permit = self.gate.acquire();
        match self.call_once(path, body) {
            Err(e) if e.is_retryable() => {
                log::warn!("retrying {path} after transport failure: {e}");
                self.call_once(path, body)
            }
            other => other,
        }
    }

    fn call_once<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<T, ProtocolError> {
        let url = format!("{}{}", self.base_url, path);
        let req = match body {
            Some(b) => self.http.post(&url).json(b),
            None => self.http.get(&url),
        };
        let resp = req.send().map_err(|e| ProtocolError::Transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| ProtocolError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(body) if body.error.kind == "invalid_request" => ProtocolError::InvalidRequest(body.error.message),
                Ok(body) => ProtocolError::Backend(body.error.message),
                Err(_) => ProtocolError::Malformed(format!("HTTP {status} with unparseable body from {url}")),
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}

impl InferenceBackend for HttpBackend {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProtocolError> {
        request.validate()?;
        let resp: ChatResponse = self.call("/v1/chat", Some(request))?;
        resp.validate()?;
        Ok(resp)
    }

    fn embed(&self, request: &EmbedRequest) -> Result<EmbedResponse, ProtocolError> {
        let resp: EmbedResponse = self.call("/v1/embed", Some(request))?;
        resp.validate()?;
        Ok(resp)
    }

    fn health(&self) -> Result<Health, ProtocolError> {
        self.call::<(), _>("/v1/health", None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn gate_caps_concurrency() {
        let gate = Arc::new(Gate::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let (gate, live, peak) = (gate.clone(), live.clone(), peak.clone());
                s.spawn(move || {
                    let _p = gate.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        // Port 9 on localhost (discard) is essentially never listening.
        let client = HttpBackend::with_options("http://127.0.0.1:9", 1, Duration::from_millis(500)).unwrap();
        let err = client.health().unwrap_err();
        assert!(err.is_retryable(), "{err:?}");
    }
}
