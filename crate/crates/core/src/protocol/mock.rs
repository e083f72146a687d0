//! Deterministic in-process backend driven by a fixture table.
//!
//! Every response is a pure function of (request content, seed, fixtures).
//! Unfixtured chats are answered by a seeded word generator and unfixtured
//! embeds by a seeded hash of the input bytes. Reported `wall_time_ms` comes
//! from a per-model [`LatencyModel`] and only elapses for real when
//! `real_sleep` is on.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    count_tokens, ChatRequest, ChatResponse, EmbedRequest, EmbedResponse, Health, InferenceBackend, ModelTag, TokenProb,
};
use crate::error::{Error, ProtocolError, Result};

pub const DEFAULT_MOCK_DIM: usize = 64;
pub const EMBEDDER_LATENCY_KEY: &str = "embedder";

/// Simulated cost of one call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub per_input_token_ms: f64,
    pub per_output_token_ms: f64,
    pub fixed_overhead_ms: f64,
}

impl LatencyModel {
    pub const ZERO: LatencyModel = LatencyModel {
        per_input_token_ms: 0.0,
        per_output_token_ms: 0.0,
        fixed_overhead_ms: 0.0,
    };

    /// Lightweight drafter: ten times cheaper per token than the verifier.
    pub fn default_drafter() -> Self {
        Self {
            per_input_token_ms: 0.2,
            per_output_token_ms: 3.0,
            fixed_overhead_ms: 50.0,
        }
    }

    pub fn default_verifier() -> Self {
        Self {
            per_input_token_ms: 2.0,
            per_output_token_ms: 30.0,
            fixed_overhead_ms: 50.0,
        }
    }

    pub fn default_embedder() -> Self {
        Self {
            per_input_token_ms: 0.05,
            per_output_token_ms: 0.0,
            fixed_overhead_ms: 10.0,
        }
    }

    pub fn wall_time_ms(&self, input_tokens: u64, output_tokens: u64) -> f64 {
        self.fixed_overhead_ms
            + input_tokens as f64 * self.per_input_token_ms
            + output_tokens as f64 * self.per_output_token_ms
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            self.per_input_token_ms,
            self.per_output_token_ms,
            self.fixed_overhead_ms,
        ];
        if fields.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!(
                "latency model fields must be finite and >= 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Scripted answer for one fixture key.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatFixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yes_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_prob: Option<f64>,
    /// When set, the backend declares an error instead of answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ChatFixture {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            ..Default::default()
        }
    }

    pub fn verdict(yes_prob: f64, no_prob: f64) -> Self {
        Self {
            yes_prob: Some(yes_prob),
            no_prob: Some(no_prob),
            ..Default::default()
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self {
            error: Some(message.into()),
            ..Default::default()
        }
    }
}

/// On-disk fixture schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureFile {
    pub seed: u64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub chat_fixtures: BTreeMap<String, ChatFixture>,
    #[serde(default)]
    pub embed_fixtures: BTreeMap<String, Vec<f32>>,
    /// Keyed by `drafter`, `verifier`, `embedder`.
    #[serde(default)]
    pub latency: BTreeMap<String, LatencyModel>,
}

fn default_dim() -> usize {
    DEFAULT_MOCK_DIM
}

impl FixtureFile {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dim: DEFAULT_MOCK_DIM,
            chat_fixtures: BTreeMap::new(),
            embed_fixtures: BTreeMap::new(),
            latency: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        f.validate()?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("fixture dim must be >= 1".into()));
        }
        for (key, fx) in &self.chat_fixtures {
            let probs = [fx.yes_prob, fx.no_prob];
            if probs.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Config(format!("chat fixture {key}: probability outside [0, 1]")));
            }
            if probs.iter().flatten().sum::<f64>() > 1.0 + 1e-6 {
                return Err(Error::Config(format!("chat fixture {key}: probabilities sum above 1")));
            }
        }
        for (literal, v) in &self.embed_fixtures {
            if v.len() != self.dim {
                return Err(Error::Config(format!(
                    "embed fixture {literal:?} has {} values, expected {}",
                    v.len(),
                    self.dim
                )));
            }
            if v.iter().all(|x| *x == 0.0) {
                return Err(Error::Config(format!("embed fixture {literal:?} is the zero vector")));
            }
        }
        for (tag, lm) in &self.latency {
            if ![
                ModelTag::Drafter.as_str(),
                ModelTag::Verifier.as_str(),
                EMBEDDER_LATENCY_KEY,
            ]
            .contains(&tag.as_str())
            {
                return Err(Error::Config(format!("unknown latency model tag {tag:?}")));
            }
            lm.validate()?;
        }
        Ok(())
    }

    pub fn with_default_latency(mut self) -> Self {
        self.latency
            .entry(ModelTag::Drafter.as_str().into())
            .or_insert_with(LatencyModel::default_drafter);
        self.latency
            .entry(ModelTag::Verifier.as_str().into())
            .or_insert_with(LatencyModel::default_verifier);
        self.latency
            .entry(EMBEDDER_LATENCY_KEY.into())
            .or_insert_with(LatencyModel::default_embedder);
        self
    }

    pub fn latency_for(&self, key: &str) -> LatencyModel {
        self.latency.get(key).copied().unwrap_or(LatencyModel::ZERO)
    }
}

/// One call seen by the mock, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub enum LoggedCall {
    Chat(ChatRequest),
    Embed(EmbedRequest),
}

pub struct MockBackend {
    fixtures: FixtureFile,
    real_sleep: bool,
    log: Mutex<Vec<LoggedCall>>,
}

const VOCABULARY: &[&str] = &[
    "the", "animal", "river", "coast", "winter", "large", "small", "northern", "southern", "forest", "colony",
    "species", "found", "mostly", "island", "desert", "mountain", "lives", "near", "cold", "warm", "water", "ice",
    "plains",
];

impl MockBackend {
    pub fn new(fixtures: FixtureFile) -> Result<Self> {
        fixtures.validate()?;
        Ok(Self {
            fixtures,
            real_sleep: false,
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::new(FixtureFile::load(path)?)
    }

    /// Make simulated time actually elapse on every call.
    pub fn with_real_sleep(mut self, on: bool) -> Self {
        self.real_sleep = on;
        self
    }

    pub fn real_sleep(&self) -> bool {
        self.real_sleep
    }

    pub fn fixtures(&self) -> &FixtureFile {
        &self.fixtures
    }

    pub fn calls(&self) -> Vec<LoggedCall> {
        self.log.lock().expect("mock log poisoned").clone()
    }

    pub fn chat_calls(&self) -> Vec<ChatRequest> {
        self.calls()
            .into_iter()
            .filter_map(|c| match c {
                LoggedCall::Chat(r) => Some(r),
                LoggedCall::Embed(_) => None,
            })
            .collect()
    }

    pub fn clear_log(&self) {
        self.log.lock().expect("mock log poisoned").clear();
    }

    fn seeded_rng(&self, domain: &[u8], payload: &[u8]) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.fixtures.seed.to_le_bytes());
        h.update(domain);
        h.update([0]);
        h.update(payload);
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    /// Computes the response without sleeping. Servers call this and sleep
    /// on their own runtime.
    pub fn respond_chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProtocolError> {
        request.validate()?;
        self.log
            .lock()
            .expect("mock log poisoned")
            .push(LoggedCall::Chat(request.clone()));

        let key = request.fixture_key()?;
        let fixture = self.fixtures.chat_fixtures.get(&key);
        if let Some(msg) = fixture.and_then(|f| f.error.as_ref()) {
            return Err(ProtocolError::Backend(msg.clone()));
        }

        let mut rng = self.seeded_rng(b"chat", key.as_bytes());
        let verdict = match fixture.and_then(|f| f.yes_prob.zip(f.no_prob)) {
            Some(pair) => Some(pair),
            None if fixture.and_then(|f| f.text.as_ref()).is_none() => {
                let yes = 0.05 + 0.9 * unit_f64(rng.next_u32());
                Some((yes, (1.0 - yes) * 0.9))
            }
            None => None,
        };

        let full_text = match fixture.and_then(|f| f.text.clone()) {
            Some(t) => t,
            None if request.want_first_token_distribution => {
                let (yes, no) = verdict.expect("verdict set for unfixtured chat");
                if yes >= no { "Yes" } else { "No" }.to_string()
            }
            None => {
                let n = 1 + (rng.next_u32() % 6) as usize;
                (0..n)
                    .map(|_| VOCABULARY[rng.next_u32() as usize % VOCABULARY.len()])
                    .collect::<Vec<_>>()
                    .join(" ")
            }
        };
        let text = truncate_words(&full_text, request.max_new_tokens as usize);

        let first_token_distribution = request.want_first_token_distribution.then(|| {
            let mut dist = match verdict {
                Some((yes, no)) => vec![
                    TokenProb {
                        token: "Yes".into(),
                        prob: yes,
                    },
                    TokenProb {
                        token: "No".into(),
                        prob: no,
                    },
                ],
                None => vec![TokenProb {
                    token: text.split_whitespace().next().unwrap_or("").to_string(),
                    prob: 1.0,
                }],
            };
            dist.sort_by(|a, b| b.prob.total_cmp(&a.prob));
            dist
        });

        let input_token_count = request.input_token_count();
        let output_token_count = count_tokens(&text);
        let wall_time_ms = self
            .fixtures
            .latency_for(request.model_tag.as_str())
            .wall_time_ms(input_token_count, output_token_count);
        Ok(ChatResponse {
            text,
            first_token_distribution,
            input_token_count,
            output_token_count,
            wall_time_ms,
        })
    }

    pub fn respond_embed(&self, request: &EmbedRequest) -> Result<EmbedResponse, ProtocolError> {
        request.validate()?;
        self.log
            .lock()
            .expect("mock log poisoned")
            .push(LoggedCall::Embed(request.clone()));

        let literal = request.fixture_literal()?;
        let raw: Vec<f32> = match self.fixtures.embed_fixtures.get(&literal) {
            Some(v) => v.clone(),
            None => {
                let mut rng = self.seeded_rng(b"embed", literal.as_bytes());
                (0..self.fixtures.dim)
                    .map(|_| (unit_f64(rng.next_u32()) * 2.0 - 1.0) as f32)
                    .collect()
            }
        };
        let norm = raw.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        let vector: Vec<f32> = raw.iter().map(|&v| (f64::from(v) / norm) as f32).collect();

        let input_tokens = match request {
            EmbedRequest::Text(t) => count_tokens(t),
            EmbedRequest::Image(_) => 0,
        };
        let wall_time_ms = self
            .fixtures
            .latency_for(EMBEDDER_LATENCY_KEY)
            .wall_time_ms(input_tokens, 0);
        Ok(EmbedResponse {
            dim: vector.len(),
            vector,
            wall_time_ms,
        })
    }

    pub fn health_report(&self) -> Health {
        Health {
            status: "ok".into(),
            dim: self.fixtures.dim,
            model_tags: vec![ModelTag::Drafter, ModelTag::Verifier],
        }
    }

    fn sleep_for(&self, ms: f64) {
        if self.real_sleep && ms > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(ms / 1000.0));
        }
    }
}

impl InferenceBackend for MockBackend {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProtocolError> {
        let resp = self.respond_chat(request)?;
        self.sleep_for(resp.wall_time_ms);
        Ok(resp)
    }

    fn embed(&self, request: &EmbedRequest) -> Result<EmbedResponse, ProtocolError> {
        let resp = self.respond_embed(request)?;
        self.sleep_for(resp.wall_time_ms);
        Ok(resp)
    }

    fn health(&self) -> Result<Health, ProtocolError> {
        Ok(self.health_report())
    }
}

fn unit_f64(x: u32) -> f64 {
    f64::from(x) / f64::from(u32::MAX)
}

fn truncate_words(text: &str, max: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= max {
        text.trim().to_string()
    } else {
        words[..max].join(" ")
    }
}
