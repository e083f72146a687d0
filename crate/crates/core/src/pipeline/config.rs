//! Run configuration, loaded from a TOML file of nested key = value tables.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::draft::DraftConfig;
use crate::error::{Error, Result};
use crate::keyframe::KeyframeConfig;
use crate::protocol::{HttpBackend, InferenceBackend, MockBackend, ModelTag};
use crate::retrieval::{RetrievalMode, DEFAULT_TOP_K};
use crate::verifier::{SelectionStrategy, StrategyKind, DEFAULT_DELTA};

pub const ENDPOINT_ENV_PREFIX: &str = "VSRAG_ENDPOINT_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    NoRag,
    StandardRag,
    SpeculateRag,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::NoRag => "no_rag",
            Mode::StandardRag => "standard_rag",
            Mode::SpeculateRag => "speculate_rag",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Mode::NoRag, Mode::StandardRag, Mode::SpeculateRag]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    /// Normalized containment match.
    #[default]
    Rule,
    /// Ask the verifier whether prediction and gold are equivalent.
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    /// When set, pool each keyframe's top `per_frame_k` before the global cut.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_frame_k: Option<usize>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            per_frame_k: None,
        }
    }
}

impl RetrievalConfig {
    pub fn mode(&self) -> RetrievalMode {
        match self.per_frame_k {
            Some(per_frame_k) => RetrievalMode::PerFrameUnion { per_frame_k },
            None => RetrievalMode::GlobalMax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub strategy: StrategyKind,
    pub delta: f64,
    pub rng_seed: u64,
    pub max_parallel: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::TwoStage,
            delta: DEFAULT_DELTA,
            rng_seed: 0,
            max_parallel: 8,
        }
    }
}

impl VerifyConfig {
    pub fn selection(&self) -> SelectionStrategy {
        SelectionStrategy {
            kind: self.strategy,
            delta: self.delta,
            rng_seed: self.rng_seed,
        }
    }
}

/// Endpoint per role. `mock:<fixtures.json>` runs the mock in-process;
/// anything else is treated as an HTTP base URL.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Endpoints {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drafter: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verifier: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedder: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    /// Model answering in no-RAG mode.
    pub no_rag_model: ModelTag,
    pub judge: JudgeKind,
    /// Items evaluated concurrently.
    pub item_parallel: usize,
    /// Replace simulated stage times with measured wall-clock times.
    pub record_wall_clock: bool,
    /// Template file; built-in templates when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    pub keyframe: KeyframeConfig,
    pub retrieval: RetrievalConfig,
    pub draft: DraftConfig,
    pub verify: VerifyConfig,
    pub endpoints: Endpoints,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::SpeculateRag,
            no_rag_model: ModelTag::Verifier,
            judge: JudgeKind::Rule,
            item_parallel: 4,
            record_wall_clock: false,
            templates: None,
            keyframe: KeyframeConfig::default(),
            retrieval: RetrievalConfig::default(),
            draft: DraftConfig::default(),
            verify: VerifyConfig::default(),
            endpoints: Endpoints::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(t) = &self.templates {
            if t.is_relative() {
                self.templates = Some(base.join(t));
            }
        }
        for ep in [
            &mut self.endpoints.drafter,
            &mut self.endpoints.verifier,
            &mut self.endpoints.embedder,
        ]
        .into_iter()
        .flatten()
        {
            if let Some(p) = ep.strip_prefix("mock:") {
                if Path::new(p).is_relative() {
                    *ep = format!("mock:{}", base.join(p).display());
                }
            }
        }
    }

    /// `VSRAG_ENDPOINT_<TAG>` overrides the configured endpoint for a role.
    pub fn apply_env_overrides(&mut self) {
        self.apply_overrides(|tag| std::env::var(format!("{ENDPOINT_ENV_PREFIX}{tag}")).ok());
    }

    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for (tag, slot) in [
            ("DRAFTER", &mut self.endpoints.drafter),
            ("VERIFIER", &mut self.endpoints.verifier),
            ("EMBEDDER", &mut self.endpoints.embedder),
        ] {
            if let Some(v) = lookup(tag) {
                *slot = Some(v);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.keyframe.theta > 0.0 && self.keyframe.theta <= 1.0) {
            return Err(Error::Config(format!(
                "theta must be in (0, 1], got {}",
                self.keyframe.theta
            )));
        }
        let b = self.keyframe.bins_per_channel;
        if !(2..=256).contains(&b) || 256 % b != 0 {
            return Err(Error::Config(format!("bins_per_channel must divide 256, got {b}")));
        }
        if self.retrieval.k == 0 {
            return Err(Error::Config("retrieval.k must be >= 1".into()));
        }
        if self.draft.max_parallel == 0 || self.verify.max_parallel == 0 || self.item_parallel == 0 {
            return Err(Error::Config("parallelism caps must be >= 1".into()));
        }
        if self.draft.entity_max_tokens == 0
            || self.draft.rationale_max_tokens == 0
            || self.draft.answer_max_tokens == 0
        {
            return Err(Error::Config("per-step max tokens must be >= 1".into()));
        }
        self.verify.selection().validate()
    }

    /// Short label identifying a sweep cell.
    pub fn label(&self) -> String {
        match self.mode {
            Mode::SpeculateRag if self.verify.strategy.uses_delta() => {
                format!("{}/{}/delta={}", self.mode, self.verify.strategy, self.verify.delta)
            }
            Mode::SpeculateRag => format!("{}/{}", self.mode, self.verify.strategy),
            m => m.to_string(),
        }
    }
}

/// Backend handles per role.
#[derive(Clone)]
pub struct Backends {
    pub drafter: Arc<dyn InferenceBackend>,
    pub verifier: Arc<dyn InferenceBackend>,
    pub embedder: Arc<dyn InferenceBackend>,
}

impl Backends {
    /// All three roles served by one backend.
    pub fn shared(backend: Arc<dyn InferenceBackend>) -> Self {
        Self {
            drafter: backend.clone(),
            verifier: backend.clone(),
            embedder: backend,
        }
    }

    /// Connects every configured endpoint. Endpoints naming the same target
    /// share one backend instance.
    pub fn connect(endpoints: &Endpoints) -> Result<Self> {
        let mut cache: BTreeMap<String, Arc<dyn InferenceBackend>> = BTreeMap::new();
        let mut open = |role: &str, ep: &Option<String>| -> Result<Arc<dyn InferenceBackend>> {
            let ep = ep
                .as_deref()
                .ok_or_else(|| Error::Config(format!("no endpoint configured for {role}")))?;
            if let Some(b) = cache.get(ep) {
                return Ok(b.clone());
            }
            let backend = open_endpoint(ep)?;
            cache.insert(ep.to_string(), backend.clone());
            Ok(backend)
        };
        Ok(Self {
            drafter: open("drafter", &endpoints.drafter)?,
            verifier: open("verifier", &endpoints.verifier)?,
            embedder: open("embedder", &endpoints.embedder)?,
        })
    }
}

pub fn open_endpoint(endpoint: &str) -> Result<Arc<dyn InferenceBackend>> {
    match endpoint.strip_prefix("mock:") {
        Some(path) => Ok(Arc::new(MockBackend::from_path(Path::new(path))?)),
        None => Ok(Arc::new(HttpBackend::new(endpoint)?)),
    }
}

/// Seed of the fixture file behind a `mock:` endpoint, for run snapshots.
pub fn mock_seed(endpoint: &str) -> Option<u64> {
    let path = endpoint.strip_prefix("mock:")?;
    let raw = std::fs::read(path).ok()?;
    let v: serde_json::Value = serde_json::from_slice(&raw).ok()?;
    v.get("seed")?.as_u64()
}
