//! Model-agnostic wire protocol for chat generation and embedding.
//!
//! The same types travel over HTTP ([`client`], [`server`]) and through the
//! in-process [`mock::MockBackend`]. Chat responses can carry a truncated
//! first-token distribution, which is all the verifier needs to read
//! `p("Yes")` and `p("No")`.

pub mod client;
pub mod mock;
pub mod server;

use std::fmt;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ProtocolError;
use crate::keyframe::EncodedImage;

pub use client::HttpBackend;
pub use mock::{ChatFixture, FixtureFile, LatencyModel, MockBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// Which model a chat call is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Drafter,
    Verifier,
}

impl ModelTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Drafter => "drafter",
            ModelTag::Verifier => "verifier",
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            text: text.into(),
        }
    }
}

/// Base64-encoded raster image with its declared media type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub media_type: String,
    pub data: String,
}

impl ImagePayload {
    pub fn from_bytes(media_type: &str, bytes: &[u8]) -> Self {
        Self {
            media_type: media_type.to_string(),
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Vec<u8>, ProtocolError> {
        base64::engine::general_purpose::STANDARD
            .decode(&self.data)
            .map_err(|e| ProtocolError::InvalidRequest(format!("image payload is not base64: {e}")))
    }
}

impl From<&EncodedImage> for ImagePayload {
    fn from(img: &EncodedImage) -> Self {
        Self::from_bytes(&img.media_type, &img.bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    #[serde(default)]
    pub images: Vec<ImagePayload>,
    #[serde(default)]
    pub want_first_token_distribution: bool,
    pub max_new_tokens: u32,
    pub model_tag: ModelTag,
}

impl ChatRequest {
    pub fn new(model_tag: ModelTag, prompt: impl Into<String>, max_new_tokens: u32) -> Self {
        Self {
            messages: vec![Message::user(prompt)],
            images: Vec::new(),
            want_first_token_distribution: false,
            max_new_tokens,
            model_tag,
        }
    }

    pub fn with_images(mut self, images: Vec<ImagePayload>) -> Self {
        self.images = images;
        self
    }

    pub fn with_first_token_distribution(mut self) -> Self {
        self.want_first_token_distribution = true;
        self
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(ProtocolError::InvalidRequest(
                "chat request needs at least one user message".into(),
            ));
        }
        if self.max_new_tokens == 0 {
            return Err(ProtocolError::InvalidRequest(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Token proxy: whitespace-delimited words over all message texts.
    pub fn input_token_count(&self) -> u64 {
        self.messages.iter().map(|m| count_tokens(&m.text)).sum()
    }

    /// Stable fixture key: SHA-256 over role-tagged message texts followed by
    /// the SHA-256 digests of the decoded images, hex encoded.
    pub fn fixture_key(&self) -> Result<String, ProtocolError> {
        let mut h = Sha256::new();
        for m in &self.messages {
            h.update(m.role.as_str().as_bytes());
            h.update([0x1f]);
            h.update(m.text.as_bytes());
            h.update([0x1e]);
        }
        for img in &self.images {
            h.update(image_digest(&img.decode()?).as_bytes());
            h.update([0x1e]);
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Concatenated message texts, newline separated.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProb {
    pub token: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_token_distribution: Option<Vec<TokenProb>>,
    pub input_token_count: u64,
    pub output_token_count: u64,
    pub wall_time_ms: f64,
}

impl ChatResponse {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if let Some(dist) = &self.first_token_distribution {
            if let Some(bad) = dist.iter().find(|t| !(0.0..=1.0).contains(&t.prob) || t.prob.is_nan()) {
                return Err(ProtocolError::Malformed(format!(
                    "token {:?} has probability {} outside [0, 1]",
                    bad.token, bad.prob
                )));
            }
            let total: f64 = dist.iter().map(|t| t.prob).sum();
            if total > 1.0 + 1e-6 {
                return Err(ProtocolError::Malformed(format!(
                    "first-token probabilities sum to {total}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedRequest {
    Text(String),
    Image(ImagePayload),
}

impl EmbedRequest {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        match self {
            EmbedRequest::Text(t) if t.trim().is_empty() => {
                Err(ProtocolError::InvalidRequest("embed text must be non-empty".into()))
            }
            EmbedRequest::Text(_) => Ok(()),
            EmbedRequest::Image(img) => {
                let bytes = img.decode()?;
                image::load_from_memory(&bytes)
                    .map_err(|e| ProtocolError::InvalidRequest(format!("undecodable image: {e}")))?;
                Ok(())
            }
        }
    }

    /// Literal used to look up embed fixtures: the text itself, or
    /// `sha256:<hex>` of the decoded image bytes.
    pub fn fixture_literal(&self) -> Result<String, ProtocolError> {
        match self {
            EmbedRequest::Text(t) => Ok(t.clone()),
            EmbedRequest::Image(img) => Ok(format!("sha256:{}", image_digest(&img.decode()?))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f32>,
    pub dim: usize,
    #[serde(default)]
    pub wall_time_ms: f64,
}

impl EmbedResponse {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.vector.len() != self.dim || self.dim == 0 {
            return Err(ProtocolError::Malformed(format!(
                "embedding has {} values but declares dim {}",
                self.vector.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub dim: usize,
    pub model_tags: Vec<ModelTag>,
}

/// Error body returned by servers for non-2xx responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub kind: String,
    pub message: String,
}

/// Anything that can answer chat and embed calls.
pub trait InferenceBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, ProtocolError>;
    fn embed(&self, request: &EmbedRequest) -> Result<EmbedResponse, ProtocolError>;
    fn health(&self) -> Result<Health, ProtocolError>;
}

pub fn count_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

pub fn image_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
