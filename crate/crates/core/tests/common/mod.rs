#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use tempfile::TempDir;
use vsrag_core::draft::{DraftCandidate, DraftContext, StepTiming};
use vsrag_core::pipeline::{
    all_keyframe_payloads, no_rag_request, prepare_item, standard_rag_request, Backends, Engine, PreparedItem, QAItem,
    RunConfig,
};
use vsrag_core::protocol::{ChatFixture, ChatRequest, EmbedRequest, FixtureFile, LatencyModel, MockBackend};
use vsrag_core::retrieval::{Index, RawDocument};
use vsrag_core::templates::PromptTemplateSet;
use vsrag_core::verifier::{verification_request, VerifyPrompt};

pub const SHOT_COLORS: [[u8; 3]; 3] = [[220, 30, 30], [30, 220, 30], [30, 30, 220]];

/// One question over a tiny on-disk video with hand-pinned fixtures.
pub struct Scene {
    pub dir: TempDir,
    pub item: QAItem,
    pub config: RunConfig,
    pub templates: PromptTemplateSet,
    pub prepared: PreparedItem,
    pub fixtures: FixtureFile,
    pub docs: Vec<RawDocument>,
}

/// Writes `shots` solid-color shots of `per_shot` identical 16×16 frames.
pub fn write_video(dir: &std::path::Path, shots: usize, per_shot: usize) -> PathBuf {
    let frames = dir.join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    for s in 0..shots {
        for f in 0..per_shot {
            let img = image::RgbImage::from_pixel(16, 16, image::Rgb(SHOT_COLORS[s % 3]));
            img.save(frames.join(format!("f{:03}.png", s * per_shot + f))).unwrap();
        }
    }
    frames
}

/// Unit vector along axis `i` of `dim`.
pub fn axis(dim: usize, i: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// Unit vector with cosine `c` to axis 0, the rest along axis `j`.
pub fn at_cos(dim: usize, c: f32, j: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[0] = c;
    v[j] = (1.0 - c * c).sqrt();
    v
}

impl Scene {
    /// `shots` keyframes, each embedded along axis 0 of a `dim`-space.
    pub fn new(question: &str, gold: &str, shots: usize, dim: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let frame_dir = write_video(dir.path(), shots, 2);
        let item = QAItem {
            item_id: "q1".into(),
            frame_dir,
            question: question.into(),
            gold_answers: vec![gold.into()],
            tags: vec![],
        };
        let config = RunConfig::default();
        let prepared = prepare_item(&item, &config.keyframe, config.draft.max_keyframes).unwrap();
        let mut fixtures = FixtureFile::new(11).with_default_latency();
        fixtures.dim = dim;
        for p in all_keyframe_payloads(&prepared.keyframes).unwrap() {
            let literal = EmbedRequest::Image(p).fixture_literal().unwrap();
            fixtures.embed_fixtures.insert(literal, axis(dim, 0));
        }
        Self {
            dir,
            item,
            config,
            templates: PromptTemplateSet::default(),
            prepared,
            fixtures,
            docs: Vec::new(),
        }
    }

    pub fn zero_latency(mut self) -> Self {
        for lm in self.fixtures.latency.values_mut() {
            *lm = LatencyModel::ZERO;
        }
        self
    }

    pub fn add_doc(&mut self, doc_id: &str, text: &str, embedding: Vec<f32>) {
        self.docs.push(RawDocument {
            doc_id: doc_id.into(),
            text: text.into(),
            embedding,
            metadata: Default::default(),
        });
    }

    pub fn draft_context(&self) -> DraftContext<'_> {
        DraftContext::new(
            &self.item.question,
            &self.prepared.keyframes,
            &self.templates,
            self.config.draft,
        )
        .unwrap()
    }

    pub fn pin(&mut self, req: ChatRequest, fixture: ChatFixture) {
        self.fixtures.chat_fixtures.insert(req.fixture_key().unwrap(), fixture);
    }

    /// Pins the three drafter steps for `document`.
    pub fn pin_chain(&mut self, document: &str, entity: &str, rationale: &str, answer: &str) -> DraftCandidate {
        let (a, b, c) = {
            let ctx = self.draft_context();
            (
                ctx.entity_request(document).unwrap(),
                ctx.rationale_request(entity, document).unwrap(),
                ctx.answer_request(entity, rationale).unwrap(),
            )
        };
        self.pin(a, ChatFixture::text(entity));
        self.pin(b, ChatFixture::text(rationale));
        self.pin(c, ChatFixture::text(answer));
        DraftCandidate {
            ordinal: 0,
            doc_id: String::new(),
            entity: entity.into(),
            rationale: rationale.into(),
            answer: answer.into(),
            timing: StepTiming::default(),
        }
    }

    pub fn pin_verdict(&mut self, candidate: &DraftCandidate, prompt: VerifyPrompt, yes: f64, no: f64) {
        let req = verification_request(
            &self.templates,
            &self.item.question,
            &self.prepared.images,
            candidate,
            prompt,
        )
        .unwrap();
        self.pin(req, ChatFixture::verdict(yes, no));
    }

    pub fn pin_embed(&mut self, text: &str, v: Vec<f32>) {
        self.fixtures.embed_fixtures.insert(text.into(), v);
    }

    pub fn standard_request(&self, docs: &[&str]) -> ChatRequest {
        standard_rag_request(
            &self.templates,
            &self.item.question,
            &self.prepared.images,
            docs,
            self.config.draft.answer_max_tokens,
        )
        .unwrap()
    }

    pub fn no_rag_request(&self) -> ChatRequest {
        no_rag_request(
            &self.templates,
            &self.item.question,
            &self.prepared.images,
            self.config.no_rag_model,
            self.config.draft.answer_max_tokens,
        )
        .unwrap()
    }

    pub fn mock(&self) -> Arc<MockBackend> {
        Arc::new(MockBackend::new(self.fixtures.clone()).unwrap())
    }

    pub fn index(&self) -> Option<Arc<Index>> {
        (!self.docs.is_empty()).then(|| Arc::new(Index::build(self.docs.clone()).unwrap()))
    }

    pub fn engine(&self, config: RunConfig) -> (Engine, Arc<MockBackend>) {
        let mock = self.mock();
        let engine = Engine::new(
            config,
            self.templates.clone(),
            self.index(),
            Backends::shared(mock.clone()),
        )
        .unwrap();
        (engine, mock)
    }
}
