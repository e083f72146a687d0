//! Synthetic misleading-document corpus.
//!
//! Every item has one correct document, one distractor about a confusable
//! entity and one unrelated filler document. The distractor's draft follows
//! one of two error patterns:
//!
//! - cross-entity transfer: the draft names the right visual entity but
//!   imports the distractor's attribute; the verifier scores it below the
//!   correct draft and the distractor outranks the correct document at
//!   retrieval.
//! - entity substitution: the draft is grounded in the distractor entity and
//!   the verifier scores it slightly above the correct draft, but its entity
//!   embedding is nearly orthogonal to the keyframes.
//!
//! Frames, embeddings and every verifier verdict are pinned in a mock
//! fixture file, so a run over the corpus is fully deterministic.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::draft::{DraftCandidate, DraftContext, StepTiming};
use crate::error::{Error, Result};
use crate::protocol::{ChatFixture, EmbedRequest, FixtureFile, MockBackend};
use crate::templates::PromptTemplateSet;
use crate::verifier::{verification_request, VerifyPrompt};

use super::config::{Backends, RunConfig};
use super::dataset::{Manifest, QAItem};
use super::{all_keyframe_payloads, build_index, no_rag_request, prepare_item, standard_rag_request, SourceDocument};

pub const TAG_TRANSFER: &str = "cross_entity_transfer";
pub const TAG_SUBSTITUTION: &str = "entity_substitution";
pub const TAG_CLEAN: &str = "clean";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub size: usize,
    pub transfer_fraction: f64,
    pub substitution_fraction: f64,
    /// Whitespace tokens per document.
    pub doc_tokens: usize,
    pub dim: usize,
    pub frames_per_item: usize,
    pub frame_size: u32,
    /// Probability that the standard-RAG baseline answers correctly.
    pub standard_rag_accuracy: f64,
    /// Probability that the no-RAG baseline answers correctly.
    pub no_rag_accuracy: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, size: usize) -> Self {
        Self {
            seed,
            size,
            transfer_fraction: 0.5,
            substitution_fraction: 0.5,
            doc_tokens: 200,
            dim: 256,
            frames_per_item: 12,
            frame_size: 32,
            standard_rag_accuracy: 0.8,
            no_rag_accuracy: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::Config("synthetic corpus size must be >= 2".into()));
        }
        let fractions = [
            self.transfer_fraction,
            self.substitution_fraction,
            self.standard_rag_accuracy,
            self.no_rag_accuracy,
        ];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
            || self.transfer_fraction + self.substitution_fraction > 1.0 + 1e-9
        {
            return Err(Error::Config(
                "synthetic fractions must lie in [0, 1] and sum to <= 1".into(),
            ));
        }
        if self.dim < 16 || self.frames_per_item < SHOTS || self.frame_size < 8 || self.doc_tokens < 20 {
            return Err(Error::Config("synthetic corpus dimensions too small".into()));
        }
        Ok(())
    }
}

/// Paths of a generated corpus.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub documents: PathBuf,
    pub index: PathBuf,
    pub fixtures: PathBuf,
    pub run_config: PathBuf,
    pub items: Vec<QAItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pattern {
    Transfer,
    Substitution,
    Clean,
}

impl Pattern {
    fn tag(self) -> &'static str {
        match self {
            Pattern::Transfer => TAG_TRANSFER,
            Pattern::Substitution => TAG_SUBSTITUTION,
            Pattern::Clean => TAG_CLEAN,
        }
    }
}

const SHOTS: usize = 3;
const SHOT_COLORS: [[u8; 3]; SHOTS] = [[200, 40, 40], [40, 200, 40], [40, 40, 200]];

const CREATURES: &[&str] = &[
    "penguin",
    "cuttlefish",
    "heron",
    "lynx",
    "otter",
    "ibis",
    "marten",
    "gecko",
    "tapir",
    "kestrel",
    "newt",
    "ocelot",
    "puffin",
    "salamander",
    "stork",
    "viper",
];
const KINDS: &[&str] = &[
    "emperor", "crested", "spotted", "giant", "dwarf", "royal", "banded", "pale", "golden", "striped", "horned", "grey",
];
const PLACES: &[&str] = &[
    "antarctica",
    "patagonia",
    "borneo",
    "madagascar",
    "iceland",
    "tasmania",
    "siberia",
    "sahara",
    "yukon",
    "andes",
    "namib",
    "svalbard",
    "sumatra",
    "camargue",
];
const FILLER_TOPICS: &[&str] = &[
    "tidal power",
    "medieval bridges",
    "copper mining",
    "glass blowing",
    "railway signals",
    "paper making",
    "orbital debris",
    "cheese caves",
];
const WORDS: &[&str] = &[
    "region",
    "season",
    "record",
    "survey",
    "observed",
    "often",
    "across",
    "during",
    "known",
    "population",
    "range",
    "records",
    "local",
    "field",
    "notes",
    "describe",
    "coastal",
    "inland",
    "early",
    "late",
    "period",
    "several",
    "groups",
    "studies",
    "report",
    "common",
    "rarely",
    "habitat",
    "winter",
    "summer",
    "nesting",
    "feeding",
    "shallow",
    "deep",
    "waters",
    "slopes",
];

/// Entity, answer and document for one side of an item.
struct Side {
    entity: String,
    answer: String,
    doc_id: String,
    text: String,
}

struct ItemPlan {
    item: QAItem,
    pattern: Pattern,
    correct: Side,
    distractor: Side,
    filler: Side,
    scene: Vec<f64>,
    /// Orthonormal directions orthogonal to `scene`, private to this item.
    basis: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gram-Schmidt: `count` orthonormal vectors, all orthogonal to `against`.
fn orthonormal(rng: &mut ChaCha8Rng, dim: usize, count: usize, against: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = gaussian(rng, dim);
        for u in against.iter().chain(out.iter()) {
            let p = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

/// `a·scene + sqrt(1 − a²)·dir`, a unit vector at cosine `a` from `scene`.
fn at_cosine(scene: &[f64], dir: &[f64], a: f64) -> Vec<f32> {
    let b = (1.0 - a * a).max(0.0).sqrt();
    scene.iter().zip(dir).map(|(s, d)| (a * s + b * d) as f32).collect()
}

fn document_text(rng: &mut ChaCha8Rng, lead: &str, tokens: usize) -> String {
    let mut words: Vec<String> = lead.split_whitespace().map(str::to_string).collect();
    while words.len() < tokens {
        words.push(WORDS[rng.random_range(0..WORDS.len())].to_string());
    }
    words.truncate(tokens.max(lead.split_whitespace().count()));
    words.join(" ")
}

fn frame_image(item_no: usize, shot: usize, size: u32) -> image::RgbImage {
    let mut img = image::RgbImage::from_pixel(size, size, image::Rgb(SHOT_COLORS[shot]));
    let code = (item_no * SHOTS + shot) as u64;
    for bit in 0..size.min(32) {
        let on = (code >> bit) & 1 == 1;
        let v = if on { 255 } else { 0 };
        img.put_pixel(bit, 0, image::Rgb([v, v, v]));
    }
    img
}

fn plan_items(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<ItemPlan> {
    let n_sub = (cfg.size as f64 * cfg.substitution_fraction).round() as usize;
    let n_tr = ((cfg.size as f64 * cfg.transfer_fraction).round() as usize).min(cfg.size - n_sub);
    let mut patterns: Vec<Pattern> = std::iter::repeat_n(Pattern::Substitution, n_sub)
        .chain(std::iter::repeat_n(Pattern::Transfer, n_tr))
        .chain(std::iter::repeat_n(Pattern::Clean, cfg.size - n_sub - n_tr))
        .collect();
    patterns.shuffle(rng);

    patterns
        .into_iter()
        .enumerate()
        .map(|(i, pattern)| {
            let no = i + 1;
            let creature = CREATURES[rng.random_range(0..CREATURES.len())];
            let kind_a = rng.random_range(0..KINDS.len());
            let kind_b = (kind_a + 1 + rng.random_range(0..KINDS.len() - 1)) % KINDS.len();
            let place_a = rng.random_range(0..PLACES.len());
            let place_b = (place_a + 1 + rng.random_range(0..PLACES.len() - 1)) % PLACES.len();
            let true_entity = format!("{} {creature} {no}", KINDS[kind_a]);
            let false_entity = format!("{} {creature} {no}", KINDS[kind_b]);
            let gold = format!("{} {no}", PLACES[place_a]);
            let wrong = format!("{} {no}", PLACES[place_b]);
            let topic = FILLER_TOPICS[rng.random_range(0..FILLER_TOPICS.len())];
            let filler_entity = format!("{topic} {no}");
            let filler_answer = format!("{topic} archive {no}");

            let item_id = format!("synth-{no:04}");
            let correct_text = document_text(
                rng,
                &format!("The {true_entity} lives mainly in {gold}."),
                cfg.doc_tokens,
            );
            let distractor_text = document_text(
                rng,
                &format!("The {false_entity} lives mainly in {wrong}."),
                cfg.doc_tokens,
            );
            let filler_text = document_text(
                rng,
                &format!("A note on {filler_entity} kept in the {filler_answer}."),
                cfg.doc_tokens,
            );

            let scene = orthonormal(rng, cfg.dim, 1, &[]).remove(0);
            let basis = orthonormal(rng, cfg.dim, SHOTS + 6, std::slice::from_ref(&scene));

            ItemPlan {
                item: QAItem {
                    item_id: item_id.clone(),
                    frame_dir: PathBuf::from(format!("frames/{item_id}")),
                    question: format!("Where does the {creature} shown in item {no} mainly live?"),
                    gold_answers: vec![gold.clone()],
                    tags: vec![pattern.tag().to_string()],
                },
                pattern,
                correct: Side {
                    entity: true_entity,
                    answer: gold,
                    doc_id: format!("{item_id}-correct"),
                    text: correct_text,
                },
                distractor: Side {
                    entity: false_entity,
                    answer: wrong,
                    doc_id: format!("{item_id}-distractor"),
                    text: distractor_text,
                },
                filler: Side {
                    entity: filler_entity,
                    answer: filler_answer,
                    doc_id: format!("{item_id}-filler"),
                    text: filler_text,
                },
                scene,
                basis,
            }
        })
        .collect()
}

/// One scripted drafter chain: the texts each step returns.
struct Chain<'a> {
    document: &'a str,
    entity: String,
    rationale: String,
    answer: String,
}

fn pin_chain(fx: &mut FixtureFile, ctx: &DraftContext<'_>, chain: &Chain<'_>) -> Result<DraftCandidate> {
    let put = |fx: &mut FixtureFile, req: crate::protocol::ChatRequest, text: &str| -> Result<()> {
        fx.chat_fixtures.insert(req.fixture_key()?, ChatFixture::text(text));
        Ok(())
    };
    put(fx, ctx.entity_request(chain.document)?, &chain.entity)?;
    put(
        fx,
        ctx.rationale_request(&chain.entity, chain.document)?,
        &chain.rationale,
    )?;
    put(fx, ctx.answer_request(&chain.entity, &chain.rationale)?, &chain.answer)?;
    Ok(DraftCandidate {
        ordinal: 0,
        doc_id: String::new(),
        entity: chain.entity.clone(),
        rationale: chain.rationale.clone(),
        answer: chain.answer.clone(),
        timing: StepTiming::default(),
    })
}

#[allow(clippy::too_many_arguments)]
fn pin_verdicts(
    fx: &mut FixtureFile,
    templates: &PromptTemplateSet,
    item: &QAItem,
    images: &[crate::protocol::ImagePayload],
    candidate: &DraftCandidate,
    reliability: f64,
    answer_only: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for (prompt, r) in [
        (VerifyPrompt::Full, reliability),
        (VerifyPrompt::AnswerOnly, answer_only),
    ] {
        let req = verification_request(templates, &item.question, images, candidate, prompt)?;
        let mass = rng.random_range(0.85..0.98);
        fx.chat_fixtures
            .insert(req.fixture_key()?, ChatFixture::verdict(r * mass, (1.0 - r) * mass));
    }
    Ok(())
}

/// Writes a corpus under `out`: frames, manifest, documents, a prebuilt
/// index, the mock fixture file and a run config pointing at it.
pub fn generate_synthetic_corpus(cfg: &SynthConfig, out: &Path) -> Result<SynthCorpus> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plans = plan_items(cfg, &mut rng);

    let mut fx = FixtureFile::new(cfg.seed).with_default_latency();
    fx.dim = cfg.dim;
    let run_cfg = RunConfig::default();
    let templates = PromptTemplateSet::default();

    // Frames, keyframe embeddings and document embeddings.
    let mut source_docs = Vec::new();
    let mut items = Vec::new();
    let mut prepared = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        let dir = out.join(&plan.item.frame_dir);
        std::fs::create_dir_all(&dir)?;
        let per_shot = cfg.frames_per_item.div_ceil(SHOTS);
        for f in 0..cfg.frames_per_item {
            let shot = (f / per_shot).min(SHOTS - 1);
            frame_image(i, shot, cfg.frame_size).save(dir.join(format!("frame_{f:04}.png")))?;
        }
        let mut item = plan.item.clone();
        item.frame_dir = dir;
        let prep = prepare_item(&item, &run_cfg.keyframe, run_cfg.draft.max_keyframes)?;
        let payloads = all_keyframe_payloads(&prep.keyframes)?;
        for (j, p) in payloads.iter().enumerate() {
            let v = at_cosine(&plan.scene, &plan.basis[j % SHOTS], 0.9);
            fx.embed_fixtures
                .insert(EmbedRequest::Image(p.clone()).fixture_literal()?, v);
        }

        let b = &plan.basis;
        let (c_sim, d_sim) = match plan.pattern {
            Pattern::Transfer => (0.80, 0.85),
            _ if rng.random_bool(0.5) => (0.85, 0.80),
            _ => (0.80, 0.85),
        };
        for (side, v) in [
            (&plan.correct, at_cosine(&plan.scene, &b[SHOTS], c_sim)),
            (&plan.distractor, at_cosine(&plan.scene, &b[SHOTS + 1], d_sim)),
            (&plan.filler, at_cosine(&plan.scene, &b[SHOTS + 2], 0.5)),
        ] {
            fx.embed_fixtures.insert(side.text.clone(), v);
            source_docs.push(SourceDocument {
                doc_id: side.doc_id.clone(),
                text: side.text.clone(),
                embedding: None,
                metadata: [("item_id".to_string(), plan.item.item_id.clone())].into(),
            });
        }
        fx.embed_fixtures
            .insert(plan.correct.entity.clone(), at_cosine(&plan.scene, &b[SHOTS + 3], 0.9));
        fx.embed_fixtures.insert(
            plan.distractor.entity.clone(),
            at_cosine(&plan.scene, &b[SHOTS + 4], 0.15),
        );
        fx.embed_fixtures
            .insert(plan.filler.entity.clone(), at_cosine(&plan.scene, &b[SHOTS + 5], 0.0));
        items.push(item);
        prepared.push(prep);
    }

    // Index built through the embedder exactly as `index build` would.
    let mock = Arc::new(MockBackend::new(fx.clone())?);
    let backends = Backends::shared(mock.clone());
    let index = build_index(
        source_docs.clone(),
        backends.embedder.as_ref(),
        1,
        run_cfg.keyframe.bins_per_channel as u32,
    )?;

    // Drafter chains, verifier verdicts and baseline answers.
    for ((plan, item), prep) in plans.iter().zip(&items).zip(&prepared) {
        let ctx = DraftContext::new(&item.question, &prep.keyframes, &templates, run_cfg.draft)?;
        let (c, d, f) = (&plan.correct, &plan.distractor, &plan.filler);

        let correct = pin_chain(
            &mut fx,
            &ctx,
            &Chain {
                document: &c.text,
                entity: c.entity.clone(),
                rationale: format!("The document says the {} lives mainly in {}.", c.entity, c.answer),
                answer: c.answer.clone(),
            },
        )?;
        let distractor_chain = match plan.pattern {
            Pattern::Transfer => Chain {
                document: &d.text,
                entity: c.entity.clone(),
                rationale: format!(
                    "The video shows the {} and the document places it in {}.",
                    c.entity, d.answer
                ),
                answer: d.answer.clone(),
            },
            Pattern::Substitution | Pattern::Clean => Chain {
                document: &d.text,
                entity: d.entity.clone(),
                rationale: format!("The document says the {} lives mainly in {}.", d.entity, d.answer),
                answer: d.answer.clone(),
            },
        };
        let distractor = pin_chain(&mut fx, &ctx, &distractor_chain)?;
        let filler = pin_chain(
            &mut fx,
            &ctx,
            &Chain {
                document: &f.text,
                entity: f.entity.clone(),
                rationale: format!("The document only discusses {}.", f.entity),
                answer: f.answer.clone(),
            },
        )?;

        let r_c: f64 = rng.random_range(0.85..=0.95);
        let r_d = match plan.pattern {
            Pattern::Substitution => (r_c + rng.random_range(0.005..0.04f64)).min(0.999),
            Pattern::Transfer => r_c - rng.random_range(0.08..0.18),
            Pattern::Clean => rng.random_range(0.1..=0.4),
        };
        let r_f = rng.random_range(0.1..=0.3);
        let images = &ctx.images;
        let ao_c = rng.random_range(0.5..0.9);
        let ao_d = rng.random_range(0.5..0.9);
        let ao_f = rng.random_range(0.1..0.4);
        pin_verdicts(&mut fx, &templates, item, images, &correct, r_c, ao_c, &mut rng)?;
        pin_verdicts(&mut fx, &templates, item, images, &distractor, r_d, ao_d, &mut rng)?;
        pin_verdicts(&mut fx, &templates, item, images, &filler, r_f, ao_f, &mut rng)?;

        let (vectors, _) =
            super::embed_images(&all_keyframe_payloads(&prep.keyframes)?, backends.embedder.as_ref(), 1)?;
        let hits = index.retrieve(&vectors, run_cfg.retrieval.k, run_cfg.retrieval.mode())?;
        let docs: Vec<&str> = hits.iter().map(|h| h.doc.text.as_str()).collect();
        let std_req = standard_rag_request(
            &templates,
            &item.question,
            images,
            &docs,
            run_cfg.draft.answer_max_tokens,
        )?;
        let std_answer = if rng.random_bool(cfg.standard_rag_accuracy) {
            &c.answer
        } else {
            &d.answer
        };
        fx.chat_fixtures
            .insert(std_req.fixture_key()?, ChatFixture::text(std_answer.clone()));

        let no_req = no_rag_request(
            &templates,
            &item.question,
            images,
            run_cfg.no_rag_model,
            run_cfg.draft.answer_max_tokens,
        )?;
        let no_answer = if rng.random_bool(cfg.no_rag_accuracy) {
            &c.answer
        } else {
            &d.answer
        };
        fx.chat_fixtures
            .insert(no_req.fixture_key()?, ChatFixture::text(no_answer.clone()));
    }

    // Outputs.
    let fixtures = out.join("fixtures.json");
    fx.save(&fixtures)?;

    let documents = out.join("docs.jsonl");
    let mut doc_lines = Vec::new();
    for d in &source_docs {
        serde_json::to_writer(&mut doc_lines, d)?;
        doc_lines.push(b'\n');
    }
    std::fs::write(&documents, doc_lines)?;

    let index_path = out.join("index.bin");
    index.write_binary(std::io::BufWriter::new(std::fs::File::create(&index_path)?))?;

    let manifest = Manifest {
        items: plans.iter().map(|p| p.item.clone()).collect(),
        documents: Some(PathBuf::from("docs.jsonl")),
        index: Some(PathBuf::from("index.bin")),
    };
    let manifest_path = out.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;

    let mut run = RunConfig::default();
    let endpoint = Some("mock:fixtures.json".to_string());
    run.endpoints.drafter = endpoint.clone();
    run.endpoints.verifier = endpoint.clone();
    run.endpoints.embedder = endpoint;
    let run_config = out.join("run.toml");
    std::fs::write(&run_config, run.to_toml())?;

    Ok(SynthCorpus {
        root: out.to_path_buf(),
        manifest: manifest_path,
        documents,
        index: index_path,
        fixtures,
        run_config,
        items,
    })
}
