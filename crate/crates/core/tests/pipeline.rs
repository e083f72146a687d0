mod common;

use common::{at_cos, Scene};
use vsrag_core::pipeline::eval::run_eval;
use vsrag_core::pipeline::{judge_request, Engine, JudgeKind, Mode, QAItem, RunConfig};
use vsrag_core::protocol::{count_tokens, ChatFixture, ModelTag};
use vsrag_core::verifier::{StrategyKind, VerifyPrompt};

const DIM: usize = 8;

fn penguin_scene() -> Scene {
    let mut s = Scene::new("Where does this penguin live?", "Antarctica", 2, DIM);
    let emperor_doc = "The emperor penguin breeds on the sea ice of Antarctica.";
    let african_doc = "The African penguin nests on the coasts of South Africa.";
    s.add_doc("emperor", emperor_doc, at_cos(DIM, 0.9, 1));
    s.add_doc("african", african_doc, at_cos(DIM, 0.85, 2));
    let e = s.pin_chain(
        emperor_doc,
        "emperor penguin",
        "The emperor penguin breeds on Antarctic sea ice.",
        "Antarctica",
    );
    let a = s.pin_chain(
        african_doc,
        "African penguin",
        "The African penguin nests in South Africa.",
        "South Africa",
    );
    s.pin_verdict(&e, VerifyPrompt::Full, 0.9, 0.1);
    s.pin_verdict(&a, VerifyPrompt::Full, 0.2, 0.8);
    s.pin_embed("emperor penguin", at_cos(DIM, 0.7, 3));
    s.pin_embed("African penguin", at_cos(DIM, 0.7, 4));
    s
}

fn cuttlefish_scene() -> Scene {
    let mut s = Scene::new("What animal is this?", "cuttlefish", 3, DIM);
    let cuttle_doc = "The common cuttlefish changes skin color using chromatophores.";
    let squid_doc = "The squid is a fast swimming cephalopod with ten arms.";
    s.add_doc("cuttlefish", cuttle_doc, at_cos(DIM, 0.8, 1));
    s.add_doc("squid", squid_doc, at_cos(DIM, 0.9, 2));
    let c = s.pin_chain(
        cuttle_doc,
        "cuttlefish",
        "The animal has a W-shaped pupil and changes color like a cuttlefish.",
        "cuttlefish",
    );
    let q = s.pin_chain(squid_doc, "squid", "The animal has tentacles like a squid.", "squid");
    s.pin_verdict(&c, VerifyPrompt::Full, 0.92, 0.08);
    s.pin_verdict(&q, VerifyPrompt::Full, 0.95, 0.05);
    s.pin_embed("cuttlefish", at_cos(DIM, 0.8, 3));
    s.pin_embed("squid", at_cos(DIM, 0.1, 4));
    s
}

fn with_strategy(kind: StrategyKind) -> RunConfig {
    let mut c = RunConfig::default();
    c.verify.strategy = kind;
    c
}

#[test]
fn high_reliability_draft_wins_at_stage_one() {
    let s = penguin_scene();
    let (engine, _) = s.engine(RunConfig::default());
    let rec = engine.answer(&s.item);
    assert_eq!(rec.error, None);
    assert_eq!(rec.final_answer.as_deref(), Some("Antarctica"));
    assert!(rec.correct);

    let audit = rec.verification.unwrap();
    assert_eq!(audit.selected_doc_id, "emperor");
    let emperor = audit.candidates.iter().find(|c| c.doc_id == "emperor").unwrap();
    let african = audit.candidates.iter().find(|c| c.doc_id == "african").unwrap();
    assert!((emperor.reliability.unwrap() - 0.9).abs() < 1e-12);
    assert!((african.reliability.unwrap() - 0.2).abs() < 1e-12);
    assert!(emperor.in_high_set && !african.in_high_set);
    assert!((emperor.alignment.unwrap() - 0.7).abs() < 1e-6);
    assert_eq!(
        african.alignment, None,
        "alignment is only computed inside the high set"
    );
}

#[test]
fn alignment_breaks_near_ties_at_stage_two() {
    let s = cuttlefish_scene();
    let (engine, _) = s.engine(RunConfig::default());
    let rec = engine.answer(&s.item);
    assert_eq!(rec.retrieved[0].doc_id, "squid");
    let audit = rec.verification.as_ref().unwrap();
    assert!(audit.candidates.iter().all(|c| c.in_high_set));
    let align: Vec<f64> = audit.candidates.iter().map(|c| c.alignment.unwrap()).collect();
    assert!((align[0] - 0.1).abs() < 1e-6 && (align[1] - 0.8).abs() < 1e-6);
    assert_eq!(audit.selected_doc_id, "cuttlefish");
    assert_eq!(rec.final_answer.as_deref(), Some("cuttlefish"));
    assert!(rec.correct);

    let (engine, _) = s.engine(with_strategy(StrategyKind::ReliabilityOnly));
    let rec = engine.answer(&s.item);
    assert_eq!(rec.final_answer.as_deref(), Some("squid"));
    assert!(!rec.correct);
}

#[test]
fn no_rag_answers_from_the_pinned_prompt() {
    let mut s = Scene::new("Where does this penguin live?", "Antarctica", 2, DIM);
    let req = s.no_rag_request();
    s.pin(req, ChatFixture::text("Antarctica"));
    let cfg = RunConfig {
        mode: Mode::NoRag,
        ..Default::default()
    };
    let (engine, mock) = s.engine(cfg);
    assert!(engine.index().is_none());
    let rec = engine.answer(&s.item);
    assert_eq!(rec.mode, Mode::NoRag);
    assert_eq!(rec.final_answer.as_deref(), Some("Antarctica"));
    assert!(rec.correct);
    assert_eq!(rec.timing.retrieval_ms, 0.0);
    assert_eq!(rec.timing.draft_ms, 0.0);
    assert!(rec.retrieved.is_empty());
    let calls = mock.chat_calls();
    assert_eq!(calls.len(), 1);
    assert_eq!(calls[0].model_tag, ModelTag::Verifier);
}

#[test]
fn standard_rag_sends_every_document_in_rank_order_once() {
    let mut s = Scene::new("Where does this penguin live?", "Antarctica", 2, DIM);
    let texts = ["alpha doc about ice", "beta doc about sand", "gamma doc about rocks"];
    s.add_doc("b", texts[1], at_cos(DIM, 0.5, 2));
    s.add_doc("a", texts[0], at_cos(DIM, 0.9, 1));
    s.add_doc("c", texts[2], at_cos(DIM, 0.3, 3));
    let req = s.standard_request(&texts);
    s.pin(req, ChatFixture::text("Antarctica"));
    let cfg = RunConfig {
        mode: Mode::StandardRag,
        ..Default::default()
    };
    let (engine, mock) = s.engine(cfg);
    let rec = engine.answer(&s.item);
    assert_eq!(rec.error, None);
    assert_eq!(rec.final_answer.as_deref(), Some("Antarctica"));
    let ids: Vec<&str> = rec.retrieved.iter().map(|r| r.doc_id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);

    let calls = mock.chat_calls();
    assert_eq!(calls.len(), 1);
    assert_eq!(calls[0].model_tag, ModelTag::Verifier);
    let prompt = calls[0].prompt_text();
    let pos: Vec<usize> = texts.iter().map(|t| prompt.find(t).unwrap()).collect();
    assert!(pos[0] < pos[1] && pos[1] < pos[2]);

    // Latency oracle: default verifier costs 2 ms/input, 30 ms/output, 50 ms fixed.
    let expected = 50.0 + 2.0 * count_tokens(&prompt) as f64 + 30.0 * 1.0;
    assert!((rec.timing.generate_ms - expected).abs() < 1e-9);
    // Embedder: 10 ms fixed per keyframe image.
    assert!((rec.timing.retrieval_ms - 10.0 * rec.keyframe_indices.len() as f64).abs() < 1e-9);
}

#[test]
fn standard_rag_latency_grows_linearly_with_document_length() {
    let gen_ms = |words: usize| {
        let mut s = Scene::new("q?", "x", 1, DIM);
        let text = vec!["word"; words].join(" ");
        s.add_doc("d", &text, at_cos(DIM, 0.9, 1));
        let cfg = RunConfig {
            mode: Mode::StandardRag,
            ..Default::default()
        };
        let req = s.standard_request(&[&text]);
        s.pin(req, ChatFixture::text("x"));
        s.engine(cfg).0.answer(&s.item).timing.generate_ms
    };
    let (a, b, c) = (gen_ms(100), gen_ms(200), gen_ms(300));
    assert!((b - a - 200.0).abs() < 1e-9, "100 extra words at 2 ms each");
    assert!((c - b - 200.0).abs() < 1e-9);
}

#[test]
fn repeated_runs_give_identical_records() {
    for kind in StrategyKind::ALL {
        let s = cuttlefish_scene();
        let a = serde_json::to_string(&s.engine(with_strategy(kind)).0.answer(&s.item)).unwrap();
        let b = serde_json::to_string(&s.engine(with_strategy(kind)).0.answer(&s.item)).unwrap();
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn random_strategy_is_reproducible_and_seed_sensitive() {
    let s = cuttlefish_scene();
    let pick = |seed: u64| {
        let mut c = with_strategy(StrategyKind::Random);
        c.verify.rng_seed = seed;
        let rec = s.engine(c).0.answer(&s.item);
        let v = rec.verification.unwrap();
        assert!(v.rng_seed.is_some());
        v.selected_ordinal
    };
    let picks: Vec<usize> = (0..32).map(pick).collect();
    assert_eq!(picks, (0..32).map(pick).collect::<Vec<_>>());
    assert!(picks.contains(&0) && picks.contains(&1));
}

#[test]
fn simulated_total_decomposes_into_stages() {
    let s = cuttlefish_scene();
    let (engine, _) = s.engine(RunConfig::default());
    let rec = engine.answer(&s.item);
    let t = rec.timing;
    assert!(!t.wall_clock);
    let sum = t.keyframe_ms + t.retrieval_ms + t.draft_ms + t.verify_ms;
    assert!((t.simulated_total_ms - sum).abs() < 1.0);
    assert_eq!(t.total_ms, t.simulated_total_ms);
    let longest = rec.candidates.iter().map(|c| c.timing.total()).fold(0.0, f64::max);
    assert!((t.draft_ms - longest).abs() < 1e-9);
    for part in [t.keyframe_ms, t.retrieval_ms, t.draft_ms, t.verify_ms] {
        assert!(t.total_ms >= part);
    }
}

#[test]
fn wall_clock_mode_keeps_the_simulated_total() {
    let s = cuttlefish_scene();
    let virt = s.engine(RunConfig::default()).0.answer(&s.item).timing;
    let cfg = RunConfig {
        record_wall_clock: true,
        ..Default::default()
    };
    let wall = s.engine(cfg).0.answer(&s.item).timing;
    assert!(wall.wall_clock);
    assert_eq!(wall.simulated_total_ms, virt.simulated_total_ms);
    assert!(wall.total_ms < virt.total_ms, "virtual latency does not elapse");
}

#[test]
fn self_consistent_uses_the_answer_only_prompt() {
    let mut s = cuttlefish_scene();
    let c = s.pin_chain(
        "The common cuttlefish changes skin color using chromatophores.",
        "cuttlefish",
        "The animal has a W-shaped pupil and changes color like a cuttlefish.",
        "cuttlefish",
    );
    s.pin_verdict(&c, VerifyPrompt::AnswerOnly, 0.3, 0.6);
    let (engine, mock) = s.engine(with_strategy(StrategyKind::SelfConsistent));
    let rec = engine.answer(&s.item);
    let audit = rec.verification.unwrap();
    assert_eq!(audit.verify_prompt, VerifyPrompt::AnswerOnly);
    let cuttle = audit.candidates.iter().find(|c| c.doc_id == "cuttlefish").unwrap();
    assert!((cuttle.reliability.unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let verifier_prompts: Vec<String> = mock
        .chat_calls()
        .into_iter()
        .filter(|r| r.model_tag == ModelTag::Verifier)
        .map(|r| r.prompt_text())
        .collect();
    assert_eq!(verifier_prompts.len(), 2);
    assert!(verifier_prompts.iter().all(|p| !p.contains("Reasoning")));
}

#[test]
fn strategies_without_reliability_skip_the_verifier() {
    let s = cuttlefish_scene();
    for kind in [StrategyKind::AlignmentOnly, StrategyKind::Random] {
        let (engine, mock) = s.engine(with_strategy(kind));
        let rec = engine.answer(&s.item);
        assert!(rec.error.is_none());
        assert!(
            mock.chat_calls().iter().all(|r| r.model_tag == ModelTag::Drafter),
            "{kind}"
        );
        assert!(rec
            .verification
            .unwrap()
            .candidates
            .iter()
            .all(|c| c.reliability.is_none()));
    }
}

#[test]
fn item_errors_are_recorded_and_the_run_continues() {
    let s = cuttlefish_scene();
    let empty = tempfile::tempdir().unwrap();
    let broken = QAItem {
        item_id: "broken".into(),
        frame_dir: empty.path().to_path_buf(),
        question: "q?".into(),
        gold_answers: vec!["x".into()],
        tags: vec![],
    };
    let (engine, _) = s.engine(RunConfig::default());
    let recs = run_eval(&engine, &[broken, s.item.clone()]);
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].item_id, "broken");
    assert!(recs[0].error.is_some() && !recs[0].correct);
    assert!(recs[1].error.is_none() && recs[1].correct);
}

#[test]
fn all_failed_drafts_are_an_item_error() {
    let mut s = cuttlefish_scene();
    for d in s.docs.clone() {
        let req = s.draft_context().entity_request(&d.text).unwrap();
        s.pin(req, ChatFixture::failure("drafter down"));
    }
    let rec = s.engine(RunConfig::default()).0.answer(&s.item);
    assert!(rec.error.unwrap().contains("no draft"));
    assert_eq!(rec.draft_errors.len(), 0, "failures surface as the item error");
}

#[test]
fn empty_index_fails_retrieval_modes_only() {
    let s = Scene::new("q?", "x", 1, DIM);
    for (mode, fails) in [
        (Mode::StandardRag, true),
        (Mode::SpeculateRag, true),
        (Mode::NoRag, false),
    ] {
        let cfg = RunConfig {
            mode,
            ..Default::default()
        };
        let rec = s.engine(cfg).0.answer(&s.item);
        assert_eq!(rec.error.is_some(), fails, "{mode}");
    }
}

#[test]
fn model_judge_reads_the_verifier_verdict() {
    let mut s = cuttlefish_scene();
    let req = judge_request(&s.templates, "cuttlefish", &s.item.gold_answers).unwrap();
    s.pin(req, ChatFixture::verdict(0.2, 0.7));
    let cfg = RunConfig {
        judge: JudgeKind::Model,
        ..Default::default()
    };
    let rec = s.engine(cfg).0.answer(&s.item);
    assert_eq!(rec.final_answer.as_deref(), Some("cuttlefish"));
    assert!(!rec.correct, "verifier judged the match false");
}

#[test]
fn snapshot_carries_the_configuration() {
    let s = penguin_scene();
    let mut cfg = RunConfig::default();
    cfg.verify.delta = 0.1;
    cfg.retrieval.k = 2;
    let (engine, _): (Engine, _) = s.engine(cfg);
    let snap = engine.answer(&s.item).config;
    assert_eq!(snap.delta, 0.1);
    assert_eq!(snap.k, 2);
    assert_eq!(snap.theta, 0.85);
    assert_eq!(snap.bins_per_channel, 64);
    assert_eq!(snap.template_version, s.templates.version());
    assert_eq!(snap.label, "speculate_rag/two_stage/delta=0.1");
}
