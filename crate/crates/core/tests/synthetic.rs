use std::path::Path;

use vsrag_core::pipeline::eval::{run_eval, run_sweep, summarize, sweep_configs, EvalSummary, SweepParam};
use vsrag_core::pipeline::synth::{
    generate_synthetic_corpus, SynthConfig, SynthCorpus, TAG_CLEAN, TAG_SUBSTITUTION, TAG_TRANSFER,
};
use vsrag_core::pipeline::{Dataset, Engine, Mode, RunConfig};
use vsrag_core::verifier::StrategyKind;

fn load(corpus: &SynthCorpus) -> (Engine, Dataset) {
    let cfg = RunConfig::load(&corpus.run_config).unwrap();
    let ds = Dataset::load(&corpus.manifest).unwrap();
    (Engine::from_config(cfg, &ds).unwrap(), ds)
}

fn evaluate(engine: &Engine, ds: &Dataset, edit: impl FnOnce(&mut RunConfig)) -> EvalSummary {
    let mut cfg = engine.config().clone();
    edit(&mut cfg);
    let records = run_eval(&engine.reconfigure(cfg).unwrap(), &ds.items);
    assert!(records.iter().all(|r| r.error.is_none()));
    summarize(&records).remove(0)
}

fn tag_count(items: &[vsrag_core::pipeline::QAItem], tag: &str) -> usize {
    items.iter().filter(|i| i.tags.iter().any(|t| t == tag)).count()
}

#[test]
fn tag_fractions_follow_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SynthConfig::new(3, 40);
    cfg.transfer_fraction = 0.25;
    cfg.substitution_fraction = 0.5;
    let corpus = generate_synthetic_corpus(&cfg, dir.path()).unwrap();
    assert_eq!(corpus.items.len(), 40);
    assert_eq!(tag_count(&corpus.items, TAG_TRANSFER), 10);
    assert_eq!(tag_count(&corpus.items, TAG_SUBSTITUTION), 20);
    assert_eq!(tag_count(&corpus.items, TAG_CLEAN), 10);
}

fn read(root: &Path, name: &str) -> Vec<u8> {
    std::fs::read(root.join(name)).unwrap()
}

#[test]
fn generation_is_deterministic_per_seed() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    generate_synthetic_corpus(&SynthConfig::new(5, 8), a.path()).unwrap();
    generate_synthetic_corpus(&SynthConfig::new(5, 8), b.path()).unwrap();
    generate_synthetic_corpus(&SynthConfig::new(6, 8), c.path()).unwrap();
    for f in ["fixtures.json", "docs.jsonl", "index.bin"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs for the same seed");
    }
    assert_ne!(read(a.path(), "fixtures.json"), read(c.path(), "fixtures.json"));
}

#[test]
fn tagged_items_separate_the_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic_corpus(&SynthConfig::new(7, 20), dir.path()).unwrap();
    let (engine, ds) = load(&corpus);
    let per_tag = |k: StrategyKind| {
        let s = evaluate(&engine, &ds, |c| c.verify.strategy = k);
        (
            s.per_tag[TAG_TRANSFER].accuracy,
            s.per_tag.get(TAG_SUBSTITUTION).map_or(100.0, |t| t.accuracy),
        )
    };
    // Two-stage recovers both failure patterns.
    assert_eq!(per_tag(StrategyKind::TwoStage), (100.0, 100.0));
    // Reliability alone falls for substitutions, alignment alone for transfers.
    assert_eq!(per_tag(StrategyKind::ReliabilityOnly).1, 0.0);
    assert_eq!(per_tag(StrategyKind::AlignmentOnly).0, 0.0);
}

#[test]
fn delta_sweep_yields_one_summary_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic_corpus(&SynthConfig::new(2, 10), dir.path()).unwrap();
    let (engine, ds) = load(&corpus);
    let values: Vec<String> = ["0", "0.05", "0.2"].iter().map(|s| s.to_string()).collect();
    let configs = sweep_configs(engine.config(), SweepParam::Delta, &values).unwrap();
    let records = run_sweep(&engine, &configs, &ds.items).unwrap();
    let summaries = summarize(&records);
    assert_eq!(summaries.len(), 3);
    assert!(summaries.iter().all(|s| s.item_count == 10 && s.error_count == 0));
    assert_eq!(
        summaries.iter().map(|s| s.delta.unwrap()).collect::<Vec<_>>(),
        [0.0, 0.05, 0.2]
    );
}

#[test]
fn all_clean_corpus_is_fully_correct() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SynthConfig::new(9, 10);
    cfg.transfer_fraction = 0.0;
    cfg.substitution_fraction = 0.0;
    let corpus = generate_synthetic_corpus(&cfg, dir.path()).unwrap();
    let (engine, ds) = load(&corpus);
    let s = evaluate(&engine, &ds, |_| {});
    assert_eq!((s.item_count, s.correct_count, s.accuracy), (10, 10, 100.0));
}

#[test]
fn speculation_is_faster_than_standard_rag() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic_corpus(&SynthConfig::new(4, 10), dir.path()).unwrap();
    let (engine, ds) = load(&corpus);
    let spec = evaluate(&engine, &ds, |c| c.mode = Mode::SpeculateRag);
    let std = evaluate(&engine, &ds, |c| c.mode = Mode::StandardRag);
    let none = evaluate(&engine, &ds, |c| c.mode = Mode::NoRag);
    assert!(spec.mean_latency_ms < std.mean_latency_ms);
    assert!(none.mean_latency_ms < std.mean_latency_ms);
    assert!(none.accuracy < std.accuracy);
}
