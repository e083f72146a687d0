//! Batch evaluation, per-configuration summaries and parameter sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::fan_out;
use crate::verifier::StrategyKind;

use super::config::{Mode, RunConfig};
use super::dataset::QAItem;
use super::record::RunRecord;
use super::Engine;

/// Answers every item, at most `item_parallel` at a time. Records come
/// back in item order.
pub fn run_eval(engine: &Engine, items: &[QAItem]) -> Vec<RunRecord> {
    fan_out(items, engine.config().item_parallel, |_, item| engine.answer(item))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagAccuracy {
    pub item_count: usize,
    pub correct_count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub label: String,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub item_count: usize,
    pub correct_count: usize,
    pub error_count: usize,
    /// Percent correct; errored items count as incorrect.
    pub accuracy: f64,
    /// Mean simulated per-item latency.
    pub mean_latency_ms: f64,
    /// Mean reported total (wall-clock when the run measured it).
    pub mean_total_ms: f64,
    pub per_tag: BTreeMap<String, TagAccuracy>,
}

fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

/// One summary per configuration label, in order of first appearance.
pub fn summarize(records: &[RunRecord]) -> Vec<EvalSummary> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let label = r.config.label.clone();
        if !groups.contains_key(&label) {
            order.push(label.clone());
        }
        groups.entry(label).or_default().push(r);
    }
    order
        .into_iter()
        .map(|label| {
            let rs = &groups[&label];
            let first = rs[0];
            let n = rs.len();
            let correct = rs.iter().filter(|r| r.correct).count();
            let mut per_tag: BTreeMap<String, (usize, usize)> = BTreeMap::new();
            for r in rs {
                for t in &r.tags {
                    let e = per_tag.entry(t.clone()).or_default();
                    e.0 += 1;
                    e.1 += r.correct as usize;
                }
            }
            let speculate = first.mode == Mode::SpeculateRag;
            EvalSummary {
                label: label.clone(),
                mode: first.mode,
                strategy: speculate.then_some(first.config.strategy),
                delta: (speculate && first.config.strategy.uses_delta()).then_some(first.config.delta),
                item_count: n,
                correct_count: correct,
                error_count: rs.iter().filter(|r| r.error.is_some()).count(),
                accuracy: percent(correct, n),
                mean_latency_ms: rs.iter().map(|r| r.timing.simulated_total_ms).sum::<f64>() / n as f64,
                mean_total_ms: rs.iter().map(|r| r.timing.total_ms).sum::<f64>() / n as f64,
                per_tag: per_tag
                    .into_iter()
                    .map(|(t, (items, ok))| {
                        (
                            t,
                            TagAccuracy {
                                item_count: items,
                                correct_count: ok,
                                accuracy: percent(ok, items),
                            },
                        )
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Fixed-column text table.
pub fn format_table(summaries: &[EvalSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<40} {:>6} {:>8} {:>7} {:>10} {:>16}",
        "config", "items", "correct", "errors", "accuracy", "mean_latency_ms"
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{:<40} {:>6} {:>8} {:>7} {:>10.2} {:>16.1}",
            s.label, s.item_count, s.correct_count, s.error_count, s.accuracy, s.mean_latency_ms
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Delta,
    Strategy,
    Mode,
    Theta,
    K,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "delta" => SweepParam::Delta,
            "strategy" => SweepParam::Strategy,
            "mode" => SweepParam::Mode,
            "theta" => SweepParam::Theta,
            "k" => SweepParam::K,
            _ => return Err(Error::Config(format!("unknown sweep parameter {s:?}"))),
        })
    }
}

fn parse_num<T: std::str::FromStr>(param: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad {param} value {v:?}")))
}

/// One config per value, each a copy of `base` with `param` replaced.
pub fn sweep_configs(base: &RunConfig, param: SweepParam, values: &[String]) -> Result<Vec<RunConfig>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|v| {
            let mut c = base.clone();
            match param {
                SweepParam::Delta => c.verify.delta = parse_num("delta", v)?,
                SweepParam::Strategy => c.verify.strategy = v.trim().parse()?,
                SweepParam::Mode => c.mode = v.trim().parse()?,
                SweepParam::Theta => c.keyframe.theta = parse_num("theta", v)?,
                SweepParam::K => c.retrieval.k = parse_num("k", v)?,
            }
            c.validate()?;
            Ok(c)
        })
        .collect()
}

/// Runs every sweep cell over the same items. Records are grouped by cell,
/// cells in value order.
pub fn run_sweep(engine: &Engine, configs: &[RunConfig], items: &[QAItem]) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for c in configs {
        let cell = engine.reconfigure(c.clone())?;
        out.extend(run_eval(&cell, items));
    }
    Ok(out)
}
