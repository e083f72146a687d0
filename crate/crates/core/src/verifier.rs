//! Two-stage verification and the alternative selection strategies.
//!
//! Stage one asks the verifier whether each draft's reasoning supports its
//! answer and turns the first-token Yes/No probabilities into a reliability
//! score. Candidates within `delta` of the best reliability form the
//! high-reliability set. Stage two picks, inside that set, the candidate
//! whose extracted entity best matches any keyframe in embedding space.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::draft::DraftCandidate;
use crate::error::{Error, Result};
use crate::protocol::{ChatRequest, EmbedRequest, ImagePayload, InferenceBackend, ModelTag, TokenProb};
use crate::retrieval::{cosine_similarity, EmbeddingVector};
use crate::templates::{PromptTemplateSet, TemplateKind};

pub const DEFAULT_DELTA: f64 = 0.05;
/// Grid swept by the harness.
pub const DELTA_SWEEP: [f64; 5] = [0.0, 0.01, 0.05, 0.1, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    TwoStage,
    ReliabilityOnly,
    AlignmentOnly,
    Addition,
    Invert,
    SelfConsistent,
    Random,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::TwoStage,
        StrategyKind::ReliabilityOnly,
        StrategyKind::AlignmentOnly,
        StrategyKind::Addition,
        StrategyKind::Invert,
        StrategyKind::SelfConsistent,
        StrategyKind::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::TwoStage => "two_stage",
            StrategyKind::ReliabilityOnly => "reliability_only",
            StrategyKind::AlignmentOnly => "alignment_only",
            StrategyKind::Addition => "addition",
            StrategyKind::Invert => "invert",
            StrategyKind::SelfConsistent => "self_consistent",
            StrategyKind::Random => "random",
        }
    }

    pub fn uses_delta(self) -> bool {
        matches!(self, StrategyKind::TwoStage | StrategyKind::Invert)
    }

    /// Whether the strategy reads reliability scores at all.
    pub fn needs_reliability(self) -> bool {
        !matches!(self, StrategyKind::AlignmentOnly | StrategyKind::Random)
    }

    pub fn needs_alignment(self) -> bool {
        matches!(
            self,
            StrategyKind::TwoStage | StrategyKind::AlignmentOnly | StrategyKind::Addition | StrategyKind::Invert
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionStrategy {
    pub kind: StrategyKind,
    pub delta: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for SelectionStrategy {
    fn default() -> Self {
        Self {
            kind: StrategyKind::TwoStage,
            delta: DEFAULT_DELTA,
            rng_seed: 0,
        }
    }
}

impl SelectionStrategy {
    pub fn new(kind: StrategyKind, delta: f64) -> Self {
        Self {
            kind,
            delta,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta must be >= 0, got {}", self.delta)));
        }
        Ok(())
    }
}

/// Probability mass of Yes and No among the first-token candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YesNo {
    pub p_yes: f64,
    pub p_no: f64,
}

impl YesNo {
    /// Sums every token that equals "yes" / "no" case-insensitively after
    /// stripping leading whitespace. `None` when neither appears.
    pub fn from_distribution(dist: &[TokenProb]) -> Option<Self> {
        let mut p_yes = 0.0;
        let mut p_no = 0.0;
        let mut seen = false;
        for t in dist {
            let tok = t.token.trim_start();
            if tok.eq_ignore_ascii_case("yes") {
                p_yes += t.prob;
                seen = true;
            } else if tok.eq_ignore_ascii_case("no") {
                p_no += t.prob;
                seen = true;
            }
        }
        seen.then_some(Self { p_yes, p_no })
    }

    /// `p_yes / (p_yes + p_no)`, or 0.5 when both are zero.
    pub fn reliability(&self) -> f64 {
        let total = self.p_yes + self.p_no;
        if total > 0.0 {
            self.p_yes / total
        } else {
            0.5
        }
    }
}

/// Which verification prompt to send.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyPrompt {
    /// Question, entity, rationale and answer.
    Full,
    /// Question and answer only.
    AnswerOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityOutcome {
    pub p_yes: f64,
    pub p_no: f64,
    pub reliability: f64,
    /// Neither token appeared; reliability fell back to 0.5.
    pub unscored: bool,
    pub simulated_ms: f64,
}

pub fn verification_request(
    templates: &PromptTemplateSet,
    question: &str,
    images: &[ImagePayload],
    candidate: &DraftCandidate,
    prompt: VerifyPrompt,
) -> Result<ChatRequest> {
    let text = match prompt {
        VerifyPrompt::Full => templates.render(
            TemplateKind::Verify,
            &[
                ("question", question),
                ("entity", &candidate.entity),
                ("rationale", &candidate.rationale),
                ("answer", &candidate.answer),
            ],
        )?,
        VerifyPrompt::AnswerOnly => templates.render(
            TemplateKind::VerifyAnswerOnly,
            &[("question", question), ("answer", &candidate.answer)],
        )?,
    };
    Ok(ChatRequest::new(ModelTag::Verifier, text, 1)
        .with_images(images.to_vec())
        .with_first_token_distribution())
}

/// One single-token verifier call.
pub fn reliability_score(
    templates: &PromptTemplateSet,
    question: &str,
    images: &[ImagePayload],
    candidate: &DraftCandidate,
    prompt: VerifyPrompt,
    backend: &dyn InferenceBackend,
) -> Result<ReliabilityOutcome> {
    let req = verification_request(templates, question, images, candidate, prompt)?;
    let resp = backend.chat(&req)?;
    let dist = resp.first_token_distribution.unwrap_or_default();
    Ok(match YesNo::from_distribution(&dist) {
        Some(yn) => ReliabilityOutcome {
            p_yes: yn.p_yes,
            p_no: yn.p_no,
            reliability: yn.reliability(),
            unscored: false,
            simulated_ms: resp.wall_time_ms,
        },
        None => ReliabilityOutcome {
            p_yes: 0.0,
            p_no: 0.0,
            reliability: 0.5,
            unscored: true,
            simulated_ms: resp.wall_time_ms,
        },
    })
}

/// Membership mask of candidates with reliability ≥ max − delta.
pub fn high_reliability_set(reliabilities: &[f64], delta: f64) -> Vec<bool> {
    let best = reliabilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    reliabilities.iter().map(|&r| r >= best - delta).collect()
}

/// Max cosine similarity between an entity embedding and the keyframes.
pub fn alignment_score(entity: &EmbeddingVector, keyframes: &[EmbeddingVector]) -> Result<f64> {
    if keyframes.is_empty() {
        return Err(Error::InvalidInput("alignment needs at least one keyframe".into()));
    }
    keyframes
        .iter()
        .map(|k| cosine_similarity(entity, k))
        .try_fold(f64::NEG_INFINITY, |best, s| Ok(best.max(s?)))
}

/// Embeds `entity` and scores it against cached keyframe embeddings.
/// Returns (alignment, simulated embed time).
pub fn embed_and_align(
    entity: &str,
    keyframes: &[EmbeddingVector],
    backend: &dyn InferenceBackend,
) -> Result<(f64, f64)> {
    if entity.trim().is_empty() {
        return Err(Error::InvalidInput("candidate entity is empty".into()));
    }
    let resp = backend.embed(&EmbedRequest::Text(entity.to_string()))?;
    let v = EmbeddingVector::normalized(&resp.vector)
        .ok_or_else(|| Error::InvalidInput(format!("zero embedding for entity {entity:?}")))?;
    Ok((alignment_score(&v, keyframes)?, resp.wall_time_ms))
}

/// One candidate's scores as seen by [`select_final`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub ordinal: usize,
    pub reliability: f64,
    pub alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Position in the input slice.
    pub index: usize,
    pub ordinal: usize,
    /// Reliability-based high set (A_H) for the strategy's delta.
    pub in_high_set: Vec<bool>,
    /// Candidates that survived the strategy's filter stage, if it has one.
    pub passed_filter: Vec<bool>,
    /// Score each candidate was ranked by in the final argmax.
    pub combined: Vec<Option<f64>>,
}

/// Index of the max `key` among `eligible`, ties to lowest ordinal.
fn argmax_by(rows: &[ScoreRow], eligible: &[bool], key: impl Fn(usize) -> f64) -> usize {
    let mut best: Option<usize> = None;
    for (i, row) in rows.iter().enumerate() {
        if !eligible[i] {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let (kb, ki) = (key(b), key(i));
                if ki > kb || (ki == kb && row.ordinal < rows[b].ordinal) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.expect("at least one eligible candidate")
}

pub fn select_final(rows: &[ScoreRow], strategy: &SelectionStrategy) -> Result<Selection> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("select_final needs at least one candidate".into()));
    }
    strategy.validate()?;
    let all = vec![true; rows.len()];
    let reliabilities: Vec<f64> = rows.iter().map(|r| r.reliability).collect();
    let in_high_set = high_reliability_set(&reliabilities, strategy.delta);

    let (passed_filter, combined): (Vec<bool>, Vec<Option<f64>>) = match strategy.kind {
        StrategyKind::TwoStage => (
            in_high_set.clone(),
            rows.iter()
                .zip(&in_high_set)
                .map(|(r, &h)| h.then_some(r.alignment))
                .collect(),
        ),
        StrategyKind::ReliabilityOnly | StrategyKind::SelfConsistent => {
            (all.clone(), rows.iter().map(|r| Some(r.reliability)).collect())
        }
        StrategyKind::AlignmentOnly => (all.clone(), rows.iter().map(|r| Some(r.alignment)).collect()),
        StrategyKind::Addition => (
            all.clone(),
            rows.iter().map(|r| Some(r.reliability + r.alignment)).collect(),
        ),
        StrategyKind::Invert => {
            let alignments: Vec<f64> = rows.iter().map(|r| r.alignment).collect();
            let keep = high_reliability_set(&alignments, strategy.delta);
            let combined = rows
                .iter()
                .zip(&keep)
                .map(|(r, &k)| k.then_some(r.reliability))
                .collect();
            (keep, combined)
        }
        StrategyKind::Random => (all.clone(), vec![None; rows.len()]),
    };

    let index = if strategy.kind == StrategyKind::Random {
        ChaCha8Rng::seed_from_u64(strategy.rng_seed).random_range(0..rows.len())
    } else {
        argmax_by(rows, &passed_filter, |i| combined[i].unwrap_or(f64::NEG_INFINITY))
    };

    Ok(Selection {
        index,
        ordinal: rows[index].ordinal,
        in_high_set,
        passed_filter,
        combined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(rel: &[f64], ali: &[f64]) -> Vec<ScoreRow> {
        rel.iter()
            .zip(ali)
            .enumerate()
            .map(|(i, (&reliability, &alignment))| ScoreRow {
                ordinal: i,
                reliability,
                alignment,
            })
            .collect()
    }

    fn tp(token: &str, prob: f64) -> TokenProb {
        TokenProb {
            token: token.into(),
            prob,
        }
    }

    #[test]
    fn reliability_examples() {
        let r = |d: &[TokenProb]| YesNo::from_distribution(d).unwrap().reliability();
        assert_eq!(r(&[tp("Yes", 0.8), tp("No", 0.2)]), 0.8);
        assert_eq!(r(&[tp("Yes", 0.5), tp("No", 0.5)]), 0.5);
        let yn =
            YesNo::from_distribution(&[tp(" yes", 0.30), tp("Yes", 0.15), tp("No", 0.05), tp("no", 0.05)]).unwrap();
        assert!((yn.p_yes - 0.45).abs() < 1e-12 && (yn.p_no - 0.10).abs() < 1e-12);
        assert!((yn.reliability() - 0.45 / 0.55).abs() < 1e-12);
    }

    #[test]
    fn non_matching_tokens_are_ignored() {
        assert_eq!(YesNo::from_distribution(&[tp("Maybe", 0.9), tp("yes!", 0.1)]), None);
        let yn = YesNo::from_distribution(&[tp("Yess", 0.5), tp("NO", 0.2)]).unwrap();
        assert_eq!((yn.p_yes, yn.p_no), (0.0, 0.2));
        assert_eq!(yn.reliability(), 0.0);
    }

    #[test]
    fn high_set_examples() {
        assert_eq!(high_reliability_set(&[0.9, 0.87, 0.5], 0.05), [true, true, false]);
        assert_eq!(high_reliability_set(&[0.9, 0.87, 0.5], 0.0), [true, false, false]);
        assert_eq!(high_reliability_set(&[0.4; 4], 0.0), [true; 4]);
    }

    #[test]
    fn alignment_is_max_over_keyframes() {
        let e = EmbeddingVector::normalized(&[1.0, 0.0, 0.0]).unwrap();
        let kf = |c: f32| EmbeddingVector::normalized(&[c, (1.0 - c * c).sqrt(), 0.0]).unwrap();
        let a = alignment_score(&e, &[kf(0.3), kf(0.72), kf(0.5)]).unwrap();
        assert!((a - 0.72).abs() < 1e-6);
        assert!(alignment_score(&e, &[]).is_err());
    }

    #[test]
    fn two_stage_examples() {
        let s = SelectionStrategy::new(StrategyKind::TwoStage, 0.05);
        assert_eq!(select_final(&rows(&[0.9, 0.88], &[0.3, 0.7]), &s).unwrap().ordinal, 1);
        let sel = select_final(&rows(&[0.9, 0.5], &[0.3, 0.99]), &s).unwrap();
        assert_eq!(sel.ordinal, 0);
        assert_eq!(sel.in_high_set, [true, false]);
    }

    #[test]
    fn single_candidate_always_selected() {
        let one = rows(&[0.1], &[-0.3]);
        for kind in StrategyKind::ALL {
            let s = SelectionStrategy::new(kind, 0.05);
            assert_eq!(select_final(&one, &s).unwrap().index, 0, "{kind}");
        }
    }

    #[test]
    fn ties_go_to_lowest_ordinal() {
        let mut r = rows(&[0.7, 0.7, 0.7], &[0.5, 0.5, 0.5]);
        r.reverse();
        for kind in [
            StrategyKind::TwoStage,
            StrategyKind::ReliabilityOnly,
            StrategyKind::Addition,
        ] {
            let sel = select_final(&r, &SelectionStrategy::new(kind, 0.0)).unwrap();
            assert_eq!(sel.ordinal, 0);
            assert_eq!(sel.index, 2);
        }
    }

    #[test]
    fn invert_filters_by_alignment_first() {
        let s = SelectionStrategy::new(StrategyKind::Invert, 0.05);
        let sel = select_final(&rows(&[0.95, 0.6, 0.7], &[0.2, 0.9, 0.88]), &s).unwrap();
        assert_eq!(sel.passed_filter, [false, true, true]);
        assert_eq!(sel.ordinal, 2);
    }

    #[test]
    fn random_is_seeded() {
        let r = rows(&[0.1, 0.2, 0.3, 0.4, 0.5], &[0.0; 5]);
        let pick = |seed| {
            select_final(
                &r,
                &SelectionStrategy {
                    kind: StrategyKind::Random,
                    delta: 0.0,
                    rng_seed: seed,
                },
            )
            .unwrap()
            .index
        };
        assert_eq!(pick(11), pick(11));
        let distinct: std::collections::BTreeSet<_> = (0..64).map(pick).collect();
        assert!(distinct.len() > 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(select_final(&[], &SelectionStrategy::default()).is_err());
        let s = SelectionStrategy::new(StrategyKind::TwoStage, -0.1);
        assert!(select_final(&rows(&[0.5], &[0.5]), &s).is_err());
    }

    #[test]
    fn strategy_names_parse() {
        for k in StrategyKind::ALL {
            assert_eq!(k.as_str().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("best".parse::<StrategyKind>().is_err());
    }
}
