//! Pairwise ranking percentage.
//!
//! For one example and one layer, the matching pair (anchor, positive) gets
//! a score, and so does the anchor against every un-matching paragraph
//! word. A negative counts when it is strictly worse than the positive;
//! ties go to the negative. Counts are micro-averaged over a dataset.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{BankError, EmbeddingBank};
use crate::corpus::Side;
use crate::probe::{enumerate_negatives, ProbeError, ProbeExample, Task};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("zero vector: cosine similarity is undefined")]
    ZeroVector,
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error("aggregate denominator is zero (every pair was skipped)")]
    ZeroDenominator,
    #[error("{} probe example(s) missing from the bank: {}", .0.len(), .0.join(", "))]
    IdMismatch(Vec<String>),
    #[error("example {id}: bank holds {bank} {side} words, probe has {probe}")]
    WordCountMismatch {
        id: String,
        side: Side,
        bank: usize,
        probe: usize,
    },
    #[error("probe file mixes tasks: {0}")]
    MixedTasks(String),
    #[error(transparent)]
    Bank(#[from] BankError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// Larger is more similar.
    Cosine,
    /// Smaller is more similar.
    Euclidean,
    /// Dot product, larger ranks higher. Boundary curves carry this tag
    /// because they rank linear-probe logits.
    Logit,
}

impl Scorer {
    pub fn score(&self, u: &[f64], v: &[f64]) -> Result<f64, MetricError> {
        match self {
            Scorer::Cosine => cosine_sim(u, v),
            Scorer::Euclidean => Ok(euclidean_dist(u, v)),
            Scorer::Logit => Ok(u.iter().zip(v).map(|(a, b)| a * b).sum()),
        }
    }

    /// Whether a negative scoring `neg` ranks strictly below a positive
    /// scoring `pos`.
    pub fn strictly_worse(&self, neg: f64, pos: f64) -> bool {
        match self {
            Scorer::Cosine | Scorer::Logit => neg < pos,
            Scorer::Euclidean => neg > pos,
        }
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scorer::Cosine => "cosine",
            Scorer::Euclidean => "euclidean",
            Scorer::Logit => "logit",
        })
    }
}

impl FromStr for Scorer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cosine" => Ok(Scorer::Cosine),
            "euclidean" => Ok(Scorer::Euclidean),
            "logit" => Ok(Scorer::Logit),
            other => Err(format!("unknown scorer '{other}'")),
        }
    }
}

/// Divisor used when turning counts into a percentage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenominatorMode {
    /// Σ num_negatives; a perfect layer scores 1.0.
    #[default]
    Negatives,
    /// Σ para_len, as the metric is usually written. Cannot reach 1.0.
    LiteralParaLen,
}

impl fmt::Display for DenominatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DenominatorMode::Negatives => "negatives",
            DenominatorMode::LiteralParaLen => "literal_para_len",
        })
    }
}

impl FromStr for DenominatorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "negatives" => Ok(DenominatorMode::Negatives),
            "literal_para_len" | "literal" | "para_len" => Ok(DenominatorMode::LiteralParaLen),
            other => Err(format!("unknown denominator mode '{other}'")),
        }
    }
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, MetricError> {
    debug_assert_eq!(u.len(), v.len());
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok((dot / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

pub fn euclidean_dist(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Counts for one example at one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub example_id: String,
    /// Negatives ranked strictly below the matching pair.
    pub example_count: u64,
    /// Negatives actually scored (skipped zero-vector pairs excluded).
    pub num_negatives: u64,
    pub para_len: u64,
    /// Pairs dropped because cosine was undefined.
    pub skipped_pairs: u64,
}

/// Counts one example given the matching-pair score and the negative
/// scores. `None` marks a negative that could not be scored.
pub fn count_example(
    example_id: &str,
    scorer: Scorer,
    pos: f64,
    negatives: impl IntoIterator<Item = Option<f64>>,
    para_len: usize,
) -> ExampleScore {
    let mut score = ExampleScore {
        example_id: example_id.to_string(),
        example_count: 0,
        num_negatives: 0,
        para_len: para_len as u64,
        skipped_pairs: 0,
    };
    for neg in negatives {
        match neg {
            Some(neg) => {
                score.num_negatives += 1;
                if scorer.strictly_worse(neg, pos) {
                    score.example_count += 1;
                }
            }
            None => score.skipped_pairs += 1,
        }
    }
    score
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Scores one probe at one layer. A zero vector on the matching pair fails
/// the example with [`MetricError::ZeroVector`]; on a negative it skips
/// only that pair.
pub fn score_example(
    probe: &ProbeExample,
    bank: &EmbeddingBank,
    layer: usize,
    scorer: Scorer,
) -> Result<ExampleScore, MetricError> {
    let negatives = enumerate_negatives(probe)?;
    let id = probe.example_id.as_str();
    let anchor = bank.span_vector(id, layer, probe.anchor_side, probe.anchor_span)?;
    let positive = bank.span_vector(id, layer, Side::Paragraph, probe.positive_span)?;
    let pos = scorer.score(&anchor, &positive)?;
    let mut neg_scores = Vec::with_capacity(negatives.len());
    for i in negatives {
        let v = widen(bank.word_vector(id, layer, Side::Paragraph, i)?);
        neg_scores.push(match scorer.score(&anchor, &v) {
            Ok(s) => Some(s),
            Err(MetricError::ZeroVector) => None,
            Err(e) => return Err(e),
        });
    }
    Ok(count_example(id, scorer, pos, neg_scores, probe.para_len))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: u64,
    pub denominator: u64,
    pub percentage: f64,
}

/// Micro-average: Σ example_count over Σ num_negatives (or Σ para_len).
pub fn aggregate(scores: &[ExampleScore], mode: DenominatorMode) -> Result<Aggregate, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let count: u64 = scores.iter().map(|s| s.example_count).sum();
    let denominator: u64 = scores
        .iter()
        .map(|s| match mode {
            DenominatorMode::Negatives => s.num_negatives,
            DenominatorMode::LiteralParaLen => s.para_len,
        })
        .sum();
    if denominator == 0 {
        return Err(MetricError::ZeroDenominator);
    }
    Ok(Aggregate {
        count,
        denominator,
        percentage: count as f64 / denominator as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPoint {
    pub layer: usize,
    pub count: u64,
    pub denominator: u64,
    pub percentage: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Zero-vector negatives skipped, summed over layers.
    pub skipped_pairs: u64,
    /// (example, layer) cells dropped because the matching pair had a zero
    /// vector.
    pub skipped_examples: u64,
    /// Probe ids absent from the bank.
    pub missing_ids: Vec<String>,
}

/// Which boundary head a curve describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveTarget {
    Start,
    End,
    Mean,
}

/// Per-layer pairwise ranking percentages for one (model, task, scorer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRankingCurve {
    pub model_tag: String,
    pub task: Task,
    pub scorer: Scorer,
    pub mode: DenominatorMode,
    pub has_layer0: bool,
    /// Set on boundary curves, whose scores come from a trained probe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<CurveTarget>,
    #[serde(default)]
    pub trained_probe: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub layers: Vec<LayerPoint>,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

impl LayerRankingCurve {
    pub fn percentages(&self) -> Vec<f64> {
        self.layers.iter().map(|p| p.percentage).collect()
    }

    pub fn point(&self, layer: usize) -> Option<&LayerPoint> {
        self.layers.iter().find(|p| p.layer == layer)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("curve serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// What to do with probe ids the bank does not contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    #[default]
    Skip,
    Abort,
}

fn check_word_counts(probe: &ProbeExample, bank: &EmbeddingBank) -> Result<(), MetricError> {
    let entry = bank.entry(&probe.example_id)?;
    let mismatch = |side, bank, probe| MetricError::WordCountMismatch {
        id: entry.id.clone(),
        side,
        bank,
        probe,
    };
    if entry.paragraph_len != probe.para_len {
        return Err(mismatch(
            Side::Paragraph,
            entry.paragraph_len,
            probe.para_len,
        ));
    }
    if probe.anchor_side == Side::Question && entry.question_len != probe.question_words.len() {
        return Err(mismatch(
            Side::Question,
            entry.question_len,
            probe.question_words.len(),
        ));
    }
    Ok(())
}

/// One percentage per available bank layer, in ascending layer order.
/// Layers are scored in parallel; counts are exact so the result does not
/// depend on scheduling.
pub fn score_all_layers(
    probes: &[ProbeExample],
    bank: &EmbeddingBank,
    scorer: Scorer,
    mode: DenominatorMode,
    missing: MissingPolicy,
) -> Result<LayerRankingCurve, MetricError> {
    let tasks: BTreeSet<Task> = probes.iter().map(|p| p.task).collect();
    let task = match tasks.len() {
        0 => return Err(MetricError::EmptyInput),
        1 => *tasks.iter().next().unwrap(),
        _ => {
            let names: Vec<_> = tasks.iter().map(|t| t.as_str()).collect();
            return Err(MetricError::MixedTasks(names.join(", ")));
        }
    };
    let (present, absent): (Vec<&ProbeExample>, Vec<&ProbeExample>) =
        probes.iter().partition(|p| bank.contains(&p.example_id));
    let missing_ids: Vec<String> = absent.iter().map(|p| p.example_id.clone()).collect();
    if !missing_ids.is_empty() && missing == MissingPolicy::Abort {
        return Err(MetricError::IdMismatch(missing_ids));
    }
    for p in &present {
        check_word_counts(p, bank)?;
    }
    if present.is_empty() {
        return Err(MetricError::EmptyInput);
    }

    let layers: Vec<usize> = bank.layers().collect();
    let per_layer: Vec<Result<(LayerPoint, u64, u64), MetricError>> = layers
        .par_iter()
        .map(|&layer| {
            let mut scores = Vec::with_capacity(present.len());
            let mut skipped_examples = 0;
            for p in &present {
                match score_example(p, bank, layer, scorer) {
                    Ok(s) => scores.push(s),
                    Err(MetricError::ZeroVector) => skipped_examples += 1,
                    Err(e) => return Err(e),
                }
            }
            let skipped_pairs = scores.iter().map(|s| s.skipped_pairs).sum();
            let agg = aggregate(&scores, mode)?;
            Ok((
                LayerPoint {
                    layer,
                    count: agg.count,
                    denominator: agg.denominator,
                    percentage: agg.percentage,
                },
                skipped_pairs,
                skipped_examples,
            ))
        })
        .collect();

    let mut diagnostics = Diagnostics {
        missing_ids,
        ..Default::default()
    };
    let mut points = Vec::with_capacity(layers.len());
    for r in per_layer {
        let (point, pairs, examples) = r?;
        diagnostics.skipped_pairs += pairs;
        diagnostics.skipped_examples += examples;
        points.push(point);
    }
    Ok(LayerRankingCurve {
        model_tag: bank.model_tag.clone(),
        task,
        scorer,
        mode,
        has_layer0: bank.has_layer0(),
        target: None,
        trained_probe: false,
        seed: None,
        layers: points,
        diagnostics,
    })
}
