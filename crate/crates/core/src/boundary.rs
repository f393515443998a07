//! Per-layer linear probes for answer boundaries.
//!
//! A probe assigns each word of the answer sentence a logit `w·x + b` from
//! its frozen vector. Training minimizes softmax cross-entropy over the
//! sentence positions with the gold start (or end) as the target.
//! Evaluation ranks the gold position's logit against every other
//! position, the same way the pairwise metric ranks a matching pair.
//!
//! Checkpoint layout: one line of UTF-8 JSON (the header, terminated by
//! `\n`), then `d` little-endian `f32` weights, then the `f32` bias.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::{BankError, EmbeddingBank};
use crate::corpus::Side;
use crate::metric::{ExampleScore, Scorer};
use crate::probe::BoundaryExample;

pub const CHECKPOINT_FORMAT: &str = "pairprobe-linear-probe";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error("dimension mismatch: bank has d={bank}, probe expects d={probe}")]
    DimMismatch { bank: usize, probe: usize },
    #[error("no trainable examples ({dropped} degenerate single-word contexts dropped)")]
    EmptyInput { dropped: usize },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    Start,
    End,
}

impl ProbeTarget {
    pub fn gold(&self, example: &BoundaryExample) -> usize {
        match self {
            ProbeTarget::Start => example.gold_start,
            ProbeTarget::End => example.gold_end,
        }
    }
}

impl fmt::Display for ProbeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeTarget::Start => "start",
            ProbeTarget::End => "end",
        })
    }
}

impl FromStr for ProbeTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "start" => Ok(ProbeTarget::Start),
            "end" => Ok(ProbeTarget::End),
            other => Err(format!("unknown probe target '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once an epoch lowers the training loss by less than this.
    pub min_improvement: f64,
    /// Governs example shuffling only; weights start at zero.
    pub seed: u64,
    /// Expected vector dimension, checked against the bank when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 32,
            max_epochs: 50,
            min_improvement: 1e-5,
            seed: 42,
            dim: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub config: TrainConfig,
    pub train_examples: usize,
    pub dropped_degenerate: usize,
    /// Epochs executed, including rejected ones.
    pub epochs_run: usize,
    pub final_learning_rate: f64,
    pub final_loss: f64,
    /// Mean loss at initialization and after every accepted epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub layer: usize,
    pub target: ProbeTarget,
    pub weights: Vec<f32>,
    pub bias: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingMeta>,
}

impl LinearProbe {
    pub fn zeros(layer: usize, target: ProbeTarget, dim: usize) -> Self {
        Self {
            layer,
            target,
            weights: vec![0.0; dim],
            bias: 0.0,
            training: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, x: &[f32]) -> f64 {
        self.weights
            .iter()
            .zip(x)
            .map(|(&w, &v)| f64::from(w) * f64::from(v))
            .sum::<f64>()
            + f64::from(self.bias)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        #[derive(Serialize)]
        struct Header<'a> {
            format: &'static str,
            version: u32,
            layer: usize,
            target: ProbeTarget,
            dim: usize,
            #[serde(skip_serializing_if = "Option::is_none")]
            training: &'a Option<TrainingMeta>,
        }
        let header = Header {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            layer: self.layer,
            target: self.target,
            dim: self.dim(),
            training: &self.training,
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&self.bias.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BoundaryError> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
            layer: usize,
            target: ProbeTarget,
            dim: usize,
            #[serde(default)]
            training: Option<TrainingMeta>,
        }
        let bad = |m: String| BoundaryError::BadCheckpoint(m);
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let payload = &bytes[nl + 1..];
        if payload.len() != 4 * (header.dim + 1) {
            return Err(bad(format!(
                "payload is {} bytes, expected {} for d={}",
                payload.len(),
                4 * (header.dim + 1),
                header.dim
            )));
        }
        let mut floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let bias = floats.pop().expect("payload holds the bias");
        if !bias.is_finite() || floats.iter().any(|w| !w.is_finite()) {
            return Err(bad("non-finite weights".into()));
        }
        Ok(Self {
            layer: header.layer,
            target: header.target,
            weights: floats,
            bias,
            training: header.training,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BoundaryError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BoundaryError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Context vectors for one example, widened to f64, row-major.
struct Context {
    features: Vec<f64>,
    gold: usize,
}

fn gather(
    examples: &[BoundaryExample],
    bank: &EmbeddingBank,
    layer: usize,
    target: ProbeTarget,
) -> Result<(Vec<Context>, usize), BoundaryError> {
    let mut out = Vec::with_capacity(examples.len());
    let mut dropped = 0;
    for e in examples {
        if e.width() < 2 {
            dropped += 1;
            continue;
        }
        let mut features = Vec::with_capacity(e.width() * bank.dim());
        for i in e.context.indices() {
            let v = bank.word_vector(&e.example_id, layer, Side::Paragraph, i)?;
            features.extend(v.iter().map(|&x| f64::from(x)));
        }
        out.push(Context {
            features,
            gold: target.gold(e) - e.context.start,
        });
    }
    Ok((out, dropped))
}

fn logits_into(ctx: &Context, w: &[f64], b: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(
        ctx.features
            .chunks_exact(w.len())
            .map(|x| x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b),
    );
}

/// Softmax in place; returns log-sum-exp of the input.
fn softmax(z: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
    max + sum.ln()
}

fn mean_loss(data: &[Context], w: &[f64], b: f64) -> f64 {
    let mut z = Vec::new();
    let total: f64 = data
        .iter()
        .map(|ctx| {
            logits_into(ctx, w, b, &mut z);
            let gold = z[ctx.gold];
            softmax(&mut z) - gold
        })
        .sum();
    total / data.len() as f64
}

/// Trains one (layer, target) probe.
///
/// Mini-batch gradient descent from all-zero weights. After every epoch
/// the full training loss is recomputed; an epoch that raises it is rolled
/// back and the learning rate halved, so the recorded loss never
/// increases. Training stops after `max_epochs` or once an accepted epoch
/// improves the loss by less than `min_improvement`.
pub fn train_probe(
    examples: &[BoundaryExample],
    bank: &EmbeddingBank,
    layer: usize,
    target: ProbeTarget,
    config: &TrainConfig,
) -> Result<LinearProbe, BoundaryError> {
    let dim = bank.dim();
    if let Some(expected) = config.dim {
        if expected != dim {
            return Err(BoundaryError::DimMismatch {
                bank: dim,
                probe: expected,
            });
        }
    }
    let (data, dropped) = gather(examples, bank, layer, target)?;
    if data.is_empty() {
        return Err(BoundaryError::EmptyInput { dropped });
    }

    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let mut lr = config.learning_rate;
    let mut loss = mean_loss(&data, &w, b);
    let mut history = vec![loss];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batch_size = config.batch_size.max(1);
    let mut epochs_run = 0;
    let mut grad_w = vec![0.0f64; dim];
    let mut z = Vec::new();

    for _ in 0..config.max_epochs {
        epochs_run += 1;
        let (saved_w, saved_b) = (w.clone(), b);
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for &k in batch {
                let ctx = &data[k];
                logits_into(ctx, &w, b, &mut z);
                softmax(&mut z);
                z[ctx.gold] -= 1.0;
                for (p, x) in z.iter().zip(ctx.features.chunks_exact(dim)) {
                    for (g, xi) in grad_w.iter_mut().zip(x) {
                        *g += p * xi;
                    }
                    grad_b += p;
                }
            }
            let scale = lr / batch.len() as f64;
            for (wi, g) in w.iter_mut().zip(&grad_w) {
                *wi -= scale * g;
            }
            b -= scale * grad_b;
        }
        let new_loss = mean_loss(&data, &w, b);
        if new_loss.is_nan() || new_loss > loss {
            w = saved_w;
            b = saved_b;
            lr *= 0.5;
            continue;
        }
        let improvement = loss - new_loss;
        loss = new_loss;
        history.push(loss);
        if improvement < config.min_improvement {
            break;
        }
    }

    Ok(LinearProbe {
        layer,
        target,
        weights: w.iter().map(|&v| v as f32).collect(),
        bias: b as f32,
        training: Some(TrainingMeta {
            config: *config,
            train_examples: data.len(),
            dropped_degenerate: dropped,
            epochs_run,
            final_learning_rate: lr,
            final_loss: loss,
            loss_history: history,
        }),
    })
}

/// `w·x + b` for every word of the example's context.
pub fn position_logits(
    probe: &LinearProbe,
    bank: &EmbeddingBank,
    example: &BoundaryExample,
) -> Result<Vec<f64>, BoundaryError> {
    if probe.dim() != bank.dim() {
        return Err(BoundaryError::DimMismatch {
            bank: bank.dim(),
            probe: probe.dim(),
        });
    }
    example
        .context
        .indices()
        .map(|i| {
            let x = bank.word_vector(&example.example_id, probe.layer, Side::Paragraph, i)?;
            Ok(probe.logit(x))
        })
        .collect()
}

/// Counts context positions whose logit is strictly below the gold
/// position's. Ties count zero.
pub fn rank_boundary(
    example: &BoundaryExample,
    logits: &[f64],
    target: ProbeTarget,
) -> ExampleScore {
    assert_eq!(
        logits.len(),
        example.width(),
        "one logit per context position"
    );
    let gold = target.gold(example) - example.context.start;
    let pos = logits[gold];
    let example_count = logits
        .iter()
        .enumerate()
        .filter(|&(i, &z)| i != gold && Scorer::Logit.strictly_worse(z, pos))
        .count() as u64;
    ExampleScore {
        example_id: example.example_id.clone(),
        example_count,
        num_negatives: (example.width() - 1) as u64,
        para_len: example.width() as u64,
        skipped_pairs: 0,
    }
}

/// Scores every example with at least two context positions.
pub fn evaluate_probe(
    probe: &LinearProbe,
    bank: &EmbeddingBank,
    examples: &[BoundaryExample],
) -> Result<Vec<ExampleScore>, BoundaryError> {
    examples
        .iter()
        .filter(|e| e.width() >= 2)
        .map(|e| {
            let logits = position_logits(probe, bank, e)?;
            Ok(rank_boundary(e, &logits, probe.target))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;
    use crate::metric::{aggregate, DenominatorMode};
    use proptest::prelude::*;
    use rand::Rng;

    fn example(id: &str, width: usize, gold_start: usize, gold_end: usize) -> BoundaryExample {
        BoundaryExample {
            example_id: id.into(),
            context: Span::new(0, width),
            gold_start,
            gold_end,
            question_words: vec!["when".into()],
            paragraph_words: (0..width).map(|i| format!("w{i}")).collect(),
        }
    }

    /// Gold start has x0 = +1, every other position x0 = -1; remaining
    /// dims are uniform noise.
    fn separable(n: usize, dim: usize, seed: u64) -> (EmbeddingBank, Vec<BoundaryExample>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bank = EmbeddingBank::new("sep", 1, dim, false, false);
        let mut examples = Vec::new();
        for k in 0..n {
            let width = rng.gen_range(2..12);
            let gold = rng.gen_range(0..width);
            let mut data = Vec::new();
            for i in 0..width {
                data.push(if i == gold { 1.0 } else { -1.0 });
                data.extend((1..dim).map(|_| rng.gen_range(-1.0f32..1.0)));
            }
            let id = format!("s{k}");
            bank.push(&id, 0, width, data).unwrap();
            examples.push(example(&id, width, gold, gold));
        }
        (bank, examples)
    }

    #[test]
    fn logits_dot_product() {
        let mut bank = EmbeddingBank::new("m", 1, 2, false, false);
        bank.push("e", 0, 2, vec![2.0, 9.0, 2.0, 3.0]).unwrap();
        let e = example("e", 2, 0, 1);
        let mut probe = LinearProbe::zeros(1, ProbeTarget::Start, 2);
        probe.weights = vec![1.0, 0.0];
        assert_eq!(position_logits(&probe, &bank, &e).unwrap()[0], 2.0);
        probe.weights = vec![0.0, 0.0];
        probe.bias = 0.5;
        assert_eq!(position_logits(&probe, &bank, &e).unwrap(), vec![0.5, 0.5]);
        probe.weights = vec![1.0, 1.0];
        probe.bias = -1.0;
        assert_eq!(position_logits(&probe, &bank, &e).unwrap()[1], 4.0);
        let wide = LinearProbe::zeros(1, ProbeTarget::Start, 3);
        assert!(matches!(
            position_logits(&wide, &bank, &e),
            Err(BoundaryError::DimMismatch { .. })
        ));
    }

    #[test]
    fn ranking_counts() {
        let e = example("e", 5, 0, 0);
        let s = rank_boundary(&e, &[3.0, 1.0, 2.0, 3.0, 4.0], ProbeTarget::Start);
        assert_eq!((s.example_count, s.num_negatives), (2, 4));
        let s = rank_boundary(&e, &[9.0, 1.0, 2.0, 3.0, 4.0], ProbeTarget::Start);
        assert_eq!(s.example_count, s.num_negatives);
        let s = rank_boundary(&e, &[1.0; 5], ProbeTarget::Start);
        assert_eq!(s.example_count, 0);
        let e = example("e", 3, 0, 2);
        let s = rank_boundary(&e, &[5.0, 1.0, 2.0], ProbeTarget::End);
        assert_eq!(s.example_count, 1);
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let (bank, examples) = separable(20, 4, 1);
        let config = TrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        let probe = train_probe(&examples, &bank, 1, ProbeTarget::Start, &config).unwrap();
        assert_eq!(probe.weights, vec![0.0; 4]);
        assert_eq!(probe.bias, 0.0);
        assert_eq!(probe.training.unwrap().loss_history.len(), 1);
    }

    #[test]
    fn dim_mismatch() {
        let (bank, examples) = separable(5, 4, 1);
        let config = TrainConfig {
            dim: Some(64),
            ..Default::default()
        };
        assert!(matches!(
            train_probe(&examples, &bank, 1, ProbeTarget::Start, &config),
            Err(BoundaryError::DimMismatch { bank: 4, probe: 64 })
        ));
    }

    #[test]
    fn degenerate_contexts_dropped() {
        let mut bank = EmbeddingBank::new("m", 1, 2, false, false);
        bank.push("one", 0, 1, vec![1.0, 0.0]).unwrap();
        let err = train_probe(
            &[example("one", 1, 0, 0)],
            &bank,
            1,
            ProbeTarget::Start,
            &TrainConfig::default(),
        );
        assert!(matches!(err, Err(BoundaryError::EmptyInput { dropped: 1 })));
    }

    #[test]
    fn learns_separable_set() {
        let (bank, examples) = separable(600, 6, 7);
        let (train, test) = examples.split_at(500);
        let probe =
            train_probe(train, &bank, 1, ProbeTarget::Start, &TrainConfig::default()).unwrap();
        assert!(probe.weights[0] > 0.0);
        let meta = probe.training.as_ref().unwrap();
        assert!(meta.loss_history.windows(2).all(|w| w[1] <= w[0]));
        let scores = evaluate_probe(&probe, &bank, test).unwrap();
        let agg = aggregate(&scores, DenominatorMode::Negatives).unwrap();
        assert!(agg.percentage >= 0.99, "{}", agg.percentage);
    }

    #[test]
    fn training_is_reproducible() {
        let (bank, examples) = separable(200, 4, 3);
        let a = train_probe(
            &examples,
            &bank,
            1,
            ProbeTarget::End,
            &TrainConfig::default(),
        )
        .unwrap();
        let b = train_probe(
            &examples,
            &bank,
            1,
            ProbeTarget::End,
            &TrainConfig::default(),
        )
        .unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn checkpoint_round_trip() {
        let (bank, examples) = separable(50, 3, 2);
        let probe = train_probe(
            &examples,
            &bank,
            1,
            ProbeTarget::Start,
            &TrainConfig::default(),
        )
        .unwrap();
        let bytes = probe.to_bytes();
        assert_eq!(LinearProbe::from_bytes(&bytes).unwrap(), probe);
        assert!(matches!(
            LinearProbe::from_bytes(&bytes[..bytes.len() - 1]),
            Err(BoundaryError::BadCheckpoint(_))
        ));
        assert!(matches!(
            LinearProbe::from_bytes(b"{}"),
            Err(BoundaryError::BadCheckpoint(_))
        ));
    }

    proptest! {
        #[test]
        fn ranking_invariant_to_shift_and_scale(
            logits in prop::collection::vec(-5.0f64..5.0, 2..15),
            gold in 0usize..15,
            shift in -100.0f64..100.0,
            scale in 0.01f64..100.0,
        ) {
            let width = logits.len();
            let e = example("e", width, gold % width, gold % width);
            let base = rank_boundary(&e, &logits, ProbeTarget::Start);
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            let scaled: Vec<f64> = logits.iter().map(|z| z * scale).collect();
            // shifts can merge nearly equal logits under rounding; compare
            // only when no two logits are that close
            let mut sorted = logits.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assume!(sorted.windows(2).all(|w| w[1] - w[0] > 1e-9));
            prop_assert_eq!(rank_boundary(&e, &shifted, ProbeTarget::Start).example_count, base.example_count);
            prop_assert_eq!(rank_boundary(&e, &scaled, ProbeTarget::Start).example_count, base.example_count);
        }
    }
}
