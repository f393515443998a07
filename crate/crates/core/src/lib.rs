//! Pairwise ranking probes for per-layer word representations.
//!
//! The crate is split along the pipeline:
//!
//! - [`corpus`]: NQ-style records, word tokenization and sentence spans.
//! - [`probe`]: the five probing datasets (synonyms, abbreviation,
//!   coreference, answer type, boundary) and their negative sets.
//! - [`bank`]: the `PPEM` container of per-layer word vectors.
//! - [`metric`]: cosine / Euclidean scoring and the pairwise ranking
//!   percentage, per example and per layer.
//! - [`boundary`]: per-layer linear start/end probes over frozen vectors.
//! - [`report`]: layer-by-layer comparison of two models' curves.
//!
//! Nothing here runs a model. Vectors arrive through a [`bank::EmbeddingBank`]
//! written by an external exporter (or built synthetically in tests).

pub mod bank;
pub mod boundary;
pub mod corpus;
pub mod metric;
pub mod probe;
pub mod report;

pub use bank::{EmbeddingBank, Side};
pub use corpus::{NqExample, Span};
pub use metric::{DenominatorMode, ExampleScore, LayerRankingCurve, Scorer};
pub use probe::{BoundaryExample, ProbeExample, ProbeRecord, Task};
