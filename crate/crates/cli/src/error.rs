use std::path::Path;

use pairprobe::bank::BankError;
use pairprobe::boundary::BoundaryError;
use pairprobe::corpus::CorpusError;
use pairprobe::metric::MetricError;
use pairprobe::probe::{LexiconError, ProbeError};
use pairprobe::report::ReportError;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

/// Failure class; each maps to a fixed process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Usage,
    Data,
    Io,
}

impl ErrorClass {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Io => 4,
        }
    }
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub class: ErrorClass,
    /// Short machine-readable tag, e.g. `id_mismatch`.
    pub kind: &'static str,
    pub message: String,
    pub details: Option<Value>,
}

impl CliError {
    pub fn usage(kind: &'static str, message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Usage, kind, message)
    }

    pub fn data(kind: &'static str, message: impl Into<String>) -> Self {
        Self::new(ErrorClass::Data, kind, message)
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::new(ErrorClass::Io, "io", format!("{}: {err}", path.display()))
            .with_details(json!({ "path": path.display().to_string() }))
    }

    fn new(class: ErrorClass, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            class,
            kind,
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn exit_code(&self) -> u8 {
        self.class.exit_code()
    }

    /// One-line JSON record written to stderr on failure.
    pub fn to_record(&self) -> Value {
        let mut record = json!({
            "error": self.kind,
            "class": self.class,
            "exit_code": self.exit_code(),
            "message": self.message,
        });
        if let Some(details) = &self.details {
            record["details"] = details.clone();
        }
        record
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(msg) => CliError::new(ErrorClass::Io, "io", msg),
            other => CliError::data("malformed_input", other.to_string()),
        }
    }
}

impl From<LexiconError> for CliError {
    fn from(e: LexiconError) -> Self {
        match e {
            LexiconError::Io(msg) => CliError::new(ErrorClass::Io, "io", msg),
            other => CliError::data("malformed_lexicon", other.to_string()),
        }
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        match e {
            ProbeError::Io(msg) => CliError::new(ErrorClass::Io, "io", msg),
            ProbeError::MalformedRecord { .. } => CliError::data("malformed_probe", e.to_string()),
            ProbeError::EmptyNegatives { .. } | ProbeError::Invalid { .. } => {
                CliError::data("invalid_probe", e.to_string())
            }
        }
    }
}

impl From<BankError> for CliError {
    fn from(e: BankError) -> Self {
        let kind = match &e {
            BankError::Io(_) => return CliError::new(ErrorClass::Io, "io", e.to_string()),
            BankError::BadMagic => "bad_magic",
            BankError::VersionMismatch { .. } => "version_mismatch",
            BankError::TruncatedFile(_) => "truncated_file",
            BankError::DimMismatch(_) => "dim_mismatch",
            BankError::Corrupt(_) => "corrupt_bank",
            BankError::NonFinite(_) => "non_finite",
            BankError::DuplicateExample(_) => "duplicate_example",
            BankError::UnknownExample(_) => "unknown_example",
            BankError::LayerOutOfRange { .. } => "layer_out_of_range",
            BankError::IndexOutOfRange { .. } => "index_out_of_range",
            BankError::EmptySpan => "empty_span",
        };
        CliError::data(kind, e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Probe(e) => e.into(),
            MetricError::Bank(e) => e.into(),
            MetricError::EmptyInput => CliError::usage("empty_input", e.to_string()),
            MetricError::IdMismatch(ref ids) => CliError::data("id_mismatch", e.to_string())
                .with_details(json!({ "missing_ids": ids })),
            MetricError::WordCountMismatch { .. } => {
                CliError::data("word_count_mismatch", e.to_string())
            }
            MetricError::MixedTasks(_) => CliError::data("mixed_tasks", e.to_string()),
            MetricError::ZeroVector | MetricError::ZeroDenominator => {
                CliError::data("degenerate_vectors", e.to_string())
            }
        }
    }
}

impl From<BoundaryError> for CliError {
    fn from(e: BoundaryError) -> Self {
        match e {
            BoundaryError::Bank(e) => e.into(),
            BoundaryError::Io(_) => CliError::new(ErrorClass::Io, "io", e.to_string()),
            BoundaryError::EmptyInput { .. } => CliError::usage("empty_input", e.to_string()),
            BoundaryError::DimMismatch { .. } => CliError::data("dim_mismatch", e.to_string()),
            BoundaryError::BadCheckpoint(_) => CliError::data("bad_checkpoint", e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::CurveMismatch(_) => CliError::data("curve_mismatch", e.to_string()),
            ReportError::Csv(_) => CliError::data("malformed_csv", e.to_string()),
            ReportError::Io(_) => CliError::new(ErrorClass::Io, "io", e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(CliError::usage("usage", "x").exit_code(), 2);
        assert_eq!(CliError::data("id_mismatch", "x").exit_code(), 3);
        assert_eq!(CliError::io(Path::new("f"), "gone").exit_code(), 4);
    }

    #[test]
    fn id_mismatch_lists_ids() {
        let e: CliError = MetricError::IdMismatch(vec!["a".into(), "b".into()]).into();
        let record = e.to_record();
        assert_eq!(record["error"], "id_mismatch");
        assert_eq!(record["exit_code"], 3);
        assert_eq!(record["details"]["missing_ids"], json!(["a", "b"]));
    }
}
