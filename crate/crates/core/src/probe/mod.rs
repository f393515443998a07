//! Probing datasets: one matching pair per example, every other paragraph
//! word acting as the other side of an un-matching pair.

mod builders;
mod lexicon;

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{split_sentences, Side, Span};

pub use builders::{
    build_abbreviation_probe, build_answer_type_probe, build_boundary_example,
    build_coreference_probe, build_probes, build_synonym_probe, BuildOutput, PRONOUNS, WH_WORDS,
};
pub use lexicon::{load_synonym_lexicon, LexiconError, SynonymLexicon};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProbeError {
    #[error("probe {example_id} has no un-matching words")]
    EmptyNegatives { example_id: String },
    #[error("invalid probe {example_id}: {reason}")]
    Invalid { example_id: String, reason: String },
    #[error("line {line}: malformed probe record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Synonyms,
    Abbreviation,
    Coreference,
    AnswerType,
    Boundary,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::Synonyms,
        Task::Abbreviation,
        Task::Coreference,
        Task::AnswerType,
        Task::Boundary,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Synonyms => "synonyms",
            Task::Abbreviation => "abbreviation",
            Task::Coreference => "coreference",
            Task::AnswerType => "answer_type",
            Task::Boundary => "boundary",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == norm)
            .ok_or_else(|| format!("unknown task '{s}'"))
    }
}

/// One pairwise probing instance.
///
/// The matching pair is (anchor, positive). Every paragraph index outside
/// `excluded` pairs with the anchor as an un-matching pair. The words are
/// carried along so an exporter can encode the example without the
/// original corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeExample {
    pub task: Task,
    pub example_id: String,
    pub anchor_side: Side,
    pub anchor_span: Span,
    pub positive_span: Span,
    pub para_len: usize,
    pub excluded: BTreeSet<usize>,
    pub question_words: Vec<String>,
    pub paragraph_words: Vec<String>,
}

impl ProbeExample {
    pub fn anchor_text(&self) -> String {
        let words = match self.anchor_side {
            Side::Question => &self.question_words,
            Side::Paragraph => &self.paragraph_words,
        };
        words[self.anchor_span.indices()].join(" ")
    }

    pub fn positive_text(&self) -> String {
        self.paragraph_words[self.positive_span.indices()].join(" ")
    }

    /// Size of the matching pair on the paragraph side.
    pub fn n(&self) -> usize {
        self.positive_span.len()
    }

    /// Checks the type invariants.
    pub fn validate(&self) -> Result<(), ProbeError> {
        let invalid = |reason: String| ProbeError::Invalid {
            example_id: self.example_id.clone(),
            reason,
        };
        if self.task == Task::Boundary {
            return Err(invalid("boundary data is a BoundaryExample".into()));
        }
        if self.para_len == 0 || self.para_len != self.paragraph_words.len() {
            return Err(invalid(format!(
                "para_len {} does not match {} paragraph words",
                self.para_len,
                self.paragraph_words.len()
            )));
        }
        if self.positive_span.is_empty() || self.positive_span.end > self.para_len {
            return Err(invalid(format!(
                "positive span {} out of range",
                self.positive_span
            )));
        }
        let side_len = match self.anchor_side {
            Side::Question => self.question_words.len(),
            Side::Paragraph => self.para_len,
        };
        if self.anchor_span.is_empty() || self.anchor_span.end > side_len {
            return Err(invalid(format!(
                "anchor span {} out of range",
                self.anchor_span
            )));
        }
        if self
            .positive_span
            .indices()
            .any(|i| !self.excluded.contains(&i))
        {
            return Err(invalid("positive span not excluded".into()));
        }
        if self.excluded.iter().any(|&i| i >= self.para_len) {
            return Err(invalid("excluded index out of range".into()));
        }
        if self.excluded.len() >= self.para_len {
            return Err(ProbeError::EmptyNegatives {
                example_id: self.example_id.clone(),
            });
        }
        Ok(())
    }
}

/// Paragraph indices that pair with the anchor as un-matching pairs, in
/// ascending order. With `excluded == positive` there are exactly
/// `para_len - n` of them.
pub fn enumerate_negatives(probe: &ProbeExample) -> Result<Vec<usize>, ProbeError> {
    let negatives: Vec<usize> = (0..probe.para_len)
        .filter(|i| !probe.excluded.contains(i))
        .collect();
    if negatives.is_empty() {
        return Err(ProbeError::EmptyNegatives {
            example_id: probe.example_id.clone(),
        });
    }
    Ok(negatives)
}

/// Boundary-detection instance: the paragraph is reduced to the sentence
/// holding the answer, and the gold positions are its first and last word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryExample {
    pub example_id: String,
    pub context: Span,
    pub gold_start: usize,
    /// Inclusive.
    pub gold_end: usize,
    pub question_words: Vec<String>,
    pub paragraph_words: Vec<String>,
}

impl BoundaryExample {
    pub fn width(&self) -> usize {
        self.context.len()
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        let invalid = |reason: String| ProbeError::Invalid {
            example_id: self.example_id.clone(),
            reason,
        };
        if self.context.is_empty() || self.context.end > self.paragraph_words.len() {
            return Err(invalid(format!("context {} out of range", self.context)));
        }
        if self.gold_start > self.gold_end
            || !self.context.contains(self.gold_start)
            || !self.context.contains(self.gold_end)
        {
            return Err(invalid(format!(
                "gold [{}, {}] not inside context {}",
                self.gold_start, self.gold_end, self.context
            )));
        }
        if !split_sentences(&self.paragraph_words).contains(&self.context) {
            return Err(invalid("context is not a sentence of the paragraph".into()));
        }
        Ok(())
    }
}

/// One line of a probe file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeRecord {
    Pair(ProbeExample),
    Boundary(BoundaryExample),
}

impl ProbeRecord {
    pub fn task(&self) -> Task {
        match self {
            ProbeRecord::Pair(p) => p.task,
            ProbeRecord::Boundary(_) => Task::Boundary,
        }
    }

    pub fn example_id(&self) -> &str {
        match self {
            ProbeRecord::Pair(p) => &p.example_id,
            ProbeRecord::Boundary(b) => &b.example_id,
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        match self {
            ProbeRecord::Pair(p) => p.validate(),
            ProbeRecord::Boundary(b) => b.validate(),
        }
    }

    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct BoundaryLine<'a> {
            task: Task,
            #[serde(flatten)]
            example: &'a BoundaryExample,
        }
        match self {
            ProbeRecord::Pair(p) => serde_json::to_string(p),
            ProbeRecord::Boundary(b) => serde_json::to_string(&BoundaryLine {
                task: Task::Boundary,
                example: b,
            }),
        }
        .expect("probe record serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, String> {
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let task: Task = value
            .get("task")
            .and_then(|t| t.as_str())
            .ok_or("missing task field")?
            .parse()?;
        let record = if task == Task::Boundary {
            ProbeRecord::Boundary(serde_json::from_value(value).map_err(|e| e.to_string())?)
        } else {
            ProbeRecord::Pair(serde_json::from_value(value).map_err(|e| e.to_string())?)
        };
        Ok(record)
    }
}

/// Writes one JSON record per line.
pub fn write_probe_file<W: Write>(mut out: W, records: &[ProbeRecord]) -> Result<(), ProbeError> {
    for r in records {
        writeln!(out, "{}", r.to_json_line()).map_err(|e| ProbeError::Io(e.to_string()))?;
    }
    out.flush().map_err(|e| ProbeError::Io(e.to_string()))
}

/// Reads and validates a probe file.
pub fn read_probe_file<R: BufRead>(reader: R) -> Result<Vec<ProbeRecord>, ProbeError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ProbeError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record =
            ProbeRecord::from_json_line(&line).map_err(|reason| ProbeError::MalformedRecord {
                line: n + 1,
                reason,
            })?;
        record.validate().map_err(|e| ProbeError::MalformedRecord {
            line: n + 1,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}
