//! NQ-style input records, word tokenization and sentence segmentation.
//!
//! Input is one JSON object per line:
//!
//! ```text
//! {"id": "...", "question": "...", "paragraph": "...",
//!  "answer_start_word": 12, "answer_end_word": 15}
//! ```
//!
//! The answer fields are optional (both or neither) and index into the
//! *tokenized* paragraph, end exclusive. Question words are lowercased;
//! paragraph words keep their original case because the coreference
//! builder looks at capitalization. All matching is case-insensitive.

use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Words that end in a period but do not end a sentence. The tokenizer also
/// keeps these intact instead of detaching the final period.
pub const ABBREVIATION_GUARD: [&str; 9] = [
    "dr.", "mr.", "mrs.", "st.", "no.", "etc.", "e.g.", "i.e.", "u.s.",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("answer span [{start}, {end}) exceeds paragraph length {para_len}")]
    SpanOutOfBounds {
        start: usize,
        end: usize,
        para_len: usize,
    },
    #[error("example has no short answer")]
    NoAnswer,
    #[error("answer span {answer} crosses a sentence boundary")]
    AnswerCrossesSentences { answer: Span },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Half-open word-index range `[start, end)`. Serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }

    /// True when `other` lies entirely inside `self`.
    pub fn covers(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Self { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Which half of a question/paragraph pair a word index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Question,
    Paragraph,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Question => "question",
            Side::Paragraph => "paragraph",
        })
    }
}

/// One question with its long-answer paragraph, tokenized into words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NqExample {
    pub id: String,
    pub question_words: Vec<String>,
    pub paragraph_words: Vec<String>,
    pub short_answer: Option<Span>,
    pub sentences: Vec<Span>,
}

impl NqExample {
    /// Builds an example from already tokenized words and segments the
    /// paragraph into sentences.
    pub fn new(
        id: impl Into<String>,
        question_words: Vec<String>,
        paragraph_words: Vec<String>,
        short_answer: Option<Span>,
    ) -> Result<Self, CorpusError> {
        if question_words.is_empty() {
            return Err(CorpusError::MalformedRecord("empty question".into()));
        }
        if paragraph_words.is_empty() {
            return Err(CorpusError::MalformedRecord("empty paragraph".into()));
        }
        if let Some(ans) = short_answer {
            if ans.is_empty() {
                return Err(CorpusError::MalformedRecord(format!(
                    "empty answer span {ans}"
                )));
            }
            if ans.end > paragraph_words.len() {
                return Err(CorpusError::SpanOutOfBounds {
                    start: ans.start,
                    end: ans.end,
                    para_len: paragraph_words.len(),
                });
            }
        }
        let sentences = split_sentences(&paragraph_words);
        Ok(Self {
            id: id.into(),
            question_words,
            paragraph_words,
            short_answer,
            sentences,
        })
    }

    pub fn para_len(&self) -> usize {
        self.paragraph_words.len()
    }

    pub fn words(&self, side: Side) -> &[String] {
        match side {
            Side::Question => &self.question_words,
            Side::Paragraph => &self.paragraph_words,
        }
    }
}

/// On-disk form of an input record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub question: String,
    pub paragraph: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_start_word: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_end_word: Option<usize>,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

fn guard_prefix(rest: &str) -> Option<usize> {
    ABBREVIATION_GUARD.iter().find_map(|g| {
        let n = g.len();
        (rest.len() >= n
            && rest.is_char_boundary(n)
            && rest[..n].eq_ignore_ascii_case(g)
            && !rest[n..].chars().any(is_word_char))
        .then_some(n)
    })
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let mut rest = chunk;
    while let Some(c) = rest.chars().next() {
        if is_word_char(c) {
            break;
        }
        out.push(c.to_string());
        rest = &rest[c.len_utf8()..];
    }
    if rest.is_empty() {
        return;
    }
    let core_end = match guard_prefix(rest) {
        Some(n) => n,
        None => rest
            .char_indices()
            .filter(|(_, c)| is_word_char(*c))
            .map(|(i, c)| i + c.len_utf8())
            .next_back()
            .unwrap_or(rest.len()),
    };
    out.push(rest[..core_end].to_string());
    out.extend(rest[core_end..].chars().map(|c| c.to_string()));
}

/// Whitespace tokenization with leading and trailing punctuation detached
/// one character per word. Internal punctuation stays ("e.g", "2,000").
/// Words from [`ABBREVIATION_GUARD`] keep their trailing period.
///
/// `tokenize(&words.join(" ")) == words` for any output `words`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        split_chunk(chunk, &mut words);
    }
    words
}

/// [`tokenize`] followed by lowercasing; used for questions.
pub fn tokenize_lower(text: &str) -> Vec<String> {
    tokenize(&text.to_lowercase())
}

fn is_guarded(word: &str) -> bool {
    ABBREVIATION_GUARD
        .iter()
        .any(|g| word.eq_ignore_ascii_case(g))
}

fn ends_sentence(word: &str) -> bool {
    word.ends_with(['.', '!', '?']) && !is_guarded(word)
}

fn is_bare_terminator(word: &str) -> bool {
    !word.is_empty() && word.chars().all(|c| matches!(c, '.' | '!' | '?'))
}

/// Partitions the paragraph into sentence spans. A sentence ends at a word
/// terminating in '.', '!' or '?' unless the word is guarded; a run of bare
/// terminators ("?", "!") closes a single sentence.
pub fn split_sentences<S: AsRef<str>>(paragraph_words: &[S]) -> Vec<Span> {
    let n = paragraph_words.len();
    let mut spans = Vec::new();
    let mut start = 0;
    for i in 0..n {
        let w = paragraph_words[i].as_ref();
        if !ends_sentence(w) {
            continue;
        }
        if i + 1 < n && is_bare_terminator(paragraph_words[i + 1].as_ref()) {
            continue;
        }
        spans.push(Span::new(start, i + 1));
        start = i + 1;
    }
    if start < n {
        spans.push(Span::new(start, n));
    }
    spans
}

/// Parses one input line into a normalized example.
pub fn parse_example(record: &str) -> Result<NqExample, CorpusError> {
    let raw: RawRecord =
        serde_json::from_str(record).map_err(|e| CorpusError::MalformedRecord(e.to_string()))?;
    let short_answer = match (raw.answer_start_word, raw.answer_end_word) {
        (Some(start), Some(end)) => {
            if end <= start {
                return Err(CorpusError::MalformedRecord(format!(
                    "answer_end_word {end} must exceed answer_start_word {start}"
                )));
            }
            Some(Span::new(start, end))
        }
        (None, None) => None,
        _ => {
            return Err(CorpusError::MalformedRecord(
                "answer_start_word and answer_end_word must appear together".into(),
            ))
        }
    };
    NqExample::new(
        raw.id,
        tokenize_lower(&raw.question),
        tokenize(&raw.paragraph),
        short_answer,
    )
}

/// Inverse of [`parse_example`] on normalized examples.
pub fn serialize_example(example: &NqExample) -> String {
    let raw = RawRecord {
        id: example.id.clone(),
        question: example.question_words.join(" "),
        paragraph: example.paragraph_words.join(" "),
        answer_start_word: example.short_answer.map(|s| s.start),
        answer_end_word: example.short_answer.map(|s| s.end),
    };
    serde_json::to_string(&raw).expect("record serializes")
}

/// Returns the single sentence span that contains the whole short answer.
pub fn locate_answer_sentence(example: &NqExample) -> Result<Span, CorpusError> {
    let answer = example.short_answer.ok_or(CorpusError::NoAnswer)?;
    example
        .sentences
        .iter()
        .copied()
        .find(|s| s.covers(&answer))
        .ok_or(CorpusError::AnswerCrossesSentences { answer })
}

/// Counts from a batch load.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub read: usize,
    pub kept: usize,
    /// Examples dropped because the answer straddles two sentences.
    pub dropped_cross_sentence: usize,
}

/// Parses every non-blank line. Malformed lines abort the load; examples
/// whose answer crosses a sentence boundary are dropped and counted.
pub fn read_examples<R: BufRead>(reader: R) -> Result<(Vec<NqExample>, LoadStats), CorpusError> {
    let mut stats = LoadStats::default();
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        stats.read += 1;
        let example = parse_example(&line).map_err(|e| CorpusError::AtLine {
            line: n + 1,
            source: Box::new(e),
        })?;
        if example.short_answer.is_some() && locate_answer_sentence(&example).is_err() {
            stats.dropped_cross_sentence += 1;
            continue;
        }
        out.push(example);
    }
    stats.kept = out.len();
    Ok((out, stats))
}
