use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexiconError {
    #[error("lexicon line {line}: expected 'term<TAB>term', got {content:?}")]
    MalformedLexiconLine { line: usize, content: String },
    #[error("i/o error reading lexicon: {0}")]
    Io(String),
}

/// Symmetric synonym relation over lowercase terms of one or more words.
///
/// Built from a flat tab-separated pair file extracted offline (for example
/// from WordNet synsets); no lexical database is read at runtime.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: HashMap<String, BTreeSet<String>>,
    max_term_words: usize,
}

fn normalize(term: &str) -> String {
    term.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `a <-> b`. Self pairs are ignored.
    pub fn insert(&mut self, a: &str, b: &str) {
        let (a, b) = (normalize(a), normalize(b));
        if a.is_empty() || b.is_empty() || a == b {
            return;
        }
        for t in [&a, &b] {
            self.max_term_words = self.max_term_words.max(t.split(' ').count());
        }
        self.entries.entry(a.clone()).or_default().insert(b.clone());
        self.entries.entry(b).or_default().insert(a);
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut lex = Self::new();
        for (a, b) in pairs {
            lex.insert(a, b);
        }
        lex
    }

    /// Parses the `term<TAB>term` format. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, LexiconError> {
        let mut lex = Self::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| LexiconError::Io(e.to_string()))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                [a, b] if !a.trim().is_empty() && !b.trim().is_empty() => lex.insert(a, b),
                _ => {
                    return Err(LexiconError::MalformedLexiconLine {
                        line: n + 1,
                        content: line,
                    })
                }
            }
        }
        Ok(lex)
    }

    pub fn synonyms(&self, term: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(term)
    }

    pub fn contains_pair(&self, a: &str, b: &str) -> bool {
        self.synonyms(&normalize(a))
            .is_some_and(|s| s.contains(&normalize(b)))
    }

    /// Longest term length in words.
    pub fn max_term_words(&self) -> usize {
        self.max_term_words
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn load_synonym_lexicon(path: impl AsRef<Path>) -> Result<SynonymLexicon, LexiconError> {
    let file = File::open(path).map_err(|e| LexiconError::Io(e.to_string()))?;
    SynonymLexicon::from_reader(BufReader::new(file))
}
