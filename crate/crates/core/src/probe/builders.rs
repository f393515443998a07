//! Heuristic builders for the five probing tasks.
//!
//! Every builder is a pure function of its inputs. Ties are broken by first
//! occurrence: first qualifying question term, first paragraph run, first
//! pronoun.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use super::{BoundaryExample, ProbeError, ProbeExample, ProbeRecord, SynonymLexicon, Task};
use crate::corpus::{locate_answer_sentence, CorpusError, NqExample, Side, Span};

pub const PRONOUNS: [&str; 16] = [
    "it", "he", "she", "they", "him", "her", "them", "his", "hers", "its", "their", "theirs",
    "this", "that", "these", "those",
];

pub const WH_WORDS: [&str; 3] = ["who", "when", "where"];

fn lowercase(words: &[String]) -> Vec<String> {
    words.iter().map(|w| w.to_lowercase()).collect()
}

fn is_punctuation(word: &str) -> bool {
    !word.chars().any(char::is_alphanumeric)
}

/// Start indices of every occurrence of `needle` in `haystack`.
fn occurrences<S: AsRef<str>>(haystack: &[String], needle: &[S]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    haystack
        .windows(needle.len())
        .enumerate()
        .filter(|(_, w)| w.iter().zip(needle).all(|(a, b)| a == b.as_ref()))
        .map(|(i, _)| i)
        .collect()
}

fn span_indices(starts: &[usize], width: usize) -> impl Iterator<Item = usize> + '_ {
    starts.iter().flat_map(move |&s| s..s + width)
}

fn pair_probe(
    task: Task,
    e: &NqExample,
    anchor_side: Side,
    anchor_span: Span,
    positive_span: Span,
    excluded: BTreeSet<usize>,
) -> Option<ProbeExample> {
    // A probe with nothing left to rank against is degenerate.
    if excluded.len() >= e.para_len() {
        return None;
    }
    Some(ProbeExample {
        task,
        example_id: e.id.clone(),
        anchor_side,
        anchor_span,
        positive_span,
        para_len: e.para_len(),
        excluded,
        question_words: e.question_words.clone(),
        paragraph_words: e.paragraph_words.clone(),
    })
}

/// Question term `t` paired with a lexicon synonym `s` found in the
/// paragraph. Terms that occur literally in the paragraph are skipped, so
/// the pair is never a trivial string match. Among the synonyms of a term
/// the longest one present wins, then the earliest.
pub fn build_synonym_probe(e: &NqExample, lex: &SynonymLexicon) -> Option<ProbeExample> {
    let para = lowercase(&e.paragraph_words);
    let q = &e.question_words;
    let max_len = lex.max_term_words();
    for start in 0..q.len() {
        for len in (1..=max_len.min(q.len() - start)).rev() {
            let term_words = &q[start..start + len];
            let Some(synonyms) = lex.synonyms(&term_words.join(" ")) else {
                continue;
            };
            if !occurrences(&para, term_words).is_empty() {
                continue;
            }
            let best = synonyms
                .iter()
                .filter_map(|s| {
                    let words: Vec<&str> = s.split(' ').collect();
                    let hits = occurrences(&para, &words);
                    (!hits.is_empty()).then_some((words.len(), hits))
                })
                .min_by_key(|(width, hits)| (std::cmp::Reverse(*width), hits[0]));
            if let Some((width, hits)) = best {
                let positive = Span::new(hits[0], hits[0] + width);
                let excluded = span_indices(&hits, width).collect();
                return pair_probe(
                    Task::Synonyms,
                    e,
                    Side::Question,
                    Span::new(start, start + len),
                    positive,
                    excluded,
                );
            }
        }
    }
    None
}

fn initial(word: &str) -> Option<char> {
    word.chars()
        .next()
        .filter(|c| c.is_alphabetic())
        .map(|c| c.to_lowercase().next().unwrap_or(c))
}

/// A question word whose letters are the initials of `len(word)` consecutive
/// paragraph words ("rbc" and "red blood cells"). Words that occur verbatim
/// in the paragraph are not treated as abbreviations.
pub fn build_abbreviation_probe(e: &NqExample) -> Option<ProbeExample> {
    let para = lowercase(&e.paragraph_words);
    let initials: Vec<Option<char>> = para.iter().map(|w| initial(w)).collect();
    for (qi, word) in e.question_words.iter().enumerate() {
        let letters: Vec<char> = word.chars().collect();
        let k = letters.len();
        if k < 2 || k > para.len() || !letters.iter().all(|c| c.is_alphabetic()) {
            continue;
        }
        if para.iter().any(|w| w == word) {
            continue;
        }
        let hit = (0..=para.len() - k).find(|&start| {
            initials[start..start + k]
                .iter()
                .zip(&letters)
                .all(|(i, c)| *i == Some(*c))
        });
        if let Some(start) = hit {
            let positive = Span::new(start, start + k);
            let hits = occurrences(&para, &para[positive.indices()]);
            return pair_probe(
                Task::Abbreviation,
                e,
                Side::Question,
                Span::new(qi, qi + 1),
                positive,
                span_indices(&hits, k).collect(),
            );
        }
    }
    None
}

/// Finds the question entity in the paragraph: the longest question n-gram
/// of two or more words, or a single word capitalized at its paragraph
/// occurrence. N-grams that also occur inside the answer sentence are
/// rejected.
fn find_entity(q: &[String], para: &[String], raw: &[String], sentence: Span) -> Option<Span> {
    for len in (1..=q.len()).rev() {
        for start in 0..=q.len() - len {
            let gram = &q[start..start + len];
            if gram.iter().any(|w| is_punctuation(w)) {
                continue;
            }
            let hits = occurrences(para, gram);
            if hits
                .iter()
                .any(|&p| Span::new(p, p + len).overlaps(&sentence))
            {
                continue;
            }
            let found = hits
                .into_iter()
                .find(|&p| len >= 2 || raw[p].chars().next().is_some_and(char::is_uppercase));
            if let Some(p) = found {
                return Some(Span::new(p, p + len));
            }
        }
    }
    None
}

/// Pronoun in the answer sentence paired with the question entity it most
/// plausibly refers to. The anchor is the pronoun (paragraph side).
pub fn build_coreference_probe(e: &NqExample, pronouns: &[&str]) -> Option<ProbeExample> {
    let sentence = locate_answer_sentence(e).ok()?;
    let para = lowercase(&e.paragraph_words);
    let pronoun = sentence
        .indices()
        .find(|&i| pronouns.contains(&para[i].as_str()))?;
    let entity = find_entity(&e.question_words, &para, &e.paragraph_words, sentence)?;
    let hits = occurrences(&para, &para[entity.indices()]);
    let mut excluded: BTreeSet<usize> = span_indices(&hits, entity.len()).collect();
    excluded.insert(pronoun);
    pair_probe(
        Task::Coreference,
        e,
        Side::Paragraph,
        Span::new(pronoun, pronoun + 1),
        entity,
        excluded,
    )
}

/// Leading wh-word ("who", "when", "where") paired with the short answer.
pub fn build_answer_type_probe(e: &NqExample) -> Option<ProbeExample> {
    let answer = e.short_answer?;
    let first = e.question_words.first()?;
    if !WH_WORDS.contains(&first.as_str()) {
        return None;
    }
    pair_probe(
        Task::AnswerType,
        e,
        Side::Question,
        Span::new(0, 1),
        answer,
        answer.indices().collect(),
    )
}

/// The answer sentence with the answer's first and last word as gold.
pub fn build_boundary_example(e: &NqExample) -> Option<BoundaryExample> {
    let answer = e.short_answer?;
    let context = locate_answer_sentence(e).ok()?;
    Some(BoundaryExample {
        example_id: e.id.clone(),
        context,
        gold_start: answer.start,
        gold_end: answer.end - 1,
        question_words: e.question_words.clone(),
        paragraph_words: e.paragraph_words.clone(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildOutput {
    #[serde(skip)]
    pub records: Vec<ProbeRecord>,
    pub built: usize,
    /// Skip reason -> count.
    pub skipped: BTreeMap<String, usize>,
}

fn needs_answer(task: Task) -> bool {
    matches!(task, Task::Coreference | Task::AnswerType | Task::Boundary)
}

fn build_one(
    task: Task,
    e: &NqExample,
    lex: Option<&SynonymLexicon>,
) -> Result<ProbeRecord, &'static str> {
    if needs_answer(task) {
        match locate_answer_sentence(e) {
            Err(CorpusError::NoAnswer) => return Err("no_answer"),
            Err(_) => return Err("answer_crosses_sentences"),
            Ok(_) => {}
        }
    }
    let record = match task {
        Task::Synonyms => {
            build_synonym_probe(e, lex.expect("checked by caller")).map(ProbeRecord::Pair)
        }
        Task::Abbreviation => build_abbreviation_probe(e).map(ProbeRecord::Pair),
        Task::Coreference => build_coreference_probe(e, &PRONOUNS).map(ProbeRecord::Pair),
        Task::AnswerType => build_answer_type_probe(e).map(ProbeRecord::Pair),
        Task::Boundary => build_boundary_example(e).map(ProbeRecord::Boundary),
    };
    record.ok_or("no_match")
}

/// Runs one builder over a batch. The synonyms task requires a lexicon.
pub fn build_probes(
    task: Task,
    examples: &[NqExample],
    lexicon: Option<&SynonymLexicon>,
) -> Result<BuildOutput, ProbeError> {
    if task == Task::Synonyms && lexicon.is_none() {
        return Err(ProbeError::Invalid {
            example_id: String::new(),
            reason: "the synonyms task needs a lexicon".into(),
        });
    }
    let results: Vec<_> = examples
        .par_iter()
        .map(|e| build_one(task, e, lexicon))
        .collect();
    let mut out = BuildOutput::default();
    for r in results {
        match r {
            Ok(record) => out.records.push(record),
            Err(reason) => *out.skipped.entry(reason.to_string()).or_default() += 1,
        }
    }
    out.built = out.records.len();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn example(question: &str, paragraph: &str, answer: Option<&str>) -> NqExample {
        let q = crate::corpus::tokenize_lower(question);
        let p = tokenize(paragraph);
        let span = answer.map(|a| {
            let a = tokenize(a);
            let start = p
                .windows(a.len())
                .position(|w| w == a.as_slice())
                .expect("answer in paragraph");
            Span::new(start, start + a.len())
        });
        NqExample::new("ex", q, p, span).unwrap()
    }

    #[test]
    fn synonym_phrase_pair() {
        let e = example(
            "what kind of political system does spain have?",
            "The form of government in Spain is a parliamentary monarchy, that is, a social democracy.",
            None,
        );
        let lex = SynonymLexicon::from_pairs([("political system", "form of government")]);
        let p = build_synonym_probe(&e, &lex).unwrap();
        assert_eq!(p.anchor_text(), "political system");
        assert_eq!(p.positive_text(), "form of government");
        assert_eq!(p.positive_span, Span::new(1, 4));
        assert_eq!(p.excluded, (1..4).collect());
    }

    #[test]
    fn synonym_no_pair() {
        let e = example("what is a cat?", "Dogs bark loudly.", None);
        let lex = SynonymLexicon::from_pairs([("cat", "feline")]);
        assert_eq!(build_synonym_probe(&e, &lex), None);
    }

    #[test]
    fn synonym_literal_occurrence_excluded() {
        let e = example(
            "who sold the car?",
            "The car, an automobile from 1960, was sold.",
            None,
        );
        let lex = SynonymLexicon::from_pairs([("car", "automobile")]);
        assert_eq!(build_synonym_probe(&e, &lex), None);
    }

    #[test]
    fn synonym_prefers_longest_and_excludes_duplicates() {
        let e = example(
            "who runs the firm?",
            "The company, a big company, is run by Ann.",
            None,
        );
        let lex = SynonymLexicon::from_pairs([("firm", "company"), ("firm", "big company")]);
        let p = build_synonym_probe(&e, &lex).unwrap();
        assert_eq!(p.positive_text(), "big company");
        assert_eq!(p.excluded, [4, 5].into_iter().collect());

        let lex = SynonymLexicon::from_pairs([("firm", "company")]);
        let p = build_synonym_probe(&e, &lex).unwrap();
        assert_eq!(p.positive_span, Span::new(1, 2));
        assert_eq!(p.excluded, [1, 5].into_iter().collect());
    }

    #[test]
    fn abbreviation_rbc() {
        let e = example(
            "what happens to the rbc in acute hemolytic reaction?",
            "It results from rapid destruction of the donor red blood cells by host antibodies.",
            None,
        );
        let p = build_abbreviation_probe(&e).unwrap();
        assert_eq!(p.anchor_text(), "rbc");
        assert_eq!(p.positive_text(), "red blood cells");
    }

    #[test]
    fn abbreviation_is_orthographic() {
        let e = example(
            "what is the usa?",
            "The united states accord was signed.",
            None,
        );
        let p = build_abbreviation_probe(&e).unwrap();
        assert_eq!(p.anchor_text(), "usa");
        assert_eq!(p.positive_text(), "united states accord");

        let e = example(
            "when was nasa founded?",
            "The north atlantic treaty organization was founded.",
            None,
        );
        assert_eq!(build_abbreviation_probe(&e), None);
    }

    const COREF: &str = "\"Locked Out of Heaven\" is a song by Bruno Mars. \
        It was released as the lead single from the album on October 1, 2012.";

    #[test]
    fn coreference_table_example() {
        let e = example(
            "when did locked out of heaven come out?",
            COREF,
            Some("October 1, 2012"),
        );
        let p = build_coreference_probe(&e, &PRONOUNS).unwrap();
        assert_eq!(p.anchor_side, Side::Paragraph);
        assert_eq!(p.anchor_text(), "It");
        assert_eq!(p.positive_text(), "Locked Out of Heaven");
        let mut expected: BTreeSet<usize> = (1..5).collect();
        expected.insert(p.anchor_span.start);
        assert_eq!(p.excluded, expected);
    }

    #[test]
    fn coreference_needs_pronoun() {
        let e = example(
            "when did locked out of heaven come out?",
            "\"Locked Out of Heaven\" is a song. The single came out on October 1, 2012.",
            Some("October 1, 2012"),
        );
        assert_eq!(build_coreference_probe(&e, &PRONOUNS), None);
    }

    #[test]
    fn coreference_entity_only_in_answer_sentence() {
        let e = example(
            "when did locked out of heaven come out?",
            "Bruno Mars wrote songs. It was Locked Out of Heaven, out on October 1, 2012.",
            Some("October 1, 2012"),
        );
        assert_eq!(build_coreference_probe(&e, &PRONOUNS), None);
    }

    #[test]
    fn coreference_entity_also_in_answer_sentence() {
        let e = example(
            "what kind of political system does spain have?",
            "Spain is in Europe. The government in Spain is a monarchy, that is, a democracy.",
            Some("a monarchy"),
        );
        assert_eq!(build_coreference_probe(&e, &PRONOUNS), None);
    }

    #[test]
    fn coreference_single_capitalized_word() {
        let e = example(
            "when did mars release it?",
            "The song was written by Mars. He released it in 2012.",
            Some("2012"),
        );
        let p = build_coreference_probe(&e, &PRONOUNS).unwrap();
        assert_eq!(p.anchor_text(), "He");
        assert_eq!(p.positive_text(), "Mars");

        // lowercase-only single words do not count as entities
        let e = example(
            "when did the song come out?",
            "A song was written. It came out in 2012.",
            Some("2012"),
        );
        assert_eq!(build_coreference_probe(&e, &PRONOUNS), None);
    }

    #[test]
    fn answer_type_wh_words() {
        let e = example(
            "when does the movie battle of the sexes come out?",
            "It was released in the United States on September 22, 2017, by Fox Searchlight Pictures.",
            Some("September 22, 2017"),
        );
        let p = build_answer_type_probe(&e).unwrap();
        assert_eq!(p.anchor_text(), "when");
        assert_eq!(p.positive_text(), "September 22 , 2017");
        assert_eq!(p.excluded.len(), p.n());
        assert_eq!(
            crate::probe::enumerate_negatives(&p).unwrap().len(),
            p.para_len - p.n()
        );

        let e = example(
            "what kind of political system does spain have?",
            "Spain is a monarchy.",
            Some("a monarchy"),
        );
        assert_eq!(build_answer_type_probe(&e), None);

        let e = example("who wrote it?", "Nobody knows.", None);
        assert_eq!(build_answer_type_probe(&e), None);
    }

    #[test]
    fn boundary_from_answer_sentence() {
        let e = example(
            "when did locked out of heaven come out?",
            COREF,
            Some("October 1, 2012"),
        );
        let b = build_boundary_example(&e).unwrap();
        assert_eq!(b.context, e.sentences[1]);
        assert_eq!(e.paragraph_words[b.gold_start], "October");
        assert_eq!(e.paragraph_words[b.gold_end], "2012");
        b.validate().unwrap();

        let e = example("who?", "No answer here.", None);
        assert_eq!(build_boundary_example(&e), None);

        let straddle = NqExample::new(
            "s",
            vec!["q".into()],
            ["a", "b.", "c", "d."]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            Some(Span::new(1, 3)),
        )
        .unwrap();
        assert_eq!(build_boundary_example(&straddle), None);
    }

    #[test]
    fn batch_build_counts_skips() {
        let examples = vec![
            example(
                "when did locked out of heaven come out?",
                COREF,
                Some("October 1, 2012"),
            ),
            example("who?", "No answer here.", None),
            example("what is it?", "Nothing. Really.", Some("Nothing")),
        ];
        let out = build_probes(Task::AnswerType, &examples, None).unwrap();
        assert_eq!(out.built, 1);
        assert_eq!(out.skipped.get("no_answer"), Some(&1));
        assert_eq!(out.skipped.get("no_match"), Some(&1));
        assert!(build_probes(Task::Synonyms, &examples, None).is_err());
        // deterministic
        assert_eq!(
            build_probes(Task::Boundary, &examples, None),
            build_probes(Task::Boundary, &examples, None)
        );
    }
}
