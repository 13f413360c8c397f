//! Sentence splitting, quality filtering, exact deduplication and seeded subsampling.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{word_count, Document};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hashing::content_id;
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    pub n_chars: usize,
    pub alpha_ratio: f64,
}

impl Sentence {
    pub fn new(doc_id: &str, index: usize, text: &str) -> Self {
        let text = text.trim();
        let (alpha, _, visible) = char_classes(text);
        Sentence {
            doc_id: doc_id.to_string(),
            index,
            text: text.to_string(),
            n_chars: text.chars().count(),
            alpha_ratio: ratio(alpha, visible),
        }
    }

    pub fn n_words(&self) -> u64 {
        word_count(&self.text)
    }

    pub fn digit_ratio(&self) -> f64 {
        let (_, digits, visible) = char_classes(&self.text);
        ratio(digits, visible)
    }

    /// Stable hash used in rejection reports.
    pub fn hash(&self) -> String {
        content_id(&[&self.text])
    }
}

// Ratios are taken over non-whitespace characters.
fn char_classes(text: &str) -> (usize, usize, usize) {
    let mut alpha = 0;
    let mut digits = 0;
    let mut visible = 0;
    for c in text.chars() {
        if c.is_whitespace() {
            continue;
        }
        visible += 1;
        if c.is_alphabetic() {
            alpha += 1;
        } else if c.is_numeric() {
            digits += 1;
        }
    }
    (alpha, digits, visible)
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

const ABBREVIATIONS: &[&str] = &[
    "Dr", "Drs", "Dres", "Pr", "Prs", "Prof", "M", "MM", "Mme", "Mmes", "Mlle", "Mlles", "Me", "Mgr", "St", "Ste",
    "Mr", "Mrs", "Ms", "Jr", "Sr", "cf", "Cf", "fig", "Fig", "vol", "Vol", "p", "pp", "art", "Art", "av", "éd", "env",
    "approx", "ex", "Ex", "chap", "no", "No", "tél", "Tél", "Inc", "vs",
];

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '?' | '!' | '…')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | '»' | '”' | ')' | ']')
}

fn starts_sentence(c: char) -> bool {
    c.is_uppercase() || c.is_numeric() || matches!(c, '«' | '"' | '“' | '(' | '-' | '—')
}

/// Word immediately before position `end` (exclusive), stripped of opening punctuation.
fn word_before(chars: &[(usize, char)], end: usize) -> String {
    let mut start = end;
    while start > 0 && !chars[start - 1].1.is_whitespace() {
        start -= 1;
    }
    chars[start..end]
        .iter()
        .map(|&(_, c)| c)
        .skip_while(|c| matches!(c, '(' | '[' | '«' | '"' | '“' | '\''))
        .collect()
}

/// Split a text into sentences with the terminal-punctuation rule.
///
/// A boundary is placed after a run of `.?!…` (plus closing quotes/brackets)
/// that is followed by whitespace and then an uppercase letter, digit or
/// opening quote. A single period after a known abbreviation or a lone
/// uppercase initial does not end a sentence.
pub fn split_text(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut seg_start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i].1;
        if !is_terminal(c) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && is_terminal(chars[j].1) {
            j += 1;
        }
        let single_period = c == '.' && j == i + 1;
        while j < chars.len() && is_closer(chars[j].1) {
            j += 1;
        }
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let boundary = k > j && k < chars.len() && starts_sentence(chars[k].1) && {
            if single_period {
                let w = word_before(&chars, i);
                let initial = w.chars().count() == 1 && w.chars().all(char::is_uppercase);
                !(initial || ABBREVIATIONS.contains(&w.as_str()))
            } else {
                true
            }
        };
        if boundary {
            let end = chars[j - 1].0 + chars[j - 1].1.len_utf8();
            let s = text[seg_start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            seg_start = chars[k].0;
            i = k;
        } else {
            i = j.max(i + 1);
        }
    }
    let rest = text[seg_start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

pub fn split_sentences(doc: &Document) -> Vec<Sentence> {
    split_text(&doc.text)
        .into_iter()
        .enumerate()
        .map(|(i, s)| Sentence::new(&doc.id, i, s))
        .collect()
}

/// Split every document, preserving document order.
pub fn split_documents(docs: &[Document], exec: Exec) -> Vec<Sentence> {
    exec.map(docs, split_sentences).into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_chars: usize,
    pub min_words: usize,
    pub min_alpha_ratio: f64,
    pub max_digit_ratio: f64,
    pub dedup: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            min_chars: 15,
            min_words: 3,
            min_alpha_ratio: 0.6,
            max_digit_ratio: 0.4,
            dedup: true,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.min_alpha_ratio) || !in_unit(self.max_digit_ratio) {
            return Err(Error::Config("filter ratios must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// First failing threshold rule, ignoring deduplication.
    pub fn check(&self, s: &Sentence) -> Option<RejectReason> {
        if s.n_chars < self.min_chars {
            Some(RejectReason::TooShort)
        } else if (s.n_words() as usize) < self.min_words {
            Some(RejectReason::TooFewWords)
        } else if s.alpha_ratio < self.min_alpha_ratio {
            Some(RejectReason::LowAlpha)
        } else if s.digit_ratio() > self.max_digit_ratio {
            Some(RejectReason::HighDigit)
        } else {
            None
        }
    }
}

/// Rejection reasons, in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    TooShort,
    TooFewWords,
    LowAlpha,
    HighDigit,
    Duplicate,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::TooShort => "TOO_SHORT",
            RejectReason::TooFewWords => "TOO_FEW_WORDS",
            RejectReason::LowAlpha => "LOW_ALPHA",
            RejectReason::HighDigit => "HIGH_DIGIT",
            RejectReason::Duplicate => "DUPLICATE",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<Sentence>,
    pub rejected: Vec<(Sentence, RejectReason)>,
}

pub fn filter(sentences: Vec<Sentence>, policy: &FilterPolicy, exec: Exec) -> Result<FilterOutcome> {
    policy.validate()?;
    let verdicts = exec.map(&sentences, |s| policy.check(s));
    let mut seen = HashSet::new();
    let mut out = FilterOutcome::default();
    for (s, v) in sentences.into_iter().zip(verdicts) {
        match v {
            Some(r) => out.rejected.push((s, r)),
            None if policy.dedup && !seen.insert(s.text.clone()) => out.rejected.push((s, RejectReason::Duplicate)),
            None => out.kept.push(s),
        }
    }
    Ok(out)
}

/// Seeded uniform shuffle, then the shortest prefix reaching `target_words`.
pub fn sample(sentences: &[Sentence], target_words: u64, seed: u64) -> Result<Vec<Sentence>> {
    let words: Vec<u64> = sentences.iter().map(Sentence::n_words).collect();
    let available: u64 = words.iter().sum();
    if target_words > available {
        return Err(Error::SampleTooLarge {
            target: target_words,
            available,
        });
    }
    let order = shuffled_indices(sentences.len(), seed);
    let mut out = Vec::new();
    let mut acc = 0u64;
    for i in order {
        if acc >= target_words {
            break;
        }
        acc += words[i];
        out.push(sentences[i].clone());
    }
    Ok(out)
}

/// The permutation used by [`sample`].
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx
}

#[derive(Serialize, Deserialize)]
struct SentenceRecord {
    doc_id: String,
    index: usize,
    text: String,
}

pub fn save_sentences(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let recs: Vec<SentenceRecord> = sentences
        .iter()
        .map(|s| SentenceRecord {
            doc_id: s.doc_id.clone(),
            index: s.index,
            text: s.text.clone(),
        })
        .collect();
    io::write_jsonl(path, &recs)
}

pub fn load_sentences(path: &Path) -> Result<Vec<Sentence>> {
    Ok(io::read_jsonl::<SentenceRecord>(path)?
        .into_iter()
        .map(|r| Sentence::new(&r.doc_id, r.index, &r.text))
        .collect())
}

/// Rejection report as CSV with columns `sentence_hash,reason`.
pub fn save_rejections(path: &Path, rejected: &[(Sentence, RejectReason)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sentence_hash", "reason"])?;
    for (s, r) in rejected {
        w.write_record([s.hash(), r.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv flush: {e}")))?;
    io::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(texts: &[&str]) -> Vec<Sentence> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Sentence::new("d", i, t))
            .collect()
    }

    #[test]
    fn basic_split() {
        assert_eq!(split_text("Bonjour. Ça va?"), vec!["Bonjour.", "Ça va?"]);
        assert_eq!(split_text("mot"), vec!["mot"]);
    }

    #[test]
    fn abbreviation_and_decimal_guards() {
        assert_eq!(split_text("Le Dr. Martin dort."), vec!["Le Dr. Martin dort."]);
        assert_eq!(
            split_text("Dose de 2.5 mg. Contrôle demain."),
            vec!["Dose de 2.5 mg.", "Contrôle demain."]
        );
        assert_eq!(split_text("Vu par J. Dupont hier."), vec!["Vu par J. Dupont hier."]);
        assert_eq!(split_text("Quoi?! Non… Si."), vec!["Quoi?!", "Non…", "Si."]);
        assert_eq!(split_text("fin. minuscule"), vec!["fin. minuscule"]);
    }

    #[test]
    fn sentence_fields() {
        let s = Sentence::new("d", 0, "  ab 12  ");
        assert_eq!(s.text, "ab 12");
        assert_eq!(s.n_chars, 5);
        assert!((s.alpha_ratio - 0.5).abs() < 1e-12);
        assert!((s.digit_ratio() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn filter_reason_codes() {
        let p = FilterPolicy {
            min_chars: 5,
            min_words: 1,
            min_alpha_ratio: 0.5,
            max_digit_ratio: 1.0,
            dedup: true,
        };
        let out = filter(sents(&["a", "%%%$$$###", "bonjour", "bonjour"]), &p, Exec::Sequential).unwrap();
        let reasons: Vec<_> = out.rejected.iter().map(|(_, r)| *r).collect();
        assert_eq!(
            reasons,
            vec![RejectReason::TooShort, RejectReason::LowAlpha, RejectReason::Duplicate]
        );
        assert_eq!(out.kept.len(), 1);
    }

    #[test]
    fn bad_policy_is_rejected() {
        let p = FilterPolicy {
            min_alpha_ratio: 1.5,
            ..Default::default()
        };
        assert!(filter(vec![], &p, Exec::Sequential).is_err());
    }

    #[test]
    fn sample_full_corpus_is_permutation() {
        let s = sents(&["un deux", "trois", "quatre cinq six", "sept"]);
        let total: u64 = s.iter().map(Sentence::n_words).sum();
        let mut out = sample(&s, total, 3).unwrap();
        assert_eq!(out.len(), 4);
        out.sort_by_key(|x| x.index);
        assert_eq!(out, s);
        assert_eq!(sample(&s, 3, 9).unwrap(), sample(&s, 3, 9).unwrap());
        let err = sample(&s, total + 1, 0).unwrap_err();
        assert!(matches!(err, Error::SampleTooLarge { available: 7, .. }));
    }
}
