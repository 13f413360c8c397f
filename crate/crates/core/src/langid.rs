//! Character n-gram multinomial naive Bayes language identifier.
//!
//! Features are character n-grams of each lowercased whitespace token padded
//! with one space on each side, so `t + " " + t` has exactly twice the
//! feature counts of `t`. Class priors are uniform, which makes the argmax
//! invariant under that duplication.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::io;

pub const UNKNOWN: &str = "UNKNOWN";
const MAGIC: &[u8] = b"FORGE-LANGID 1\n";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangIdConfig {
    pub min_n: usize,
    pub max_n: usize,
    pub smoothing: f64,
    pub min_examples: usize,
    /// Texts with fewer characters are classified as [`UNKNOWN`].
    pub min_chars: usize,
}

impl Default for LangIdConfig {
    fn default() -> Self {
        LangIdConfig {
            min_n: 1,
            max_n: 4,
            smoothing: 0.1,
            min_examples: 100,
            min_chars: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangModel {
    pub ngram_range: (usize, usize),
    pub smoothing: f64,
    pub min_chars: usize,
    pub labels: Vec<String>,
    features: Vec<String>,
    index: HashMap<String, usize>,
    /// Row-major `[label][feature]` log-probabilities.
    weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub lang: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LangIdTrainReport {
    pub n_examples: usize,
    pub skipped_empty: usize,
    pub n_features: usize,
}

fn for_each_ngram(text: &str, min_n: usize, max_n: usize, mut f: impl FnMut(&str)) {
    let lower = text.to_lowercase();
    let mut padded = String::new();
    for word in lower.split_whitespace() {
        padded.clear();
        padded.push(' ');
        padded.push_str(word);
        padded.push(' ');
        let bounds: Vec<usize> = padded
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(padded.len()))
            .collect();
        let n_chars = bounds.len() - 1;
        for n in min_n..=max_n {
            if n > n_chars {
                break;
            }
            for s in 0..=(n_chars - n) {
                let g = &padded[bounds[s]..bounds[s + n]];
                if g != " " {
                    f(g);
                }
            }
        }
    }
}

pub fn train_langid(
    labeled: &[(String, String)],
    config: &LangIdConfig,
    exec: Exec,
) -> Result<(LangModel, LangIdTrainReport)> {
    if config.smoothing <= 0.0 {
        return Err(Error::Config("smoothing must be positive".into()));
    }
    if config.min_n == 0 || config.min_n > config.max_n {
        return Err(Error::Config("invalid n-gram range".into()));
    }
    let mut report = LangIdTrainReport::default();
    let mut per_label: BTreeMap<&str, usize> = BTreeMap::new();
    let mut usable: Vec<(&str, &str)> = Vec::new();
    for (text, lang) in labeled {
        if text.trim().is_empty() {
            report.skipped_empty += 1;
            continue;
        }
        *per_label.entry(lang.as_str()).or_default() += 1;
        usable.push((text, lang));
    }
    if per_label.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "language identifier needs at least 2 distinct labels, got {}",
            per_label.len()
        )));
    }
    if let Some((l, n)) = per_label.iter().find(|(_, &n)| n < config.min_examples) {
        return Err(Error::InvalidInput(format!(
            "label {l} has {n} examples, fewer than the minimum {}",
            config.min_examples
        )));
    }
    let labels: Vec<String> = per_label.keys().map(|s| s.to_string()).collect();
    let label_idx: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let n_labels = labels.len();

    let shards = exec.map_chunks(&usable, 256, |chunk| {
        let mut counts: HashMap<String, Vec<u64>> = HashMap::new();
        for (text, lang) in chunk {
            let li = label_idx[lang];
            for_each_ngram(text, config.min_n, config.max_n, |g| {
                counts.entry(g.to_string()).or_insert_with(|| vec![0; n_labels])[li] += 1;
            });
        }
        counts
    });
    let mut counts: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for shard in shards {
        for (g, c) in shard {
            let e = counts.entry(g).or_insert_with(|| vec![0; n_labels]);
            for (a, b) in e.iter_mut().zip(c) {
                *a += b;
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::InvalidInput("no n-gram features extracted".into()));
    }
    let features: Vec<String> = counts.keys().cloned().collect();
    let n_features = features.len();
    let mut totals = vec![0u64; n_labels];
    for c in counts.values() {
        for (t, x) in totals.iter_mut().zip(c) {
            *t += x;
        }
    }
    let mut weights = vec![0.0; n_labels * n_features];
    for (fi, c) in counts.values().enumerate() {
        for li in 0..n_labels {
            let denom = totals[li] as f64 + config.smoothing * n_features as f64;
            weights[li * n_features + fi] = ((c[li] as f64 + config.smoothing) / denom).ln();
        }
    }
    report.n_examples = usable.len();
    report.n_features = n_features;
    let index = features.iter().enumerate().map(|(i, f)| (f.clone(), i)).collect();
    Ok((
        LangModel {
            ngram_range: (config.min_n, config.max_n),
            smoothing: config.smoothing,
            min_chars: config.min_chars,
            labels,
            features,
            index,
            weights,
        },
        report,
    ))
}

impl LangModel {
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Log-likelihood per label; n-grams outside the vocabulary are ignored.
    pub fn log_scores(&self, text: &str) -> Vec<f64> {
        let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
        for_each_ngram(text, self.ngram_range.0, self.ngram_range.1, |g| {
            if let Some(&i) = self.index.get(g) {
                *counts.entry(i).or_default() += 1;
            }
        });
        let nf = self.features.len();
        (0..self.labels.len())
            .map(|li| {
                let row = &self.weights[li * nf..(li + 1) * nf];
                counts.iter().map(|(&i, &c)| c as f64 * row[i]).sum()
            })
            .collect()
    }

    /// Posterior over labels (softmax of the log-likelihoods).
    pub fn posteriors(&self, text: &str) -> Vec<f64> {
        let s = self.log_scores(text);
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    pub fn classify(&self, text: &str) -> Prediction {
        if text.trim().chars().count() < self.min_chars {
            return Prediction {
                lang: UNKNOWN.to_string(),
                score: 0.0,
            };
        }
        let p = self.posteriors(text);
        let (best, score) = p.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc },
        );
        Prediction {
            lang: self.labels[best].clone(),
            score,
        }
    }

    pub fn classify_batch<S: AsRef<str> + Sync>(&self, texts: &[S], exec: Exec) -> Vec<Prediction> {
        exec.map(texts, |t| self.classify(t.as_ref()))
    }

    /// Indices of texts predicted as `keep` with posterior at least `threshold`.
    pub fn keep_indices<S: AsRef<str> + Sync>(
        &self,
        texts: &[S],
        keep: &str,
        threshold: f64,
        exec: Exec,
    ) -> Vec<usize> {
        self.classify_batch(texts, exec)
            .into_iter()
            .enumerate()
            .filter(|(_, p)| p.lang == keep && p.score >= threshold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Serialize as a JSON header line followed by little-endian f64 weights.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            labels: self.labels.clone(),
            ngram_range: self.ngram_range,
            smoothing: self.smoothing,
            min_chars: self.min_chars,
            features: self.features.clone(),
        };
        let mut out = MAGIC.to_vec();
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for w in &self.weights {
            out.write_all(&w.to_le_bytes()).expect("vec write");
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::Format("not a language model file".into()))?;
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("missing model header".into()))?;
        let header: ModelHeader = serde_json::from_slice(&rest[..nl])?;
        let block = &rest[nl + 1..];
        let n = header.labels.len() * header.features.len();
        if block.len() != n * 8 {
            return Err(Error::Format(format!(
                "weight block has {} bytes, expected {}",
                block.len(),
                n * 8
            )));
        }
        let weights = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let index = header
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i))
            .collect();
        Ok(LangModel {
            ngram_range: header.ngram_range,
            smoothing: header.smoothing,
            min_chars: header.min_chars,
            labels: header.labels,
            features: header.features,
            index,
            weights,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_bytes(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    labels: Vec<String>,
    ngram_range: (usize, usize),
    smoothing: f64,
    min_chars: usize,
    features: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<(String, String)> {
        let mut v = Vec::new();
        for i in 0..120 {
            v.push((format!("abc cab bca {}", "ab".repeat(i % 5 + 1)), "x".to_string()));
            v.push((format!("xyz zyx yzx {}", "zy".repeat(i % 5 + 1)), "y".to_string()));
        }
        v
    }

    fn cfg() -> LangIdConfig {
        LangIdConfig::default()
    }

    #[test]
    fn ngrams_are_padded_per_word() {
        let mut g = Vec::new();
        for_each_ngram("Ab", 1, 2, |x| g.push(x.to_string()));
        assert_eq!(g, vec!["a", "b", " a", "ab", "b "]);
    }

    #[test]
    fn single_label_is_an_error() {
        let data: Vec<_> = (0..200).map(|i| (format!("mot {i}"), "fr".to_string())).collect();
        assert!(train_langid(&data, &cfg(), Exec::Sequential).is_err());
    }

    #[test]
    fn too_few_examples_is_an_error() {
        let mut data = toy();
        data.truncate(100);
        assert!(train_langid(&data, &cfg(), Exec::Sequential).is_err());
    }

    #[test]
    fn empty_texts_are_skipped() {
        let mut data = toy();
        data.push(("   ".into(), "x".into()));
        let (_, r) = train_langid(&data, &cfg(), Exec::Sequential).unwrap();
        assert_eq!(r.skipped_empty, 1);
    }

    #[test]
    fn classify_basics() {
        let (m, _) = train_langid(&toy(), &cfg(), Exec::Parallel).unwrap();
        let p = m.classify("cab abc");
        assert_eq!(p.lang, "x");
        assert!(p.score > 0.5 && p.score <= 1.0);
        assert_eq!(m.classify("cab abc"), p);
        assert_eq!(m.classify("ab").lang, UNKNOWN);
        assert_eq!(m.classify("").score, 0.0);
        let s: f64 = m.posteriors("zyx abc").iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn serialization_is_bitwise() {
        let (m, _) = train_langid(&toy(), &cfg(), Exec::Sequential).unwrap();
        let m2 = LangModel::from_bytes(&m.to_bytes().unwrap()).unwrap();
        assert_eq!(m, m2);
        let a = m.posteriors("abc zyx yzx");
        let b = m2.posteriors("abc zyx yzx");
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!(LangModel::from_bytes(b"junk").is_err());
    }
}
