//! Byte-pair-encoding subword tokenizer trained on raw sentences.
//!
//! There is no word-level pre-tokenization. Spaces become the visible
//! meta-symbol `▁`, which may only start a token: a pair `(l, r)` whose right
//! side begins with `▁` is never merged, so every learned token carries the
//! space marker as a prefix. Pair counting runs over distinct chunks (maximal
//! runs that start at a `▁`), which is equivalent to counting over the raw
//! stream under that rule.
//!
//! Vocabulary layout: ids 0-4 are the specials, then 256 byte-fallback tokens
//! (when enabled), then the sorted base characters, then one entry per merge
//! whose output string is new.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hashing::sha256_hex;
use crate::io;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const MASK: TokenId = 4;
pub const N_SPECIALS: usize = 5;
pub const SPECIAL_TOKENS: [&str; N_SPECIALS] = ["<pad>", "<unk>", "<s>", "</s>", "<mask>"];
pub const META: char = '▁';
const META_STR: &str = "▁";
const N_BYTES: usize = 256;

/// Default vocabulary budget at desk scale.
pub const DESK_VOCAB: usize = 2_000;
/// Vocabulary size used by the full-size models.
pub const PAPER_VOCAB: usize = 32_000;

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpeConfig {
    pub vocab_budget: usize,
    pub byte_fallback: bool,
}

impl Default for BpeConfig {
    fn default() -> Self {
        BpeConfig {
            vocab_budget: DESK_VOCAB,
            byte_fallback: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubwordModel {
    vocab: Vec<String>,
    merges: Vec<(String, String)>,
    byte_fallback: bool,
    fingerprint: String,
    index: HashMap<String, TokenId>,
    ranks: HashMap<(TokenId, TokenId), (usize, TokenId)>,
}

impl PartialEq for SubwordModel {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab && self.merges == other.merges && self.byte_fallback == other.byte_fallback
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoding {
    pub ids: Vec<TokenId>,
    /// Byte spans into the source text.
    pub offsets: Vec<(usize, usize)>,
}

/// Split text into training chunks: `▁` replaces spaces and starts a new chunk.
/// A literal `▁` in the input acts as a hard break and is dropped.
fn chunks_of(text: &str, mut f: impl FnMut(&str)) {
    let mut cur = String::new();
    for c in text.chars() {
        match c {
            ' ' => {
                if !cur.is_empty() {
                    f(&cur);
                }
                cur.clear();
                cur.push(META);
            }
            META => {
                if !cur.is_empty() {
                    f(&cur);
                }
                cur.clear();
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        f(&cur);
    }
}

fn mergeable(right: &str) -> bool {
    !right.starts_with(META)
}

#[derive(Debug)]
struct HeapEntry {
    count: u64,
    left: Rc<str>,
    right: Rc<str>,
    pair: (TokenId, TokenId),
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // Highest count first; among equal counts the lexicographically smallest pair.
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

struct Word {
    symbols: Vec<TokenId>,
    freq: u64,
}

fn apply_merge(symbols: &[TokenId], pair: (TokenId, TokenId), to: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(to);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    out
}

/// Minimum feasible budget for a corpus.
pub fn minimum_budget<S: AsRef<str>>(sentences: &[S], byte_fallback: bool) -> usize {
    let mut alphabet = HashSet::new();
    for s in sentences {
        chunks_of(s.as_ref(), |c| alphabet.extend(c.chars()));
    }
    N_SPECIALS + if byte_fallback { N_BYTES } else { 0 } + alphabet.len()
}

/// Train a BPE model by greedy most-frequent-pair merging.
///
/// Ties between equally frequent pairs go to the lexicographically smallest
/// `(left, right)` string pair.
pub fn train_bpe<S: AsRef<str> + Sync>(sentences: &[S], config: &BpeConfig, exec: Exec) -> Result<SubwordModel> {
    if sentences.iter().all(|s| s.as_ref().is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let partial = exec.map_chunks(sentences, 512, |part| {
        let mut m: HashMap<String, u64> = HashMap::new();
        for s in part {
            chunks_of(s.as_ref(), |c| *m.entry(c.to_string()).or_default() += 1);
        }
        m
    });
    let mut chunk_freq: HashMap<String, u64> = HashMap::new();
    for m in partial {
        for (k, v) in m {
            *chunk_freq.entry(k).or_default() += v;
        }
    }
    let mut chunk_list: Vec<(String, u64)> = chunk_freq.into_iter().collect();
    chunk_list.sort();

    let mut alphabet: Vec<char> = chunk_list
        .iter()
        .flat_map(|(c, _)| c.chars())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    alphabet.sort_unstable();

    let mut vocab: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    if config.byte_fallback {
        vocab.extend((0..=255u8).map(byte_token));
    }
    let base_start = vocab.len();
    vocab.extend(alphabet.iter().map(|c| c.to_string()));
    let minimum = vocab.len();
    if config.vocab_budget < minimum {
        return Err(Error::BudgetTooSmall {
            budget: config.vocab_budget,
            minimum,
        });
    }
    let mut index: HashMap<String, TokenId> = vocab[base_start..]
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), (base_start + i) as TokenId))
        .collect();
    let mut strs: Vec<Rc<str>> = vocab.iter().map(|s| Rc::from(s.as_str())).collect();

    let mut words: Vec<Word> = chunk_list
        .iter()
        .map(|(c, f)| Word {
            symbols: c.chars().map(|ch| index[ch.encode_utf8(&mut [0; 4]) as &str]).collect(),
            freq: *f,
        })
        .collect();

    let mut can_merge: Vec<bool> = strs.iter().map(|s| mergeable(s)).collect();

    let partial = exec.map_chunks(&words, 1024, |ws| {
        let mut pc: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        for w in ws {
            for p in w.symbols.windows(2) {
                if can_merge[p[1] as usize] {
                    *pc.entry((p[0], p[1])).or_default() += w.freq;
                }
            }
        }
        pc
    });
    let mut pair_counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
    for pc in partial {
        for (k, v) in pc {
            *pair_counts.entry(k).or_default() += v;
        }
    }
    let mut pair_where: HashMap<(TokenId, TokenId), Vec<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.symbols.windows(2) {
            if can_merge[p[1] as usize] {
                let e = pair_where.entry((p[0], p[1])).or_default();
                if e.last() != Some(&wi) {
                    e.push(wi);
                }
            }
        }
    }
    let mut heap: BinaryHeap<HeapEntry> = pair_counts
        .iter()
        .map(|(&pair, &count)| HeapEntry {
            count,
            left: strs[pair.0 as usize].clone(),
            right: strs[pair.1 as usize].clone(),
            pair,
        })
        .collect();

    let mut merges: Vec<(String, String)> = Vec::new();
    while vocab.len() < config.vocab_budget {
        let Some(top) = heap.pop() else { break };
        let current = pair_counts.get(&top.pair).copied().unwrap_or(0);
        if current == 0 || current != top.count {
            continue;
        }
        let (l, r) = top.pair;
        let merged = format!("{}{}", strs[l as usize], strs[r as usize]);
        let to = match index.get(&merged) {
            Some(&id) => id,
            None => {
                let id = vocab.len() as TokenId;
                index.insert(merged.clone(), id);
                strs.push(Rc::from(merged.as_str()));
                can_merge.push(mergeable(&merged));
                vocab.push(merged);
                id
            }
        };
        merges.push((strs[l as usize].to_string(), strs[r as usize].to_string()));

        let affected = pair_where.remove(&top.pair).unwrap_or_default();
        let mut touched: HashSet<(TokenId, TokenId)> = HashSet::new();
        for wi in affected {
            let w = &mut words[wi];
            if !w.symbols.windows(2).any(|p| p[0] == l && p[1] == r) {
                continue;
            }
            let new_syms = apply_merge(&w.symbols, top.pair, to);
            for p in w.symbols.windows(2) {
                if can_merge[p[1] as usize] {
                    let k = (p[0], p[1]);
                    *pair_counts.get_mut(&k).expect("counted pair") -= w.freq;
                    touched.insert(k);
                }
            }
            for p in new_syms.windows(2) {
                if can_merge[p[1] as usize] {
                    let k = (p[0], p[1]);
                    *pair_counts.entry(k).or_default() += w.freq;
                    touched.insert(k);
                    if k != top.pair {
                        let e = pair_where.entry(k).or_default();
                        if e.last() != Some(&wi) {
                            e.push(wi);
                        }
                    }
                }
            }
            w.symbols = new_syms;
        }
        pair_counts.remove(&top.pair);
        for k in touched {
            if k == top.pair {
                continue;
            }
            let c = pair_counts.get(&k).copied().unwrap_or(0);
            if c == 0 {
                pair_counts.remove(&k);
            } else {
                heap.push(HeapEntry {
                    count: c,
                    left: strs[k.0 as usize].clone(),
                    right: strs[k.1 as usize].clone(),
                    pair: k,
                });
            }
        }
    }
    SubwordModel::from_parts(vocab, merges, config.byte_fallback)
}

impl SubwordModel {
    /// Assemble and validate a model from its vocabulary and merge list.
    pub fn from_parts(vocab: Vec<String>, merges: Vec<(String, String)>, byte_fallback: bool) -> Result<Self> {
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if vocab.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Format(format!("id {i} must be the special token {s}")));
            }
        }
        let mut base_start = N_SPECIALS;
        if byte_fallback {
            for b in 0..=255u8 {
                if vocab.get(N_SPECIALS + b as usize) != Some(&byte_token(b)) {
                    return Err(Error::Format(format!("missing byte token {}", byte_token(b))));
                }
            }
            base_start += N_BYTES;
        }
        let mut base_end = base_start;
        while base_end < vocab.len() && vocab[base_end].chars().count() == 1 {
            base_end += 1;
        }
        let mut index: HashMap<String, TokenId> = HashMap::new();
        for (i, s) in vocab.iter().enumerate().skip(base_start) {
            if index.insert(s.clone(), i as TokenId).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry {s:?}")));
            }
        }
        // Replaying the merges must reconstruct the non-base vocabulary exactly.
        let mut ranks = HashMap::new();
        let mut next = base_end;
        for (rank, (l, r)) in merges.iter().enumerate() {
            let (Some(&li), Some(&ri)) = (index.get(l), index.get(r)) else {
                return Err(Error::Format(format!("merge {rank} uses unknown token")));
            };
            if li as usize >= next || ri as usize >= next {
                return Err(Error::Format(format!("merge {rank} uses a token before it exists")));
            }
            let out = format!("{l}{r}");
            let oi = match index.get(&out) {
                Some(&oi) if (oi as usize) < next => oi,
                Some(&oi) if oi as usize == next => {
                    next += 1;
                    oi
                }
                _ => {
                    return Err(Error::Format(format!(
                        "merge {rank} output {out:?} is not the next vocabulary entry"
                    )))
                }
            };
            ranks.entry((li, ri)).or_insert((rank, oi));
        }
        if next != vocab.len() {
            return Err(Error::Format(format!(
                "merges reconstruct {next} entries but the vocabulary has {}",
                vocab.len()
            )));
        }
        let fingerprint = fingerprint_of(&vocab, &merges, byte_fallback);
        Ok(SubwordModel {
            vocab,
            merges,
            byte_fallback,
            fingerprint,
            index,
            ranks,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn byte_fallback(&self) -> bool {
        self.byte_fallback
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < N_SPECIALS
    }

    pub fn is_byte(&self, id: TokenId) -> bool {
        self.byte_fallback && (N_SPECIALS..N_SPECIALS + N_BYTES).contains(&(id as usize))
    }

    pub fn token_id(&self, s: &str) -> Option<TokenId> {
        self.index.get(s).copied()
    }

    /// Learned vocabulary: everything except specials and byte-fallback tokens.
    pub fn learned_vocab(&self) -> &[String] {
        let start = N_SPECIALS + if self.byte_fallback { N_BYTES } else { 0 };
        &self.vocab[start..]
    }

    pub fn encode(&self, text: &str) -> Encoding {
        let mut enc = Encoding::default();
        let mut chunk: Vec<(TokenId, usize, usize)> = Vec::new();
        let flush = |chunk: &mut Vec<(TokenId, usize, usize)>, enc: &mut Encoding| {
            self.merge_chunk(chunk);
            for &(id, s, e) in chunk.iter() {
                enc.ids.push(id);
                enc.offsets.push((s, e));
            }
            chunk.clear();
        };
        for (pos, c) in text.char_indices() {
            let end = pos + c.len_utf8();
            if c == ' ' || c == META {
                flush(&mut chunk, &mut enc);
            }
            let known = match c {
                ' ' => self.index.get(META_STR).copied(),
                META => None,
                _ => self.index.get(c.encode_utf8(&mut [0; 4]) as &str).copied(),
            };
            match known {
                Some(id) => chunk.push((id, pos, end)),
                None if self.byte_fallback => {
                    let mut buf = [0; 4];
                    for (k, b) in c.encode_utf8(&mut buf).bytes().enumerate() {
                        chunk.push(((N_SPECIALS + b as usize) as TokenId, pos + k, pos + k + 1));
                    }
                }
                None => chunk.push((UNK, pos, end)),
            }
            if c == META {
                flush(&mut chunk, &mut enc);
            }
        }
        flush(&mut chunk, &mut enc);
        enc
    }

    fn merge_chunk(&self, syms: &mut Vec<(TokenId, usize, usize)>) {
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].0, w[1].0)).map(|&(r, to)| (r, i, to)))
                .min();
            let Some((_, i, to)) = best else { break };
            let end = syms[i + 1].2;
            syms[i] = (to, syms[i].1, end);
            syms.remove(i + 1);
        }
    }

    pub fn encode_batch<S: AsRef<str> + Sync>(&self, texts: &[S], exec: Exec) -> Vec<Encoding> {
        exec.map(texts, |t| self.encode(t.as_ref()))
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut bytes = Vec::new();
        for (position, &id) in ids.iter().enumerate() {
            let i = id as usize;
            if i >= self.vocab.len() {
                return Err(Error::IdOutOfRange {
                    id,
                    position,
                    vocab_size: self.vocab.len(),
                });
            }
            if id == UNK {
                bytes.extend_from_slice("\u{FFFD}".as_bytes());
            } else if self.is_special(id) {
                continue;
            } else if self.is_byte(id) {
                bytes.push((i - N_SPECIALS) as u8);
            } else {
                for c in self.vocab[i].chars() {
                    let c = if c == META { ' ' } else { c };
                    bytes.extend_from_slice(c.encode_utf8(&mut [0; 4]).as_bytes());
                }
            }
        }
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    /// Write `vocab.txt` and `merges.txt` into a directory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir_all(dir)?;
        let mut v = String::new();
        for t in &self.vocab {
            v.push_str(&escape(t));
            v.push('\n');
        }
        let mut m = String::new();
        for (l, r) in &self.merges {
            m.push_str(&escape(l));
            m.push(' ');
            m.push_str(&escape(r));
            m.push('\n');
        }
        io::write_atomic(&dir.join("vocab.txt"), v.as_bytes())?;
        io::write_atomic(&dir.join("merges.txt"), m.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let v = io::read_string(&dir.join("vocab.txt"))?;
        let m = io::read_string(&dir.join("merges.txt"))?;
        let vocab = v.lines().map(unescape).collect::<Result<Vec<_>>>()?;
        let merges = m
            .lines()
            .filter(|l| !l.is_empty())
            .map(|line| {
                let (l, r) = line
                    .split_once(' ')
                    .ok_or_else(|| Error::Format(format!("bad merge line {line:?}")))?;
                Ok((unescape(l)?, unescape(r)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let byte_fallback = vocab.get(N_SPECIALS).map(String::as_str) == Some("<0x00>");
        Self::from_parts(vocab, merges, byte_fallback)
    }
}

fn fingerprint_of(vocab: &[String], merges: &[(String, String)], byte_fallback: bool) -> String {
    let mut buf = String::new();
    buf.push_str(if byte_fallback { "bf1\n" } else { "bf0\n" });
    for t in vocab {
        buf.push_str(&escape(t));
        buf.push('\n');
    }
    buf.push('\n');
    for (l, r) in merges {
        buf.push_str(&escape(l));
        buf.push(' ');
        buf.push_str(&escape(r));
        buf.push('\n');
    }
    sha256_hex(buf.as_bytes())
}

/// Escape backslashes and control characters so each token fits on one line.
pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            ' ' => out.push_str("\\s"),
            c if c.is_control() => out.push_str(&format!("\\u{{{:x}}}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match it.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('t') => out.push('\t'),
            Some('s') => out.push(' '),
            Some('u') => {
                if it.next() != Some('{') {
                    return Err(Error::Format(format!("bad escape in {s:?}")));
                }
                let hex: String = it.by_ref().take_while(|&c| c != '}').collect();
                let cp = u32::from_str_radix(&hex, 16)
                    .ok()
                    .and_then(char::from_u32)
                    .ok_or_else(|| Error::Format(format!("bad escape in {s:?}")))?;
                out.push(cp);
            }
            _ => return Err(Error::Format(format!("bad escape in {s:?}"))),
        }
    }
    Ok(out)
}

/// Word-boundary conventions found in external vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMarker {
    /// `▁` prefix on word-initial tokens.
    #[default]
    MetaPrefix,
    /// Byte-level `Ġ` prefix on word-initial tokens.
    ByteLevel,
    /// `##` prefix on word-internal tokens.
    Continuation,
}

impl BoundaryMarker {
    /// Rewrite a token into the `▁`-prefix convention.
    pub fn normalize(self, token: &str) -> String {
        match self {
            BoundaryMarker::MetaPrefix => token.to_string(),
            BoundaryMarker::ByteLevel => match token.strip_prefix('Ġ') {
                Some(rest) => format!("{META}{rest}"),
                None => token.to_string(),
            },
            BoundaryMarker::Continuation => match token.strip_prefix("##") {
                Some(rest) => rest.to_string(),
                None => format!("{META}{token}"),
            },
        }
    }
}

/// Fraction of each vocabulary's entries found in each other vocabulary.
///
/// Entry `(i, j)` is `|V_i ∩ V_j| / |V_i|`. Vocabularies are given already
/// stripped of special tokens.
pub fn coverage_from_vocabs(vocabs: &[(Vec<String>, BoundaryMarker)]) -> Result<Vec<Vec<f64>>> {
    if vocabs.len() < 2 {
        return Err(Error::InvalidInput("coverage needs at least two vocabularies".into()));
    }
    let sets: Vec<HashSet<String>> = vocabs
        .iter()
        .map(|(v, m)| v.iter().map(|t| m.normalize(t)).collect())
        .collect();
    Ok(sets
        .iter()
        .map(|a| {
            sets.iter()
                .map(|b| {
                    if a.is_empty() {
                        0.0
                    } else {
                        a.intersection(b).count() as f64 / a.len() as f64
                    }
                })
                .collect()
        })
        .collect())
}

pub fn coverage_matrix(models: &[&SubwordModel]) -> Result<Vec<Vec<f64>>> {
    let vocabs: Vec<(Vec<String>, BoundaryMarker)> = models
        .iter()
        .map(|m| (m.learned_vocab().to_vec(), BoundaryMarker::MetaPrefix))
        .collect();
    coverage_from_vocabs(&vocabs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(budget: usize) -> BpeConfig {
        BpeConfig {
            vocab_budget: budget,
            byte_fallback: false,
        }
    }

    #[test]
    fn first_merge_on_abab() {
        let corpus = ["abab", "abab"];
        let min = minimum_budget(&corpus, false);
        assert_eq!(min, 7);
        let m = train_bpe(&corpus, &cfg(min + 1), Exec::Sequential).unwrap();
        assert_eq!(m.merges()[0], ("a".to_string(), "b".to_string()));
        let m0 = train_bpe(&corpus, &cfg(min), Exec::Sequential).unwrap();
        assert!(m0.merges().is_empty());
        assert_eq!(m0.vocab_size(), min);
    }

    #[test]
    fn budget_too_small_reports_minimum() {
        let err = train_bpe(&["abc"], &cfg(6), Exec::Sequential).unwrap_err();
        assert!(matches!(err, Error::BudgetTooSmall { minimum: 8, .. }));
        assert!(matches!(
            train_bpe(&[""], &cfg(100), Exec::Sequential),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn meta_symbol_only_prefixes() {
        let corpus = ["le chat le chien le lit"; 4];
        let m = train_bpe(&corpus, &cfg(60), Exec::Sequential).unwrap();
        for t in m.learned_vocab() {
            assert!(!t.chars().skip(1).any(|c| c == META), "{t}");
        }
        assert!(m.token_id("▁le").is_some());
    }

    #[test]
    fn encode_decode_with_fallback() {
        let corpus = ["le patient va bien", "le patient dort"];
        let m = train_bpe(
            &corpus,
            &BpeConfig {
                vocab_budget: 300,
                byte_fallback: true,
            },
            Exec::Sequential,
        )
        .unwrap();
        for s in ["", "le patient", "  ünïcødé ▁ 漢字 \n", "x▁y"] {
            let e = m.encode(s);
            assert_eq!(m.decode(&e.ids).unwrap(), s);
            assert!(e.ids.len() <= s.len());
            let covered: usize = e.offsets.iter().map(|(a, b)| b - a).sum();
            assert_eq!(covered, s.len());
        }
        let err = m.decode(&[5, 99_999]).unwrap_err();
        assert!(matches!(err, Error::IdOutOfRange { position: 1, .. }));
    }

    #[test]
    fn unknown_without_fallback() {
        let m = train_bpe(&["ab"], &cfg(20), Exec::Sequential).unwrap();
        let e = m.encode("abz");
        assert_eq!(*e.ids.last().unwrap(), UNK);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = ["a\\b\tc d\ne", "a\\b\tc d\ne f"];
        let m = train_bpe(
            &corpus,
            &BpeConfig {
                vocab_budget: 280,
                byte_fallback: true,
            },
            Exec::Sequential,
        )
        .unwrap();
        m.save(dir.path()).unwrap();
        let m2 = SubwordModel::load(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(m.fingerprint(), m2.fingerprint());
    }

    #[test]
    fn escape_roundtrip() {
        for s in ["a b", "\\n", "\u{1}x", "▁é"] {
            assert_eq!(unescape(&escape(s)).unwrap(), s);
            assert!(!escape(s).contains(' '));
        }
    }

    #[test]
    fn boundary_normalization() {
        assert_eq!(BoundaryMarker::ByteLevel.normalize("Ġchat"), "▁chat");
        assert_eq!(BoundaryMarker::Continuation.normalize("##at"), "at");
        assert_eq!(BoundaryMarker::Continuation.normalize("ch"), "▁ch");
    }

    #[test]
    fn coverage_requires_two() {
        assert!(coverage_from_vocabs(&[(vec!["a".into()], BoundaryMarker::MetaPrefix)]).is_err());
    }
}
