//! Independent reference implementations used by property and acceptance
//! tests. They favour obviousness over speed.

#![allow(dead_code)]

use std::collections::BTreeMap;

pub const META: char = '▁';

/// Brute-force BPE: recount every adjacent pair after every merge and take
/// the most frequent, ties to the smallest `(left, right)`. A pair whose
/// right side starts with the space marker is never merged.
pub fn bpe_merges(sentences: &[&str], initial_vocab: usize, budget: usize) -> Vec<(String, String)> {
    let mut seqs: Vec<Vec<String>> = sentences
        .iter()
        .map(|s| s.chars().map(|c| if c == ' ' { META } else { c }.to_string()).collect())
        .collect();
    let mut vocab: Vec<String> = Vec::new();
    let mut vocab_len = initial_vocab;
    let mut merges = Vec::new();
    while vocab_len < budget {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for s in &seqs {
            for w in s.windows(2) {
                if !w[1].starts_with(META) {
                    *counts.entry((w[0].clone(), w[1].clone())).or_default() += 1;
                }
            }
        }
        // BTreeMap iterates in ascending key order, so the first maximum wins ties
        let mut best: Option<(&(String, String), u64)> = None;
        for (k, &c) in &counts {
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((k, c));
            }
        }
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.clone(), r.clone());
        let merged = format!("{l}{r}");
        for s in &mut seqs {
            let mut out = Vec::with_capacity(s.len());
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == l && s[i + 1] == r {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(s[i].clone());
                    i += 1;
                }
            }
            *s = out;
        }
        if !vocab.contains(&merged) {
            vocab.push(merged);
            vocab_len += 1;
        }
        merges.push((l, r));
    }
    merges
}

/// Per-class (tp, fp, fn) by explicit enumeration.
pub fn confusion(gold: &[&str], pred: &[&str], class: &str) -> (u64, u64, u64) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for i in 0..gold.len() {
        let g = gold[i] == class;
        let p = pred[i] == class;
        if g && p {
            tp += 1;
        } else if p {
            fp += 1;
        } else if g {
            fn_ += 1;
        }
    }
    (tp, fp, fn_)
}

fn safe_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Macro F1 over classes that occur in gold, and support-weighted F1.
pub fn macro_weighted_f1(gold: &[&str], pred: &[&str]) -> (f64, f64) {
    let mut classes: Vec<&str> = gold.iter().chain(pred).copied().collect();
    classes.sort();
    classes.dedup();
    let mut macro_sum = 0.0;
    let mut macro_n = 0.0;
    let mut weighted = 0.0;
    for c in classes {
        let (tp, fp, fn_) = confusion(gold, pred, c);
        let p = safe_div(tp as f64, (tp + fp) as f64);
        let r = safe_div(tp as f64, (tp + fn_) as f64);
        let f = safe_div(2.0 * p * r, p + r);
        let support = (tp + fn_) as f64;
        if support > 0.0 {
            macro_sum += f;
            macro_n += 1.0;
        }
        weighted += f * support / gold.len() as f64;
    }
    (safe_div(macro_sum, macro_n), weighted)
}

/// Exact-match ratio and mean Jaccard over label sets given as bit masks.
pub fn emr_jaccard(gold: &[u32], pred: &[u32]) -> (f64, f64) {
    let n = gold.len() as f64;
    let mut exact = 0.0;
    let mut jac = 0.0;
    for (g, p) in gold.iter().zip(pred) {
        if g == p {
            exact += 1.0;
        }
        let inter = (g & p).count_ones() as f64;
        let union = (g | p).count_ones() as f64;
        jac += if union == 0.0 { 1.0 } else { inter / union };
    }
    (exact / n, jac / n)
}
