//! Scoring: per-class precision/recall/F1 with macro and weighted averages,
//! exact match ratio and Hamming score for label sets, entity-span F1 for BIO
//! tags, and CSV/Markdown result tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub predicted: u64,
    /// A zero denominator occurred in P or R and the value was set to 0.
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassScore>,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub weighted_p: f64,
    pub weighted_r: f64,
    pub weighted_f1: f64,
    pub hamming: Option<f64>,
    pub emr: Option<f64>,
    pub n_examples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Macro,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MacroOver {
    /// Classes with at least one gold instance.
    #[default]
    GoldPresent,
    /// Every class in the supplied label list.
    AllLabels,
}

impl MetricsReport {
    pub fn precision(&self, s: Scheme) -> f64 {
        match s {
            Scheme::Macro => self.macro_p,
            Scheme::Weighted => self.weighted_p,
        }
    }

    pub fn recall(&self, s: Scheme) -> f64 {
        match s {
            Scheme::Macro => self.macro_r,
            Scheme::Weighted => self.weighted_r,
        }
    }

    pub fn f1(&self, s: Scheme) -> f64 {
        match s {
            Scheme::Macro => self.macro_f1,
            Scheme::Weighted => self.weighted_f1,
        }
    }

    pub fn class(&self, label: &str) -> Option<&ClassScore> {
        self.per_class.iter().find(|c| c.label == label)
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn len_check(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!(
            "gold has {a} items but predictions have {b}"
        )));
    }
    Ok(())
}

fn aggregate(counts: BTreeMap<String, (u64, u64, u64)>, labels: Option<&[String]>, over: MacroOver) -> MetricsReport {
    let mut counts = counts;
    if let Some(ls) = labels {
        for l in ls {
            counts.entry(l.clone()).or_default();
        }
    }
    let per_class: Vec<ClassScore> = counts
        .into_iter()
        .map(|(label, (tp, n_pred, n_gold))| {
            let (p, zp) = ratio(tp, n_pred);
            let (r, zr) = ratio(tp, n_gold);
            ClassScore {
                label,
                precision: p,
                recall: r,
                f1: harmonic(p, r),
                support: n_gold,
                predicted: n_pred,
                zero_division: zp || zr,
            }
        })
        .collect();
    let in_macro = |c: &ClassScore| match (over, labels) {
        (MacroOver::AllLabels, Some(ls)) => ls.contains(&c.label),
        _ => c.support > 0,
    };
    let chosen: Vec<&ClassScore> = per_class.iter().filter(|c| in_macro(c)).collect();
    let k = chosen.len().max(1) as f64;
    let total: u64 = per_class.iter().map(|c| c.support).sum();
    let w = |c: &ClassScore| {
        if total == 0 {
            0.0
        } else {
            c.support as f64 / total as f64
        }
    };
    MetricsReport {
        macro_p: chosen.iter().map(|c| c.precision).sum::<f64>() / k,
        macro_r: chosen.iter().map(|c| c.recall).sum::<f64>() / k,
        macro_f1: chosen.iter().map(|c| c.f1).sum::<f64>() / k,
        weighted_p: per_class.iter().map(|c| w(c) * c.precision).sum(),
        weighted_r: per_class.iter().map(|c| w(c) * c.recall).sum(),
        weighted_f1: per_class.iter().map(|c| w(c) * c.f1).sum(),
        per_class,
        hamming: None,
        emr: None,
        n_examples: 0,
    }
}

/// Single-label precision/recall/F1. `labels` adds classes that may be
/// absent from both gold and predictions; it matters for
/// [`MacroOver::AllLabels`].
pub fn prf<S: AsRef<str>>(gold: &[S], pred: &[S], labels: Option<&[String]>, over: MacroOver) -> Result<MetricsReport> {
    len_check(gold.len(), pred.len())?;
    let mut counts: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        counts.entry(g.to_string()).or_default().2 += 1;
        counts.entry(p.to_string()).or_default().1 += 1;
        if g == p {
            counts.get_mut(g).expect("inserted").0 += 1;
        }
    }
    let mut r = aggregate(counts, labels, over);
    r.n_examples = gold.len();
    Ok(r)
}

pub type LabelSet = BTreeSet<String>;

/// Fraction of examples whose predicted set equals the gold set.
pub fn emr(gold: &[LabelSet], pred: &[LabelSet]) -> Result<f64> {
    len_check(gold.len(), pred.len())?;
    if gold.is_empty() {
        return Ok(0.0);
    }
    Ok(gold.iter().zip(pred).filter(|(g, p)| g == p).count() as f64 / gold.len() as f64)
}

/// Mean Jaccard index of gold and predicted sets; two empty sets score 1.
pub fn hamming_score(gold: &[LabelSet], pred: &[LabelSet]) -> Result<f64> {
    len_check(gold.len(), pred.len())?;
    if gold.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = gold
        .iter()
        .zip(pred)
        .map(|(g, p)| {
            let union = g.union(p).count();
            if union == 0 {
                1.0
            } else {
                g.intersection(p).count() as f64 / union as f64
            }
        })
        .sum();
    Ok(total / gold.len() as f64)
}

/// Multi-label report: per-label P/R/F1 over binary decisions plus EMR and Hamming score.
pub fn multilabel_report(
    gold: &[LabelSet],
    pred: &[LabelSet],
    labels: Option<&[String]>,
    over: MacroOver,
) -> Result<MetricsReport> {
    len_check(gold.len(), pred.len())?;
    let mut counts: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        for l in g {
            counts.entry(l.clone()).or_default().2 += 1;
        }
        for l in p {
            let e = counts.entry(l.clone()).or_default();
            e.1 += 1;
            if g.contains(l) {
                e.0 += 1;
            }
        }
    }
    let mut r = aggregate(counts, labels, over);
    r.emr = Some(emr(gold, pred)?);
    r.hamming = Some(hamming_score(gold, pred)?);
    r.n_examples = gold.len();
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub kind: String,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

/// Entity spans of a BIO sequence. An `I-X` that does not continue an `X`
/// span opens a new one.
pub fn bio_spans<S: AsRef<str>>(tags: &[S]) -> Vec<Span> {
    let mut out = Vec::new();
    let mut open: Option<Span> = None;
    for (i, t) in tags.iter().enumerate() {
        let t = t.as_ref();
        let (prefix, kind) = match t.split_once('-') {
            Some((p, k)) if p == "B" || p == "I" => (p, k),
            _ => ("O", ""),
        };
        let continues = prefix == "I" && open.as_ref().is_some_and(|s| s.kind == kind);
        if continues {
            open.as_mut().expect("checked").end = i + 1;
            continue;
        }
        if let Some(s) = open.take() {
            out.push(s);
        }
        if prefix != "O" {
            open = Some(Span {
                kind: kind.to_string(),
                start: i,
                end: i + 1,
            });
        }
    }
    out.extend(open);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_gold: u64,
    pub n_pred: u64,
    pub n_correct: u64,
}

/// Micro-averaged exact-span F1 over sentences of BIO tags.
pub fn span_f1<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<SpanScore> {
    len_check(gold.len(), pred.len())?;
    let (mut ng, mut np, mut nc) = (0u64, 0u64, 0u64);
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::InvalidInput(format!(
                "sentence {i}: {} gold tags but {} predicted",
                g.len(),
                p.len()
            )));
        }
        let gs: BTreeSet<Span> = bio_spans(g).into_iter().collect();
        let ps: BTreeSet<Span> = bio_spans(p).into_iter().collect();
        ng += gs.len() as u64;
        np += ps.len() as u64;
        nc += gs.intersection(&ps).count() as u64;
    }
    let (p, _) = ratio(nc, np);
    let (r, _) = ratio(nc, ng);
    Ok(SpanScore {
        precision: p,
        recall: r,
        f1: harmonic(p, r),
        n_gold: ng,
        n_pred: np,
        n_correct: nc,
    })
}

/// Mean, sample standard deviation and range of per-run scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Spread {
    pub fn of(xs: &[f64]) -> Spread {
        let n = xs.len();
        if n == 0 {
            return Spread {
                mean: 0.0,
                std: 0.0,
                min: 0.0,
                max: 0.0,
                n: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Spread {
            mean,
            std,
            min: xs.iter().cloned().fold(f64::INFINITY, f64::min),
            max: xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            n,
        }
    }
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n - 1)·q`), the default in R and NumPy.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Minimum, first quartile, median, third quartile, maximum.
pub fn five_number(xs: &[f64]) -> Result<[f64; 5]> {
    if xs.is_empty() {
        return Err(Error::InvalidInput("no values to summarise".into()));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok([
        v[0],
        quantile(&v, 0.25),
        quantile(&v, 0.5),
        quantile(&v, 0.75),
        v[v.len() - 1],
    ])
}

/// One model's score on one task, aggregated over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub task: String,
    /// Ordered metric columns, e.g. `P`, `R`, `F1` or `EMR`, `Hamming`.
    pub scores: Vec<(String, Spread)>,
}

fn column_plan(rows: &[ResultRow]) -> (Vec<String>, Vec<String>, BTreeMap<String, Vec<String>>) {
    let mut models: Vec<String> = Vec::new();
    let mut tasks: Vec<String> = Vec::new();
    let mut cols: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in rows {
        if !models.contains(&r.model) {
            models.push(r.model.clone());
        }
        if !tasks.contains(&r.task) {
            tasks.push(r.task.clone());
        }
        let c = cols.entry(r.task.clone()).or_default();
        for (name, _) in &r.scores {
            if !c.contains(name) {
                c.push(name.clone());
            }
        }
    }
    models.sort();
    tasks.sort();
    (models, tasks, cols)
}

fn lookup<'a>(rows: &'a [ResultRow], model: &str, task: &str, col: &str) -> Option<&'a Spread> {
    rows.iter()
        .find(|r| r.model == model && r.task == task)
        .and_then(|r| r.scores.iter().find(|(n, _)| n == col).map(|(_, s)| s))
}

/// Markdown table: one row per model, metric columns grouped by task.
/// Scores are shown in percent; multi-run cells add the standard deviation.
pub fn markdown_table(rows: &[ResultRow]) -> String {
    let (models, tasks, cols) = column_plan(rows);
    let mut out = String::new();
    let mut head = String::from("| Model |");
    let mut rule = String::from("|---|");
    for t in &tasks {
        for c in &cols[t] {
            let _ = write!(head, " {t} {c} |");
            rule.push_str("---:|");
        }
    }
    let _ = writeln!(out, "{head}");
    let _ = writeln!(out, "{rule}");
    for m in &models {
        let _ = write!(out, "| {m} |");
        for t in &tasks {
            for c in &cols[t] {
                match lookup(rows, m, t, c) {
                    Some(s) if s.n > 1 => {
                        let _ = write!(out, " {:.2} ± {:.2} |", 100.0 * s.mean, 100.0 * s.std);
                    }
                    Some(s) => {
                        let _ = write!(out, " {:.2} |", 100.0 * s.mean);
                    }
                    None => out.push_str(" – |"),
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Long-format CSV: model, task, metric, mean, std, min, max, n.
pub fn csv_table(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "task", "metric", "mean", "std", "min", "max", "n"])?;
    for r in rows {
        for (name, s) in &r.scores {
            w.write_record([
                r.model.as_str(),
                r.task.as_str(),
                name.as_str(),
                &format!("{}", s.mean),
                &format!("{}", s.std),
                &format!("{}", s.min),
                &format!("{}", s.max),
                &s.n.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// Per-class breakdown of one report as Markdown.
pub fn per_class_markdown(report: &MetricsReport) -> String {
    let mut out = String::from("| Label | P | R | F1 | Support |\n|---|---:|---:|---:|---:|\n");
    for c in &report.per_class {
        let _ = writeln!(
            out,
            "| {} | {:.2} | {:.2} | {:.2} | {} |",
            c.label,
            100.0 * c.precision,
            100.0 * c.recall,
            100.0 * c.f1,
            c.support
        );
    }
    out
}
