//! Downstream fine-tuning: token classification (BIO tagging), sequence
//! classification and multi-label classification on top of a pre-trained
//! encoder, with dataset readers, prediction writers and a multi-seed driver.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::{BodyCache, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hashing::{derive_seed, str_key};
use crate::io;
use crate::metrics::{
    multilabel_report, prf, span_f1, LabelSet, MacroOver, MetricsReport, ResultRow, SpanScore, Spread,
};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::subtok::{SubwordModel, TokenId, BOS, EOS};
use crate::tensor::{decode_blocks, encode_blocks, matmul, ParamSet, Tensor};
use crate::textprep::shuffled_indices;
use crate::train::Checkpoint;

pub const TASK_MODEL_FORMAT: &str = "forge-task-model";
pub const TASK_MODEL_VERSION: u32 = 1;
pub const DEFAULT_SEEDS: [u64; 4] = [1, 2, 3, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TokenCls,
    SeqCls,
    Multilabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMetric {
    MacroF1,
    WeightedF1,
    EmrHamming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub labels: Vec<String>,
    pub metric: TaskMetric,
    /// Multi-label only: whether an example may have no gold label.
    #[serde(default)]
    pub allow_empty: bool,
    pub splits: Splits,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let set: BTreeSet<&String> = self.labels.iter().collect();
        if set.len() != self.labels.len() {
            return Err(Error::Config(format!("task {}: duplicate labels", self.name)));
        }
        if self.labels.is_empty() {
            return Err(Error::Config(format!("task {}: empty label list", self.name)));
        }
        if self.kind == TaskKind::TokenCls {
            for l in &self.labels {
                if let Some(kind) = l.strip_prefix("I-") {
                    if !set.contains(&format!("B-{kind}")) {
                        return Err(Error::Config(format!(
                            "task {}: label {l} has no matching B-{kind}",
                            self.name
                        )));
                    }
                }
            }
        }
        if self.kind == TaskKind::Multilabel && self.metric != TaskMetric::EmrHamming {
            return Err(Error::Config(format!(
                "task {}: multi-label tasks are scored with emr_hamming",
                self.name
            )));
        }
        Ok(())
    }

    /// Read a spec file; relative split paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut spec: TaskSpec = io::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut spec.splits.train);
        fix(&mut spec.splits.dev);
        if let Some(t) = spec.splits.test.as_mut() {
            fix(t);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    /// Label given to words that fall outside the encoder window.
    pub fn fallback_label(&self) -> usize {
        self.label_id("O").unwrap_or(0)
    }

    /// Label indices sorted by name. Every reduction over labels runs in
    /// this order, so permuting the label list permutes outputs exactly.
    fn canonical_order(&self) -> Vec<usize> {
        let mut o: Vec<usize> = (0..self.labels.len()).collect();
        o.sort_by(|&a, &b| self.labels[a].cmp(&self.labels[b]));
        o
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gold {
    Tags(Vec<usize>),
    Label(usize),
    Set(BTreeSet<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExample {
    pub id: String,
    pub text: String,
    /// Whitespace-separated words of `text`.
    pub words: Vec<String>,
    pub gold: Gold,
}

/// Two-column CoNLL: `token TAG` per line, blank lines between sentences.
pub fn read_conll(path: &Path) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let text = io::read_string(path)?;
    let mut out = Vec::new();
    let (mut toks, mut tags) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            if !toks.is_empty() {
                out.push((std::mem::take(&mut toks), std::mem::take(&mut tags)));
            }
            continue;
        }
        if fields.len() < 2 {
            return Err(Error::Format(format!(
                "{}:{}: expected `token TAG`",
                path.display(),
                n + 1
            )));
        }
        toks.push(fields[0].to_string());
        tags.push(fields[fields.len() - 1].to_string());
    }
    if !toks.is_empty() {
        out.push((toks, tags));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelledRecord {
    #[serde(default)]
    id: Option<String>,
    text: String,
    labels: OneOrMany,
}

fn unknown_label(id: &str, name: &str) -> Error {
    Error::Data {
        example: id.to_string(),
        message: format!("label {name:?} is not in the task's label list"),
    }
}

impl TaskExample {
    /// A tagged sentence for a token task.
    pub fn tagged(spec: &TaskSpec, id: String, words: Vec<String>, tags: &[String]) -> Result<Self> {
        if words.len() != tags.len() {
            return Err(Error::Data {
                example: id,
                message: format!("{} tags for {} words", tags.len(), words.len()),
            });
        }
        let gold = tags
            .iter()
            .map(|t| spec.label_id(t).ok_or_else(|| unknown_label(&id, t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TaskExample {
            text: words.join(" "),
            words,
            gold: Gold::Tags(gold),
            id,
        })
    }

    /// A text with one label (sequence tasks) or a label set (multi-label tasks).
    pub fn labelled(spec: &TaskSpec, id: String, text: String, labels: &[String]) -> Result<Self> {
        let lookup = |name: &String| spec.label_id(name).ok_or_else(|| unknown_label(&id, name));
        let gold = match spec.kind {
            TaskKind::SeqCls => {
                if labels.len() != 1 {
                    return Err(Error::Data {
                        example: id,
                        message: format!("expected one label, found {}", labels.len()),
                    });
                }
                Gold::Label(lookup(&labels[0])?)
            }
            TaskKind::Multilabel => {
                if labels.is_empty() && !spec.allow_empty {
                    return Err(Error::Data {
                        example: id,
                        message: "empty label set but the task does not allow one".into(),
                    });
                }
                Gold::Set(labels.iter().map(lookup).collect::<Result<_>>()?)
            }
            TaskKind::TokenCls => {
                return Err(Error::Data {
                    example: id,
                    message: "token tasks need per-word tags".into(),
                })
            }
        };
        Ok(TaskExample {
            words: text.split_whitespace().map(str::to_string).collect(),
            text,
            gold,
            id,
        })
    }
}

/// Load a split as examples with label ids.
pub fn load_examples(spec: &TaskSpec, path: &Path) -> Result<Vec<TaskExample>> {
    match spec.kind {
        TaskKind::TokenCls => read_conll(path)?
            .into_iter()
            .enumerate()
            .map(|(i, (words, tags))| TaskExample::tagged(spec, format!("s{i}"), words, &tags))
            .collect(),
        TaskKind::SeqCls | TaskKind::Multilabel => {
            let recs: Vec<LabelledRecord> = io::read_jsonl(path)?;
            recs.into_iter()
                .enumerate()
                .map(|(i, r)| {
                    let labels = match r.labels {
                        OneOrMany::One(s) => vec![s],
                        OneOrMany::Many(v) => v,
                    };
                    TaskExample::labelled(spec, r.id.unwrap_or_else(|| format!("l{i}")), r.text, &labels)
                })
                .collect()
        }
    }
}

/// Write predictions in the gold format: CoNLL for token tasks, JSONL otherwise.
pub fn write_predictions(spec: &TaskSpec, examples: &[TaskExample], preds: &[Gold], path: &Path) -> Result<()> {
    let name = |i: usize| spec.labels[i].as_str();
    match spec.kind {
        TaskKind::TokenCls => {
            let mut s = String::new();
            for (ex, p) in examples.iter().zip(preds) {
                if let Gold::Tags(tags) = p {
                    for (w, t) in ex.words.iter().zip(tags) {
                        s.push_str(w);
                        s.push(' ');
                        s.push_str(name(*t));
                        s.push('\n');
                    }
                }
                s.push('\n');
            }
            io::write_atomic(path, s.as_bytes())
        }
        _ => {
            let recs: Vec<serde_json::Value> = examples
                .iter()
                .zip(preds)
                .map(|(ex, p)| {
                    let labels = match p {
                        Gold::Label(l) => serde_json::json!(name(*l)),
                        Gold::Set(s) => serde_json::json!(s.iter().map(|&l| name(l)).collect::<Vec<_>>()),
                        Gold::Tags(_) => serde_json::Value::Null,
                    };
                    serde_json::json!({"id": ex.id, "text": ex.text, "labels": labels})
                })
                .collect();
            io::write_jsonl(path, &recs)
        }
    }
}

/// Model input for one example.
#[derive(Debug, Clone)]
struct Encoded {
    ids: Vec<TokenId>,
    /// Position of each word's first subword, if it fit in the window.
    first_sub: Vec<Option<usize>>,
}

fn encode_example(tok: &SubwordModel, ex: &TaskExample, max_seq: usize) -> Encoded {
    let enc = tok.encode(&ex.text);
    let keep = enc.ids.len().min(max_seq.saturating_sub(2));
    let mut ids = Vec::with_capacity(keep + 2);
    ids.push(BOS);
    ids.extend_from_slice(&enc.ids[..keep]);
    ids.push(EOS);
    // word byte spans in `text`
    let mut ends = Vec::with_capacity(ex.words.len());
    let mut cursor = 0;
    for w in &ex.words {
        let start = ex.text[cursor..].find(w.as_str()).map(|k| cursor + k).unwrap_or(cursor);
        cursor = start + w.len();
        ends.push(cursor);
    }
    let mut first_sub = vec![None; ex.words.len()];
    let mut w = 0;
    for (k, &(start, _)) in enc.offsets[..keep].iter().enumerate() {
        while w < ends.len() && ends[w] <= start {
            w += 1;
        }
        if w < ends.len() && first_sub[w].is_none() {
            first_sub[w] = Some(k + 1);
        }
    }
    Encoded { ids, first_sub }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without a dev improvement.
    pub patience: usize,
    pub warmup_frac: f64,
    pub adam: AdamConfig,
    pub head_init_std: f64,
    pub seed: u64,
}

impl FinetuneConfig {
    /// Shared settings for every task at desk scale.
    pub fn desk() -> Self {
        FinetuneConfig {
            lr: 5e-3,
            max_epochs: 20,
            batch_size: 16,
            patience: 5,
            warmup_frac: 0.1,
            adam: AdamConfig::default(),
            head_init_std: 0.02,
            seed: 0,
        }
    }

    /// Conventional base-size settings: lr 3e-5, at most 10 epochs, batch 16.
    pub fn base() -> Self {
        FinetuneConfig {
            lr: 3e-5,
            max_epochs: 10,
            patience: 3,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 || self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "fine-tune lr, epochs and batch size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Config("warmup_frac must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        let warm = ((total as f64) * self.warmup_frac).round() as usize;
        if step < warm {
            self.lr * (step + 1) as f64 / warm as f64
        } else {
            let rest = (total - warm).max(1);
            self.lr * (total - step) as f64 / rest as f64
        }
    }
}

/// A fine-tuned encoder with its classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub spec: TaskSpec,
    pub encoder: Encoder,
    /// `cls.weight` `[d_model × labels]` and `cls.bias` `[labels]`.
    pub head: ParamSet,
    pub tokenizer_fingerprint: String,
}

struct ExampleState {
    body: BodyCache,
    positions: Vec<usize>,
    logits: Vec<f64>,
}

fn new_head(d: usize, spec: &TaskSpec, std: f64, seed: u64) -> ParamSet {
    let l = spec.labels.len();
    let mut w = Tensor::zeros(&[d, l]);
    let dist = Normal::new(0.0, std).expect("positive std");
    for (j, name) in spec.labels.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[str_key(name)]));
        for k in 0..d {
            w.data[k * l + j] = dist.sample(&mut rng);
        }
    }
    let mut head = ParamSet::new();
    head.push("cls.weight", w);
    head.push("cls.bias", Tensor::zeros(&[l]));
    head
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl TaskModel {
    pub fn new(
        encoder: Encoder,
        spec: TaskSpec,
        tokenizer_fingerprint: String,
        head_std: f64,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let head = new_head(encoder.config.d_model, &spec, head_std, seed);
        Ok(TaskModel {
            spec,
            encoder,
            head,
            tokenizer_fingerprint,
        })
    }

    fn n_labels(&self) -> usize {
        self.spec.labels.len()
    }

    fn positions(&self, enc: &Encoded) -> Vec<usize> {
        match self.spec.kind {
            TaskKind::TokenCls => enc.first_sub.iter().flatten().copied().collect(),
            _ => vec![0],
        }
    }

    fn forward_one(&self, enc: &Encoded, rng: Option<&mut ChaCha8Rng>) -> ExampleState {
        let attention = vec![true; enc.ids.len()];
        let body = self.encoder.body_forward(&enc.ids, &attention, rng);
        let positions = self.positions(enc);
        let d = self.encoder.config.d_model;
        let l = self.n_labels();
        let mut h = Vec::with_capacity(positions.len() * d);
        for &p in &positions {
            h.extend_from_slice(&body.hidden[p * d..(p + 1) * d]);
        }
        let mut logits = matmul(&h, &self.head.t(0).data, positions.len(), d, l);
        for row in logits.chunks_mut(l) {
            for (x, b) in row.iter_mut().zip(&self.head.t(1).data) {
                *x += b;
            }
        }
        ExampleState {
            body,
            positions,
            logits,
        }
    }

    /// Loss summed over this example's scored units, and d loss / d logits.
    fn loss_grad(&self, st: &ExampleState, enc: &Encoded, gold: &Gold, order: &[usize]) -> (f64, Vec<f64>) {
        let l = self.n_labels();
        let mut dlog = vec![0.0; st.logits.len()];
        let mut loss = 0.0;
        let softmax_ce = |row: &[f64], target: usize, out: &mut [f64]| -> f64 {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &j in order {
                z += (row[j] - mx).exp();
            }
            for &j in order {
                out[j] = (row[j] - mx).exp() / z;
            }
            out[target] -= 1.0;
            z.ln() + mx - row[target]
        };
        match gold {
            Gold::Tags(tags) => {
                // positions are in word order, skipping truncated words
                let kept: Vec<usize> = tags
                    .iter()
                    .zip(&enc.first_sub)
                    .filter_map(|(&t, fs)| fs.map(|_| t))
                    .collect();
                for (i, &t) in kept.iter().enumerate() {
                    loss += softmax_ce(&st.logits[i * l..(i + 1) * l], t, &mut dlog[i * l..(i + 1) * l]);
                }
            }
            Gold::Label(t) => loss += softmax_ce(&st.logits[..l], *t, &mut dlog[..l]),
            Gold::Set(s) => {
                for &j in order {
                    let x = st.logits[j];
                    let y = if s.contains(&j) { 1.0 } else { 0.0 };
                    loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
                    dlog[j] = sigmoid(x) - y;
                }
            }
        }
        (loss, dlog)
    }

    fn backward_one(
        &self,
        st: &ExampleState,
        dlog: &[f64],
        order: &[usize],
        g_enc: &mut ParamSet,
        g_head: &mut ParamSet,
    ) {
        let d = self.encoder.config.d_model;
        let l = self.n_labels();
        let w = &self.head.t(0).data;
        let mut dh = vec![0.0; st.body.hidden.len()];
        for (i, &p) in st.positions.iter().enumerate() {
            let h = &st.body.hidden[p * d..(p + 1) * d];
            let dl = &dlog[i * l..(i + 1) * l];
            let gw = &mut g_head.t_mut(0).data;
            for k in 0..d {
                for j in 0..l {
                    gw[k * l + j] += h[k] * dl[j];
                }
            }
            let gb = &mut g_head.t_mut(1).data;
            for j in 0..l {
                gb[j] += dl[j];
            }
            for k in 0..d {
                let mut acc = 0.0;
                for &j in order {
                    acc += dl[j] * w[k * l + j];
                }
                dh[p * d + k] += acc;
            }
        }
        self.encoder.body_backward(&st.body, dh, g_enc);
    }

    fn predict_encoded(&self, enc: &Encoded, n_words: usize, order: &[usize]) -> Gold {
        let st = self.forward_one(enc, None);
        let l = self.n_labels();
        let argmax = |row: &[f64]| {
            let mut best = order[0];
            for &j in order {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        };
        match self.spec.kind {
            TaskKind::TokenCls => {
                let mut tags = vec![self.spec.fallback_label(); n_words];
                let mut i = 0;
                for (w, fs) in enc.first_sub.iter().enumerate() {
                    if fs.is_some() {
                        tags[w] = argmax(&st.logits[i * l..(i + 1) * l]);
                        i += 1;
                    }
                }
                Gold::Tags(tags)
            }
            TaskKind::SeqCls => Gold::Label(argmax(&st.logits[..l])),
            TaskKind::Multilabel => Gold::Set((0..l).filter(|&j| sigmoid(st.logits[j]) >= 0.5).collect()),
        }
    }

    /// Predictions: one label per word (first-subword rule), one label per
    /// text, or every label whose sigmoid score is at least 0.5.
    pub fn predict(&self, tok: &SubwordModel, examples: &[TaskExample], exec: Exec) -> Result<Vec<Gold>> {
        self.check_tokenizer(tok)?;
        let order = self.spec.canonical_order();
        let max_seq = self.encoder.config.max_seq;
        Ok(exec.map(examples, |ex| {
            let enc = encode_example(tok, ex, max_seq);
            self.predict_encoded(&enc, ex.words.len(), &order)
        }))
    }

    pub fn check_tokenizer(&self, tok: &SubwordModel) -> Result<()> {
        if tok.fingerprint() != self.tokenizer_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.tokenizer_fingerprint.clone(),
                actual: tok.fingerprint().to_string(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::json!({
            "format": TASK_MODEL_FORMAT,
            "format_version": TASK_MODEL_VERSION,
            "spec": self.spec,
            "encoder": self.encoder.config,
            "tokenizer_fingerprint": self.tokenizer_fingerprint,
        });
        encode_blocks(header, &[&self.encoder.params, &self.head])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, sets) = decode_blocks(bytes)?;
        if h.get("format").and_then(|v| v.as_str()) != Some(TASK_MODEL_FORMAT)
            || h.get("format_version").and_then(|v| v.as_u64()) != Some(TASK_MODEL_VERSION as u64)
        {
            return Err(Error::Format("not a supported task model file".into()));
        }
        let spec: TaskSpec = serde_json::from_value(h["spec"].clone())?;
        let config: EncoderConfig = serde_json::from_value(h["encoder"].clone())?;
        let fp = h["tokenizer_fingerprint"]
            .as_str()
            .ok_or_else(|| Error::Format("missing tokenizer fingerprint".into()))?
            .to_string();
        let [params, head]: [ParamSet; 2] = sets
            .try_into()
            .map_err(|_| Error::Format("task model must hold two blocks".into()))?;
        let reference = new_head(config.d_model, &spec, 1.0, 0);
        reference.check_compatible(&head)?;
        Ok(TaskModel {
            encoder: Encoder::from_params(config, params)?,
            spec,
            head,
            tokenizer_fingerprint: fp,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_bytes(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_score: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: TaskModel,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev: f64,
}

/// Scores of one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub report: MetricsReport,
    /// Entity-level F1, token tasks only.
    pub span: Option<SpanScore>,
}

impl TaskScores {
    /// The number used for model selection.
    pub fn primary(&self, metric: TaskMetric) -> f64 {
        match metric {
            TaskMetric::MacroF1 => self.report.macro_f1,
            TaskMetric::WeightedF1 => self.report.weighted_f1,
            TaskMetric::EmrHamming => self.report.hamming.unwrap_or(0.0),
        }
    }

    /// Table columns for the task's metric.
    pub fn columns(&self, metric: TaskMetric) -> Vec<(String, f64)> {
        let r = &self.report;
        match metric {
            TaskMetric::MacroF1 => vec![
                ("P".into(), r.macro_p),
                ("R".into(), r.macro_r),
                ("F1".into(), r.macro_f1),
            ],
            TaskMetric::WeightedF1 => vec![
                ("P".into(), r.weighted_p),
                ("R".into(), r.weighted_r),
                ("F1".into(), r.weighted_f1),
            ],
            TaskMetric::EmrHamming => vec![
                ("EMR".into(), r.emr.unwrap_or(0.0)),
                ("Hamming".into(), r.hamming.unwrap_or(0.0)),
            ],
        }
    }
}

fn label_names(spec: &TaskSpec, ids: impl IntoIterator<Item = usize>) -> Vec<String> {
    ids.into_iter().map(|i| spec.labels[i].clone()).collect()
}

/// Score predictions against gold labels.
pub fn score(spec: &TaskSpec, examples: &[TaskExample], preds: &[Gold]) -> Result<TaskScores> {
    if examples.len() != preds.len() {
        return Err(Error::InvalidInput(format!(
            "{} examples but {} predictions",
            examples.len(),
            preds.len()
        )));
    }
    let mismatch = |id: &str| Error::Data {
        example: id.to_string(),
        message: "prediction shape does not match the gold annotation".into(),
    };
    match spec.kind {
        TaskKind::TokenCls => {
            let (mut g, mut p) = (Vec::new(), Vec::new());
            let (mut gs, mut ps) = (Vec::new(), Vec::new());
            for (ex, pr) in examples.iter().zip(preds) {
                match (&ex.gold, pr) {
                    (Gold::Tags(a), Gold::Tags(b)) if a.len() == b.len() => {
                        let (a, b) = (
                            label_names(spec, a.iter().copied()),
                            label_names(spec, b.iter().copied()),
                        );
                        g.extend(a.iter().cloned());
                        p.extend(b.iter().cloned());
                        gs.push(a);
                        ps.push(b);
                    }
                    _ => return Err(mismatch(&ex.id)),
                }
            }
            Ok(TaskScores {
                report: prf(&g, &p, Some(&spec.labels), MacroOver::GoldPresent)?,
                span: Some(span_f1(&gs, &ps)?),
            })
        }
        TaskKind::SeqCls => {
            let mut g = Vec::new();
            let mut p = Vec::new();
            for (ex, pr) in examples.iter().zip(preds) {
                match (&ex.gold, pr) {
                    (Gold::Label(a), Gold::Label(b)) => {
                        g.push(spec.labels[*a].clone());
                        p.push(spec.labels[*b].clone());
                    }
                    _ => return Err(mismatch(&ex.id)),
                }
            }
            Ok(TaskScores {
                report: prf(&g, &p, Some(&spec.labels), MacroOver::GoldPresent)?,
                span: None,
            })
        }
        TaskKind::Multilabel => {
            let mut g: Vec<LabelSet> = Vec::new();
            let mut p: Vec<LabelSet> = Vec::new();
            for (ex, pr) in examples.iter().zip(preds) {
                match (&ex.gold, pr) {
                    (Gold::Set(a), Gold::Set(b)) => {
                        g.push(label_names(spec, a.iter().copied()).into_iter().collect());
                        p.push(label_names(spec, b.iter().copied()).into_iter().collect());
                    }
                    _ => return Err(mismatch(&ex.id)),
                }
            }
            Ok(TaskScores {
                report: multilabel_report(&g, &p, Some(&spec.labels), MacroOver::GoldPresent)?,
                span: None,
            })
        }
    }
}

fn check_examples(spec: &TaskSpec, examples: &[TaskExample]) -> Result<()> {
    let n = spec.labels.len();
    for ex in examples {
        let bad = |m: String| Error::Data {
            example: ex.id.clone(),
            message: m,
        };
        let ok = match (&ex.gold, spec.kind) {
            (Gold::Tags(t), TaskKind::TokenCls) => {
                if t.len() != ex.words.len() {
                    return Err(bad(format!("{} tags for {} words", t.len(), ex.words.len())));
                }
                t.iter().all(|&i| i < n)
            }
            (Gold::Label(i), TaskKind::SeqCls) => *i < n,
            (Gold::Set(s), TaskKind::Multilabel) => {
                if s.is_empty() && !spec.allow_empty {
                    return Err(bad("empty label set".into()));
                }
                s.iter().all(|&i| i < n)
            }
            _ => return Err(bad("annotation does not match the task kind".into())),
        };
        if !ok {
            return Err(bad("label id outside the task's label list".into()));
        }
    }
    Ok(())
}

/// Fine-tune `checkpoint` on `train`, selecting the epoch with the best dev score.
pub fn finetune(
    checkpoint: &Checkpoint,
    tok: &SubwordModel,
    spec: &TaskSpec,
    train: &[TaskExample],
    dev: &[TaskExample],
    cfg: &FinetuneConfig,
    exec: Exec,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    spec.validate()?;
    checkpoint.check_tokenizer(tok)?;
    check_examples(spec, train)?;
    check_examples(spec, dev)?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::InvalidInput("train and dev splits must be non-empty".into()));
    }
    let encoder = checkpoint.encoder()?;
    let mut model = TaskModel::new(
        encoder,
        spec.clone(),
        tok.fingerprint().to_string(),
        cfg.head_init_std,
        derive_seed(cfg.seed, &[0x68656164]),
    )?;
    let order = spec.canonical_order();
    let max_seq = model.encoder.config.max_seq;
    let encoded: Vec<Encoded> = exec.map(train, |ex| encode_example(tok, ex, max_seq));
    let mut opt_enc = AdamState::new(&model.encoder.params);
    let mut opt_head = AdamState::new(&model.head);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.max_epochs;
    let mut step = 0;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, TaskModel)> = None;
    let mut stale = 0;
    let width = exec.width().max(1);
    let mut scratch: Vec<(ParamSet, ParamSet)> = (0..width)
        .map(|_| (model.encoder.params.zeros_like(), model.head.zeros_like()))
        .collect();

    for epoch in 0..cfg.max_epochs {
        let perm = shuffled_indices(train.len(), derive_seed(cfg.seed, &[0x6570, epoch as u64]));
        let mut epoch_loss = 0.0;
        let mut epoch_units = 0usize;
        for batch in perm.chunks(cfg.batch_size) {
            let units: usize = batch
                .iter()
                .map(|&i| match &train[i].gold {
                    Gold::Tags(_) => encoded[i].first_sub.iter().flatten().count(),
                    Gold::Label(_) => 1,
                    Gold::Set(_) => spec.labels.len(),
                })
                .sum();
            let scale = 1.0 / units.max(1) as f64;
            let mut g_enc = model.encoder.params.zeros_like();
            let mut g_head = model.head.zeros_like();
            let mut batch_loss = 0.0;
            for chunk in batch.chunks(width) {
                let slots = &mut scratch[..chunk.len()];
                let losses: Vec<f64> = {
                    let m = &model;
                    let results = std::sync::Mutex::new(vec![0.0; chunk.len()]);
                    exec.for_each_mut(slots, |k, (ge, gh)| {
                        let i = chunk[k];
                        let mut rng =
                            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x6472, step as u64, i as u64]));
                        let st = m.forward_one(&encoded[i], Some(&mut rng));
                        let (loss, mut dlog) = m.loss_grad(&st, &encoded[i], &train[i].gold, &order);
                        dlog.iter_mut().for_each(|x| *x *= scale);
                        ge.fill_zero();
                        gh.fill_zero();
                        m.backward_one(&st, &dlog, &order, ge, gh);
                        results.lock().expect("no poisoning")[k] = loss;
                    });
                    results.into_inner().expect("no poisoning")
                };
                for ((ge, gh), loss) in slots.iter().zip(losses) {
                    g_enc.add_assign(ge);
                    g_head.add_assign(gh);
                    batch_loss += loss;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: step as u64,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss;
            epoch_units += units;
            let lr = cfg.lr_at(step, total);
            adam_step(&cfg.adam, &mut opt_enc, &mut model.encoder.params, &g_enc, lr)?;
            adam_step(&cfg.adam, &mut opt_head, &mut model.head, &g_head, lr)?;
            step += 1;
        }
        let preds = model.predict(tok, dev, exec)?;
        let dev_score = score(spec, dev, &preds)?.primary(spec.metric);
        history.push(EpochLog {
            epoch,
            train_loss: epoch_loss / epoch_units.max(1) as f64,
            dev_score,
        });
        let improved = best.as_ref().is_none_or(|(b, _, _)| dev_score > *b);
        if improved {
            best = Some((dev_score, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        if dev_score >= 1.0 || stale >= cfg.patience {
            break;
        }
    }
    let (best_dev, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(FinetuneOutcome {
        model,
        history,
        best_epoch,
        best_dev,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub best_epoch: usize,
    pub dev_score: f64,
    pub history: Vec<EpochLog>,
    /// Scores on the test split, or on dev when there is no test split.
    pub eval: TaskScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub model: String,
    pub task: String,
    pub kind: TaskKind,
    pub metric: TaskMetric,
    pub runs: Vec<SeedRun>,
    /// Mean and spread of each table column across runs.
    pub summary: Vec<(String, Spread)>,
}

impl EvalResult {
    pub fn row(&self) -> ResultRow {
        ResultRow {
            model: self.model.clone(),
            task: self.task.clone(),
            scores: self.summary.clone(),
        }
    }
}

pub struct EvalInputs<'a> {
    pub model_name: &'a str,
    pub checkpoint: &'a Checkpoint,
    pub tokenizer: &'a SubwordModel,
    pub spec: &'a TaskSpec,
    pub train: &'a [TaskExample],
    pub dev: &'a [TaskExample],
    pub test: Option<&'a [TaskExample]>,
}

/// Fine-tune once per seed and aggregate scores. Runs are independent and
/// may execute concurrently; results keep the order of `seeds`.
pub fn evaluate_seeds(inp: &EvalInputs<'_>, cfg: &FinetuneConfig, seeds: &[u64], exec: Exec) -> Result<EvalResult> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let runs = exec.map(seeds, |&seed| -> Result<SeedRun> {
        let c = FinetuneConfig { seed, ..*cfg };
        let out = finetune(
            inp.checkpoint,
            inp.tokenizer,
            inp.spec,
            inp.train,
            inp.dev,
            &c,
            Exec::Sequential,
        )?;
        let eval_set = inp.test.unwrap_or(inp.dev);
        let preds = out.model.predict(inp.tokenizer, eval_set, Exec::Sequential)?;
        Ok(SeedRun {
            seed,
            best_epoch: out.best_epoch,
            dev_score: out.best_dev,
            history: out.history,
            eval: score(inp.spec, eval_set, &preds)?,
        })
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = runs[0]
        .eval
        .columns(inp.spec.metric)
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let summary = names
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let xs: Vec<f64> = runs.iter().map(|r| r.eval.columns(inp.spec.metric)[k].1).collect();
            (n.clone(), Spread::of(&xs))
        })
        .collect();
    Ok(EvalResult {
        model: inp.model_name.to_string(),
        task: inp.spec.name.clone(),
        kind: inp.spec.kind,
        metric: inp.spec.metric,
        runs,
        summary,
    })
}
