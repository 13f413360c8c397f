//! MLM pre-training: learning-rate schedule, the two pre-training strategies,
//! checkpoints with exact resume, loss traces and loss-anomaly detection.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig, Mode};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hashing::derive_seed;
use crate::io;
use crate::mlm::{mask, pack, MaskedBatch, MaskingPolicy, PAPER_BATCH_ROWS, PAPER_SEQ_LEN};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::subtok::{SubwordModel, TokenId};
use crate::tensor::{decode_blocks, encode_blocks, ParamSet};
use crate::textprep::shuffled_indices;

pub const CHECKPOINT_FORMAT: &str = "forge-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Masking seed of the fixed probe batch used to compare runs.
pub const PROBE_SEED: u64 = 0x5eed0fb0be;
pub const PROBE_ROWS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub batch_rows: usize,
    pub seq_len: usize,
    /// Micro-batches per update; the update equals one full-batch step.
    pub accum_steps: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
    pub select_prob: f64,
}

impl TrainConfig {
    /// Settings sized for a laptop CPU and the desk encoder.
    pub fn desk() -> Self {
        TrainConfig {
            total_steps: 300,
            warmup_steps: 30,
            peak_lr: 5e-3,
            batch_rows: 64,
            seq_len: 32,
            accum_steps: 1,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 100,
            select_prob: 0.15,
        }
    }

    /// Full-scale schedule: 80k steps of 4,096 rows × 512 tokens, 10k warmup to 5e-5.
    pub fn paper() -> Self {
        TrainConfig {
            total_steps: 80_000,
            warmup_steps: 10_000,
            peak_lr: 5e-5,
            batch_rows: PAPER_BATCH_ROWS,
            seq_len: PAPER_SEQ_LEN,
            accum_steps: 1,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 5_000,
            select_prob: 0.15,
        }
    }

    pub fn tokens_per_step(&self) -> usize {
        self.batch_rows * self.seq_len
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.total_steps == 0 {
            return bad("total_steps must be positive".into());
        }
        if self.warmup_steps > self.total_steps {
            return bad(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad("peak_lr must be positive".into());
        }
        if self.batch_rows == 0 || self.accum_steps == 0 || !self.batch_rows.is_multiple_of(self.accum_steps) {
            return bad("batch_rows must be a positive multiple of accum_steps".into());
        }
        if !(0.0..=1.0).contains(&self.select_prob) {
            return bad("select_prob must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn masking_policy(&self) -> MaskingPolicy {
        MaskingPolicy {
            select_prob: self.select_prob,
            ..MaskingPolicy::new(derive_seed(self.seed, &[0x6d61736b]))
        }
    }

    /// Linear warmup from 0 to `peak_lr`, then linear decay to 0 at `total_steps`.
    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::InvalidInput(format!(
                "step {step} outside schedule of {} steps",
                self.total_steps
            )));
        }
        if step < self.warmup_steps {
            return Ok(self.peak_lr * step as f64 / self.warmup_steps as f64);
        }
        let rest = self.total_steps - self.warmup_steps;
        if rest == 0 {
            return Ok(self.peak_lr);
        }
        Ok(self.peak_lr * (self.total_steps - step) as f64 / rest as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    FromScratch,
    Continual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerSource {
    Fresh,
    FromCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub init_checkpoint: Option<PathBuf>,
    pub tokenizer_source: TokenizerSource,
}

impl Strategy {
    pub fn from_scratch() -> Self {
        Strategy {
            kind: StrategyKind::FromScratch,
            init_checkpoint: None,
            tokenizer_source: TokenizerSource::Fresh,
        }
    }

    pub fn continual(checkpoint: impl Into<PathBuf>) -> Self {
        Strategy {
            kind: StrategyKind::Continual,
            init_checkpoint: Some(checkpoint.into()),
            tokenizer_source: TokenizerSource::FromCheckpoint,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.init_checkpoint, self.tokenizer_source) {
            (StrategyKind::FromScratch, None, TokenizerSource::Fresh) => Ok(()),
            (StrategyKind::FromScratch, _, _) => Err(Error::Config(
                "from-scratch training takes a fresh tokenizer and no initial checkpoint".into(),
            )),
            (StrategyKind::Continual, Some(_), TokenizerSource::FromCheckpoint) => Ok(()),
            (StrategyKind::Continual, _, _) => Err(Error::Config(
                "continual training needs an initial checkpoint and keeps its tokenizer".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub strategy: StrategyKind,
    pub tokenizer_fingerprint: String,
    /// Updates completed. Randomness is derived from `(train.seed, step)`,
    /// so this cursor is the whole RNG state.
    pub step: u64,
    pub params: ParamSet,
    pub optimizer: AdamState,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    format_version: u32,
    encoder: EncoderConfig,
    train: TrainConfig,
    strategy: StrategyKind,
    tokenizer_fingerprint: String,
    step: u64,
    rng: RngCursor,
    optimizer_step: u64,
}

#[derive(Serialize, Deserialize)]
struct RngCursor {
    seed: u64,
    step: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            format_version: CHECKPOINT_VERSION,
            encoder: self.encoder.clone(),
            train: self.train.clone(),
            strategy: self.strategy,
            tokenizer_fingerprint: self.tokenizer_fingerprint.clone(),
            step: self.step,
            rng: RngCursor {
                seed: self.train.seed,
                step: self.step,
            },
            optimizer_step: self.optimizer.step,
        };
        encode_blocks(
            serde_json::to_value(&header)?,
            &[&self.params, &self.optimizer.m, &self.optimizer.v],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, sets) = decode_blocks(bytes)?;
        if header.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Format("not a forge checkpoint".into()));
        }
        let version = header.get("format_version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version:?}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let h: CheckpointHeader = serde_json::from_value(header)?;
        let [params, m, v]: [ParamSet; 3] = sets
            .try_into()
            .map_err(|_| Error::Format("checkpoint must hold exactly three blocks".into()))?;
        params.check_compatible(&m)?;
        params.check_compatible(&v)?;
        // validates names and shapes against the config
        let enc = Encoder::from_params(h.encoder.clone(), params)?;
        Ok(Checkpoint {
            encoder: h.encoder,
            train: h.train,
            strategy: h.strategy,
            tokenizer_fingerprint: h.tokenizer_fingerprint,
            step: h.step,
            params: enc.params,
            optimizer: AdamState {
                step: h.optimizer_step,
                m,
                v,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_bytes(path)?)
    }

    pub fn encoder(&self) -> Result<Encoder> {
        Encoder::from_params(self.encoder.clone(), self.params.clone())
    }

    /// Error unless `tokenizer` is the one this checkpoint was trained with.
    pub fn check_tokenizer(&self, tokenizer: &SubwordModel) -> Result<()> {
        if self.tokenizer_fingerprint != tokenizer.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: self.tokenizer_fingerprint.clone(),
                actual: tokenizer.fingerprint().to_string(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Per-update training loss. `step` counts updates completed before the row's
/// update, so `lr` equals `lr_at(step)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        io::write_atomic(path, &bytes)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let bytes = io::read_bytes(path)?;
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let rows = r.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?;
        Ok(LossTrace { rows })
    }

    /// Mean loss over the last `n` rows.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let k = n.min(self.rows.len()).max(1);
        self.rows[self.rows.len().saturating_sub(k)..]
            .iter()
            .map(|r| r.loss)
            .sum::<f64>()
            / k as f64
    }

    /// Mean loss over the first `n` rows.
    pub fn head_mean(&self, n: usize) -> f64 {
        let k = n.min(self.rows.len()).max(1);
        self.rows[..k.min(self.rows.len())].iter().map(|r| r.loss).sum::<f64>() / k as f64
    }
}

/// Encode sentences and pack them into training rows.
pub fn prepare_rows<S: AsRef<str> + Sync>(
    sentences: &[S],
    tokenizer: &SubwordModel,
    seq_len: usize,
    exec: Exec,
) -> Result<Vec<Vec<TokenId>>> {
    let streams: Vec<Vec<TokenId>> = tokenizer
        .encode_batch(sentences, exec)
        .into_iter()
        .map(|e| e.ids)
        .filter(|ids| !ids.is_empty())
        .collect();
    pack(&streams, seq_len)
}

/// Row indices of update `step`: consecutive slices of a fresh permutation per epoch.
pub fn batch_indices(n_rows: usize, batch_rows: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch_rows);
    let start = step as usize * batch_rows;
    let mut epoch = usize::MAX;
    let mut perm = Vec::new();
    for q in start..start + batch_rows {
        let e = q / n_rows;
        if e != epoch {
            epoch = e;
            perm = shuffled_indices(n_rows, derive_seed(seed, &[0x7065726d, e as u64]));
        }
        out.push(perm[q % n_rows]);
    }
    out
}

/// The fixed eval batch: the first rows of the corpus under a constant mask.
pub fn probe_batch(rows: &[Vec<TokenId>], vocab_size: usize) -> Result<MaskedBatch> {
    let take = &rows[..rows.len().min(PROBE_ROWS)];
    mask(take, &MaskingPolicy::new(PROBE_SEED), vocab_size, 0, Exec::Sequential)
}

/// Eval-mode loss on the probe batch.
pub fn probe_loss(encoder: &Encoder, rows: &[Vec<TokenId>], exec: Exec) -> Result<f64> {
    let batch = probe_batch(rows, encoder.config.vocab_size)?;
    Ok(encoder.forward(&batch, Mode::Eval, exec)?.loss)
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub exec: Exec,
    /// Directory for intermediate checkpoints and the trace.
    pub out_dir: Option<PathBuf>,
    /// Continue an interrupted run from this checkpoint.
    pub resume: Option<PathBuf>,
    /// Stop once this many updates are complete (the schedule is unchanged).
    pub stop_at: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub trace: LossTrace,
    pub initial_probe_loss: f64,
    pub final_probe_loss: f64,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("step-{step:06}.ckpt"))
}

/// Run MLM pre-training under `strategy` on packed `rows`.
pub fn pretrain(
    strategy: &Strategy,
    rows: &[Vec<TokenId>],
    tokenizer: &SubwordModel,
    encoder_config: &EncoderConfig,
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<PretrainOutcome> {
    strategy.validate()?;
    cfg.validate()?;
    encoder_config.validate()?;
    if encoder_config.vocab_size != tokenizer.vocab_size() {
        return Err(Error::Config(format!(
            "encoder vocab_size {} differs from the tokenizer's {}",
            encoder_config.vocab_size,
            tokenizer.vocab_size()
        )));
    }
    if cfg.seq_len > encoder_config.max_seq {
        return Err(Error::Config(format!(
            "seq_len {} exceeds the encoder's max_seq {}",
            cfg.seq_len, encoder_config.max_seq
        )));
    }
    if rows.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(r) = rows.iter().find(|r| r.len() != cfg.seq_len) {
        return Err(Error::Shape {
            name: "training rows".into(),
            expected: vec![cfg.seq_len],
            actual: vec![r.len()],
        });
    }

    let (mut encoder, mut opt, start) = if let Some(path) = &opts.resume {
        let ck = Checkpoint::load(path)?;
        ck.check_tokenizer(tokenizer)?;
        if &ck.encoder != encoder_config || &ck.train != cfg || ck.strategy != strategy.kind {
            return Err(Error::Config(
                "resume checkpoint was written by a run with a different configuration".into(),
            ));
        }
        let enc = ck.encoder()?;
        (enc, ck.optimizer, ck.step)
    } else {
        let enc = match strategy.kind {
            StrategyKind::FromScratch => Encoder::new(encoder_config.clone(), derive_seed(cfg.seed, &[0x696e6974]))?,
            StrategyKind::Continual => {
                let path = strategy.init_checkpoint.as_ref().expect("validated");
                let ck = Checkpoint::load(path)?;
                ck.check_tokenizer(tokenizer)?;
                if &ck.encoder != encoder_config {
                    return Err(Error::Config(
                        "initial checkpoint's encoder configuration differs from the requested one".into(),
                    ));
                }
                ck.encoder()?
            }
        };
        let opt = AdamState::new(&enc.params);
        (enc, opt, 0)
    };

    let exec = opts.exec;
    let policy = cfg.masking_policy();
    let initial_probe_loss = probe_loss(&encoder, rows, exec)?;
    let stop = opts.stop_at.unwrap_or(cfg.total_steps).min(cfg.total_steps);
    let micro = cfg.batch_rows / cfg.accum_steps;
    let mut trace = LossTrace::default();

    let snapshot = |encoder: &Encoder, opt: &AdamState, step: u64| Checkpoint {
        encoder: encoder.config.clone(),
        train: cfg.clone(),
        strategy: strategy.kind,
        tokenizer_fingerprint: tokenizer.fingerprint().to_string(),
        step,
        params: encoder.params.clone(),
        optimizer: opt.clone(),
    };

    for step in start..stop {
        let idx = batch_indices(rows.len(), cfg.batch_rows, cfg.seed, step);
        let chosen: Vec<Vec<TokenId>> = idx.iter().map(|&i| rows[i].clone()).collect();
        let batch = mask(&chosen, &policy, encoder.config.vocab_size, step, exec)?;
        let n_targets = batch.n_targets();
        let scale = if n_targets == 0 { 0.0 } else { 1.0 / n_targets as f64 };
        let dropout_seed = derive_seed(cfg.seed, &[0x64726f70, step]);
        let mut grads = encoder.params.zeros_like();
        let mut loss_sum = 0.0;
        for a in 0..cfg.accum_steps {
            let part: Vec<usize> = (a * micro..(a + 1) * micro).collect();
            let mb = batch.select_rows(&part);
            let mode = Mode::Train {
                dropout_seed,
                row_offset: a * micro,
            };
            let pass = encoder.forward(&mb, mode, exec)?;
            loss_sum += pass.loss_sum;
            encoder.backward_into(&pass, scale, exec, &mut grads);
        }
        let loss = loss_sum * scale;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        let lr = cfg.lr_at(step)?;
        adam_step(&cfg.adam, &mut opt, &mut encoder.params, &grads, lr)?;
        trace.rows.push(TraceRow { step, loss, lr });
        let done = step + 1;
        if let Some(dir) = &opts.out_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                snapshot(&encoder, &opt, done).save(&checkpoint_path(dir, done))?;
            }
        }
    }

    let final_probe_loss = probe_loss(&encoder, rows, exec)?;
    let checkpoint = snapshot(&encoder, &opt, stop.max(start));
    if let Some(dir) = &opts.out_dir {
        if stop < cfg.total_steps {
            checkpoint.save(&checkpoint_path(dir, checkpoint.step))?;
        }
    }
    Ok(PretrainOutcome {
        checkpoint,
        trace,
        initial_probe_loss,
        final_probe_loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AnomalyKind {
    Collapse,
    Spike,
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyKind::Collapse => "COLLAPSE",
            AnomalyKind::Spike => "SPIKE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyConfig {
    pub window: usize,
    pub collapse_threshold: f64,
    pub spike_factor: f64,
}

impl AnomalyConfig {
    pub fn new(window: usize) -> Self {
        AnomalyConfig {
            window,
            collapse_threshold: 0.05,
            spike_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    /// Index into the loss sequence.
    pub index: usize,
    pub kind: AnomalyKind,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Flag loss collapse and spikes.
///
/// COLLAPSE is reported at the last index of the first window (of `window`
/// consecutive losses) whose mean drops below the threshold, once per
/// contiguous collapsed stretch. SPIKE is reported at index `i` when
/// `loss[i]` exceeds `spike_factor` times the median of the preceding
/// `window` losses. Traces shorter than two windows yield no flags.
pub fn detect_anomaly(losses: &[f64], cfg: &AnomalyConfig) -> Vec<Anomaly> {
    let w = cfg.window;
    let mut out = Vec::new();
    if w == 0 || losses.len() < 2 * w {
        return out;
    }
    let mut collapsed = false;
    for end in w - 1..losses.len() {
        let win = &losses[end + 1 - w..=end];
        let mean = win.iter().sum::<f64>() / w as f64;
        let now = mean < cfg.collapse_threshold;
        if now && !collapsed {
            out.push(Anomaly {
                index: end,
                kind: AnomalyKind::Collapse,
            });
        }
        collapsed = now;
        if end >= w {
            let med = median(&losses[end - w..end]);
            if losses[end] > cfg.spike_factor * med {
                out.push(Anomaly {
                    index: end,
                    kind: AnomalyKind::Spike,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let c = TrainConfig::paper();
        assert_eq!(c.lr_at(0).unwrap(), 0.0);
        assert_eq!(c.lr_at(10_000).unwrap(), 5e-5);
        assert_eq!(c.lr_at(5_000).unwrap(), 2.5e-5);
        assert_eq!(c.lr_at(80_000).unwrap(), 0.0);
        assert!(c.lr_at(80_001).is_err());
        assert_eq!(c.tokens_per_step(), 2_097_152);
    }

    #[test]
    fn zero_warmup_starts_at_peak() {
        let c = TrainConfig {
            warmup_steps: 0,
            total_steps: 10,
            ..TrainConfig::desk()
        };
        assert_eq!(c.lr_at(0).unwrap(), c.peak_lr);
    }

    #[test]
    fn invalid_configs() {
        let mut c = TrainConfig::desk();
        c.warmup_steps = c.total_steps + 1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk();
        c.peak_lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk();
        c.accum_steps = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn strategy_invariants() {
        assert!(Strategy::from_scratch().validate().is_ok());
        assert!(Strategy::continual("x.ckpt").validate().is_ok());
        let mut s = Strategy::from_scratch();
        s.tokenizer_source = TokenizerSource::FromCheckpoint;
        assert!(s.validate().is_err());
        let mut s = Strategy::continual("x");
        s.init_checkpoint = None;
        assert!(s.validate().is_err());
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let n = 10;
        let mut seen: Vec<usize> = (0..5).flat_map(|s| batch_indices(n, 4, 7, s)).collect();
        assert_eq!(seen.len(), 20);
        let mut first: Vec<usize> = seen.drain(..10).collect();
        first.sort();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn constant_trace_has_no_flags() {
        assert!(detect_anomaly(&[2.0; 100], &AnomalyConfig::new(10)).is_empty());
    }

    #[test]
    fn single_outlier_is_one_spike() {
        let mut t = vec![2.0; 60];
        t[30] = 20.0;
        let a = detect_anomaly(&t, &AnomalyConfig::new(10));
        assert_eq!(
            a,
            vec![Anomaly {
                index: 30,
                kind: AnomalyKind::Spike
            }]
        );
    }

    #[test]
    fn collapse_at_first_low_window() {
        // 2.0 for 40 steps, then 0: windows of 10 ending at 40+k hold (9-k) twos.
        // Mean < 0.05 only once no twos remain, i.e. the window ending at 49.
        let mut t = vec![2.0; 40];
        t.extend(vec![0.0; 40]);
        let a = detect_anomaly(&t, &AnomalyConfig::new(10));
        assert_eq!(
            a,
            vec![Anomaly {
                index: 49,
                kind: AnomalyKind::Collapse
            }]
        );
    }

    #[test]
    fn short_trace_is_ignored() {
        assert!(detect_anomaly(&[0.0; 15], &AnomalyConfig::new(10)).is_empty());
    }
}
