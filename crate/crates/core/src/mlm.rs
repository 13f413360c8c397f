//! Packing of token streams into fixed-length rows and dynamic MLM masking.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hashing::derive_seed;
use crate::io;
use crate::subtok::{TokenId, EOS, MASK, N_SPECIALS, PAD};

/// Label value at positions that take no part in the loss.
pub const IGNORE_INDEX: i32 = -100;
pub const MIN_SEQ_LEN: usize = 8;

/// Full-size packing: 4,096 rows of 512 tokens per step.
pub const PAPER_SEQ_LEN: usize = 512;
pub const PAPER_BATCH_ROWS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingPolicy {
    pub select_prob: f64,
    pub mask_frac: f64,
    pub random_frac: f64,
    pub keep_frac: f64,
    pub seed: u64,
    pub never_mask: BTreeSet<TokenId>,
}

impl MaskingPolicy {
    /// 15% selection, split 80/10/10 into mask/random/keep; specials never selected.
    pub fn new(seed: u64) -> Self {
        MaskingPolicy {
            select_prob: 0.15,
            mask_frac: 0.8,
            random_frac: 0.1,
            keep_frac: 0.1,
            seed,
            never_mask: (0..N_SPECIALS as TokenId).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.select_prob) || !unit(self.mask_frac) || !unit(self.random_frac) || !unit(self.keep_frac) {
            return Err(Error::Config("masking probabilities must lie in [0, 1]".into()));
        }
        let s = self.mask_frac + self.random_frac + self.keep_frac;
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mask/random/keep fractions sum to {s}, not 1")));
        }
        if !self.never_mask.contains(&PAD) {
            return Err(Error::Config("the pad id must never be masked".into()));
        }
        Ok(())
    }
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self::new(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedBatch {
    pub batch: usize,
    pub seq_len: usize,
    /// Row-major `[batch × seq_len]`.
    pub input_ids: Vec<TokenId>,
    pub labels: Vec<i32>,
    pub attention: Vec<bool>,
}

impl MaskedBatch {
    /// A batch without masking: all labels ignored.
    pub fn unmasked(rows: &[Vec<TokenId>]) -> Result<Self> {
        let seq_len = check_rows(rows)?;
        let input_ids: Vec<TokenId> = rows.iter().flatten().copied().collect();
        let attention = input_ids.iter().map(|&t| t != PAD).collect();
        Ok(MaskedBatch {
            batch: rows.len(),
            seq_len,
            labels: vec![IGNORE_INDEX; input_ids.len()],
            input_ids,
            attention,
        })
    }

    pub fn row_ids(&self, r: usize) -> &[TokenId] {
        &self.input_ids[r * self.seq_len..(r + 1) * self.seq_len]
    }

    pub fn row_labels(&self, r: usize) -> &[i32] {
        &self.labels[r * self.seq_len..(r + 1) * self.seq_len]
    }

    pub fn row_attention(&self, r: usize) -> &[bool] {
        &self.attention[r * self.seq_len..(r + 1) * self.seq_len]
    }

    /// Number of positions that contribute to the loss.
    pub fn n_targets(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE_INDEX).count()
    }

    /// Select a subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> MaskedBatch {
        let mut out = MaskedBatch {
            batch: rows.len(),
            seq_len: self.seq_len,
            input_ids: Vec::with_capacity(rows.len() * self.seq_len),
            labels: Vec::with_capacity(rows.len() * self.seq_len),
            attention: Vec::with_capacity(rows.len() * self.seq_len),
        };
        for &r in rows {
            out.input_ids.extend_from_slice(self.row_ids(r));
            out.labels.extend_from_slice(self.row_labels(r));
            out.attention.extend_from_slice(self.row_attention(r));
        }
        out
    }

    /// Debug dump: `<stem>.bin` holds input ids, labels and attention as
    /// little-endian i32 matrices in that order; `<stem>.json` describes them.
    pub fn dump(&self, dir: &Path, stem: &str, policy: &MaskingPolicy, step: u64) -> Result<()> {
        let mut bin = Vec::with_capacity(self.input_ids.len() * 12);
        for &x in &self.input_ids {
            bin.extend_from_slice(&(x as i32).to_le_bytes());
        }
        for &x in &self.labels {
            bin.extend_from_slice(&x.to_le_bytes());
        }
        for &x in &self.attention {
            bin.extend_from_slice(&(x as i32).to_le_bytes());
        }
        let sidecar = serde_json::json!({
            "arrays": ["input_ids", "labels", "attention"],
            "dtype": "i32le",
            "shape": [self.batch, self.seq_len],
            "ignore_index": IGNORE_INDEX,
            "policy": policy,
            "step": step,
        });
        io::write_atomic(&dir.join(format!("{stem}.bin")), &bin)?;
        io::write_json_pretty(&dir.join(format!("{stem}.json")), &sidecar)
    }
}

fn check_rows(rows: &[Vec<TokenId>]) -> Result<usize> {
    let seq_len = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != seq_len) {
        return Err(Error::InvalidInput("rows must all have the same length".into()));
    }
    Ok(seq_len)
}

/// Concatenate sentences with `</s>` between them and cut into rows of
/// exactly `seq_len` tokens; the last row is padded.
pub fn pack(streams: &[Vec<TokenId>], seq_len: usize) -> Result<Vec<Vec<TokenId>>> {
    if seq_len < MIN_SEQ_LEN {
        return Err(Error::Config(format!(
            "sequence length {seq_len} is below the minimum of {MIN_SEQ_LEN}"
        )));
    }
    let mut flat: Vec<TokenId> = Vec::new();
    for (i, s) in streams.iter().enumerate() {
        if i > 0 {
            flat.push(EOS);
        }
        flat.extend_from_slice(s);
    }
    if flat.is_empty() {
        return Err(Error::InvalidInput("nothing to pack".into()));
    }
    Ok(flat
        .chunks(seq_len)
        .map(|c| {
            let mut row = c.to_vec();
            row.resize(seq_len, PAD);
            row
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskStats {
    pub positions: u64,
    pub eligible: u64,
    pub selected: u64,
    pub masked: u64,
    pub randomized: u64,
    pub kept: u64,
}

impl std::ops::AddAssign for MaskStats {
    fn add_assign(&mut self, o: Self) {
        self.positions += o.positions;
        self.eligible += o.eligible;
        self.selected += o.selected;
        self.masked += o.masked;
        self.randomized += o.randomized;
        self.kept += o.kept;
    }
}

/// Dynamic masking: the selection is drawn fresh from `(policy.seed, step, row)`.
pub fn mask(
    rows: &[Vec<TokenId>],
    policy: &MaskingPolicy,
    vocab_size: usize,
    step: u64,
    exec: Exec,
) -> Result<MaskedBatch> {
    mask_with_stats(rows, policy, vocab_size, step, exec).map(|(b, _)| b)
}

pub fn mask_with_stats(
    rows: &[Vec<TokenId>],
    policy: &MaskingPolicy,
    vocab_size: usize,
    step: u64,
    exec: Exec,
) -> Result<(MaskedBatch, MaskStats)> {
    policy.validate()?;
    let seq_len = check_rows(rows)?;
    if let Some(&bad) = rows.iter().flatten().find(|&&t| t as usize >= vocab_size) {
        return Err(Error::InvalidInput(format!(
            "token id {bad} outside vocabulary of {vocab_size}"
        )));
    }
    let candidates: Vec<TokenId> = (N_SPECIALS as TokenId..vocab_size as TokenId)
        .filter(|t| !policy.never_mask.contains(t))
        .collect();
    let per_row = exec.map_range(rows.len(), |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(policy.seed, &[step, r as u64]));
        let row = &rows[r];
        let mut ids = row.clone();
        let mut labels = vec![IGNORE_INDEX; seq_len];
        let mut st = MaskStats {
            positions: seq_len as u64,
            ..Default::default()
        };
        for (i, &t) in row.iter().enumerate() {
            if policy.never_mask.contains(&t) {
                continue;
            }
            st.eligible += 1;
            if rng.random::<f64>() >= policy.select_prob {
                continue;
            }
            st.selected += 1;
            labels[i] = t as i32;
            let u = rng.random::<f64>();
            if u < policy.mask_frac {
                ids[i] = MASK;
                st.masked += 1;
            } else if u < policy.mask_frac + policy.random_frac && !candidates.is_empty() {
                ids[i] = candidates[rng.random_range(0..candidates.len())];
                st.randomized += 1;
            } else {
                st.kept += 1;
            }
        }
        (ids, labels, st)
    });
    let mut batch = MaskedBatch {
        batch: rows.len(),
        seq_len,
        input_ids: Vec::with_capacity(rows.len() * seq_len),
        labels: Vec::with_capacity(rows.len() * seq_len),
        attention: Vec::with_capacity(rows.len() * seq_len),
    };
    let mut stats = MaskStats::default();
    for (r, (ids, labels, st)) in per_row.into_iter().enumerate() {
        batch.attention.extend(rows[r].iter().map(|&t| t != PAD));
        batch.input_ids.extend(ids);
        batch.labels.extend(labels);
        stats += st;
    }
    Ok((batch, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize, len: usize, vocab: u32) -> Vec<Vec<TokenId>> {
        (0..n)
            .map(|r| (0..len).map(|i| 5 + ((r * 31 + i * 7) as u32 % (vocab - 5))).collect())
            .collect()
    }

    #[test]
    fn pack_exact_and_partial() {
        let one = pack(&[vec![9; 16]], 16).unwrap();
        assert_eq!(one.len(), 1);
        assert!(!one[0].contains(&PAD));
        // 19 + 1 eos + 19 = 39 + 1 eos = 40 tokens = 2.5 rows
        let r = pack(&[vec![9; 19], vec![8; 19], vec![7; 0]], 16).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[2][7], EOS);
        assert_eq!(r[2][8..], [PAD; 8]);
        assert_eq!(r[1][3], EOS);
        assert!(pack(&[vec![1]], 4).is_err());
        assert!(pack(&[], 16).is_err());
    }

    #[test]
    fn zero_selection_leaves_input() {
        let rs = rows(4, 16, 50);
        let p = MaskingPolicy {
            select_prob: 0.0,
            ..MaskingPolicy::new(1)
        };
        let b = mask(&rs, &p, 50, 0, Exec::Sequential).unwrap();
        assert_eq!(b.input_ids, rs.concat());
        assert!(b.labels.iter().all(|&l| l == IGNORE_INDEX));
    }

    #[test]
    fn full_selection_masks_everything_but_specials() {
        let mut rs = rows(2, 16, 50);
        rs[0][3] = PAD;
        rs[1][0] = EOS;
        let p = MaskingPolicy {
            select_prob: 1.0,
            mask_frac: 1.0,
            random_frac: 0.0,
            keep_frac: 0.0,
            ..MaskingPolicy::new(1)
        };
        let b = mask(&rs, &p, 50, 0, Exec::Sequential).unwrap();
        for (i, (&orig, (&inp, &lab))) in rs.concat().iter().zip(b.input_ids.iter().zip(&b.labels)).enumerate() {
            if orig < 5 {
                assert_eq!(inp, orig, "pos {i}");
                assert_eq!(lab, IGNORE_INDEX);
            } else {
                assert_eq!(inp, MASK);
                assert_eq!(lab, orig as i32);
            }
        }
        assert!(!b.attention[3]);
    }

    #[test]
    fn masking_is_dynamic_and_reproducible() {
        let rs = rows(8, 32, 100);
        let p = MaskingPolicy::new(42);
        let a = mask(&rs, &p, 100, 3, Exec::Sequential).unwrap();
        let b = mask(&rs, &p, 100, 3, Exec::Parallel).unwrap();
        let c = mask(&rs, &p, 100, 4, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.labels, c.labels);
    }

    #[test]
    fn invalid_policy_rejected() {
        let p = MaskingPolicy {
            keep_frac: 0.3,
            ..MaskingPolicy::new(0)
        };
        assert!(mask(&rows(1, 8, 20), &p, 20, 0, Exec::Sequential).is_err());
    }

    #[test]
    fn dump_writes_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = MaskingPolicy::new(0);
        let b = mask(&rows(2, 8, 20), &p, 20, 0, Exec::Sequential).unwrap();
        b.dump(dir.path(), "b0", &p, 0).unwrap();
        let bin = std::fs::read(dir.path().join("b0.bin")).unwrap();
        assert_eq!(bin.len(), 2 * 8 * 3 * 4);
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("b0.json")).unwrap()).unwrap();
        assert_eq!(side["shape"], serde_json::json!([2, 8]));
    }
}
