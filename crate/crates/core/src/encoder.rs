//! Post-norm Transformer encoder with an MLM head and hand-written backprop.
//!
//! ```text
//! ids ─ token emb + position emb ─ LN ─ drop ─┬─ [self-attn ─ drop ─ (+) ─ LN ─ FFN(GELU) ─ drop ─ (+) ─ LN] × L ─ H
//! MLM head (selected positions only): H ─ dense ─ GELU ─ LN ─ decoder (tied to token emb) + bias ─ softmax CE
//! ```
//!
//! Everything is computed per batch row. Rows run independently (in parallel
//! under [`Exec::Parallel`]) and per-row results are reduced in row order, so
//! losses and gradients are bitwise identical whatever the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hashing::derive_seed;
use crate::mlm::{MaskedBatch, IGNORE_INDEX};
use crate::subtok::TokenId;
use crate::tensor::{
    add_bias, col_sum_acc, dot, gelu, gelu_grad, layer_norm, layer_norm_backward, matmul, matmul_a_bt, matmul_a_bt_acc,
    matmul_at_b_acc, LnCache, ParamSet, Tensor,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub dropout: f64,
    pub param_init_std: f64,
    pub tie_embeddings: bool,
}

impl EncoderConfig {
    /// Desk-scale encoder: 2 layers, width 64, 2 heads. Dropout is off and the
    /// init is wider than the base preset so a few hundred steps on a tiny
    /// corpus make visible progress.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 2,
            d_ff: 256,
            vocab_size,
            max_seq: 128,
            dropout: 0.0,
            param_init_std: 0.1,
            tie_embeddings: true,
        }
    }

    /// Base-size encoder: 12 layers, width 768, 12 heads, 32k vocabulary.
    pub fn paper() -> Self {
        EncoderConfig {
            n_layers: 12,
            d_model: 768,
            n_heads: 12,
            d_ff: 3072,
            vocab_size: 32_000,
            max_seq: 512,
            dropout: 0.1,
            param_init_std: 0.02,
            tie_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("encoder dimensions must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.vocab_size == 0 || self.max_seq == 0 {
            return bad("vocab_size and max_seq must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.param_init_std <= 0.0 {
            return bad("param_init_std must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form parameter count.
    pub fn n_params(&self) -> usize {
        let (d, f, v, s) = (self.d_model, self.d_ff, self.vocab_size, self.max_seq);
        let embeddings = v * d + s * d + 2 * d;
        let layer = 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d) + 2 * d;
        let head = d * d + d + 2 * d + v + if self.tie_embeddings { 0 } else { d * v };
        embeddings + self.n_layers * layer + head
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Dropout active, drawn from `(dropout_seed, row_offset + row)`.
    Train {
        dropout_seed: u64,
        row_offset: usize,
    },
    Eval,
}

#[derive(Debug, Clone)]
struct LayerIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    tok: usize,
    pos: usize,
    eln_g: usize,
    eln_b: usize,
    layers: Vec<LayerIdx>,
    hd_w: usize,
    hd_b: usize,
    hln_g: usize,
    hln_b: usize,
    dec_w: Option<usize>,
    dec_b: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

fn build_layout(c: &EncoderConfig, mut make: impl FnMut(&str, &[usize], Init) -> usize) -> Layout {
    let (d, f, v) = (c.d_model, c.d_ff, c.vocab_size);
    let tok = make("embeddings.token", &[v, d], Init::Normal);
    let pos = make("embeddings.position", &[c.max_seq, d], Init::Normal);
    let eln_g = make("embeddings.ln.gain", &[d], Init::Ones);
    let eln_b = make("embeddings.ln.bias", &[d], Init::Zeros);
    let layers = (0..c.n_layers)
        .map(|l| {
            let mut m = |suffix: &str, shape: &[usize], init| make(&format!("layers.{l}.{suffix}"), shape, init);
            LayerIdx {
                wq: m("attn.q.weight", &[d, d], Init::Normal),
                bq: m("attn.q.bias", &[d], Init::Zeros),
                wk: m("attn.k.weight", &[d, d], Init::Normal),
                bk: m("attn.k.bias", &[d], Init::Zeros),
                wv: m("attn.v.weight", &[d, d], Init::Normal),
                bv: m("attn.v.bias", &[d], Init::Zeros),
                wo: m("attn.out.weight", &[d, d], Init::Normal),
                bo: m("attn.out.bias", &[d], Init::Zeros),
                ln1_g: m("attn_ln.gain", &[d], Init::Ones),
                ln1_b: m("attn_ln.bias", &[d], Init::Zeros),
                w1: m("ffn.in.weight", &[d, f], Init::Normal),
                b1: m("ffn.in.bias", &[f], Init::Zeros),
                w2: m("ffn.out.weight", &[f, d], Init::Normal),
                b2: m("ffn.out.bias", &[d], Init::Zeros),
                ln2_g: m("ffn_ln.gain", &[d], Init::Ones),
                ln2_b: m("ffn_ln.bias", &[d], Init::Zeros),
            }
        })
        .collect();
    let hd_w = make("head.dense.weight", &[d, d], Init::Normal);
    let hd_b = make("head.dense.bias", &[d], Init::Zeros);
    let hln_g = make("head.ln.gain", &[d], Init::Ones);
    let hln_b = make("head.ln.bias", &[d], Init::Zeros);
    let dec_w = (!c.tie_embeddings).then(|| make("head.decoder.weight", &[d, v], Init::Normal));
    let dec_b = make("head.decoder.bias", &[v], Init::Zeros);
    Layout {
        tok,
        pos,
        eln_g,
        eln_b,
        layers,
        hd_w,
        hd_b,
        hln_g,
        hln_b,
        dec_w,
        dec_b,
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamSet,
    layout: Layout,
}

#[derive(Debug, Clone)]
struct LayerCache {
    x_in: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    attn_drop: Option<Vec<f64>>,
    ln1: LnCache,
    x1: Vec<f64>,
    f_pre: Vec<f64>,
    f_act: Vec<f64>,
    ffn_drop: Option<Vec<f64>>,
    ln2: LnCache,
}

/// Activations of one row through the encoder body.
#[derive(Debug, Clone)]
pub struct BodyCache {
    ids: Vec<TokenId>,
    ln_e: LnCache,
    emb_drop: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    /// Final hidden states `[seq × d_model]`.
    pub hidden: Vec<f64>,
}

impl PartialEq for Encoder {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl BodyCache {
    pub fn seq_len(&self) -> usize {
        self.ids.len()
    }
}

#[derive(Debug, Clone)]
struct HeadCache {
    positions: Vec<usize>,
    targets: Vec<usize>,
    h_sel: Vec<f64>,
    t: Vec<f64>,
    ln: LnCache,
    u: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone)]
struct RowState {
    body: BodyCache,
    head: HeadCache,
    loss_sum: f64,
}

/// Result of a forward pass, holding what backward needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Mean cross-entropy over target positions (0 when there are none).
    pub loss: f64,
    pub loss_sum: f64,
    pub n_targets: usize,
    /// Set when the batch had no target positions.
    pub empty_loss: bool,
    rows: Vec<RowState>,
}

impl ForwardPass {
    /// Attention probabilities `[heads × seq × seq]` of one row and layer.
    pub fn attention(&self, row: usize, layer: usize) -> &[f64] {
        &self.rows[row].body.layers[layer].probs
    }
}

fn dropout_mask(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (a, b) in x.iter_mut().zip(m) {
            *a *= b;
        }
    }
}

impl Encoder {
    /// Fresh encoder: normal(0, std) weights and embeddings, zero biases, unit gains.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let std = config.param_init_std;
        let layout = build_layout(&config, |name, shape, init| {
            let mut t = Tensor::zeros(shape);
            match init {
                Init::Zeros => {}
                Init::Ones => t.data.iter_mut().for_each(|x| *x = 1.0),
                Init::Normal => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[params.len() as u64]));
                    let dist = Normal::new(0.0, std).expect("positive std");
                    t.data.iter_mut().for_each(|x| *x = dist.sample(&mut rng));
                }
            }
            params.push(name, t)
        });
        Ok(Encoder { config, params, layout })
    }

    /// Wrap existing parameters, checking names and shapes against the config.
    pub fn from_params(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let mut reference = ParamSet::new();
        let layout = build_layout(&config, |name, shape, _| reference.push(name, Tensor::zeros(shape)));
        reference.check_compatible(&params)?;
        Ok(Encoder { config, params, layout })
    }

    pub fn n_params(&self) -> usize {
        self.params.n_params()
    }

    fn p(&self, i: usize) -> &[f64] {
        &self.params.t(i).data
    }

    fn check_batch(&self, batch: &MaskedBatch) -> Result<()> {
        let n = batch.batch * batch.seq_len;
        for (name, len) in [
            ("input_ids", batch.input_ids.len()),
            ("labels", batch.labels.len()),
            ("attention", batch.attention.len()),
        ] {
            if len != n {
                return Err(Error::Shape {
                    name: name.into(),
                    expected: vec![batch.batch, batch.seq_len],
                    actual: vec![len],
                });
            }
        }
        if batch.seq_len > self.config.max_seq {
            return Err(Error::Shape {
                name: "input_ids".into(),
                expected: vec![batch.batch, self.config.max_seq],
                actual: vec![batch.batch, batch.seq_len],
            });
        }
        let v = self.config.vocab_size;
        if let Some(&t) = batch.input_ids.iter().find(|&&t| t as usize >= v) {
            return Err(Error::InvalidInput(format!("input id {t} outside vocabulary of {v}")));
        }
        if let Some(&l) = batch
            .labels
            .iter()
            .find(|&&l| l != IGNORE_INDEX && (l < 0 || l as usize >= v))
        {
            return Err(Error::InvalidInput(format!("label {l} outside vocabulary of {v}")));
        }
        Ok(())
    }

    fn row_rng(mode: Mode, row: usize) -> Option<ChaCha8Rng> {
        match mode {
            Mode::Train {
                dropout_seed,
                row_offset,
            } => Some(ChaCha8Rng::seed_from_u64(derive_seed(
                dropout_seed,
                &[(row_offset + row) as u64],
            ))),
            Mode::Eval => None,
        }
    }

    /// Encoder body for one row.
    pub fn body_forward(&self, ids: &[TokenId], attention: &[bool], rng: Option<&mut ChaCha8Rng>) -> BodyCache {
        let c = &self.config;
        let (s, d, nh) = (ids.len(), c.d_model, c.n_heads);
        let dh = c.head_dim();
        let p_drop = if rng.is_some() { c.dropout } else { 0.0 };
        let mut rng = rng;
        let mut draw = |n: usize| -> Option<Vec<f64>> {
            match rng.as_deref_mut() {
                Some(r) if p_drop > 0.0 => Some(dropout_mask(r, n, p_drop)),
                _ => None,
            }
        };
        let lay = &self.layout;
        let tok = self.params.t(lay.tok);
        let pos = self.params.t(lay.pos);
        let mut e = vec![0.0; s * d];
        for (i, &t) in ids.iter().enumerate() {
            let row = &mut e[i * d..(i + 1) * d];
            for ((x, a), b) in row.iter_mut().zip(tok.row(t as usize)).zip(pos.row(i)) {
                *x = a + b;
            }
        }
        let (mut x, ln_e) = layer_norm(&e, self.p(lay.eln_g), self.p(lay.eln_b));
        let emb_drop = draw(s * d);
        apply_mask(&mut x, &emb_drop);

        let scale = 1.0 / (dh as f64).sqrt();
        let mut layers = Vec::with_capacity(c.n_layers);
        for li in &lay.layers {
            let x_in = x;
            let mut q = matmul(&x_in, self.p(li.wq), s, d, d);
            add_bias(&mut q, self.p(li.bq));
            let mut k = matmul(&x_in, self.p(li.wk), s, d, d);
            add_bias(&mut k, self.p(li.bk));
            let mut v = matmul(&x_in, self.p(li.wv), s, d, d);
            add_bias(&mut v, self.p(li.bv));
            let mut probs = vec![0.0; nh * s * s];
            let mut ctx = vec![0.0; s * d];
            for h in 0..nh {
                let off = h * dh;
                for i in 0..s {
                    let qi = &q[i * d + off..i * d + off + dh];
                    let pr = &mut probs[(h * s + i) * s..(h * s + i + 1) * s];
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..s {
                        if attention[j] {
                            let kj = &k[j * d + off..j * d + off + dh];
                            let sc = dot(qi, kj) * scale;
                            pr[j] = sc;
                            mx = mx.max(sc);
                        }
                    }
                    if mx == f64::NEG_INFINITY {
                        continue;
                    }
                    let mut z = 0.0;
                    for j in 0..s {
                        if attention[j] {
                            pr[j] = (pr[j] - mx).exp();
                            z += pr[j];
                        }
                    }
                    for j in 0..s {
                        if attention[j] {
                            pr[j] /= z;
                        }
                    }
                    let ci = &mut ctx[i * d + off..i * d + off + dh];
                    for j in 0..s {
                        if pr[j] != 0.0 {
                            let vj = &v[j * d + off..j * d + off + dh];
                            for (cc, vv) in ci.iter_mut().zip(vj) {
                                *cc += pr[j] * vv;
                            }
                        }
                    }
                }
            }
            let mut a = matmul(&ctx, self.p(li.wo), s, d, d);
            add_bias(&mut a, self.p(li.bo));
            let attn_drop = draw(s * d);
            apply_mask(&mut a, &attn_drop);
            for (ai, xi) in a.iter_mut().zip(&x_in) {
                *ai += xi;
            }
            let (x1, ln1) = layer_norm(&a, self.p(li.ln1_g), self.p(li.ln1_b));
            let mut f_pre = matmul(&x1, self.p(li.w1), s, d, c.d_ff);
            add_bias(&mut f_pre, self.p(li.b1));
            let f_act: Vec<f64> = f_pre.iter().map(|&z| gelu(z)).collect();
            let mut f = matmul(&f_act, self.p(li.w2), s, c.d_ff, d);
            add_bias(&mut f, self.p(li.b2));
            let ffn_drop = draw(s * d);
            apply_mask(&mut f, &ffn_drop);
            for (fi, xi) in f.iter_mut().zip(&x1) {
                *fi += xi;
            }
            let (x2, ln2) = layer_norm(&f, self.p(li.ln2_g), self.p(li.ln2_b));
            layers.push(LayerCache {
                x_in,
                q,
                k,
                v,
                probs,
                ctx,
                attn_drop,
                ln1,
                x1,
                f_pre,
                f_act,
                ffn_drop,
                ln2,
            });
            x = x2;
        }
        BodyCache {
            ids: ids.to_vec(),
            ln_e,
            emb_drop,
            layers,
            hidden: x,
        }
    }

    /// Backward through the body given `d hidden`; accumulates into `g`.
    pub fn body_backward(&self, cache: &BodyCache, dh_out: Vec<f64>, g: &mut ParamSet) {
        let c = &self.config;
        let (s, d, nh) = (cache.seq_len(), c.d_model, c.n_heads);
        let dh = c.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let lay = &self.layout;
        let mut dx = dh_out;
        for (li, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            // x2 = LN2(x1 + drop(ffn(x1)))
            let mut dr2 = {
                let (gg, gb) = two_mut(g, li.ln2_g, li.ln2_b);
                layer_norm_backward(&dx, &lc.ln2, self.p(li.ln2_g), gg, gb)
            };
            let mut dx1 = dr2.clone();
            apply_mask(&mut dr2, &lc.ffn_drop);
            let df = dr2;
            matmul_at_b_acc(&mut g.t_mut(li.w2).data, &lc.f_act, &df, s, c.d_ff, d);
            col_sum_acc(&mut g.t_mut(li.b2).data, &df);
            let mut dfa = matmul_a_bt(&df, self.p(li.w2), s, d, c.d_ff);
            for (x, &z) in dfa.iter_mut().zip(&lc.f_pre) {
                *x *= gelu_grad(z);
            }
            matmul_at_b_acc(&mut g.t_mut(li.w1).data, &lc.x1, &dfa, s, d, c.d_ff);
            col_sum_acc(&mut g.t_mut(li.b1).data, &dfa);
            matmul_a_bt_acc(&mut dx1, &dfa, self.p(li.w1), s, c.d_ff, d);

            // x1 = LN1(x_in + drop(attn(x_in)))
            let mut dr1 = {
                let (gg, gb) = two_mut(g, li.ln1_g, li.ln1_b);
                layer_norm_backward(&dx1, &lc.ln1, self.p(li.ln1_g), gg, gb)
            };
            let mut dx_in = dr1.clone();
            apply_mask(&mut dr1, &lc.attn_drop);
            let da = dr1;
            matmul_at_b_acc(&mut g.t_mut(li.wo).data, &lc.ctx, &da, s, d, d);
            col_sum_acc(&mut g.t_mut(li.bo).data, &da);
            let dctx = matmul_a_bt(&da, self.p(li.wo), s, d, d);

            let mut dq = vec![0.0; s * d];
            let mut dk = vec![0.0; s * d];
            let mut dv = vec![0.0; s * d];
            let mut dp = vec![0.0; s];
            for h in 0..nh {
                let off = h * dh;
                for i in 0..s {
                    let pr = &lc.probs[(h * s + i) * s..(h * s + i + 1) * s];
                    let dci = &dctx[i * d + off..i * d + off + dh];
                    let mut pd = 0.0;
                    for j in 0..s {
                        if pr[j] == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let vj = &lc.v[j * d + off..j * d + off + dh];
                        dp[j] = dot(dci, vj);
                        pd += pr[j] * dp[j];
                        let dvj = &mut dv[j * d + off..j * d + off + dh];
                        for (x, y) in dvj.iter_mut().zip(dci) {
                            *x += pr[j] * y;
                        }
                    }
                    for j in 0..s {
                        if pr[j] == 0.0 {
                            continue;
                        }
                        let ds = pr[j] * (dp[j] - pd) * scale;
                        for t in 0..dh {
                            dq[i * d + off + t] += ds * lc.k[j * d + off + t];
                            dk[j * d + off + t] += ds * lc.q[i * d + off + t];
                        }
                    }
                }
            }
            for (w, b, dy) in [(li.wq, li.bq, &dq), (li.wk, li.bk, &dk), (li.wv, li.bv, &dv)] {
                matmul_at_b_acc(&mut g.t_mut(w).data, &lc.x_in, dy, s, d, d);
                col_sum_acc(&mut g.t_mut(b).data, dy);
                matmul_a_bt_acc(&mut dx_in, dy, self.p(w), s, d, d);
            }
            dx = dx_in;
        }
        apply_mask(&mut dx, &cache.emb_drop);
        let de = {
            let (gg, gb) = two_mut(g, lay.eln_g, lay.eln_b);
            layer_norm_backward(&dx, &cache.ln_e, self.p(lay.eln_g), gg, gb)
        };
        {
            let tok = g.t_mut(lay.tok);
            for (i, &t) in cache.ids.iter().enumerate() {
                for (a, b) in tok.row_mut(t as usize).iter_mut().zip(&de[i * d..(i + 1) * d]) {
                    *a += b;
                }
            }
        }
        let pos = g.t_mut(lay.pos);
        for i in 0..s {
            for (a, b) in pos.row_mut(i).iter_mut().zip(&de[i * d..(i + 1) * d]) {
                *a += b;
            }
        }
    }

    /// MLM head logits for a block of hidden rows `[n × d]`.
    fn head_forward(&self, h_sel: &[f64]) -> (Vec<f64>, Vec<f64>, LnCache, Vec<f64>, Vec<f64>) {
        let c = &self.config;
        let (d, v) = (c.d_model, c.vocab_size);
        let n = h_sel.len() / d;
        let lay = &self.layout;
        let mut t = matmul(h_sel, self.p(lay.hd_w), n, d, d);
        add_bias(&mut t, self.p(lay.hd_b));
        let gact: Vec<f64> = t.iter().map(|&z| gelu(z)).collect();
        let (u, ln) = layer_norm(&gact, self.p(lay.hln_g), self.p(lay.hln_b));
        let mut logits = match lay.dec_w {
            None => matmul_a_bt(&u, self.p(lay.tok), n, d, v),
            Some(w) => matmul(&u, self.p(w), n, d, v),
        };
        add_bias(&mut logits, self.p(lay.dec_b));
        (t, gact, ln, u, logits)
    }

    fn row_forward(&self, batch: &MaskedBatch, r: usize, mode: Mode) -> RowState {
        let mut rng = Self::row_rng(mode, r);
        let body = self.body_forward(batch.row_ids(r), batch.row_attention(r), rng.as_mut());
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let labels = batch.row_labels(r);
        let positions: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != IGNORE_INDEX).collect();
        let targets: Vec<usize> = positions.iter().map(|&i| labels[i] as usize).collect();
        let mut h_sel = Vec::with_capacity(positions.len() * d);
        for &i in &positions {
            h_sel.extend_from_slice(&body.hidden[i * d..(i + 1) * d]);
        }
        let (t, _g, ln, u, mut logits) = self.head_forward(&h_sel);
        let mut loss_sum = 0.0;
        for (pi, &tgt) in targets.iter().enumerate() {
            let row = &mut logits[pi * v..(pi + 1) * v];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
            loss_sum += -(row[tgt].ln());
        }
        RowState {
            body,
            head: HeadCache {
                positions,
                targets,
                h_sel,
                t,
                ln,
                u,
                probs: logits,
            },
            loss_sum,
        }
    }

    /// Forward pass with mean cross-entropy over labelled positions.
    pub fn forward(&self, batch: &MaskedBatch, mode: Mode, exec: Exec) -> Result<ForwardPass> {
        self.check_batch(batch)?;
        let rows = exec.map_range(batch.batch, |r| self.row_forward(batch, r, mode));
        let loss_sum: f64 = rows.iter().map(|r| r.loss_sum).sum();
        let n_targets: usize = rows.iter().map(|r| r.head.targets.len()).sum();
        let loss = if n_targets == 0 {
            0.0
        } else {
            loss_sum / n_targets as f64
        };
        Ok(ForwardPass {
            loss,
            loss_sum,
            n_targets,
            empty_loss: n_targets == 0,
            rows,
        })
    }

    /// Gradients of the mean loss.
    pub fn backward(&self, pass: &ForwardPass, exec: Exec) -> ParamSet {
        let scale = if pass.n_targets == 0 {
            0.0
        } else {
            1.0 / pass.n_targets as f64
        };
        self.backward_scaled(pass, scale, exec)
    }

    /// Gradients of `scale × Σ per-target loss`; used for gradient accumulation.
    pub fn backward_scaled(&self, pass: &ForwardPass, scale: f64, exec: Exec) -> ParamSet {
        let mut total = self.params.zeros_like();
        self.backward_into(pass, scale, exec, &mut total);
        total
    }

    /// Adds per-row gradients into `total` one row at a time, in row order.
    /// Splitting a batch into consecutive micro-batches therefore produces the
    /// same sums, bit for bit, as processing it whole.
    pub fn backward_into(&self, pass: &ForwardPass, scale: f64, exec: Exec, total: &mut ParamSet) {
        if scale == 0.0 {
            return;
        }
        let rows: Vec<&RowState> = pass.rows.iter().filter(|r| !r.head.targets.is_empty()).collect();
        let width = exec.width().min(rows.len()).max(1);
        let mut scratch: Vec<ParamSet> = (0..width).map(|_| self.params.zeros_like()).collect();
        for chunk in rows.chunks(width) {
            let slots = &mut scratch[..chunk.len()];
            exec.for_each_mut(slots, |i, g| {
                g.fill_zero();
                self.row_backward(chunk[i], scale, g);
            });
            for g in slots.iter() {
                total.add_assign(g);
            }
        }
    }

    fn row_backward(&self, row: &RowState, scale: f64, g: &mut ParamSet) {
        let c = &self.config;
        let (d, v) = (c.d_model, c.vocab_size);
        let lay = &self.layout;
        let hc = &row.head;
        let n = hc.targets.len();
        let mut dlogits = hc.probs.clone();
        for (pi, &tgt) in hc.targets.iter().enumerate() {
            dlogits[pi * v + tgt] -= 1.0;
        }
        for x in &mut dlogits {
            *x *= scale;
        }
        col_sum_acc(&mut g.t_mut(lay.dec_b).data, &dlogits);
        let du = match lay.dec_w {
            None => {
                matmul_at_b_acc(&mut g.t_mut(lay.tok).data, &dlogits, &hc.u, n, v, d);
                matmul(&dlogits, self.p(lay.tok), n, v, d)
            }
            Some(w) => {
                matmul_at_b_acc(&mut g.t_mut(w).data, &hc.u, &dlogits, n, d, v);
                matmul_a_bt(&dlogits, self.p(w), n, v, d)
            }
        };
        let mut dt = {
            let (gg, gb) = two_mut(g, lay.hln_g, lay.hln_b);
            layer_norm_backward(&du, &hc.ln, self.p(lay.hln_g), gg, gb)
        };
        for (x, &z) in dt.iter_mut().zip(&hc.t) {
            *x *= gelu_grad(z);
        }
        matmul_at_b_acc(&mut g.t_mut(lay.hd_w).data, &hc.h_sel, &dt, n, d, d);
        col_sum_acc(&mut g.t_mut(lay.hd_b).data, &dt);
        let dh_sel = matmul_a_bt(&dt, self.p(lay.hd_w), n, d, d);
        let mut dh = vec![0.0; row.body.seq_len() * d];
        for (pi, &pos) in hc.positions.iter().enumerate() {
            for (a, b) in dh[pos * d..(pos + 1) * d].iter_mut().zip(&dh_sel[pi * d..(pi + 1) * d]) {
                *a += b;
            }
        }
        self.body_backward(&row.body, dh, g);
    }

    /// Full logits `[batch × seq × vocab]` in eval mode.
    pub fn logits(&self, batch: &MaskedBatch, exec: Exec) -> Result<Tensor> {
        self.check_batch(batch)?;
        let (s, v) = (batch.seq_len, self.config.vocab_size);
        let rows = exec.map_range(batch.batch, |r| {
            let body = self.body_forward(batch.row_ids(r), batch.row_attention(r), None);
            self.head_forward(&body.hidden).4
        });
        Tensor::from_vec(&[batch.batch, s, v], rows.concat())
    }

    /// Final hidden states `[batch × seq × d_model]` in eval mode.
    pub fn hidden_states(&self, batch: &MaskedBatch, exec: Exec) -> Result<Tensor> {
        self.check_batch(batch)?;
        let rows = exec.map_range(batch.batch, |r| {
            self.body_forward(batch.row_ids(r), batch.row_attention(r), None).hidden
        });
        Tensor::from_vec(&[batch.batch, batch.seq_len, self.config.d_model], rows.concat())
    }
}

fn two_mut(g: &mut ParamSet, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b);
    let (lo, hi) = g.tensors_mut().split_at_mut(b);
    (&mut lo[a].data, &mut hi[0].data)
}

/// Stateful forward/backward pairing: backward consumes the recorded pass.
#[derive(Debug)]
pub struct Session {
    pub encoder: Encoder,
    pub exec: Exec,
    pending: Option<ForwardPass>,
}

impl Session {
    pub fn new(encoder: Encoder, exec: Exec) -> Self {
        Session {
            encoder,
            exec,
            pending: None,
        }
    }

    /// Returns the loss. Only train-mode passes are kept for backward.
    pub fn forward(&mut self, batch: &MaskedBatch, mode: Mode) -> Result<f64> {
        let pass = self.encoder.forward(batch, mode, self.exec)?;
        let loss = pass.loss;
        self.pending = matches!(mode, Mode::Train { .. }).then_some(pass);
        Ok(loss)
    }

    pub fn backward(&mut self) -> Result<ParamSet> {
        let pass = self
            .pending
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding train-mode forward".into()))?;
        Ok(self.encoder.backward(&pass, self.exec))
    }
}
