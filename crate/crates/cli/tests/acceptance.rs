//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Runs without the libtest harness so the report is always
//! printed in order.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use forge_core::encoder::{Encoder, EncoderConfig, Mode};
use forge_core::metrics::{emr, hamming_score, prf, LabelSet, MacroOver};
use forge_core::mlm::{mask, mask_with_stats, MaskStats, MaskingPolicy};
use forge_core::subtok::{
    coverage_from_vocabs, coverage_matrix, minimum_budget, train_bpe, BoundaryMarker, BpeConfig, SubwordModel,
};
use forge_core::synth::{french_corpus, french_sentences, multilabel_dataset, ner_dataset};
use forge_core::tasks::{
    evaluate_seeds, finetune, score, EvalInputs, FinetuneConfig, Splits, TaskExample, TaskKind, TaskMetric, TaskSpec,
};
use forge_core::train::{
    checkpoint_path, detect_anomaly, prepare_rows, pretrain, AnomalyConfig, AnomalyKind, RunOptions, Strategy,
    TrainConfig,
};
use forge_core::Exec;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_string(rng: &mut ChaCha8Rng) -> String {
    const POOLS: &[&[char]] = &[
        &['a', 'e', 'l', 'p', 't', ' ', ' ', '.', ','],
        &['é', 'è', 'ê', 'à', 'ç', 'ô', 'œ', 'É'],
        &['\n', '\t', '\r', '\u{0}', '\u{7f}', '\u{a0}', '\u{2009}'],
        &['▁', '<', '>', '/', 's', 'u', 'n', 'k'],
        &['中', '文', 'ж', 'λ', '😀', '🧬', '\u{10ffff}', '\u{fffd}'],
    ];
    let len = rng.random_range(0..40);
    (0..len)
        .map(|_| {
            if rng.random_bool(0.1) {
                // any scalar value
                loop {
                    if let Some(c) = char::from_u32(rng.random_range(0..0x11_0000)) {
                        break c;
                    }
                }
            } else {
                *POOLS.choose(rng).unwrap().choose(rng).unwrap()
            }
        })
        .collect()
}

fn c1_round_trip() -> Outcome {
    let tok = train_bpe(&french_sentences(1, 500), &BpeConfig::default(), Exec::Parallel).map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = 0;
    for _ in 0..10_000 {
        let s = random_string(&mut rng);
        if tok.decode(&tok.encode(&s).ids).map_err(e2s)? != s {
            failures += 1;
        }
    }
    let corpus = french_corpus(0, 1_000_000);
    ensure!(corpus.len() >= 1_000_000, "corpus is only {} bytes", corpus.len());
    let ids = tok.encode(&corpus).ids;
    if tok.decode(&ids).map_err(e2s)? != corpus {
        failures += 1;
    }
    ensure!(failures == 0, "{failures} round-trip failures");
    Ok(format!(
        "10000 random strings and {} corpus bytes ({} tokens)",
        corpus.len(),
        ids.len()
    ))
}

fn c2_bpe_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let alphabet: Vec<char> = "aabbcdeéé  ".chars().collect();
    let mut total_merges = 0;
    for k in 0..20 {
        let budget_chars = rng.random_range(50..=500);
        let mut corpus: Vec<String> = Vec::new();
        let mut used = 0;
        while used < budget_chars {
            let len = rng.random_range(1..=60).min(budget_chars - used);
            corpus.push((0..len).map(|_| *alphabet.choose(&mut rng).unwrap()).collect());
            used += len;
        }
        let refs: Vec<&str> = corpus.iter().map(String::as_str).collect();
        let min = minimum_budget(&refs, false);
        let budget = min + rng.random_range(0..60);
        let cfg = BpeConfig {
            vocab_budget: budget,
            byte_fallback: false,
        };
        let model = train_bpe(&refs, &cfg, Exec::Sequential).map_err(e2s)?;
        let want = oracles::bpe_merges(&refs, min, budget);
        ensure!(model.merges() == &want[..], "corpus {k}: merges differ from the oracle");
        total_merges += want.len();
    }
    Ok(format!("20 corpora, {total_merges} merges matched"))
}

fn c3_masking() -> Outcome {
    let vocab = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<u32>> = (0..3200)
        .map(|_| (0..512).map(|_| rng.random_range(5..vocab as u32)).collect())
        .collect();
    let policy = MaskingPolicy::new(3);
    let mut st = MaskStats::default();
    for (step, chunk) in rows.chunks(64).enumerate() {
        let (_, s) = mask_with_stats(chunk, &policy, vocab, step as u64, Exec::Parallel).map_err(e2s)?;
        st += s;
    }
    ensure!(st.eligible >= 1_600_000, "only {} positions", st.eligible);
    let sel = st.selected as f64 / st.eligible as f64;
    let m = st.masked as f64 / st.selected as f64;
    let r = st.randomized as f64 / st.selected as f64;
    let k = st.kept as f64 / st.selected as f64;
    ensure!((0.14..=0.16).contains(&sel), "selected fraction {sel}");
    ensure!(
        (m - 0.8).abs() <= 0.02 && (r - 0.1).abs() <= 0.02 && (k - 0.1).abs() <= 0.02,
        "split {m}/{r}/{k}"
    );
    Ok(format!(
        "{} positions: selected {sel:.4}, mask/random/keep {m:.4}/{r:.4}/{k:.4}",
        st.eligible
    ))
}

fn c4_gradient_check() -> Outcome {
    let vocab = 120;
    let cfg = EncoderConfig::desk(vocab);
    ensure!(cfg.dropout == 0.0, "desk dropout is {}", cfg.dropout);
    let mut enc = Encoder::new(cfg, 4).map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<Vec<u32>> = (0..2)
        .map(|_| (0..12).map(|_| rng.random_range(5..vocab as u32)).collect())
        .collect();
    let mut policy = MaskingPolicy::new(4);
    policy.select_prob = 0.4;
    let batch = mask(&rows, &policy, vocab, 0, Exec::Sequential).map_err(e2s)?;
    let pass = enc.forward(&batch, Mode::Eval, Exec::Sequential).map_err(e2s)?;
    let grad = enc.backward(&pass, Exec::Sequential);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let ti = rng.random_range(0..enc.params.len());
        let k = rng.random_range(0..enc.params.t(ti).len());
        let orig = enc.params.t(ti).data[k];
        enc.params.t_mut(ti).data[k] = orig + h;
        let lp = enc.forward(&batch, Mode::Eval, Exec::Sequential).map_err(e2s)?.loss;
        enc.params.t_mut(ti).data[k] = orig - h;
        let lm = enc.forward(&batch, Mode::Eval, Exec::Sequential).map_err(e2s)?.loss;
        enc.params.t_mut(ti).data[k] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let g = grad.t(ti).data[k];
        worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-6));
    }
    ensure!(worst < 1e-4, "max relative error {worst:e}");
    Ok(format!("200 parameters, max relative error {worst:.2e}"))
}

fn toy_corpus() -> Result<(Vec<String>, SubwordModel), String> {
    let sents = french_sentences(7, 200);
    let tok = train_bpe(&sents, &BpeConfig::default(), Exec::Parallel).map_err(e2s)?;
    Ok((sents, tok))
}

fn c5_overfit() -> Outcome {
    let (sents, tok) = toy_corpus()?;
    let cfg = TrainConfig::desk();
    ensure!(cfg.total_steps == 300, "desk preset runs {} steps", cfg.total_steps);
    let enc = EncoderConfig::desk(tok.vocab_size());
    let rows = prepare_rows(&sents, &tok, cfg.seq_len, Exec::Parallel).map_err(e2s)?;
    let dir = tempfile::tempdir().map_err(e2s)?;
    let out = pretrain(
        &Strategy::from_scratch(),
        &rows,
        &tok,
        &enc,
        &cfg,
        &RunOptions::default(),
    )
    .map_err(e2s)?;
    let initial = out.trace.rows[0].loss;
    let last = out.trace.tail_mean(10);
    ensure!(last < 0.2 * initial, "final loss {last} vs initial {initial}");
    let ck = dir.path().join("final.ckpt");
    out.checkpoint.save(&ck).map_err(e2s)?;
    let cont_cfg = TrainConfig {
        total_steps: 10,
        warmup_steps: 1,
        ..cfg
    };
    let cont = pretrain(
        &Strategy::continual(&ck),
        &rows,
        &tok,
        &enc,
        &cont_cfg,
        &RunOptions::default(),
    )
    .map_err(e2s)?;
    let rel = (cont.initial_probe_loss - out.final_probe_loss).abs() / out.final_probe_loss;
    ensure!(
        rel < 0.05,
        "continual starts at {} vs final {}",
        cont.initial_probe_loss,
        out.final_probe_loss
    );
    Ok(format!(
        "loss {initial:.3} -> {last:.3} ({:.1}%), continual start within {:.2}%",
        100.0 * last / initial,
        100.0 * rel
    ))
}

fn c6_resume() -> Outcome {
    let (sents, tok) = toy_corpus()?;
    let cfg = TrainConfig {
        total_steps: 200,
        warmup_steps: 20,
        batch_rows: 8,
        checkpoint_every: 100,
        ..TrainConfig::desk()
    };
    let enc = EncoderConfig {
        d_model: 32,
        d_ff: 64,
        max_seq: 32,
        ..EncoderConfig::desk(tok.vocab_size())
    };
    let exec = Exec::Sequential;
    let rows = prepare_rows(&sents, &tok, cfg.seq_len, exec).map_err(e2s)?;
    let base = RunOptions {
        exec,
        ..Default::default()
    };
    let full = pretrain(&Strategy::from_scratch(), &rows, &tok, &enc, &cfg, &base).map_err(e2s)?;
    let dir = tempfile::tempdir().map_err(e2s)?;
    let first = RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        stop_at: Some(100),
        ..base.clone()
    };
    pretrain(&Strategy::from_scratch(), &rows, &tok, &enc, &cfg, &first).map_err(e2s)?;
    let second = RunOptions {
        resume: Some(checkpoint_path(dir.path(), 100)),
        ..base
    };
    let resumed = pretrain(&Strategy::from_scratch(), &rows, &tok, &enc, &cfg, &second).map_err(e2s)?;
    ensure!(
        resumed.checkpoint.step == 200,
        "resumed run ended at step {}",
        resumed.checkpoint.step
    );
    ensure!(resumed.checkpoint.params == full.checkpoint.params, "parameters differ");
    ensure!(
        resumed.checkpoint.optimizer == full.checkpoint.optimizer,
        "optimizer state differs"
    );
    let tail = &full.trace.rows[100..];
    ensure!(
        tail.len() == resumed.trace.rows.len()
            && tail
                .iter()
                .zip(&resumed.trace.rows)
                .all(|(a, b)| a.loss.to_bits() == b.loss.to_bits()),
        "loss traces differ"
    );
    Ok("parameters, optimizer state and losses bitwise equal".into())
}

fn c7_schedule() -> Outcome {
    for (name, cfg) in [("desk", TrainConfig::desk()), ("paper", TrainConfig::paper())] {
        let lr = |s| cfg.lr_at(s).map_err(e2s);
        ensure!(lr(0)? == 0.0, "{name}: lr_at(0) = {}", lr(0)?);
        ensure!(
            lr(cfg.warmup_steps)? == cfg.peak_lr,
            "{name}: lr_at(warmup) = {}",
            lr(cfg.warmup_steps)?
        );
        let mut max: f64 = 0.0;
        for s in 0..=cfg.total_steps {
            let v = lr(s)?;
            max = max.max(v);
            if s <= cfg.warmup_steps {
                let want = cfg.peak_lr * s as f64 / cfg.warmup_steps as f64;
                ensure!(
                    (v - want).abs() <= 1e-15 * cfg.peak_lr,
                    "{name}: lr_at({s}) = {v}, want {want}"
                );
            }
        }
        ensure!(max == cfg.peak_lr, "{name}: max lr {max}");
    }
    let out = Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(["pretrain", "--preset", "paper", "--dry-run"])
        .output()
        .map_err(e2s)?;
    ensure!(out.status.success(), "dry run exited with {}", out.status);
    let text = String::from_utf8_lossy(&out.stdout);
    for (key, want) in [
        ("total_steps", "80k"),
        ("batch_rows", "4,096"),
        ("seq_len", "512"),
        ("peak_lr", "5e-5"),
    ] {
        let ok = text
            .lines()
            .any(|l| l.split_whitespace().collect::<Vec<_>>() == [key, want]);
        ensure!(ok, "dry run does not print `{key} {want}`:\n{text}");
    }
    Ok("warmup exact and linear; dry run prints 80k / 4,096 / 512 / 5e-5".into())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

fn set(labels: &[&str]) -> LabelSet {
    labels.iter().map(|s| s.to_string()).collect()
}

fn c8_metrics() -> Outcome {
    let r = prf(
        &["A", "A", "B", "B"],
        &["A", "B", "B", "B"],
        None,
        MacroOver::GoldPresent,
    )
    .map_err(e2s)?;
    let a = r.class("A").ok_or("no class A")?;
    let b = r.class("B").ok_or("no class B")?;
    ensure!(
        close(a.precision, 1.0) && close(a.recall, 0.5) && close(a.f1, 2.0 / 3.0),
        "class A {a:?}"
    );
    ensure!(
        close(b.precision, 2.0 / 3.0) && close(b.recall, 1.0) && close(b.f1, 0.8),
        "class B {b:?}"
    );
    ensure!(close(r.macro_f1, (2.0 / 3.0 + 0.8) / 2.0), "macro F1 {}", r.macro_f1);
    let perfect = prf(&["A", "B", "C"], &["A", "B", "C"], None, MacroOver::GoldPresent).map_err(e2s)?;
    ensure!(
        perfect.macro_f1 == 1.0 && perfect.weighted_f1 == 1.0,
        "perfect predictions score {perfect:?}"
    );
    let labels: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
    let with_c = prf(
        &["A", "A", "B", "B"],
        &["A", "B", "B", "B"],
        Some(&labels),
        MacroOver::GoldPresent,
    )
    .map_err(e2s)?;
    ensure!(close(with_c.macro_f1, r.macro_f1), "an absent class changed macro F1");
    let g = [set(&["A", "B"])];
    let p = [set(&["A"])];
    ensure!(
        emr(&g, &p).map_err(e2s)? == 0.0 && close(hamming_score(&g, &p).map_err(e2s)?, 0.5),
        "{{A,B}} vs {{A}}"
    );
    let empty = [LabelSet::new()];
    ensure!(
        emr(&empty, &empty).map_err(e2s)? == 1.0 && hamming_score(&empty, &empty).map_err(e2s)? == 1.0,
        "empty sets"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let names = ["A", "B", "C", "D"];
    for i in 0..100 {
        let n = rng.random_range(1..25);
        let gold: Vec<&str> = (0..n).map(|_| *names.choose(&mut rng).unwrap()).collect();
        let pred: Vec<&str> = (0..n).map(|_| *names.choose(&mut rng).unwrap()).collect();
        let r = prf(&gold, &pred, None, MacroOver::GoldPresent).map_err(e2s)?;
        let (m, w) = oracles::macro_weighted_f1(&gold, &pred);
        ensure!(
            close(r.macro_f1, m) && close(r.weighted_f1, w),
            "instance {i}: F1 differs from the oracle"
        );
        let gm: Vec<u32> = (0..n).map(|_| rng.random_range(0..16)).collect();
        let pm: Vec<u32> = (0..n).map(|_| rng.random_range(0..16)).collect();
        let to_set = |m: u32| -> LabelSet {
            (0..4)
                .filter(|b| m >> b & 1 == 1)
                .map(|b| names[b].to_string())
                .collect()
        };
        let gs: Vec<LabelSet> = gm.iter().map(|&m| to_set(m)).collect();
        let ps: Vec<LabelSet> = pm.iter().map(|&m| to_set(m)).collect();
        let (e, h) = oracles::emr_jaccard(&gm, &pm);
        let got_e = emr(&gs, &ps).map_err(e2s)?;
        let got_h = hamming_score(&gs, &ps).map_err(e2s)?;
        ensure!(
            close(got_e, e) && close(got_h, h),
            "instance {i}: set metrics differ from the oracle"
        );
        ensure!(got_e <= got_h, "instance {i}: EMR {got_e} > Hamming {got_h}");
    }
    Ok("worked examples and 100 random instances agree; EMR <= Hamming".into())
}

fn c9_coverage() -> Outcome {
    let models: Vec<SubwordModel> = [(1, 300, 400), (2, 300, 600), (3, 200, 500)]
        .iter()
        .map(|&(seed, n, budget)| {
            let cfg = BpeConfig {
                vocab_budget: budget,
                byte_fallback: true,
            };
            train_bpe(&french_sentences(seed, n), &cfg, Exec::Parallel).map_err(e2s)
        })
        .collect::<Result<_, _>>()?;
    let refs: Vec<&SubwordModel> = models.iter().collect();
    let m = coverage_matrix(&refs).map_err(e2s)?;
    ensure!(
        (0..3).all(|i| m[i][i] == 1.0),
        "diagonal {:?}",
        (0..3).map(|i| m[i][i]).collect::<Vec<_>>()
    );

    let big: Vec<String> = (0..400).map(|i| format!("t{i}")).collect();
    let small: Vec<String> = big[..100].to_vec();
    let m =
        coverage_from_vocabs(&[(small, BoundaryMarker::MetaPrefix), (big, BoundaryMarker::MetaPrefix)]).map_err(e2s)?;
    ensure!(
        m[0][1] == 1.0 && m[1][0] == 0.25,
        "subset entries ({}, {})",
        m[0][1],
        m[1][0]
    );

    let disjoint: Vec<(Vec<String>, BoundaryMarker)> = (0..3)
        .map(|k| {
            (
                (0..50).map(|i| format!("v{k}_{i}")).collect(),
                BoundaryMarker::MetaPrefix,
            )
        })
        .collect();
    let m = coverage_from_vocabs(&disjoint).map_err(e2s)?;
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            ensure!(v == if i == j { 1.0 } else { 0.0 }, "disjoint entry ({i},{j}) = {v}");
        }
    }
    Ok("diagonal 1.0, subset (1.0, 0.25), disjoint identity".into())
}

fn c10_anomaly() -> Outcome {
    // 2.0 until index 500, then 0.0. A window of 50 ending at e holds
    // 549 - e values of 2.0, so its mean first drops below 0.05 at e = 548.
    let mut trace = vec![2.0; 500];
    trace.extend(std::iter::repeat_n(0.0, 300));
    let cfg = AnomalyConfig::new(50);
    let flags = detect_anomaly(&trace, &cfg);
    ensure!(
        flags.len() == 1,
        "{} flags on the collapse trace: {flags:?}",
        flags.len()
    );
    ensure!(
        flags[0].kind == AnomalyKind::Collapse && flags[0].index == 548,
        "flag {:?}",
        flags[0]
    );
    let mut false_pos = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let level = rng.random_range(1.0..9.0);
        let noise = rng.random_range(0.01..0.4);
        let t: Vec<f64> = (0..2000)
            .map(|_| level * (1.0 + noise * (rng.random::<f64>() - 0.5)))
            .collect();
        false_pos += detect_anomaly(&t, &cfg).len();
    }
    ensure!(false_pos == 0, "{false_pos} flags on stationary traces");
    Ok("COLLAPSE at index 548, 0 flags on 100 stationary traces".into())
}

fn task_spec(name: &str, kind: TaskKind, metric: TaskMetric, labels: &[&str]) -> TaskSpec {
    TaskSpec {
        name: name.into(),
        kind,
        labels: labels.iter().map(|s| s.to_string()).collect(),
        metric,
        allow_empty: true,
        splits: Splits {
            train: "train".into(),
            dev: "dev".into(),
            test: None,
        },
    }
}

fn c11_finetune() -> Outcome {
    let mut corpus = french_sentences(3, 200);
    corpus.extend(ner_dataset(99, 100).into_iter().map(|s| s.tokens.join(" ")));
    corpus.extend(multilabel_dataset(99, 100).into_iter().map(|t| t.text));
    let tok = train_bpe(&corpus, &BpeConfig::default(), Exec::Parallel).map_err(e2s)?;
    let cfg = TrainConfig {
        total_steps: 30,
        warmup_steps: 3,
        batch_rows: 16,
        checkpoint_every: 0,
        ..TrainConfig::desk()
    };
    let enc = EncoderConfig {
        d_model: 32,
        d_ff: 64,
        max_seq: 64,
        ..EncoderConfig::desk(tok.vocab_size())
    };
    let rows = prepare_rows(&corpus, &tok, cfg.seq_len, Exec::Parallel).map_err(e2s)?;
    let ck = pretrain(
        &Strategy::from_scratch(),
        &rows,
        &tok,
        &enc,
        &cfg,
        &RunOptions::default(),
    )
    .map_err(e2s)?
    .checkpoint;
    let ft = FinetuneConfig::desk();

    let ner_spec = task_spec(
        "ner",
        TaskKind::TokenCls,
        TaskMetric::MacroF1,
        &["O", "B-DRUG", "B-DISO", "I-DISO"],
    );
    let ner = |seed, n| -> Result<Vec<TaskExample>, String> {
        ner_dataset(seed, n)
            .into_iter()
            .enumerate()
            .map(|(i, s)| TaskExample::tagged(&ner_spec, format!("{seed}-{i}"), s.tokens, &s.tags).map_err(e2s))
            .collect()
    };
    let (train, dev) = (ner(1, 200)?, ner(2, 30)?);
    let out = finetune(&ck, &tok, &ner_spec, &train, &dev, &ft, Exec::Parallel).map_err(e2s)?;
    let preds = out.model.predict(&tok, &dev, Exec::Parallel).map_err(e2s)?;
    let token_f1 = score(&ner_spec, &dev, &preds).map_err(e2s)?.report.macro_f1;
    ensure!(token_f1 == 1.0, "token classification dev F1 {token_f1}");

    let ml_spec = task_spec(
        "mcqa",
        TaskKind::Multilabel,
        TaskMetric::EmrHamming,
        &["A", "B", "C", "D", "E"],
    );
    let ml = |seed, n| -> Result<Vec<TaskExample>, String> {
        multilabel_dataset(seed, n)
            .into_iter()
            .enumerate()
            .map(|(i, t)| TaskExample::labelled(&ml_spec, format!("{seed}-{i}"), t.text, &t.labels).map_err(e2s))
            .collect()
    };
    let (ml_train, ml_dev) = (ml(1, 250)?, ml(2, 40)?);
    let out = finetune(&ck, &tok, &ml_spec, &ml_train, &ml_dev, &ft, Exec::Parallel).map_err(e2s)?;
    let preds = out.model.predict(&tok, &ml_dev, Exec::Parallel).map_err(e2s)?;
    let ml_emr = score(&ml_spec, &ml_dev, &preds)
        .map_err(e2s)?
        .report
        .emr
        .unwrap_or(f64::NAN);
    ensure!(ml_emr == 1.0, "multi-label dev EMR {ml_emr}");

    let inp = EvalInputs {
        model_name: "toy",
        checkpoint: &ck,
        tokenizer: &tok,
        spec: &ner_spec,
        train: &train,
        dev: &dev,
        test: None,
    };
    let r = evaluate_seeds(&inp, &ft, &[1, 2, 3, 4], Exec::Parallel).map_err(e2s)?;
    let f1 = r
        .summary
        .iter()
        .find(|(n, _)| n == "F1")
        .map(|(_, s)| *s)
        .ok_or("no F1 column")?;
    ensure!(
        f1.n == 4 && f1.std.is_finite() && f1.min <= f1.mean && f1.mean <= f1.max,
        "spread {f1:?}"
    );
    let seeds: BTreeSet<u64> = r.runs.iter().map(|x| x.seed).collect();
    ensure!(seeds.len() == 4, "runs {seeds:?}");
    Ok(format!(
        "token F1 {token_f1}, EMR {ml_emr}; four seeds F1 {:.2} ± {:.2}",
        100.0 * f1.mean,
        100.0 * f1.std
    ))
}

fn forge(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_forge"))
        .current_dir(dir)
        .env("FORGE_THREADS", "1")
        .args(args)
        .output()
        .map_err(e2s)?;
    if !out.status.success() {
        return Err(format!(
            "forge {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn c12_end_to_end() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(e2s)?;
    let d = tmp.path();
    forge(d, &["synth", "--out", "data"])?;
    forge(
        d,
        &["ingest", "--store", "store", "--source", "crawl", "data/raw/crawl.txt"],
    )?;
    forge(
        d,
        &[
            "ingest",
            "--store",
            "store",
            "--source",
            "clinical",
            "--skip-existing",
            "data/raw/clinical.txt",
        ],
    )?;
    forge(
        d,
        &[
            "langid",
            "train",
            "--data",
            "data/langid/train.jsonl",
            "--out",
            "langid",
        ],
    )?;
    forge(
        d,
        &[
            "prep",
            "--store",
            "store",
            "--out",
            "prep",
            "--langid",
            "langid/langid.model",
        ],
    )?;
    forge(d, &["stats", "--store", "store", "--prep", "prep"])?;
    forge(d, &["tok", "train", "--input", "prep/sentences.jsonl", "--out", "tok"])?;
    let corpus = ["--corpus", "prep/sentences.jsonl", "--tokenizer", "tok"];
    forge(d, &[&["pretrain", "--out", "pt/scratch"][..], &corpus].concat())?;
    forge(
        d,
        &[
            &[
                "pretrain",
                "--strategy",
                "continual",
                "--init",
                "pt/scratch/final.ckpt",
                "--steps",
                "60",
            ][..],
            &corpus,
            &["--out", "pt/continual"],
        ]
        .concat(),
    )?;
    let tasks = [
        "--task",
        "data/tasks/ner.json",
        "--task",
        "data/tasks/mcqa.json",
        "--task",
        "data/tasks/triage.json",
    ];
    forge(
        d,
        &[
            "finetune",
            "--checkpoint",
            "pt/scratch/final.ckpt",
            "--tokenizer",
            "tok",
            "--task",
            "data/tasks/ner.json",
            "--out",
            "ft",
        ],
    )?;
    for name in ["scratch", "continual"] {
        let ck = format!("pt/{name}/final.ckpt");
        let out = format!("runs/{name}");
        forge(
            d,
            &[
                &[
                    "evaluate",
                    "--checkpoint",
                    &ck,
                    "--tokenizer",
                    "tok",
                    "--name",
                    name,
                    "--out",
                    &out,
                ][..],
                &tasks,
            ]
            .concat(),
        )?;
    }
    let table = forge(d, &["report", "--runs", "runs"])?;
    forge(d, &["plot", "--trace", "pt/scratch/loss.csv", "--out", "plots"])?;
    let elapsed = start.elapsed();

    let md = std::fs::read_to_string(d.join("runs/report/report.md")).map_err(e2s)?;
    ensure!(md == table, "printed table differs from report.md");
    let header = md.lines().next().unwrap_or_default();
    for col in ["ner P", "ner R", "ner F1", "triage F1", "mcqa EMR", "mcqa Hamming"] {
        ensure!(header.contains(col), "report header lacks `{col}`: {header}");
    }
    ensure!(md.lines().count() == 4, "expected two model rows:\n{md}");
    for svg in [
        "runs/report/box_ner.svg",
        "runs/report/box_mcqa.svg",
        "plots/loss.svg",
        "pt/scratch/loss.svg",
    ] {
        let s = std::fs::read_to_string(d.join(svg)).map_err(|e| format!("{svg}: {e}"))?;
        ensure!(
            s.starts_with("<svg") && s.trim_end().ends_with("</svg>"),
            "{svg} is not an SVG document"
        );
    }
    for dir in [
        "data",
        "store",
        "langid",
        "prep",
        "tok",
        "pt/scratch",
        "pt/continual",
        "ft",
        "runs/scratch",
        "runs/report",
        "plots",
    ] {
        ensure!(d.join(dir).join("run.json").is_file(), "{dir} has no run.json");
    }
    ensure!(elapsed < Duration::from_secs(600), "pipeline took {elapsed:?}");
    Ok(format!(
        "pipeline finished in {:.0} s on one thread",
        elapsed.as_secs_f64()
    ))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("tokenizer round trip", c1_round_trip),
        ("BPE oracle equivalence", c2_bpe_oracle),
        ("masking statistics", c3_masking),
        ("gradient check", c4_gradient_check),
        ("overfit and continual warm start", c5_overfit),
        ("resume equivalence", c6_resume),
        ("schedule and paper dry run", c7_schedule),
        ("metric oracles", c8_metrics),
        ("coverage matrix", c9_coverage),
        ("loss anomaly detector", c10_anomaly),
        ("fine-tune sanity", c11_finetune),
        ("end-to-end smoke", c12_end_to_end),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {why} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
