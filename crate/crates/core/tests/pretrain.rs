//! Pre-training behaviour on a memorisable toy corpus: overfitting, warm
//! starts, exact resume, gradient accumulation and tokenizer guards.

use forge_core::encoder::EncoderConfig;
use forge_core::subtok::{train_bpe, BpeConfig, SubwordModel};
use forge_core::synth::french_sentences;
use forge_core::train::{checkpoint_path, prepare_rows, pretrain, Checkpoint, RunOptions, Strategy, TrainConfig};
use forge_core::{Error, Exec};

fn toy() -> (Vec<String>, SubwordModel) {
    let sents = french_sentences(7, 200);
    let tok = train_bpe(&sents, &BpeConfig::default(), Exec::Parallel).unwrap();
    (sents, tok)
}

fn small_cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        total_steps: steps,
        warmup_steps: steps / 10,
        batch_rows: 8,
        seq_len: 32,
        checkpoint_every: 0,
        ..TrainConfig::desk()
    }
}

fn small_encoder(vocab: usize) -> EncoderConfig {
    EncoderConfig {
        d_model: 32,
        d_ff: 64,
        max_seq: 32,
        ..EncoderConfig::desk(vocab)
    }
}

#[test]
fn from_scratch_overfits_and_continual_warm_starts() {
    let (sents, tok) = toy();
    let cfg = TrainConfig::desk();
    let enc = EncoderConfig::desk(tok.vocab_size());
    let rows = prepare_rows(&sents, &tok, cfg.seq_len, Exec::Parallel).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        exec: Exec::Parallel,
        out_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let out = pretrain(&Strategy::from_scratch(), &rows, &tok, &enc, &cfg, &opts).unwrap();
    let initial = out.trace.rows[0].loss;
    let last = out.trace.tail_mean(10);
    eprintln!(
        "initial {initial:.4} final {last:.4} probe {:.4}->{:.4}",
        out.initial_probe_loss, out.final_probe_loss
    );
    assert!(last < 0.2 * initial, "final {last} vs initial {initial}");

    let ck = dir.path().join("final.ckpt");
    out.checkpoint.save(&ck).unwrap();
    let fp = tok.fingerprint().to_string();
    let cont_cfg = TrainConfig {
        total_steps: 20,
        warmup_steps: 2,
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
    .unwrap();
    assert_eq!(tok.fingerprint(), fp);
    let rel = (cont.initial_probe_loss - out.final_probe_loss).abs() / out.final_probe_loss;
    assert!(
        rel < 0.05,
        "warm start {} vs {}",
        cont.initial_probe_loss,
        out.final_probe_loss
    );
}

#[test]
fn resume_is_bitwise_identical() {
    let (sents, tok) = toy();
    let cfg = small_cfg(40);
    let enc = small_encoder(tok.vocab_size());
    let rows = prepare_rows(&sents, &tok, cfg.seq_len, Exec::Sequential).unwrap();
    let full = pretrain(
        &Strategy::from_scratch(),
        &rows,
        &tok,
        &enc,
        &cfg,
        &RunOptions::default(),
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let first = RunOptions {
        out_dir: Some(dir.path().to_path_buf()),
        stop_at: Some(20),
        ..Default::default()
    };
    let a = pretrain(&Strategy::from_scratch(), &rows, &tok, &enc, &cfg, &first).unwrap();
    assert_eq!(a.checkpoint.step, 20);
    let second = RunOptions {
        resume: Some(checkpoint_path(dir.path(), 20)),
        ..Default::default()
    };
    let b = pretrain(&Strategy::from_scratch(), &rows, &tok, &enc, &cfg, &second).unwrap();
    let joined: Vec<_> = a.trace.rows.iter().chain(&b.trace.rows).cloned().collect();
    assert_eq!(joined.len(), full.trace.rows.len());
    for (x, y) in joined.iter().zip(&full.trace.rows) {
        assert_eq!(x.loss.to_bits(), y.loss.to_bits());
    }
    assert_eq!(b.checkpoint.params, full.checkpoint.params);
    assert_eq!(b.checkpoint.optimizer, full.checkpoint.optimizer);
}

#[test]
fn accumulation_matches_full_batch_and_threads_do_not_matter() {
    let (sents, tok) = toy();
    let cfg = small_cfg(6);
    let enc = small_encoder(tok.vocab_size());
    let rows = prepare_rows(&sents, &tok, cfg.seq_len, Exec::Sequential).unwrap();
    let base = pretrain(
        &Strategy::from_scratch(),
        &rows,
        &tok,
        &enc,
        &cfg,
        &RunOptions::default(),
    )
    .unwrap();
    let acc_cfg = TrainConfig {
        accum_steps: 4,
        ..cfg.clone()
    };
    let acc = pretrain(
        &Strategy::from_scratch(),
        &rows,
        &tok,
        &enc,
        &acc_cfg,
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(base.checkpoint.params, acc.checkpoint.params);
    let par = pretrain(
        &Strategy::from_scratch(),
        &rows,
        &tok,
        &enc,
        &cfg,
        &RunOptions {
            exec: Exec::Parallel,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(base.checkpoint.params, par.checkpoint.params);
}

#[test]
fn continual_rejects_a_different_tokenizer() {
    let (sents, tok) = toy();
    let cfg = small_cfg(2);
    let enc = small_encoder(tok.vocab_size());
    let rows = prepare_rows(&sents, &tok, cfg.seq_len, Exec::Sequential).unwrap();
    let out = pretrain(
        &Strategy::from_scratch(),
        &rows,
        &tok,
        &enc,
        &cfg,
        &RunOptions::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.ckpt");
    out.checkpoint.save(&ck).unwrap();
    let reloaded = Checkpoint::load(&ck).unwrap();
    assert_eq!(reloaded, out.checkpoint);

    let other = train_bpe(
        &sents[..100],
        &BpeConfig {
            vocab_budget: tok.vocab_size(),
            byte_fallback: true,
        },
        Exec::Sequential,
    )
    .unwrap();
    let err = pretrain(
        &Strategy::continual(&ck),
        &rows,
        &other,
        &enc,
        &cfg,
        &RunOptions::default(),
    )
    .unwrap_err();
    assert!(
        matches!(err, Error::FingerprintMismatch { .. } | Error::Config(_)),
        "{err}"
    );
}

#[test]
fn corrupt_checkpoint_version_is_rejected() {
    let (sents, tok) = toy();
    let cfg = small_cfg(1);
    let enc = small_encoder(tok.vocab_size());
    let rows = prepare_rows(&sents, &tok, cfg.seq_len, Exec::Sequential).unwrap();
    let out = pretrain(
        &Strategy::from_scratch(),
        &rows,
        &tok,
        &enc,
        &cfg,
        &RunOptions::default(),
    )
    .unwrap();
    let bytes = out.checkpoint.to_bytes().unwrap();
    let text = String::from_utf8_lossy(&bytes[..bytes.iter().position(|&b| b == b'\n').unwrap()]).to_string();
    let bumped = text.replace("\"format_version\":1", "\"format_version\":99");
    let mut corrupt = bumped.into_bytes();
    corrupt.extend_from_slice(&bytes[text.len()..]);
    assert!(matches!(Checkpoint::from_bytes(&corrupt), Err(Error::Format(_))));
}
