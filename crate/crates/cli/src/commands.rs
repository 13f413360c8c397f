//! Subcommand implementations. Each writes only under its own output
//! directory and finishes by writing `run.json` there.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use forge_core::corpus::{CorpusManifest, DocumentStore, IngestOptions};
use forge_core::encoder::EncoderConfig;
use forge_core::io;
use forge_core::langid::{train_langid, LangIdConfig, LangModel};
use forge_core::metrics::{csv_table, markdown_table, per_class_markdown, ResultRow};
use forge_core::plot::{box_plot_svg, loss_curve_svg};
use forge_core::subtok::{coverage_matrix, train_bpe, BpeConfig, SubwordModel, DESK_VOCAB, PAPER_VOCAB};
use forge_core::synth;
use forge_core::tasks::{
    evaluate_seeds, finetune, load_examples, score, write_predictions, EvalInputs, EvalResult, FinetuneConfig, Splits,
    TaskKind, TaskMetric, TaskSpec,
};
use forge_core::textprep::{
    filter, load_sentences, sample, save_rejections, save_sentences, split_documents, FilterPolicy, Sentence,
};
use forge_core::train::{
    detect_anomaly, prepare_rows, pretrain, AnomalyConfig, Checkpoint, LossTrace, RunOptions, Strategy, TrainConfig,
};
use forge_core::Exec;
use serde_json::json;

use crate::manifest::Run;
use crate::{
    CoverageArgs, EvaluateArgs, FinetuneArgs, FinetunePreset, IngestArgs, LangidFilterArgs, LangidTrainArgs, PlotArgs,
    PrepArgs, Preset, PretrainArgs, ReportArgs, StatsArgs, StrategyArg, SynthArgs, TokEncodeArgs, TokTrainArgs,
    UsageError,
};

/// Text lines of a corpus file: the `text` field of JSONL records, or the
/// non-empty lines of any other file.
fn read_texts(path: &Path) -> Result<Vec<String>> {
    let raw = io::read_string(path)?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        raw.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                let v: serde_json::Value =
                    serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))?;
                v.get("text")
                    .and_then(|t| t.as_str())
                    .map(str::to_string)
                    .with_context(|| format!("{}:{}: missing `text`", path.display(), i + 1))
            })
            .collect()
    } else {
        Ok(raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect())
    }
}

fn write(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        io::create_dir_all(parent)?;
    }
    io::write_atomic(path, content.as_bytes())?;
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut run = Run::start(&a.out, "synth")?;
    write(&run.output("raw/crawl.txt"), &synth::crawl_text(a.seed, a.docs))?;
    // one document per paragraph
    let clinical = synth::french_corpus(a.seed, a.corpus_bytes).replace('\n', "\n\n");
    write(&run.output("raw/clinical.txt"), &clinical)?;
    let lang: Vec<serde_json::Value> = synth::langid_samples(a.seed, a.langid_per_lang)
        .into_iter()
        .map(|(text, lang)| json!({"text": text, "lang": lang}))
        .collect();
    io::create_dir_all(&a.out.join("langid"))?;
    io::write_jsonl(&run.output("langid/train.jsonl"), &lang)?;

    let splits = |name: &str, ext: &str| Splits {
        train: format!("{name}/train.{ext}").into(),
        dev: format!("{name}/dev.{ext}").into(),
        test: Some(format!("{name}/test.{ext}").into()),
    };
    let tasks_dir = a.out.join("tasks");
    let ner = TaskSpec {
        name: "ner".into(),
        kind: TaskKind::TokenCls,
        labels: ["O", "B-DRUG", "B-DISO", "I-DISO"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        metric: TaskMetric::MacroF1,
        allow_empty: false,
        splits: splits("ner", "conll"),
    };
    for (split, seed, n) in [("train", 1, 200), ("dev", 2, 50), ("test", 3, 50)] {
        let mut s = String::new();
        for t in synth::ner_dataset(derive(a.seed, seed), n) {
            for (w, tag) in t.tokens.iter().zip(&t.tags) {
                let _ = writeln!(s, "{w} {tag}");
            }
            s.push('\n');
        }
        write(&run.output(&format!("tasks/ner/{split}.conll")), &s)?;
    }
    let mcqa = TaskSpec {
        name: "mcqa".into(),
        kind: TaskKind::Multilabel,
        labels: ["A", "B", "C", "D", "E"].iter().map(|s| s.to_string()).collect(),
        metric: TaskMetric::EmrHamming,
        allow_empty: true,
        splits: splits("mcqa", "jsonl"),
    };
    let triage = TaskSpec {
        name: "triage".into(),
        kind: TaskKind::SeqCls,
        labels: ["stable", "urgent"].iter().map(|s| s.to_string()).collect(),
        metric: TaskMetric::WeightedF1,
        allow_empty: false,
        splits: splits("triage", "jsonl"),
    };
    for (split, seed, n) in [("train", 1, 250), ("dev", 2, 50), ("test", 3, 50)] {
        let m = synth::multilabel_dataset(derive(a.seed, seed), n);
        io::create_dir_all(&tasks_dir.join("mcqa"))?;
        io::write_jsonl(&run.output(&format!("tasks/mcqa/{split}.jsonl")), &m)?;
        let b = synth::binary_dataset(derive(a.seed, seed), n.min(60));
        io::create_dir_all(&tasks_dir.join("triage"))?;
        io::write_jsonl(&run.output(&format!("tasks/triage/{split}.jsonl")), &b)?;
    }
    for spec in [&ner, &mcqa, &triage] {
        io::write_json_pretty(&run.output(&format!("tasks/{}.json", spec.name)), spec)?;
    }
    println!("synthetic data written to {}", a.out.display());
    run.finish(json!({"docs": a.docs, "corpus_bytes": a.corpus_bytes}), vec![a.seed])
}

fn derive(seed: u64, k: u64) -> u64 {
    forge_core::hashing::derive_seed(seed, &[k])
}

pub fn ingest(a: &IngestArgs, exec: Exec) -> Result<()> {
    let mut store = DocumentStore::load(&a.store)?;
    let mut run = Run::start(&a.store, "ingest")?;
    for p in &a.paths {
        run.input(p)?;
    }
    let report = store.ingest(
        &a.paths,
        &a.source,
        IngestOptions {
            skip_existing: a.skip_existing,
            exec,
        },
    )?;
    store.save(&a.store)?;
    run.output("documents.jsonl");
    io::write_json_pretty(&run.output("ingest_report.json"), &report)?;
    println!(
        "added {} documents, skipped {} existing, rejected {} lines, {} decode errors; store holds {}",
        report.added,
        report.skipped_existing,
        report.rejected.len(),
        report.decode_errors.len(),
        store.len()
    );
    run.finish(json!({"source": a.source, "skip_existing": a.skip_existing}), vec![])
}

pub fn stats(a: &StatsArgs, exec: Exec) -> Result<()> {
    let store = DocumentStore::load(&a.store)?;
    let mut manifest = store.stats(&a.name, 0)?;
    count_sentences(&mut manifest, &store, &split_documents(store.documents(), exec));
    if let Some(prep) = &a.prep {
        let kept = load_sentences(&prep.join("sentences.jsonl"))?;
        let mut by_source: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        for s in &kept {
            let src = store.get(&s.doc_id).map(|d| d.source.clone()).unwrap_or_default();
            let e = by_source.entry(src).or_default();
            e.0 += s.n_words();
            e.1 += 1;
        }
        manifest = manifest.with_kept(&by_source);
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&manifest)?);
        return Ok(());
    }
    println!("| Source | Documents | Words | Sentences | Bytes | Words kept |");
    println!("|---|---:|---:|---:|---:|---:|");
    for s in manifest.sources.iter().chain([&manifest.total]) {
        println!(
            "| {} | {} | {} | {} | {} | {} |",
            s.source,
            s.n_documents,
            s.n_words,
            s.n_sentences,
            s.bytes,
            s.n_words_kept.map(|k| k.to_string()).unwrap_or_else(|| "–".into())
        );
    }
    Ok(())
}

fn count_sentences(manifest: &mut CorpusManifest, store: &DocumentStore, sents: &[Sentence]) {
    let mut per: BTreeMap<&str, u64> = BTreeMap::new();
    for s in sents {
        if let Some(d) = store.get(&s.doc_id) {
            *per.entry(d.source.as_str()).or_default() += 1;
        }
    }
    for src in &mut manifest.sources {
        src.n_sentences = per.get(src.source.as_str()).copied().unwrap_or(0);
    }
    manifest.total.n_sentences = manifest.sources.iter().map(|s| s.n_sentences).sum();
}

pub fn prep(a: &PrepArgs, exec: Exec) -> Result<()> {
    let store = DocumentStore::load(&a.store)?;
    if store.is_empty() {
        return Err(forge_core::Error::EmptyCorpus.into());
    }
    let mut run = Run::start(&a.out, "prep")?;
    run.input(&a.store.join("documents.jsonl"))?;
    let policy = FilterPolicy {
        min_chars: a.min_chars,
        min_words: a.min_words,
        min_alpha_ratio: a.min_alpha_ratio,
        max_digit_ratio: a.max_digit_ratio,
        dedup: !a.no_dedup,
    };
    let sentences = split_documents(store.documents(), exec);
    let n_split = sentences.len();
    let mut manifest = store.stats("corpus", a.seed)?;
    count_sentences(&mut manifest, &store, &sentences);
    let out = filter(sentences, &policy, exec)?;
    let mut kept = out.kept;
    let mut lang_dropped = 0;
    if let Some(model_path) = &a.langid {
        run.input(model_path)?;
        let model = LangModel::load(model_path)?;
        let texts: Vec<&str> = kept.iter().map(|s| s.text.as_str()).collect();
        let keep = model.keep_indices(&texts, &a.keep, a.threshold, exec);
        lang_dropped = kept.len() - keep.len();
        kept = keep.into_iter().map(|i| kept[i].clone()).collect();
    }
    if let Some(target) = a.target_words {
        kept = sample(&kept, target, a.seed)?;
    }
    save_sentences(&run.output("sentences.jsonl"), &kept)?;
    save_rejections(&run.output("rejections.csv"), &out.rejected)?;
    let mut by_source: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for s in &kept {
        let src = store.get(&s.doc_id).map(|d| d.source.clone()).unwrap_or_default();
        let e = by_source.entry(src).or_default();
        e.0 += s.n_words();
        e.1 += 1;
    }
    let manifest = manifest.with_kept(&by_source);
    io::write_json_pretty(&run.output("corpus_manifest.json"), &manifest)?;
    println!(
        "{n_split} sentences split, {} rejected by quality rules, {lang_dropped} by language, {} kept",
        out.rejected.len(),
        kept.len()
    );
    run.finish(
        json!({"filter": policy, "keep": a.keep, "threshold": a.threshold, "target_words": a.target_words}),
        vec![a.seed],
    )
}

pub fn langid_train(a: &LangidTrainArgs, exec: Exec) -> Result<()> {
    let mut run = Run::start(&a.out, "langid train")?;
    run.input(&a.data)?;
    let recs: Vec<serde_json::Value> = io::read_jsonl(&a.data)?;
    let labeled: Vec<(String, String)> = recs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let text = r.get("text").and_then(|v| v.as_str());
            let lang = r.get("lang").and_then(|v| v.as_str());
            match (text, lang) {
                (Some(t), Some(l)) => Ok((t.to_string(), l.to_string())),
                _ => bail!("{}:{}: records need `text` and `lang`", a.data.display(), i + 1),
            }
        })
        .collect::<Result<_>>()?;
    let cfg = LangIdConfig {
        max_n: a.max_n,
        min_examples: a.min_examples,
        ..LangIdConfig::default()
    };
    let (model, report) = train_langid(&labeled, &cfg, exec)?;
    model.save(&run.output("langid.model"))?;
    io::write_json_pretty(&run.output("train_report.json"), &report)?;
    println!(
        "trained on {} examples over {:?}: {} features",
        report.n_examples, model.labels, report.n_features
    );
    run.finish(json!(cfg), vec![])
}

pub fn langid_filter(a: &LangidFilterArgs, exec: Exec) -> Result<()> {
    let mut run = Run::start(&a.out, "langid filter")?;
    run.input(&a.model)?;
    run.input(&a.input)?;
    let model = LangModel::load(&a.model)?;
    let texts = read_texts(&a.input)?;
    let preds = model.classify_batch(&texts, exec);
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (t, p) in texts.iter().zip(preds) {
        let rec = json!({"text": t, "lang": p.lang, "score": p.score});
        if p.lang == a.keep && p.score >= a.threshold {
            kept.push(rec);
        } else {
            dropped.push(rec);
        }
    }
    io::write_jsonl(&run.output("kept.jsonl"), &kept)?;
    io::write_jsonl(&run.output("dropped.jsonl"), &dropped)?;
    println!("kept {} of {} texts as {}", kept.len(), texts.len(), a.keep);
    run.finish(json!({"keep": a.keep, "threshold": a.threshold}), vec![])
}

pub fn tok_train(a: &TokTrainArgs, exec: Exec) -> Result<()> {
    let mut run = Run::start(&a.out, "tok train")?;
    run.input(&a.input)?;
    let texts = read_texts(&a.input)?;
    let budget = a.vocab.unwrap_or(match a.preset {
        Preset::Desk => DESK_VOCAB,
        Preset::Paper => PAPER_VOCAB,
    });
    let cfg = BpeConfig {
        vocab_budget: budget,
        byte_fallback: !a.no_byte_fallback,
    };
    let model = train_bpe(&texts, &cfg, exec)?;
    model.save(run.dir())?;
    run.output("vocab.txt");
    run.output("merges.txt");
    println!(
        "vocabulary {} (budget {budget}), {} merges, fingerprint {}",
        model.vocab_size(),
        model.merges().len(),
        model.fingerprint()
    );
    run.finish(
        json!({"vocab_budget": budget, "byte_fallback": cfg.byte_fallback}),
        vec![],
    )
}

pub fn tok_encode(a: &TokEncodeArgs) -> Result<()> {
    let tok = SubwordModel::load(&a.tokenizer)?;
    let texts = match &a.input {
        Some(p) => read_texts(p)?,
        None => a.text.clone(),
    };
    if texts.is_empty() {
        return Err(UsageError("give TEXT arguments or --input FILE".into()).into());
    }
    for t in texts {
        let enc = tok.encode(&t);
        let tokens: Vec<&str> = enc.ids.iter().map(|&i| tok.vocab()[i as usize].as_str()).collect();
        println!("{}", json!({"ids": enc.ids, "tokens": tokens}));
    }
    Ok(())
}

pub fn coverage(a: &CoverageArgs) -> Result<()> {
    if a.tokenizer.len() < 2 {
        return Err(UsageError("coverage needs at least two --tokenizer directories".into()).into());
    }
    let models = a
        .tokenizer
        .iter()
        .map(|p| SubwordModel::load(p).with_context(|| format!("loading tokenizer {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = a
        .tokenizer
        .iter()
        .map(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .collect();
    let refs: Vec<&SubwordModel> = models.iter().collect();
    let m = coverage_matrix(&refs)?;
    let mut md = String::from("| |");
    let mut rule = String::from("|---|");
    for n in &names {
        let _ = write!(md, " {n} |");
        rule.push_str("---:|");
    }
    md.push('\n');
    md.push_str(&rule);
    md.push('\n');
    let mut csv = String::from("vocab");
    for n in &names {
        let _ = write!(csv, ",{n}");
    }
    csv.push('\n');
    for (n, row) in names.iter().zip(&m) {
        let _ = write!(md, "| {n} |");
        csv.push_str(n);
        for v in row {
            let _ = write!(md, " {:.2} |", 100.0 * v);
            let _ = write!(csv, ",{v}");
        }
        md.push('\n');
        csv.push('\n');
    }
    print!("{md}");
    if let Some(out) = &a.out {
        let mut run = Run::start(out, "coverage")?;
        for p in &a.tokenizer {
            run.input(p)?;
        }
        write(&run.output("coverage.md"), &md)?;
        write(&run.output("coverage.csv"), &csv)?;
        run.finish(json!({"tokenizers": names}), vec![])?;
    }
    Ok(())
}

fn print_schedule(cfg: &TrainConfig, enc: &EncoderConfig) {
    let k = |n: u64| {
        if n >= 1000 && n.is_multiple_of(1000) {
            format!("{}k", n / 1000)
        } else {
            n.to_string()
        }
    };
    let thousands = |n: usize| {
        let s = n.to_string();
        let mut out = String::new();
        for (i, c) in s.chars().enumerate() {
            if i > 0 && (s.len() - i).is_multiple_of(3) {
                out.push(',');
            }
            out.push(c);
        }
        out
    };
    println!("total_steps     {}", k(cfg.total_steps));
    println!("warmup_steps    {}", k(cfg.warmup_steps));
    println!("batch_rows      {}", thousands(cfg.batch_rows));
    println!("seq_len         {}", cfg.seq_len);
    println!("peak_lr         {:e}", cfg.peak_lr);
    println!("tokens_per_step {}", thousands(cfg.tokens_per_step()));
    println!(
        "encoder         {} layers, d_model {}, {} heads, d_ff {}, vocab {}",
        enc.n_layers, enc.d_model, enc.n_heads, enc.d_ff, enc.vocab_size
    );
    println!("parameters      {}", thousands(enc.n_params()));
}

pub fn pretrain_cmd(a: &PretrainArgs, exec: Exec) -> Result<()> {
    let mut cfg = match a.preset {
        Preset::Desk => TrainConfig::desk(),
        Preset::Paper => TrainConfig::paper(),
    };
    cfg.seed = a.seed;
    if let Some(s) = a.steps {
        cfg.total_steps = s;
        cfg.warmup_steps = cfg.warmup_steps.min(s / 10);
    }
    if let Some(e) = a.checkpoint_every {
        cfg.checkpoint_every = e;
    }
    let strategy = match a.strategy {
        StrategyArg::FromScratch => Strategy::from_scratch(),
        StrategyArg::Continual => match &a.init {
            Some(p) => Strategy::continual(p),
            None => return Err(UsageError("--strategy continual requires --init CHECKPOINT".into()).into()),
        },
    };
    if a.dry_run {
        let enc = match a.preset {
            Preset::Desk => EncoderConfig::desk(DESK_VOCAB),
            Preset::Paper => EncoderConfig::paper(),
        };
        cfg.validate()?;
        println!("preset          {:?}", a.preset);
        println!("strategy        {:?}", strategy.kind);
        print_schedule(&cfg, &enc);
        return Ok(());
    }
    if a.preset == Preset::Paper {
        return Err(forge_core::Error::Config(
            "the paper preset is registered for reference only; use --dry-run to print it".into(),
        )
        .into());
    }
    let (Some(corpus), Some(tok_dir), Some(out)) = (&a.corpus, &a.tokenizer, &a.out) else {
        return Err(UsageError("pretrain needs --corpus, --tokenizer and --out (or --dry-run)".into()).into());
    };
    let mut run = Run::start(out, "pretrain")?;
    run.input(corpus)?;
    run.input(tok_dir)?;
    if let Some(p) = &a.init {
        run.input(p)?;
    }
    let tok = SubwordModel::load(tok_dir)?;
    let enc = match &a.init {
        Some(p) => Checkpoint::load(p)?.encoder,
        None => EncoderConfig {
            max_seq: cfg.seq_len.max(EncoderConfig::desk(0).max_seq),
            ..EncoderConfig::desk(tok.vocab_size())
        },
    };
    let texts = read_texts(corpus)?;
    let rows = prepare_rows(&texts, &tok, cfg.seq_len, exec)?;
    let opts = RunOptions {
        exec,
        out_dir: Some(out.clone()),
        resume: a.resume.clone(),
        stop_at: None,
    };
    let outcome = pretrain(&strategy, &rows, &tok, &enc, &cfg, &opts)?;
    outcome.checkpoint.save(&run.output("final.ckpt"))?;
    outcome.trace.write_csv(&run.output("loss.csv"))?;
    run.output("checkpoints");
    let anomalies = detect_anomaly(&outcome.trace.losses(), &AnomalyConfig::new(a.anomaly_window));
    io::write_json_pretty(&run.output("anomalies.json"), &anomalies)?;
    let svg = loss_curve_svg(&outcome.trace, &anomalies, "MLM loss")?;
    write(&run.output("loss.svg"), &svg)?;
    let first = outcome.trace.rows.first().map(|r| r.loss).unwrap_or(f64::NAN);
    let last = outcome.trace.tail_mean(10);
    io::write_json_pretty(
        &run.output("summary.json"),
        &json!({
            "rows": rows.len(),
            "steps": outcome.checkpoint.step,
            "initial_loss": first,
            "final_loss": last,
            "initial_probe_loss": outcome.initial_probe_loss,
            "final_probe_loss": outcome.final_probe_loss,
            "anomalies": anomalies.len(),
        }),
    )?;
    println!(
        "{} steps on {} rows: loss {first:.4} -> {last:.4}, probe {:.4} -> {:.4}, {} anomalies",
        outcome.checkpoint.step,
        rows.len(),
        outcome.initial_probe_loss,
        outcome.final_probe_loss,
        anomalies.len()
    );
    for an in &anomalies {
        println!("  {} at step {}", an.kind, outcome.trace.rows[an.index].step);
    }
    run.finish(
        json!({"train": cfg, "encoder": enc, "strategy": strategy}),
        vec![cfg.seed],
    )
}

fn finetune_config(preset: FinetunePreset, max_epochs: Option<usize>) -> FinetuneConfig {
    let mut c = match preset {
        FinetunePreset::Desk => FinetuneConfig::desk(),
        FinetunePreset::Base => FinetuneConfig::base(),
    };
    if let Some(e) = max_epochs {
        c.max_epochs = e;
    }
    c
}

pub fn finetune_cmd(a: &FinetuneArgs, exec: Exec) -> Result<()> {
    let mut run = Run::start(&a.out, "finetune")?;
    run.input(&a.checkpoint)?;
    run.input(&a.tokenizer)?;
    run.input(&a.task)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let tok = SubwordModel::load(&a.tokenizer)?;
    let spec = TaskSpec::load(&a.task)?;
    let train = load_examples(&spec, &spec.splits.train)?;
    let dev = load_examples(&spec, &spec.splits.dev)?;
    let cfg = FinetuneConfig {
        seed: a.seed,
        ..finetune_config(a.preset, a.max_epochs)
    };
    let out = finetune(&ck, &tok, &spec, &train, &dev, &cfg, exec)?;
    out.model.save(&run.output("model.task"))?;
    io::write_json_pretty(&run.output("history.json"), &out.history)?;
    for h in &out.history {
        println!(
            "epoch {:>2}  train loss {:.4}  dev {:.4}",
            h.epoch, h.train_loss, h.dev_score
        );
    }
    let preds = out.model.predict(&tok, &dev, exec)?;
    let ext = if spec.kind == TaskKind::TokenCls {
        "conll"
    } else {
        "jsonl"
    };
    write_predictions(&spec, &dev, &preds, &run.output(&format!("dev_predictions.{ext}")))?;
    let sc = score(&spec, &dev, &preds)?;
    io::write_json_pretty(&run.output("dev_scores.json"), &sc)?;
    println!("best epoch {} dev {:.4}", out.best_epoch, out.best_dev);
    run.finish(json!({"finetune": cfg, "task": spec}), vec![cfg.seed])
}

pub fn evaluate(a: &EvaluateArgs, exec: Exec) -> Result<()> {
    if a.seeds.len() < a.min_seeds {
        return Err(UsageError(format!(
            "{} seeds given but at least {} are required",
            a.seeds.len(),
            a.min_seeds
        ))
        .into());
    }
    let mut run = Run::start(&a.out, "evaluate")?;
    run.input(&a.checkpoint)?;
    run.input(&a.tokenizer)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let tok = SubwordModel::load(&a.tokenizer)?;
    let cfg = finetune_config(a.preset, a.max_epochs);
    let mut results: Vec<EvalResult> = Vec::new();
    for task_path in &a.task {
        run.input(task_path)?;
        let spec = TaskSpec::load(task_path)?;
        let train = load_examples(&spec, &spec.splits.train)?;
        let dev = load_examples(&spec, &spec.splits.dev)?;
        let test = match &spec.splits.test {
            Some(p) => Some(load_examples(&spec, p)?),
            None => None,
        };
        let inp = EvalInputs {
            model_name: &a.name,
            checkpoint: &ck,
            tokenizer: &tok,
            spec: &spec,
            train: &train,
            dev: &dev,
            test: test.as_deref(),
        };
        let r = evaluate_seeds(&inp, &cfg, &a.seeds, exec)?;
        let mut detail = String::new();
        for sr in &r.runs {
            let _ = writeln!(
                detail,
                "## seed {} (best epoch {}, dev {:.4})\n",
                sr.seed, sr.best_epoch, sr.dev_score
            );
            detail.push_str(&per_class_markdown(&sr.eval.report));
            if let Some(sp) = sr.eval.span {
                let _ = writeln!(
                    detail,
                    "\nentity spans: P {:.4} R {:.4} F1 {:.4}",
                    sp.precision, sp.recall, sp.f1
                );
            }
            detail.push('\n');
        }
        write(&run.output(&format!("{}_per_class.md", spec.name)), &detail)?;
        let primary: Vec<f64> = r.runs.iter().map(|x| x.eval.primary(spec.metric)).collect();
        let svg = box_plot_svg(&[(a.name.clone(), primary)], &format!("{:?}", spec.metric), &spec.name)?;
        write(&run.output(&format!("{}_box.svg", spec.name)), &svg)?;
        let cells: Vec<String> = r
            .summary
            .iter()
            .map(|(n, s)| format!("{n} {:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std))
            .collect();
        println!("{} / {}: {}", a.name, spec.name, cells.join(", "));
        results.push(r);
    }
    io::write_json_pretty(&run.output("results.json"), &results)?;
    let rows: Vec<ResultRow> = results.iter().map(EvalResult::row).collect();
    write(&run.output("results.md"), &markdown_table(&rows))?;
    run.finish(json!({"finetune": cfg, "model": a.name}), a.seeds.clone())
}

fn find_results(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_results(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "results.json") {
            out.push(p);
        }
    }
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let out_dir = a.out.clone().unwrap_or_else(|| a.runs.join("report"));
    let mut files = Vec::new();
    find_results(&a.runs, &mut files)?;
    files.retain(|f| !f.starts_with(&out_dir));
    if files.is_empty() {
        return Err(forge_core::Error::InvalidInput(format!("no results.json under {}", a.runs.display())).into());
    }
    let mut run = Run::start(&out_dir, "report")?;
    let mut results: Vec<EvalResult> = Vec::new();
    for f in &files {
        run.input(f)?;
        results.extend(io::read_json::<Vec<EvalResult>>(f)?);
    }
    let rows: Vec<ResultRow> = results.iter().map(EvalResult::row).collect();
    let md = markdown_table(&rows);
    write(&run.output("report.md"), &md)?;
    write(&run.output("report.csv"), &csv_table(&rows)?)?;
    let mut tasks: Vec<&str> = results.iter().map(|r| r.task.as_str()).collect();
    tasks.sort();
    tasks.dedup();
    for t in tasks {
        let mut groups: Vec<(String, Vec<f64>)> = results
            .iter()
            .filter(|r| r.task == t)
            .map(|r| {
                (
                    r.model.clone(),
                    r.runs.iter().map(|x| x.eval.primary(r.metric)).collect(),
                )
            })
            .collect();
        groups.sort_by(|x, y| x.0.cmp(&y.0));
        let metric = results
            .iter()
            .find(|r| r.task == t)
            .map(|r| r.metric)
            .expect("task present");
        let svg = box_plot_svg(&groups, &format!("{metric:?}"), t)?;
        write(&run.output(&format!("box_{t}.svg")), &svg)?;
    }
    print!("{md}");
    run.finish(json!({"runs": a.runs}), vec![])
}

pub fn plot(a: &PlotArgs) -> Result<()> {
    let mut run = Run::start(&a.out, "plot")?;
    match (&a.trace, &a.results) {
        (Some(trace), None) => {
            run.input(trace)?;
            let t = LossTrace::read_csv(trace)?;
            let anomalies = detect_anomaly(&t.losses(), &AnomalyConfig::new(a.window));
            write(&run.output("loss.svg"), &loss_curve_svg(&t, &anomalies, &a.title)?)?;
        }
        (None, Some(results)) => {
            run.input(results)?;
            let rs: Vec<EvalResult> = io::read_json(results)?;
            for r in &rs {
                let scores = r.runs.iter().map(|x| x.eval.primary(r.metric)).collect();
                let svg = box_plot_svg(&[(r.model.clone(), scores)], &format!("{:?}", r.metric), &r.task)?;
                write(&run.output(&format!("box_{}_{}.svg", r.model, r.task)), &svg)?;
            }
        }
        _ => return Err(UsageError("give exactly one of --trace or --results".into()).into()),
    }
    run.finish(json!({"window": a.window, "title": a.title}), vec![])
}
