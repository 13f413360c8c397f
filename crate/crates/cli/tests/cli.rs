//! Exit codes, error lines and run manifests of the `forge` binary.

use std::path::Path;
use std::process::{Command, Output};

fn forge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .current_dir(dir)
        .env("FORGE_THREADS", "1")
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = forge(d.path(), &["prep", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_stage_failure_with_one_error_line() {
    let d = tempfile::tempdir().unwrap();
    let o = forge(d.path(), &["tok", "train", "--input", "absent.txt", "--out", "tok"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: io: "), "{err}");
}

#[test]
fn continual_without_init_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = forge(d.path(), &["pretrain", "--strategy", "continual", "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn paper_preset_is_refused_without_dry_run() {
    let d = tempfile::tempdir().unwrap();
    let o = forge(d.path(), &["pretrain", "--preset", "paper", "--corpus", "c", "--tokenizer", "t", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: config: "));
}

#[test]
fn tokenizer_run_writes_one_manifest_with_fingerprints() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("corpus.txt"), "le patient reçoit\nla patiente reçoit\n").unwrap();
    let o = forge(d.path(), &["tok", "train", "--input", "corpus.txt", "--out", "tok", "--vocab", "300"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifests: Vec<_> = std::fs::read_dir(d.path().join("tok"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name() == "run.json")
        .collect();
    assert_eq!(manifests.len(), 1);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("tok/run.json")).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "tok train");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["config"]["vocab_budget"], 300);
    assert!(m["outputs"].as_array().unwrap().iter().any(|p| p.as_str().unwrap().ends_with("vocab.txt")));

    let enc = forge(d.path(), &["tok", "encode", "--tokenizer", "tok", "le patient"]);
    let line: serde_json::Value = serde_json::from_slice(&enc.stdout).unwrap();
    assert_eq!(line["tokens"].as_array().unwrap().concat_str(), "le▁patient");
}

trait ConcatStr {
    fn concat_str(&self) -> String;
}

impl ConcatStr for Vec<serde_json::Value> {
    fn concat_str(&self) -> String {
        self.iter().map(|v| v.as_str().unwrap()).collect()
    }
}

#[test]
fn coverage_of_a_tokenizer_with_itself_is_full() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.txt"), "anémie sévère\nanémie modérée\n").unwrap();
    assert!(forge(d.path(), &["tok", "train", "--input", "c.txt", "--out", "a", "--vocab", "280"]).status.success());
    let o = forge(d.path(), &["coverage", "--tokenizer", "a", "--tokenizer", "a", "--out", "cov"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = String::from_utf8_lossy(&o.stdout);
    assert!(md.lines().skip(2).all(|l| l.matches("100.00").count() == 2), "{md}");
    assert!(d.path().join("cov/run.json").is_file());
}
