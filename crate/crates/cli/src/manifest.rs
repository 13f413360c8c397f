//! `run.json`: what produced an artifact directory and from which inputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use forge_core::hashing::sha256_hex;
use serde::Serialize;

pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Serialize)]
pub struct InputFingerprint {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub command_line: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputFingerprint>,
    pub outputs: Vec<PathBuf>,
    pub threads: usize,
    pub wall_clock_secs: f64,
}

/// Collects inputs and outputs while a subcommand runs.
pub struct Run {
    dir: PathBuf,
    subcommand: String,
    started: Instant,
    inputs: Vec<InputFingerprint>,
    outputs: Vec<PathBuf>,
}

/// SHA-256 of a file, or of every file under a directory in sorted path order.
pub fn fingerprint(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        let mut acc = Vec::new();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            acc.extend_from_slice(rel.to_string_lossy().as_bytes());
            acc.push(0);
            acc.extend_from_slice(
                sha256_hex(&fs::read(&f).with_context(|| format!("reading {}", f.display()))?).as_bytes(),
            );
        }
        Ok(sha256_hex(&acc))
    } else {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(sha256_hex(&bytes))
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for e in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = e?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else if p.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

impl Run {
    pub fn start(dir: &Path, subcommand: &str) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Run {
            dir: dir.to_path_buf(),
            subcommand: subcommand.to_string(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path of an output inside the run directory, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputFingerprint {
            path: path.to_path_buf(),
            sha256: fingerprint(path)?,
        });
        Ok(())
    }

    pub fn finish(self, config: serde_json::Value, seeds: Vec<u64>) -> Result<()> {
        let m = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            command_line: std::env::args().collect(),
            config,
            seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            threads: rayon::current_num_threads(),
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        };
        forge_core::io::write_json_pretty(&self.dir.join(MANIFEST_FILE), &m)?;
        Ok(())
    }
}
