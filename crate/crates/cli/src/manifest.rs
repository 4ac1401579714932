use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use seghash::align::AlignConfig;
use seghash::bench::BenchConfig;
use seghash::pipeline::Ablation;
use seghash::pretrain::PretrainConfig;
use seghash::synth::SynthConfig;
use seghash::ternary::SegmentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one subcommand invocation, written into its output directory.
///
/// `argv` plus `cwd` is enough to re-run the command; the structured fields
/// restate the effective configuration for readers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub cwd: PathBuf,
    pub seed: Option<u64>,
    pub threads: usize,
    pub mode: Option<Ablation>,
    pub seg_cfg: Option<SegmentConfig>,
    pub align_cfg: Option<AlignConfig>,
    pub loss_cfg: Option<PretrainConfig>,
    pub synth_cfg: Option<SynthConfig>,
    pub bench_cfg: Option<BenchConfig>,
    pub inputs: BTreeMap<String, PathBuf>,
    /// File names written under the output directory.
    pub outputs: Vec<String>,
    pub started: String,
    pub finished: String,
    pub git_describe: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, threads: usize) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv,
            cwd: std::env::current_dir().unwrap_or_default(),
            seed: None,
            threads,
            mode: None,
            seg_cfg: None,
            align_cfg: None,
            loss_cfg: None,
            synth_cfg: None,
            bench_cfg: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started: now(),
            finished: String::new(),
            git_describe: git_describe(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) {
        self.inputs.insert(role.to_string(), path.to_path_buf());
    }

    pub fn write(mut self, out: &Path) -> Result<()> {
        self.finished = now();
        let json = serde_json::to_vec_pretty(&self)?;
        seghash::storage::atomic_write(out.join(MANIFEST_FILE), &json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn git_describe() -> Option<String> {
    let out = Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()?;
    if !out.status.success() {
        return None;
    }
    let s = String::from_utf8(out.stdout).ok()?.trim().to_string();
    (!s.is_empty()).then_some(s)
}
