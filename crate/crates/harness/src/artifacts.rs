//! On-disk layout of a single run. Every run directory carries the hash of the
//! configuration that produced it and is never reused for a different one.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lamp_core::pipeline::{FinetuneOutput, PretrainOutput, RunConfig, RunSummary};

pub const HASH_FILE: &str = "config_hash";
pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PROMPTS_FILE: &str = "prompts.tsv";

/// Summary written next to a finetuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    #[serde(flatten)]
    pub summary: RunSummary,
    pub prompt: String,
}

/// Prepare `dir` for a run keyed by `hash`. Returns `true` when the directory
/// already holds a finished run with that hash.
pub fn claim_dir(dir: &Path, hash: &str) -> Result<bool> {
    let hash_path = dir.join(HASH_FILE);
    if dir.exists() {
        match std::fs::read_to_string(&hash_path) {
            Ok(h) if h.trim() == hash => return Ok(dir.join(SUMMARY_FILE).exists()),
            Ok(h) => bail!(
                "{} holds a run with config hash {}; refusing to overwrite it with {hash}",
                dir.display(),
                h.trim()
            ),
            Err(_) => {
                let occupied = std::fs::read_dir(dir)
                    .with_context(|| format!("reading {}", dir.display()))?
                    .next()
                    .is_some();
                if occupied {
                    bail!("{} exists and is not a run directory", dir.display());
                }
            }
        }
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(&hash_path, format!("{hash}\n")).with_context(|| format!("writing {}", hash_path.display()))?;
    Ok(false)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Config, metrics, prompt dataset and checkpoint; the summary goes last and marks the run complete.
pub fn write_pretrain(dir: &Path, cfg: &RunConfig, out: &PretrainOutput) -> Result<()> {
    write(&dir.join(CONFIG_FILE), &cfg.to_json_pretty())?;
    write(&dir.join(METRICS_FILE), &out.metrics.to_csv())?;
    out.dataset.save(&dir.join(PROMPTS_FILE))?;
    out.checkpoint.save(dir)?;
    write(&dir.join(SUMMARY_FILE), &serde_json::to_string_pretty(&out.metrics.summary())?)
}

pub fn write_finetune(dir: &Path, cfg: &RunConfig, out: &FinetuneOutput) -> Result<()> {
    write(&dir.join(CONFIG_FILE), &cfg.to_json_pretty())?;
    write(&dir.join(METRICS_FILE), &out.metrics.to_csv())?;
    out.checkpoint.save(dir)?;
    let record = FinetuneRecord {
        summary: out.metrics.summary(),
        prompt: out.prompt.clone(),
    };
    write(&dir.join(SUMMARY_FILE), &serde_json::to_string_pretty(&record)?)
}

pub fn read_summary<T: serde::de::DeserializeOwned>(dir: &Path) -> Result<T> {
    let p = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn claim_refuses_a_different_hash() {
        let d = tempfile::tempdir().unwrap();
        let run = d.path().join("r");
        assert!(!claim_dir(&run, "aaa").unwrap());
        assert!(!claim_dir(&run, "aaa").unwrap());
        std::fs::write(run.join(SUMMARY_FILE), "{}").unwrap();
        assert!(claim_dir(&run, "aaa").unwrap());
        let e = claim_dir(&run, "bbb").unwrap_err().to_string();
        assert!(e.contains("refusing"), "{e}");
    }

    #[test]
    fn claim_refuses_foreign_directories() {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join("notes.txt"), "x").unwrap();
        assert!(claim_dir(d.path(), "aaa").is_err());
    }
}
