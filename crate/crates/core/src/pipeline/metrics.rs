use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunMode;
use crate::error::{Error, Result};

pub const PRETRAIN_COLUMNS: [&str; 12] = [
    "step",
    "episode",
    "mode",
    "task",
    "prompt_style",
    "alpha",
    "scorer",
    "r_task_mean",
    "r_lamp_mean",
    "r_explore_mean",
    "success_rate",
    "wall_ms",
];

/// Finetuning trains on the task reward only, so the LAMP column is dropped.
pub const FINETUNE_COLUMNS: [&str; 11] = [
    "step",
    "episode",
    "mode",
    "task",
    "prompt_style",
    "alpha",
    "scorer",
    "r_task_mean",
    "r_explore_mean",
    "success_rate",
    "wall_ms",
];

/// One logged evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    pub task: String,
    pub prompt_style: u8,
    pub scorer: String,
    /// Mean per-step task reward of the evaluation episodes.
    pub r_task_mean: f64,
    /// Mean collected LAMP reward since the previous row (pretraining only).
    pub r_lamp_mean: Option<f64>,
    /// Mean collected novelty bonus since the previous row.
    pub r_explore_mean: f64,
    pub success_rate: f64,
    pub wall_ms: u64,
}

/// Counts of scripted task-reward reads, split by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRewardAccess {
    pub learning: u64,
    pub logging: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: RunMode,
    pub config_hash: String,
    pub alpha: f64,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub task_reward_access: TaskRewardAccess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: RunMode,
    pub config_hash: String,
    pub seed: u64,
    pub final_return: Option<f64>,
    pub final_success_rate: Option<f64>,
    pub steps_to_success_0_8: Option<u64>,
    pub steps_to_return_0_6: Option<u64>,
    pub task_reward_access: TaskRewardAccess,
}

/// Which logged quantity a threshold applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Return,
    SuccessRate,
}

impl RunMetrics {
    pub fn columns(&self) -> &'static [&'static str] {
        match self.mode {
            RunMode::Pretrain => &PRETRAIN_COLUMNS,
            RunMode::Finetune => &FINETUNE_COLUMNS,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "# config_hash={} alpha={} mode={} seed={}",
            self.config_hash,
            self.alpha,
            self.mode.name(),
            self.seed
        )
        .unwrap();
        writeln!(out, "{}", self.columns().join(",")).unwrap();
        for r in &self.rows {
            write!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.step,
                r.episode,
                self.mode.name(),
                r.task,
                r.prompt_style,
                self.alpha,
                r.scorer,
                r.r_task_mean
            )
            .unwrap();
            if self.mode == RunMode::Pretrain {
                write!(out, ",{}", r.r_lamp_mean.unwrap_or(f64::NAN)).unwrap();
            }
            writeln!(out, ",{},{},{}", r.r_explore_mean, r.success_rate, r.wall_ms).unwrap();
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// First logged step at which `metric` reaches `threshold`.
    pub fn steps_to(&self, metric: Metric, threshold: f64) -> Option<u64> {
        self.rows.iter().find(|r| value(r, metric) >= threshold).map(|r| r.step)
    }

    pub fn final_value(&self, metric: Metric) -> Option<f64> {
        self.rows.last().map(|r| value(r, metric))
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            mode: self.mode,
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            final_return: self.final_value(Metric::Return),
            final_success_rate: self.final_value(Metric::SuccessRate),
            steps_to_success_0_8: self.steps_to(Metric::SuccessRate, 0.8),
            steps_to_return_0_6: self.steps_to(Metric::Return, 0.6),
            task_reward_access: self.task_reward_access,
        }
    }
}

fn value(r: &MetricsRow, metric: Metric) -> f64 {
    match metric {
        Metric::Return => r.r_task_mean,
        Metric::SuccessRate => r.success_rate,
    }
}

/// Parsed metrics CSV: header comment fields, column names and numeric-or-text cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub comment: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MetricsTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut comment = String::new();
        let mut lines = text.lines().peekable();
        while let Some(l) = lines.peek() {
            if let Some(c) = l.strip_prefix('#') {
                comment = c.trim().to_string();
                lines.next();
            } else {
                break;
            }
        }
        let header = lines
            .next()
            .ok_or_else(|| Error::Usage("metrics CSV has no header".into()))?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            if l.is_empty() {
                continue;
            }
            let cells: Vec<String> = l.split(',').map(str::to_string).collect();
            if cells.len() != columns.len() {
                return Err(Error::Usage(format!(
                    "metrics row {} has {} cells, header has {}",
                    i + 1,
                    cells.len(),
                    columns.len()
                )));
            }
            rows.push(cells);
        }
        Ok(MetricsTable { comment, columns, rows })
    }

    /// Value of `key=` in the header comment.
    pub fn comment_field(&self, key: &str) -> Option<&str> {
        self.comment
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Usage(format!("no column named {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                r[idx]
                    .parse::<f64>()
                    .map_err(|_| Error::Usage(format!("column {name}: {:?} is not a number", r[idx])))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64, ret: f64, succ: f64) -> MetricsRow {
        MetricsRow {
            step,
            episode: step / 100,
            task: "pick_up".into(),
            prompt_style: 2,
            scorer: "r3m".into(),
            r_task_mean: ret,
            r_lamp_mean: Some(0.5),
            r_explore_mean: 0.1,
            success_rate: succ,
            wall_ms: 0,
        }
    }

    fn metrics(mode: RunMode) -> RunMetrics {
        RunMetrics {
            mode,
            config_hash: "ab".repeat(32),
            alpha: 0.9,
            seed: 1,
            rows: vec![row(0, 0.1, 0.0), row(1000, 0.65, 0.5), row(2000, 0.7, 0.9)],
            task_reward_access: TaskRewardAccess::default(),
        }
    }

    #[test]
    fn header_carries_hash_and_alpha() {
        let m = metrics(RunMode::Pretrain);
        let t = MetricsTable::parse(&m.to_csv()).unwrap();
        assert_eq!(t.comment_field("alpha"), Some("0.9"));
        assert_eq!(t.comment_field("config_hash"), Some(m.config_hash.as_str()));
        assert_eq!(t.columns, PRETRAIN_COLUMNS);
        assert_eq!(t.column("step").unwrap(), vec![0.0, 1000.0, 2000.0]);
    }

    #[test]
    fn finetune_csv_has_no_lamp_column() {
        let t = MetricsTable::parse(&metrics(RunMode::Finetune).to_csv()).unwrap();
        assert_eq!(t.columns, FINETUNE_COLUMNS);
        assert!(!t.columns.iter().any(|c| c == "r_lamp_mean"));
    }

    #[test]
    fn thresholds_pick_first_crossing() {
        let m = metrics(RunMode::Finetune);
        assert_eq!(m.steps_to(Metric::Return, 0.6), Some(1000));
        assert_eq!(m.steps_to(Metric::SuccessRate, 0.8), Some(2000));
        assert_eq!(m.steps_to(Metric::SuccessRate, 0.95), None);
        assert_eq!(m.final_value(Metric::Return), Some(0.7));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(MetricsTable::parse("a,b\n1,2\n3\n").is_err());
        assert!(MetricsTable::parse("").is_err());
    }
}
