//! Baseline and ablation grids: a cross product of methods, seeds, tasks,
//! mixing weights, prompt styles and scorers, expanded into pretrain and
//! finetune runs that each live in a directory keyed by their config hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use lamp_core::env::{TaskKind, TaskSpec};
use lamp_core::explore::ExplorerKind;
use lamp_core::pipeline::{
    run_finetune, run_pretrain, run_scratch, sha256_hex, Checkpoint, CriticFinetune, RunConfig, RunMode, RunSummary,
};
use lamp_core::prompts::PromptStyle;
use lamp_core::scorers::ScorerKind;

use crate::artifacts::{claim_dir, read_summary, write_finetune, write_pretrain, FinetuneRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Fresh initialisation, task reward only.
    Scratch,
    /// Disagreement bonus only (`alpha = 1`).
    P2e,
    /// Distillation bonus only (`alpha = 1`).
    Rnd,
    /// Mixed reward at each configured `alpha`.
    Lamp,
    /// LAMP reward only (`alpha = 0`).
    LampOnly,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Scratch => "scratch",
            Method::P2e => "p2e",
            Method::Rnd => "rnd",
            Method::Lamp => "lamp",
            Method::LampOnly => "lamp_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentGrid {
    /// Settings shared by every run; grid axes override their fields.
    pub base: RunConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub tasks: Vec<TaskKind>,
    /// Mixing weights for [`Method::Lamp`].
    pub alphas: Vec<f64>,
    pub prompt_styles: Vec<PromptStyle>,
    pub scorers: Vec<ScorerKind>,
    pub pretrain_steps: u64,
    pub finetune_steps: u64,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            base: RunConfig::default(),
            methods: vec![Method::Scratch, Method::P2e, Method::Lamp],
            seeds: vec![0],
            tasks: vec![TaskKind::Reach, TaskKind::PickUp],
            alphas: vec![0.9],
            prompt_styles: vec![PromptStyle::RelevantSynonym],
            scorers: vec![ScorerKind::R3MStyle],
            pretrain_steps: 30_000,
            finetune_steps: 20_000,
        }
    }
}

/// One finetuning run and the pretraining it starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub method: Method,
    pub seed: u64,
    pub task: TaskKind,
    pub alpha: Option<f64>,
    pub prompt_style: PromptStyle,
    pub scorer: ScorerKind,
    pub pretrain: Option<RunConfig>,
    pub finetune: RunConfig,
}

impl RunSpec {
    /// Hash over both stages, so finetunes of different pretrainings never share a directory.
    pub fn key(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("spec serializes").as_bytes())
    }

    pub fn name(&self) -> String {
        let alpha = self.alpha.map(|a| format!("-a{a}")).unwrap_or_default();
        format!(
            "{}-{}{alpha}-p{}-{}-s{}",
            self.method.name(),
            self.task.name(),
            self.prompt_style,
            self.scorer.name(),
            self.seed
        )
    }

    pub fn dir_name(&self) -> String {
        format!("{}-{}", self.name(), &self.key()[..12])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub method: Method,
    pub seed: u64,
    pub task: TaskKind,
    pub alpha: Option<f64>,
    pub prompt_style: PromptStyle,
    pub scorer: ScorerKind,
    pub dir: PathBuf,
    pub pretrain_dir: Option<PathBuf>,
    pub summary: RunSummary,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub grid_hash: String,
    pub grid: ExperimentGrid,
    pub runs: Vec<RunRecord>,
}

impl GridReport {
    pub fn select(&self, f: impl Fn(&RunRecord) -> bool) -> Vec<&RunRecord> {
        self.runs.iter().filter(|r| f(r)).collect()
    }
}

impl ExperimentGrid {
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("grid serializes").as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading grid spec {}", path.display()))?;
        let g: ExperimentGrid =
            serde_json::from_str(&text).with_context(|| format!("parsing grid spec {}", path.display()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.methods.is_empty() || self.seeds.is_empty() || self.tasks.is_empty() {
            bail!("grid needs at least one method, seed and task");
        }
        if self.prompt_styles.is_empty() || self.scorers.is_empty() {
            bail!("grid needs at least one prompt style and scorer");
        }
        if self.methods.contains(&Method::Lamp) && self.alphas.is_empty() {
            bail!("the lamp method needs at least one alpha");
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            bail!("alpha {a} is outside [0, 1]");
        }
        Ok(())
    }

    fn stage(&self, mode: RunMode, seed: u64, alpha: f64, explorer: ExplorerKind, style: PromptStyle, scorer: ScorerKind) -> RunConfig {
        let mut c = RunConfig {
            mode,
            seed,
            alpha,
            explorer,
            prompt_style: style,
            steps: match mode {
                RunMode::Pretrain => self.pretrain_steps,
                RunMode::Finetune => self.finetune_steps,
            },
            ..self.base.clone()
        };
        c.scorer.kind = scorer;
        c
    }

    /// Runs in a stable order, duplicates removed.
    pub fn expand(&self) -> Vec<RunSpec> {
        let base_style = self.base.prompt_style;
        let base_scorer = self.base.scorer.kind;
        let mut out: Vec<RunSpec> = Vec::new();
        for &method in &self.methods {
            // (alpha, explorer, style, scorer) variants that apply to this method.
            let variants: Vec<(Option<f64>, ExplorerKind, PromptStyle, ScorerKind)> = match method {
                Method::Scratch => vec![(None, self.base.explorer, base_style, base_scorer)],
                Method::P2e => vec![(Some(1.0), ExplorerKind::Disagreement, base_style, base_scorer)],
                Method::Rnd => vec![(Some(1.0), ExplorerKind::Rnd, base_style, base_scorer)],
                Method::Lamp | Method::LampOnly => {
                    let alphas = if method == Method::Lamp { self.alphas.clone() } else { vec![0.0] };
                    let mut v = Vec::new();
                    for &a in &alphas {
                        for &s in &self.prompt_styles {
                            for &k in &self.scorers {
                                v.push((Some(a), self.base.explorer, s, k));
                            }
                        }
                    }
                    v
                }
            };
            for &seed in &self.seeds {
                for &task in &self.tasks {
                    for &(alpha, explorer, style, scorer) in &variants {
                        let a = alpha.unwrap_or(self.base.alpha);
                        let pretrain = alpha.map(|_| self.stage(RunMode::Pretrain, seed, a, explorer, style, scorer));
                        let mut finetune = self.stage(RunMode::Finetune, seed, a, explorer, style, scorer);
                        finetune.task = TaskSpec::new(task, self.base.task.target_class);
                        if method == Method::Scratch {
                            finetune.critic_finetune = CriticFinetune::Full;
                        }
                        let spec = RunSpec {
                            method,
                            seed,
                            task,
                            alpha,
                            prompt_style: style,
                            scorer,
                            pretrain,
                            finetune,
                        };
                        if !out.iter().any(|o| o.key() == spec.key()) {
                            out.push(spec);
                        }
                    }
                }
            }
        }
        out
    }
}

fn pretrain_dir(root: &Path, cfg: &RunConfig) -> PathBuf {
    root.join("pretrain").join(&cfg.hash()[..16])
}

/// Pretrain (or reuse) one configuration and return its checkpoint.
fn ensure_pretrain(root: &Path, cfg: &RunConfig) -> Result<Checkpoint> {
    let dir = pretrain_dir(root, cfg);
    if !claim_dir(&dir, &cfg.hash())? {
        let out = run_pretrain(cfg).with_context(|| format!("pretraining into {}", dir.display()))?;
        write_pretrain(&dir, cfg, &out)?;
        return Ok(out.checkpoint);
    }
    Ok(Checkpoint::load(&dir)?)
}

fn run_one(root: &Path, spec: &RunSpec, checkpoints: &BTreeMap<String, Checkpoint>) -> Result<RunRecord> {
    let dir = root.join("runs").join(spec.dir_name());
    let record: FinetuneRecord = if claim_dir(&dir, &spec.key())? {
        read_summary(&dir)?
    } else {
        let out = match &spec.pretrain {
            None => run_scratch(&spec.finetune)?,
            Some(p) => run_finetune(&checkpoints[&p.hash()], &spec.finetune)?,
        };
        write_finetune(&dir, &spec.finetune, &out).with_context(|| format!("writing {}", dir.display()))?;
        FinetuneRecord {
            summary: out.metrics.summary(),
            prompt: out.prompt,
        }
    };
    Ok(RunRecord {
        name: spec.name(),
        method: spec.method,
        seed: spec.seed,
        task: spec.task,
        alpha: spec.alpha,
        prompt_style: spec.prompt_style,
        scorer: spec.scorer,
        dir,
        pretrain_dir: spec.pretrain.as_ref().map(|p| pretrain_dir(root, p)),
        summary: record.summary,
        prompt: record.prompt,
    })
}

/// Execute every run of `grid` under `root` on up to `threads` workers. Finished
/// runs with a matching hash are reused; pretrainings are shared between tasks.
/// The report is written to `root/grid-<hash>.json`.
pub fn run_grid(grid: &ExperimentGrid, root: &Path, threads: usize) -> Result<GridReport> {
    grid.validate()?;
    let specs = grid.expand();
    let mut pretrains: Vec<RunConfig> = Vec::new();
    for p in specs.iter().filter_map(|s| s.pretrain.as_ref()) {
        if !pretrains.iter().any(|q| q.hash() == p.hash()) {
            pretrains.push(p.clone());
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .context("building the worker pool")?;
    let checkpoints: BTreeMap<String, Checkpoint> = pool.install(|| {
        pretrains
            .par_iter()
            .map(|cfg| ensure_pretrain(root, cfg).map(|c| (cfg.hash(), c)))
            .collect::<Result<_>>()
    })?;
    let runs = pool.install(|| {
        specs
            .par_iter()
            .map(|s| run_one(root, s, &checkpoints))
            .collect::<Result<Vec<_>>>()
    })?;
    let grid_hash = grid.hash();
    let report = GridReport {
        grid_hash: grid_hash.clone(),
        grid: grid.clone(),
        runs,
    };
    let path = root.join(format!("grid-{}.json", &grid_hash[..16]));
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(report)
}

/// Median of the finite values, or `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lamp_core::env::ObjectClass;

    fn small() -> ExperimentGrid {
        let mut base = RunConfig {
            warmup: 100,
            eval_every: 100,
            eval_episodes: 2,
            probe_episodes: 2,
            prompt_count: 8,
            task: TaskSpec::new(TaskKind::Reach, ObjectClass::Cup),
            ..RunConfig::default()
        };
        base.env.horizon = 40;
        base.agent.hidden = vec![8];
        base.agent.batch_size = 8;
        base.ensemble.members = 2;
        base.ensemble.hidden = vec![8];
        ExperimentGrid {
            base,
            methods: vec![Method::Scratch, Method::P2e, Method::Lamp],
            seeds: vec![0, 1],
            tasks: vec![TaskKind::Reach, TaskKind::PickUp],
            alphas: vec![0.5, 0.9],
            pretrain_steps: 200,
            finetune_steps: 200,
            ..ExperimentGrid::default()
        }
    }

    #[test]
    fn expansion_counts_and_unique_keys() {
        let g = small();
        let specs = g.expand();
        // scratch 2x2, p2e 2x2, lamp 2 alphas x 2x2
        assert_eq!(specs.len(), 4 + 4 + 8);
        let mut keys: Vec<String> = specs.iter().map(|s| s.key()).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), specs.len());
        let p2e = specs.iter().find(|s| s.method == Method::P2e).unwrap();
        assert_eq!(p2e.pretrain.as_ref().unwrap().alpha, 1.0);
        assert!(specs.iter().filter(|s| s.method == Method::Scratch).all(|s| s.pretrain.is_none()));
    }

    #[test]
    fn pretrainings_are_shared_across_tasks() {
        let specs = small().expand();
        let lamp: Vec<&RunSpec> = specs
            .iter()
            .filter(|s| s.method == Method::Lamp && s.seed == 0 && s.alpha == Some(0.9))
            .collect();
        assert_eq!(lamp.len(), 2);
        assert_eq!(lamp[0].pretrain, lamp[1].pretrain);
        assert_ne!(lamp[0].key(), lamp[1].key());
    }

    #[test]
    fn run_reuses_finished_runs_and_refuses_foreign_hashes() {
        let mut g = small();
        g.methods = vec![Method::Scratch, Method::Lamp];
        g.seeds = vec![0];
        g.tasks = vec![TaskKind::Reach];
        g.alphas = vec![0.9];
        let d = tempfile::tempdir().unwrap();
        let a = run_grid(&g, d.path(), 1).unwrap();
        assert_eq!(a.runs.len(), 2);
        let b = run_grid(&g, d.path(), 1).unwrap();
        assert_eq!(a, b);
        let lamp = a.runs.iter().find(|r| r.method == Method::Lamp).unwrap();
        std::fs::write(lamp.dir.join(crate::artifacts::HASH_FILE), "other\n").unwrap();
        assert!(run_grid(&g, d.path(), 1).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[f64::NAN]), None);
    }
}
