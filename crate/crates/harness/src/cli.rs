use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use lamp_core::env::{ObjectClass, TaskKind, TaskSpec};
use lamp_core::pipeline::{
    eval_episodes, evaluate, run_finetune, run_pretrain, run_scratch, select_instruction, Checkpoint, Controller,
    ExpertController, Precision, PolicyController, RandomController, RunConfig, RunMode, TaskRewardAccess,
};
use lamp_core::prompts::{generate_dataset, resolve_for_class, Lexicons, PromptStyle};
use lamp_core::scorers::{ScorerConfig, ScorerKind};
use lamp_core::seed;

use crate::artifacts::{claim_dir, write_finetune, write_pretrain};
use crate::grid::{run_grid, ExperimentGrid};
use crate::probe::{dump_trajectories, expert_trajectories, load_trajectories, probe_trajectories, ProbeSpec};

/// Environment variable capping worker threads.
pub const THREADS_VAR: &str = "LAMP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "lamp", version, about = "Language-modulated reward pretraining in a procedural tabletop simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a prompt dataset as TSV.
    Prompts {
        #[arg(long)]
        style: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain on mixed novelty and LAMP rewards.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Run directory; defaults to runs/pretrain-<hash>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finetune a checkpoint on a task, or train from scratch.
    Finetune {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pretraining run directory.
        #[arg(long, required_unless_present = "scratch")]
        checkpoint: Option<PathBuf>,
        #[arg(long, conflicts_with = "checkpoint")]
        scratch: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskKind>,
        #[arg(long, value_parser = parse_class)]
        object: Option<ObjectClass>,
        /// Pick the conditioning prompt among this many candidates by zero-shot return.
        #[arg(long)]
        select_instruction: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint, the scripted expert or random actions.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["expert", "random"])]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        expert: bool,
        #[arg(long)]
        random: bool,
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskKind>,
        #[arg(long, value_parser = parse_class)]
        object: Option<ObjectClass>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Conditioning text for checkpoint policies.
        #[arg(long)]
        prompt: Option<String>,
    },
    /// Label scripted expert episodes and correlate with scripted progress.
    Probe {
        #[arg(long, value_parser = parse_task, default_value = "pick_up")]
        task: TaskKind,
        #[arg(long, value_parser = parse_scorer, default_value = "r3m")]
        scorer: ScorerKind,
        #[arg(long, default_value_t = 1)]
        prompt_style: u8,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scorer noise standard deviation.
        #[arg(long)]
        sigma: Option<f64>,
        /// Label episodes from a JSON-lines dump instead of running the expert.
        #[arg(long)]
        trajectories: Option<PathBuf>,
        /// Write the expert episodes as JSON lines.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long, default_value = "probe.csv")]
        out: PathBuf,
        /// Summary JSON with per-episode Spearman correlations.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run an experiment grid.
    Grid {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Plot CSVs as an SVG learning curve with a min-max band.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        x: Option<String>,
        #[arg(long)]
        y: Option<String>,
    },
}

fn parse_task(s: &str) -> std::result::Result<TaskKind, String> {
    TaskKind::parse(s).ok_or_else(|| format!("unknown task {s:?}; expected reach, pick_up or place_on_target"))
}

fn parse_class(s: &str) -> std::result::Result<ObjectClass, String> {
    ObjectClass::parse(s).ok_or_else(|| format!("unknown object class {s:?}"))
}

fn parse_scorer(s: &str) -> std::result::Result<ScorerKind, String> {
    ScorerKind::parse(s).ok_or_else(|| format!("unknown scorer {s:?}; expected r3m, zest or video"))
}

/// Worker count from [`THREADS_VAR`], or the available parallelism.
pub fn thread_budget() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => bail!("{THREADS_VAR} must be a positive integer, got {v:?}"),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => {
            if !p.exists() {
                bail!("config file {} does not exist", p.display());
            }
            Ok(RunConfig::load(p)?)
        }
        None => Ok(RunConfig::default()),
    }
}

fn default_out(cfg: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-{}", cfg.mode.name(), &cfg.hash()[..16]))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn apply_task(cfg: &mut RunConfig, task: Option<TaskKind>, object: Option<ObjectClass>) {
    if let Some(t) = task {
        cfg.task.kind = t;
    }
    if let Some(o) = object {
        cfg.task.target_class = o;
    }
    cfg.task = TaskSpec::new(cfg.task.kind, cfg.task.target_class);
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prompts { style, seed, count, out } => {
            let style = PromptStyle::from_number(style)?;
            let ds = generate_dataset(style, &Lexicons::shipped(), seed, count)?;
            ds.save(&out)?;
            eprintln!("wrote {} prompts to {}", ds.prompts.len(), out.display());
        }
        Command::Pretrain { config, seed, steps, out } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.mode = RunMode::Pretrain;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.steps = steps.unwrap_or(cfg.steps);
            cfg.validate()?;
            let dir = out.unwrap_or_else(|| default_out(&cfg));
            claim_dir(&dir, &cfg.hash())?;
            let res = run_pretrain(&cfg)?;
            write_pretrain(&dir, &cfg, &res)?;
            print_json(&res.metrics.summary())?;
            eprintln!("run directory {}", dir.display());
        }
        Command::Finetune {
            config,
            checkpoint,
            scratch,
            seed,
            steps,
            task,
            object,
            select_instruction: candidates,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.mode = RunMode::Finetune;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.steps = steps.unwrap_or(cfg.steps);
            apply_task(&mut cfg, task, object);
            let ck = match (&checkpoint, scratch) {
                (Some(dir), _) => Some(Checkpoint::load(dir)?),
                (None, true) => None,
                (None, false) => bail!("pass --checkpoint DIR or --scratch"),
            };
            if let (Some(k), Some(ck)) = (candidates, &ck) {
                cfg.prompt = Some(pick_instruction(&cfg, ck, k)?);
            }
            cfg.validate()?;
            let dir = out.unwrap_or_else(|| default_out(&cfg));
            claim_dir(&dir, &cfg.hash())?;
            let res = match &ck {
                Some(ck) => run_finetune(ck, &cfg)?,
                None => run_scratch(&cfg)?,
            };
            write_finetune(&dir, &cfg, &res)?;
            print_json(&res.metrics.summary())?;
            eprintln!("prompt {:?}; run directory {}", res.prompt, dir.display());
        }
        Command::Evaluate {
            config,
            checkpoint,
            expert,
            random,
            task,
            object,
            episodes,
            seed,
            prompt,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            apply_task(&mut cfg, task, object);
            cfg.validate()?;
            let env_cfg = cfg.task_env();
            let eps = eval_episodes(cfg.seed, cfg.task, episodes);
            let mut access = TaskRewardAccess::default();
            let res = if expert {
                evaluate(&mut ExpertController { env: env_cfg.clone(), task: cfg.task }, &env_cfg, &eps, &mut access)?
            } else if random {
                let rng = seed::rng(cfg.seed, &[seed::stream::EVAL, u64::MAX]);
                evaluate(&mut RandomController { rng }, &env_cfg, &eps, &mut access)?
            } else {
                let dir = checkpoint.ok_or_else(|| anyhow!("pass --checkpoint DIR, --expert or --random"))?;
                let ck = Checkpoint::load(&dir)?;
                let text = prompt.unwrap_or_else(|| {
                    lamp_core::pipeline::default_instruction(&Lexicons::shipped(), cfg.task.target_class)
                });
                let lang = lamp_core::encoders::embed_language_salted(&text, cfg.scorer.hash_salt);
                eval_checkpoint(&ck, &cfg, lang, &env_cfg, &eps, &mut access)?
            };
            print_json(&serde_json::json!({
                "task": cfg.task.kind.name(),
                "object": cfg.task.target_class.name(),
                "episodes": episodes,
                "mean_return": res.mean_return,
                "success_rate": res.success_rate,
                "returns": res.returns,
            }))?;
        }
        Command::Probe {
            task,
            scorer,
            prompt_style,
            episodes,
            seed,
            sigma,
            trajectories,
            dump,
            out,
            summary,
        } => {
            let mut sc = ScorerConfig {
                kind: scorer,
                ..ScorerConfig::default()
            };
            if let Some(s) = sigma {
                sc.noise_std = s;
            }
            sc.validate()?;
            let mut spec = ProbeSpec::new(task, sc, PromptStyle::from_number(prompt_style)?, episodes);
            spec.seed = seed;
            let report = match &trajectories {
                Some(p) => {
                    let eps = load_trajectories(p)?;
                    spec.episodes = eps.len();
                    probe_trajectories(&spec, &eps)?
                }
                None => {
                    let eps = expert_trajectories(&spec)?;
                    if let Some(d) = &dump {
                        dump_trajectories(d, &eps)?;
                    }
                    probe_trajectories(&spec, &eps)?
                }
            };
            report.save(&out)?;
            let s = report.summary();
            if let Some(p) = summary {
                std::fs::write(&p, serde_json::to_string_pretty(&s)?).with_context(|| format!("writing {}", p.display()))?;
            }
            println!("mean_spearman={:.4} episodes={} out={}", s.mean_rho, s.episodes, out.display());
        }
        Command::Grid { spec, out } => {
            let grid = ExperimentGrid::load(&spec)?;
            let report = run_grid(&grid, &out, thread_budget()?)?;
            for r in &report.runs {
                println!(
                    "{:<48} final_return={:.3} steps_to_success_0.8={} steps_to_return_0.6={}",
                    r.name,
                    r.summary.final_return.unwrap_or(f64::NAN),
                    fmt_opt(r.summary.steps_to_success_0_8),
                    fmt_opt(r.summary.steps_to_return_0_6)
                );
            }
        }
        Command::Plot { csv, out, x, y } => {
            crate::plot::plot(&csv, x.as_deref(), y.as_deref(), &out)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<u64>) -> String {
    v.map_or_else(|| "-".into(), |s| s.to_string())
}

fn eval_checkpoint(
    ck: &Checkpoint,
    cfg: &RunConfig,
    lang: lamp_core::encoders::LangEmbedding,
    env_cfg: &lamp_core::env::EnvConfig,
    eps: &[(u64, TaskSpec)],
    access: &mut TaskRewardAccess,
) -> Result<lamp_core::pipeline::EvalResult> {
    fn go<T: lamp_core::math::Scalar>(
        ck: &Checkpoint,
        cfg: &RunConfig,
        lang: lamp_core::encoders::LangEmbedding,
        env_cfg: &lamp_core::env::EnvConfig,
        eps: &[(u64, TaskSpec)],
        access: &mut TaskRewardAccess,
    ) -> Result<lamp_core::pipeline::EvalResult> {
        let agent = ck.restore_agent::<T>(cfg)?;
        let mut ctrl = PolicyController {
            policy: &agent.policy,
            langs: vec![lang],
        };
        Ok(evaluate(&mut ctrl as &mut dyn Controller, env_cfg, eps, access)?)
    }
    match cfg.precision {
        Precision::F32 => go::<f32>(ck, cfg, lang, env_cfg, eps, access),
        Precision::F64 => go::<f64>(ck, cfg, lang, env_cfg, eps, access),
    }
}

/// Instruction tuning over `k` prompts of the configured style, resolved for the task's class.
fn pick_instruction(cfg: &RunConfig, ck: &Checkpoint, k: usize) -> Result<String> {
    let lex = Lexicons::shipped();
    let ds = generate_dataset(cfg.prompt_style, &lex, cfg.seed, k)?;
    let mut rng = seed::rng(cfg.seed, &[seed::stream::PROMPT, 1]);
    let candidates = ds
        .prompts
        .iter()
        .map(|p| {
            if p.style.has_slot() {
                resolve_for_class(p, cfg.task.target_class, &lex, &mut rng)
            } else {
                Ok(p.clone())
            }
        })
        .collect::<lamp_core::error::Result<Vec<_>>>()?;
    let env_cfg = cfg.task_env();
    let eps = eval_episodes(cfg.seed, cfg.task, cfg.eval_episodes);
    let salt = cfg.scorer.hash_salt;
    let chosen = match cfg.precision {
        Precision::F32 => {
            let agent = ck.restore_agent::<f32>(cfg)?;
            select_instruction(&agent.policy, &candidates, cfg.task, &env_cfg, salt, &eps)?
        }
        Precision::F64 => {
            let agent = ck.restore_agent::<f64>(cfg)?;
            select_instruction(&agent.policy, &candidates, cfg.task, &env_cfg, salt, &eps)?
        }
    };
    Ok(chosen.text)
}

/// Parse `argv`, apply [`THREADS_VAR`] and run; errors go to stderr.
pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let threads = match thread_budget() {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    // A second initialisation in the same process is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
