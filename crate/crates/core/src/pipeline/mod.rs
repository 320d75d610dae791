//! Pretraining, instruction selection, finetuning and evaluation wired over
//! the simulator, prompts, scorers, explorers and agent.

mod checkpoint;
mod config;
mod eval;
mod metrics;
mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, BLOB_FILE, META_FILE};
pub use config::{sha256_hex, CriticFinetune, Precision, RunConfig, RunMode};
pub use eval::{
    eval_episodes, evaluate, evaluate_policy, pretrain_probe, select_by_returns, select_instruction, Controller,
    EvalResult, ExpertController, PolicyController, RandomController, PROBE_BASE_SEED,
};
pub use metrics::{
    Metric, MetricsRow, MetricsTable, RunMetrics, RunSummary, TaskRewardAccess, FINETUNE_COLUMNS, PRETRAIN_COLUMNS,
};
pub use train::{
    default_instruction, finetune, pretrain, run_finetune, run_pretrain, run_scratch, FinetuneOutput, PretrainOutput,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ObjectClass, TaskKind, TaskSpec};

    fn tiny(mode: RunMode) -> RunConfig {
        let mut c = RunConfig {
            mode,
            seed: 3,
            steps: 600,
            warmup: 200,
            eval_every: 200,
            eval_episodes: 2,
            probe_episodes: 2,
            prompt_count: 10,
            task: TaskSpec::new(TaskKind::Reach, ObjectClass::Cup),
            ..RunConfig::default()
        };
        c.env.horizon = 50;
        c.agent.hidden = vec![16];
        c.agent.batch_size = 16;
        c.ensemble.members = 3;
        c.ensemble.hidden = vec![16];
        c
    }

    #[test]
    fn pretrain_is_deterministic_and_never_learns_from_task_reward() {
        let cfg = tiny(RunMode::Pretrain);
        let a = run_pretrain(&cfg).unwrap();
        let b = run_pretrain(&cfg).unwrap();
        assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.metrics.task_reward_access.learning, 0);
        assert!(a.metrics.task_reward_access.logging > 0);
        let steps: Vec<u64> = a.metrics.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 200, 400, 600]);
        assert!(a.metrics.to_csv().starts_with(&format!("# config_hash={} alpha=0.9 ", cfg.hash())));
    }

    #[test]
    fn zero_budget_returns_fresh_initialisation() {
        let cfg = RunConfig {
            steps: 0,
            ..tiny(RunMode::Pretrain)
        };
        let out = run_pretrain(&cfg).unwrap();
        let fresh = Checkpoint::fresh::<f32>(&cfg).unwrap();
        assert_eq!(out.checkpoint.tensors, fresh.tensors);
        assert_eq!(out.metrics.rows.len(), 1);
    }

    #[test]
    fn linear_probe_finetune_keeps_critic_trunks() {
        let pre = run_pretrain(&tiny(RunMode::Pretrain)).unwrap();
        let cfg = tiny(RunMode::Finetune);
        let a = run_finetune(&pre.checkpoint, &cfg).unwrap();
        let b = run_finetune(&pre.checkpoint, &cfg).unwrap();
        assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());

        let before = pre.checkpoint.restore_agent::<f32>(&cfg).unwrap();
        let after = a.checkpoint.restore_agent::<f32>(&cfg).unwrap();
        for k in 0..2 {
            let (l0, l1) = (before.critics.q[k].layers(), after.critics.q[k].layers());
            let n = l0.len();
            assert_eq!(l0[..n - 1], l1[..n - 1], "critic {k} trunk moved");
            assert_ne!(l0[n - 1], l1[n - 1]);
        }
        assert_ne!(before.policy, after.policy);

        let t = MetricsTable::parse(&a.metrics.to_csv()).unwrap();
        assert_eq!(t.columns, FINETUNE_COLUMNS);
        assert_eq!(a.prompt, "Pick up the cup.");
        assert!(a.metrics.task_reward_access.learning > 0);
    }

    #[test]
    fn scratch_trains_everything() {
        let cfg = tiny(RunMode::Finetune);
        let fresh = Checkpoint::fresh::<f32>(&cfg).unwrap();
        let out = run_scratch(&cfg).unwrap();
        let before = fresh.restore_agent::<f32>(&cfg).unwrap();
        let after = out.checkpoint.restore_agent::<f32>(&cfg).unwrap();
        assert_ne!(before.critics.q[0].layers()[0], after.critics.q[0].layers()[0]);
    }

    #[test]
    fn mode_mismatch_is_a_config_error() {
        assert!(run_pretrain(&tiny(RunMode::Finetune)).is_err());
    }
}
