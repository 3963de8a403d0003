//! Toy-task experiments: one seeded teacher task, a LoRA student, and the
//! strategy comparison behind `compare`.

use obsprune::baselines::{
    activation_obs_lora, importance_scores, oneshot_lora_prune, pair_magnitude_scores, prune_rank_by_scores, svd_lora,
    wanda_scores, ColumnAggregation,
};
use obsprune::hessian::Damping;
use obsprune::obs_full::SearchStrategy;
use obsprune::obs_lora::{AlphaPolicy, LoraAdapter};
use obsprune::schedule::{run_dynamic_schedule, run_fixed_rank, HessianSource, OptimizerKind, ScheduleConfig, TrainData};
use obsprune::toymodels::{LoraModel, ToyTask, ToyTaskConfig};
use obsprune::{ExecMode, Matrix, PruneError};

use crate::args::{AlphaPolicyArg, ExperimentArgs, HessianSourceArg, OptimizerArg, StrategyArg};
use crate::config::Resolver;
use crate::error::{CliError, Result};

/// Relative damping for the activation-OBS baseline.
pub const ACTIVATION_DAMPING: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub task: ToyTaskConfig,
    pub schedule: ScheduleConfig,
    pub init_rank: usize,
}

impl Experiment {
    /// `train` defaults: 16 → 4, two indices every ten steps.
    pub fn train_defaults() -> Self {
        Self { task: ToyTaskConfig::default(), schedule: ScheduleConfig::default(), init_rank: 16 }
    }

    /// `compare` defaults: 16 → 4, two indices every five steps.
    pub fn compare_defaults() -> Self {
        let mut e = Self::train_defaults();
        e.schedule.k1 = 5;
        e
    }

    pub fn seed(&self) -> u64 {
        self.schedule.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut e = self.clone();
        e.schedule.seed = seed;
        e.task.seed = seed;
        e
    }

    /// Fills every field from flags, then the config file, then `defaults`.
    pub fn resolve(args: &ExperimentArgs, r: &mut Resolver, defaults: &Experiment) -> Result<Self> {
        let d = &defaults.schedule;
        let t = &defaults.task;
        let seed = r.value("seed", args.seed, d.seed)?;
        let init_rank = r.value("init_rank", args.init_rank, defaults.init_rank)?;
        let target_rank = r.value("target_rank", args.target_rank, d.target_rank)?;
        let k1 = r.value("k1", args.k1, d.k1)?;
        let k2 = r.value("k2", args.k2, d.k2)?;
        let policy_arg = r.value("alpha_policy", args.alpha_policy, policy_arg(d.alpha_policy))?;
        let alpha_policy = match policy_arg {
            AlphaPolicyArg::Fixed => {
                let fallback = match d.alpha_policy {
                    AlphaPolicy::Fixed(a) => a,
                    _ => init_rank as f64,
                };
                AlphaPolicy::Fixed(r.value("alpha", args.alpha, fallback)?)
            }
            other => other.with(0.0),
        };
        let total_steps = r.value("steps", args.steps, d.total_steps)?;
        let learning_rate = r.value("lr", args.lr, d.learning_rate)?;
        let warmup_ratio = r.value("warmup_ratio", args.warmup_ratio, d.warmup_ratio)?;
        let batch_size = r.value("batch_size", args.batch_size, d.batch_size)?;
        let window = r.value("window", args.window, d.window)?;
        let default_lambda = match d.damping {
            Damping::Absolute(l) | Damping::Relative(l) => l,
        };
        let lambda = r.value("lambda", args.lambda, default_lambda)?;
        let optimizer = r.value("optimizer", args.optimizer, optimizer_arg(d.optimizer))?;
        let hessian_source = r.value("hessian_source", args.hessian_source, source_arg(d.hessian_source))?;
        let strategy = r.value("strategy", args.strategy, StrategyArg::Auto)?;
        let task = ToyTaskConfig {
            in_dim: r.value("in_dim", args.in_dim, t.in_dim)?,
            hidden_dim: r.value("hidden_dim", args.hidden_dim, t.hidden_dim)?,
            out_dim: r.value("out_dim", args.out_dim, t.out_dim)?,
            teacher_rank: r.value("teacher_rank", args.teacher_rank, t.teacher_rank)?,
            teacher_scale: t.teacher_scale,
            train_samples: r.value("train_samples", args.train_samples, t.train_samples)?,
            eval_samples: r.value("eval_samples", args.eval_samples, t.eval_samples)?,
            noise: r.value("noise", args.noise, t.noise)?,
            seed,
        };
        let schedule = ScheduleConfig {
            k1,
            k2,
            target_rank,
            alpha_policy,
            total_steps,
            learning_rate,
            optimizer: optimizer.into(),
            warmup_ratio,
            batch_size,
            window,
            damping: Damping::Absolute(lambda),
            hessian_source: hessian_source.into(),
            strategy: strategy.resolve(),
            seed,
        };
        if init_rank == 0 {
            return Err(CliError::Config("init_rank must be at least 1".into()));
        }
        Ok(Self { task, schedule, init_rank })
    }

    /// The seeded task and a fresh student of rank `rank` with α from the policy.
    pub fn student(&self, task: &ToyTask, rank: usize) -> Result<LoraModel> {
        Ok(task.student(rank, self.schedule.alpha_policy.alpha_for(rank), student_seed(self.seed()))?)
    }
}

/// Seed of the student's adapter initialization for a given task seed.
pub fn student_seed(seed: u64) -> u64 {
    seed.wrapping_add(1)
}

fn policy_arg(p: AlphaPolicy) -> AlphaPolicyArg {
    match p {
        AlphaPolicy::Fixed(_) => AlphaPolicyArg::Fixed,
        AlphaPolicy::ProportionalHalf => AlphaPolicyArg::Half,
        AlphaPolicy::Proportional => AlphaPolicyArg::Proportional,
        AlphaPolicy::ProportionalDouble => AlphaPolicyArg::Double,
    }
}

fn optimizer_arg(o: OptimizerKind) -> OptimizerArg {
    match o {
        OptimizerKind::AdaptiveMoments => OptimizerArg::Adam,
        OptimizerKind::PlainSgd => OptimizerArg::Sgd,
    }
}

fn source_arg(s: HessianSource) -> HessianSourceArg {
    match s {
        HessianSource::WindowBatches => HessianSourceArg::WindowBatches,
        HessianSource::WindowMean => HessianSourceArg::WindowMean,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Gradient OBS pruning during training.
    Dynamic,
    /// LoRA trained at the target rank from the start.
    FixedRank,
    /// Gradient OBS pruning once, after training at the initial rank.
    OneShot,
    ActivationObs,
    Importance,
    Magnitude,
    Wanda,
    Svd,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Dynamic,
        Strategy::FixedRank,
        Strategy::OneShot,
        Strategy::ActivationObs,
        Strategy::Importance,
        Strategy::Magnitude,
        Strategy::Wanda,
        Strategy::Svd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Dynamic => "dynamic",
            Strategy::FixedRank => "fixed_rank",
            Strategy::OneShot => "one_shot",
            Strategy::ActivationObs => "activation_obs",
            Strategy::Importance => "importance",
            Strategy::Magnitude => "magnitude",
            Strategy::Wanda => "wanda",
            Strategy::Svd => "svd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub strategy: Strategy,
    pub seed: u64,
    /// Loss on the held-out split.
    pub final_loss: f64,
    pub final_rank: usize,
}

impl SeedResult {
    pub const COLUMNS: &'static str = "record,strategy,seed,final_loss,final_rank";

    pub fn to_record(&self) -> String {
        format!("seed_result,{},{},{:?},{}", self.strategy.name(), self.seed, self.final_loss, self.final_rank)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub final_rank: usize,
}

impl StrategySummary {
    pub const COLUMNS: &'static str = "record,strategy,final_loss_median,final_loss_min,final_loss_max,final_rank";

    pub fn to_record(&self) -> String {
        format!(
            "summary,{},{:?},{:?},{:?},{}",
            self.strategy.name(),
            self.median,
            self.min,
            self.max,
            self.final_rank
        )
    }
}

fn no_window() -> CliError {
    CliError::Prune(PruneError::Precondition { op: "compare", detail: "training ran no steps".into() })
}

/// Every strategy on one seed, in [`Strategy::ALL`] order.
pub fn run_seed(exp: &Experiment, seed: u64) -> Result<Vec<SeedResult>> {
    let exp = exp.with_seed(seed);
    let cfg = &exp.schedule;
    let (init, target) = (exp.init_rank, cfg.target_rank);
    cfg.validate(init)?;
    let task = ToyTask::generate(&exp.task)?;
    let data = TrainData { x: &task.x_train, y: &task.y_train };
    let policy = cfg.alpha_policy;

    let dynamic = run_dynamic_schedule(exp.student(&task, init)?, data, cfg)?.model;
    let fixed = run_fixed_rank(exp.student(&task, target)?, data, cfg)?.model;
    let full = run_fixed_rank(exp.student(&task, init)?, data, cfg)?;
    let base = &full.model;
    let (grads, hessians) = full.final_window.as_ref().ok_or_else(no_window)?;
    let k = init - target;
    let strategy = cfg.strategy.unwrap_or_else(|| SearchStrategy::default_for(init));
    let x_cols = task.x_train.transpose();
    let (a, b, alpha) = base.adapter.clone().into_parts();

    let mut adapters: Vec<(Strategy, LoraAdapter)> = Vec::new();
    adapters.push((Strategy::OneShot, oneshot_lora_prune(&base.adapter, grads, hessians, k, strategy, policy)?.0));
    adapters.push((
        Strategy::ActivationObs,
        activation_obs_lora(&base.adapter, &x_cols, k, Damping::Relative(ACTIVATION_DAMPING), policy)?.0,
    ));
    let loss_without = |b_zeroed: &Matrix| {
        LoraAdapter::new(a.clone(), b_zeroed.clone(), alpha)
            .and_then(|ad| base.with_adapter(ad))
            .and_then(|m| m.loss(&task.x_train, &task.y_train))
            .unwrap_or(f64::NAN)
    };
    let importance = importance_scores(ExecMode::Sequential, loss_without, &b)?;
    adapters.push((Strategy::Importance, prune_rank_by_scores(&base.adapter, &importance, k, policy)?.0));
    let magnitude = pair_magnitude_scores(&base.adapter);
    adapters.push((Strategy::Magnitude, prune_rank_by_scores(&base.adapter, &magnitude, k, policy)?.0));
    let wanda = ColumnAggregation::default().aggregate(wanda_scores(&b, &a.matmul(&x_cols))?.scores());
    adapters.push((Strategy::Wanda, prune_rank_by_scores(&base.adapter, &wanda, k, policy)?.0));
    adapters.push((Strategy::Svd, svd_lora(&base.adapter, target, policy)?));

    let eval = |strategy: Strategy, model: &LoraModel| -> Result<SeedResult> {
        Ok(SeedResult {
            strategy,
            seed,
            final_loss: model.loss(&task.x_eval, &task.y_eval)?,
            final_rank: model.adapter.rank(),
        })
    };
    let mut results = vec![eval(Strategy::Dynamic, &dynamic)?, eval(Strategy::FixedRank, &fixed)?];
    for (s, adapter) in adapters {
        results.push(eval(s, &base.with_adapter(adapter)?)?);
    }
    Ok(results)
}

/// All strategies over `seeds`; seed-major, strategy-minor order.
pub fn run_compare(exp: &Experiment, seeds: &[u64], mode: ExecMode) -> Result<Vec<SeedResult>> {
    let per_seed = mode.map(seeds, |&s| run_seed(exp, s));
    let mut out = Vec::with_capacity(seeds.len() * Strategy::ALL.len());
    for r in per_seed {
        out.extend(r?);
    }
    Ok(out)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median, min and max final loss per strategy.
pub fn summarize(results: &[SeedResult]) -> Vec<StrategySummary> {
    Strategy::ALL
        .iter()
        .filter_map(|&s| {
            let rows: Vec<&SeedResult> = results.iter().filter(|r| r.strategy == s).collect();
            let mut losses: Vec<f64> = rows.iter().map(|r| r.final_loss).collect();
            if losses.is_empty() {
                return None;
            }
            losses.sort_by(f64::total_cmp);
            Some(StrategySummary {
                strategy: s,
                median: median(&losses),
                min: losses[0],
                max: losses[losses.len() - 1],
                final_rank: rows[0].final_rank,
            })
        })
        .collect()
}
