use obsprune::synth::{random_matrix, seeded_rng};
use obsprune::toymodels::{proposition_experiment, AttentionModule, DirectionKind, PropositionTrial};
use obsprune::{ExecMode, Matrix};

use super::Output;
use crate::args::AttentionBoundArgs;
use crate::config::Resolver;
use crate::error::{CliError, Result};
use crate::report::Report;

pub const TRIAL_COLUMNS: &str = "record,trial,direction,activation_error,activation_bound,activation_holds,\
sequential_loss_change,gradient_bound,gradient_holds,joint_loss_change,skipped_modules";
pub const SUMMARY_COLUMNS: &str = "record,trials,activation_pass,gradient_pass";

#[derive(Debug, Clone, PartialEq)]
pub struct BoundConfig {
    pub seed: u64,
    pub trials: usize,
    pub d: usize,
    pub d_model: usize,
    pub tokens: usize,
    pub epsilon: f64,
    pub weight_std: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self { seed: 0, trials: 100, d: 4, d_model: 4, tokens: 8, epsilon: 1e-2, weight_std: 0.5 }
    }
}

/// Random attention module, inputs and targets from `cfg.seed`, then the
/// trials under a squared-error loss on the output.
pub fn bound_trials(cfg: &BoundConfig) -> Result<Vec<PropositionTrial>> {
    let mut rng = seeded_rng(cfg.seed);
    let attn = AttentionModule::random(&mut rng, cfg.d_model, cfg.d, cfg.weight_std);
    let x = random_matrix(&mut rng, cfg.tokens, cfg.d_model, 1.0);
    let y = random_matrix(&mut rng, cfg.tokens, cfg.d, 1.0);
    let loss = move |z: &Matrix| 0.5 * z.sub(&y).frobenius_norm().powi(2);
    Ok(proposition_experiment(ExecMode::default(), &attn, &x, &loss, cfg.epsilon, cfg.trials, cfg.seed)?)
}

fn trial_record(t: &PropositionTrial) -> String {
    let direction = match t.direction {
        DirectionKind::ColumnZeroing => "column_zeroing",
        DirectionKind::Random => "random",
    };
    format!(
        "trial,{},{direction},{:?},{:?},{},{:?},{:?},{},{:?},{}",
        t.trial,
        t.activation_error,
        t.activation_bound,
        t.activation_holds(),
        t.sequential_loss_change,
        t.gradient_bound,
        t.gradient_holds(),
        t.joint_loss_change,
        t.skipped_modules
    )
}

pub(super) fn run(args: &AttentionBoundArgs, mut r: Resolver) -> Result<Output> {
    let d = BoundConfig::default();
    let cfg = BoundConfig {
        seed: r.value("seed", args.seed, d.seed)?,
        trials: r.value("trials", args.trials, d.trials)?,
        d: r.value("d", args.d, d.d)?,
        d_model: r.value("d_model", args.d_model, d.d_model)?,
        tokens: r.value("tokens", args.tokens, d.tokens)?,
        epsilon: r.value("epsilon", args.epsilon, d.epsilon)?,
        weight_std: r.value("weight_std", args.weight_std, d.weight_std)?,
    };
    let config = r.finish()?;
    if cfg.d == 0 || cfg.d_model == 0 || cfg.tokens == 0 {
        return Err(CliError::Config("d, d_model and tokens must be positive".into()));
    }
    let trials = bound_trials(&cfg)?;
    let mut report = Report::new("attention-bound", Some(cfg.seed), config);
    report.columns("trial", TRIAL_COLUMNS);
    report.columns("summary", SUMMARY_COLUMNS);
    for t in &trials {
        report.push(trial_record(t));
    }
    let act = trials.iter().filter(|t| t.activation_holds()).count();
    let grad = trials.iter().filter(|t| t.gradient_holds()).count();
    report.push(format!("summary,{},{act},{grad}", trials.len()));
    let summary = vec![
        format!("activation bound held in {act}/{} trials", trials.len()),
        format!("gradient bound held in {grad}/{} trials", trials.len()),
    ];
    let failure = (act < trials.len() || grad < trials.len())
        .then(|| CliError::Disagreement(format!("bounds violated: activation {act}/{n}, gradient {grad}/{n}", n = trials.len())));
    Ok(Output { report, summary, failure })
}
