//! Flag definitions. Every experiment flag is optional so that the config
//! file and defaults can fill it in; see [`crate::config`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use obsprune::hessian::Damping;
use obsprune::obs_full::SearchStrategy;
use obsprune::obs_lora::AlphaPolicy;
use obsprune::schedule::{HessianSource, OptimizerKind};
use serde::Deserialize;

use crate::config::ConfigValue;

#[derive(Debug, Parser)]
#[command(name = "obsprune", version, about = "Second-order structured pruning experiments")]
pub struct Cli {
    /// Flat TOML file of defaults; keys are flag names in snake_case.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory for reports and output matrices.
    #[arg(long, global = true, env = "OBSPRUNE_OUT_DIR")]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prune k columns of a weight matrix with the optimal compensating update.
    PruneMatrix(PruneMatrixArgs),
    /// Remove k rank indices from a LoRA adapter in one shot.
    PruneLora(PruneLoraArgs),
    /// Train a LoRA student on the toy task while pruning its rank.
    Train(TrainArgs),
    /// Compare pruning strategies on the toy task over several seeds.
    Compare(CompareArgs),
    /// Check the attention perturbation bounds on random trials.
    AttentionBound(AttentionBoundArgs),
    /// Run the brute-force oracle suite against the closed-form pruners.
    OracleCheck(OracleCheckArgs),
}

macro_rules! value_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident),* $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
        #[serde(rename_all = "kebab-case")]
        pub enum $name { $($variant),* }

        impl ConfigValue for $name {
            fn render(&self) -> String {
                self.to_possible_value().expect("no skipped variants").get_name().to_string()
            }
        }
    };
}

value_enum!(
    /// Mask search; `auto` is exhaustive up to 12 candidates.
    StrategyArg { Auto, Exhaustive, Greedy }
);
value_enum!(DampingArg { Relative, Absolute });
value_enum!(AlphaPolicyArg { Fixed, Half, Proportional, Double });
value_enum!(OptimizerArg { Adam, Sgd });
value_enum!(HessianSourceArg { WindowBatches, WindowMean });

impl StrategyArg {
    pub fn resolve(self) -> Option<SearchStrategy> {
        match self {
            StrategyArg::Auto => None,
            StrategyArg::Exhaustive => Some(SearchStrategy::Exhaustive),
            StrategyArg::Greedy => Some(SearchStrategy::Greedy),
        }
    }
}

impl DampingArg {
    pub fn with(self, lambda: f64) -> Damping {
        match self {
            DampingArg::Relative => Damping::Relative(lambda),
            DampingArg::Absolute => Damping::Absolute(lambda),
        }
    }
}

impl AlphaPolicyArg {
    pub fn with(self, alpha: f64) -> AlphaPolicy {
        match self {
            AlphaPolicyArg::Fixed => AlphaPolicy::Fixed(alpha),
            AlphaPolicyArg::Half => AlphaPolicy::ProportionalHalf,
            AlphaPolicyArg::Proportional => AlphaPolicy::Proportional,
            AlphaPolicyArg::Double => AlphaPolicy::ProportionalDouble,
        }
    }
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adam => OptimizerKind::AdaptiveMoments,
            OptimizerArg::Sgd => OptimizerKind::PlainSgd,
        }
    }
}

impl From<HessianSourceArg> for HessianSource {
    fn from(h: HessianSourceArg) -> Self {
        match h {
            HessianSourceArg::WindowBatches => HessianSource::WindowBatches,
            HessianSourceArg::WindowMean => HessianSource::WindowMean,
        }
    }
}

#[derive(Debug, Args)]
pub struct PruneMatrixArgs {
    /// Weight matrix file (text or OBSM binary).
    #[arg(long)]
    pub w: Option<PathBuf>,
    /// Gradient matrix file, same shape as the weights.
    #[arg(long)]
    pub g: Option<PathBuf>,
    /// Columns to prune.
    #[arg(long)]
    pub k: Option<usize>,
    /// Damping added to the curvature estimate [default: 0.01].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// How `--lambda` is applied [default: relative].
    #[arg(long, value_enum)]
    pub damping: Option<DampingArg>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Cross-check the selected mask against exhaustive enumeration.
    #[arg(long)]
    pub oracle: bool,
    /// Pruned matrix path [default: <out-dir>/pruned.txt].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneLoraArgs {
    /// Adapter file: a `rank alpha` line, then A and B in matrix text format.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    #[arg(long)]
    pub grad_a: Option<PathBuf>,
    #[arg(long)]
    pub grad_b: Option<PathBuf>,
    /// Rank indices to remove.
    #[arg(long)]
    pub k: Option<usize>,
    /// [default: 0.01]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// [default: relative]
    #[arg(long, value_enum)]
    pub damping: Option<DampingArg>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// α after pruning [default: fixed].
    #[arg(long, value_enum)]
    pub alpha_policy: Option<AlphaPolicyArg>,
    /// α for the fixed policy [default: the adapter's α].
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub oracle: bool,
    /// Pruned adapter path [default: <out-dir>/adapter.txt].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Toy task and schedule flags shared by `train` and `compare`.
#[derive(Debug, Args, Default)]
pub struct ExperimentArgs {
    #[arg(long, env = "OBSPRUNE_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_rank: Option<usize>,
    #[arg(long)]
    pub target_rank: Option<usize>,
    /// Steps between prune events.
    #[arg(long)]
    pub k1: Option<usize>,
    /// Rank indices removed per event.
    #[arg(long)]
    pub k2: Option<usize>,
    #[arg(long, value_enum)]
    pub alpha_policy: Option<AlphaPolicyArg>,
    /// α for the fixed policy.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_ratio: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Gradient batches averaged for the curvature estimates.
    #[arg(long)]
    pub window: Option<usize>,
    /// Absolute damping at prune events.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long, value_enum)]
    pub hessian_source: Option<HessianSourceArg>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long)]
    pub in_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub out_dim: Option<usize>,
    #[arg(long)]
    pub teacher_rank: Option<usize>,
    #[arg(long)]
    pub train_samples: Option<usize>,
    #[arg(long)]
    pub eval_samples: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Number of seeds, counting up from `--seed`.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct AttentionBoundArgs {
    #[arg(long, env = "OBSPRUNE_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Head dimension.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub tokens: Option<usize>,
    /// Perturbation budget per module.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Standard deviation of the random attention weights.
    #[arg(long)]
    pub weight_std: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    #[arg(long, env = "OBSPRUNE_SEED")]
    pub seed: Option<u64>,
    /// Random instances per shape.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Largest column count; shapes run over n = 3..=max_n.
    #[arg(long)]
    pub max_n: Option<usize>,
    /// Random feasible perturbations tried per instance.
    #[arg(long)]
    pub perturbations: Option<usize>,
    /// Relative damping of the curvature estimates.
    #[arg(long)]
    pub lambda: Option<f64>,
}
