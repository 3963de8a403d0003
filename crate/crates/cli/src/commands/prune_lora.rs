use std::fs;
use std::path::{Path, PathBuf};

use obsprune::baselines::oneshot_lora_prune;
use obsprune::obs_full::SearchStrategy;
use obsprune::obs_lora::{read_adapter_text, write_adapter_text, LoraGrads, LoraHessians};
use obsprune::oracle::{enumerate_masks_lora, lora_pair_objective};
use obsprune::report::{fmt_f64, format_mask, PruneEvent};

use super::prune_matrix::ORACLE_COLUMNS;
use super::{read_matrix, Output};
use crate::args::{AlphaPolicyArg, DampingArg, PruneLoraArgs, StrategyArg};
use crate::config::Resolver;
use crate::error::{CliError, Result};
use crate::report::Report;

pub const COLUMNS: &str = "record,mask,saliency,quad_objective,rank_before,rank_after,alpha_before,alpha_after";

pub fn event_record(e: &PruneEvent) -> String {
    format!(
        "lora_prune,{},{},{},{},{},{},{}",
        format_mask(&e.mask),
        fmt_f64(e.saliency),
        fmt_f64(e.quad_objective),
        e.rank_before,
        e.rank_after,
        fmt_f64(e.alpha_before),
        fmt_f64(e.alpha_after)
    )
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub(super) fn run(args: &PruneLoraArgs, mut r: Resolver, out_dir: &Path) -> Result<Output> {
    let adapter_path: PathBuf = r.required("adapter", args.adapter.clone())?;
    let grad_a_path: PathBuf = r.required("grad_a", args.grad_a.clone())?;
    let grad_b_path: PathBuf = r.required("grad_b", args.grad_b.clone())?;
    let k: usize = r.required("k", args.k)?;
    let lambda = r.value("lambda", args.lambda, 1e-2)?;
    let damping = r.value("damping", args.damping, DampingArg::Relative)?;
    let strategy = r.value("strategy", args.strategy, StrategyArg::Auto)?;
    let policy = r.value("alpha_policy", args.alpha_policy, AlphaPolicyArg::Fixed)?;
    let text = fs::read_to_string(&adapter_path).map_err(io_err(&adapter_path))?;
    let adapter = read_adapter_text(&text).map_err(|e| CliError::Config(format!("{}: {e}", adapter_path.display())))?;
    let alpha = if policy == AlphaPolicyArg::Fixed { r.value("alpha", args.alpha, adapter.alpha())? } else { 0.0 };
    let oracle = r.value("oracle", args.oracle.then_some(true), false)?;
    let output = r.quiet::<PathBuf>("output", args.output.clone())?.unwrap_or_else(|| out_dir.join("adapter.txt"));
    let config = r.finish()?;

    let grads = LoraGrads { grad_a: read_matrix(&grad_a_path)?, grad_b: read_matrix(&grad_b_path)? };
    let hessians = LoraHessians::from_grads(&grads, damping.with(lambda))?;
    let strategy = strategy.resolve().unwrap_or_else(|| SearchStrategy::default_for(adapter.rank()));
    let (pruned, event) = oneshot_lora_prune(&adapter, &grads, &hessians, k, strategy, policy.with(alpha))?;
    let mut buf = Vec::new();
    write_adapter_text(&mut buf, &pruned)?;
    fs::write(&output, buf).map_err(io_err(&output))?;

    let mut report = Report::new("prune-lora", None, config);
    report.columns("lora_prune", COLUMNS);
    report.push(event_record(&event));
    let mut summary = vec![format!(
        "removed rank indices {} ({} -> {}) -> {}",
        format_mask(&event.mask),
        event.rank_before,
        event.rank_after,
        output.display()
    )];
    let mut failure = None;
    if oracle {
        let (ha, hb) = (hessians.h_a.matrix(), hessians.h_b.matrix());
        let (a, b) = (adapter.a(), adapter.b());
        let best = enumerate_masks_lora(a, b, &grads.grad_a, &grads.grad_b, ha, hb, k)?;
        let (_, _, obj) = lora_pair_objective(a, b, &grads.grad_a, &grads.grad_b, ha, hb, &event.mask)?;
        let agree = best.best_mask == event.mask
            || (obj - best.best_objective).abs() <= 1e-12 * best.best_objective.abs().max(1.0);
        report.columns("oracle", ORACLE_COLUMNS);
        report.push(format!(
            "oracle,source=oracle,{},{},agreement={agree}",
            format_mask(&best.best_mask),
            fmt_f64(best.best_objective)
        ));
        summary.push(format!("oracle agreement: {agree}"));
        if !agree {
            failure = Some(CliError::Disagreement(format!(
                "selected rank mask {} but the oracle optimum is {}",
                format_mask(&event.mask),
                format_mask(&best.best_mask)
            )));
        }
    }
    Ok(Output { report, summary, failure })
}
