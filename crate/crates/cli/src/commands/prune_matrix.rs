use std::path::{Path, PathBuf};

use obsprune::hessian::hessian_from_gradient_cols;
use obsprune::obs_full::{prune_full_matrix, SearchStrategy};
use obsprune::oracle::{enumerate_masks, solve_constrained_quadratic};
use obsprune::report::{fmt_f64, format_mask, PruneReportEntry};

use super::{read_matrix, Output};
use crate::args::{DampingArg, PruneMatrixArgs, StrategyArg};
use crate::config::Resolver;
use crate::error::{CliError, Result};
use crate::report::Report;

pub const ORACLE_COLUMNS: &str = "record,source,mask,quad_objective,agreement";

pub(super) fn run(args: &PruneMatrixArgs, mut r: Resolver, out_dir: &Path) -> Result<Output> {
    let w_path: PathBuf = r.required("w", args.w.clone())?;
    let g_path: PathBuf = r.required("g", args.g.clone())?;
    let k: usize = r.required("k", args.k)?;
    let lambda = r.value("lambda", args.lambda, 1e-2)?;
    let damping = r.value("damping", args.damping, DampingArg::Relative)?;
    let strategy = r.value("strategy", args.strategy, StrategyArg::Auto)?;
    let oracle = r.value("oracle", args.oracle.then_some(true), false)?;
    let output = r.quiet::<PathBuf>("output", args.output.clone())?.unwrap_or_else(|| out_dir.join("pruned.txt"));
    let config = r.finish()?;

    let w = read_matrix(&w_path)?;
    let g = read_matrix(&g_path)?;
    let h = hessian_from_gradient_cols(&g, damping.with(lambda))?;
    let strategy = strategy.resolve().unwrap_or_else(|| SearchStrategy::default_for(w.cols()));
    let (pruned, entry) = prune_full_matrix(&w, &g, &h, k, strategy)?;
    obsprune::matcore::write_matrix_file(&output, &pruned).map_err(|e| match e {
        obsprune::PruneError::Io(source) => CliError::Io { path: output.clone(), source },
        other => other.into(),
    })?;

    let mut report = Report::new("prune-matrix", None, config);
    report.columns("prune", PruneReportEntry::COLUMNS);
    report.push(entry.to_record());
    let mut summary = vec![format!("pruned columns {} -> {}", format_mask(&entry.mask), output.display())];
    let mut failure = None;
    if oracle {
        let best = enumerate_masks(&w, &g, h.matrix(), k)?;
        let (_, obj) = solve_constrained_quadratic(&w, &g, h.matrix(), &entry.mask)?;
        let agree = best.best_mask == entry.mask
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
                "selected mask {} but the oracle optimum is {}",
                format_mask(&entry.mask),
                format_mask(&best.best_mask)
            )));
        }
    }
    Ok(Output { report, summary, failure })
}
