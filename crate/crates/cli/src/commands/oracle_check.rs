use obsprune::ExecMode;

use super::Output;
use crate::args::OracleCheckArgs;
use crate::config::Resolver;
use crate::error::{CliError, Result};
use crate::report::Report;
use crate::suite::{run_suite, GroupResult, SuiteConfig};

pub(super) fn run(args: &OracleCheckArgs, mut r: Resolver) -> Result<Output> {
    let d = SuiteConfig::default();
    let cfg = SuiteConfig {
        seed: r.value("seed", args.seed, d.seed)?,
        trials: r.value("trials", args.trials, d.trials)?,
        max_n: r.value("max_n", args.max_n, d.max_n)?,
        perturbations: r.value("perturbations", args.perturbations, d.perturbations)?,
        damping: r.value("lambda", args.lambda, d.damping)?,
    };
    let config = r.finish()?;
    if cfg.max_n < 3 || cfg.trials == 0 {
        return Err(CliError::Config("need max_n >= 3 and trials >= 1".into()));
    }
    let results = run_suite(&cfg, ExecMode::default())?;
    let mut report = Report::new("oracle-check", Some(cfg.seed), config);
    report.columns("full", GroupResult::FULL_COLUMNS);
    report.columns("lora", GroupResult::LORA_COLUMNS);
    report.columns("summary", "record,source,groups,failed_groups,instances");
    for g in &results {
        report.push(g.to_record());
    }
    let failed: Vec<&GroupResult> = results.iter().filter(|g| !g.passed()).collect();
    let instances: usize = results.iter().map(|g| g.trials).sum();
    report.push(format!("summary,source=oracle,{},{},{instances}", results.len(), failed.len()));
    let summary = vec![format!("{} groups, {instances} instances, {} failing groups", results.len(), failed.len())];
    let failure = (!failed.is_empty()).then(|| {
        CliError::Disagreement(format!("{} groups disagree with the oracle, first: {}", failed.len(), failed[0].to_record()))
    });
    Ok(Output { report, summary, failure })
}
