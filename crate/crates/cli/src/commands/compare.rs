use obsprune::ExecMode;

use super::Output;
use crate::args::CompareArgs;
use crate::config::Resolver;
use crate::error::Result;
use crate::experiment::{run_compare, summarize, Experiment, SeedResult, StrategySummary};
use crate::report::Report;

/// The comparison report for `seeds` consecutive seeds starting at the
/// experiment's seed.
pub fn compare_report(exp: &Experiment, seeds: usize, config: Vec<(String, String)>) -> Result<(Report, Vec<StrategySummary>)> {
    let list: Vec<u64> = (0..seeds as u64).map(|i| exp.seed().wrapping_add(i)).collect();
    let results = run_compare(exp, &list, ExecMode::default())?;
    let summary = summarize(&results);
    let mut report = Report::new("compare", Some(exp.seed()), config);
    report.columns("seed_result", SeedResult::COLUMNS);
    report.columns("summary", StrategySummary::COLUMNS);
    for r in &results {
        report.push(r.to_record());
    }
    for s in &summary {
        report.push(s.to_record());
    }
    Ok((report, summary))
}

pub(super) fn run(args: &CompareArgs, mut r: Resolver) -> Result<Output> {
    let seeds = r.value("seeds", args.seeds, 5usize)?;
    let exp = Experiment::resolve(&args.experiment, &mut r, &Experiment::compare_defaults())?;
    let config = r.finish()?;
    let (report, summary) = compare_report(&exp, seeds, config)?;
    let mut lines = vec![format!("{:<16}{:>14}{:>14}{:>14}{:>6}", "strategy", "median", "min", "max", "rank")];
    for s in &summary {
        lines.push(format!(
            "{:<16}{:>14.6e}{:>14.6e}{:>14.6e}{:>6}",
            s.strategy.name(),
            s.median,
            s.min,
            s.max,
            s.final_rank
        ));
    }
    Ok(Output::ok(report, lines))
}
