use obsprune::report::TrainRecord;
use obsprune::schedule::{run_dynamic_schedule, TrainData};
use obsprune::toymodels::ToyTask;

use super::Output;
use crate::args::TrainArgs;
use crate::config::Resolver;
use crate::error::Result;
use crate::experiment::Experiment;
use crate::report::Report;

pub const FINAL_COLUMNS: &str = "record,rank,alpha,eval_loss,prune_events";

pub(super) fn run(args: &TrainArgs, mut r: Resolver) -> Result<Output> {
    let exp = Experiment::resolve(&args.experiment, &mut r, &Experiment::train_defaults())?;
    let config = r.finish()?;
    exp.schedule.validate(exp.init_rank)?;
    let task = ToyTask::generate(&exp.task)?;
    let student = exp.student(&task, exp.init_rank)?;
    let outcome = run_dynamic_schedule(student, TrainData { x: &task.x_train, y: &task.y_train }, &exp.schedule)?;

    let mut report = Report::new("train", Some(exp.seed()), config);
    report.columns("train", TrainRecord::COLUMNS);
    report.columns("final", FINAL_COLUMNS);
    for rec in &outcome.records {
        report.push(rec.to_record());
    }
    let events: Vec<usize> = outcome.records.iter().filter(|r| r.event.is_some()).map(|r| r.step).collect();
    let eval_loss = outcome.model.loss(&task.x_eval, &task.y_eval)?;
    let adapter = &outcome.model.adapter;
    report.push(format!("final,{},{:?},{eval_loss:?},{}", adapter.rank(), adapter.alpha(), events.len()));
    let summary = vec![
        format!("prune events at steps {events:?}"),
        format!("final rank {}, eval loss {eval_loss:.6}", adapter.rank()),
    ];
    Ok(Output::ok(report, summary))
}
