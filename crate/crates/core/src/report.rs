//! Pruning and training event logs.
//!
//! Records serialize to comma-separated lines with a fixed column order.
//! Mask indices inside a field are joined with `;` so that a record always
//! has the same number of fields.

use std::fmt::Write as _;

use crate::matcore::PruneMask;

/// One mask selection and update.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneReportEntry {
    pub mask: PruneMask,
    pub saliency: f64,
    pub quad_objective: f64,
}

impl PruneReportEntry {
    pub const COLUMNS: &'static str = "record,mask,saliency,quad_objective";

    pub fn to_record(&self) -> String {
        format!(
            "prune,{},{},{}",
            format_mask(&self.mask),
            fmt_f64(self.saliency),
            fmt_f64(self.quad_objective)
        )
    }
}

/// Payload of a prune event inside a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneEvent {
    pub mask: PruneMask,
    pub saliency: f64,
    pub quad_objective: f64,
    pub rank_before: usize,
    pub rank_after: usize,
    pub alpha_before: f64,
    pub alpha_after: f64,
    /// `max |(α'/r')·B'A' − (α/r)·BA − predicted|` across the compaction,
    /// where the prediction is `(α'/r' − α/r)·BA`.
    pub scaling_residual: f64,
}

/// One optimizer step of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    /// Mini-batch loss before this step's update.
    pub loss: f64,
    /// Rank after any prune event at this step.
    pub rank: usize,
    pub alpha: f64,
    pub learning_rate: f64,
    pub event: Option<PruneEvent>,
}

impl TrainRecord {
    pub const COLUMNS: &'static str =
        "record,step,loss,rank,alpha,learning_rate,event_mask,saliency,quad_objective,rank_before";

    pub fn to_record(&self) -> String {
        let mut line = format!(
            "train,{},{},{},{},{}",
            self.step,
            fmt_f64(self.loss),
            self.rank,
            fmt_f64(self.alpha),
            fmt_f64(self.learning_rate)
        );
        match &self.event {
            Some(e) => {
                let _ = write!(
                    line,
                    ",{},{},{},{}",
                    format_mask(&e.mask),
                    fmt_f64(e.saliency),
                    fmt_f64(e.quad_objective),
                    e.rank_before
                );
            }
            None => line.push_str(",,,,"),
        }
        line
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReportEvent {
    Prune(PruneReportEntry),
    Train(TrainRecord),
}

/// Append-only log of prune entries and training records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PruneReport {
    events: Vec<ReportEvent>,
}

impl PruneReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_prune(&mut self, entry: PruneReportEntry) {
        self.events.push(ReportEvent::Prune(entry));
    }

    pub fn push_train(&mut self, record: TrainRecord) {
        self.events.push(ReportEvent::Train(record));
    }

    pub fn events(&self) -> &[ReportEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Prune entries plus the prune events embedded in training records.
    pub fn prune_event_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| match e {
                ReportEvent::Prune(_) => true,
                ReportEvent::Train(t) => t.event.is_some(),
            })
            .count()
    }

    pub fn to_records(&self) -> Vec<String> {
        self.events
            .iter()
            .map(|e| match e {
                ReportEvent::Prune(p) => p.to_record(),
                ReportEvent::Train(t) => t.to_record(),
            })
            .collect()
    }
}

/// Mask indices joined by `;`.
pub fn format_mask(mask: &PruneMask) -> String {
    let parts: Vec<String> = mask.indices().iter().map(usize::to_string).collect();
    parts.join(";")
}

/// Shortest representation that round-trips.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_have_fixed_arity() {
        let mask = PruneMask::columns(vec![3, 1], 5).unwrap();
        let entry = PruneReportEntry {
            mask: mask.clone(),
            saliency: 0.25,
            quad_objective: -1.5,
        };
        assert_eq!(entry.to_record(), "prune,1;3,0.25,-1.5");
        assert_eq!(
            entry.to_record().split(',').count(),
            PruneReportEntry::COLUMNS.split(',').count()
        );

        let mut plain = TrainRecord {
            step: 4,
            loss: 0.5,
            rank: 8,
            alpha: 8.0,
            learning_rate: 1e-3,
            event: None,
        };
        let arity = TrainRecord::COLUMNS.split(',').count();
        assert_eq!(plain.to_record().split(',').count(), arity);
        plain.event = Some(PruneEvent {
            mask,
            saliency: 1.0,
            quad_objective: 2.0,
            rank_before: 10,
            rank_after: 8,
            alpha_before: 10.0,
            alpha_after: 8.0,
            scaling_residual: 0.0,
        });
        assert_eq!(plain.to_record().split(',').count(), arity);
        assert_eq!(plain.to_record(), "train,4,0.5,8,8.0,0.001,1;3,1.0,2.0,10");

        let mut report = PruneReport::new();
        report.push_prune(entry);
        report.push_train(plain);
        assert_eq!(report.prune_event_count(), 2);
        assert_eq!(report.to_records().len(), 2);
    }
}
