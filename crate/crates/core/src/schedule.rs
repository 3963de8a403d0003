//! Dynamic rank pruning during LoRA training.
//!
//! Every `k1` optimizer steps a prune event removes `k2` rank indices (fewer
//! on the last event) until the adapter reaches the target rank. Within a
//! step the order is: gradients on the mini-batch, window update, and on an
//! event: Hessians from the window mean, mask selection, closed-form update,
//! compaction with α rescaling, optimizer-state slicing, and fresh gradients
//! on the same mini-batch. The optimizer step comes last.

use std::f64::consts::PI;

use rand::seq::index::sample;

use crate::baselines::finish_compaction;
use crate::error::{PruneError, Result};
use crate::hessian::{Damping, GradientAccumulator};
use crate::matcore::{Matrix, PruneMask};
use crate::obs_full::SearchStrategy;
use crate::obs_lora::{apply_lora_update, lora_obs_update, select_mask_lora, AlphaPolicy, LoraGrads, LoraHessians};
use crate::report::{PruneEvent, TrainRecord};
use crate::synth::seeded_rng;
use crate::toymodels::{LoraModel, LoraModelGrads};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Absolute damping for prune events during training. Gradient outer
/// products underestimate the curvature of a mean loss, and smaller values
/// make the Newton shift overshoot.
pub const SCHEDULE_DAMPING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    PlainSgd,
    #[default]
    AdaptiveMoments,
}

/// Which gradients feed the Hessian estimates at a prune event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianSource {
    /// Outer product of the window-mean gradient.
    WindowMean,
    /// Mean of the per-batch outer products over the window.
    #[default]
    WindowBatches,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    /// Steps between prune events.
    pub k1: usize,
    /// Rank indices removed per event.
    pub k2: usize,
    pub target_rank: usize,
    pub alpha_policy: AlphaPolicy,
    pub total_steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    /// Gradient batches averaged for the Hessian estimates.
    pub window: usize,
    pub damping: Damping,
    pub hessian_source: HessianSource,
    /// `None` picks exhaustive or greedy by rank.
    pub strategy: Option<SearchStrategy>,
    pub seed: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            k1: 10,
            k2: 2,
            target_rank: 4,
            alpha_policy: AlphaPolicy::Proportional,
            total_steps: 200,
            learning_rate: 3e-3,
            optimizer: OptimizerKind::AdaptiveMoments,
            warmup_ratio: 0.03,
            batch_size: 32,
            window: 5,
            damping: Damping::Absolute(SCHEDULE_DAMPING),
            hessian_source: HessianSource::default(),
            strategy: None,
            seed: 0,
        }
    }
}

impl ScheduleConfig {
    /// Number of prune events needed from `init_rank`.
    pub fn event_count(&self, init_rank: usize) -> usize {
        init_rank.saturating_sub(self.target_rank).div_ceil(self.k2.max(1))
    }

    pub fn validate(&self, init_rank: usize) -> Result<()> {
        const OP: &str = "ScheduleConfig::validate";
        if self.k1 == 0 {
            return Err(PruneError::pre(OP, "k1 must be at least 1"));
        }
        if self.k2 == 0 || self.k2 >= init_rank {
            return Err(PruneError::pre(OP, format!("need 1 <= k2 < {init_rank}, got {}", self.k2)));
        }
        if self.target_rank == 0 || self.target_rank >= init_rank {
            return Err(PruneError::pre(
                OP,
                format!("need 1 <= target rank < {init_rank}, got {}", self.target_rank),
            ));
        }
        let needed = self.event_count(init_rank) * self.k1;
        if needed > self.total_steps {
            return Err(PruneError::pre(
                OP,
                format!("reaching rank {} takes {needed} steps but only {} are scheduled", self.target_rank, self.total_steps),
            ));
        }
        self.validate_training()
    }

    fn validate_training(&self) -> Result<()> {
        const OP: &str = "ScheduleConfig::validate";
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(PruneError::pre(OP, format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(PruneError::pre(OP, format!("warmup ratio must be in [0, 1), got {}", self.warmup_ratio)));
        }
        if self.batch_size == 0 || self.window == 0 || self.total_steps == 0 {
            return Err(PruneError::pre(OP, "batch size, window and total steps must be positive"));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.total_steps as f64).ceil() as usize
    }

    /// Cosine decay after linear warmup; `step` is 1-based.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let warmup = self.warmup_steps();
        if step <= warmup {
            return self.learning_rate * step as f64 / warmup as f64;
        }
        let span = (self.total_steps - warmup).max(1) as f64;
        let progress = ((step - warmup) as f64 / span).min(1.0);
        0.5 * self.learning_rate * (1.0 + (PI * progress).cos())
    }

    /// Whether step `step` (1-based) prunes when the adapter has `rank`.
    pub fn is_event(&self, step: usize, rank: usize) -> bool {
        step.is_multiple_of(self.k1) && rank > self.target_rank
    }
}

/// The α used from the next forward pass onward.
pub fn apply_alpha_policy(config: &ScheduleConfig, new_rank: usize) -> f64 {
    config.alpha_policy.alpha_for(new_rank)
}

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: Matrix,
    pub second: Matrix,
}

impl Moments {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { first: Matrix::zeros(rows, cols), second: Matrix::zeros(rows, cols) }
    }
}

/// One update of `p` in place; `t` is the 1-based step used for bias
/// correction.
pub fn optimizer_step(kind: OptimizerKind, moments: &mut Moments, t: u64, p: &mut Matrix, g: &Matrix, lr: f64) -> Result<()> {
    const OP: &str = "optimizer_step";
    if p.shape() != g.shape() || moments.first.shape() != p.shape() || moments.second.shape() != p.shape() {
        return Err(PruneError::dim(
            OP,
            format!("parameter {:?}, gradient {:?}, moments {:?}", p.shape(), g.shape(), moments.first.shape()),
        ));
    }
    if !g.is_finite() {
        return Err(PruneError::NonFinite { op: OP, detail: "gradient".into() });
    }
    match kind {
        OptimizerKind::PlainSgd => p.axpy(-lr, g),
        OptimizerKind::AdaptiveMoments => {
            let t = t.max(1) as i32;
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            let m = moments.first.data_mut();
            let v = moments.second.data_mut();
            for (i, (pi, gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                *pi -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
    Ok(())
}

/// Optimizer state for a [`LoraModel`]: moments of `A`, `B` and the head.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    pub a: Moments,
    pub b: Moments,
    pub head: Option<Moments>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, model: &LoraModel) -> Self {
        let (a, b) = (model.adapter.a(), model.adapter.b());
        Self {
            kind,
            step: 0,
            a: Moments::zeros(a.rows(), a.cols()),
            b: Moments::zeros(b.rows(), b.cols()),
            head: model.train_head.then(|| Moments::zeros(model.head.rows(), model.head.cols())),
        }
    }

    pub fn apply(&mut self, model: &mut LoraModel, grads: &LoraModelGrads, lr: f64) -> Result<()> {
        self.step += 1;
        let (a, b) = model.adapter.factors_mut();
        optimizer_step(self.kind, &mut self.a, self.step, a, &grads.adapter.grad_a, lr)?;
        optimizer_step(self.kind, &mut self.b, self.step, b, &grads.adapter.grad_b, lr)?;
        if let (Some(m), Some(g)) = (self.head.as_mut(), grads.head.as_ref()) {
            optimizer_step(self.kind, m, self.step, &mut model.head, g, lr)?;
        }
        Ok(())
    }
}

/// Drops the moments of pruned rank indices: rows of `A`, columns of `B`.
pub fn slice_optimizer_state(state: &OptimizerState, mask: &PruneMask) -> Result<OptimizerState> {
    const OP: &str = "slice_optimizer_state";
    let rank = state.a.first.rows();
    if state.b.first.cols() != rank || mask.host_dim() != rank {
        return Err(PruneError::dim(
            OP,
            format!("moments for rank {rank}/{} with a mask over {}", state.b.first.cols(), mask.host_dim()),
        ));
    }
    let kept = mask.kept();
    Ok(OptimizerState {
        kind: state.kind,
        step: state.step,
        a: Moments { first: state.a.first.select_rows(&kept), second: state.a.second.select_rows(&kept) },
        b: Moments { first: state.b.first.select_cols(&kept), second: state.b.second.select_cols(&kept) },
        head: state.head.clone(),
    })
}

/// Training inputs (samples × features) and targets.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub x: &'a Matrix,
    pub y: &'a Matrix,
}

/// Final model plus one record per optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOutcome {
    pub model: LoraModel,
    pub records: Vec<TrainRecord>,
    /// Window-mean gradients and Hessian estimates at the end of training.
    pub final_window: Option<(LoraGrads, LoraHessians)>,
}

struct Window {
    a: GradientAccumulator,
    b: GradientAccumulator,
}

impl Window {
    fn new(size: usize) -> Self {
        Self { a: GradientAccumulator::with_window(size), b: GradientAccumulator::with_window(size) }
    }

    fn push(&mut self, g: &LoraGrads) -> Result<()> {
        self.a.push(&g.grad_a)?;
        self.b.push(&g.grad_b)
    }

    fn mean(&self) -> Option<LoraGrads> {
        Some(LoraGrads { grad_a: self.a.mean()?, grad_b: self.b.mean()? })
    }

    fn hessians(&self, source: HessianSource, damping: Damping) -> Result<LoraHessians> {
        match source {
            HessianSource::WindowMean => {
                LoraHessians::from_grads(&self.mean().expect("window is not empty"), damping)
            }
            HessianSource::WindowBatches => {
                let stacked = LoraGrads {
                    grad_a: self.a.stacked_cols().expect("window is not empty"),
                    grad_b: self.b.stacked_rows().expect("window is not empty"),
                };
                LoraHessians::from_grads(&stacked, damping)
            }
        }
    }

    fn reset(&mut self) {
        self.a.reset();
        self.b.reset();
    }
}

/// One gradient-based prune of `k` indices, compaction and α rescaling.
pub fn prune_event(
    model: &LoraModel,
    grads: &LoraGrads,
    hessians: &LoraHessians,
    k: usize,
    strategy: Option<SearchStrategy>,
    policy: AlphaPolicy,
) -> Result<(LoraModel, PruneEvent)> {
    let adapter = &model.adapter;
    let strategy = strategy.unwrap_or_else(|| SearchStrategy::default_for(adapter.rank()));
    let candidate = select_mask_lora(adapter, grads, hessians, k, strategy)?;
    let solution = lora_obs_update(adapter, grads, hessians, &candidate.mask)?;
    let zeroed = apply_lora_update(adapter, &solution)?;
    let (compact, event) =
        finish_compaction(adapter, zeroed, candidate.mask, candidate.saliency, solution.quad_objective, policy)?;
    Ok((model.with_adapter(compact)?, event))
}

fn batch_rows(rng: &mut impl rand::Rng, n: usize, batch: usize) -> Vec<usize> {
    if batch >= n {
        return (0..n).collect();
    }
    let mut rows = sample(rng, n, batch).into_vec();
    rows.sort_unstable();
    rows
}

fn non_finite(step: usize, rank: usize) -> PruneError {
    PruneError::NonFinite { op: "run_dynamic_schedule", detail: format!("loss at step {step} (rank {rank})") }
}

fn train(mut model: LoraModel, data: TrainData<'_>, config: &ScheduleConfig, prune: bool) -> Result<ScheduleOutcome> {
    if data.x.rows() != data.y.rows() || data.x.rows() == 0 {
        return Err(PruneError::dim(
            "run_dynamic_schedule",
            format!("{} inputs for {} targets", data.x.rows(), data.y.rows()),
        ));
    }
    let mut rng = seeded_rng(config.seed);
    let mut state = OptimizerState::new(config.optimizer, &model);
    let mut window = Window::new(config.window);
    let mut records = Vec::with_capacity(config.total_steps);
    for step in 1..=config.total_steps {
        let rows = batch_rows(&mut rng, data.x.rows(), config.batch_size);
        let (x, y) = (data.x.select_rows(&rows), data.y.select_rows(&rows));
        let rank = model.adapter.rank();
        let (loss, mut grads) = model.loss_and_grads(&x, &y).map_err(|e| match e {
            PruneError::NonFinite { .. } => non_finite(step, rank),
            other => other,
        })?;
        window.push(&grads.adapter)?;
        let mut event = None;
        if prune && config.is_event(step, rank) {
            let k = config.k2.min(rank - config.target_rank);
            let mean = window.mean().expect("window holds the current step");
            let hessians = window.hessians(config.hessian_source, config.damping)?;
            let (pruned, ev) = prune_event(&model, &mean, &hessians, k, config.strategy, config.alpha_policy)?;
            state = slice_optimizer_state(&state, &ev.mask)?;
            model = pruned;
            window.reset();
            grads = model.loss_and_grads(&x, &y).map_err(|_| non_finite(step, model.adapter.rank()))?.1;
            window.push(&grads.adapter)?;
            event = Some(ev);
        }
        let lr = config.learning_rate_at(step);
        state.apply(&mut model, &grads, lr)?;
        records.push(TrainRecord {
            step,
            loss,
            rank: model.adapter.rank(),
            alpha: model.adapter.alpha(),
            learning_rate: lr,
            event,
        });
    }
    let final_window = match window.mean() {
        Some(g) => Some((g, window.hessians(config.hessian_source, config.damping)?)),
        None => None,
    };
    Ok(ScheduleOutcome { model, records, final_window })
}

/// Trains while pruning from the model's rank down to `target_rank`.
pub fn run_dynamic_schedule(model: LoraModel, data: TrainData<'_>, config: &ScheduleConfig) -> Result<ScheduleOutcome> {
    config.validate(model.adapter.rank())?;
    let alpha = config.alpha_policy.alpha_for(model.adapter.rank());
    let adapter = model.adapter.clone().with_alpha(alpha)?;
    train(model.with_adapter(adapter)?, data, config, true)
}

/// Trains at the model's rank; the prune fields of `config` are ignored.
pub fn run_fixed_rank(model: LoraModel, data: TrainData<'_>, config: &ScheduleConfig) -> Result<ScheduleOutcome> {
    config.validate_training()?;
    train(model, data, config, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_matrix;
    use crate::toymodels::{ToyTask, ToyTaskConfig};

    #[test]
    fn sgd_example() {
        let mut p = Matrix::from_rows(&[[1.0]]);
        let mut m = Moments::zeros(1, 1);
        optimizer_step(OptimizerKind::PlainSgd, &mut m, 1, &mut p, &Matrix::from_rows(&[[2.0]]), 0.1).unwrap();
        assert!((p[(0, 0)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient() {
        let mut p = Matrix::from_rows(&[[1.0, -2.0]]);
        let zero = Matrix::zeros(1, 2);
        let mut fresh = Moments::zeros(1, 2);
        optimizer_step(OptimizerKind::AdaptiveMoments, &mut fresh, 1, &mut p, &zero, 0.1).unwrap();
        assert_eq!(p, Matrix::from_rows(&[[1.0, -2.0]]));
        let mut sgd = p.clone();
        optimizer_step(OptimizerKind::PlainSgd, &mut fresh, 1, &mut sgd, &zero, 0.1).unwrap();
        assert_eq!(sgd, p);

        let mut warm = Moments { first: Matrix::from_rows(&[[0.5, 0.1]]), second: Matrix::from_rows(&[[0.2, 0.3]]) };
        optimizer_step(OptimizerKind::AdaptiveMoments, &mut warm, 3, &mut p, &zero, 0.1).unwrap();
        assert_eq!(warm.first, Matrix::from_rows(&[[0.5 * BETA1, 0.1 * BETA1]]));
        assert_eq!(warm.second, Matrix::from_rows(&[[0.2 * BETA2, 0.3 * BETA2]]));
    }

    #[test]
    fn adam_matches_scalar_reimplementation() {
        // f(p) = ½ · 3 · (p − 2)²
        let mut p = Matrix::from_rows(&[[5.0]]);
        let mut mo = Moments::zeros(1, 1);
        let (mut q, mut m, mut v) = (5.0f64, 0.0f64, 0.0f64);
        for t in 1..=10u64 {
            let g = 3.0 * (p[(0, 0)] - 2.0);
            optimizer_step(OptimizerKind::AdaptiveMoments, &mut mo, t, &mut p, &Matrix::from_rows(&[[g]]), 0.05).unwrap();
            let gq = 3.0 * (q - 2.0);
            m = 0.9 * m + 0.1 * gq;
            v = 0.999 * v + 0.001 * gq * gq;
            let mh = m / (1.0 - 0.9f64.powi(t as i32));
            let vh = v / (1.0 - 0.999f64.powi(t as i32));
            q -= 0.05 * mh / (vh.sqrt() + 1e-8);
            assert!((p[(0, 0)] - q).abs() < 1e-12);
        }
        assert!(optimizer_step(OptimizerKind::AdaptiveMoments, &mut mo, 11, &mut p, &Matrix::from_rows(&[[f64::NAN]]), 0.1).is_err());
    }

    fn state_with_rank(rank: usize) -> OptimizerState {
        let mut rng = seeded_rng(3);
        OptimizerState {
            kind: OptimizerKind::AdaptiveMoments,
            step: 7,
            a: Moments { first: random_matrix(&mut rng, rank, 4, 1.0), second: random_matrix(&mut rng, rank, 4, 1.0) },
            b: Moments { first: random_matrix(&mut rng, 3, rank, 1.0), second: random_matrix(&mut rng, 3, rank, 1.0) },
            head: None,
        }
    }

    #[test]
    fn slicing_examples() {
        let s = state_with_rank(5);
        assert_eq!(slice_optimizer_state(&s, &PruneMask::columns(vec![], 5).unwrap()).unwrap(), s);
        let one = slice_optimizer_state(&s, &PruneMask::columns(vec![0, 1, 2, 4], 5).unwrap()).unwrap();
        assert_eq!(one.a.first, s.a.first.select_rows(&[3]));
        assert_eq!(one.b.second, s.b.second.select_cols(&[3]));
        let sl = slice_optimizer_state(&s, &PruneMask::columns(vec![1, 3], 5).unwrap()).unwrap();
        for (new, old) in [0, 2, 4].iter().enumerate() {
            assert_eq!(sl.a.first.row(new), s.a.first.row(*old));
            assert_eq!(sl.a.second.row(new), s.a.second.row(*old));
            for i in 0..3 {
                assert_eq!(sl.b.first[(i, new)].to_bits(), s.b.first[(i, *old)].to_bits());
                assert_eq!(sl.b.second[(i, new)].to_bits(), s.b.second[(i, *old)].to_bits());
            }
        }
        assert!(slice_optimizer_state(&s, &PruneMask::columns(vec![1], 4).unwrap()).is_err());
    }

    #[test]
    fn alpha_policy_values() {
        let mut cfg = ScheduleConfig { alpha_policy: AlphaPolicy::Proportional, ..Default::default() };
        assert_eq!(apply_alpha_policy(&cfg, 128), 128.0);
        cfg.alpha_policy = AlphaPolicy::ProportionalDouble;
        assert_eq!(apply_alpha_policy(&cfg, 512), 1024.0);
        cfg.alpha_policy = AlphaPolicy::Fixed(16.0);
        assert_eq!(apply_alpha_policy(&cfg, 3), 16.0);
    }

    #[test]
    fn cosine_schedule() {
        let cfg = ScheduleConfig { total_steps: 100, warmup_ratio: 0.03, learning_rate: 1.0, ..Default::default() };
        assert_eq!(cfg.warmup_steps(), 3);
        assert!((cfg.learning_rate_at(1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cfg.learning_rate_at(3), 1.0);
        assert!(cfg.learning_rate_at(100).abs() < 1e-15);
        assert!(cfg.learning_rate_at(50) < cfg.learning_rate_at(20));
    }

    #[test]
    fn validation() {
        let cfg = ScheduleConfig { k1: 10, k2: 2, target_rank: 4, total_steps: 59, ..Default::default() };
        assert!(cfg.validate(16).is_err());
        assert!(ScheduleConfig { total_steps: 60, ..cfg.clone() }.validate(16).is_ok());
        assert!(ScheduleConfig { k1: 0, ..cfg.clone() }.validate(16).is_err());
        assert!(ScheduleConfig { k2: 16, ..cfg.clone() }.validate(16).is_err());
        assert!(ScheduleConfig { target_rank: 16, ..cfg }.validate(16).is_err());
    }

    fn toy(rank: usize) -> (ToyTask, LoraModel) {
        let task = ToyTask::generate(&ToyTaskConfig { train_samples: 64, eval_samples: 16, ..Default::default() }).unwrap();
        let model = task.student(rank, rank as f64, 1).unwrap();
        (task, model)
    }

    #[test]
    fn trajectory_and_single_event() {
        let (task, model) = toy(16);
        let data = TrainData { x: &task.x_train, y: &task.y_train };
        let cfg = ScheduleConfig { k1: 5, k2: 2, target_rank: 4, total_steps: 40, ..Default::default() };
        let out = run_dynamic_schedule(model.clone(), data, &cfg).unwrap();
        let steps: Vec<usize> = out.records.iter().filter(|r| r.event.is_some()).map(|r| r.step).collect();
        assert_eq!(steps, vec![5, 10, 15, 20, 25, 30]);
        assert_eq!(out.model.adapter.rank(), 4);
        assert!(out.records.windows(2).all(|w| w[1].rank <= w[0].rank));
        for r in &out.records {
            if let Some(e) = &r.event {
                assert_eq!(e.rank_before - e.rank_after, 2);
                assert!(e.scaling_residual < 1e-12);
                assert_eq!(r.alpha, e.rank_after as f64);
            }
        }
        let again = run_dynamic_schedule(model.clone(), data, &cfg).unwrap();
        assert_eq!(again.records, out.records);

        let one = ScheduleConfig { k2: 12, ..cfg };
        let out = run_dynamic_schedule(model, data, &one).unwrap();
        assert_eq!(out.records.iter().filter(|r| r.event.is_some()).count(), 1);
        assert_eq!(out.model.adapter.rank(), 4);
    }

    #[test]
    fn uneven_final_event_and_fixed_alpha() {
        let (task, model) = toy(9);
        let data = TrainData { x: &task.x_train, y: &task.y_train };
        let cfg = ScheduleConfig {
            k1: 3,
            k2: 2,
            target_rank: 4,
            total_steps: 12,
            alpha_policy: AlphaPolicy::Fixed(9.0),
            ..Default::default()
        };
        let out = run_dynamic_schedule(model, data, &cfg).unwrap();
        let ranks: Vec<usize> = out.records.iter().filter_map(|r| r.event.as_ref().map(|e| e.rank_after)).collect();
        assert_eq!(ranks, vec![7, 5, 4]);
        for e in out.records.iter().filter_map(|r| r.event.as_ref()) {
            assert_eq!(e.alpha_after, 9.0);
            assert!(e.scaling_residual < 1e-12);
        }
    }
}
