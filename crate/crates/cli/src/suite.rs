//! Brute-force cross-checks of the closed-form pruners on random instances.
//!
//! Full-matrix shapes run over m ∈ {2, 3, 4}, n ∈ 3..=max_n and k ∈ {1, 2, 3}
//! with k < n. LoRA pairs are 4×r and r×5 with r ∈ 3..=min(6, max_n).

use obsprune::hessian::{hessian_from_gradient_cols, Damping};
use obsprune::obs_full::{newton_shift, obs_update_full, quad_objective, saliency_full, select_mask_full, SearchStrategy};
use obsprune::obs_lora::{
    apply_lora_update, compact_rank, lora_obs_update, lora_shifts, saliency_lora, select_mask_lora, LoraAdapter,
    LoraGrads, LoraHessians,
};
use obsprune::oracle::{enumerate_masks, enumerate_masks_lora, lora_pair_objective, solve_constrained_quadratic};
use obsprune::synth::{random_matrix, seeded_rng};
use obsprune::{ExecMode, Matrix};
use rand::Rng;

use crate::error::Result;

pub const TIE_TOL: f64 = 1e-12;
pub const DELTA_TOL: f64 = 1e-9;
pub const IDENTITY_TOL: f64 = 1e-9;
pub const PERTURBATION_TOL: f64 = 1e-12;
pub const COMPACTION_TOL: f64 = 1e-12;
const LORA_OUT: usize = 4;
const LORA_IN: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub trials: usize,
    pub max_n: usize,
    pub seed: u64,
    pub perturbations: usize,
    /// Relative damping of every curvature estimate.
    pub damping: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { trials: 100, max_n: 7, seed: 0, perturbations: 1000, damping: 1e-2 }
    }
}

/// Pass counts for one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub kind: GroupKind,
    pub trials: usize,
    /// Selected mask equals the enumerated optimum or ties it.
    pub mask_agree: usize,
    /// Closed-form and pin-and-solve deltas agree on every mask.
    pub delta_agree: usize,
    /// Oracle objective minus the Newton objective equals half the saliency
    /// on every mask.
    pub identity: usize,
    /// No random feasible perturbation improves the optimal update.
    pub optimal: usize,
    /// LoRA only: joint saliency equals the sum of the factor saliencies.
    pub separable: usize,
    /// LoRA only: compaction preserves `BA`.
    pub compaction: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    Full { m: usize, n: usize, k: usize },
    Lora { r: usize, k: usize },
}

impl GroupResult {
    pub const FULL_COLUMNS: &'static str =
        "record,source,m,n,k,trials,mask_agree,delta_agree,saliency_identity,perturbation_optimal";
    pub const LORA_COLUMNS: &'static str =
        "record,source,m,n,r,k,trials,mask_agree,delta_agree,saliency_identity,perturbation_optimal,separable,compaction_exact";

    pub fn passed(&self) -> bool {
        let t = self.trials;
        let base = self.mask_agree == t && self.delta_agree == t && self.identity == t && self.optimal == t;
        match self.kind {
            GroupKind::Full { .. } => base,
            GroupKind::Lora { .. } => base && self.separable == t && self.compaction == t,
        }
    }

    pub fn to_record(&self) -> String {
        let counts = format!("{},{},{},{},{}", self.trials, self.mask_agree, self.delta_agree, self.identity, self.optimal);
        match self.kind {
            GroupKind::Full { m, n, k } => format!("full,source=oracle,{m},{n},{k},{counts}"),
            GroupKind::Lora { r, k } => format!(
                "lora,source=oracle,{LORA_OUT},{LORA_IN},{r},{k},{counts},{},{}",
                self.separable, self.compaction
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Checks {
    mask_agree: bool,
    delta_agree: bool,
    identity: bool,
    optimal: bool,
    separable: bool,
    compaction: bool,
}

fn ties(a: f64, best: f64) -> bool {
    (a - best).abs() <= TIE_TOL * best.abs().max(1.0)
}

fn identity_holds(gap: f64, half_saliency: f64) -> bool {
    (gap - half_saliency).abs() <= IDENTITY_TOL * half_saliency.abs().max(gap.abs()).max(f64::MIN_POSITIVE)
}

fn instance_seed(base: u64, group: usize, trial: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((group as u64) << 32 | trial as u64)
}

/// Adds noise of a random scale to the free entries of `delta`.
fn perturb<R: Rng>(rng: &mut R, delta: &Matrix, free: &[usize], by_rows: bool) -> Matrix {
    let scale = 10f64.powf(rng.random_range(-6.0..0.0));
    let mut out = delta.clone();
    for i in 0..delta.rows() {
        for j in 0..delta.cols() {
            let idx = if by_rows { i } else { j };
            if free.contains(&idx) {
                out[(i, j)] += scale * rng.random_range(-1.0..1.0);
            }
        }
    }
    out
}

fn full_instance(cfg: &SuiteConfig, seed: u64, m: usize, n: usize, k: usize) -> Result<Checks> {
    let mut rng = seeded_rng(seed);
    let w = random_matrix(&mut rng, m, n, 1.0);
    let g = random_matrix(&mut rng, m, n, 1.0);
    let h = hessian_from_gradient_cols(&g, Damping::Relative(cfg.damping))?;
    let chosen = select_mask_full(&w, &g, &h, k, SearchStrategy::Exhaustive)?;
    let oracle = enumerate_masks(&w, &g, h.matrix(), k)?;
    let (_, chosen_obj) = solve_constrained_quadratic(&w, &g, h.matrix(), &chosen.mask)?;
    let mut c = Checks {
        mask_agree: chosen.mask == oracle.best_mask || ties(chosen_obj, oracle.best_objective),
        delta_agree: true,
        identity: true,
        ..Checks::default()
    };
    let wt = newton_shift(&w, &g, &h)?;
    let q_newton = quad_objective(&g, h.matrix(), &wt.sub(&w));
    for (mask, obj) in &oracle.per_mask {
        let closed = obs_update_full(&w, &g, &h, mask)?;
        let (delta, _) = solve_constrained_quadratic(&w, &g, h.matrix(), mask)?;
        c.delta_agree &= closed.delta.max_abs_diff(&delta) <= DELTA_TOL;
        c.identity &= identity_holds(obj - q_newton, 0.5 * saliency_full(&wt, h.inverse(), mask)?);
    }
    let best = obs_update_full(&w, &g, &h, &chosen.mask)?;
    let free = chosen.mask.kept();
    c.optimal = (0..cfg.perturbations).all(|_| {
        let q = quad_objective(&g, h.matrix(), &perturb(&mut rng, &best.delta, &free, false));
        q >= best.quad_objective - PERTURBATION_TOL * best.quad_objective.abs().max(1.0)
    });
    Ok(c)
}

/// `⟨G_B, δB⟩ + ½tr(δB Ĥ_B δBᵀ) + ⟨G_A, δA⟩ + ½tr(δAᵀ Ĥ_A δA)`.
fn pair_objective(grads: &LoraGrads, h: &LoraHessians, da: &Matrix, db: &Matrix) -> f64 {
    quad_objective(&grads.grad_b, h.h_b.matrix(), db)
        + quad_objective(&grads.grad_a.transpose(), h.h_a.matrix(), &da.transpose())
}

fn lora_instance(cfg: &SuiteConfig, seed: u64, r: usize, k: usize) -> Result<Checks> {
    let mut rng = seeded_rng(seed);
    let adapter = LoraAdapter::new(
        random_matrix(&mut rng, r, LORA_IN, 1.0),
        random_matrix(&mut rng, LORA_OUT, r, 1.0),
        r as f64,
    )?;
    let grads = LoraGrads {
        grad_a: random_matrix(&mut rng, r, LORA_IN, 1.0),
        grad_b: random_matrix(&mut rng, LORA_OUT, r, 1.0),
    };
    let h = LoraHessians::from_grads(&grads, Damping::Relative(cfg.damping))?;
    let (ha, hb) = (h.h_a.matrix(), h.h_b.matrix());
    let (a, b) = (adapter.a(), adapter.b());
    let chosen = select_mask_lora(&adapter, &grads, &h, k, SearchStrategy::Exhaustive)?;
    let oracle = enumerate_masks_lora(a, b, &grads.grad_a, &grads.grad_b, ha, hb, k)?;
    let (_, _, chosen_obj) = lora_pair_objective(a, b, &grads.grad_a, &grads.grad_b, ha, hb, &chosen.mask)?;
    let mut c = Checks {
        mask_agree: chosen.mask == oracle.best_mask || ties(chosen_obj, oracle.best_objective),
        delta_agree: true,
        identity: true,
        separable: true,
        compaction: true,
        ..Checks::default()
    };
    let (at, bt) = lora_shifts(&adapter, &grads, &h)?;
    let q_newton = pair_objective(&grads, &h, &at.sub(a), &bt.sub(b));
    for (mask, obj) in &oracle.per_mask {
        let sol = lora_obs_update(&adapter, &grads, &h, mask)?;
        let (da, db, _) = lora_pair_objective(a, b, &grads.grad_a, &grads.grad_b, ha, hb, mask)?;
        c.delta_agree &= sol.delta_a.max_abs_diff(&da) <= DELTA_TOL && sol.delta_b.max_abs_diff(&db) <= DELTA_TOL;
        let joint = saliency_lora(&at, &bt, h.h_a.inverse(), h.h_b.inverse(), mask)?;
        let split = saliency_full(&bt, h.h_b.inverse(), mask)? + saliency_full(&at.transpose(), h.h_a.inverse(), mask)?;
        c.separable &= (joint - split).abs() <= IDENTITY_TOL * split.abs().max(1.0);
        c.identity &= identity_holds(obj - q_newton, 0.5 * joint);
        let zeroed = apply_lora_update(&adapter, &sol)?;
        let compact = compact_rank(&zeroed, mask)?;
        c.compaction &=
            compact.b().matmul(compact.a()).max_abs_diff(&zeroed.b().matmul(zeroed.a())) < COMPACTION_TOL;
    }
    let best = lora_obs_update(&adapter, &grads, &h, &chosen.mask)?;
    let free = chosen.mask.kept();
    c.optimal = (0..cfg.perturbations).all(|_| {
        let da = perturb(&mut rng, &best.delta_a, &free, true);
        let db = perturb(&mut rng, &best.delta_b, &free, false);
        pair_objective(&grads, &h, &da, &db) >= best.quad_objective - PERTURBATION_TOL * best.quad_objective.abs().max(1.0)
    });
    Ok(c)
}

fn tally(kind: GroupKind, checks: Vec<Result<Checks>>) -> Result<GroupResult> {
    let mut g = GroupResult {
        kind,
        trials: checks.len(),
        mask_agree: 0,
        delta_agree: 0,
        identity: 0,
        optimal: 0,
        separable: 0,
        compaction: 0,
    };
    for c in checks {
        let c = c?;
        g.mask_agree += c.mask_agree as usize;
        g.delta_agree += c.delta_agree as usize;
        g.identity += c.identity as usize;
        g.optimal += c.optimal as usize;
        g.separable += c.separable as usize;
        g.compaction += c.compaction as usize;
    }
    Ok(g)
}

pub fn full_groups(max_n: usize) -> Vec<GroupKind> {
    let mut out = Vec::new();
    for m in 2..=4 {
        for n in 3..=max_n {
            for k in (1..=3).filter(|&k| k < n) {
                out.push(GroupKind::Full { m, n, k });
            }
        }
    }
    out
}

pub fn lora_groups(max_n: usize) -> Vec<GroupKind> {
    let mut out = Vec::new();
    for r in 3..=max_n.min(6) {
        for k in (1..=3).filter(|&k| k < r) {
            out.push(GroupKind::Lora { r, k });
        }
    }
    out
}

/// Runs the given groups; trials of a group run through `mode`.
pub fn run_groups(cfg: &SuiteConfig, groups: &[GroupKind], mode: ExecMode) -> Result<Vec<GroupResult>> {
    groups
        .iter()
        .enumerate()
        .map(|(gi, &kind)| {
            let checks = mode.map_range(cfg.trials, |t| {
                let seed = instance_seed(cfg.seed, gi + full_offset(kind), t);
                match kind {
                    GroupKind::Full { m, n, k } => full_instance(cfg, seed, m, n, k),
                    GroupKind::Lora { r, k } => lora_instance(cfg, seed, r, k),
                }
            });
            tally(kind, checks)
        })
        .collect()
}

fn full_offset(kind: GroupKind) -> usize {
    match kind {
        GroupKind::Full { .. } => 0,
        GroupKind::Lora { .. } => 1 << 16,
    }
}

/// Full-matrix then LoRA groups.
pub fn run_suite(cfg: &SuiteConfig, mode: ExecMode) -> Result<Vec<GroupResult>> {
    let mut groups = full_groups(cfg.max_n);
    groups.extend(lora_groups(cfg.max_n));
    run_groups(cfg, &groups, mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_lists() {
        assert_eq!(full_groups(7).len(), 3 * (2 + 3 * 4));
        assert_eq!(lora_groups(7).len(), 2 + 3 + 3 + 3);
        assert!(lora_groups(4).iter().all(|g| matches!(g, GroupKind::Lora { r, .. } if *r <= 4)));
    }

    #[test]
    fn small_suite_passes() {
        let cfg = SuiteConfig { trials: 3, max_n: 5, perturbations: 50, ..SuiteConfig::default() };
        let results = run_suite(&cfg, ExecMode::default()).unwrap();
        assert!(results.iter().all(GroupResult::passed), "{results:?}");
        assert!(results[0].to_record().starts_with("full,source=oracle,2,3,1,3,3,3,3,3"));
    }
}
