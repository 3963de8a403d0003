//! Reference pruners: reconstruction OBS, loss-difference importance,
//! magnitude, Wanda, the one-shot gradient metric, truncated SVD and one-shot
//! LoRA pruning.

use crate::error::{PruneError, Result};
use crate::exec::ExecMode;
use crate::hessian::{hessian_from_activations, hessian_from_gradient_cols, Damping};
use crate::matcore::{Axis, Matrix, PruneMask};
use crate::obs_full::{obs_update_full, select_mask_full, SearchStrategy};
use crate::obs_lora::{
    apply_lora_update, compact_rank, lora_obs_update, select_mask_lora, AlphaPolicy, LoraAdapter, LoraGrads,
    LoraHessians,
};
use crate::report::PruneEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreCriterion {
    Magnitude,
    Wanda,
    OneShotGradient,
    ImportanceScore,
}

/// Elementwise non-negative scores; larger means more worth keeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: Matrix,
    criterion: ScoreCriterion,
}

impl ScoreMatrix {
    pub fn new(scores: Matrix, criterion: ScoreCriterion) -> Result<Self> {
        if let Some(v) = scores.data().iter().find(|v| v.is_nan() || **v < 0.0) {
            return Err(PruneError::pre("ScoreMatrix::new", format!("score {v} is negative")));
        }
        Ok(Self { scores, criterion })
    }

    pub fn scores(&self) -> &Matrix {
        &self.scores
    }

    pub fn criterion(&self) -> ScoreCriterion {
        self.criterion
    }
}

/// How elementwise scores collapse to one score per column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColumnAggregation {
    /// Plain sum of the column's scores.
    Sum,
    /// Sum of squared scores. Ranks magnitude columns by their squared norm,
    /// matching second-order saliency under identity curvature.
    #[default]
    SumOfSquares,
}

impl ColumnAggregation {
    pub fn aggregate(self, scores: &Matrix) -> Vec<f64> {
        match self {
            ColumnAggregation::Sum => (0..scores.cols()).map(|j| scores.col(j).iter().sum()).collect(),
            ColumnAggregation::SumOfSquares => scores.col_sq_norms(),
        }
    }
}

/// How much to prune.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneTarget {
    /// Number of entries (or columns) removed.
    Count(usize),
    /// Fraction removed, rounded to the nearest count.
    Ratio(f64),
}

impl PruneTarget {
    fn resolve(self, op: &'static str, total: usize) -> Result<usize> {
        let k = match self {
            PruneTarget::Count(k) => k,
            PruneTarget::Ratio(f) => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(PruneError::pre(op, format!("sparsity ratio {f} outside [0, 1]")));
                }
                (f * total as f64).round() as usize
            }
        };
        if k > total {
            return Err(PruneError::pre(op, format!("cannot prune {k} of {total}")));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SparsityPattern {
    ColumnStructured { target: PruneTarget, aggregation: ColumnAggregation },
    Unstructured { target: PruneTarget },
    /// Keep `n` of every `m_group` consecutive entries along each row.
    NM { n: usize, m_group: usize },
}

/// Boolean keep-matrix produced by [`apply_pattern`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeepMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl KeepMask {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.keep[i * self.cols + j]
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }

    /// Entries kept in row `i`, columns `start..end`.
    pub fn kept_in(&self, i: usize, start: usize, end: usize) -> usize {
        self.keep[i * self.cols + start..i * self.cols + end].iter().filter(|k| **k).count()
    }

    /// Zeroes every entry of `w` that is not kept.
    pub fn apply(&self, w: &Matrix) -> Result<Matrix> {
        if w.shape() != self.shape() {
            return Err(PruneError::dim(
                "KeepMask::apply",
                format!("mask {:?} for matrix {:?}", self.shape(), w.shape()),
            ));
        }
        Ok(Matrix::from_fn(self.rows, self.cols, |i, j| if self.get(i, j) { w[(i, j)] } else { 0.0 }))
    }
}

/// Indices of the `k` smallest values; ties go to the smaller index.
pub fn smallest_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut picked = order[..k.min(values.len())].to_vec();
    picked.sort_unstable();
    picked
}

pub fn apply_pattern(scores: &ScoreMatrix, pattern: SparsityPattern) -> Result<KeepMask> {
    const OP: &str = "apply_pattern";
    let s = scores.scores();
    let (rows, cols) = s.shape();
    let mut keep = vec![true; rows * cols];
    match pattern {
        SparsityPattern::ColumnStructured { target, aggregation } => {
            let k = target.resolve(OP, cols)?;
            for j in smallest_k(&aggregation.aggregate(s), k) {
                for i in 0..rows {
                    keep[i * cols + j] = false;
                }
            }
        }
        SparsityPattern::Unstructured { target } => {
            let k = target.resolve(OP, rows * cols)?;
            for idx in smallest_k(s.data(), k) {
                keep[idx] = false;
            }
        }
        SparsityPattern::NM { n, m_group } => {
            if m_group == 0 || n >= m_group || cols % m_group != 0 {
                return Err(PruneError::pre(
                    OP,
                    format!("{n}:{m_group} grouping is invalid for {cols} columns"),
                ));
            }
            for i in 0..rows {
                for start in (0..cols).step_by(m_group) {
                    let group = &s.row(i)[start..start + m_group];
                    for off in smallest_k(group, m_group - n) {
                        keep[i * cols + start + off] = false;
                    }
                }
            }
        }
    }
    Ok(KeepMask { rows, cols, keep })
}

/// `|W_ij|`.
pub fn magnitude_scores(w: &Matrix) -> ScoreMatrix {
    ScoreMatrix {
        scores: w.map(f64::abs),
        criterion: ScoreCriterion::Magnitude,
    }
}

/// `|W_ij| · ‖X_j‖` with `X` laid out features × tokens.
pub fn wanda_scores(w: &Matrix, x: &Matrix) -> Result<ScoreMatrix> {
    if x.rows() != w.cols() {
        return Err(PruneError::dim(
            "wanda_scores",
            format!("W has {} columns but X has {} feature rows", w.cols(), x.rows()),
        ));
    }
    let norms: Vec<f64> = x.row_sq_norms().into_iter().map(f64::sqrt).collect();
    Ok(ScoreMatrix {
        scores: Matrix::from_fn(w.rows(), w.cols(), |i, j| w[(i, j)].abs() * norms[j]),
        criterion: ScoreCriterion::Wanda,
    })
}

/// `|W_ij / [(GᵀG + λI)⁻¹]_jj|`.
pub fn oneshot_gradient_scores(w: &Matrix, g: &Matrix, lambda: f64) -> Result<ScoreMatrix> {
    if w.shape() != g.shape() {
        return Err(PruneError::dim(
            "oneshot_gradient_scores",
            format!("W is {:?} but G is {:?}", w.shape(), g.shape()),
        ));
    }
    let h = hessian_from_gradient_cols(g, Damping::Absolute(lambda))?;
    let diag = h.inverse().diagonal();
    Ok(ScoreMatrix {
        scores: Matrix::from_fn(w.rows(), w.cols(), |i, j| (w[(i, j)] / diag[j]).abs()),
        criterion: ScoreCriterion::OneShotGradient,
    })
}

/// `‖(Ŵ − W) X‖²_F`.
pub fn reconstruction_error(w: &Matrix, w_hat: &Matrix, x: &Matrix) -> f64 {
    let r = w_hat.sub(w).matmul(x).frobenius_norm();
    r * r
}

/// Column pruning of `W` that minimizes the output reconstruction error on
/// calibration inputs `X` (features × tokens).
///
/// Returns the mask and the compensated weights with masked columns zero.
pub fn activation_obs_prune(
    w: &Matrix,
    x: &Matrix,
    k: usize,
    damping: Damping,
    strategy: SearchStrategy,
) -> Result<(PruneMask, Matrix)> {
    if x.rows() != w.cols() {
        return Err(PruneError::dim(
            "activation_obs_prune",
            format!("W has {} columns but X has {} feature rows", w.cols(), x.rows()),
        ));
    }
    let h = hessian_from_activations(x, damping)?;
    let g = Matrix::zeros(w.rows(), w.cols());
    let candidate = select_mask_full(w, &g, &h, k, strategy)?;
    let solution = obs_update_full(w, &g, &h, &candidate.mask)?;
    let mut pruned = w.add(&solution.delta);
    pruned.fill_cols(candidate.mask.indices(), 0.0);
    Ok((candidate.mask, pruned))
}

/// `|L(W) − L(W with column i zeroed)|` for every column.
pub fn importance_scores<F>(mode: ExecMode, loss: F, w: &Matrix) -> Result<Vec<f64>>
where
    F: Fn(&Matrix) -> f64 + Sync + Send,
{
    const OP: &str = "importance_score_prune";
    let base = loss(w);
    if !base.is_finite() {
        return Err(PruneError::NonFinite { op: OP, detail: "loss at unpruned weights".into() });
    }
    mode.map_range(w.cols(), |i| {
        let mut zeroed = w.clone();
        zeroed.fill_cols(&[i], 0.0);
        let l = loss(&zeroed);
        if l.is_finite() {
            Ok((base - l).abs())
        } else {
            Err(PruneError::NonFinite { op: OP, detail: format!("loss with column {i} zeroed") })
        }
    })
    .into_iter()
    .collect()
}

/// The `k` columns whose removal changes the loss least. Weights are not
/// updated.
pub fn importance_score_prune<F>(loss: F, w: &Matrix, k: usize) -> Result<PruneMask>
where
    F: Fn(&Matrix) -> f64 + Sync + Send,
{
    if k > w.cols() {
        return Err(PruneError::pre("importance_score_prune", format!("k = {k} exceeds {} columns", w.cols())));
    }
    let scores = importance_scores(ExecMode::default(), loss, w)?;
    PruneMask::new(smallest_k(&scores, k), Axis::Column, w.cols())
}

/// Thin SVD `M = U diag(σ) Vᵀ` with non-increasing `σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// One-sided Jacobi SVD.
pub fn jacobi_svd(m: &Matrix) -> Result<Svd> {
    if m.rows() < m.cols() {
        let t = jacobi_svd(&m.transpose())?;
        return Ok(Svd {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        });
    }
    let n = m.cols();
    // Rows of `work` are the columns of M being orthogonalized.
    let mut work = m.transpose();
    let mut v = Matrix::identity(n);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (rp, rq) = (work.row(p), work.row(q));
                    (crate::matcore::dot(rp, rp), crate::matcore::dot(rq, rq), crate::matcore::dot(rp, rq))
                };
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut work, p, q, c, s);
                rotate_rows(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(PruneError::Convergence {
            op: "jacobi_svd",
            detail: format!("off-diagonal mass above {JACOBI_TOL:e} after {JACOBI_MAX_SWEEPS} sweeps"),
        });
    }
    let norms: Vec<f64> = work.row_sq_norms().into_iter().map(f64::sqrt).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let u = Matrix::from_fn(m.rows(), n, |i, c| {
        let j = order[c];
        if norms[j] > 0.0 {
            work[(j, i)] / norms[j]
        } else {
            0.0
        }
    });
    Ok(Svd { u, sigma, vt: v.select_rows(&order) })
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..m.cols() {
        let (a, b) = (m[(p, k)], m[(q, k)]);
        m[(p, k)] = c * a - s * b;
        m[(q, k)] = s * a + c * b;
    }
}

/// Best rank-`r` factors `(U_r Σ_r, V_rᵀ)` of `ΔW`.
pub fn svd_truncate(delta_w: &Matrix, r: usize) -> Result<(Matrix, Matrix)> {
    let max = delta_w.rows().min(delta_w.cols());
    if r > max {
        return Err(PruneError::pre("svd_truncate", format!("rank {r} exceeds {max}")));
    }
    let svd = jacobi_svd(delta_w)?;
    let keep: Vec<usize> = (0..r).collect();
    let us = Matrix::from_fn(delta_w.rows(), r, |i, j| svd.u[(i, j)] * svd.sigma[j]);
    Ok((us, svd.vt.select_rows(&keep)))
}

fn prune_event(
    before: &LoraAdapter,
    after: &LoraAdapter,
    mask: PruneMask,
    saliency: f64,
    quad_objective: f64,
    pre_compaction: &LoraAdapter,
) -> PruneEvent {
    let old = pre_compaction.delta_w();
    let predicted = pre_compaction
        .b()
        .matmul(pre_compaction.a())
        .scale(after.scaling() - pre_compaction.scaling());
    PruneEvent {
        mask,
        saliency,
        quad_objective,
        rank_before: before.rank(),
        rank_after: after.rank(),
        alpha_before: before.alpha(),
        alpha_after: after.alpha(),
        scaling_residual: after.delta_w().sub(&old).max_abs_diff(&predicted),
    }
}

/// Compacts after zeroing and applies the α policy at the new rank.
pub(crate) fn finish_compaction(
    before: &LoraAdapter,
    zeroed: LoraAdapter,
    mask: PruneMask,
    saliency: f64,
    quad_objective: f64,
    policy: AlphaPolicy,
) -> Result<(LoraAdapter, PruneEvent)> {
    let compact = compact_rank(&zeroed, &mask)?;
    let alpha = policy.alpha_for(compact.rank());
    let compact = compact.with_alpha(alpha)?;
    let event = prune_event(before, &compact, mask, saliency, quad_objective, &zeroed);
    Ok((compact, event))
}

/// A single gradient-based prune of `k` rank indices: select, update,
/// compact and rescale α.
pub fn oneshot_lora_prune(
    adapter: &LoraAdapter,
    grads: &LoraGrads,
    hessians: &LoraHessians,
    k: usize,
    strategy: SearchStrategy,
    policy: AlphaPolicy,
) -> Result<(LoraAdapter, PruneEvent)> {
    let candidate = select_mask_lora(adapter, grads, hessians, k, strategy)?;
    let solution = lora_obs_update(adapter, grads, hessians, &candidate.mask)?;
    let zeroed = apply_lora_update(adapter, &solution)?;
    finish_compaction(adapter, zeroed, candidate.mask, candidate.saliency, solution.quad_objective, policy)
}

/// Removes the rank indices with the smallest `scores` without compensation.
pub fn prune_rank_by_scores(
    adapter: &LoraAdapter,
    scores: &[f64],
    k: usize,
    policy: AlphaPolicy,
) -> Result<(LoraAdapter, PruneEvent)> {
    const OP: &str = "prune_rank_by_scores";
    if scores.len() != adapter.rank() {
        return Err(PruneError::dim(OP, format!("{} scores for rank {}", scores.len(), adapter.rank())));
    }
    if k == 0 || k >= adapter.rank() {
        return Err(PruneError::pre(OP, format!("need 0 < k < {}, got {k}", adapter.rank())));
    }
    let mask = PruneMask::new(smallest_k(scores, k), Axis::Column, adapter.rank())?;
    let (mut a, mut b, alpha) = adapter.clone().into_parts();
    a.fill_rows(mask.indices(), 0.0);
    b.fill_cols(mask.indices(), 0.0);
    let zeroed = LoraAdapter::new(a, b, alpha)?;
    let removed: f64 = mask.indices().iter().map(|&j| scores[j]).sum();
    finish_compaction(adapter, zeroed, mask, removed, f64::NAN, policy)
}

/// Pair magnitude `‖B[:, j]‖² + ‖A[j, :]‖²` per rank index.
pub fn pair_magnitude_scores(adapter: &LoraAdapter) -> Vec<f64> {
    let (a, b) = (adapter.a().row_sq_norms(), adapter.b().col_sq_norms());
    a.iter().zip(&b).map(|(x, y)| x + y).collect()
}

/// Reconstruction OBS on `B` with the adapter's hidden activations
/// `Z = A X` as calibration data, then compaction.
pub fn activation_obs_lora(
    adapter: &LoraAdapter,
    x: &Matrix,
    k: usize,
    damping: Damping,
    policy: AlphaPolicy,
) -> Result<(LoraAdapter, PruneEvent)> {
    let z = adapter.a().matmul(x);
    let (mask, b) = activation_obs_prune(adapter.b(), &z, k, damping, SearchStrategy::default_for(adapter.rank()))?;
    let mut a = adapter.a().clone();
    a.fill_rows(mask.indices(), 0.0);
    let before = adapter.b().matmul(&z);
    let err = reconstruction_error(&before, &b.matmul(&z), &Matrix::identity(z.cols()));
    let zeroed = LoraAdapter::new(a, b, adapter.alpha())?;
    finish_compaction(adapter, zeroed, mask, err, f64::NAN, policy)
}

/// Rank-`r` SVD refactorization of the adapter's `B A`.
pub fn svd_lora(adapter: &LoraAdapter, r: usize, policy: AlphaPolicy) -> Result<LoraAdapter> {
    let (us, vt) = svd_truncate(&adapter.b().matmul(adapter.a()), r)?;
    // Keep the effective update: s'·B'A' = s·(B A)_r.
    let alpha = policy.alpha_for(r);
    let ratio = adapter.scaling() / (alpha / r as f64);
    LoraAdapter::new(vt, us.scale(ratio), alpha)
}
