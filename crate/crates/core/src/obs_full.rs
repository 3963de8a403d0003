//! Gradient-based structured column pruning of a full weight matrix.
//!
//! The local model of the loss around `W` is
//!
//! ```text
//! q(δ) = ⟨G, δ⟩ + ½ tr(δ Ĥ δᵀ),    subject to  δ[:, M] = −W[:, M]
//! ```
//!
//! With `W̃ = W − G Ĥ⁻¹` (the Newton-shifted weights) and `S = (Ĥ⁻¹)[M, M]`,
//! the constrained minimizer is
//!
//! ```text
//! δ* = −G Ĥ⁻¹ − W̃[:, M] S⁻¹ (Ĥ⁻¹)[M, :]
//! ```
//!
//! and `q(δ*) − q(−G Ĥ⁻¹) = ½ tr(W̃[:, M] S⁻¹ W̃[:, M]ᵀ)`, the saliency of
//! `M`. Mask selection minimizes that saliency. The Lagrange multiplier of
//! the constraint is eliminated in closed form and never materialized.

use crate::error::{PruneError, Result};
use crate::exec::ExecMode;
use crate::hessian::HessianEstimate;
use crate::matcore::{psd_inverse, trace_quad, Axis, Matrix, PruneMask};
use crate::report::PruneReportEntry;

/// Upper bound on masks visited by [`SearchStrategy::Exhaustive`].
pub const EXHAUSTIVE_LIMIT: u128 = 2_000_000;

/// Masks per batch handed to the executor during exhaustive search.
const SEARCH_CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStrategy {
    /// Every size-k mask; the global argmin.
    Exhaustive,
    /// Grow the mask one index at a time, re-scoring the joint mask each step.
    Greedy,
}

impl SearchStrategy {
    /// Exhaustive up to 12 candidates, greedy beyond.
    pub fn default_for(n: usize) -> Self {
        if n > 12 {
            SearchStrategy::Greedy
        } else {
            SearchStrategy::Exhaustive
        }
    }
}

/// A selected mask and its saliency.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneCandidate {
    pub mask: PruneMask,
    pub saliency: f64,
}

/// Closed-form constrained update for one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsSolution {
    pub mask: PruneMask,
    pub delta: Matrix,
    /// `⟨G, δ⟩ + ½ tr(δ Ĥ δᵀ)` at the returned `δ`.
    pub quad_objective: f64,
}

fn check_problem(op: &'static str, w: &Matrix, g: &Matrix, h: &HessianEstimate) -> Result<()> {
    if w.shape() != g.shape() {
        return Err(PruneError::dim(
            op,
            format!("W is {:?} but G is {:?}", w.shape(), g.shape()),
        ));
    }
    if h.dim() != w.cols() {
        return Err(PruneError::dim(
            op,
            format!("Hessian is {0}x{0} but W has {1} columns", h.dim(), w.cols()),
        ));
    }
    Ok(())
}

/// `W̃ = W − G Ĥ⁻¹`.
pub fn newton_shift(w: &Matrix, g: &Matrix, h: &HessianEstimate) -> Result<Matrix> {
    check_problem("newton_shift", w, g, h)?;
    Ok(w.sub(&g.matmul(h.inverse())))
}

/// `⟨G, δ⟩ + ½ tr(δ Ĥ δᵀ)`.
pub fn quad_objective(g: &Matrix, h: &Matrix, delta: &Matrix) -> f64 {
    g.frobenius_dot(delta) + 0.5 * delta.matmul(h).frobenius_dot(delta)
}

/// `S⁻¹` for the principal block `S = Hinv[M, M]`.
pub(crate) fn principal_block_inverse(op: &'static str, hinv: &Matrix, idx: &[usize]) -> Result<Matrix> {
    let block = hinv.select_block(idx, idx);
    psd_inverse(&block, 0.0).map_err(|e| match e {
        PruneError::Singular { pivot, .. } => PruneError::Singular { op, pivot: idx[pivot] },
        other => other,
    })
}

/// `tr(W̃[:, M] ((Ĥ⁻¹)[M, M])⁻¹ W̃[:, M]ᵀ)`.
pub fn saliency_full(wt: &Matrix, hinv: &Matrix, mask: &PruneMask) -> Result<f64> {
    const OP: &str = "saliency_full";
    if !hinv.is_square() || hinv.rows() != wt.cols() || mask.host_dim() != wt.cols() {
        return Err(PruneError::dim(
            OP,
            format!(
                "W̃ is {:?}, Hinv is {:?}, mask host dimension {}",
                wt.shape(),
                hinv.shape(),
                mask.host_dim()
            ),
        ));
    }
    if mask.is_empty() {
        return Err(PruneError::pre(OP, "mask must not be empty"));
    }
    saliency_cols(OP, wt, hinv, mask.indices())
}

pub(crate) fn saliency_cols(op: &'static str, wt: &Matrix, hinv: &Matrix, idx: &[usize]) -> Result<f64> {
    let s_inv = principal_block_inverse(op, hinv, idx)?;
    trace_quad(&s_inv, &wt.select_cols(idx))
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Advances `c` to the next k-combination of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Minimizes `score` over size-`k` subsets of `0..n`.
///
/// Ties go to the lexicographically smallest mask (exhaustive) or the
/// smallest added index (greedy).
pub(crate) fn search_mask<F>(
    op: &'static str,
    n: usize,
    k: usize,
    strategy: SearchStrategy,
    mode: ExecMode,
    score: F,
) -> Result<(Vec<usize>, f64)>
where
    F: Fn(&[usize]) -> Result<f64> + Sync + Send,
{
    if k == 0 || k >= n {
        return Err(PruneError::pre(op, format!("need 0 < k < {n}, got k = {k}")));
    }
    match strategy {
        SearchStrategy::Exhaustive => {
            let count = binomial(n, k);
            if count > EXHAUSTIVE_LIMIT {
                return Err(PruneError::CombinatorialLimit {
                    op,
                    count,
                    limit: EXHAUSTIVE_LIMIT,
                });
            }
            let mut best: Option<(Vec<usize>, f64)> = None;
            let mut current: Vec<usize> = (0..k).collect();
            let mut more = true;
            while more {
                let mut chunk = Vec::with_capacity(SEARCH_CHUNK);
                while more && chunk.len() < SEARCH_CHUNK {
                    chunk.push(current.clone());
                    more = next_combination(&mut current, n);
                }
                let scores = mode.map(&chunk, |c| score(c));
                for (c, s) in chunk.into_iter().zip(scores) {
                    let s = s?;
                    if best.as_ref().is_none_or(|(_, b)| s < *b) {
                        best = Some((c, s));
                    }
                }
            }
            Ok(best.expect("at least one combination"))
        }
        SearchStrategy::Greedy => {
            let mut chosen: Vec<usize> = Vec::with_capacity(k);
            let mut last = f64::NAN;
            for _ in 0..k {
                let candidates: Vec<Vec<usize>> = (0..n)
                    .filter(|j| !chosen.contains(j))
                    .map(|j| {
                        let mut c = chosen.clone();
                        c.push(j);
                        c.sort_unstable();
                        c
                    })
                    .collect();
                let scores = mode.map(&candidates, |c| score(c));
                let mut best: Option<(Vec<usize>, f64)> = None;
                for (c, s) in candidates.into_iter().zip(scores) {
                    let s = s?;
                    if best.as_ref().is_none_or(|(_, b)| s < *b) {
                        best = Some((c, s));
                    }
                }
                let (c, s) = best.expect("at least one candidate");
                chosen = c;
                last = s;
            }
            Ok((chosen, last))
        }
    }
}

/// Picks `k` columns to prune by minimizing the saliency.
pub fn select_mask_full(
    w: &Matrix,
    g: &Matrix,
    h: &HessianEstimate,
    k: usize,
    strategy: SearchStrategy,
) -> Result<PruneCandidate> {
    select_mask_full_in(ExecMode::default(), w, g, h, k, strategy)
}

/// [`select_mask_full`] with an explicit execution mode.
pub fn select_mask_full_in(
    mode: ExecMode,
    w: &Matrix,
    g: &Matrix,
    h: &HessianEstimate,
    k: usize,
    strategy: SearchStrategy,
) -> Result<PruneCandidate> {
    const OP: &str = "select_mask_full";
    check_problem(OP, w, g, h)?;
    let wt = newton_shift(w, g, h)?;
    let hinv = h.inverse();
    let (idx, saliency) = search_mask(OP, w.cols(), k, strategy, mode, |c| saliency_cols(OP, &wt, hinv, c))?;
    Ok(PruneCandidate {
        mask: PruneMask::new(idx, Axis::Column, w.cols())?,
        saliency,
    })
}

/// The constrained minimizer `δ*` for a given mask.
///
/// An empty mask yields the unconstrained Newton step `−G Ĥ⁻¹`.
pub fn obs_update_full(w: &Matrix, g: &Matrix, h: &HessianEstimate, mask: &PruneMask) -> Result<ObsSolution> {
    const OP: &str = "obs_update_full";
    check_problem(OP, w, g, h)?;
    if mask.host_dim() != w.cols() || mask.axis() != Axis::Column {
        return Err(PruneError::dim(
            OP,
            format!("column mask over {} for {} columns", mask.host_dim(), w.cols()),
        ));
    }
    let hinv = h.inverse();
    let newton = g.matmul(hinv);
    let mut delta = newton.scale(-1.0);
    if !mask.is_empty() {
        let idx = mask.indices();
        let wt = w.sub(&newton);
        let s_inv = principal_block_inverse(OP, hinv, idx)?;
        let all: Vec<usize> = (0..w.cols()).collect();
        let correction = wt.select_cols(idx).matmul(&s_inv).matmul(&hinv.select_block(idx, &all));
        delta = delta.sub(&correction);
    }
    let quad_objective = quad_objective(g, h.matrix(), &delta);
    Ok(ObsSolution {
        mask: mask.clone(),
        delta,
        quad_objective,
    })
}

/// Selects a mask, applies the optimal update and returns the pruned weights.
///
/// Masked columns of the result are written as exact zeros.
pub fn prune_full_matrix(
    w: &Matrix,
    g: &Matrix,
    h: &HessianEstimate,
    k: usize,
    strategy: SearchStrategy,
) -> Result<(Matrix, PruneReportEntry)> {
    let candidate = select_mask_full(w, g, h, k, strategy)?;
    let solution = obs_update_full(w, g, h, &candidate.mask)?;
    let mut pruned = w.add(&solution.delta);
    pruned.fill_cols(candidate.mask.indices(), 0.0);
    Ok((
        pruned,
        PruneReportEntry {
            mask: candidate.mask,
            saliency: candidate.saliency,
            quad_objective: solution.quad_objective,
        },
    ))
}
