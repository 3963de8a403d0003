//! Brute-force verifiers that share no algebra with the closed-form pruners.
//!
//! Constrained problems are solved by pinning the masked columns to `−W` and
//! solving the stationarity system of the free columns with a dense LU
//! factorization. Masks are enumerated by a plain recursive generator.

use crate::error::{PruneError, Result};
use crate::exec::ExecMode;
use crate::matcore::{Axis, Matrix, PruneMask};

/// Largest number of masks [`enumerate_masks`] will visit.
pub const ORACLE_MASK_LIMIT: u128 = 100_000;

/// Enumeration outcome: the optimum plus the full table.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_mask: PruneMask,
    pub best_objective: f64,
    pub per_mask: Vec<(PruneMask, f64)>,
}

/// LU factorization with partial pivoting, `P·M = L·U` packed in one matrix.
struct Lu {
    lu: Vec<f64>,
    perm: Vec<usize>,
    n: usize,
}

impl Lu {
    fn factor(op: &'static str, m: &Matrix) -> Result<Self> {
        let n = m.rows();
        let mut lu = m.data().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu[i * n + k].abs().total_cmp(&lu[j * n + k].abs()))
                .expect("non-empty pivot range");
            if lu[p * n + k].abs() <= 1e-14 * scale {
                return Err(PruneError::Singular { op, pivot: k });
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                for c in k + 1..n {
                    lu[i * n + c] -= f * lu[k * n + c];
                }
            }
        }
        Ok(Self { lu, perm, n })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            for c in 0..i {
                x[i] -= self.lu[i * n + c] * x[c];
            }
        }
        for i in (0..n).rev() {
            for c in i + 1..n {
                x[i] -= self.lu[i * n + c] * x[c];
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }
}

fn objective(g: &Matrix, h: &Matrix, delta: &Matrix) -> f64 {
    let (m, n) = delta.shape();
    let mut linear = 0.0;
    let mut quad = 0.0;
    for r in 0..m {
        for i in 0..n {
            linear += g[(r, i)] * delta[(r, i)];
            for j in 0..n {
                quad += delta[(r, i)] * h[(i, j)] * delta[(r, j)];
            }
        }
    }
    linear + 0.5 * quad
}

/// Exact minimizer of `⟨G, δ⟩ + ½ tr(δ H δᵀ)` with `δ[:, M] = −W[:, M]`.
///
/// `h` is the damped Hessian itself. Returns `(δ, objective)`.
pub fn solve_constrained_quadratic(w: &Matrix, g: &Matrix, h: &Matrix, mask: &PruneMask) -> Result<(Matrix, f64)> {
    const OP: &str = "solve_constrained_quadratic";
    let n = w.cols();
    if g.shape() != w.shape() || h.shape() != (n, n) || mask.host_dim() != n {
        return Err(PruneError::dim(
            OP,
            format!(
                "W {:?}, G {:?}, H {:?}, mask over {}",
                w.shape(),
                g.shape(),
                h.shape(),
                mask.host_dim()
            ),
        ));
    }
    let pinned = mask.indices();
    let free = mask.kept();
    let mut delta = Matrix::zeros(w.rows(), n);
    for &j in pinned {
        for r in 0..w.rows() {
            delta[(r, j)] = -w[(r, j)];
        }
    }
    if !free.is_empty() {
        // Stationarity on free columns: δ_F H_FF = −(G_F + δ_M H_MF).
        let lu = Lu::factor(OP, &h.select_block(&free, &free))?;
        for r in 0..w.rows() {
            let rhs: Vec<f64> = free
                .iter()
                .map(|&f| {
                    let coupling: f64 = pinned.iter().map(|&p| delta[(r, p)] * h[(p, f)]).sum();
                    -(g[(r, f)] + coupling)
                })
                .collect();
            // H_FF is symmetric, so the row system transposes to H_FF x = rhs.
            let x = lu.solve(&rhs);
            for (&f, v) in free.iter().zip(x) {
                delta[(r, f)] = v;
            }
        }
    }
    let obj = objective(g, h, &delta);
    if !obj.is_finite() {
        return Err(PruneError::NonFinite {
            op: OP,
            detail: "objective".into(),
        });
    }
    Ok((delta, obj))
}

fn collect_subsets(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for i in start..n {
        if n - i < k - current.len() {
            break;
        }
        current.push(i);
        collect_subsets(i + 1, n, k, current, out);
        current.pop();
    }
}

fn count_subsets(n: usize, k: usize) -> u128 {
    // Pascal's rule, independent of the pruners' binomial helper.
    let mut row = vec![0u128; k + 1];
    row[0] = 1;
    for _ in 0..n {
        for j in (1..=k).rev() {
            row[j] = row[j].saturating_add(row[j - 1]);
        }
    }
    row[k]
}

/// All size-`k` subsets of `0..n` in lexicographic order.
pub fn subsets(op: &'static str, n: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    if k > n {
        return Err(PruneError::pre(op, format!("k = {k} exceeds n = {n}")));
    }
    let count = count_subsets(n, k);
    if count > ORACLE_MASK_LIMIT {
        return Err(PruneError::CombinatorialLimit {
            op,
            count,
            limit: ORACLE_MASK_LIMIT,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    collect_subsets(0, n, k, &mut Vec::with_capacity(k), &mut out);
    Ok(out)
}

fn tabulate(
    op: &'static str,
    n: usize,
    k: usize,
    mode: ExecMode,
    eval: impl Fn(&PruneMask) -> Result<f64> + Sync + Send,
) -> Result<OracleResult> {
    let masks: Vec<PruneMask> = subsets(op, n, k)?
        .into_iter()
        .map(|s| PruneMask::new(s, Axis::Column, n))
        .collect::<Result<_>>()?;
    let values = mode.map(&masks, |m| eval(m));
    let mut per_mask = Vec::with_capacity(masks.len());
    for (m, v) in masks.into_iter().zip(values) {
        per_mask.push((m, v?));
    }
    let (best_mask, best_objective) = per_mask
        .iter()
        .fold(None::<&(PruneMask, f64)>, |best, e| match best {
            Some(b) if b.1 <= e.1 => Some(b),
            _ => Some(e),
        })
        .cloned()
        .expect("at least one mask");
    Ok(OracleResult {
        best_mask,
        best_objective,
        per_mask,
    })
}

/// Solves every size-`k` column mask; the optimum is the first minimal one.
pub fn enumerate_masks(w: &Matrix, g: &Matrix, h: &Matrix, k: usize) -> Result<OracleResult> {
    enumerate_masks_in(ExecMode::default(), w, g, h, k)
}

pub fn enumerate_masks_in(mode: ExecMode, w: &Matrix, g: &Matrix, h: &Matrix, k: usize) -> Result<OracleResult> {
    const OP: &str = "enumerate_masks";
    tabulate(OP, w.cols(), k, mode, |m| solve_constrained_quadratic(w, g, h, m).map(|(_, o)| o))
}

/// Summed constrained objectives of a LoRA pair for one rank mask.
///
/// The `B` problem is solved directly; the `A` problem as its transpose, with
/// `Aᵀ` pinned column-wise. `h_a` and `h_b` are the damped r×r Hessians.
pub fn lora_pair_objective(
    a: &Matrix,
    b: &Matrix,
    grad_a: &Matrix,
    grad_b: &Matrix,
    h_a: &Matrix,
    h_b: &Matrix,
    mask: &PruneMask,
) -> Result<(Matrix, Matrix, f64)> {
    let (delta_b, ob) = solve_constrained_quadratic(b, grad_b, h_b, mask)?;
    let (delta_at, oa) = solve_constrained_quadratic(&a.transpose(), &grad_a.transpose(), h_a, mask)?;
    Ok((delta_at.transpose(), delta_b, oa + ob))
}

/// Enumerates shared rank masks of a LoRA pair.
pub fn enumerate_masks_lora(
    a: &Matrix,
    b: &Matrix,
    grad_a: &Matrix,
    grad_b: &Matrix,
    h_a: &Matrix,
    h_b: &Matrix,
    k: usize,
) -> Result<OracleResult> {
    const OP: &str = "enumerate_masks_lora";
    let r = a.rows();
    if b.cols() != r {
        return Err(PruneError::dim(OP, format!("A {:?} and B {:?}", a.shape(), b.shape())));
    }
    tabulate(OP, r, k, ExecMode::default(), |m| {
        lora_pair_objective(a, b, grad_a, grad_b, h_a, h_b, m).map(|(_, _, o)| o)
    })
}

/// Central differences `(L(p + h·e) − L(p − h·e)) / 2h` per coordinate.
pub fn finite_diff_gradient(loss: impl Fn(&Matrix) -> f64, params: &Matrix, h: f64) -> Result<Matrix> {
    const OP: &str = "finite_diff_gradient";
    if h <= 0.0 || !h.is_finite() {
        return Err(PruneError::pre(OP, format!("step must be > 0, got {h}")));
    }
    let mut probe = params.clone();
    let mut grad = Matrix::zeros(params.rows(), params.cols());
    for i in 0..params.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = loss(&probe);
        probe.data_mut()[i] = orig - h;
        let down = loss(&probe);
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(PruneError::NonFinite {
                op: OP,
                detail: format!("loss at coordinate {i}"),
            });
        }
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Largest elementwise relative error `|a − b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}
