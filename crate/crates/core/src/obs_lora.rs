//! Joint structured pruning of a LoRA pair `(A: r×n, B: m×r)`.
//!
//! One mask over the rank dimension removes columns of `B` and the matching
//! rows of `A`. Given the mask, the two constrained quadratics separate:
//! `B` uses the column-mode estimate `Ĥ_B = G_BᵀG_B + λI` exactly as a full
//! matrix would, and `A` uses the row-mode estimate `Ĥ_A = G_A G_Aᵀ + λI`
//! acting from the left. The factors only interact through mask selection,
//! which minimizes the sum of both saliencies.

use std::io::Write;

use crate::error::{PruneError, Result};
use crate::exec::ExecMode;
use crate::hessian::{hessian_from_gradient_cols, hessian_from_gradient_rows, Damping, HessianEstimate, HessianMode};
use crate::matcore::{parse_text_tokens, trace_quad, write_matrix_text, Axis, Matrix, PruneMask};
use crate::obs_full::{
    principal_block_inverse, quad_objective, saliency_cols, search_mask, PruneCandidate, SearchStrategy,
};

/// Writes a `rank alpha` header line, then `A` and `B` in matrix text format.
pub fn write_adapter_text<W: Write>(out: &mut W, adapter: &LoraAdapter) -> Result<()> {
    writeln!(out, "{} {:?}", adapter.rank(), adapter.alpha())?;
    write_matrix_text(out, adapter.a())?;
    write_matrix_text(out, adapter.b())
}

pub fn read_adapter_text(text: &str) -> Result<LoraAdapter> {
    let mut tokens = text.split_whitespace();
    let rank: usize = match tokens.next() {
        Some(t) => t.parse().map_err(|_| PruneError::Parse(format!("bad adapter rank {t:?}")))?,
        None => return Err(PruneError::Parse("missing adapter header".into())),
    };
    let alpha: f64 = match tokens.next() {
        Some(t) => t.parse().map_err(|_| PruneError::Parse(format!("bad adapter alpha {t:?}")))?,
        None => return Err(PruneError::Parse("missing adapter alpha".into())),
    };
    let a = parse_text_tokens(&mut tokens)?;
    let b = parse_text_tokens(&mut tokens)?;
    if let Some(extra) = tokens.next() {
        return Err(PruneError::Parse(format!("trailing data {extra:?}")));
    }
    if a.rows() != rank {
        return Err(PruneError::Parse(format!("header rank {rank} but A has {} rows", a.rows())));
    }
    LoraAdapter::new(a, b, alpha)
}

/// Residual allowed in pruned slices before compaction.
pub const COMPACTION_TOL: f64 = 1e-10;

/// Low-rank update `ΔW = (α / r) · B · A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    a: Matrix,
    b: Matrix,
    alpha: f64,
}

impl LoraAdapter {
    pub fn new(a: Matrix, b: Matrix, alpha: f64) -> Result<Self> {
        if a.rows() != b.cols() {
            return Err(PruneError::dim(
                "LoraAdapter::new",
                format!("A is {:?}, B is {:?}", a.shape(), b.shape()),
            ));
        }
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(PruneError::pre("LoraAdapter::new", format!("alpha must be > 0, got {alpha}")));
        }
        Ok(Self { a, b, alpha })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    /// Input dimension `n`.
    pub fn in_dim(&self) -> usize {
        self.a.cols()
    }

    /// Output dimension `m`.
    pub fn out_dim(&self) -> usize {
        self.b.rows()
    }

    /// `s = α / r`; zero for a rank-0 adapter.
    pub fn scaling(&self) -> f64 {
        if self.rank() == 0 {
            0.0
        } else {
            self.alpha / self.rank() as f64
        }
    }

    /// `(α / r) · B · A`.
    pub fn delta_w(&self) -> Matrix {
        self.b.matmul(&self.a).scale(self.scaling())
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(PruneError::pre("LoraAdapter::with_alpha", format!("alpha must be > 0, got {alpha}")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    /// Mutable access to `(A, B)`; shapes cannot change through it.
    pub fn factors_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        (&mut self.a, &mut self.b)
    }

    pub fn into_parts(self) -> (Matrix, Matrix, f64) {
        (self.a, self.b, self.alpha)
    }
}

/// `(∇_A L, ∇_B L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrads {
    pub grad_a: Matrix,
    pub grad_b: Matrix,
}

impl LoraGrads {
    pub fn zeros_like(adapter: &LoraAdapter) -> Self {
        Self {
            grad_a: Matrix::zeros(adapter.rank(), adapter.in_dim()),
            grad_b: Matrix::zeros(adapter.out_dim(), adapter.rank()),
        }
    }
}

/// Row-mode `Ĥ_A` and column-mode `Ĥ_B`, both r×r.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraHessians {
    pub h_a: HessianEstimate,
    pub h_b: HessianEstimate,
}

impl LoraHessians {
    pub fn from_grads(grads: &LoraGrads, damping: Damping) -> Result<Self> {
        Ok(Self {
            h_a: hessian_from_gradient_rows(&grads.grad_a, damping)?,
            h_b: hessian_from_gradient_cols(&grads.grad_b, damping)?,
        })
    }

    pub fn identity(rank: usize) -> Self {
        Self {
            h_a: HessianEstimate::identity(rank, HessianMode::GradientRow),
            h_b: HessianEstimate::identity(rank, HessianMode::GradientColumn),
        }
    }
}

/// How α follows the rank after a compaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaPolicy {
    Fixed(f64),
    /// α = r / 2
    ProportionalHalf,
    /// α = r
    Proportional,
    /// α = 2r
    ProportionalDouble,
}

impl AlphaPolicy {
    pub fn alpha_for(self, rank: usize) -> f64 {
        let r = rank as f64;
        match self {
            AlphaPolicy::Fixed(a) => a,
            AlphaPolicy::ProportionalHalf => r / 2.0,
            AlphaPolicy::Proportional => r,
            AlphaPolicy::ProportionalDouble => 2.0 * r,
        }
    }
}

/// Joint mask, per-factor updates and the joint saliency.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraObsSolution {
    pub mask: PruneMask,
    pub delta_a: Matrix,
    pub delta_b: Matrix,
    pub saliency: f64,
    /// Sum of both factors' local objectives at the returned updates.
    pub quad_objective: f64,
}

fn check_lora(op: &'static str, adapter: &LoraAdapter, grads: &LoraGrads, hessians: &LoraHessians) -> Result<()> {
    let r = adapter.rank();
    if grads.grad_a.shape() != adapter.a.shape() || grads.grad_b.shape() != adapter.b.shape() {
        return Err(PruneError::dim(
            op,
            format!(
                "gradients {:?}/{:?} for factors {:?}/{:?}",
                grads.grad_a.shape(),
                grads.grad_b.shape(),
                adapter.a.shape(),
                adapter.b.shape()
            ),
        ));
    }
    if hessians.h_a.dim() != r || hessians.h_b.dim() != r {
        return Err(PruneError::dim(
            op,
            format!("Hessians are {}/{} for rank {r}", hessians.h_a.dim(), hessians.h_b.dim()),
        ));
    }
    Ok(())
}

fn check_rank_mask(op: &'static str, mask: &PruneMask, rank: usize) -> Result<()> {
    if mask.host_dim() != rank {
        return Err(PruneError::dim(op, format!("mask over {} for rank {rank}", mask.host_dim())));
    }
    Ok(())
}

/// `Ã = A − Ĥ_A⁻¹ G_A` and `B̃ = B − G_B Ĥ_B⁻¹`.
pub fn lora_shifts(adapter: &LoraAdapter, grads: &LoraGrads, hessians: &LoraHessians) -> Result<(Matrix, Matrix)> {
    check_lora("lora_shifts", adapter, grads, hessians)?;
    let a_tilde = adapter.a.sub(&hessians.h_a.inverse().matmul(&grads.grad_a));
    let b_tilde = adapter.b.sub(&grads.grad_b.matmul(hessians.h_b.inverse()));
    Ok((a_tilde, b_tilde))
}

fn a_term(op: &'static str, a_tilde: &Matrix, hinv_a: &Matrix, idx: &[usize]) -> Result<f64> {
    let s_inv = principal_block_inverse(op, hinv_a, idx)?;
    // tr(Ã[M,:]ᵀ S⁻¹ Ã[M,:]) summed over the columns of Ã[M,:].
    trace_quad(&s_inv, &a_tilde.select_rows(idx).transpose())
}

fn joint_saliency(op: &'static str, a_tilde: &Matrix, b_tilde: &Matrix, hinv_a: &Matrix, hinv_b: &Matrix, idx: &[usize]) -> Result<f64> {
    Ok(saliency_cols(op, b_tilde, hinv_b, idx)? + a_term(op, a_tilde, hinv_a, idx)?)
}

/// B-term plus A-term saliency for a shared rank mask.
pub fn saliency_lora(
    a_tilde: &Matrix,
    b_tilde: &Matrix,
    hinv_a: &Matrix,
    hinv_b: &Matrix,
    mask: &PruneMask,
) -> Result<f64> {
    const OP: &str = "saliency_lora";
    let r = a_tilde.rows();
    if b_tilde.cols() != r || hinv_a.shape() != (r, r) || hinv_b.shape() != (r, r) {
        return Err(PruneError::dim(
            OP,
            format!(
                "Ã {:?}, B̃ {:?}, Hinv_A {:?}, Hinv_B {:?}",
                a_tilde.shape(),
                b_tilde.shape(),
                hinv_a.shape(),
                hinv_b.shape()
            ),
        ));
    }
    check_rank_mask(OP, mask, r)?;
    if mask.is_empty() {
        return Err(PruneError::pre(OP, "mask must not be empty"));
    }
    joint_saliency(OP, a_tilde, b_tilde, hinv_a, hinv_b, mask.indices())
}

pub fn select_mask_lora(
    adapter: &LoraAdapter,
    grads: &LoraGrads,
    hessians: &LoraHessians,
    k: usize,
    strategy: SearchStrategy,
) -> Result<PruneCandidate> {
    select_mask_lora_in(ExecMode::default(), adapter, grads, hessians, k, strategy)
}

pub fn select_mask_lora_in(
    mode: ExecMode,
    adapter: &LoraAdapter,
    grads: &LoraGrads,
    hessians: &LoraHessians,
    k: usize,
    strategy: SearchStrategy,
) -> Result<PruneCandidate> {
    const OP: &str = "select_mask_lora";
    let (a_tilde, b_tilde) = lora_shifts(adapter, grads, hessians)?;
    let (hinv_a, hinv_b) = (hessians.h_a.inverse(), hessians.h_b.inverse());
    let (idx, saliency) = search_mask(OP, adapter.rank(), k, strategy, mode, |c| {
        joint_saliency(OP, &a_tilde, &b_tilde, hinv_a, hinv_b, c)
    })?;
    Ok(PruneCandidate {
        mask: PruneMask::new(idx, Axis::Column, adapter.rank())?,
        saliency,
    })
}

/// Closed-form per-factor updates for a shared mask.
pub fn lora_obs_update(
    adapter: &LoraAdapter,
    grads: &LoraGrads,
    hessians: &LoraHessians,
    mask: &PruneMask,
) -> Result<LoraObsSolution> {
    const OP: &str = "lora_obs_update";
    check_lora(OP, adapter, grads, hessians)?;
    check_rank_mask(OP, mask, adapter.rank())?;
    let (a_tilde, b_tilde) = lora_shifts(adapter, grads, hessians)?;
    let (hinv_a, hinv_b) = (hessians.h_a.inverse(), hessians.h_b.inverse());
    let idx = mask.indices();
    let all: Vec<usize> = (0..adapter.rank()).collect();

    let (delta_b, delta_a) = ExecMode::default().join(
        || -> Result<Matrix> {
            let mut d = grads.grad_b.matmul(hinv_b).scale(-1.0);
            if !idx.is_empty() {
                let s_inv = principal_block_inverse(OP, hinv_b, idx)?;
                d = d.sub(&b_tilde.select_cols(idx).matmul(&s_inv).matmul(&hinv_b.select_block(idx, &all)));
            }
            Ok(d)
        },
        || -> Result<Matrix> {
            let mut d = hinv_a.matmul(&grads.grad_a).scale(-1.0);
            if !idx.is_empty() {
                let s_inv = principal_block_inverse(OP, hinv_a, idx)?;
                d = d.sub(&hinv_a.select_block(&all, idx).matmul(&s_inv).matmul(&a_tilde.select_rows(idx)));
            }
            Ok(d)
        },
    );
    let (delta_a, delta_b) = (delta_a?, delta_b?);

    let saliency = if idx.is_empty() {
        0.0
    } else {
        joint_saliency(OP, &a_tilde, &b_tilde, hinv_a, hinv_b, idx)?
    };
    // The A-factor objective is the transposed column problem.
    let quad = quad_objective(&grads.grad_b, hessians.h_b.matrix(), &delta_b)
        + quad_objective(&grads.grad_a.transpose(), hessians.h_a.matrix(), &delta_a.transpose());
    Ok(LoraObsSolution {
        mask: mask.clone(),
        delta_a,
        delta_b,
        saliency,
        quad_objective: quad,
    })
}

/// `(A + δ_A, B + δ_B)` with the masked slices written as exact zeros.
pub fn apply_lora_update(adapter: &LoraAdapter, solution: &LoraObsSolution) -> Result<LoraAdapter> {
    let mut a = adapter.a.add(&solution.delta_a);
    let mut b = adapter.b.add(&solution.delta_b);
    a.fill_rows(solution.mask.indices(), 0.0);
    b.fill_cols(solution.mask.indices(), 0.0);
    LoraAdapter::new(a, b, adapter.alpha)
}

/// Physically removes masked (already zero) rank slices. α is unchanged.
pub fn compact_rank(adapter: &LoraAdapter, mask: &PruneMask) -> Result<LoraAdapter> {
    const OP: &str = "compact_rank";
    check_rank_mask(OP, mask, adapter.rank())?;
    let idx = mask.indices();
    let residual = adapter
        .a
        .select_rows(idx)
        .max_abs()
        .max(adapter.b.select_cols(idx).max_abs());
    if residual > COMPACTION_TOL {
        return Err(PruneError::ContractViolation {
            op: OP,
            detail: format!("masked slices are not zero (max |entry| = {residual:.3e})"),
        });
    }
    let kept = mask.kept();
    LoraAdapter::new(adapter.a.select_rows(&kept), adapter.b.select_cols(&kept), adapter.alpha)
}

/// Select, update and compact in one step. α is left for the caller.
pub fn prune_lora_step(
    adapter: &LoraAdapter,
    grads: &LoraGrads,
    hessians: &LoraHessians,
    k: usize,
    strategy: SearchStrategy,
) -> Result<(LoraAdapter, LoraObsSolution)> {
    let candidate = select_mask_lora(adapter, grads, hessians, k, strategy)?;
    let solution = lora_obs_update(adapter, grads, hessians, &candidate.mask)?;
    let updated = apply_lora_update(adapter, &solution)?;
    Ok((compact_rank(&updated, &candidate.mask)?, solution))
}
