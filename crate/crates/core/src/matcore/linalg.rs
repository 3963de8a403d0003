use super::{Axis, Matrix, PruneMask};
use crate::error::{PruneError, Result};

const SYMMETRY_RTOL: f64 = 1e-9;

/// `M` restricted to the masked columns, order preserved.
pub fn submatrix_cols(m: &Matrix, mask: &PruneMask) -> Result<Matrix> {
    const OP: &str = "submatrix_cols";
    if mask.axis() != Axis::Column {
        return Err(PruneError::pre(OP, "mask must index columns"));
    }
    if mask.host_dim() != m.cols() {
        return Err(PruneError::dim(
            OP,
            format!("mask over {} columns, matrix has {}", mask.host_dim(), m.cols()),
        ));
    }
    Ok(m.select_cols(mask.indices()))
}

/// `M` restricted to the masked rows, order preserved.
pub fn submatrix_rows(m: &Matrix, mask: &PruneMask) -> Result<Matrix> {
    const OP: &str = "submatrix_rows";
    if mask.axis() != Axis::Row {
        return Err(PruneError::pre(OP, "mask must index rows"));
    }
    if mask.host_dim() != m.rows() {
        return Err(PruneError::dim(
            OP,
            format!("mask over {} rows, matrix has {}", mask.host_dim(), m.rows()),
        ));
    }
    Ok(m.select_rows(mask.indices()))
}

/// `M[rows_mask, cols_mask]`. Only host dimensions are checked, so a single
/// mask can select a principal block.
pub fn submatrix_block(m: &Matrix, rows_mask: &PruneMask, cols_mask: &PruneMask) -> Result<Matrix> {
    if rows_mask.host_dim() != m.rows() || cols_mask.host_dim() != m.cols() {
        return Err(PruneError::dim(
            "submatrix_block",
            format!(
                "masks over {}x{}, matrix is {}x{}",
                rows_mask.host_dim(),
                cols_mask.host_dim(),
                m.rows(),
                m.cols()
            ),
        ));
    }
    Ok(m.select_block(rows_mask.indices(), cols_mask.indices()))
}

fn check_symmetric(op: &'static str, m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(PruneError::dim(
            op,
            format!("expected a square matrix, got {}x{}", m.rows(), m.cols()),
        ));
    }
    let scale = m.max_abs();
    let err = m.symmetry_error();
    if err > SYMMETRY_RTOL * scale {
        return Err(PruneError::pre(
            op,
            format!("matrix is not symmetric (max asymmetry {err:.3e}, scale {scale:.3e})"),
        ));
    }
    Ok(())
}

/// Lower Cholesky factor `L` of `sym(M) + λI`, so that `L·Lᵀ = sym(M) + λI`.
pub fn cholesky(m: &Matrix, lambda: f64) -> Result<Matrix> {
    const OP: &str = "cholesky";
    check_symmetric(OP, m)?;
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(PruneError::pre(OP, format!("damping must be finite and >= 0, got {lambda}")));
    }
    let a = m.symmetrize().add_diag(lambda);
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(PruneError::Singular { op: OP, pivot: j });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// `(M + λI)⁻¹` for symmetric `M`, via a Cholesky factorization.
///
/// The input is symmetrized first and the result is exactly symmetric.
pub fn psd_inverse(m: &Matrix, lambda: f64) -> Result<Matrix> {
    let l = cholesky(m, lambda).map_err(|e| match e {
        PruneError::Singular { pivot, .. } => PruneError::Singular {
            op: "psd_inverse",
            pivot,
        },
        other => other,
    })?;
    let n = l.rows();
    // L⁻¹ by forward substitution, one column at a time.
    let mut linv = Matrix::zeros(n, n);
    for c in 0..n {
        for i in c..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                s -= l[(i, k)] * linv[(k, c)];
            }
            linv[(i, c)] = s / l[(i, i)];
        }
    }
    // (L Lᵀ)⁻¹ = L⁻ᵀ L⁻¹; fill the upper triangle and mirror it.
    let mut inv = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for k in j..n {
                s += linv[(k, i)] * linv[(k, j)];
            }
            inv[(i, j)] = s;
            inv[(j, i)] = s;
        }
    }
    if !inv.is_finite() {
        return Err(PruneError::NonFinite {
            op: "psd_inverse",
            detail: "inverse overflowed".into(),
        });
    }
    Ok(inv)
}

/// `tr(V · B · Vᵀ)`.
pub fn trace_quad(block: &Matrix, v: &Matrix) -> Result<f64> {
    if !block.is_square() || v.cols() != block.rows() {
        return Err(PruneError::dim(
            "trace_quad",
            format!(
                "V is {}x{}, block is {}x{}",
                v.rows(),
                v.cols(),
                block.rows(),
                block.cols()
            ),
        ));
    }
    let k = block.rows();
    let mut total = 0.0;
    for r in 0..v.rows() {
        let row = v.row(r);
        for a in 0..k {
            if row[a] == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for b in 0..k {
                s += block[(a, b)] * row[b];
            }
            total += row[a] * s;
        }
    }
    Ok(total)
}
