//! Damped curvature estimates built from gradients or calibration inputs.

use std::collections::VecDeque;

use crate::error::{PruneError, Result};
use crate::matcore::{psd_inverse, Matrix};

/// Which product the estimate was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianMode {
    /// `GᵀG`: correlations between columns of `G`.
    GradientColumn,
    /// `GGᵀ`: correlations between rows of `G`.
    GradientRow,
    /// `XXᵀ` for features-by-samples calibration inputs.
    Activation,
}

/// Ridge term added before inversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Damping {
    /// Use this λ as is.
    Absolute(f64),
    /// λ = ratio · mean of the undamped diagonal.
    Relative(f64),
}

impl Default for Damping {
    fn default() -> Self {
        Damping::Relative(1e-2)
    }
}

impl From<f64> for Damping {
    fn from(lambda: f64) -> Self {
        Damping::Absolute(lambda)
    }
}

impl Damping {
    /// Resolves to an absolute λ for the given undamped Gram matrix.
    pub fn resolve(self, gram: &Matrix) -> Result<f64> {
        let lambda = match self {
            Damping::Absolute(l) => l,
            Damping::Relative(ratio) => {
                let n = gram.rows().max(1) as f64;
                ratio * gram.trace() / n
            }
        };
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(PruneError::pre(
                "Damping::resolve",
                format!("damping must be finite and >= 0, got {lambda}"),
            ));
        }
        Ok(lambda)
    }
}

/// Symmetric positive-definite curvature estimate with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianEstimate {
    matrix: Matrix,
    inverse: Matrix,
    lambda: f64,
    mode: HessianMode,
}

impl HessianEstimate {
    /// Damps an undamped Gram matrix and inverts it once.
    pub fn from_gram(gram: &Matrix, damping: impl Into<Damping>, mode: HessianMode) -> Result<Self> {
        let lambda = damping.into().resolve(gram)?;
        let inverse = psd_inverse(gram, lambda)?;
        Ok(Self {
            matrix: gram.symmetrize().add_diag(lambda),
            inverse,
            lambda,
            mode,
        })
    }

    /// `I_n` with no damping.
    pub fn identity(n: usize, mode: HessianMode) -> Self {
        Self {
            matrix: Matrix::identity(n),
            inverse: Matrix::identity(n),
            lambda: 0.0,
            mode,
        }
    }

    /// The damped matrix `Gram + λI`.
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn inverse(&self) -> &Matrix {
        &self.inverse
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mode(&self) -> HessianMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }
}

/// `GᵀG + λI` (n×n for an m×n gradient).
pub fn hessian_from_gradient_cols(g: &Matrix, damping: impl Into<Damping>) -> Result<HessianEstimate> {
    HessianEstimate::from_gram(&g.t_matmul(g), damping, HessianMode::GradientColumn)
}

/// `GGᵀ + λI` (r×r for an r×n gradient).
pub fn hessian_from_gradient_rows(g: &Matrix, damping: impl Into<Damping>) -> Result<HessianEstimate> {
    HessianEstimate::from_gram(&g.matmul_t(g), damping, HessianMode::GradientRow)
}

/// `XXᵀ + λI` for features-by-samples `X`, the curvature of `‖ŴX − WX‖²`
/// up to a factor of two shared by every row of `W`.
pub fn hessian_from_activations(x: &Matrix, damping: impl Into<Damping>) -> Result<HessianEstimate> {
    HessianEstimate::from_gram(&x.matmul_t(x), damping, HessianMode::Activation)
}

/// Mean of recent gradient batches.
///
/// With a window, only the newest `window` batches count; without one, every
/// batch since the last [`reset`](Self::reset) does.
#[derive(Debug, Clone, Default)]
pub struct GradientAccumulator {
    window: Option<usize>,
    batches: VecDeque<Matrix>,
    sum: Option<Matrix>,
    count: usize,
}

impl GradientAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_window(window: usize) -> Self {
        Self {
            window: Some(window.max(1)),
            ..Self::default()
        }
    }

    fn shape(&self) -> Option<(usize, usize)> {
        self.sum
            .as_ref()
            .map(Matrix::shape)
            .or_else(|| self.batches.front().map(Matrix::shape))
    }

    pub fn push(&mut self, g: &Matrix) -> Result<()> {
        if let Some(shape) = self.shape() {
            if shape != g.shape() {
                return Err(PruneError::dim(
                    "GradientAccumulator::push",
                    format!("batch is {:?}, earlier batches were {shape:?}", g.shape()),
                ));
            }
        }
        match self.window {
            Some(w) => {
                if self.batches.len() == w {
                    self.batches.pop_front();
                }
                self.batches.push_back(g.clone());
            }
            None => match &mut self.sum {
                Some(sum) => sum.axpy(1.0, g),
                None => self.sum = Some(g.clone()),
            },
        }
        self.count += 1;
        Ok(())
    }

    /// Number of batches currently contributing to the mean.
    pub fn len(&self) -> usize {
        match self.window {
            Some(_) => self.batches.len(),
            None => self.count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean(&self) -> Option<Matrix> {
        match self.window {
            Some(_) => {
                let mut it = self.batches.iter();
                let mut sum = it.next()?.clone();
                for g in it {
                    sum.axpy(1.0, g);
                }
                Some(sum.scale(1.0 / self.batches.len() as f64))
            }
            None => self.sum.as_ref().map(|s| s.scale(1.0 / self.count as f64)),
        }
    }

    /// Window batches stacked as rows and scaled by `1/√T`, so that
    /// `SᵀS` is the mean of the per-batch `GᵀG`. `None` without a window.
    pub fn stacked_rows(&self) -> Option<Matrix> {
        self.window?;
        let first = self.batches.front()?;
        let (rows, cols) = first.shape();
        let scale = 1.0 / (self.batches.len() as f64).sqrt();
        let mut data = Vec::with_capacity(rows * cols * self.batches.len());
        for g in &self.batches {
            data.extend(g.data().iter().map(|v| v * scale));
        }
        Matrix::new(rows * self.batches.len(), cols, data).ok()
    }

    /// Column-wise counterpart of [`stacked_rows`](Self::stacked_rows):
    /// `S Sᵀ` is the mean of the per-batch `G Gᵀ`.
    pub fn stacked_cols(&self) -> Option<Matrix> {
        self.window?;
        let first = self.batches.front()?;
        let (rows, cols) = first.shape();
        let t = self.batches.len();
        let scale = 1.0 / (t as f64).sqrt();
        Some(Matrix::from_fn(rows, cols * t, |i, j| self.batches[j / cols][(i, j % cols)] * scale))
    }

    pub fn reset(&mut self) {
        self.batches.clear();
        self.sum = None;
        self.count = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{random_matrix, seeded_rng};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn column_mode_examples() {
        let h = hessian_from_gradient_cols(&Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]), 0.0).unwrap();
        assert_eq!(h.matrix(), &Matrix::diag(&[1.0, 4.0]));
        assert_eq!(h.mode(), HessianMode::GradientColumn);

        let h = hessian_from_gradient_cols(&Matrix::from_rows(&[[1.0, 1.0]]), 0.5).unwrap();
        assert_eq!(h.matrix(), &Matrix::from_rows(&[[1.5, 1.0], [1.0, 1.5]]));
        assert_eq!(h.lambda(), 0.5);
    }

    #[test]
    fn column_mode_random_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_matrix(&mut rng, 3, 5, 1.0);
        let h = hessian_from_gradient_cols(&g, 1e-3).unwrap();
        // Independent multiply-back against GᵀG + λI built by hand.
        let manual = Matrix::from_fn(5, 5, |i, j| {
            let mut s = if i == j { 1e-3 } else { 0.0 };
            for r in 0..3 {
                s += g[(r, i)] * g[(r, j)];
            }
            s
        });
        assert!(h.matrix().max_abs_diff(&manual) < 1e-14);
        let prod = h.inverse().matmul(&manual);
        assert!(prod.max_abs_diff(&Matrix::identity(5)) < 1e-8);
    }

    #[test]
    fn row_mode_examples_and_duality() {
        let h = hessian_from_gradient_rows(&Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]), 0.0).unwrap();
        assert_eq!(h.matrix(), &Matrix::diag(&[1.0, 4.0]));
        let h = hessian_from_gradient_rows(&Matrix::column(&[1.0, 1.0]), 0.5).unwrap();
        assert_eq!(h.matrix(), &Matrix::from_rows(&[[1.5, 1.0], [1.0, 1.5]]));
        assert_eq!(h.mode(), HessianMode::GradientRow);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_matrix(&mut rng, 4, 6, 1.0);
        let rows = hessian_from_gradient_rows(&g, 0.1).unwrap();
        let cols = hessian_from_gradient_cols(&g.transpose(), 0.1).unwrap();
        assert_eq!(rows.matrix(), cols.matrix());
    }

    #[test]
    fn activation_examples() {
        let h = hessian_from_activations(&Matrix::identity(2), 0.0).unwrap();
        assert_eq!(h.matrix(), &Matrix::identity(2));
        let h = hessian_from_activations(&Matrix::from_rows(&[[1.0, 1.0], [0.0, 0.0]]), 1.0).unwrap();
        assert_eq!(h.matrix(), &Matrix::from_rows(&[[3.0, 0.0], [0.0, 1.0]]));
    }

    #[test]
    fn damping_floor_holds_under_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 4, 64, 1.0);
        for h in [
            hessian_from_activations(&x, 0.3).unwrap(),
            hessian_from_gradient_cols(&x, Damping::Relative(1e-2)).unwrap(),
            hessian_from_gradient_rows(&x, 0.01).unwrap(),
        ] {
            let n = h.dim();
            for _ in 0..1000 {
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let vm = Matrix::from_rows(std::slice::from_ref(&v));
                let quad = vm.matmul(h.matrix()).matmul_t(&vm)[(0, 0)];
                let norm2: f64 = v.iter().map(|a| a * a).sum();
                assert!(quad >= h.lambda() * norm2 - 1e-10 * (1.0 + quad.abs()));
            }
            assert!(h.inverse().symmetry_error() <= 1e-8);
            assert!(h.matrix().matmul(h.inverse()).max_abs_diff(&Matrix::identity(n)) < 1e-8);
        }
    }

    #[test]
    fn relative_damping_uses_mean_diagonal() {
        let g = Matrix::from_rows(&[[1.0, 0.0], [0.0, 3.0]]);
        let h = hessian_from_gradient_cols(&g, Damping::Relative(0.1)).unwrap();
        assert!((h.lambda() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rank_deficient_without_damping_is_singular() {
        let g = Matrix::from_rows(&[[1.0, 1.0]]);
        assert!(matches!(
            hessian_from_gradient_cols(&g, 0.0),
            Err(PruneError::Singular { .. })
        ));
        assert!(hessian_from_gradient_cols(&g, -1.0).is_err());
    }

    #[test]
    fn accumulator_means() {
        let g = Matrix::from_rows(&[[1.0, -2.0], [0.5, 4.0]]);
        let mut acc = GradientAccumulator::new();
        assert!(acc.mean().is_none());
        acc.push(&g).unwrap();
        assert_eq!(acc.mean().unwrap(), g);
        acc.push(&g.scale(-1.0)).unwrap();
        assert_eq!(acc.mean().unwrap(), Matrix::zeros(2, 2));
        assert!(acc.push(&Matrix::zeros(1, 2)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batches: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, 2, 3, 1.0)).collect();
        let mut acc = GradientAccumulator::new();
        for b in &batches {
            acc.push(b).unwrap();
        }
        let direct = Matrix::from_fn(2, 3, |i, j| batches.iter().map(|b| b[(i, j)]).sum::<f64>() / 3.0);
        assert!(acc.mean().unwrap().max_abs_diff(&direct) < 1e-15);
        acc.reset();
        assert!(acc.is_empty());
    }

    #[test]
    fn windowed_accumulator_keeps_newest() {
        let mut acc = GradientAccumulator::with_window(2);
        for v in [1.0, 2.0, 6.0] {
            acc.push(&Matrix::from_rows(&[[v]])).unwrap();
        }
        assert_eq!(acc.len(), 2);
        assert_eq!(acc.mean().unwrap()[(0, 0)], 4.0);
    }

    #[test]
    fn stacked_windows_average_outer_products() {
        let mut rng = seeded_rng(9);
        let batches: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, 4, 3, 1.0)).collect();
        let mut acc = GradientAccumulator::with_window(3);
        for g in &batches {
            acc.push(g).unwrap();
        }
        let mut cols = Matrix::zeros(3, 3);
        let mut rows = Matrix::zeros(4, 4);
        for g in &batches {
            cols.axpy(1.0 / 3.0, &g.t_matmul(g));
            rows.axpy(1.0 / 3.0, &g.matmul_t(g));
        }
        let r = acc.stacked_rows().unwrap();
        let c = acc.stacked_cols().unwrap();
        assert_eq!((r.shape(), c.shape()), ((12, 3), (4, 9)));
        assert!(r.t_matmul(&r).max_abs_diff(&cols) < 1e-12);
        assert!(c.matmul_t(&c).max_abs_diff(&rows) < 1e-12);
        assert!(GradientAccumulator::new().stacked_rows().is_none());
    }
}
