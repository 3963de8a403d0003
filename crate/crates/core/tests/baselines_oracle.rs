use nalgebra::DMatrix;
use obsprune::baselines::{
    activation_obs_prune, apply_pattern, importance_score_prune, jacobi_svd, magnitude_scores, oneshot_gradient_scores,
    reconstruction_error, svd_truncate, ColumnAggregation, PruneTarget, ScoreCriterion, ScoreMatrix, SparsityPattern,
};
use obsprune::hessian::{Damping, HessianEstimate, HessianMode};
use obsprune::matcore::Matrix;
use obsprune::obs_full::{select_mask_full, SearchStrategy};
use obsprune::oracle::subsets;
use obsprune::synth::{random_matrix, seeded_rng, uniform_matrix};
use obsprune::toymodels::{attention_loss, AttentionModule};
use proptest::prelude::*;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Least-squares compensation for a fixed mask, solved with nalgebra.
fn least_squares_error(w: &Matrix, x: &Matrix, mask: &[usize]) -> f64 {
    let free: Vec<usize> = (0..w.cols()).filter(|j| !mask.contains(j)).collect();
    let xf = to_na(&x.select_rows(&free));
    let xm = to_na(&x.select_rows(mask));
    let wm = to_na(&w.select_cols(mask));
    // Minimize ‖D_F X_F − W_M X_M‖ over D_F.
    let target = &wm * &xm;
    let gram = &xf * xf.transpose();
    let rhs = &target * xf.transpose();
    let d_f = rhs * gram.try_inverse().expect("full-rank calibration");
    let resid = d_f * &xf - target;
    resid.norm_squared()
}

#[test]
fn activation_obs_matches_least_squares_oracle() {
    for seed in 0..20 {
        let mut rng = seeded_rng(seed);
        let w = random_matrix(&mut rng, 3, 5, 1.0);
        let x = random_matrix(&mut rng, 5, 32, 1.0);
        let (mask, pruned) = activation_obs_prune(&w, &x, 2, Damping::Absolute(0.0), SearchStrategy::Exhaustive).unwrap();
        let best = subsets("test", 5, 2)
            .unwrap()
            .into_iter()
            .map(|m| least_squares_error(&w, &x, &m))
            .fold(f64::INFINITY, f64::min);
        let err = reconstruction_error(&w, &pruned, &x);
        assert!((err - best).abs() <= 1e-9 * best.max(1.0), "seed {seed}: {err} vs {best}");
        assert!((least_squares_error(&w, &x, mask.indices()) - err).abs() <= 1e-9 * err.max(1.0));
    }
}

#[test]
fn svd_matches_eckart_young() {
    for seed in 0..20 {
        let m = random_matrix(&mut seeded_rng(seed), 4, 5, 1.0);
        let sv = to_na(&m).singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let ours = jacobi_svd(&m).unwrap().sigma;
        for (a, b) in ours.iter().zip(&sv) {
            assert!((a - b).abs() < 1e-10);
        }
        let (us, vt) = svd_truncate(&m, 2).unwrap();
        let err = us.matmul(&vt).sub(&m).frobenius_norm().powi(2);
        let tail: f64 = sv[2..].iter().map(|s| s * s).sum();
        assert!((err - tail).abs() < 1e-10);
    }
}

#[test]
fn importance_on_attention_matches_brute_force() {
    for seed in 0..10 {
        let mut rng = seeded_rng(seed);
        let attn = AttentionModule::random(&mut rng, 4, 4, 0.7);
        let x = random_matrix(&mut rng, 6, 4, 1.0);
        let y = random_matrix(&mut rng, 6, 4, 1.0);
        let loss = |wv: &Matrix| attention_loss(&attn.with_weight(2, wv.clone()), &x, &y).unwrap();
        let mask = importance_score_prune(loss, &attn.w_v, 1).unwrap();
        let base = loss(&attn.w_v);
        let mut best = (f64::INFINITY, 0);
        for j in 0..4 {
            let mut z = attn.w_v.clone();
            for i in 0..4 {
                z[(i, j)] = 0.0;
            }
            let d = (loss(&z) - base).abs();
            if d < best.0 {
                best = (d, j);
            }
        }
        assert_eq!(mask.indices(), &[best.1]);
    }
}

#[test]
fn reductions_agree_under_identity_curvature() {
    for seed in 0..100 {
        let mut rng = seeded_rng(seed);
        let w = random_matrix(&mut rng, 4, 6, 1.0);
        let zero = Matrix::zeros(4, 6);
        let ident = HessianEstimate::identity(6, HessianMode::GradientColumn);
        let grad_obs = select_mask_full(&w, &zero, &ident, 2, SearchStrategy::Exhaustive).unwrap().mask;
        let (act_obs, _) =
            activation_obs_prune(&w, &Matrix::identity(6), 2, Damping::Absolute(0.0), SearchStrategy::Exhaustive).unwrap();
        let structured = |s: &ScoreMatrix| {
            let keep = apply_pattern(
                s,
                SparsityPattern::ColumnStructured { target: PruneTarget::Count(2), aggregation: ColumnAggregation::SumOfSquares },
            )
            .unwrap();
            (0..6).filter(|&j| !keep.get(0, j)).collect::<Vec<_>>()
        };
        let metric = structured(&oneshot_gradient_scores(&w, &zero, 0.1).unwrap());
        let magnitude = structured(&magnitude_scores(&w));
        assert_eq!(grad_obs.indices(), act_obs.indices());
        assert_eq!(grad_obs.indices(), &metric[..]);
        assert_eq!(grad_obs.indices(), &magnitude[..]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn nm_patterns_keep_exactly_n(seed in 0u64..100_000, rows in 1usize..6, groups in 1usize..4) {
        let mut rng = seeded_rng(seed);
        for (n, m) in [(2, 4), (4, 8)] {
            let s = ScoreMatrix::new(uniform_matrix(&mut rng, rows, m * groups, 0.0, 1.0), ScoreCriterion::Wanda).unwrap();
            let keep = apply_pattern(&s, SparsityPattern::NM { n, m_group: m }).unwrap();
            for i in 0..rows {
                for g in 0..groups {
                    prop_assert_eq!(keep.kept_in(i, g * m, (g + 1) * m), n);
                }
            }
        }
    }

    #[test]
    fn activation_update_never_hurts(seed in 0u64..100_000, k in 1usize..4) {
        let mut rng = seeded_rng(seed);
        let w = random_matrix(&mut rng, 3, 6, 1.0);
        let x = random_matrix(&mut rng, 6, 16, 1.0);
        let (mask, pruned) = activation_obs_prune(&w, &x, k, Damping::Relative(1e-6), SearchStrategy::Exhaustive).unwrap();
        let mut zeroed = w.clone();
        zeroed.fill_cols(mask.indices(), 0.0);
        prop_assert!(reconstruction_error(&w, &pruned, &x) <= reconstruction_error(&w, &zeroed, &x) + 1e-9);
    }

    #[test]
    fn svd_error_non_increasing_in_rank(seed in 0u64..100_000, r in 2usize..6, c in 2usize..6) {
        let m = random_matrix(&mut seeded_rng(seed), r, c, 1.0);
        let mut last = f64::INFINITY;
        for k in 0..=r.min(c) {
            let (us, vt) = svd_truncate(&m, k).unwrap();
            let err = us.matmul(&vt).sub(&m).frobenius_norm();
            prop_assert!(err <= last + 1e-10);
            last = err;
        }
    }
}
