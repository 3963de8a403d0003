use obsprune::hessian::{hessian_from_gradient_cols, Damping, HessianEstimate};
use obsprune::matcore::{Matrix, PruneMask};
use obsprune::obs_full::{obs_update_full, saliency_full, select_mask_full, newton_shift, SearchStrategy};
use obsprune::obs_lora::{
    apply_lora_update, compact_rank, lora_obs_update, lora_shifts, saliency_lora, select_mask_lora, LoraAdapter,
    LoraGrads, LoraHessians,
};
use obsprune::oracle::{enumerate_masks, enumerate_masks_lora, lora_pair_objective, solve_constrained_quadratic};
use obsprune::synth::{random_matrix, seeded_rng};
use proptest::prelude::*;
use rand::Rng;

fn problem(seed: u64, m: usize, n: usize) -> (Matrix, Matrix, HessianEstimate) {
    let mut rng = seeded_rng(seed);
    let w = random_matrix(&mut rng, m, n, 1.0);
    let g = random_matrix(&mut rng, m, n, 1.0);
    let h = hessian_from_gradient_cols(&g, Damping::Relative(1e-2)).unwrap();
    (w, g, h)
}

#[test]
fn exhaustive_selection_matches_enumeration() {
    for m in 2..=4 {
        for n in 3..=7 {
            for k in 1..=3.min(n - 1) {
                for seed in 0..10 {
                    let (w, g, h) = problem(seed * 1000 + (m * 100 + n * 10 + k) as u64, m, n);
                    let chosen = select_mask_full(&w, &g, &h, k, SearchStrategy::Exhaustive).unwrap();
                    let oracle = enumerate_masks(&w, &g, h.matrix(), k).unwrap();
                    let (_, obj) = solve_constrained_quadratic(&w, &g, h.matrix(), &chosen.mask).unwrap();
                    assert!(
                        chosen.mask == oracle.best_mask || (obj - oracle.best_objective).abs() <= 1e-12 * obj.abs().max(1.0),
                        "m={m} n={n} k={k} seed={seed}"
                    );
                }
            }
        }
    }
}

#[test]
fn closed_form_matches_pin_and_solve() {
    for seed in 0..30 {
        let (w, g, h) = problem(seed, 3, 5);
        let oracle = enumerate_masks(&w, &g, h.matrix(), 2).unwrap();
        let newton = obs_update_full(&w, &g, &h, &PruneMask::columns(vec![], 5).unwrap()).unwrap();
        let wt = newton_shift(&w, &g, &h).unwrap();
        for (mask, obj) in &oracle.per_mask {
            let closed = obs_update_full(&w, &g, &h, mask).unwrap();
            let (delta, _) = solve_constrained_quadratic(&w, &g, h.matrix(), mask).unwrap();
            assert!(closed.delta.max_abs_diff(&delta) < 1e-9);
            assert!((closed.quad_objective - obj).abs() <= 1e-9 * obj.abs().max(1.0));
            let sal = saliency_full(&wt, h.inverse(), mask).unwrap();
            let gap = closed.quad_objective - newton.quad_objective;
            assert!((gap - 0.5 * sal).abs() <= 1e-9 * (0.5 * sal).abs().max(1e-300));
        }
    }
}

#[test]
fn random_feasible_perturbations_never_improve() {
    let (w, g, h) = problem(77, 3, 6);
    let mask = PruneMask::columns(vec![1, 4], 6).unwrap();
    let best = obs_update_full(&w, &g, &h, &mask).unwrap();
    let kept = mask.kept();
    let mut rng = seeded_rng(5);
    for _ in 0..1000 {
        let scale: f64 = 10f64.powf(rng.random_range(-6.0..0.0));
        let noise = random_matrix(&mut rng, 3, kept.len(), scale);
        let mut delta = best.delta.clone();
        let mut shifted = delta.select_cols(&kept);
        shifted.axpy(1.0, &noise);
        delta.set_cols(&kept, &shifted);
        let q = g.frobenius_dot(&delta) + 0.5 * delta.matmul(h.matrix()).frobenius_dot(&delta);
        assert!(q >= best.quad_objective - 1e-12);
    }
}

fn lora_problem(seed: u64, m: usize, n: usize, r: usize) -> (LoraAdapter, LoraGrads, LoraHessians) {
    let mut rng = seeded_rng(seed);
    let adapter = LoraAdapter::new(random_matrix(&mut rng, r, n, 1.0), random_matrix(&mut rng, m, r, 1.0), r as f64).unwrap();
    let grads = LoraGrads { grad_a: random_matrix(&mut rng, r, n, 1.0), grad_b: random_matrix(&mut rng, m, r, 1.0) };
    let hessians = LoraHessians::from_grads(&grads, Damping::Relative(1e-2)).unwrap();
    (adapter, grads, hessians)
}

#[test]
fn lora_selection_and_updates_match_oracle() {
    for r in 3..=6 {
        for seed in 0..10 {
            let (ad, gr, he) = lora_problem(seed + 50 * r as u64, 4, 5, r);
            let k = 2.min(r - 1);
            let chosen = select_mask_lora(&ad, &gr, &he, k, SearchStrategy::Exhaustive).unwrap();
            let oracle = enumerate_masks_lora(ad.a(), ad.b(), &gr.grad_a, &gr.grad_b, he.h_a.matrix(), he.h_b.matrix(), k).unwrap();
            let (_, _, obj) = lora_pair_objective(ad.a(), ad.b(), &gr.grad_a, &gr.grad_b, he.h_a.matrix(), he.h_b.matrix(), &chosen.mask).unwrap();
            assert!(chosen.mask == oracle.best_mask || (obj - oracle.best_objective).abs() <= 1e-12 * obj.abs().max(1.0));

            let (at, bt) = lora_shifts(&ad, &gr, &he).unwrap();
            for (mask, _) in &oracle.per_mask {
                let sol = lora_obs_update(&ad, &gr, &he, mask).unwrap();
                let (da, db, _) = lora_pair_objective(ad.a(), ad.b(), &gr.grad_a, &gr.grad_b, he.h_a.matrix(), he.h_b.matrix(), mask).unwrap();
                assert!(sol.delta_a.max_abs_diff(&da) < 1e-9 && sol.delta_b.max_abs_diff(&db) < 1e-9);
                let joint = saliency_lora(&at, &bt, he.h_a.inverse(), he.h_b.inverse(), mask).unwrap();
                let split = saliency_full(&bt, he.h_b.inverse(), mask).unwrap()
                    + saliency_full(&at.transpose(), he.h_a.inverse(), mask).unwrap();
                assert!((joint - split).abs() <= 1e-9 * split.abs().max(1.0));
                let zeroed = apply_lora_update(&ad, &sol).unwrap();
                let compact = compact_rank(&zeroed, mask).unwrap();
                assert!(compact.b().matmul(compact.a()).max_abs_diff(&zeroed.b().matmul(zeroed.a())) < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn greedy_never_beats_oracle(seed in 0u64..10_000, m in 2usize..5, n in 3usize..8, k in 1usize..4) {
        prop_assume!(k < n);
        let (w, g, h) = problem(seed, m, n);
        let greedy = select_mask_full(&w, &g, &h, k, SearchStrategy::Greedy).unwrap();
        let oracle = enumerate_masks(&w, &g, h.matrix(), k).unwrap();
        let (_, obj) = solve_constrained_quadratic(&w, &g, h.matrix(), &greedy.mask).unwrap();
        prop_assert!(oracle.best_objective <= obj + 1e-12 * obj.abs().max(1.0));
    }

    #[test]
    fn constraints_are_exact(seed in 0u64..10_000, n in 3usize..8, k in 1usize..4) {
        prop_assume!(k < n);
        let (w, g, h) = problem(seed, 3, n);
        let c = select_mask_full(&w, &g, &h, k, SearchStrategy::Exhaustive).unwrap();
        let sol = obs_update_full(&w, &g, &h, &c.mask).unwrap();
        prop_assert!(w.add(&sol.delta).select_cols(c.mask.indices()).max_abs() < 1e-10);
        prop_assert!(c.saliency >= 0.0);
    }
}
