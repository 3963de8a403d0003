use obsprune::matcore::Matrix;
use obsprune::obs_lora::LoraAdapter;
use obsprune::oracle::{finite_diff_gradient, max_relative_error};
use obsprune::synth::{random_matrix, seeded_rng};
use obsprune::toymodels::{attention_loss, attention_loss_grads, softmax_rows, AttentionModule, LoraModel, LossKind};
use rand::Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

/// Max-norm relative error: the largest entry difference over the largest entry.
/// Per-entry ratios on near-zero entries measure finite-difference roundoff, not
/// the gradient.
fn rel_err(analytic: &Matrix, numeric: &Matrix) -> f64 {
    max_relative_error(analytic, numeric, numeric.max_abs().max(1e-8))
}

#[test]
fn attention_gradients_on_random_shapes() {
    let mut rng = seeded_rng(2024);
    for _ in 0..50 {
        let (d_model, d, tokens) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=8));
        let attn = AttentionModule::random(&mut rng, d_model, d, 0.5);
        let x = random_matrix(&mut rng, tokens, d_model, 1.0);
        let y = random_matrix(&mut rng, tokens, d, 1.0);
        let (_, grads) = attention_loss_grads(&attn, &x, &y).unwrap();
        for (which, analytic) in [&grads.w_q, &grads.w_k, &grads.w_v].into_iter().enumerate() {
            let numeric = finite_diff_gradient(
                |w| attention_loss(&attn.with_weight(which, w.clone()), &x, &y).unwrap(),
                attn.weight(which),
                H,
            )
            .unwrap();
            let e = rel_err(analytic, &numeric);
            assert!(e < TOL, "{d_model} {d} {tokens} w{which}: {e} max {}", numeric.max_abs());
        }
    }
}

#[test]
fn lora_model_gradients_on_random_shapes() {
    let mut rng = seeded_rng(7);
    for i in 0..50 {
        let (n, h, o, r) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=4), rng.random_range(1..=5));
        let kind = if i % 2 == 0 { LossKind::SquaredError } else { LossKind::CrossEntropy };
        let adapter = LoraAdapter::new(random_matrix(&mut rng, r, n, 0.5), random_matrix(&mut rng, h, r, 0.5), 2.0 * r as f64).unwrap();
        let model = LoraModel::new(random_matrix(&mut rng, h, n, 0.5), adapter, random_matrix(&mut rng, o, h, 0.5), true, kind).unwrap();
        let tokens = rng.random_range(1..=8);
        let x = random_matrix(&mut rng, tokens, n, 1.0);
        let y = match kind {
            LossKind::SquaredError => random_matrix(&mut rng, x.rows(), o, 1.0),
            LossKind::CrossEntropy => softmax_rows(&random_matrix(&mut rng, x.rows(), o, 1.0)),
        };
        let (_, grads) = model.loss_and_grads(&x, &y).unwrap();
        let (a, b, alpha) = model.adapter.clone().into_parts();
        let with = |a: &Matrix, b: &Matrix| model.with_adapter(LoraAdapter::new(a.clone(), b.clone(), alpha).unwrap()).unwrap();
        let num_a = finite_diff_gradient(|m| with(m, &b).loss(&x, &y).unwrap(), &a, H).unwrap();
        let num_b = finite_diff_gradient(|m| with(&a, m).loss(&x, &y).unwrap(), &b, H).unwrap();
        assert!(rel_err(&grads.adapter.grad_a, &num_a) < TOL);
        let eb = rel_err(&grads.adapter.grad_b, &num_b);
        assert!(eb < TOL, "case {i} n={n} h={h} o={o} r={r} {kind:?}: {eb}");
    }
}
