//! Small differentiable models with analytic gradients: single-head softmax
//! attention and a two-layer network whose first layer carries a LoRA
//! adapter. Also the perturbation-budget experiments on attention.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{PruneError, Result};
use crate::exec::ExecMode;
use crate::matcore::Matrix;
use crate::obs_lora::{LoraAdapter, LoraGrads};
use crate::synth::{random_matrix, seeded_rng};

/// Single-head attention `Z = softmax(X W_Q (X W_K)ᵀ / √d) X W_V`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionModule {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

/// Intermediates of one attention forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCache {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Row-stochastic attention weights.
    pub attn: Matrix,
    pub z: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl AttentionModule {
    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix) -> Result<Self> {
        if w_q.shape() != w_k.shape() || w_q.shape() != w_v.shape() {
            return Err(PruneError::dim(
                "AttentionModule::new",
                format!("W_Q {:?}, W_K {:?}, W_V {:?}", w_q.shape(), w_k.shape(), w_v.shape()),
            ));
        }
        if w_q.cols() == 0 {
            return Err(PruneError::pre("AttentionModule::new", "head dimension must be positive"));
        }
        Ok(Self { w_q, w_k, w_v })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, d_model: usize, d: usize, std: f64) -> Self {
        Self {
            w_q: random_matrix(rng, d_model, d, std),
            w_k: random_matrix(rng, d_model, d, std),
            w_v: random_matrix(rng, d_model, d, std),
        }
    }

    pub fn d_model(&self) -> usize {
        self.w_q.rows()
    }

    /// Head dimension `d`.
    pub fn head_dim(&self) -> usize {
        self.w_q.cols()
    }

    /// `1 / √d`.
    pub fn scale(&self) -> f64 {
        1.0 / (self.head_dim() as f64).sqrt()
    }

    /// Weight `0`, `1`, `2` is `W_Q`, `W_K`, `W_V`.
    pub fn weight(&self, which: usize) -> &Matrix {
        [&self.w_q, &self.w_k, &self.w_v][which]
    }

    pub fn with_weight(&self, which: usize, w: Matrix) -> Self {
        let mut out = self.clone();
        *[&mut out.w_q, &mut out.w_k, &mut out.w_v][which] = w;
        out
    }

    fn check_input(&self, op: &'static str, x: &Matrix) -> Result<()> {
        if x.cols() != self.d_model() || x.rows() == 0 {
            return Err(PruneError::dim(
                op,
                format!("X is {:?} for d_model = {}", x.shape(), self.d_model()),
            ));
        }
        Ok(())
    }

    pub fn forward_cache(&self, x: &Matrix) -> Result<AttentionCache> {
        const OP: &str = "attention_forward";
        self.check_input(OP, x)?;
        let q = x.matmul(&self.w_q);
        let k = x.matmul(&self.w_k);
        let v = x.matmul(&self.w_v);
        let attn = softmax_rows(&q.matmul_t(&k).scale(self.scale()));
        let z = attn.matmul(&v);
        if !z.is_finite() {
            return Err(PruneError::NonFinite { op: OP, detail: "attention output".into() });
        }
        Ok(AttentionCache { q, k, v, attn, z })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cache(x)?.z)
    }

    /// Gradients of a scalar loss given `upstream = ∂L/∂Z`.
    pub fn backward(&self, x: &Matrix, upstream: &Matrix) -> Result<AttentionGrads> {
        const OP: &str = "attention_backward";
        let cache = self.forward_cache(x)?;
        if upstream.shape() != cache.z.shape() {
            return Err(PruneError::dim(
                OP,
                format!("upstream {:?} for output {:?}", upstream.shape(), cache.z.shape()),
            ));
        }
        let d_v = cache.attn.t_matmul(upstream);
        let d_attn = upstream.matmul_t(&cache.v);
        // Softmax Jacobian per row: dS = P ⊙ (dP − rowsum(dP ⊙ P)).
        let mut d_logits = cache.attn.hadamard(&d_attn);
        for i in 0..d_logits.rows() {
            let s: f64 = d_logits.row(i).iter().sum();
            let p = cache.attn.row(i).to_vec();
            for (v, p) in d_logits.row_mut(i).iter_mut().zip(p) {
                *v -= p * s;
            }
        }
        let d_logits = d_logits.scale(self.scale());
        let d_q = d_logits.matmul(&cache.k);
        let d_k = d_logits.t_matmul(&cache.q);
        Ok(AttentionGrads {
            w_q: x.t_matmul(&d_q),
            w_k: x.t_matmul(&d_k),
            w_v: x.t_matmul(&d_v),
        })
    }
}

/// `½ ‖Z − Y‖²_F`.
pub fn attention_loss(attn: &AttentionModule, x: &Matrix, y: &Matrix) -> Result<f64> {
    let z = attn.forward(x)?;
    if z.shape() != y.shape() {
        return Err(PruneError::dim("attention_loss", format!("Z {:?} vs Y {:?}", z.shape(), y.shape())));
    }
    let r = z.sub(y).frobenius_norm();
    Ok(0.5 * r * r)
}

/// Loss and gradients of `½ ‖Z − Y‖²_F`.
pub fn attention_loss_grads(attn: &AttentionModule, x: &Matrix, y: &Matrix) -> Result<(f64, AttentionGrads)> {
    let z = attn.forward(x)?;
    if z.shape() != y.shape() {
        return Err(PruneError::dim("attention_loss", format!("Z {:?} vs Y {:?}", z.shape(), y.shape())));
    }
    let r = z.sub(y);
    let loss = 0.5 * r.frobenius_norm().powi(2);
    Ok((loss, attn.backward(x, &r)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    /// `½ · mean over samples of ‖ŷ − y‖²`.
    #[default]
    SquaredError,
    /// Mean cross-entropy of softmax outputs against target distributions.
    CrossEntropy,
}

/// `y = tanh(X (W₀ + s·B·A)ᵀ) W₂ᵀ`; `W₀` is frozen, `W₂` optionally trained.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraModel {
    pub base: Matrix,
    pub adapter: LoraAdapter,
    pub head: Matrix,
    pub train_head: bool,
    pub loss_kind: LossKind,
}

/// Gradients of a [`LoraModel`]; `head` is `None` when the head is frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraModelGrads {
    pub adapter: LoraGrads,
    pub head: Option<Matrix>,
}

struct Forward {
    hidden: Matrix,
    out: Matrix,
}

impl LoraModel {
    pub fn new(base: Matrix, adapter: LoraAdapter, head: Matrix, train_head: bool, loss_kind: LossKind) -> Result<Self> {
        if adapter.out_dim() != base.rows() || adapter.in_dim() != base.cols() || head.cols() != base.rows() {
            return Err(PruneError::dim(
                "LoraModel::new",
                format!(
                    "base {:?}, adapter B {:?} A {:?}, head {:?}",
                    base.shape(),
                    adapter.b().shape(),
                    adapter.a().shape(),
                    head.shape()
                ),
            ));
        }
        Ok(Self { base, adapter, head, train_head, loss_kind })
    }

    pub fn in_dim(&self) -> usize {
        self.base.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.head.rows()
    }

    /// `W₀ + s·B·A`.
    pub fn effective_weight(&self) -> Matrix {
        self.base.add(&self.adapter.delta_w())
    }

    fn check_batch(&self, op: &'static str, x: &Matrix, y: Option<&Matrix>) -> Result<()> {
        if x.cols() != self.in_dim() || x.rows() == 0 {
            return Err(PruneError::dim(op, format!("inputs {:?} for input dimension {}", x.shape(), self.in_dim())));
        }
        if let Some(y) = y {
            if y.shape() != (x.rows(), self.out_dim()) {
                return Err(PruneError::dim(
                    op,
                    format!("targets {:?} for {} samples of dimension {}", y.shape(), x.rows(), self.out_dim()),
                ));
            }
        }
        Ok(())
    }

    fn run(&self, x: &Matrix) -> Forward {
        let hidden = x.matmul_t(&self.effective_weight()).map(f64::tanh);
        let out = hidden.matmul_t(&self.head);
        Forward { hidden, out }
    }

    /// Network outputs (logits for cross-entropy).
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_batch("lora_forward", x, None)?;
        Ok(self.run(x).out)
    }

    /// Loss and `∂L/∂output`.
    fn loss_from_output(&self, out: &Matrix, y: &Matrix) -> (f64, Matrix) {
        let n = out.rows() as f64;
        match self.loss_kind {
            LossKind::SquaredError => {
                let r = out.sub(y);
                (0.5 * r.frobenius_norm().powi(2) / n, r.scale(1.0 / n))
            }
            LossKind::CrossEntropy => {
                let mut loss = 0.0;
                let mut grad = Matrix::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let row = out.row(i);
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    let mass: f64 = y.row(i).iter().sum();
                    for j in 0..out.cols() {
                        loss -= y[(i, j)] * (row[j] - lse);
                        grad[(i, j)] = ((row[j] - lse).exp() * mass - y[(i, j)]) / n;
                    }
                }
                (loss / n, grad)
            }
        }
    }

    pub fn loss(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        const OP: &str = "lora_forward";
        self.check_batch(OP, x, Some(y))?;
        let (loss, _) = self.loss_from_output(&self.run(x).out, y);
        if !loss.is_finite() {
            return Err(PruneError::NonFinite { op: OP, detail: "loss".into() });
        }
        Ok(loss)
    }

    /// Loss with gradients for the adapter factors and, if trained, the head.
    pub fn loss_and_grads(&self, x: &Matrix, y: &Matrix) -> Result<(f64, LoraModelGrads)> {
        const OP: &str = "lora_backward";
        self.check_batch(OP, x, Some(y))?;
        let fwd = self.run(x);
        let (loss, d_out) = self.loss_from_output(&fwd.out, y);
        if !loss.is_finite() {
            return Err(PruneError::NonFinite { op: OP, detail: "loss".into() });
        }
        let d_hidden = d_out.matmul(&self.head);
        let d_pre = Matrix::from_fn(d_hidden.rows(), d_hidden.cols(), |i, j| {
            let h = fwd.hidden[(i, j)];
            d_hidden[(i, j)] * (1.0 - h * h)
        });
        let d_w1 = d_pre.t_matmul(x);
        let s = self.adapter.scaling();
        let grads = LoraGrads {
            grad_a: self.adapter.b().t_matmul(&d_w1).scale(s),
            grad_b: d_w1.matmul_t(self.adapter.a()).scale(s),
        };
        let head = self.train_head.then(|| d_out.t_matmul(&fwd.hidden));
        Ok((loss, LoraModelGrads { adapter: grads, head }))
    }

    pub fn with_adapter(&self, adapter: LoraAdapter) -> Result<Self> {
        Self::new(self.base.clone(), adapter, self.head.clone(), self.train_head, self.loss_kind)
    }
}

/// Shape and seed of a synthetic teacher-student regression task.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTaskConfig {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    /// Rank of the teacher's shift away from the frozen base.
    pub teacher_rank: usize,
    /// Magnitude of the teacher's shift.
    pub teacher_scale: f64,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        Self {
            in_dim: 24,
            hidden_dim: 24,
            out_dim: 8,
            teacher_rank: 8,
            teacher_scale: 1.0,
            train_samples: 256,
            eval_samples: 256,
            noise: 0.01,
            seed: 0,
        }
    }
}

/// Frozen base weights plus a teacher dataset generated from
/// `W₀ + ΔW*` with `rank(ΔW*) = teacher_rank`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub base: Matrix,
    pub head: Matrix,
    pub x_train: Matrix,
    pub y_train: Matrix,
    pub x_eval: Matrix,
    pub y_eval: Matrix,
}

impl ToyTask {
    pub fn generate(cfg: &ToyTaskConfig) -> Result<Self> {
        if cfg.in_dim == 0 || cfg.hidden_dim == 0 || cfg.out_dim == 0 || cfg.train_samples == 0 {
            return Err(PruneError::pre("ToyTask::generate", "dimensions and sample count must be positive"));
        }
        let mut rng = seeded_rng(cfg.seed);
        let fan_in = 1.0 / (cfg.in_dim as f64).sqrt();
        let base = random_matrix(&mut rng, cfg.hidden_dim, cfg.in_dim, fan_in);
        let head = random_matrix(&mut rng, cfg.out_dim, cfg.hidden_dim, 1.0 / (cfg.hidden_dim as f64).sqrt());
        // Decaying spectrum: component i has weight 1/(i+1).
        let mut shift = Matrix::zeros(cfg.hidden_dim, cfg.in_dim);
        for i in 0..cfg.teacher_rank {
            let u = random_matrix(&mut rng, cfg.hidden_dim, 1, 1.0 / (cfg.hidden_dim as f64).sqrt());
            let v = random_matrix(&mut rng, 1, cfg.in_dim, 1.0 / (cfg.in_dim as f64).sqrt());
            shift.axpy(cfg.teacher_scale * 2.0 / (i + 1) as f64, &u.matmul(&v));
        }
        let teacher = base.add(&shift);
        let mut sample = |count: usize| {
            let x = random_matrix(&mut rng, count, cfg.in_dim, 1.0);
            let clean = x.matmul_t(&teacher).map(f64::tanh).matmul_t(&head);
            let noise = random_matrix(&mut rng, count, cfg.out_dim, cfg.noise);
            (x, clean.add(&noise))
        };
        let (x_train, y_train) = sample(cfg.train_samples);
        let (x_eval, y_eval) = sample(cfg.eval_samples.max(1));
        Ok(Self { base, head, x_train, y_train, x_eval, y_eval })
    }

    /// A student with a fresh rank-`r` adapter: `A` Gaussian, `B = 0`.
    pub fn student(&self, rank: usize, alpha: f64, seed: u64) -> Result<LoraModel> {
        let mut rng = seeded_rng(seed);
        let a = random_matrix(&mut rng, rank, self.base.cols(), 1.0 / (self.base.cols() as f64).sqrt());
        let b = Matrix::zeros(self.base.rows(), rank);
        LoraModel::new(
            self.base.clone(),
            LoraAdapter::new(a, b, alpha)?,
            self.head.clone(),
            false,
            LossKind::SquaredError,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetCriterion {
    /// `‖X (Ŵ − W)‖_F ≤ ε` on the module's input.
    ActivationError,
    /// `|L(Ŵ) − L(W)| ≤ ε`.
    GradientLossError,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationBudget {
    pub epsilon: f64,
    pub criterion: BudgetCriterion,
}

/// What a criterion needs to be evaluated.
pub enum CalibrationContext<'a> {
    /// Module input `X` (tokens × features).
    Activation(&'a Matrix),
    /// Loss change as a function of the weight perturbation.
    Loss(&'a (dyn Fn(&Matrix) -> f64 + Sync)),
}

const BISECTION_MAX_ITERS: usize = 200;

/// Scales `direction` so the budget's criterion lands in `[0.99ε, ε]`.
///
/// If the full direction already satisfies the budget it is returned as is.
pub fn calibrate_perturbation(
    direction: &Matrix,
    budget: PerturbationBudget,
    context: CalibrationContext<'_>,
) -> Result<Matrix> {
    const OP: &str = "calibrate_perturbation";
    let eps = budget.epsilon;
    if eps <= 0.0 || !eps.is_finite() {
        return Err(PruneError::pre(OP, format!("epsilon must be > 0, got {eps}")));
    }
    if direction.max_abs() == 0.0 {
        return Err(PruneError::pre(OP, "direction must be nonzero"));
    }
    match (budget.criterion, context) {
        (BudgetCriterion::ActivationError, CalibrationContext::Activation(x)) => {
            if x.cols() != direction.rows() {
                return Err(PruneError::dim(OP, format!("X {:?} for direction {:?}", x.shape(), direction.shape())));
            }
            let full = x.matmul(direction).frobenius_norm();
            if full <= eps {
                return Ok(direction.clone());
            }
            Ok(direction.scale(eps / full))
        }
        (BudgetCriterion::GradientLossError, CalibrationContext::Loss(delta_loss)) => {
            let measure = |t: f64| -> Result<f64> {
                let v = delta_loss(&direction.scale(t)).abs();
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(PruneError::NonFinite { op: OP, detail: format!("loss change at t = {t}") })
                }
            };
            if measure(1.0)? <= eps {
                return Ok(direction.clone());
            }
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..BISECTION_MAX_ITERS {
                let mid = 0.5 * (lo + hi);
                let v = measure(mid)?;
                if v > eps {
                    hi = mid;
                } else if v < 0.99 * eps {
                    lo = mid;
                } else {
                    return Ok(direction.scale(mid));
                }
            }
            Err(PruneError::Convergence {
                op: OP,
                detail: format!("loss change did not enter [0.99ε, ε] within {BISECTION_MAX_ITERS} bisections"),
            })
        }
        _ => Err(PruneError::pre(OP, "context does not match the budget criterion")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectionKind {
    /// Zero one randomly chosen column of each weight.
    ColumnZeroing,
    /// Gaussian direction.
    Random,
}

/// One trial of [`proposition_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct PropositionTrial {
    pub trial: usize,
    pub direction: DirectionKind,
    /// `‖Z − Ẑ‖_F` with all three modules perturbed under the activation budget.
    pub activation_error: f64,
    /// `(1 + (‖Q‖_F + ‖K‖_F)/√d · ‖V̂‖_F) · ε`.
    pub activation_bound: f64,
    /// `|ΔL|` after perturbing Q, K, V one after another, each calibrated
    /// against the state left by the previous one.
    pub sequential_loss_change: f64,
    /// `3ε`.
    pub gradient_bound: f64,
    /// `|ΔL|` with each module calibrated against the original state and all
    /// three applied together. No bound is claimed for it.
    pub joint_loss_change: f64,
    /// Modules skipped because their direction was zero.
    pub skipped_modules: usize,
}

impl PropositionTrial {
    pub fn activation_holds(&self) -> bool {
        self.activation_error <= self.activation_bound
    }

    pub fn gradient_holds(&self) -> bool {
        self.sequential_loss_change <= self.gradient_bound
    }
}

fn trial_directions<R: Rng + ?Sized>(rng: &mut R, attn: &AttentionModule, kind: DirectionKind) -> [Matrix; 3] {
    std::array::from_fn(|which| {
        let w = attn.weight(which);
        match kind {
            DirectionKind::ColumnZeroing => {
                let cols: Vec<usize> = (0..w.cols()).collect();
                let j = *cols.choose(rng).expect("head dimension is positive");
                Matrix::from_fn(w.rows(), w.cols(), |r, c| if c == j { -w[(r, j)] } else { 0.0 })
            }
            DirectionKind::Random => random_matrix(rng, w.rows(), w.cols(), 1.0),
        }
    })
}

fn run_trial(
    attn: &AttentionModule,
    x: &Matrix,
    loss: &(dyn Fn(&Matrix) -> f64 + Sync),
    epsilon: f64,
    trial: usize,
    seed: u64,
) -> Result<PropositionTrial> {
    let mut rng = seeded_rng(seed.wrapping_add(trial as u64));
    let kind = if trial.is_multiple_of(2) { DirectionKind::ColumnZeroing } else { DirectionKind::Random };
    let directions = trial_directions(&mut rng, attn, kind);
    let skipped = directions.iter().filter(|d| d.max_abs() == 0.0).count();
    let loss_at = |m: &AttentionModule| -> Result<f64> { Ok(loss(&m.forward(x)?)) };
    let base_loss = loss_at(attn)?;

    let act_budget = PerturbationBudget { epsilon, criterion: BudgetCriterion::ActivationError };
    let mut act = attn.clone();
    for (which, dir) in directions.iter().enumerate() {
        if dir.max_abs() == 0.0 {
            continue;
        }
        let delta = calibrate_perturbation(dir, act_budget, CalibrationContext::Activation(x))?;
        act = act.with_weight(which, attn.weight(which).add(&delta));
    }
    let base = attn.forward_cache(x)?;
    let z_hat = act.forward(x)?;
    let v_hat = x.matmul(&act.w_v);
    let d = attn.head_dim() as f64;
    let activation_bound =
        (1.0 + (base.q.frobenius_norm() + base.k.frobenius_norm()) / d.sqrt() * v_hat.frobenius_norm()) * epsilon;

    let grad_budget = PerturbationBudget { epsilon, criterion: BudgetCriterion::GradientLossError };
    let calibrate_against = |state: &AttentionModule, which: usize, dir: &Matrix| -> Result<Matrix> {
        let state_loss = loss_at(state)?;
        let eval = |delta: &Matrix| match loss_at(&state.with_weight(which, state.weight(which).add(delta))) {
            Ok(l) => l - state_loss,
            Err(_) => f64::NAN,
        };
        calibrate_perturbation(dir, grad_budget, CalibrationContext::Loss(&eval))
    };
    let mut seq = attn.clone();
    let mut joint = attn.clone();
    for (which, dir) in directions.iter().enumerate() {
        if dir.max_abs() == 0.0 {
            continue;
        }
        let step = calibrate_against(&seq, which, dir)?;
        seq = seq.with_weight(which, seq.weight(which).add(&step));
        let alone = calibrate_against(attn, which, dir)?;
        joint = joint.with_weight(which, joint.weight(which).add(&alone));
    }

    Ok(PropositionTrial {
        trial,
        direction: kind,
        activation_error: base.z.sub(&z_hat).frobenius_norm(),
        activation_bound,
        sequential_loss_change: (loss_at(&seq)? - base_loss).abs(),
        gradient_bound: 3.0 * epsilon,
        joint_loss_change: (loss_at(&joint)? - base_loss).abs(),
        skipped_modules: skipped,
    })
}

/// Perturbs all three attention weights under each budget criterion and
/// records the measured output and loss changes next to their bounds.
///
/// Even trials use column-zeroing directions, odd trials random ones.
pub fn proposition_experiment(
    mode: ExecMode,
    attn: &AttentionModule,
    x: &Matrix,
    loss: &(dyn Fn(&Matrix) -> f64 + Sync),
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<PropositionTrial>> {
    attn.forward(x)?;
    mode.map_range(trials, |t| run_trial(attn, x, loss, epsilon, t, seed))
        .into_iter()
        .collect()
}
