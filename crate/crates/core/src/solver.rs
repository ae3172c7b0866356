//! Block updates and full sweeps for the two-split, three-split and residual
//! forms.
//!
//! Every update reads the freshest value of every other block from the state
//! it is handed, so any deterministic block order is supported. Blocks other
//! than `V_i` (`i < N`, three-split and residual) and `U_N` carry the
//! proximal term `(α/2)‖B − B_old‖²`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::linalg::{
    self, fro_norm_sq, matmul, matmul_nt, matmul_tn, op_norm_sq_estimate, solve_spd, Cholesky,
    Matrix,
};
use crate::operators::{
    hinge_prox, leaky_relu_quad_prox, reg_quad_argmin, relu_quad_prox, smooth_scalar_quad_min,
    ActivationKind, LossKind, RegularizerKind,
};
use crate::data::Dataset;
use crate::diagnostics::{self, RateSummary, TraceRecord};
use crate::state::{init_weights, Block, Form, ObjectiveBreakdown, Problem, SplitState, VnStrategy};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EpochResult {
    pub state: SplitState,
    /// `‖P^k − P^{k−1}‖²_F` over all blocks.
    pub delta_sq: f64,
    pub objective: ObjectiveBreakdown,
}

/// Whether the block's subproblem carries the proximal term.
pub fn has_proximal_term(problem: &Problem, block: Block) -> bool {
    let n_layers = problem.depth();
    match (problem.form(), block) {
        (Form::TwoSplit, _) => true,
        (_, Block::U(i)) => i != n_layers,
        (_, Block::V(i)) => i == n_layers,
        (_, Block::W(_)) => true,
    }
}

/// Whether the block update is solved in closed form (or by an exact scalar
/// search) rather than by the inner proximal-gradient loop.
pub fn block_is_exact(problem: &Problem, block: Block) -> bool {
    let hp = problem.hp();
    let spec = problem.spec();
    let n_layers = problem.depth();
    let two = problem.form() == Form::TwoSplit;
    match block {
        Block::U(_) => true,
        Block::V(i) if i == n_layers => true,
        Block::V(i) => hp.v_reg(i).is_quadratic() && (!two || spec.activation(i + 1).is_identity()),
        Block::W(i) => hp.w_reg(i).is_quadratic() && (!two || spec.activation(i).is_identity()),
    }
}

pub fn all_blocks_exact(problem: &Problem) -> bool {
    problem
        .hp()
        .update_order
        .blocks(problem.form(), problem.depth())
        .map(|bs| bs.into_iter().all(|b| block_is_exact(problem, b)))
        .unwrap_or(false)
}

/// Block objective: the penalized objective with `block` set to `value`,
/// plus the proximal term around `old` when the block carries one.
pub fn block_objective(
    problem: &Problem,
    state: &SplitState,
    block: Block,
    value: &Matrix,
    old: &Matrix,
) -> Result<f64> {
    let mut s = state.clone();
    *s.block_mut(block) = value.clone();
    let mut f = problem.eval_objective(&s)?.total;
    if has_proximal_term(problem, block) {
        f += 0.5 * problem.hp().alpha * fro_norm_sq(&value.sub(old));
    }
    Ok(f)
}

/// New value of `block` given the current state.
pub fn update_block(problem: &Problem, state: &SplitState, block: Block) -> Result<Matrix> {
    let n_layers = problem.depth();
    match block {
        Block::V(i) if i == n_layers => update_output_block(problem, state),
        Block::U(i) if i == n_layers => update_output_pre_activation(problem, state),
        Block::V(i) => update_v_block(problem, state, i),
        Block::U(i) => update_u_block(problem, state, i),
        Block::W(i) => update_w_block(problem, state, i),
    }
}

/// What `V_N` is pulled towards by the penalty: `W_N aug(V_{N−1})` for the
/// two-split form, `U_N` (plus the skip input) otherwise.
fn output_target(problem: &Problem, state: &SplitState) -> Result<Matrix> {
    let n_layers = problem.depth();
    Ok(match problem.form() {
        Form::TwoSplit => matmul(state.w(n_layers), &problem.layer_input(state, n_layers))?,
        Form::ThreeSplit | Form::Residual => {
            let mut t = state.u(n_layers).clone();
            if let Some(s) = problem.skip(state, n_layers) {
                t.axpy(1.0, s);
            }
            t
        }
    })
}

/// Output block `V_N`.
pub fn update_output_block(problem: &Problem, state: &SplitState) -> Result<Matrix> {
    let hp = problem.hp();
    let n_layers = problem.depth();
    let (gamma, alpha) = (hp.gamma, hp.alpha);
    let risk = problem.risk();
    let reg = hp.v_reg(n_layers);
    let target = output_target(problem, state)?;
    let old = state.v(n_layers);
    let y = problem.y();

    match (hp.loss, hp.vn_strategy) {
        (LossKind::Squared, VnStrategy::ProximalExact) => {
            // (w/2)‖V−Y‖² + (γ/2)‖V−T‖² + (α/2)‖V−V_old‖² collapses to one
            // quadratic of weight ρ around the weighted mean of the centres.
            let w = risk.weight;
            let rho = w + gamma + alpha;
            let mut c = y.scale(w / rho);
            c.axpy(gamma / rho, &target);
            c.axpy(alpha / rho, old);
            Ok(reg_quad_argmin(reg, &c, rho))
        }
        (LossKind::Hinge, VnStrategy::ProximalExact) => {
            // Fold the two quadratics (weight γ+α), then λ‖V‖² (weight 2λ),
            // and divide by the risk weight w to reach
            // max{0, 1 − y·v} + (g/2)(v − c')² with g = (γ+α+2λ)/w.
            if !reg.is_quadratic() {
                return Err(Error::Unsupported(format!(
                    "hinge output update with the {reg} regularizer"
                )));
            }
            let rho = gamma + alpha;
            let lam = reg.l2_weight();
            let shrink = rho / (rho + 2.0 * lam);
            let g = (rho + 2.0 * lam) / risk.weight;
            let c = target.zip_map(old, |t, o| shrink * (gamma * t + alpha * o) / rho);
            Ok(c.zip_map(y, |cv, yv| hinge_prox(yv, cv, g)))
        }
        (_, VnStrategy::ProxLinear) => {
            let grad = risk.gradient(old, y)?;
            let rho = gamma + alpha;
            let mut c = target.scale(gamma / rho);
            c.axpy(alpha / rho, old);
            c.axpy(-1.0 / rho, &grad);
            Ok(reg_quad_argmin(reg, &c, rho))
        }
        (loss, strategy) => Err(Error::Unsupported(format!(
            "the {loss} loss with the {strategy} output update"
        ))),
    }
}

/// Output pre-activation `U_N`: the midpoint of the two equal quadratics
/// coupling it to `V_N` and to `W_N aug(V_{N−1})`.
pub fn update_output_pre_activation(problem: &Problem, state: &SplitState) -> Result<Matrix> {
    let n_layers = problem.depth();
    if !problem.form().has_pre_activations() {
        return Err(Error::FormMismatch {
            form: problem.form(),
            reason: "no pre-activation blocks".into(),
        });
    }
    let pre = matmul(state.w(n_layers), &problem.layer_input(state, n_layers))?;
    let mut sum = state.v(n_layers).add(&pre);
    if let Some(s) = problem.skip(state, n_layers) {
        sum.axpy(-1.0, s);
    }
    Ok(sum.scale(0.5))
}

/// Hidden pre-activation `U_i`, `i < N`, entrywise through the scalar proximal
/// maps. With `v = V_i − skip`, `c = W_i aug(V_{i−1})`, the entry problem
///
/// `(γ/2)(v − σ(u))² + (γ/2)(u − c)² + (α/2)(u − u_old)²`
///
/// folds into `½(σ(u) − v)² + (γ'/2)(u − b)²` with `γ' = (γ+α)/γ` and
/// `b = (γc + αu_old)/(γ+α)`.
pub fn update_u_block(problem: &Problem, state: &SplitState, i: usize) -> Result<Matrix> {
    if !problem.form().has_pre_activations() {
        return Err(Error::FormMismatch {
            form: problem.form(),
            reason: "no pre-activation blocks".into(),
        });
    }
    let hp = problem.hp();
    let (gamma, alpha) = (hp.gamma, hp.alpha);
    let g_eff = (gamma + alpha) / gamma;
    let act = problem.spec().activation(i);
    let c = matmul(state.w(i), &problem.layer_input(state, i))?;
    let mut v = state.v(i).clone();
    if let Some(s) = problem.skip(state, i) {
        v.axpy(-1.0, s);
    }
    let old = state.u(i);
    let mut out = Matrix::zeros(c.rows(), c.cols());
    for (k, slot) in out.data_mut().iter_mut().enumerate() {
        let vk = v.data()[k];
        let b = (gamma * c.data()[k] + alpha * old.data()[k]) / (gamma + alpha);
        *slot = match act {
            ActivationKind::Identity => (vk + g_eff * b) / (1.0 + g_eff),
            ActivationKind::Relu => relu_quad_prox(vk, b, g_eff),
            ActivationKind::LeakyRelu(s) => leaky_relu_quad_prox(s, vk, b, g_eff),
            ActivationKind::Sigmoid | ActivationKind::Tanh => {
                smooth_scalar_quad_min(act, vk, b, g_eff)
            }
        };
    }
    Ok(out)
}

/// Weight block `W_i`.
pub fn update_w_block(problem: &Problem, state: &SplitState, i: usize) -> Result<Matrix> {
    let hp = problem.hp();
    let (gamma, alpha) = (hp.gamma, hp.alpha);
    let reg = hp.w_reg(i);
    let act = problem.spec().activation(i);
    let input = problem.layer_input(state, i);
    let old = state.w(i);
    let linear = problem.form() != Form::TwoSplit || act.is_identity();
    // the matrix W_i V' is compared against
    let z = match problem.form() {
        Form::TwoSplit => state.v(i),
        _ => state.u(i),
    };

    if linear {
        let gram = if i == 1 {
            std::borrow::Cow::Borrowed(problem.input_gram())
        } else {
            std::borrow::Cow::Owned(linalg::gram(&input))
        };
        // γ V' Zᵀ
        let cross = matmul_nt(&input, z)?.scale(gamma);
        if reg.is_quadratic() {
            // (γ G + (α+2λ) I) Wᵀ = γ V' Zᵀ + α W_oldᵀ
            let shift = alpha + 2.0 * reg.l2_weight();
            let system = || {
                let mut a = gram.scale(gamma);
                for k in 0..a.rows() {
                    let d = a.get(k, k);
                    a.set(k, k, d + shift);
                }
                a
            };
            let mut rhs = cross;
            rhs.axpy(alpha, &old.transpose());
            let wt = if i == 1 {
                if problem.first_w_factor.get().is_none() {
                    let f = Cholesky::factor(&system())?;
                    let _ = problem.first_w_factor.set(f);
                }
                problem.first_w_factor.get().expect("factor set above").solve(&rhs)?
            } else {
                solve_spd(&system(), &rhs)?
            };
            return Ok(wt.transpose());
        }
        // smooth part (γ/2)(⟨W, WG⟩ − 2⟨W, ZV'ᵀ⟩) + (α/2)‖W − W_old‖², up to
        // a constant
        let cross_t = cross.transpose();
        let smooth = |w: &Matrix| -> Result<(f64, Matrix)> {
            let wg = matmul(w, &gram)?;
            let diff = w.sub(old);
            let value = 0.5 * gamma * w.dot(&wg) - w.dot(&cross_t) + 0.5 * alpha * fro_norm_sq(&diff);
            let mut grad = wg.scale(gamma);
            grad.axpy(-1.0, &cross_t);
            grad.axpy(alpha, &diff);
            Ok((value, grad))
        };
        let lip = gamma * op_norm_sq_estimate(&gram, 20).sqrt() + alpha;
        return prox_gradient(old, smooth, reg, lip, hp.inner_iters, hp.inner_tol);
    }

    // two-split with a nonlinear activation: (γ/2)‖V_i − σ(W V')‖² + (α/2)‖W − W_old‖²
    let smooth = |w: &Matrix| -> Result<(f64, Matrix)> {
        let pre = matmul(w, &input)?;
        let mut resid = Matrix::zeros(pre.rows(), pre.cols());
        let mut value = 0.0;
        for (k, r) in resid.data_mut().iter_mut().enumerate() {
            let p = pre.data()[k];
            let e = act.eval(p) - z.data()[k];
            value += e * e;
            *r = e * act.derivative(p);
        }
        let diff = w.sub(old);
        let mut grad = matmul_nt(&resid, &input)?.scale(gamma);
        grad.axpy(alpha, &diff);
        Ok((0.5 * gamma * value + 0.5 * alpha * fro_norm_sq(&diff), grad))
    };
    let lip = gamma * op_norm_sq_estimate(&input, 20) + alpha;
    prox_gradient(old, smooth, reg, lip, hp.inner_iters, hp.inner_tol)
}

/// Columns of `W` acting on states (the bias column dropped) and the bias
/// column itself.
fn split_bias(problem: &Problem, w: &Matrix, width: usize) -> (Matrix, Option<Vec<f64>>) {
    if problem.spec().bias() {
        (w.left_columns(width), Some(w.column(width)))
    } else {
        (w.clone(), None)
    }
}

/// `m + sign · b 1ᵀ`
fn offset_rows(m: &Matrix, bias: &Option<Vec<f64>>, sign: f64) -> Matrix {
    match bias {
        None => m.clone(),
        Some(b) => Matrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) + sign * b[r]),
    }
}

/// Hidden state block `V_i`, `i < N`.
pub fn update_v_block(problem: &Problem, state: &SplitState, i: usize) -> Result<Matrix> {
    let hp = problem.hp();
    let (gamma, alpha) = (hp.gamma, hp.alpha);
    let spec = problem.spec();
    let reg = hp.v_reg(i);
    let width = spec.dim(i);
    let (w_next, bias_next) = split_bias(problem, state.w(i + 1), width);
    let old = state.v(i);

    match problem.form() {
        Form::ThreeSplit | Form::Residual => {
            // (γ/2)‖V − T1‖² [+ (γ/2)‖V − T2‖²] + (γ/2)‖W̃ V − Ũ‖²
            let act = spec.activation(i);
            let mut t = state.u(i).map(|x| act.eval(x));
            if let Some(s) = problem.skip(state, i) {
                t.axpy(1.0, s);
            }
            let mut copies = 1.0;
            if problem.skip(state, i + 1).is_some() {
                let act_next = spec.activation(i + 1);
                let t2 = state
                    .v(i + 1)
                    .zip_map(state.u(i + 1), |v, u| v - act_next.eval(u));
                t.axpy(1.0, &t2);
                copies += 1.0;
            }
            let u_tilde = offset_rows(state.u(i + 1), &bias_next, -1.0);
            let mut rhs = matmul_tn(&w_next, &u_tilde)?;
            rhs.axpy(1.0, &t);
            let rhs = rhs.scale(gamma);
            let wtw = matmul_tn(&w_next, &w_next)?;

            if reg.is_quadratic() {
                let mut a = wtw.scale(gamma);
                let shift = copies * gamma + 2.0 * reg.l2_weight();
                for k in 0..a.rows() {
                    let d = a.get(k, k);
                    a.set(k, k, d + shift);
                }
                return Ok(solve_spd(&a, &rhs)?);
            }
            let smooth = |v: &Matrix| -> Result<(f64, Matrix)> {
                let wv = matmul(&wtw, v)?.scale(gamma);
                let mut grad = v.scale(copies * gamma);
                grad.axpy(1.0, &wv);
                let value = 0.5 * v.dot(&grad) - v.dot(&rhs);
                grad.axpy(-1.0, &rhs);
                Ok((value, grad))
            };
            let lip = gamma * (copies + op_norm_sq_estimate(&w_next, 20));
            prox_gradient(old, smooth, reg, lip, hp.inner_iters, hp.inner_tol)
        }
        Form::TwoSplit => {
            let act = spec.activation(i);
            let act_next = spec.activation(i + 1);
            let t1 = matmul(state.w(i), &problem.layer_input(state, i))?.map(|x| act.eval(x));
            let v_next = state.v(i + 1);
            if act_next.is_identity() && reg.is_quadratic() {
                // ((γ+α+2λ) I + γ W̃ᵀW̃) V = γ T1 + α V_old + γ W̃ᵀ (V_{i+1} − b 1ᵀ)
                let mut a = matmul_tn(&w_next, &w_next)?.scale(gamma);
                let shift = gamma + alpha + 2.0 * reg.l2_weight();
                for k in 0..a.rows() {
                    let d = a.get(k, k);
                    a.set(k, k, d + shift);
                }
                let mut rhs = matmul_tn(&w_next, &offset_rows(v_next, &bias_next, -1.0))?.scale(gamma);
                rhs.axpy(gamma, &t1);
                rhs.axpy(alpha, old);
                return Ok(solve_spd(&a, &rhs)?);
            }
            let smooth = |v: &Matrix| -> Result<(f64, Matrix)> {
                let pre = offset_rows(&matmul(&w_next, v)?, &bias_next, 1.0);
                let mut resid = Matrix::zeros(pre.rows(), pre.cols());
                let mut value = 0.0;
                for (k, r) in resid.data_mut().iter_mut().enumerate() {
                    let p = pre.data()[k];
                    let e = act_next.eval(p) - v_next.data()[k];
                    value += e * e;
                    *r = e * act_next.derivative(p);
                }
                let d1 = v.sub(&t1);
                let d2 = v.sub(old);
                let mut grad = matmul_tn(&w_next, &resid)?.scale(gamma);
                grad.axpy(gamma, &d1);
                grad.axpy(alpha, &d2);
                let value = 0.5 * gamma * (value + fro_norm_sq(&d1)) + 0.5 * alpha * fro_norm_sq(&d2);
                Ok((value, grad))
            };
            let lip = gamma + alpha + gamma * op_norm_sq_estimate(&w_next, 20);
            prox_gradient(old, smooth, reg, lip, hp.inner_iters, hp.inner_tol)
        }
    }
}

/// Proximal gradient on `smooth(X) + reg(X)` from `x0` with backtracking on
/// the step. Returns `x0` unchanged if the loop fails to improve on it.
pub fn prox_gradient(
    x0: &Matrix,
    smooth: impl Fn(&Matrix) -> Result<(f64, Matrix)>,
    reg: RegularizerKind,
    lipschitz: f64,
    iters: usize,
    tol: f64,
) -> Result<Matrix> {
    let mut lip = if lipschitz > 0.0 && lipschitz.is_finite() {
        lipschitz
    } else {
        1.0
    };
    let (f0, mut grad) = smooth(x0)?;
    let start = f0 + reg.value(x0);
    let mut x = x0.clone();
    let mut fx = f0;
    let mut total = start;
    for _ in 0..iters {
        let mut accepted = None;
        for _ in 0..60 {
            let mut step = x.clone();
            step.axpy(-1.0 / lip, &grad);
            let cand = reg_quad_argmin(reg, &step, lip);
            let d = cand.sub(&x);
            let (fc, gc) = smooth(&cand)?;
            if fc <= fx + grad.dot(&d) + 0.5 * lip * fro_norm_sq(&d) + 1e-12 * (1.0 + fx.abs()) {
                accepted = Some((cand, fc, gc));
                break;
            }
            lip *= 2.0;
        }
        let Some((cand, fc, gc)) = accepted else {
            break;
        };
        let new_total = fc + reg.value(&cand);
        let improvement = total - new_total;
        x = cand;
        fx = fc;
        grad = gc;
        let done = improvement <= tol * (1.0 + new_total.abs());
        total = new_total;
        if done {
            break;
        }
    }
    if total <= start || !start.is_finite() && total.is_finite() {
        Ok(x)
    } else {
        Ok(x0.clone())
    }
}

/// One sweep over all blocks in the configured order.
pub fn run_epoch(problem: &Problem, prev: &SplitState) -> Result<EpochResult> {
    run_epoch_observed(problem, prev, |_, _| Ok(()))
}

/// Like [`run_epoch`], calling `observe` after every block update.
pub fn run_epoch_observed(
    problem: &Problem,
    prev: &SplitState,
    mut observe: impl FnMut(Block, &SplitState) -> Result<()>,
) -> Result<EpochResult> {
    problem.check_state(prev)?;
    let order = problem.hp().update_order.blocks(problem.form(), problem.depth())?;
    let mut state = prev.clone();
    for block in order {
        let value = update_block(problem, &state, block)?;
        *state.block_mut(block) = value;
        observe(block, &state)?;
    }
    let delta_sq = state.distance_sq(prev);
    let objective = problem.eval_objective(&state)?;
    Ok(EpochResult {
        state,
        delta_sq,
        objective,
    })
}

/// Which per-epoch descent test [`run_training`] enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CheckPolicy {
    /// Sufficient descent when every block is solved exactly, plain
    /// monotone descent otherwise.
    #[default]
    Auto,
    Sufficient,
    Monotone,
    Off,
}

impl fmt::Display for CheckPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckPolicy::Auto => "auto",
            CheckPolicy::Sufficient => "sufficient",
            CheckPolicy::Monotone => "monotone",
            CheckPolicy::Off => "off",
        })
    }
}

impl FromStr for CheckPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Ok(CheckPolicy::Auto),
            "sufficient" => Ok(CheckPolicy::Sufficient),
            "monotone" => Ok(CheckPolicy::Monotone),
            "off" => Ok(CheckPolicy::Off),
            _ => Err(format!(
                "unknown check policy {s:?} (expected auto, sufficient, monotone or off)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOptions {
    pub epochs: usize,
    pub init_std: f64,
    pub init_bias: f64,
    pub check: CheckPolicy,
    /// Return [`Error::DescentViolation`] on the first failed check instead
    /// of recording it.
    pub abort_on_violation: bool,
    /// Compute the subgradient residual every epoch.
    pub track_residual: bool,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            epochs: 50,
            init_std: 0.1,
            init_bias: 0.1,
            check: CheckPolicy::Auto,
            abort_on_violation: true,
            track_residual: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub epoch: usize,
    /// The block whose own update lost the most against its share of the
    /// required decrease.
    pub block: Option<Block>,
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub trace: Vec<TraceRecord>,
    pub state: SplitState,
    /// Descent constant the checks used.
    pub a: f64,
    /// Whether the sufficient-descent inequality (rather than monotonicity)
    /// was checked.
    pub sufficient: bool,
    pub checks_passed: usize,
    pub violations: Vec<Violation>,
    pub rate: RateSummary,
    /// Largest iterate norm over the trace.
    pub bound: f64,
    /// Relative-error constant at `bound`.
    pub bbar: f64,
    /// `None` when the residual was not tracked.
    pub residual_pass: Option<bool>,
}

impl TrainingReport {
    pub fn descent_pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn final_record(&self) -> &TraceRecord {
        self.trace.last().expect("trace holds the initial record")
    }
}

/// Re-runs one epoch block by block and returns the block with the most
/// negative `decrease − a‖ΔB‖²`.
fn locate_violation(problem: &Problem, prev: &SplitState, a: f64) -> Result<(Block, f64)> {
    let mut before = problem.eval_objective(prev)?.total;
    let mut last = prev.clone();
    let mut worst: Option<(Block, f64)> = None;
    run_epoch_observed(problem, prev, |block, s| {
        let after = problem.eval_objective(s)?.total;
        let moved = fro_norm_sq(&s.block(block).sub(last.block(block)));
        let slack = before - after - a * moved;
        if worst.is_none_or(|(_, w)| slack < w) {
            worst = Some((block, slack));
        }
        before = after;
        *last.block_mut(block) = s.block(block).clone();
        Ok(())
    })?;
    Ok(worst.expect("every epoch updates at least one block"))
}

fn accuracy_or_na(problem: &Problem, state: &SplitState, x: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        Ok(diagnostics::NOT_APPLICABLE)
    } else {
        problem.accuracy(state, x, labels)
    }
}

/// Initializes from `hp.seed`, runs `opts.epochs` sweeps, and checks every
/// epoch. The trace starts with the initial state at epoch 0.
pub fn run_training(
    problem: &Problem,
    labels: &[usize],
    test: Option<&Dataset>,
    opts: &TrainingOptions,
) -> Result<TrainingReport> {
    let weights = init_weights(problem.spec(), opts.init_std, opts.init_bias, problem.hp().seed);
    let state = problem.initial_state(&weights)?;
    run_training_from(problem, state, labels, test, opts)
}

/// [`run_training`] from a given starting state.
pub fn run_training_from(
    problem: &Problem,
    initial: SplitState,
    labels: &[usize],
    test: Option<&Dataset>,
    opts: &TrainingOptions,
) -> Result<TrainingReport> {
    if opts.epochs == 0 {
        return Err(Error::InvalidHyperparams("epochs must be positive".into()));
    }
    problem.check_state(&initial)?;
    let a = diagnostics::descent_constant(problem);
    let sufficient = match opts.check {
        CheckPolicy::Auto => all_blocks_exact(problem),
        CheckPolicy::Sufficient => true,
        CheckPolicy::Monotone | CheckPolicy::Off => false,
    };
    let test_acc = |s: &SplitState| match test {
        Some(t) => accuracy_or_na(problem, s, &t.x, &t.labels),
        None => Ok(diagnostics::NOT_APPLICABLE),
    };
    let start = Instant::now();
    let mut bound = diagnostics::input_bound(problem).max(diagnostics::iterate_bound(problem, &initial));
    let mut trace = vec![TraceRecord {
        epoch: 0,
        objective: problem.eval_objective(&initial)?,
        delta_sq: 0.0,
        residual_norm: 0.0,
        bbar_bound: 0.0,
        train_acc: accuracy_or_na(problem, &initial, problem.x(), labels)?,
        test_acc: test_acc(&initial)?,
        wall_seconds: 0.0,
    }];
    let mut state = initial;
    let mut checks_passed = 0;
    let mut violations = Vec::new();
    for epoch in 1..=opts.epochs {
        let res = run_epoch(problem, &state)?;
        if !res.state.is_finite() || !res.objective.total.is_finite() {
            return Err(Error::NonFinite { epoch });
        }
        let prev_total = trace[epoch - 1].objective.total;
        let cur_total = res.objective.total;
        let ok = match opts.check {
            CheckPolicy::Off => true,
            _ if sufficient => diagnostics::descent_check(prev_total, cur_total, res.delta_sq, a).pass,
            _ => diagnostics::monotone_check(prev_total, cur_total),
        };
        if ok {
            checks_passed += 1;
        } else {
            let need = if sufficient { a } else { 0.0 };
            let (block, _) = locate_violation(problem, &state, need)?;
            let slack = (prev_total - cur_total) - need * res.delta_sq;
            if opts.abort_on_violation {
                return Err(Error::DescentViolation {
                    epoch,
                    block: block.to_string(),
                    decrease: prev_total - cur_total,
                    a: need,
                    delta_sq: res.delta_sq,
                });
            }
            violations.push(Violation {
                epoch,
                block: Some(block),
                slack,
            });
        }
        bound = bound.max(diagnostics::iterate_bound(problem, &res.state));
        let (residual_norm, bbar_bound) = if opts.track_residual {
            let r = diagnostics::subgrad_residual(problem, &state, &res.state)?;
            (r, diagnostics::problem_bbar(problem, bound) * res.delta_sq.sqrt())
        } else {
            (diagnostics::NOT_APPLICABLE, diagnostics::NOT_APPLICABLE)
        };
        trace.push(TraceRecord {
            epoch,
            objective: res.objective,
            delta_sq: res.delta_sq,
            residual_norm,
            bbar_bound,
            train_acc: accuracy_or_na(problem, &res.state, problem.x(), labels)?,
            test_acc: test_acc(&res.state)?,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        state = res.state;
    }
    let bbar = diagnostics::problem_bbar(problem, bound);
    let residual_pass = opts.track_residual.then(|| {
        trace[1..]
            .iter()
            .all(|r| r.residual_norm <= bbar * r.delta_sq.sqrt() + diagnostics::RESIDUAL_EPS)
    });
    Ok(TrainingReport {
        rate: diagnostics::rate_summary(&trace, a),
        trace,
        state,
        a,
        sufficient,
        checks_passed,
        violations,
        bound,
        bbar,
        residual_pass,
    })
}
