//! Per-epoch convergence certificates: sufficient descent, the Cesàro rate
//! bound, and the relative-error bound on an explicit subgradient element.

use std::collections::HashSet;

use crate::linalg::{fro_norm_sq, matmul, matmul_nt, matmul_tn, Matrix};
use crate::operators::activation_local_lipschitz;
use crate::solver::has_proximal_term;
use crate::state::{Block, Form, ObjectiveBreakdown, Problem, SplitState, VnStrategy};
use crate::Result;

/// Slack added to every descent inequality to absorb rounding.
pub const DESCENT_EPS: f64 = 1e-8;
pub const MONOTONE_EPS: f64 = 1e-10;
pub const RESIDUAL_EPS: f64 = 1e-6;

/// Marker stored in fields a run does not compute.
pub const NOT_APPLICABLE: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub epoch: usize,
    pub objective: ObjectiveBreakdown,
    pub delta_sq: f64,
    pub residual_norm: f64,
    /// `b̄ · ‖P^k − P^{k−1}‖_F` with `b̄` from the running iterate bound.
    pub bbar_bound: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentCheck {
    pub pass: bool,
    /// `(prev − cur) − a·delta_sq`
    pub slack: f64,
}

pub fn descent_check(prev_total: f64, cur_total: f64, delta_sq: f64, a: f64) -> DescentCheck {
    let slack = (prev_total - cur_total) - a * delta_sq;
    DescentCheck {
        pass: slack >= -DESCENT_EPS,
        slack,
    }
}

/// `cur ≤ prev` up to relative rounding.
pub fn monotone_check(prev_total: f64, cur_total: f64) -> bool {
    cur_total <= prev_total + MONOTONE_EPS * (1.0 + prev_total.abs())
}

/// Sufficient-descent constant `a` for the problem's output strategy.
pub fn descent_constant(problem: &Problem) -> f64 {
    let hp = problem.hp();
    let base = (hp.alpha / 2.0).min(hp.gamma / 2.0);
    match (hp.vn_strategy, problem.risk_lipschitz()) {
        (VnStrategy::ProxLinear, Some(lr)) => base.min(hp.alpha + (hp.gamma - lr) / 2.0),
        _ => base,
    }
}

/// Relative-error constant `b̄ = b·√(3N)` with
/// `b = max{γ, α+γB, α+γL_B, γB+2γB², 2γB+γB²}`; the prox-linear variant
/// uses `L_R+α+γB` in place of `α+γB`.
pub fn bbar_constant(
    bound: f64,
    l_b: f64,
    gamma: f64,
    alpha: f64,
    depth: usize,
    l_r: f64,
    proxlinear: bool,
) -> f64 {
    let b = bound;
    let second = if proxlinear { l_r + alpha + gamma * b } else { alpha + gamma * b };
    let m = gamma
        .max(second)
        .max(alpha + gamma * l_b)
        .max(gamma * b + 2.0 * gamma * b * b)
        .max(2.0 * gamma * b + gamma * b * b);
    m * (3.0 * depth as f64).sqrt()
}

/// Relative-error constant for the residual form:
/// `max{α+γL_B, α+γB, 2γ(1+B+B²), γ(1+L_B·B+2B+2B²)}·√(3N)`, with `L_R`
/// added to the `α` terms under the prox-linear output update.
pub fn bbar_constant_residual(
    bound: f64,
    l_b: f64,
    gamma: f64,
    alpha: f64,
    depth: usize,
    l_r: f64,
    proxlinear: bool,
) -> f64 {
    let b = bound;
    let a = if proxlinear { alpha + l_r } else { alpha };
    let m = (a + gamma * l_b)
        .max(a + gamma * b)
        .max(2.0 * gamma * (1.0 + b + b * b))
        .max(gamma * (1.0 + l_b * b + 2.0 * b + 2.0 * b * b));
    m * (3.0 * depth as f64).sqrt()
}

/// `L_B`: the largest local Lipschitz constant over the network's
/// activations on `{|u| ≤ bound}`.
pub fn activation_bound(problem: &Problem, bound: f64) -> f64 {
    problem
        .spec()
        .activations()
        .iter()
        .map(|&k| activation_local_lipschitz(k, bound))
        .fold(0.0, f64::max)
}

/// `b̄` for the problem's form at iterate bound `bound`.
pub fn problem_bbar(problem: &Problem, bound: f64) -> f64 {
    let hp = problem.hp();
    let l_b = activation_bound(problem, bound);
    let proxlinear = hp.vn_strategy == VnStrategy::ProxLinear;
    let l_r = problem.risk_lipschitz().unwrap_or(0.0);
    let f = match problem.form() {
        Form::Residual => bbar_constant_residual,
        Form::TwoSplit | Form::ThreeSplit => bbar_constant,
    };
    f(bound, l_b, hp.gamma, hp.alpha, problem.depth(), l_r, proxlinear)
}

/// Norm of the iterate including the constant bias rows every state is
/// augmented with.
pub fn iterate_bound(problem: &Problem, state: &SplitState) -> f64 {
    let ones = if problem.spec().bias() {
        (problem.depth() * problem.n()) as f64
    } else {
        0.0
    };
    (state.norm_sq() + ones).sqrt()
}

/// `‖aug(X)‖_F`, a floor for the bound since `X` enters every first-layer
/// product.
pub fn input_bound(problem: &Problem) -> f64 {
    let ones = if problem.spec().bias() { problem.n() as f64 } else { 0.0 };
    (fro_norm_sq(problem.x()) + ones).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSummary {
    pub cesaro: Vec<f64>,
    pub bound: Vec<f64>,
    pub pass: bool,
}

/// Running averages `(1/K) Σ_{k≤K} delta_sq_k` against `total₀/(a·K)`.
///
/// The first record is the starting point (epoch 0) and supplies `total₀`;
/// the averages run over the records after it.
pub fn rate_summary(trace: &[TraceRecord], a: f64) -> RateSummary {
    let Some(first) = trace.first() else {
        return RateSummary {
            cesaro: vec![],
            bound: vec![],
            pass: true,
        };
    };
    let total0 = first.objective.total;
    let mut cesaro = Vec::with_capacity(trace.len().saturating_sub(1));
    let mut bound = Vec::with_capacity(cesaro.capacity());
    let mut sum = 0.0;
    let mut pass = true;
    for (k, r) in trace[1..].iter().enumerate() {
        let kk = (k + 1) as f64;
        sum += r.delta_sq;
        let c = sum / kk;
        let b = total0 / (a * kk);
        pass &= c <= b + DESCENT_EPS;
        cesaro.push(c);
        bound.push(b);
    }
    RateSummary { cesaro, bound, pass }
}

/// Read access to blocks, so the same partial-gradient code runs on a whole
/// state and on a mix of two states.
trait BlockView {
    fn get(&self, b: Block) -> &Matrix;
}

impl BlockView for SplitState {
    fn get(&self, b: Block) -> &Matrix {
        self.block(b)
    }
}

/// `cur` for blocks updated at or before the current one, `prev` for the
/// blocks still waiting.
struct Mixed<'a> {
    prev: &'a SplitState,
    cur: &'a SplitState,
    pending: &'a HashSet<Block>,
}

impl BlockView for Mixed<'_> {
    fn get(&self, b: Block) -> &Matrix {
        if self.pending.contains(&b) {
            self.prev.block(b)
        } else {
            self.cur.block(b)
        }
    }
}

fn state_input<'a>(problem: &'a Problem, s: &'a dyn BlockView, i: usize) -> &'a Matrix {
    if i == 1 {
        problem.x()
    } else {
        s.get(Block::V(i - 1))
    }
}

fn aug(problem: &Problem, m: &Matrix) -> Matrix {
    if problem.spec().bias() {
        m.with_ones_row()
    } else {
        m.clone()
    }
}

fn skip_of<'a>(problem: &'a Problem, s: &'a dyn BlockView, i: usize) -> Option<&'a Matrix> {
    (problem.form() == Form::Residual && problem.spec().has_skip(i)).then(|| state_input(problem, s, i))
}

/// `V_i − skip − σ_i(U_i)` for the three-split and residual forms.
fn state_gap(problem: &Problem, s: &dyn BlockView, i: usize) -> Matrix {
    let act = problem.spec().activation(i);
    let mut a = s.get(Block::V(i)).zip_map(s.get(Block::U(i)), |v, u| v - act.eval(u));
    if let Some(sk) = skip_of(problem, s, i) {
        a.axpy(-1.0, sk);
    }
    a
}

/// `U_i − W_i aug(V_{i−1})`
fn pre_gap(problem: &Problem, s: &dyn BlockView, i: usize) -> Result<Matrix> {
    let input = aug(problem, state_input(problem, s, i));
    Ok(s.get(Block::U(i)).sub(&matmul(s.get(Block::W(i)), &input)?))
}

/// Two-split: `σ'(P_i) ⊙ (σ(P_i) − V_i)` with `P_i = W_i aug(V_{i−1})`,
/// together with `V_i − σ(P_i)`.
fn two_split_gaps(problem: &Problem, s: &dyn BlockView, i: usize) -> Result<(Matrix, Matrix)> {
    let act = problem.spec().activation(i);
    let input = aug(problem, state_input(problem, s, i));
    let pre = matmul(s.get(Block::W(i)), &input)?;
    let gap = s.get(Block::V(i)).zip_map(&pre, |v, p| v - act.eval(p));
    let weighted = gap.zip_map(&pre, |e, p| -e * act.derivative(p));
    Ok((gap, weighted))
}

fn state_columns(problem: &Problem, w: &Matrix, i: usize) -> Matrix {
    if problem.spec().bias() {
        w.left_columns(problem.spec().dim(i))
    } else {
        w.clone()
    }
}

/// Partial gradient of the penalty `(γ/2)Σ‖·‖²` with respect to `block`,
/// using the derivative selection `σ'(0) = 0` at kinks.
fn penalty_partial(problem: &Problem, s: &dyn BlockView, block: Block) -> Result<Matrix> {
    let gamma = problem.hp().gamma;
    let n_layers = problem.depth();
    let spec = problem.spec();
    let g = match problem.form() {
        Form::ThreeSplit | Form::Residual => match block {
            Block::V(j) => {
                let mut g = state_gap(problem, s, j);
                if j < n_layers {
                    if skip_of(problem, s, j + 1).is_some() {
                        g.axpy(-1.0, &state_gap(problem, s, j + 1));
                    }
                    let w = state_columns(problem, s.get(Block::W(j + 1)), j);
                    g.axpy(-1.0, &matmul_tn(&w, &pre_gap(problem, s, j + 1)?)?);
                }
                g
            }
            Block::U(j) => {
                let act = spec.activation(j);
                let a = state_gap(problem, s, j);
                let mut g = a.zip_map(s.get(Block::U(j)), |e, u| -e * act.derivative(u));
                g.axpy(1.0, &pre_gap(problem, s, j)?);
                g
            }
            Block::W(j) => {
                let input = aug(problem, state_input(problem, s, j));
                matmul_nt(&pre_gap(problem, s, j)?, &input)?.scale(-1.0)
            }
        },
        Form::TwoSplit => match block {
            Block::V(j) => {
                let (mut g, _) = two_split_gaps(problem, s, j)?;
                if j < n_layers {
                    let (_, weighted) = two_split_gaps(problem, s, j + 1)?;
                    let w = state_columns(problem, s.get(Block::W(j + 1)), j);
                    g.axpy(1.0, &matmul_tn(&w, &weighted)?);
                }
                g
            }
            Block::W(j) => {
                let (_, weighted) = two_split_gaps(problem, s, j)?;
                let input = aug(problem, state_input(problem, s, j));
                matmul_nt(&weighted, &input)?
            }
            Block::U(_) => unreachable!("two-split states have no pre-activations"),
        },
    };
    Ok(g.scale(gamma))
}

/// Per-block subgradient elements of the objective at `cur`, built from the
/// optimality condition of each block update in the sweep `prev → cur`.
///
/// For block `B` updated from the intermediate state `S_B`, the element is
/// `∇_B pen(cur) − ∇_B pen(S_B) − α_B (B_cur − B_prev)`, plus
/// `∇R(V_N^cur) − ∇R(V_N^prev)` for a prox-linear output update.
pub fn subgrad_elements(
    problem: &Problem,
    prev: &SplitState,
    cur: &SplitState,
) -> Result<Vec<(Block, Matrix)>> {
    problem.check_state(prev)?;
    problem.check_state(cur)?;
    let hp = problem.hp();
    let order = hp.update_order.blocks(problem.form(), problem.depth())?;
    let mut pending: HashSet<Block> = order.iter().copied().collect();
    let mut out = Vec::with_capacity(order.len());
    for &block in &order {
        pending.remove(&block);
        let mixed = Mixed {
            prev,
            cur,
            pending: &pending,
        };
        let mut g = penalty_partial(problem, cur, block)?;
        g.axpy(-1.0, &penalty_partial(problem, &mixed, block)?);
        if has_proximal_term(problem, block) {
            g.axpy(-hp.alpha, &cur.block(block).sub(prev.block(block)));
        }
        if block == Block::V(problem.depth()) && hp.vn_strategy == VnStrategy::ProxLinear {
            let risk = problem.risk();
            g.axpy(1.0, &risk.gradient(cur.block(block), problem.y())?);
            g.axpy(-1.0, &risk.gradient(prev.block(block), problem.y())?);
        }
        out.push((block, g));
    }
    Ok(out)
}

/// Frobenius norm of the stacked subgradient element.
pub fn subgrad_residual(problem: &Problem, prev: &SplitState, cur: &SplitState) -> Result<f64> {
    Ok(subgrad_elements(problem, prev, cur)?
        .iter()
        .map(|(_, g)| fro_norm_sq(g))
        .sum::<f64>()
        .sqrt())
}
