//! Shared fixtures: the toy training suite and an independent numeric
//! minimizer for single-block subproblems.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use splitbcd::data::one_hot;
use splitbcd::operators::oracle::dense_grid_min;
use splitbcd::solver::{block_is_exact, update_block};
use splitbcd::state::{Block, UpdateOrder};
use splitbcd::{
    ActivationKind, Form, Hyperparams, LossKind, Matrix, NetworkSpec, Problem, RegularizerKind,
    SplitState, VnStrategy,
};

pub struct Toy {
    pub problem: Problem,
    pub labels: Vec<usize>,
    pub name: String,
}

pub const TOY_N: usize = 16;

/// Dims `(4,6,6,3)`, or `(4,6,6,6,3)` for the residual form so two layers
/// carry a skip.
pub fn toy_dims(form: Form) -> Vec<usize> {
    if form == Form::Residual {
        vec![4, 6, 6, 6, 3]
    } else {
        vec![4, 6, 6, 3]
    }
}

pub fn toy(form: Form, act: ActivationKind, loss: LossKind, reg: RegularizerKind, seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(4, TOY_N, |_, _| rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..TOY_N).map(|_| rng.random_range(0..3)).collect();
    let mut y = one_hot(&labels, 3);
    if loss == LossKind::Hinge {
        y = y.map(|t| 2.0 * t - 1.0);
    }
    let residual = form == Form::Residual;
    let spec = NetworkSpec::uniform(toy_dims(form), act, residual, true).unwrap();
    let hp = Hyperparams {
        loss,
        w_reg: vec![reg],
        v_reg: vec![reg],
        vn_strategy: if loss == LossKind::CrossEntropy {
            VnStrategy::ProxLinear
        } else {
            VnStrategy::ProximalExact
        },
        seed,
        ..Default::default()
    };
    Toy {
        problem: Problem::new(form, spec, hp, x, y).unwrap(),
        labels,
        name: format!("{form}/{act}/{loss}/{reg}"),
    }
}

/// Every exact-block configuration of `form` over the toy grid of
/// activations, losses and regularizers. The two-split form is exact only
/// with identity activations.
pub fn toy_suite(form: Form, losses: &[LossKind]) -> Vec<Toy> {
    let acts: &[ActivationKind] = if form == Form::TwoSplit {
        &[ActivationKind::Identity]
    } else {
        &[ActivationKind::Relu, ActivationKind::Sigmoid, ActivationKind::Identity]
    };
    let mut out = Vec::new();
    let mut seed = 100;
    for &act in acts {
        for &loss in losses {
            for reg in [RegularizerKind::None, RegularizerKind::SquaredFro(0.01)] {
                seed += 1;
                out.push(toy(form, act, loss, reg, seed));
            }
        }
    }
    out
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        std * z
    })
}

/// A random small problem (dims ≤ 5, n ≤ 8) with a random state that is not
/// a forward pass.
pub fn random_instance(seed: u64) -> (Problem, SplitState) {
    random_instance_in(seed, None)
}

/// [`random_instance`] with the form fixed when `only` is given.
pub fn random_instance_in(seed: u64, only: Option<Form>) -> (Problem, SplitState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn = [Form::TwoSplit, Form::ThreeSplit, Form::Residual][rng.random_range(0..3)];
    let form = only.unwrap_or(drawn);
    let depth = rng.random_range(2..=3);
    let n = rng.random_range(1..=8);
    let act = match form {
        // the two-split form is closed-form only for identity layers
        Form::TwoSplit if rng.random_bool(0.7) => ActivationKind::Identity,
        _ => [
            ActivationKind::Relu,
            ActivationKind::LeakyRelu(0.1),
            ActivationKind::Sigmoid,
            ActivationKind::Tanh,
            ActivationKind::Identity,
        ][rng.random_range(0..5)],
    };
    let mut dims = Vec::with_capacity(depth + 1);
    dims.push(rng.random_range(1..=5));
    let hidden = rng.random_range(1..=5);
    for i in 1..depth {
        if form == Form::Residual || i == 1 {
            dims.push(hidden);
        } else {
            dims.push(rng.random_range(1..=5));
        }
    }
    dims.push(rng.random_range(1..=5));
    let residual = form == Form::Residual;
    let bias = rng.random_bool(0.5);
    let spec = NetworkSpec::uniform(dims.clone(), act, residual, bias).unwrap();

    let loss = [LossKind::Squared, LossKind::Hinge, LossKind::CrossEntropy][rng.random_range(0..3)];
    let quad = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.5) {
            RegularizerKind::None
        } else {
            RegularizerKind::SquaredFro(rng.random_range(0.01..1.0))
        }
    };
    let w_reg = (0..depth).map(|_| quad(&mut rng)).collect();
    let mut v_reg: Vec<_> = (0..depth).map(|_| quad(&mut rng)).collect();
    if loss == LossKind::Squared {
        v_reg[depth - 1] = match rng.random_range(0..4) {
            0 => RegularizerKind::L1(rng.random_range(0.01..1.0)),
            1 => RegularizerKind::NonnegIndicator,
            _ => quad(&mut rng),
        };
    }
    let d_out = dims[depth];
    let x = normal(&mut rng, dims[0], n, 1.0);
    let y = match loss {
        LossKind::Hinge => Matrix::from_fn(d_out, n, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 }),
        LossKind::CrossEntropy => {
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..d_out)).collect();
            one_hot(&labels, d_out)
        }
        LossKind::Squared => normal(&mut rng, d_out, n, 1.0),
    };
    let hp = Hyperparams {
        gamma: rng.random_range(0.5..2.0),
        alpha: rng.random_range(0.5..2.0),
        loss,
        w_reg,
        v_reg,
        vn_strategy: if loss == LossKind::CrossEntropy {
            VnStrategy::ProxLinear
        } else {
            VnStrategy::ProximalExact
        },
        update_order: UpdateOrder::Backward,
        ..Default::default()
    };
    let problem = Problem::new(form, spec.clone(), hp, x, y).unwrap();
    let w = (1..=depth)
        .map(|i| normal(&mut rng, spec.dim(i), spec.input_width(i), 0.8))
        .collect();
    let v = (1..=depth).map(|i| normal(&mut rng, dims[i], n, 1.0)).collect();
    let u = residual || form == Form::ThreeSplit;
    let u = u.then(|| (1..=depth).map(|i| normal(&mut rng, dims[i], n, 1.0)).collect());
    (problem, SplitState { w, v, u })
}

/// Whether a block subproblem carries `(α/2)‖B − B_old‖²`.
fn carries_prox(p: &Problem, block: Block) -> bool {
    let last = p.depth();
    match (p.form(), block) {
        (Form::TwoSplit, _) => true,
        (_, Block::V(i)) => i == last,
        (_, Block::U(i)) => i != last,
        (_, Block::W(_)) => true,
    }
}

/// The subproblem the update of `block` minimizes, evaluated from the
/// objective definition alone. For a prox-linear output block the risk is
/// replaced by its linearization at the old value.
pub fn subproblem<'a>(p: &'a Problem, s: &SplitState, block: Block) -> impl Fn(&Matrix) -> f64 + 'a {
    let old = s.block(block).clone();
    let linearize = block == Block::V(p.depth()) && p.hp().vn_strategy == VnStrategy::ProxLinear;
    let (grad, risk_old) = if linearize {
        let r = p.risk();
        (Some(r.gradient(&old, p.y()).unwrap()), r.value(&old, p.y()).unwrap())
    } else {
        (None, 0.0)
    };
    let prox = carries_prox(p, block);
    let alpha = p.hp().alpha;
    let base = s.clone();
    move |m: &Matrix| {
        let mut work = base.clone();
        *work.block_mut(block) = m.clone();
        let o = p.eval_objective(&work).unwrap();
        let mut f = o.total;
        if let Some(g) = &grad {
            f += risk_old + g.dot(&m.sub(&old)) - o.risk;
        }
        if prox {
            let d = m.sub(&old);
            f += 0.5 * alpha * d.dot(&d);
        }
        f
    }
}

/// Whether the subproblem decouples entry by entry.
fn separable(p: &Problem, block: Block) -> bool {
    match block {
        Block::U(_) => true,
        Block::V(i) => i == p.depth(),
        _ => false,
    }
}

/// Independent numeric minimum of the block subproblem: a dense 1-D scan per
/// entry when the subproblem is separable, gradient descent with
/// Barzilai–Borwein steps and finite-difference gradients otherwise.
pub fn numeric_block_min(p: &Problem, s: &SplitState, block: Block) -> f64 {
    let f = subproblem(p, s, block);
    let start = s.block(block).clone();
    if separable(p, block) {
        let radius = 4.0 + 2.0 * s.norm_sq().sqrt().max(p.y().max_abs());
        // separable, so any feasible start works
        let mut x = Matrix::zeros(start.rows(), start.cols());
        for k in 0..x.data().len() {
            let (best, _) = dense_grid_min(
                |t| {
                    let mut probe = x.clone();
                    probe.data_mut()[k] = t;
                    f(&probe)
                },
                -radius,
                radius,
                1501,
            );
            x.data_mut()[k] = best;
        }
        f(&x)
    } else {
        bb_descent(&f, start, 2000)
    }
}

fn fd_gradient(f: &impl Fn(&Matrix) -> f64, x: &Matrix) -> Matrix {
    let h = 1e-5;
    let mut g = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.data().len() {
        let c = x.data()[k];
        probe.data_mut()[k] = c + h;
        let up = f(&probe);
        probe.data_mut()[k] = c - h;
        let down = f(&probe);
        probe.data_mut()[k] = c;
        g.data_mut()[k] = (up - down) / (2.0 * h);
    }
    g
}

fn bb_descent(f: &impl Fn(&Matrix) -> f64, mut x: Matrix, iters: usize) -> f64 {
    let mut g = fd_gradient(f, &x);
    let mut step = 1e-2;
    for _ in 0..iters {
        if g.fro_norm() < 1e-10 {
            break;
        }
        let next = x.zip_map(&g, |a, b| a - step * b);
        let g_next = fd_gradient(f, &next);
        let sx = next.sub(&x);
        let sg = g_next.sub(&g);
        let curv = sx.dot(&sg);
        step = if curv > 0.0 { sx.dot(&sx) / curv } else { 1e-2 };
        x = next;
        g = g_next;
    }
    f(&x)
}

pub struct BlockMismatch {
    pub seed: u64,
    pub form: Form,
    pub block: Block,
    pub closed: f64,
    pub numeric: f64,
}

/// Runs every exact block of `cases` random instances (of form `only`, if
/// given) against [`numeric_block_min`]; returns the number of comparisons
/// and the objective mismatches beyond `tol` in either direction.
pub fn block_exactness(cases: u64, seed: u64, tol: f64, only: Option<Form>) -> (usize, Vec<BlockMismatch>) {
    let mut compared = 0;
    let mut bad = Vec::new();
    for c in 0..cases {
        let (p, s) = random_instance_in(seed.wrapping_mul(1_000_003).wrapping_add(c), only);
        let blocks = p.hp().update_order.blocks(p.form(), p.depth()).unwrap();
        for block in blocks {
            if !block_is_exact(&p, block) {
                continue;
            }
            let value = update_block(&p, &s, block).unwrap();
            let closed = subproblem(&p, &s, block)(&value);
            let numeric = numeric_block_min(&p, &s, block);
            compared += 1;
            if (closed - numeric).abs() > tol {
                bad.push(BlockMismatch {
                    seed: c,
                    form: p.form(),
                    block,
                    closed,
                    numeric,
                });
            }
        }
    }
    (compared, bad)
}
