mod common;

use proptest::prelude::*;

use splitbcd::data::render_trace_csv;
use splitbcd::diagnostics::{monotone_check, subgrad_residual};
use splitbcd::solver::{run_epoch, run_training, CheckPolicy, TrainingOptions};
use splitbcd::{
    ActivationKind, Form, Hyperparams, LossKind, Matrix, NetworkSpec, Problem, RegularizerKind,
    SplitState, VnStrategy,
};

fn scalar(v: f64) -> Matrix {
    Matrix::filled(1, 1, v)
}

#[test]
fn hand_stepped_identity_epoch() {
    let (gamma, alpha) = (1.3, 0.7);
    let (x, y) = (2.0, 1.5);
    let (w1, w2, u1, u2, v1, v2) = (0.5, -0.3, 0.2, 0.4, 1.1, -0.7);
    let spec = NetworkSpec::uniform(vec![1, 1, 1], ActivationKind::Identity, false, false).unwrap();
    let hp = Hyperparams {
        gamma,
        alpha,
        ..Default::default()
    };
    let p = Problem::new(Form::ThreeSplit, spec, hp, scalar(x), scalar(y)).unwrap();
    let s = SplitState {
        w: vec![scalar(w1), scalar(w2)],
        v: vec![scalar(v1), scalar(v2)],
        u: Some(vec![scalar(u1), scalar(u2)]),
    };

    // one backward sweep: V2, U2, W2, V1, U1, W1
    let v2n = (y + gamma * u2 + alpha * v2) / (1.0 + gamma + alpha);
    let u2n = (v2n + w2 * v1) / 2.0;
    let w2n = (gamma * u2n * v1 + alpha * w2) / (gamma * v1 * v1 + alpha);
    let v1n = (u1 + w2n * u2n) / (1.0 + w2n * w2n);
    let u1n = (gamma * v1n + gamma * w1 * x + alpha * u1) / (2.0 * gamma + alpha);
    let w1n = (gamma * u1n * x + alpha * w1) / (gamma * x * x + alpha);

    let r = run_epoch(&p, &s).unwrap();
    let got = [
        r.state.v(2).get(0, 0),
        r.state.u(2).get(0, 0),
        r.state.w(2).get(0, 0),
        r.state.v(1).get(0, 0),
        r.state.u(1).get(0, 0),
        r.state.w(1).get(0, 0),
    ];
    let want = [v2n, u2n, w2n, v1n, u1n, w1n];
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-10, "{got:?} vs {want:?}");
    }
    let delta: f64 = [
        (v2n - v2),
        (u2n - u2),
        (w2n - w2),
        (v1n - v1),
        (u1n - u1),
        (w1n - w1),
    ]
    .iter()
    .map(|d| d * d)
    .sum();
    assert!((r.delta_sq - delta).abs() < 1e-10);
}

fn quick(epochs: usize) -> TrainingOptions {
    TrainingOptions {
        epochs,
        init_std: 0.5,
        abort_on_violation: false,
        ..Default::default()
    }
}

fn check_suite(form: Form, losses: &[LossKind], epochs: usize) {
    for toy in common::toy_suite(form, losses) {
        let r = run_training(&toy.problem, &toy.labels, None, &quick(epochs)).unwrap();
        assert!(r.sufficient, "{}", toy.name);
        assert!(r.descent_pass(), "{}: {:?}", toy.name, r.violations.first());
        assert_eq!(r.checks_passed, epochs);
        assert!(r.rate.pass, "{}", toy.name);
        assert_eq!(r.residual_pass, Some(true), "{}", toy.name);
        assert!(r.trace.windows(2).all(|w| w[1].objective.total <= w[0].objective.total));
    }
}

#[test]
fn three_split_suite_descends() {
    check_suite(Form::ThreeSplit, &[LossKind::Squared, LossKind::Hinge], 60);
}

#[test]
fn two_split_and_residual_suites_descend() {
    check_suite(Form::TwoSplit, &[LossKind::Squared, LossKind::Hinge], 60);
    check_suite(Form::Residual, &[LossKind::Squared, LossKind::Hinge], 60);
}

#[test]
fn prox_linear_cross_entropy_descends() {
    for form in [Form::ThreeSplit, Form::Residual] {
        let suite = common::toy_suite(form, &[LossKind::CrossEntropy]);
        for toy in suite {
            assert_eq!(toy.problem.hp().vn_strategy, VnStrategy::ProxLinear);
            let r = run_training(&toy.problem, &toy.labels, None, &quick(60)).unwrap();
            let lr = toy.problem.risk_lipschitz().unwrap();
            assert!(lr < 1.0);
            assert!((r.a - 0.5f64.min(1.0 + (1.0 - lr) / 2.0)).abs() < 1e-15);
            assert!(r.descent_pass() && r.rate.pass, "{}", toy.name);
        }
    }
}

#[test]
fn regularized_identity_run_settles() {
    let toy = common::toy(
        Form::ThreeSplit,
        ActivationKind::Identity,
        LossKind::Squared,
        RegularizerKind::SquaredFro(0.1),
        3,
    );
    let r = run_training(&toy.problem, &toy.labels, None, &quick(2000)).unwrap();
    let last = r.final_record();
    assert!(last.delta_sq < 1e-8, "{}", last.delta_sq);
    assert!(last.residual_norm < 1e-6, "{}", last.residual_norm);
}

#[test]
fn same_seed_same_trace() {
    let toy = common::toy(
        Form::Residual,
        ActivationKind::Relu,
        LossKind::Hinge,
        RegularizerKind::None,
        9,
    );
    let strip = |mut t: Vec<splitbcd::diagnostics::TraceRecord>| {
        for r in &mut t {
            r.wall_seconds = 0.0;
        }
        render_trace_csv(&t).unwrap()
    };
    let a = run_training(&toy.problem, &toy.labels, None, &quick(20)).unwrap();
    let b = run_training(&toy.problem, &toy.labels, None, &quick(20)).unwrap();
    assert_eq!(strip(a.trace), strip(b.trace));
    assert_eq!(a.state, b.state);
}

#[test]
fn fixed_point_has_zero_residual() {
    let toy = common::toy(
        Form::ThreeSplit,
        ActivationKind::Relu,
        LossKind::Squared,
        RegularizerKind::None,
        4,
    );
    let r = run_training(&toy.problem, &toy.labels, None, &quick(3)).unwrap();
    assert_eq!(subgrad_residual(&toy.problem, &r.state, &r.state).unwrap(), 0.0);
}

fn inexact_problem(seed: u64, form_pick: u8, act_pick: u8, reg_pick: u8) -> (Problem, Vec<usize>) {
    let act = [
        ActivationKind::Relu,
        ActivationKind::LeakyRelu(0.2),
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Identity,
    ][act_pick as usize % 5];
    let form = [Form::TwoSplit, Form::ThreeSplit, Form::Residual][form_pick as usize % 3];
    let reg = [
        RegularizerKind::None,
        RegularizerKind::SquaredFro(0.05),
        RegularizerKind::L1(0.02),
        RegularizerKind::NonnegIndicator,
    ][reg_pick as usize % 4];
    let mut toy = common::toy(form, act, LossKind::Squared, RegularizerKind::None, seed);
    let spec = toy.problem.spec().clone();
    let hp = Hyperparams {
        w_reg: vec![reg],
        v_reg: vec![reg],
        inner_iters: 30,
        seed,
        ..Default::default()
    };
    let p = Problem::new(form, spec, hp, toy.problem.x().clone(), toy.problem.y().clone()).unwrap();
    (p, std::mem::take(&mut toy.labels))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn objective_never_increases(seed in 0u64..1000, f in 0u8..3, a in 0u8..5, g in 0u8..4) {
        let (p, labels) = inexact_problem(seed, f, a, g);
        let opts = TrainingOptions {
            epochs: 15,
            init_std: 0.5,
            check: CheckPolicy::Monotone,
            ..Default::default()
        };
        let r = run_training(&p, &labels, None, &opts).unwrap();
        for w in r.trace.windows(2) {
            prop_assert!(monotone_check(w[0].objective.total, w[1].objective.total));
            prop_assert!(w[1].delta_sq >= 0.0);
        }
    }
}
