//! Brute-force reference minimizers for the scalar proximal maps.
//!
//! Each oracle brackets the minimizer from a feasible reference point `r`:
//! any global minimizer `u*` satisfies `(γ/2)(u* − b)² ≤ f(u*) ≤ f(r)`, so
//! `|u* − b| ≤ sqrt(2 f(r) / γ)`. The bracket is scanned on a uniform grid
//! and the three best grid points are polished by golden-section search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{hinge_prox, relu_quad_prox, reg_quad_argmin, smooth_scalar_quad_min};
use super::{ActivationKind, RegularizerKind};
use crate::linalg::Matrix;

pub const GRID_POINTS: usize = 100_000;

/// Approximate global minimum of `f` on `[lo, hi]`: uniform scan with
/// `points` samples, then golden-section refinement around the three lowest
/// sampled local minima.
pub fn dense_grid_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> (f64, f64) {
    if !(hi > lo) || points < 2 {
        return (lo, f(lo));
    }
    let step = (hi - lo) / (points - 1) as f64;
    let at = |k: usize| if k + 1 == points { hi } else { lo + step * k as f64 };

    let mut vals: Vec<f64> = (0..points).map(|k| f(lo + step * k as f64)).collect();
    vals[points - 1] = f(hi);

    // the three lowest local minima of the sampled values, so separate
    // basins each get refined
    let mut best = [(f64::INFINITY, 0usize); 3];
    let last = points - 1;
    for k in 0..points {
        let fk = vals[k];
        let left = if k > 0 { vals[k - 1] } else { f64::INFINITY };
        let right = if k < last { vals[k + 1] } else { f64::INFINITY };
        if fk <= left && fk <= right && fk < best[2].0 {
            best[2] = (fk, k);
            if best[2].0 < best[1].0 {
                best.swap(1, 2);
                if best[1].0 < best[0].0 {
                    best.swap(0, 1);
                }
            }
        }
    }

    let (mut arg, mut val) = (at(best[0].1), best[0].0);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for &(fk, k) in &best {
        if !fk.is_finite() {
            continue;
        }
        let mut a = at(k.saturating_sub(1));
        let mut b = at((k + 1).min(points - 1));
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..120 {
            if b - a <= 1e-15 * (1.0 + a.abs()) {
                break;
            }
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = f(d);
            }
        }
        for (x, fx) in [(c, fc), (d, fd)] {
            if fx < val {
                arg = x;
                val = fx;
            }
        }
    }
    (arg, val)
}

fn bracketed(f: impl Fn(f64) -> f64, center: f64, gamma: f64, reference: f64) -> (f64, f64) {
    let r = (2.0 * f(reference) / gamma).sqrt() * (1.0 + 1e-9) + 1e-12;
    dense_grid_min(f, center - r, center + r, GRID_POINTS)
}

pub fn relu_oracle(a: f64, b: f64, gamma: f64) -> (f64, f64) {
    let f = move |u: f64| 0.5 * (u.max(0.0) - a).powi(2) + 0.5 * gamma * (u - b).powi(2);
    bracketed(f, b, gamma, b)
}

pub fn hinge_oracle(a: f64, b: f64, gamma: f64) -> (f64, f64) {
    let f = move |u: f64| (1.0 - a * u).max(0.0) + 0.5 * gamma * (u - b).powi(2);
    bracketed(f, b, gamma, b)
}

pub fn smooth_oracle(kind: ActivationKind, v: f64, b: f64, gamma: f64) -> (f64, f64) {
    let f = move |u: f64| 0.5 * (kind.eval(u) - v).powi(2) + 0.5 * gamma * (u - b).powi(2);
    bracketed(f, b, gamma, b)
}

/// Reference minimizer of `reg(x) + (ρ/2)(x − c)²` restricted to the
/// regularizer's domain.
pub fn reg_oracle(reg: RegularizerKind, c: f64, rho: f64) -> (f64, f64) {
    let f = move |x: f64| reg.scalar_value(x) + 0.5 * rho * (x - c).powi(2);
    let (reference, dom_lo, dom_hi) = match reg {
        RegularizerKind::NonnegIndicator => (c.abs(), 0.0, f64::INFINITY),
        RegularizerKind::Box { lo, hi } => (0.5 * (lo + hi), lo, hi),
        _ => (c, f64::NEG_INFINITY, f64::INFINITY),
    };
    let r = (2.0 * f(reference) / rho).sqrt() * (1.0 + 1e-9) + 1e-12;
    let lo = (c - r).max(dom_lo);
    let hi = (c + r).min(dom_hi);
    if lo > hi {
        return (reference, f(reference));
    }
    dense_grid_min(f, lo, hi, GRID_POINTS)
}

/// Central finite-difference gradient of a scalar matrix function.
pub fn finite_difference_gradient(f: impl Fn(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.data().len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[k] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[k] = orig;
        g.data_mut()[k] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Outcome of one randomized oracle suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub violations: usize,
    /// Largest `f(closed form) − f(oracle)` seen; the check passes while
    /// this stays at or below the tolerance.
    pub worst_excess: f64,
    pub first_violation: Option<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub const PROX_TOL: f64 = 1e-8;

struct Tally {
    report: SuiteReport,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally {
            report: SuiteReport {
                name,
                cases: 0,
                violations: 0,
                worst_excess: f64::NEG_INFINITY,
                first_violation: None,
            },
        }
    }

    fn record(&mut self, closed: f64, oracle: f64, describe: impl FnOnce() -> String) {
        let r = &mut self.report;
        r.cases += 1;
        let excess = closed - oracle;
        if excess > r.worst_excess || excess.is_nan() {
            r.worst_excess = excess;
        }
        if !(excess <= PROX_TOL) {
            r.violations += 1;
            if r.first_violation.is_none() {
                r.first_violation = Some(describe());
            }
        }
    }
}

pub fn relu_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("relu_quad_prox");
    for _ in 0..cases {
        let a = rng.random_range(-5.0..5.0);
        let b = rng.random_range(-5.0..5.0);
        let g = rng.random_range(0.1..10.0);
        let u = relu_quad_prox(a, b, g);
        let fu = 0.5 * (u.max(0.0) - a).powi(2) + 0.5 * g * (u - b).powi(2);
        let (_, fo) = relu_oracle(a, b, g);
        t.record(fu, fo, || format!("a={a:e} b={b:e} gamma={g:e} u={u:e}"));
    }
    t.report
}

pub fn hinge_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("hinge_prox");
    for _ in 0..cases {
        let a = rng.random_range(-5.0..5.0);
        let b = rng.random_range(-5.0..5.0);
        let g = rng.random_range(0.1..10.0);
        let u = hinge_prox(a, b, g);
        let fu = (1.0 - a * u).max(0.0) + 0.5 * g * (u - b).powi(2);
        let (_, fo) = hinge_oracle(a, b, g);
        t.record(fu, fo, || format!("a={a:e} b={b:e} gamma={g:e} u={u:e}"));
    }
    t.report
}

pub fn smooth_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("smooth_scalar_quad_min");
    for k in 0..cases {
        let kind = if k % 2 == 0 {
            ActivationKind::Sigmoid
        } else {
            ActivationKind::Tanh
        };
        let v = rng.random_range(-2.0..2.0);
        let b = rng.random_range(-5.0..5.0);
        let g = rng.random_range(0.1..10.0);
        let u = smooth_scalar_quad_min(kind, v, b, g);
        let fu = 0.5 * (kind.eval(u) - v).powi(2) + 0.5 * g * (u - b).powi(2);
        let (_, fo) = smooth_oracle(kind, v, b, g);
        t.record(fu, fo, || format!("{kind} v={v:e} b={b:e} gamma={g:e} u={u:e}"));
    }
    t.report
}

pub fn reg_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new("reg_quad_argmin");
    for k in 0..cases {
        let w = rng.random_range(0.01..2.0);
        let reg = match k % 6 {
            0 => RegularizerKind::None,
            1 => RegularizerKind::SquaredFro(w),
            2 => RegularizerKind::L1(w),
            3 => RegularizerKind::ElasticNet { l1: w, l2: 0.5 * w },
            4 => RegularizerKind::NonnegIndicator,
            _ => RegularizerKind::Box { lo: -w, hi: 2.0 * w },
        };
        let c = rng.random_range(-5.0..5.0);
        let rho = rng.random_range(0.1..10.0);
        let x = reg_quad_argmin(reg, &Matrix::filled(1, 1, c), rho).get(0, 0);
        let fx = reg.scalar_value(x) + 0.5 * rho * (x - c).powi(2);
        let (_, fo) = reg_oracle(reg, c, rho);
        t.record(fx, fo, || format!("{reg} c={c:e} rho={rho:e} x={x:e}"));
    }
    t.report
}

/// All four suites with independent seeds derived from `seed`.
pub fn run_prox_suites(cases: usize, seed: u64) -> Vec<SuiteReport> {
    vec![
        relu_suite(cases, seed),
        hinge_suite(cases, seed.wrapping_add(1)),
        smooth_suite(cases, seed.wrapping_add(2)),
        reg_suite(cases, seed.wrapping_add(3)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_min_finds_quadratic_vertex() {
        let (x, fx) = dense_grid_min(|u| (u - 0.3).powi(2), -1.0, 1.0, 1000);
        assert!((x - 0.3).abs() < 1e-7);
        assert!(fx < 1e-14);
    }

    #[test]
    fn grid_min_handles_kinks() {
        let (x, _) = dense_grid_min(|u: f64| (u - 1.0 / 3.0).abs(), -1.0, 1.0, 1001);
        assert!((x - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn small_suites_pass() {
        for r in run_prox_suites(200, 5) {
            assert!(r.passed(), "{r:?}");
            assert_eq!(r.cases, 200);
        }
    }

    #[test]
    fn finite_differences_of_quadratic() {
        let x = Matrix::from_rows(&[[1.0, -2.0]]).unwrap();
        let g = finite_difference_gradient(|m| 0.5 * m.dot(m), &x, 1e-6);
        assert!(g.sub(&x).max_abs() < 1e-8);
    }
}
