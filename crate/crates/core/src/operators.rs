//! Activations, losses, regularizers and the scalar proximal maps used by the
//! block updates.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::linalg::Matrix;

pub mod oracle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("{op} is not available for the {loss} loss")]
    UnsupportedLoss { loss: LossKind, op: &'static str },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("cannot parse {what} from {input:?}: {reason}")]
pub struct ParseKindError {
    what: &'static str,
    input: String,
    reason: String,
}

impl ParseKindError {
    fn new(what: &'static str, input: &str, reason: impl Into<String>) -> Self {
        ParseKindError {
            what,
            input: input.to_string(),
            reason: reason.into(),
        }
    }
}

fn parse_num(what: &'static str, input: &str, s: &str) -> Result<f64, ParseKindError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| ParseKindError::new(what, input, format!("{s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(ParseKindError::new(what, input, "value must be finite"));
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// Activations

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Identity,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ActivationKind {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            ActivationKind::Identity => x,
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::LeakyRelu(s) => {
                if x >= 0.0 {
                    x
                } else {
                    s * x
                }
            }
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Tanh => x.tanh(),
        }
    }

    /// Derivative, with the kinks of ReLU and LeakyReLU resolved to the
    /// left slope (0 for ReLU).
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::Identity => 1.0,
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn is_identity(self) -> bool {
        matches!(self, ActivationKind::Identity)
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Identity => write!(f, "identity"),
            ActivationKind::Relu => write!(f, "relu"),
            ActivationKind::LeakyRelu(s) => write!(f, "leaky:{s}"),
            ActivationKind::Sigmoid => write!(f, "sigmoid"),
            ActivationKind::Tanh => write!(f, "tanh"),
        }
    }
}

impl FromStr for ActivationKind {
    type Err = ParseKindError;

    /// Accepts `identity`, `relu`, `leaky:<slope>`, `sigmoid`, `tanh`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        const WHAT: &str = "activation";
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "identity" | "linear" => Ok(ActivationKind::Identity),
            "relu" => Ok(ActivationKind::Relu),
            "sigmoid" => Ok(ActivationKind::Sigmoid),
            "tanh" => Ok(ActivationKind::Tanh),
            "leaky" | "leakyrelu" => Ok(ActivationKind::LeakyRelu(0.01)),
            _ => {
                let Some(rest) = t.strip_prefix("leaky:") else {
                    return Err(ParseKindError::new(WHAT, s, "unknown activation"));
                };
                let slope = parse_num(WHAT, s, rest)?;
                if !(slope > 0.0 && slope < 1.0) {
                    return Err(ParseKindError::new(WHAT, s, "slope must lie in (0, 1)"));
                }
                Ok(ActivationKind::LeakyRelu(slope))
            }
        }
    }
}

pub fn activation_apply(kind: ActivationKind, a: &Matrix) -> Matrix {
    a.map(|x| kind.eval(x))
}

/// Lipschitz constant of the activation on `{|u| ≤ bound}`.
pub fn activation_local_lipschitz(kind: ActivationKind, bound: f64) -> f64 {
    let _ = bound;
    match kind {
        ActivationKind::Identity | ActivationKind::Relu | ActivationKind::Tanh => 1.0,
        ActivationKind::LeakyRelu(s) => s.max(1.0),
        ActivationKind::Sigmoid => 0.25,
    }
}

// ---------------------------------------------------------------------------
// Losses

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Squared,
    Hinge,
    CrossEntropy,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Squared => "squared",
            LossKind::Hinge => "hinge",
            LossKind::CrossEntropy => "cross-entropy",
        })
    }
}

impl FromStr for LossKind {
    type Err = ParseKindError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "squared" | "square" | "mse" => Ok(LossKind::Squared),
            "hinge" => Ok(LossKind::Hinge),
            "cross-entropy" | "crossentropy" | "ce" | "logistic" => Ok(LossKind::CrossEntropy),
            _ => Err(ParseKindError::new("loss", s, "unknown loss")),
        }
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Empirical risk `weight · Σ_j ℓ(u_j, y_j)` over the columns of `u`.
///
/// The plain mean risk uses `weight = 1/n`; [`Risk::mean`] builds it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Risk {
    pub loss: LossKind,
    pub weight: f64,
}

impl Risk {
    pub fn new(loss: LossKind, weight: f64) -> Self {
        Risk { loss, weight }
    }

    pub fn mean(loss: LossKind, n: usize) -> Self {
        Risk {
            loss,
            weight: 1.0 / n as f64,
        }
    }

    fn check(&self, u: &Matrix, y: &Matrix, op: &'static str) -> Result<(), OperatorError> {
        if u.shape() != y.shape() {
            return Err(OperatorError::ShapeMismatch {
                op,
                left: u.shape(),
                right: y.shape(),
            });
        }
        Ok(())
    }

    pub fn value(&self, u: &Matrix, y: &Matrix) -> Result<f64, OperatorError> {
        self.check(u, y, "risk_value")?;
        let pairs = u.data().iter().zip(y.data());
        let sum: f64 = match self.loss {
            LossKind::Squared => 0.5 * pairs.map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            LossKind::Hinge => pairs.map(|(a, b)| (1.0 - a * b).max(0.0)).sum(),
            LossKind::CrossEntropy => {
                let d = u.rows() as f64;
                pairs.map(|(a, b)| softplus(*a) - b * a).sum::<f64>() / d
            }
        };
        Ok(self.weight * sum)
    }

    pub fn gradient(&self, u: &Matrix, y: &Matrix) -> Result<Matrix, OperatorError> {
        self.check(u, y, "risk_gradient")?;
        let w = self.weight;
        match self.loss {
            LossKind::Squared => Ok(u.zip_map(y, |a, b| w * (a - b))),
            LossKind::CrossEntropy => {
                let s = w / u.rows() as f64;
                Ok(u.zip_map(y, |a, b| s * (sigmoid(a) - b)))
            }
            LossKind::Hinge => Err(OperatorError::UnsupportedLoss {
                loss: self.loss,
                op: "risk_gradient",
            }),
        }
    }

    /// Global Lipschitz constant of the gradient in Frobenius norm.
    pub fn grad_lipschitz(&self) -> Result<f64, OperatorError> {
        match self.loss {
            LossKind::Squared => Ok(self.weight),
            // σ' ≤ 1/4 per coordinate; the 1/d_N prefactor only tightens this.
            LossKind::CrossEntropy => Ok(self.weight / 4.0),
            LossKind::Hinge => Err(OperatorError::UnsupportedLoss {
                loss: self.loss,
                op: "risk_grad_lipschitz",
            }),
        }
    }
}

/// Mean empirical risk `(1/n) Σ_j ℓ(u_j, y_j)`.
pub fn risk_value(loss: LossKind, u: &Matrix, y: &Matrix) -> Result<f64, OperatorError> {
    Risk::mean(loss, u.cols()).value(u, y)
}

pub fn risk_gradient(loss: LossKind, u: &Matrix, y: &Matrix) -> Result<Matrix, OperatorError> {
    Risk::mean(loss, u.cols()).gradient(u, y)
}

pub fn risk_grad_lipschitz(loss: LossKind, n: usize, d_out: usize) -> Result<f64, OperatorError> {
    let _ = d_out;
    Risk::mean(loss, n).grad_lipschitz()
}

// ---------------------------------------------------------------------------
// Regularizers

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegularizerKind {
    None,
    /// `λ‖X‖²_F`
    SquaredFro(f64),
    /// `λ‖X‖₁`
    L1(f64),
    /// `l1‖X‖₁ + l2‖X‖²_F`
    ElasticNet { l1: f64, l2: f64 },
    NonnegIndicator,
    Box { lo: f64, hi: f64 },
}

impl RegularizerKind {
    /// True when the regularizer is a (possibly zero) multiple of `‖X‖²_F`,
    /// so the block stays a plain quadratic.
    pub fn is_quadratic(&self) -> bool {
        matches!(self, RegularizerKind::None | RegularizerKind::SquaredFro(_))
    }

    /// Coefficient of `‖X‖²_F`.
    pub fn l2_weight(&self) -> f64 {
        match *self {
            RegularizerKind::SquaredFro(l) => l,
            RegularizerKind::ElasticNet { l2, .. } => l2,
            _ => 0.0,
        }
    }

    #[inline]
    pub fn scalar_value(&self, x: f64) -> f64 {
        match *self {
            RegularizerKind::None => 0.0,
            RegularizerKind::SquaredFro(l) => l * x * x,
            RegularizerKind::L1(l) => l * x.abs(),
            RegularizerKind::ElasticNet { l1, l2 } => l1 * x.abs() + l2 * x * x,
            RegularizerKind::NonnegIndicator => {
                if x >= 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            RegularizerKind::Box { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `argmin_x reg(x) + (ρ/2)(x − c)²`
    #[inline]
    pub fn scalar_prox(&self, c: f64, rho: f64) -> f64 {
        match *self {
            RegularizerKind::None => c,
            RegularizerKind::SquaredFro(l) => rho * c / (rho + 2.0 * l),
            RegularizerKind::L1(l) => soft_threshold(c, l / rho),
            RegularizerKind::ElasticNet { l1, l2 } => {
                soft_threshold(c, l1 / rho) * rho / (rho + 2.0 * l2)
            }
            RegularizerKind::NonnegIndicator => c.max(0.0),
            RegularizerKind::Box { lo, hi } => c.clamp(lo, hi),
        }
    }

    pub fn value(&self, x: &Matrix) -> f64 {
        match *self {
            RegularizerKind::None => 0.0,
            RegularizerKind::SquaredFro(l) => l * crate::linalg::fro_norm_sq(x),
            _ => x.data().iter().map(|&v| self.scalar_value(v)).sum(),
        }
    }
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegularizerKind::None => write!(f, "none"),
            RegularizerKind::SquaredFro(l) => write!(f, "l2:{l}"),
            RegularizerKind::L1(l) => write!(f, "l1:{l}"),
            RegularizerKind::ElasticNet { l1, l2 } => write!(f, "elastic:{l1}:{l2}"),
            RegularizerKind::NonnegIndicator => write!(f, "nonneg"),
            RegularizerKind::Box { lo, hi } => write!(f, "box:{lo}:{hi}"),
        }
    }
}

impl FromStr for RegularizerKind {
    type Err = ParseKindError;

    /// Accepts `none`, `l2:<λ>`, `l1:<λ>`, `elastic:<l1>:<l2>`, `nonneg`,
    /// `box:<lo>:<hi>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        const WHAT: &str = "regularizer";
        let t = s.trim().to_ascii_lowercase();
        let parts: Vec<&str> = t.split(':').collect();
        let positive = |v: &str| -> Result<f64, ParseKindError> {
            let x = parse_num(WHAT, s, v)?;
            if x <= 0.0 {
                return Err(ParseKindError::new(WHAT, s, "weight must be positive"));
            }
            Ok(x)
        };
        match parts.as_slice() {
            ["none"] => Ok(RegularizerKind::None),
            ["nonneg"] => Ok(RegularizerKind::NonnegIndicator),
            ["l2", l] => Ok(RegularizerKind::SquaredFro(positive(l)?)),
            ["l1", l] => Ok(RegularizerKind::L1(positive(l)?)),
            ["elastic", a, b] => Ok(RegularizerKind::ElasticNet {
                l1: positive(a)?,
                l2: positive(b)?,
            }),
            ["box", lo, hi] => {
                let lo = parse_num(WHAT, s, lo)?;
                let hi = parse_num(WHAT, s, hi)?;
                if lo >= hi {
                    return Err(ParseKindError::new(WHAT, s, "box needs lo < hi"));
                }
                Ok(RegularizerKind::Box { lo, hi })
            }
            _ => Err(ParseKindError::new(WHAT, s, "unknown regularizer")),
        }
    }
}

#[inline]
pub fn soft_threshold(c: f64, t: f64) -> f64 {
    if c > t {
        c - t
    } else if c < -t {
        c + t
    } else {
        0.0
    }
}

/// `argmin_X reg(X) + (ρ/2)‖X − C‖²_F`, applied entrywise.
pub fn reg_quad_argmin(reg: RegularizerKind, c: &Matrix, rho: f64) -> Matrix {
    c.map(|v| reg.scalar_prox(v, rho))
}

// ---------------------------------------------------------------------------
// Scalar proximal maps

/// Global minimizer of `½(max{0,u} − a)² + (γ/2)(u − b)²`.
pub fn relu_quad_prox(a: f64, b: f64, gamma: f64) -> f64 {
    let s = a + gamma * b;
    let gb = gamma * b;
    let t = -((gamma * (gamma + 1.0)).sqrt() - gamma) * a;
    if (s >= 0.0 && b >= 0.0) || (t <= gb && gb < 0.0) {
        s / (1.0 + gamma)
    } else if -a <= gb && gb <= t && t < 0.0 {
        b
    } else {
        b.min(0.0)
    }
}

/// Global minimizer of `½(σ(u) − a)² + (γ/2)(u − b)²` for the leaky ReLU
/// `σ(u) = u` (u ≥ 0), `slope·u` (u < 0).
///
/// Each half-line carries a convex quadratic, so the minimizer on each half
/// is the projected stationary point; the better of the two wins, ties to
/// the nonnegative branch.
pub fn leaky_relu_quad_prox(slope: f64, a: f64, b: f64, gamma: f64) -> f64 {
    let f = |u: f64| {
        let r = ActivationKind::LeakyRelu(slope).eval(u) - a;
        0.5 * r * r + 0.5 * gamma * (u - b) * (u - b)
    };
    let pos = ((a + gamma * b) / (1.0 + gamma)).max(0.0);
    let neg = ((slope * a + gamma * b) / (slope * slope + gamma)).min(0.0);
    if f(pos) <= f(neg) {
        pos
    } else {
        neg
    }
}

/// Global minimizer of `max{0, 1 − a·u} + (γ/2)(u − b)²`.
pub fn hinge_prox(a: f64, b: f64, gamma: f64) -> f64 {
    if a == 0.0 {
        return b;
    }
    let ab = a * b;
    if ab >= 1.0 {
        b
    } else if ab <= 1.0 - a * a / gamma {
        b + a / gamma
    } else {
        1.0 / a
    }
}

const SMOOTH_SCAN_POINTS: usize = 2048;

/// Global minimizer of `½(σ(u) − v)² + (γ/2)(u − b)²` for a smooth
/// activation, by a bracketed scan followed by ternary refinement around the
/// three best scan points.
///
/// Works for any activation, but is only needed for Sigmoid and Tanh.
pub fn smooth_scalar_quad_min(kind: ActivationKind, v: f64, b: f64, gamma: f64) -> f64 {
    let f = |u: f64| {
        let r = kind.eval(u) - v;
        0.5 * r * r + 0.5 * gamma * (u - b) * (u - b)
    };
    let half = (1.0 + v.abs()) / gamma + 4.0;
    let lo = b - half;
    let step = 2.0 * half / (SMOOTH_SCAN_POINTS - 1) as f64;

    let mut best = [(f64::INFINITY, 0usize); 3];
    for k in 0..SMOOTH_SCAN_POINTS {
        let fk = f(lo + step * k as f64);
        if fk < best[2].0 {
            best[2] = (fk, k);
            if best[2].0 < best[1].0 {
                best.swap(1, 2);
                if best[1].0 < best[0].0 {
                    best.swap(0, 1);
                }
            }
        }
    }

    let mut arg = b;
    let mut val = f(b);
    for &(_, k) in &best {
        let mut l = lo + step * k.saturating_sub(1) as f64;
        let mut r = lo + step * (k + 1).min(SMOOTH_SCAN_POINTS - 1) as f64;
        for _ in 0..200 {
            if r - l <= 1e-14 * (1.0 + l.abs()) {
                break;
            }
            let m1 = l + (r - l) / 3.0;
            let m2 = r - (r - l) / 3.0;
            if f(m1) <= f(m2) {
                r = m2;
            } else {
                l = m1;
            }
        }
        let u = 0.5 * (l + r);
        let fu = f(u);
        if fu < val {
            val = fu;
            arg = u;
        }
    }
    arg
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn relu_obj(a: f64, b: f64, g: f64, u: f64) -> f64 {
        0.5 * (u.max(0.0) - a).powi(2) + 0.5 * g * (u - b).powi(2)
    }

    fn hinge_obj(a: f64, b: f64, g: f64, u: f64) -> f64 {
        (1.0 - a * u).max(0.0) + 0.5 * g * (u - b).powi(2)
    }

    #[test]
    fn activation_examples() {
        let m = Matrix::from_rows(&[[-1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(activation_apply(ActivationKind::Relu, &m).data(), &[0.0, 0.0, 2.0]);
        let z = Matrix::from_rows(&[[0.0]]).unwrap();
        assert_eq!(activation_apply(ActivationKind::Sigmoid, &z).data(), &[0.5]);
        let l = Matrix::from_rows(&[[-3.0, 3.0]]).unwrap();
        let out = activation_apply(ActivationKind::LeakyRelu(0.1), &l);
        assert!((out.get(0, 0) + 0.3).abs() < 1e-15);
        assert_eq!(out.get(0, 1), 3.0);
    }

    #[test]
    fn lipschitz_constants() {
        assert_eq!(activation_local_lipschitz(ActivationKind::Relu, 5.0), 1.0);
        assert_eq!(activation_local_lipschitz(ActivationKind::Sigmoid, 10.0), 0.25);
        assert_eq!(activation_local_lipschitz(ActivationKind::Tanh, 10.0), 1.0);
        assert_eq!(activation_local_lipschitz(ActivationKind::LeakyRelu(0.2), 1.0), 1.0);
    }

    #[test]
    fn squared_risk_examples() {
        let y = Matrix::from_rows(&[[0.0], [0.0]]).unwrap();
        let u = Matrix::from_rows(&[[1.0], [0.0]]).unwrap();
        assert_eq!(risk_value(LossKind::Squared, &y, &y).unwrap(), 0.0);
        assert_eq!(risk_value(LossKind::Squared, &u, &y).unwrap(), 0.5);
        let g = risk_gradient(
            LossKind::Squared,
            &Matrix::from_rows(&[[2.0]]).unwrap(),
            &Matrix::from_rows(&[[0.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(g.data(), &[2.0]);
    }

    #[test]
    fn hinge_risk_and_unsupported_gradient() {
        let u = Matrix::from_rows(&[[2.0]]).unwrap();
        let y = Matrix::from_rows(&[[1.0]]).unwrap();
        assert_eq!(risk_value(LossKind::Hinge, &u, &y).unwrap(), 0.0);
        assert!(matches!(
            risk_gradient(LossKind::Hinge, &u, &y),
            Err(OperatorError::UnsupportedLoss { .. })
        ));
        assert!(risk_grad_lipschitz(LossKind::Hinge, 3, 1).is_err());
    }

    #[test]
    fn risk_lipschitz_values() {
        assert_eq!(risk_grad_lipschitz(LossKind::Squared, 1, 3).unwrap(), 1.0);
        assert_eq!(risk_grad_lipschitz(LossKind::Squared, 10, 3).unwrap(), 0.1);
    }

    #[test]
    fn risk_shape_mismatch() {
        let u = Matrix::zeros(2, 3);
        let y = Matrix::zeros(3, 2);
        assert!(matches!(
            risk_value(LossKind::Squared, &u, &y),
            Err(OperatorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn cross_entropy_gradient_lipschitz_probe() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (d, n) = (10, 4);
        let lr = risk_grad_lipschitz(LossKind::CrossEntropy, n, d).unwrap();
        let y = Matrix::from_fn(d, n, |i, j| if i == j % d { 1.0 } else { 0.0 });
        for _ in 0..1000 {
            let a = Matrix::from_fn(d, n, |_, _| rng.random_range(-6.0..6.0));
            let b = Matrix::from_fn(d, n, |_, _| rng.random_range(-6.0..6.0));
            let ga = risk_gradient(LossKind::CrossEntropy, &a, &y).unwrap();
            let gb = risk_gradient(LossKind::CrossEntropy, &b, &y).unwrap();
            assert!(ga.sub(&gb).fro_norm() <= lr * a.sub(&b).fro_norm() + 1e-15);
        }
    }

    #[test]
    fn relu_prox_examples() {
        assert_eq!(relu_quad_prox(0.0, 0.0, 1.0), 0.0);
        assert!((relu_quad_prox(2.0, 1.0, 1.0) - 1.5).abs() < 1e-15);
        assert_eq!(relu_quad_prox(-3.0, 1.0, 1.0), 0.0);
        assert!((relu_quad_prox(1.0, -0.2, 1.0) - 0.4).abs() < 1e-15);
        for (a, b, expected) in [(2.0, 1.0, 1.5), (-3.0, 1.0, 0.0), (1.0, -0.2, 0.4)] {
            let (u, _) = oracle::relu_oracle(a, b, 1.0);
            assert!((u - expected).abs() < 1e-6, "oracle {u} vs {expected}");
        }
    }

    #[test]
    fn hinge_prox_examples() {
        assert_eq!(hinge_prox(0.0, 7.0, 3.0), 7.0);
        assert_eq!(hinge_prox(1.0, 0.0, 1.0), 1.0);
        assert_eq!(hinge_prox(2.0, 0.3, 1.0), 0.5);
        assert_eq!(hinge_prox(1.0, 2.0, 1.0), 2.0);
        for (a, b, expected) in [(1.0, 0.0, 1.0), (2.0, 0.3, 0.5)] {
            let (u, _) = oracle::hinge_oracle(a, b, 1.0);
            assert!((u - expected).abs() < 1e-6, "oracle {u} vs {expected}");
        }
    }

    #[test]
    fn smooth_min_examples() {
        let b = 0.7;
        let u = smooth_scalar_quad_min(ActivationKind::Sigmoid, sigmoid(b), b, 1.0);
        assert!((u - b).abs() < 1e-8);
        assert!(smooth_scalar_quad_min(ActivationKind::Tanh, 0.0, 0.0, 1.0).abs() < 1e-12);

        let f = |u: f64| 0.5 * (sigmoid(u) - 0.9).powi(2) + 2.5 * u * u;
        let u = smooth_scalar_quad_min(ActivationKind::Sigmoid, 0.9, 0.0, 5.0);
        let (_, fo) = oracle::dense_grid_min(f, -2.0, 2.0, 1_000_000);
        assert!(f(u) <= fo + 1e-6);
    }

    #[test]
    fn reg_prox_examples() {
        let c = Matrix::from_rows(&[[2.0, -0.5]]).unwrap();
        assert_eq!(reg_quad_argmin(RegularizerKind::None, &c, 3.0), c);
        assert_eq!(reg_quad_argmin(RegularizerKind::L1(1.0), &c, 1.0).data(), &[1.0, 0.0]);
        let c = Matrix::from_rows(&[[-3.0, 4.0]]).unwrap();
        assert_eq!(
            reg_quad_argmin(RegularizerKind::NonnegIndicator, &c, 7.0).data(),
            &[0.0, 4.0]
        );
    }

    #[test]
    fn kind_strings_round_trip() {
        for a in ["identity", "relu", "leaky:0.1", "sigmoid", "tanh"] {
            let k: ActivationKind = a.parse().unwrap();
            assert_eq!(k.to_string(), a);
        }
        for r in ["none", "l2:0.01", "l1:0.5", "elastic:0.1:0.2", "nonneg", "box:-1:2"] {
            let k: RegularizerKind = r.parse().unwrap();
            assert_eq!(k.to_string().parse::<RegularizerKind>().unwrap(), k);
        }
        assert!("leaky:1.5".parse::<ActivationKind>().is_err());
        assert!("box:1:0".parse::<RegularizerKind>().is_err());
        assert!("l2:-1".parse::<RegularizerKind>().is_err());
        assert_eq!("ce".parse::<LossKind>().unwrap(), LossKind::CrossEntropy);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn relu_prox_beats_grid(a in -5.0f64..5.0, b in -5.0f64..5.0, g in 0.1f64..10.0) {
            let u = relu_quad_prox(a, b, g);
            let (_, fo) = oracle::relu_oracle(a, b, g);
            prop_assert!(relu_obj(a, b, g, u) <= fo + 1e-8);
        }

        #[test]
        fn leaky_prox_beats_grid(s in 0.01f64..0.99, a in -5.0f64..5.0, b in -5.0f64..5.0, g in 0.1f64..10.0) {
            let u = leaky_relu_quad_prox(s, a, b, g);
            let f = |x: f64| 0.5 * (ActivationKind::LeakyRelu(s).eval(x) - a).powi(2) + 0.5 * g * (x - b).powi(2);
            let r = (2.0 * f(b) / g).sqrt() + 1e-9;
            let (_, fo) = oracle::dense_grid_min(f, b - r, b + r, 100_000);
            prop_assert!(f(u) <= fo + 1e-8);
        }

        #[test]
        fn hinge_prox_beats_grid(a in -5.0f64..5.0, b in -5.0f64..5.0, g in 0.1f64..10.0) {
            let u = hinge_prox(a, b, g);
            let (_, fo) = oracle::hinge_oracle(a, b, g);
            prop_assert!(hinge_obj(a, b, g, u) <= fo + 1e-8);
        }

        #[test]
        fn smooth_min_beats_grid(v in -2.0f64..2.0, b in -5.0f64..5.0, g in 0.1f64..10.0, tanh in any::<bool>()) {
            let kind = if tanh { ActivationKind::Tanh } else { ActivationKind::Sigmoid };
            let u = smooth_scalar_quad_min(kind, v, b, g);
            let (_, fo) = oracle::smooth_oracle(kind, v, b, g);
            let f = |x: f64| 0.5 * (kind.eval(x) - v).powi(2) + 0.5 * g * (x - b).powi(2);
            prop_assert!(f(u) <= fo + 1e-8);
        }

        #[test]
        fn reg_prox_beats_grid(c in -5.0f64..5.0, rho in 0.1f64..10.0, pick in 0usize..6, w in 0.01f64..2.0) {
            let reg = match pick {
                0 => RegularizerKind::None,
                1 => RegularizerKind::SquaredFro(w),
                2 => RegularizerKind::L1(w),
                3 => RegularizerKind::ElasticNet { l1: w, l2: 0.5 * w },
                4 => RegularizerKind::NonnegIndicator,
                _ => RegularizerKind::Box { lo: -w, hi: 2.0 * w },
            };
            let x = reg.scalar_prox(c, rho);
            let (_, fo) = oracle::reg_oracle(reg, c, rho);
            let fx = reg.scalar_value(x) + 0.5 * rho * (x - c).powi(2);
            prop_assert!(fx <= fo + 1e-8);
        }

        #[test]
        fn relu_prox_continuous_across_threshold(a in 0.01f64..5.0, g in 0.1f64..10.0) {
            // boundary γb = −(√(γ(γ+1)) − γ)a between the second and third cases
            let b0 = -((g * (g + 1.0)).sqrt() - g) * a / g;
            let eps = 1e-9;
            let lo = relu_quad_prox(a, b0 - eps, g);
            let hi = relu_quad_prox(a, b0 + eps, g);
            // both candidates are global minimizers at the boundary, so the
            // objective, not the argmin, is what must be continuous
            let flo = relu_obj(a, b0 - eps, g, lo);
            let fhi = relu_obj(a, b0 + eps, g, hi);
            prop_assert!((flo - fhi).abs() <= 1e-6);
        }

        #[test]
        fn relu_prox_continuous_across_other_boundaries(a in -5.0f64..5.0, g in 0.1f64..10.0) {
            let eps = 1e-9;
            // b = 0
            prop_assert!((relu_quad_prox(a, eps, g) - relu_quad_prox(a, -eps, g)).abs() <= 1e-6);
            // a + γb = 0
            let b0 = -a / g;
            prop_assert!((relu_quad_prox(a, b0 + eps, g) - relu_quad_prox(a, b0 - eps, g)).abs() <= 1e-6);
        }

        #[test]
        fn activations_are_lipschitz(x in -20.0f64..20.0, y in -20.0f64..20.0, pick in 0usize..5) {
            let kind = [
                ActivationKind::Identity,
                ActivationKind::Relu,
                ActivationKind::LeakyRelu(0.1),
                ActivationKind::Sigmoid,
                ActivationKind::Tanh,
            ][pick];
            let l = activation_local_lipschitz(kind, 20.0);
            prop_assert!((kind.eval(x) - kind.eval(y)).abs() <= l * (x - y).abs() + 1e-15);
        }

        #[test]
        fn risk_nonnegative(vals in proptest::collection::vec(-10.0f64..10.0, 6), labels in proptest::collection::vec(0usize..3, 2)) {
            let u = Matrix::from_vec(3, 2, vals).unwrap();
            let y = Matrix::from_fn(3, 2, |i, j| if labels[j] == i { 1.0 } else { 0.0 });
            for loss in [LossKind::Squared, LossKind::Hinge, LossKind::CrossEntropy] {
                prop_assert!(risk_value(loss, &u, &y).unwrap() >= 0.0);
            }
        }

        #[test]
        fn risk_gradient_matches_finite_differences(vals in proptest::collection::vec(-3.0f64..3.0, 12), seed in 0usize..4) {
            let u = Matrix::from_vec(3, 4, vals).unwrap();
            let y = Matrix::from_fn(3, 4, |i, j| if (i + j + seed) % 3 == 0 { 1.0 } else { 0.0 });
            for loss in [LossKind::Squared, LossKind::CrossEntropy] {
                let g = risk_gradient(loss, &u, &y).unwrap();
                let fd = oracle::finite_difference_gradient(|m| risk_value(loss, m, &y).unwrap(), &u, 1e-6);
                let err = g.sub(&fd).fro_norm();
                prop_assert!(err <= 1e-5 * g.fro_norm().max(1e-3), "{loss}: {err}");
            }
        }
    }
}
