//! Network description, hyperparameters, split iterates and the penalized
//! objectives they are measured against.
//!
//! Layers are numbered `1..=N` throughout the public API; `V_0` is the input
//! `X` held by [`Problem`] and never stored in a [`SplitState`].

use std::borrow::Cow;
use std::cell::OnceCell;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{self, fro_norm_sq, matmul, Cholesky, Matrix};
use crate::operators::{ActivationKind, LossKind, RegularizerKind, Risk};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    TwoSplit,
    ThreeSplit,
    Residual,
}

impl Form {
    pub fn has_pre_activations(self) -> bool {
        !matches!(self, Form::TwoSplit)
    }
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Form::TwoSplit => "two-split",
            Form::ThreeSplit => "three-split",
            Form::Residual => "residual",
        })
    }
}

impl FromStr for Form {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "two-split" | "two" | "twosplit" => Ok(Form::TwoSplit),
            "three-split" | "three" | "threesplit" => Ok(Form::ThreeSplit),
            "residual" | "resnet" => Ok(Form::Residual),
            _ => Err(format!("unknown form {s:?} (expected two-split, three-split or residual)")),
        }
    }
}

/// Layer widths `d_0..d_N`, per-layer activations and layout flags.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    dims: Vec<usize>,
    activations: Vec<ActivationKind>,
    residual: bool,
    bias: bool,
}

impl NetworkSpec {
    /// `activations[i-1]` is the activation of layer `i`; the last one must
    /// be the identity.
    ///
    /// With `residual` set, a layer carries a skip connection when its input
    /// and output widths agree; hidden layers `2..N-1` must be square so the
    /// skip chain is unbroken.
    pub fn new(
        dims: Vec<usize>,
        activations: Vec<ActivationKind>,
        residual: bool,
        bias: bool,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidNetwork(format!(
                "need at least an input and an output width, got {dims:?}"
            )));
        }
        if let Some(k) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidNetwork(format!("width d_{k} is zero")));
        }
        let n = dims.len() - 1;
        if activations.len() != n {
            return Err(Error::InvalidNetwork(format!(
                "{n} layers but {} activations",
                activations.len()
            )));
        }
        if !activations[n - 1].is_identity() {
            return Err(Error::InvalidNetwork(format!(
                "output activation must be identity, got {}",
                activations[n - 1]
            )));
        }
        for a in &activations {
            if let ActivationKind::LeakyRelu(s) = a {
                if !(*s > 0.0 && *s < 1.0) {
                    return Err(Error::InvalidNetwork(format!(
                        "leaky slope {s} outside (0, 1)"
                    )));
                }
            }
        }
        if residual {
            for i in 2..n {
                if dims[i] != dims[i - 1] {
                    return Err(Error::InvalidNetwork(format!(
                        "residual hidden layer {i} maps width {} to {}; hidden layers must be square",
                        dims[i - 1],
                        dims[i]
                    )));
                }
            }
        }
        Ok(NetworkSpec {
            dims,
            activations,
            residual,
            bias,
        })
    }

    /// Same activation on every hidden layer, identity at the output.
    pub fn uniform(
        dims: Vec<usize>,
        hidden: ActivationKind,
        residual: bool,
        bias: bool,
    ) -> Result<Self> {
        let n = dims.len().saturating_sub(1);
        let mut acts = vec![hidden; n];
        if let Some(last) = acts.last_mut() {
            *last = ActivationKind::Identity;
        }
        Self::new(dims, acts, residual, bias)
    }

    /// Number of layers `N`.
    pub fn depth(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activations(&self) -> &[ActivationKind] {
        &self.activations
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn bias(&self) -> bool {
        self.bias
    }

    /// `d_i`
    pub fn dim(&self, i: usize) -> usize {
        self.dims[i]
    }

    /// `σ_i` for layer `i ≥ 1`.
    pub fn activation(&self, i: usize) -> ActivationKind {
        self.activations[i - 1]
    }

    /// Number of columns of `W_i`.
    pub fn input_width(&self, i: usize) -> usize {
        self.dims[i - 1] + usize::from(self.bias)
    }

    /// Whether layer `i` adds its input back to its output.
    pub fn has_skip(&self, i: usize) -> bool {
        self.residual && self.dims[i] == self.dims[i - 1]
    }
}

/// One variable block of the split problem, by layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Block {
    V(usize),
    U(usize),
    W(usize),
}

impl Block {
    pub fn layer(self) -> usize {
        match self {
            Block::V(i) | Block::U(i) | Block::W(i) => i,
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::V(i) => write!(f, "V{i}"),
            Block::U(i) => write!(f, "U{i}"),
            Block::W(i) => write!(f, "W{i}"),
        }
    }
}

impl FromStr for Block {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let (head, tail) = s.split_at(s.char_indices().nth(1).map_or(s.len(), |(k, _)| k));
        let i: usize = tail
            .parse()
            .map_err(|_| format!("bad block {s:?} (expected e.g. V3, U2, W1)"))?;
        match head {
            "V" | "v" => Ok(Block::V(i)),
            "U" | "u" => Ok(Block::U(i)),
            "W" | "w" => Ok(Block::W(i)),
            _ => Err(format!("bad block {s:?} (expected e.g. V3, U2, W1)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum UpdateOrder {
    /// Output layer first, then layers `N-1` down to `1`.
    #[default]
    Backward,
    /// Layer `1` up to `N`, each layer as `W, U, V`.
    Forward,
    /// An explicit permutation of every block.
    Custom(Vec<Block>),
}

impl UpdateOrder {
    pub fn blocks(&self, form: Form, depth: usize) -> Result<Vec<Block>> {
        let with_u = form.has_pre_activations();
        match self {
            UpdateOrder::Backward => {
                let mut out = Vec::with_capacity(3 * depth);
                for i in (1..=depth).rev() {
                    out.push(Block::V(i));
                    if with_u {
                        out.push(Block::U(i));
                    }
                    out.push(Block::W(i));
                }
                Ok(out)
            }
            UpdateOrder::Forward => {
                let mut out = Vec::with_capacity(3 * depth);
                for i in 1..=depth {
                    out.push(Block::W(i));
                    if with_u {
                        out.push(Block::U(i));
                    }
                    out.push(Block::V(i));
                }
                Ok(out)
            }
            UpdateOrder::Custom(list) => {
                let mut expected = UpdateOrder::Backward.blocks(form, depth)?;
                let mut got = list.clone();
                expected.sort();
                got.sort();
                if got != expected {
                    return Err(Error::InvalidHyperparams(format!(
                        "custom update order must list every block of the {form} form exactly once"
                    )));
                }
                Ok(list.clone())
            }
        }
    }
}

impl fmt::Display for UpdateOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpdateOrder::Backward => write!(f, "backward"),
            UpdateOrder::Forward => write!(f, "forward"),
            UpdateOrder::Custom(list) => {
                write!(f, "custom:")?;
                for (k, b) in list.iter().enumerate() {
                    if k > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "{b}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for UpdateOrder {
    type Err = String;

    /// `backward`, `forward` or `custom:V2 U2 W2 V1 U1 W1`.
    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "backward" => return Ok(UpdateOrder::Backward),
            "forward" => return Ok(UpdateOrder::Forward),
            _ => {}
        }
        let Some(rest) = t.strip_prefix("custom:") else {
            return Err(format!("unknown update order {s:?}"));
        };
        let blocks = rest
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Block>, String>>()?;
        Ok(UpdateOrder::Custom(blocks))
    }
}

/// How the output block `V_N` treats the risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VnStrategy {
    /// Minimize the risk itself (closed form for squared and hinge losses).
    #[default]
    ProximalExact,
    /// Linearize the risk at the previous iterate.
    ProxLinear,
}

impl fmt::Display for VnStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VnStrategy::ProximalExact => "exact",
            VnStrategy::ProxLinear => "prox-linear",
        })
    }
}

impl FromStr for VnStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" | "proximal" => Ok(VnStrategy::ProximalExact),
            "prox-linear" | "proxlinear" | "linear" => Ok(VnStrategy::ProxLinear),
            _ => Err(format!("unknown output strategy {s:?} (expected exact or prox-linear)")),
        }
    }
}

/// Weight of the summed column losses in the risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RiskScale {
    /// `1/n`
    #[default]
    Mean,
    /// `1`
    Sum,
}

impl RiskScale {
    pub fn weight(self, n: usize) -> f64 {
        match self {
            RiskScale::Mean => 1.0 / n as f64,
            RiskScale::Sum => 1.0,
        }
    }
}

impl fmt::Display for RiskScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskScale::Mean => "mean",
            RiskScale::Sum => "sum",
        })
    }
}

impl FromStr for RiskScale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(RiskScale::Mean),
            "sum" => Ok(RiskScale::Sum),
            _ => Err(format!("unknown risk scale {s:?} (expected mean or sum)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub gamma: f64,
    pub alpha: f64,
    pub loss: LossKind,
    pub risk_scale: RiskScale,
    /// Per-layer weight regularizers; a single entry applies to every layer.
    pub w_reg: Vec<RegularizerKind>,
    /// Per-layer state regularizers; a single entry applies to every layer.
    pub v_reg: Vec<RegularizerKind>,
    pub update_order: UpdateOrder,
    pub vn_strategy: VnStrategy,
    pub inner_iters: usize,
    pub inner_tol: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            gamma: 1.0,
            alpha: 1.0,
            loss: LossKind::Squared,
            risk_scale: RiskScale::Mean,
            w_reg: vec![RegularizerKind::None],
            v_reg: vec![RegularizerKind::None],
            update_order: UpdateOrder::Backward,
            vn_strategy: VnStrategy::ProximalExact,
            inner_iters: 200,
            inner_tol: 1e-10,
            seed: 0,
        }
    }
}

fn layer_reg(list: &[RegularizerKind], i: usize) -> RegularizerKind {
    match list {
        [] => RegularizerKind::None,
        [one] => *one,
        many => many[i - 1],
    }
}

impl Hyperparams {
    /// `r_i`
    pub fn w_reg(&self, i: usize) -> RegularizerKind {
        layer_reg(&self.w_reg, i)
    }

    /// `s_i`
    pub fn v_reg(&self, i: usize) -> RegularizerKind {
        layer_reg(&self.v_reg, i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveBreakdown {
    pub risk: f64,
    pub w_reg: f64,
    pub v_reg: f64,
    pub penalty: f64,
    pub total: f64,
}

/// The iterate: weights `W_i`, states `V_i` and, for the three-split and
/// residual forms, pre-activations `U_i`. Index `k` holds layer `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitState {
    pub w: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub u: Option<Vec<Matrix>>,
}

impl SplitState {
    pub fn w(&self, i: usize) -> &Matrix {
        &self.w[i - 1]
    }

    pub fn v(&self, i: usize) -> &Matrix {
        &self.v[i - 1]
    }

    /// `U_i`; panics for a two-split state.
    pub fn u(&self, i: usize) -> &Matrix {
        &self.u.as_ref().expect("state has no pre-activations")[i - 1]
    }

    pub fn block(&self, b: Block) -> &Matrix {
        match b {
            Block::V(i) => self.v(i),
            Block::U(i) => self.u(i),
            Block::W(i) => self.w(i),
        }
    }

    pub fn block_mut(&mut self, b: Block) -> &mut Matrix {
        match b {
            Block::V(i) => &mut self.v[i - 1],
            Block::U(i) => &mut self.u.as_mut().expect("state has no pre-activations")[i - 1],
            Block::W(i) => &mut self.w[i - 1],
        }
    }

    pub fn without_pre_activations(mut self) -> Self {
        self.u = None;
        self
    }

    fn all(&self) -> impl Iterator<Item = &Matrix> {
        self.w
            .iter()
            .chain(&self.v)
            .chain(self.u.iter().flatten())
    }

    /// `‖P‖²_F` summed over every block.
    pub fn norm_sq(&self) -> f64 {
        self.all().map(fro_norm_sq).sum()
    }

    /// `‖P − Q‖²_F` summed over every block.
    pub fn distance_sq(&self, other: &SplitState) -> f64 {
        self.all()
            .zip(other.all())
            .map(|(a, b)| fro_norm_sq(&a.sub(b)))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.all().all(Matrix::is_finite)
    }
}

/// Gaussian weights with standard deviation `std`; bias columns (when the
/// spec has biases) are set to `bias_val`. Deterministic in `seed`.
pub fn init_weights(spec: &NetworkSpec, std: f64, bias_val: f64, seed: u64) -> Vec<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=spec.depth())
        .map(|i| {
            let (rows, fan_in) = (spec.dim(i), spec.dim(i - 1));
            let mut w = Matrix::zeros(rows, spec.input_width(i));
            for r in 0..rows {
                for c in 0..fan_in {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    w.set(r, c, std * z);
                }
                if spec.bias() {
                    w.set(r, fan_in, bias_val);
                }
            }
            w
        })
        .collect()
}

fn augment<'a>(spec: &NetworkSpec, v: &'a Matrix) -> Cow<'a, Matrix> {
    if spec.bias() {
        Cow::Owned(v.with_ones_row())
    } else {
        Cow::Borrowed(v)
    }
}

fn check_weights(spec: &NetworkSpec, weights: &[Matrix]) -> Result<()> {
    if weights.len() != spec.depth() {
        return Err(Error::Shape(format!(
            "{} weight matrices for a {}-layer network",
            weights.len(),
            spec.depth()
        )));
    }
    for (k, w) in weights.iter().enumerate() {
        let i = k + 1;
        let want = (spec.dim(i), spec.input_width(i));
        if w.shape() != want {
            return Err(Error::Shape(format!(
                "W_{i} is {:?}, expected {want:?}",
                w.shape()
            )));
        }
    }
    Ok(())
}

/// One forward pass from `V_0 = X`, setting `U_i = W_i aug(V_{i-1})` and
/// `V_i = σ_i(U_i)` (plus `V_{i-1}` on skip layers).
pub fn forward_init(spec: &NetworkSpec, weights: &[Matrix], x: &Matrix) -> Result<SplitState> {
    check_weights(spec, weights)?;
    if x.rows() != spec.dim(0) {
        return Err(Error::Shape(format!(
            "input has {} rows, network expects {}",
            x.rows(),
            spec.dim(0)
        )));
    }
    let mut v: Vec<Matrix> = Vec::with_capacity(spec.depth());
    let mut u = Vec::with_capacity(spec.depth());
    for i in 1..=spec.depth() {
        let prev = if i == 1 { x } else { &v[i - 2] };
        let ui = matmul(&weights[i - 1], &augment(spec, prev))?;
        let act = spec.activation(i);
        let mut vi = ui.map(|t| act.eval(t));
        if spec.has_skip(i) {
            vi.axpy(1.0, prev);
        }
        u.push(ui);
        v.push(vi);
    }
    Ok(SplitState {
        w: weights.to_vec(),
        v,
        u: Some(u),
    })
}

/// Network output `Φ(X; W)`.
pub fn forward(spec: &NetworkSpec, weights: &[Matrix], x: &Matrix) -> Result<Matrix> {
    check_weights(spec, weights)?;
    let mut cur = x.clone();
    for i in 1..=spec.depth() {
        let act = spec.activation(i);
        let mut next = matmul(&weights[i - 1], &augment(spec, &cur))?.map(|t| act.eval(t));
        if spec.has_skip(i) {
            next.axpy(1.0, &cur);
        }
        cur = next;
    }
    Ok(cur)
}

/// Fraction of columns whose arg-max output row equals the label; ties go
/// to the lowest row.
pub fn predict_accuracy(
    spec: &NetworkSpec,
    weights: &[Matrix],
    x: &Matrix,
    labels: &[usize],
) -> Result<f64> {
    if labels.len() != x.cols() {
        return Err(Error::Shape(format!(
            "{} labels for {} samples",
            labels.len(),
            x.cols()
        )));
    }
    let out = forward(spec, weights, x)?;
    Ok(accuracy_of(&out, labels))
}

pub fn accuracy_of(out: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(j, &l)| out.argmax_column(j) == l)
        .count();
    hits as f64 / labels.len() as f64
}

/// A fully validated training problem: form, network, hyperparameters and
/// data, plus caches of quantities that stay fixed across epochs.
#[derive(Debug, Clone)]
pub struct Problem {
    form: Form,
    spec: NetworkSpec,
    hp: Hyperparams,
    x: Matrix,
    y: Matrix,
    x_aug: Option<Matrix>,
    risk: Risk,
    input_gram: OnceCell<Matrix>,
    pub(crate) first_w_factor: OnceCell<Cholesky>,
}

impl Problem {
    pub fn new(form: Form, spec: NetworkSpec, hp: Hyperparams, x: Matrix, y: Matrix) -> Result<Self> {
        let n_layers = spec.depth();
        if x.rows() != spec.dim(0) {
            return Err(Error::Shape(format!(
                "input has {} rows, network expects d_0 = {}",
                x.rows(),
                spec.dim(0)
            )));
        }
        if y.rows() != spec.dim(n_layers) || y.cols() != x.cols() {
            return Err(Error::Shape(format!(
                "targets are {:?}, expected ({}, {})",
                y.shape(),
                spec.dim(n_layers),
                x.cols()
            )));
        }
        if (form == Form::Residual) != spec.residual() {
            return Err(Error::FormMismatch {
                form,
                reason: format!("network residual flag is {}", spec.residual()),
            });
        }
        validate_hyperparams(&hp, n_layers, x.cols(), form)?;
        let risk = Risk::new(hp.loss, hp.risk_scale.weight(x.cols()));
        let x_aug = spec.bias().then(|| x.with_ones_row());
        Ok(Problem {
            form,
            spec,
            hp,
            x,
            y,
            x_aug,
            risk,
            input_gram: OnceCell::new(),
            first_w_factor: OnceCell::new(),
        })
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn hp(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.cols()
    }

    pub fn depth(&self) -> usize {
        self.spec.depth()
    }

    pub fn risk(&self) -> Risk {
        self.risk
    }

    /// Lipschitz constant of the risk gradient, when it has one.
    pub fn risk_lipschitz(&self) -> Option<f64> {
        self.risk.grad_lipschitz().ok()
    }

    /// `V_{i-1}` (the raw input for `i = 1`).
    pub fn prev_state<'a>(&'a self, state: &'a SplitState, i: usize) -> &'a Matrix {
        if i == 1 {
            &self.x
        } else {
            state.v(i - 1)
        }
    }

    /// `aug(V_{i-1})`, the matrix `W_i` acts on.
    pub fn layer_input<'a>(&'a self, state: &'a SplitState, i: usize) -> Cow<'a, Matrix> {
        if i == 1 {
            Cow::Borrowed(self.x_aug.as_ref().unwrap_or(&self.x))
        } else {
            augment(&self.spec, state.v(i - 1))
        }
    }

    /// `V_{i-1}` when layer `i` has a skip connection.
    pub fn skip<'a>(&'a self, state: &'a SplitState, i: usize) -> Option<&'a Matrix> {
        (self.form == Form::Residual && self.spec.has_skip(i)).then(|| self.prev_state(state, i))
    }

    /// `aug(X) aug(X)ᵀ`, computed on first use.
    pub fn input_gram(&self) -> &Matrix {
        self.input_gram
            .get_or_init(|| linalg::gram(self.x_aug.as_ref().unwrap_or(&self.x)))
    }

    /// Forward pass from the given weights, shaped for this problem's form.
    pub fn initial_state(&self, weights: &[Matrix]) -> Result<SplitState> {
        let s = forward_init(&self.spec, weights, &self.x)?;
        Ok(if self.form.has_pre_activations() {
            s
        } else {
            s.without_pre_activations()
        })
    }

    pub fn check_state(&self, state: &SplitState) -> Result<()> {
        check_weights(&self.spec, &state.w)?;
        let n_layers = self.depth();
        let mismatch = |reason: String| Error::FormMismatch {
            form: self.form,
            reason,
        };
        if state.v.len() != n_layers {
            return Err(mismatch(format!("{} state blocks for {n_layers} layers", state.v.len())));
        }
        match (&state.u, self.form.has_pre_activations()) {
            (Some(u), true) if u.len() == n_layers => {}
            (None, false) => {}
            (Some(_), false) => return Err(mismatch("unexpected pre-activations".into())),
            _ => return Err(mismatch("pre-activations missing or of wrong length".into())),
        }
        for i in 1..=n_layers {
            let want = (self.spec.dim(i), self.n());
            if state.v(i).shape() != want {
                return Err(Error::Shape(format!("V_{i} is {:?}, expected {want:?}", state.v(i).shape())));
            }
            if let Some(u) = &state.u {
                if u[i - 1].shape() != want {
                    return Err(Error::Shape(format!("U_{i} is {:?}, expected {want:?}", u[i - 1].shape())));
                }
            }
        }
        Ok(())
    }

    /// Penalty contribution of layer `i` before the factor `γ/2`.
    pub(crate) fn layer_penalty(&self, state: &SplitState, i: usize) -> Result<f64> {
        let act = self.spec.activation(i);
        let pre = matmul(state.w(i), &self.layer_input(state, i))?;
        Ok(match self.form {
            Form::TwoSplit => {
                let r = state.v(i).zip_map(&pre, |v, p| v - act.eval(p));
                fro_norm_sq(&r)
            }
            Form::ThreeSplit | Form::Residual => {
                let u = state.u(i);
                let mut r = state.v(i).zip_map(u, |v, p| v - act.eval(p));
                if let Some(s) = self.skip(state, i) {
                    r.axpy(-1.0, s);
                }
                fro_norm_sq(&r) + fro_norm_sq(&u.sub(&pre))
            }
        })
    }

    pub fn eval_objective(&self, state: &SplitState) -> Result<ObjectiveBreakdown> {
        self.check_state(state)?;
        let n_layers = self.depth();
        let risk = self.risk.value(state.v(n_layers), &self.y)?;
        let mut w_reg = 0.0;
        let mut v_reg = 0.0;
        let mut penalty = 0.0;
        for i in 1..=n_layers {
            w_reg += self.hp.w_reg(i).value(state.w(i));
            v_reg += self.hp.v_reg(i).value(state.v(i));
            penalty += self.layer_penalty(state, i)?;
        }
        penalty *= 0.5 * self.hp.gamma;
        Ok(ObjectiveBreakdown {
            risk,
            w_reg,
            v_reg,
            penalty,
            total: risk + w_reg + v_reg + penalty,
        })
    }

    /// Accuracy of the pure network `Φ(·; W)` built from the state's weights.
    pub fn accuracy(&self, state: &SplitState, x: &Matrix, labels: &[usize]) -> Result<f64> {
        predict_accuracy(&self.spec, &state.w, x, labels)
    }
}

/// Objective breakdown of `state` under `problem`.
pub fn eval_objective(problem: &Problem, state: &SplitState) -> Result<ObjectiveBreakdown> {
    problem.eval_objective(state)
}

fn validate_hyperparams(hp: &Hyperparams, n_layers: usize, n: usize, form: Form) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidHyperparams(m));
    if !(hp.gamma > 0.0 && hp.gamma.is_finite()) {
        return bad(format!("gamma must be positive, got {}", hp.gamma));
    }
    if !(hp.alpha > 0.0 && hp.alpha.is_finite()) {
        return bad(format!("alpha must be positive, got {}", hp.alpha));
    }
    if hp.inner_iters == 0 {
        return bad("inner_iters must be at least 1".into());
    }
    if !(hp.inner_tol > 0.0) {
        return bad(format!("inner_tol must be positive, got {}", hp.inner_tol));
    }
    for (name, list) in [("w_reg", &hp.w_reg), ("v_reg", &hp.v_reg)] {
        if list.len() > 1 && list.len() != n_layers {
            return bad(format!(
                "{name} lists {} regularizers for {n_layers} layers",
                list.len()
            ));
        }
    }
    match (hp.loss, hp.vn_strategy) {
        (LossKind::Hinge, VnStrategy::ProxLinear) => {
            return bad("the hinge loss needs the exact output update".into())
        }
        (LossKind::CrossEntropy, VnStrategy::ProximalExact) => {
            return bad("the cross-entropy loss needs the prox-linear output update".into())
        }
        _ => {}
    }
    if hp.loss == LossKind::Hinge && !hp.v_reg(n_layers).is_quadratic() {
        return bad(format!(
            "the hinge output update supports only none or l2 on V_N, got {}",
            hp.v_reg(n_layers)
        ));
    }
    if hp.vn_strategy == VnStrategy::ProxLinear {
        let lr = Risk::new(hp.loss, hp.risk_scale.weight(n))
            .grad_lipschitz()
            .map_err(crate::Error::from)?;
        let need = ((lr - hp.gamma) / 2.0).max(0.0);
        if hp.alpha <= need {
            return bad(format!(
                "prox-linear output update needs alpha > {need} (gradient Lipschitz constant {lr})"
            ));
        }
    }
    hp.update_order.blocks(form, n_layers)?;
    Ok(())
}
