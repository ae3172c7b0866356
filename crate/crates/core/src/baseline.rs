//! Plain mini-batch SGD with backpropagation on the squared loss.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::diagnostics::{TraceRecord, NOT_APPLICABLE};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::state::{accuracy_of, forward, NetworkSpec, ObjectiveBreakdown};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 512,
            epochs: 50,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidHyperparams(format!("learning rate {}", self.lr)));
        }
        if self.batch == 0 || self.batch > n {
            return Err(Error::InvalidHyperparams(format!(
                "batch size {} for {n} samples",
                self.batch
            )));
        }
        Ok(())
    }
}

fn augment(spec: &NetworkSpec, m: &Matrix) -> Matrix {
    if spec.bias() {
        m.with_ones_row()
    } else {
        m.clone()
    }
}

/// Risk `(1/b) Σ_j ½‖Φ(x_j) − y_j‖²` of a batch.
pub fn batch_risk(spec: &NetworkSpec, weights: &[Matrix], xb: &Matrix, yb: &Matrix) -> Result<f64> {
    let out = forward(spec, weights, xb)?;
    let diff = out.sub(yb);
    Ok(0.5 * diff.dot(&diff) / xb.cols() as f64)
}

/// Gradients of [`batch_risk`] with respect to each `W_i`. The ReLU
/// derivative at 0 is taken as 0.
pub fn backprop_grads(
    spec: &NetworkSpec,
    weights: &[Matrix],
    xb: &Matrix,
    yb: &Matrix,
) -> Result<Vec<Matrix>> {
    let depth = spec.depth();
    let out_dims = (spec.dim(depth), xb.cols());
    if yb.shape() != out_dims {
        return Err(Error::Shape(format!(
            "targets are {:?}, outputs {out_dims:?}",
            yb.shape()
        )));
    }
    let mut acts = Vec::with_capacity(depth + 1);
    let mut pres = Vec::with_capacity(depth);
    acts.push(xb.clone());
    for i in 1..=depth {
        let input = &acts[i - 1];
        let z = matmul(&weights[i - 1], &augment(spec, input))?;
        let act = spec.activation(i);
        let mut a = z.map(|t| act.eval(t));
        if spec.has_skip(i) {
            a.axpy(1.0, input);
        }
        pres.push(z);
        acts.push(a);
    }

    let b = xb.cols() as f64;
    let mut upstream = acts[depth].sub(yb).scale(1.0 / b);
    let mut grads = vec![Matrix::zeros(0, 0); depth];
    for i in (1..=depth).rev() {
        let act = spec.activation(i);
        let delta = upstream.zip_map(&pres[i - 1], |g, z| g * act.derivative(z));
        grads[i - 1] = matmul_nt(&delta, &augment(spec, &acts[i - 1]))?;
        if i > 1 {
            let w = &weights[i - 1];
            let w_state = if spec.bias() { w.left_columns(spec.dim(i - 1)) } else { w.clone() };
            let mut next = matmul_tn(&w_state, &delta)?;
            if spec.has_skip(i) {
                next.axpy(1.0, &upstream);
            }
            upstream = next;
        }
    }
    Ok(grads)
}

#[derive(Debug, Clone)]
pub struct SgdRun {
    pub trace: Vec<TraceRecord>,
    pub weights: Vec<Matrix>,
}

fn sgd_record(
    spec: &NetworkSpec,
    weights: &[Matrix],
    epoch: usize,
    data: &Dataset,
    test: Option<&Dataset>,
    seconds: f64,
) -> Result<TraceRecord> {
    let out = forward(spec, weights, &data.x)?;
    let diff = out.sub(&data.y);
    let risk = 0.5 * diff.dot(&diff) / data.len() as f64;
    let test_acc = match test {
        Some(t) => accuracy_of(&forward(spec, weights, &t.x)?, &t.labels),
        None => NOT_APPLICABLE,
    };
    Ok(TraceRecord {
        epoch,
        objective: ObjectiveBreakdown {
            risk,
            total: risk,
            ..Default::default()
        },
        delta_sq: NOT_APPLICABLE,
        residual_norm: NOT_APPLICABLE,
        bbar_bound: NOT_APPLICABLE,
        train_acc: accuracy_of(&out, &data.labels),
        test_acc,
        wall_seconds: seconds,
    })
}

/// Trains from `init` with a fresh shuffle every epoch. The trace starts
/// with the untrained network at epoch 0 and records the full-data risk.
pub fn sgd_train(
    spec: &NetworkSpec,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &SgdConfig,
    init: Vec<Matrix>,
) -> Result<SgdRun> {
    cfg.validate(data.len())?;
    if data.y.rows() != spec.dim(spec.depth()) {
        return Err(Error::Shape(format!(
            "{} target rows for a {}-wide output",
            data.y.rows(),
            spec.dim(spec.depth())
        )));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = init;
    let mut trace = vec![sgd_record(spec, &weights, 0, data, test, 0.0)?];
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let xb = data.x.select_columns(chunk);
            let yb = data.y.select_columns(chunk);
            let grads = backprop_grads(spec, &weights, &xb, &yb)?;
            for (w, g) in weights.iter_mut().zip(&grads) {
                w.axpy(-cfg.lr, g);
            }
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite { epoch });
        }
        let secs = start.elapsed().as_secs_f64();
        trace.push(sgd_record(spec, &weights, epoch, data, test, secs)?);
    }
    Ok(SgdRun { trace, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::oracle::finite_difference_gradient;
    use crate::state::init_weights;
    use crate::ActivationKind;

    fn tiny(act: ActivationKind, residual: bool) -> (NetworkSpec, Vec<Matrix>, Matrix, Matrix) {
        let dims = if residual { vec![3, 3, 3, 2] } else { vec![3, 4, 2] };
        let spec = NetworkSpec::uniform(dims, act, residual, true).unwrap();
        let w = init_weights(&spec, 0.7, 0.1, 11);
        let x = Matrix::from_fn(3, 5, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6);
        let y = Matrix::from_fn(2, 5, |i, j| f64::from(u8::from((i + j) % 2 == 0)));
        (spec, w, x, y)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (act, residual) in [
            (ActivationKind::Tanh, false),
            (ActivationKind::Sigmoid, true),
            (ActivationKind::Relu, false),
        ] {
            let (spec, w, x, y) = tiny(act, residual);
            let grads = backprop_grads(&spec, &w, &x, &y).unwrap();
            for k in 0..w.len() {
                let fd = finite_difference_gradient(
                    |m| {
                        let mut ws = w.clone();
                        ws[k] = m.clone();
                        batch_risk(&spec, &ws, &x, &y).unwrap()
                    },
                    &w[k],
                    1e-6,
                );
                let err = grads[k].sub(&fd).fro_norm();
                assert!(err <= 1e-5 * fd.fro_norm().max(1e-3), "{act} layer {k}: {err}");
            }
        }
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let (spec, w, x, _) = tiny(ActivationKind::Tanh, false);
        let y = forward(&spec, &w, &x).unwrap();
        for g in backprop_grads(&spec, &w, &x, &y).unwrap() {
            assert_eq!(g.max_abs(), 0.0);
        }
    }

    #[test]
    fn zero_rate_keeps_weights_and_seed_fixes_trace() {
        let data = crate::data::synthetic_blobs(40, 3, 2, 0.1, 3).unwrap();
        let spec = NetworkSpec::uniform(vec![3, 4, 2], ActivationKind::Relu, false, true).unwrap();
        let init = init_weights(&spec, 0.3, 0.1, 2);
        let cfg = SgdConfig { lr: 0.0, batch: 8, epochs: 3, seed: 1 };
        let run = sgd_train(&spec, &data, None, &cfg, init.clone()).unwrap();
        assert_eq!(run.weights, init);
        assert!(run.trace.windows(2).all(|p| p[0].train_acc == p[1].train_acc));

        let cfg = SgdConfig { lr: 0.05, ..cfg };
        let a = sgd_train(&spec, &data, None, &cfg, init.clone()).unwrap();
        let b = sgd_train(&spec, &data, None, &cfg, init).unwrap();
        assert_eq!(a.weights, b.weights);
        let strip = |t: &[TraceRecord]| t.iter().map(|r| (r.objective, r.train_acc)).collect::<Vec<_>>();
        assert_eq!(strip(&a.trace), strip(&b.trace));
        assert_eq!(a.trace[1].delta_sq, NOT_APPLICABLE);
    }
}
