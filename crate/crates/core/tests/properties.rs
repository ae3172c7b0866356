use proptest::prelude::*;

use splitbcd::data::{synthetic_blobs, Dataset};
use splitbcd::linalg::{fro_norm_sq, matmul, matmul_tn, solve_spd};
use splitbcd::state::{init_weights, predict_accuracy};
use splitbcd::{ActivationKind, Matrix, NetworkSpec};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
}

fn conforming_triple() -> impl Strategy<Value = (Matrix, Matrix, Matrix)> {
    (1usize..7, 1usize..7, 1usize..7, 1usize..7)
        .prop_flat_map(|(m, k, l, n)| (matrix(m, k), matrix(k, l), matrix(l, n)))
}

fn same_shape_pair() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..8, 1usize..8).prop_flat_map(|(r, c)| (matrix(r, c), matrix(r, c)))
}

proptest! {
    #[test]
    fn matmul_is_associative((a, b, c) in conforming_triple()) {
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        let scale = 1.0 + a.fro_norm() * b.fro_norm() * c.fro_norm();
        prop_assert!(left.sub(&right).fro_norm() <= 1e-9 * scale);
    }

    #[test]
    fn spd_solve_round_trip(m in (1usize..7).prop_flat_map(|k| (matrix(k, k), matrix(k, 3)))) {
        let (mm, b) = m;
        let mut a = matmul_tn(&mm, &mm).unwrap();
        a.axpy(1.0, &Matrix::identity(a.rows()));
        let x = solve_spd(&a, &b).unwrap();
        let r = matmul(&a, &x).unwrap().sub(&b);
        prop_assert!(r.fro_norm() <= 1e-8 * (1.0 + b.fro_norm()));
    }

    #[test]
    fn squared_norm_parallelogram_bound((a, b) in same_shape_pair()) {
        let lhs = fro_norm_sq(&a.add(&b));
        prop_assert!(lhs <= 2.0 * fro_norm_sq(&a) + 2.0 * fro_norm_sq(&b) + 1e-12);
    }

    #[test]
    fn squared_norm_matches_direct_sum(a in matrix(5, 7)) {
        let mut direct = 0.0;
        for i in 0..5 {
            for j in 0..7 {
                direct += a.get(i, j) * a.get(i, j);
            }
        }
        prop_assert!((fro_norm_sq(&a) - direct).abs() <= 1e-12 * (1.0 + direct));
    }
}

/// One-vs-all least-squares readout `W = Y Xaᵀ (Xa Xaᵀ + λI)⁻¹` on the
/// bias-augmented inputs.
fn ridge_readout_accuracy(data: &Dataset, lambda: f64) -> f64 {
    let xa = data.x.with_ones_row();
    let mut gram = matmul(&xa, &xa.transpose()).unwrap();
    gram.axpy(lambda, &Matrix::identity(gram.rows()));
    let rhs = matmul(&xa, &data.y.transpose()).unwrap();
    let w_t = solve_spd(&gram, &rhs).unwrap();
    let scores = matmul_tn(&w_t, &xa).unwrap();
    let hits = (0..data.len())
        .filter(|&j| scores.argmax_column(j) == data.labels[j])
        .count();
    hits as f64 / data.len() as f64
}

#[test]
fn blobs_are_linearly_separable() {
    let data = synthetic_blobs(300, 10, 3, 0.05, 21).unwrap();
    assert!(ridge_readout_accuracy(&data, 1e-6) >= 0.99);
}

#[test]
fn random_network_scores_near_chance() {
    let data = synthetic_blobs(1000, 20, 10, 0.5, 5).unwrap();
    let spec = NetworkSpec::uniform(vec![20, 16, 10], ActivationKind::Tanh, false, true).unwrap();
    for seed in 0..5 {
        let w = init_weights(&spec, 0.3, 0.0, seed);
        let acc = predict_accuracy(&spec, &w, &data.x, &data.labels).unwrap();
        assert!((0.05..=0.2).contains(&acc), "seed {seed}: {acc}");
    }
}
