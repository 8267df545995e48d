//! Seeded synthetic setups shared by the demo command, tests and benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{svd, Matrix};
use crate::model::{Activation, LinearLayer, ToyModel};
use crate::trainer::Example;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// A random `d × d` orthogonal matrix (left singular vectors of a Gaussian-ish draw).
pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    svd(&random_matrix(d, d, rng)).expect("svd of a finite matrix").u
}

/// Columns `0..k` of a random orthogonal basis and the remaining `d − k` columns.
pub fn split_basis(d: usize, k: usize, rng: &mut ChaCha8Rng) -> (Matrix, Matrix) {
    let q = random_orthogonal(d, rng);
    let first: Vec<usize> = (0..k).collect();
    let rest: Vec<usize> = (k..d).collect();
    (q.select_columns(&first), q.select_columns(&rest))
}

/// `tokens` columns drawn from the span of `basis`.
pub fn samples_in_span(basis: &Matrix, tokens: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let coeffs = random_matrix(basis.cols(), tokens, rng);
    basis.matmul(&coeffs).expect("basis and coefficients agree")
}

/// A layer weight and an activation covariance whose null space has exactly
/// dimension `null_dim`.
#[derive(Clone, Debug)]
pub struct NullSpaceFixture {
    pub w0: Matrix,
    pub c: Matrix,
    pub x: Matrix,
    pub null_dim: usize,
}

pub fn null_space_fixture(seed: u64, d_out: usize, d_in: usize, null_dim: usize, tokens: usize) -> NullSpaceFixture {
    assert!(null_dim < d_in && tokens >= d_in - null_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (span, _) = split_basis(d_in, d_in - null_dim, &mut rng);
    let x = samples_in_span(&span, tokens, &mut rng);
    let w0 = random_matrix(d_out, d_in, &mut rng);
    NullSpaceFixture { w0, c: x.gram(), x, null_dim }
}

fn examples(x: &Matrix, t: &Matrix) -> Vec<Example> {
    (0..x.cols()).map(|j| Example::new(x.column(j), t.column(j))).collect()
}

/// Old inputs live in a 3-dimensional subspace of `R^8`, new-task inputs in its
/// complement. The model is `8 → 6` identity without bias, then `6 → 4` tanh.
#[derive(Clone, Debug)]
pub struct RetentionFixture {
    pub model: ToyModel,
    /// Old-task inputs used to capture covariances.
    pub capture: Vec<Matrix>,
    /// Fresh old-task inputs for measuring drift.
    pub old_eval: Matrix,
    pub new_task: Vec<Example>,
}

pub const RETENTION_OLD_DIM: usize = 3;

pub fn retention_fixture(seed: u64) -> RetentionFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (old, new) = split_basis(8, RETENTION_OLD_DIM, &mut rng);
    let l0 = LinearLayer::new("l0", random_matrix(6, 8, &mut rng), None, Activation::Identity).expect("valid layer");
    let bias: Vec<f64> = (0..4).map(|_| rng.random_range(-0.1..0.1)).collect();
    let l1 = LinearLayer::new("l1", random_matrix(4, 6, &mut rng).scale(0.5), Some(bias), Activation::Tanh)
        .expect("valid layer");
    let model = ToyModel::new(8, vec![l0, l1]).expect("dims chain");
    let capture = vec![samples_in_span(&old, 64, &mut rng)];
    let old_eval = samples_in_span(&old, 32, &mut rng);
    let new_x = samples_in_span(&new, 16, &mut rng);
    let new_t = random_matrix(4, 16, &mut rng).scale(0.8);
    RetentionFixture {
        model,
        capture,
        old_eval,
        new_task: examples(&new_x, &new_t),
    }
}

/// Task A inputs lie on a line, task B inputs fill the orthogonal complement.
/// Targets are the untruncated model's own outputs, so its losses are zero.
#[derive(Clone, Debug)]
pub struct TwoTaskFixture {
    pub model: ToyModel,
    pub task_a: Vec<Example>,
    pub task_b: Vec<Example>,
    pub capture_a: Vec<Matrix>,
}

pub fn two_task_fixture(seed: u64) -> TwoTaskFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a_dir, b_span) = split_basis(8, 1, &mut rng);
    let l0 = LinearLayer::new("l0", random_matrix(6, 8, &mut rng), None, Activation::Identity).expect("valid layer");
    let l1 = LinearLayer::new("l1", random_matrix(4, 6, &mut rng), None, Activation::Tanh).expect("valid layer");
    let model = ToyModel::new(8, vec![l0, l1]).expect("dims chain");
    let label = |x: &Matrix| examples(x, &model.predict(x).expect("input dim 8"));
    let xa = samples_in_span(&a_dir, 24, &mut rng);
    let xb = samples_in_span(&b_span, 24, &mut rng);
    TwoTaskFixture {
        task_a: label(&xa),
        task_b: label(&xb),
        capture_a: vec![samples_in_span(&a_dir, 48, &mut rng)],
        model,
    }
}

/// The bundled demo: `8 → 6` identity with bias, then `6 → 4` tanh with bias.
/// Capture inputs span 3 dimensions, so both layers keep a null space of
/// dimension ≥ 2.
#[derive(Clone, Debug)]
pub struct DemoFixture {
    pub model: ToyModel,
    pub capture: Vec<Example>,
    pub train: Vec<Example>,
    pub eval_old: Vec<Example>,
    pub eval_new: Vec<Example>,
}

pub const DEMO_RANK: usize = 2;

pub fn demo_fixture(seed: u64) -> DemoFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (old, new) = split_basis(8, 3, &mut rng);
    let b0: Vec<f64> = (0..6).map(|_| rng.random_range(-0.2..0.2)).collect();
    let b1: Vec<f64> = (0..4).map(|_| rng.random_range(-0.2..0.2)).collect();
    let l0 = LinearLayer::new("enc", random_matrix(6, 8, &mut rng), Some(b0), Activation::Identity)
        .expect("valid layer");
    let l1 = LinearLayer::new("head", random_matrix(4, 6, &mut rng).scale(0.5), Some(b1), Activation::Tanh)
        .expect("valid layer");
    let model = ToyModel::new(8, vec![l0, l1]).expect("dims chain");
    let self_labeled = |x: &Matrix| examples(x, &model.predict(x).expect("input dim 8"));
    let capture = self_labeled(&samples_in_span(&old, 48, &mut rng));
    let eval_old = self_labeled(&samples_in_span(&old, 16, &mut rng));
    let new_x = samples_in_span(&new, 24, &mut rng);
    let new_t = random_matrix(4, 24, &mut rng).scale(0.6);
    let train = examples(&new_x, &new_t);
    let eval_new = train[..8].to_vec();
    DemoFixture { model, capture, train, eval_old, eval_new }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::null_basis;
    use crate::covariance::capture;

    #[test]
    fn null_fixture_has_requested_null_dim() {
        let f = null_space_fixture(3, 5, 10, 4, 20);
        let nb = null_basis(&f.c, 4, 1e-10).unwrap();
        assert_eq!(nb.exact_null_dim, 4);
    }

    #[test]
    fn demo_layers_keep_a_null_space() {
        let d = demo_fixture(0);
        let xs: Vec<Matrix> = d.capture.iter().map(|e| Matrix::column_vector(&e.input).unwrap()).collect();
        let covs = capture(&d.model, &xs).unwrap();
        for cov in covs.values() {
            let nb = null_basis(cov.matrix(), DEMO_RANK, 1e-10).unwrap();
            assert!(nb.exact_null_dim >= DEMO_RANK, "{}: {}", cov.layer_id(), nb.exact_null_dim);
        }
    }

    #[test]
    fn fixtures_are_seeded() {
        assert_eq!(retention_fixture(4).model, retention_fixture(4).model);
        assert_ne!(two_task_fixture(1).model, two_task_fixture(2).model);
    }
}
