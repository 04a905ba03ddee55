//! Seeded synthetic datasets for the demos. Same seed, same data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Labelled points for classification, row-major `x[i][k]`, labels ±1.
#[derive(Debug, Clone, PartialEq)]
pub struct Labelled {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

/// Two unit-variance Gaussian clouds centred at `±(1, …, 1)`, labels
/// alternating `+1, −1, …`.
pub fn svm_dataset(n: usize, d: usize, seed: u64) -> Labelled {
    let mut r = rng(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        x.push((0..d).map(|_| label + normal(&mut r)).collect());
        y.push(label);
    }
    Labelled { x, y }
}

/// Four separable points whose maximum-margin separator is `x₁ = 0`, with
/// `(±1, 0)` on the margin and `(±3, ∓0.5)` strictly outside it.
pub fn svm_square() -> Labelled {
    Labelled {
        x: vec![vec![-1.0, 0.0], vec![-3.0, 0.5], vec![1.0, 0.0], vec![3.0, -0.5]],
        y: vec![-1.0, -1.0, 1.0, 1.0],
    }
}

/// Univariate regression data `y = 1.5x − 0.5 + 0.3ε`, `x ∈ [−2, 2]`.
pub fn ridge_dataset(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let x: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let y = x.iter().map(|xi| 1.5 * xi - 0.5 + 0.3 * normal(&mut r)).collect();
    (x, y)
}

/// Train/test split of a noisy linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<f64>,
    pub x_test: Vec<Vec<f64>>,
    pub y_test: Vec<f64>,
}

impl Regression {
    pub fn features(&self) -> usize {
        self.x_train.first().map_or(0, |r| r.len())
    }
}

/// Few training samples relative to the number of features and heavy
/// label noise, so that regularization pays off on the test set.
pub fn regression_split(n_train: usize, n_test: usize, d: usize, noise: f64, seed: u64) -> Regression {
    let mut r = rng(seed);
    let w: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
    let sample = |count: usize, r: &mut ChaCha8Rng| {
        let mut xs = Vec::with_capacity(count);
        let mut ys = Vec::with_capacity(count);
        for _ in 0..count {
            let x: Vec<f64> = (0..d).map(|_| normal(r)).collect();
            let clean: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            ys.push(clean + noise * normal(r));
            xs.push(x);
        }
        (xs, ys)
    };
    let (x_train, y_train) = sample(n_train, &mut r);
    let (x_test, y_test) = sample(n_test, &mut r);
    Regression {
        x_train,
        y_train,
        x_test,
        y_test,
    }
}

/// `rows × cols` standard normal matrix.
pub fn normal_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| normal(r)).collect()).collect()
}

pub fn normal_vector(r: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| normal(r)).collect()
}
