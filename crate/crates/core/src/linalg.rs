//! Small dense linear-algebra helpers shared by the solvers and the
//! differentiation routines.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

/// Pivot threshold, relative to the matrix infinity norm, below which an LU
/// factorization is considered rank deficient.
pub const PIVOT_TOL: f64 = 1e-11;

/// Dense LU factorization with partial pivoting, `P A = L U`.
///
/// Keeps the permutation so that both `A x = b` and `Aᵀ x = b` can be solved
/// from the same factors.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: DMatrix<f64>,
    perm: Vec<usize>,
    min_pivot: f64,
}

impl Lu {
    pub fn factor(a: &DMatrix<f64>) -> Self {
        assert!(a.is_square(), "LU needs a square matrix");
        let n = a.nrows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let (mut p, mut best) = (k, lu[(k, k)].abs());
            for i in k + 1..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            min_pivot = min_pivot.min(best);
            if p != k {
                lu.swap_rows(p, k);
                perm.swap(p, k);
            }
            let pivot = lu[(k, k)];
            if pivot == 0.0 {
                continue;
            }
            // column-major storage: eliminate column by column
            let data = lu.as_mut_slice();
            for i in k + 1..n {
                data[k * n + i] /= pivot;
            }
            for j in k + 1..n {
                let u = data[j * n + k];
                if u == 0.0 {
                    continue;
                }
                let (left, right) = data.split_at_mut(j * n);
                let mult = &left[k * n + k + 1..k * n + n];
                let col = &mut right[k + 1..n];
                for (c, m) in col.iter_mut().zip(mult) {
                    *c -= m * u;
                }
            }
        }
        if n == 0 {
            min_pivot = 0.0;
        }
        Lu { lu, perm, min_pivot }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Smallest absolute pivot encountered during elimination.
    pub fn min_pivot(&self) -> f64 {
        self.min_pivot
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut y = DVector::from_fn(n, |i, _| b[self.perm[i]]);
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * y[j];
            }
            y[i] = s / self.lu[(i, i)];
        }
        y
    }

    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut w = b.clone();
        for i in 0..n {
            let mut s = w[i];
            for j in 0..i {
                s -= self.lu[(j, i)] * w[j];
            }
            w[i] = s / self.lu[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = w[i];
            for j in i + 1..n {
                s -= self.lu[(j, i)] * w[j];
            }
            w[i] = s;
        }
        let mut x = DVector::zeros(n);
        for i in 0..n {
            x[self.perm[i]] = w[i];
        }
        x
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Lu(Lu),
    /// Minimum-norm least squares through the SVD pseudo-inverse.
    PseudoInverse(DMatrix<f64>),
}

/// Square solver that uses one LU factorization when it is well conditioned
/// and falls back to a rank-revealing least-squares solve otherwise.
#[derive(Debug, Clone)]
pub struct SquareSolver {
    factor: Factor,
}

impl SquareSolver {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let lu = Lu::factor(a);
        let scale = inf_norm(a).max(f64::MIN_POSITIVE);
        if a.nrows() == 0 || lu.min_pivot() > PIVOT_TOL * scale {
            return SquareSolver {
                factor: Factor::Lu(lu),
            };
        }
        SquareSolver {
            factor: Factor::PseudoInverse(pseudo_inverse(a)),
        }
    }

    /// True when the system was rank deficient and the least-squares path
    /// is in use.
    pub fn is_approximate(&self) -> bool {
        matches!(self.factor, Factor::PseudoInverse(_))
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Lu(lu) => lu.solve(b),
            Factor::PseudoInverse(p) => p * b,
        }
    }

    pub fn solve_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Lu(lu) => lu.solve_transpose(b),
            Factor::PseudoInverse(p) => p.tr_mul(b),
        }
    }
}

pub fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = SVD::new(a.clone(), true, true);
    let smax = svd.singular_values.max();
    let eps = (smax * 1e-10).max(f64::MIN_POSITIVE);
    svd.pseudo_inverse(eps)
        .unwrap_or_else(|_| DMatrix::zeros(a.ncols(), a.nrows()))
}

pub fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(sym.clone()).eigenvalues.min()
}
