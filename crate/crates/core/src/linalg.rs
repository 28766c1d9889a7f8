//! Small dense linear algebra on `ndarray` matrices: Cholesky factors and
//! triangular solves. Dimensions here are tiny (p is the feature count), so
//! plain loops are used throughout.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::Scalar;

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<T> {
    lower: Array2<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factorises a symmetric matrix. Only the lower triangle is read.
    /// Returns `None` if any pivot is not strictly positive.
    pub fn new(a: ArrayView2<T>) -> Option<Self> {
        let p = a.nrows();
        if a.ncols() != p {
            return None;
        }
        let mut l = Array2::<T>::zeros((p, p));
        for j in 0..p {
            let mut diag = a[[j, j]];
            for k in 0..j {
                diag -= l[[j, k]] * l[[j, k]];
            }
            if !(diag > T::zero()) || !diag.is_finite() {
                return None;
            }
            let djj = diag.sqrt();
            l[[j, j]] = djj;
            for i in (j + 1)..p {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / djj;
            }
        }
        Some(Self { lower: l })
    }

    /// Wraps an existing lower-triangular factor with positive diagonal.
    pub fn from_lower(lower: Array2<T>) -> Self {
        Self { lower }
    }

    pub fn lower(&self) -> &Array2<T> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `log det A = 2 Σ log L_ii`.
    pub fn log_det(&self) -> T {
        let two = T::one() + T::one();
        two * (0..self.dim()).map(|i| self.lower[[i, i]].ln()).sum::<T>()
    }

    /// Solves `L x = b` by forward substitution.
    pub fn solve_lower(&self, b: ArrayView1<T>) -> Array1<T> {
        let p = self.dim();
        let mut x = Array1::<T>::zeros(p);
        for i in 0..p {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower[[i, k]] * x[k];
            }
            x[i] = s / self.lower[[i, i]];
        }
        x
    }

    /// Solves `Lᵀ x = b` by back substitution.
    pub fn solve_upper(&self, b: ArrayView1<T>) -> Array1<T> {
        let p = self.dim();
        let mut x = Array1::<T>::zeros(p);
        for i in (0..p).rev() {
            let mut s = b[i];
            for k in (i + 1)..p {
                s -= self.lower[[k, i]] * x[k];
            }
            x[i] = s / self.lower[[i, i]];
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: ArrayView1<T>) -> Array1<T> {
        let y = self.solve_lower(b);
        self.solve_upper(y.view())
    }

    /// Squared Mahalanobis distance `(y - mu)ᵀ A⁻¹ (y - mu)`.
    pub fn mahalanobis_sq(&self, y: ArrayView1<T>, mu: ArrayView1<T>) -> T {
        let p = self.dim();
        // forward substitution on the difference without allocating twice
        let mut z = Array1::<T>::zeros(p);
        let mut acc = T::zero();
        for i in 0..p {
            let mut s = y[i] - mu[i];
            for k in 0..i {
                s -= self.lower[[i, k]] * z[k];
            }
            let zi = s / self.lower[[i, i]];
            z[i] = zi;
            acc += zi * zi;
        }
        acc
    }

    /// Reconstructs `A = L Lᵀ`.
    pub fn reconstruct(&self) -> Array2<T> {
        self.lower.dot(&self.lower.t())
    }
}

/// Maximum absolute asymmetry `max |a_ij - a_ji|`.
pub fn asymmetry<T: Scalar>(a: ArrayView2<T>) -> T {
    let mut worst = T::zero();
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst
}
