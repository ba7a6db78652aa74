//! Small dense linear-algebra helpers shared across modules: guarded
//! factorizations with condition reporting, and a flat rank-3 tensor type used
//! for Christoffel symbols, curvature components, and connection partials.

use crate::error::{Error, Result};
use crate::tol::SINGULAR_RCOND;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, Dyn};

/// Largest absolute entry of a matrix (zero for an empty matrix).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, &x| acc.max(crate::fmath::abs(x)))
}

/// Largest absolute entry of a vector (zero for an empty vector).
pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, &x| acc.max(crate::fmath::abs(x)))
}

/// LU factorization with a cheap reciprocal-condition estimate.
///
/// The estimate is `min |U_ii| / max |U_ii|` from the factored upper triangle:
/// crude but monotone in the actual conditioning, and cheap enough to attach
/// to every error report.
pub struct LuSolver {
    lu: nalgebra::LU<f64, Dyn, Dyn>,
    rcond: f64,
}

impl LuSolver {
    /// Factor `m`; reports `SingularOperator` (with the estimate) when the
    /// pivot ratio falls below [`SINGULAR_RCOND`].
    pub fn new(m: &DMatrix<f64>, name: &str) -> Result<Self> {
        let lu = nalgebra::LU::new(m.clone());
        let diag = lu.u().diagonal();
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for &d in diag.iter() {
            let a = crate::fmath::abs(d);
            lo = lo.min(a);
            hi = hi.max(a);
        }
        let rcond = if hi > 0.0 { lo / hi } else { 0.0 };
        if !(rcond.is_finite() && rcond > SINGULAR_RCOND) {
            return Err(Error::SingularOperator {
                name: name.to_string(),
                rcond,
            });
        }
        Ok(Self { lu, rcond })
    }

    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu
            .solve(rhs)
            .ok_or_else(|| Error::SingularOperator {
                name: "lu-solve".to_string(),
                rcond: self.rcond,
            })
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.lu
            .solve(rhs)
            .ok_or_else(|| Error::SingularOperator {
                name: "lu-solve".to_string(),
                rcond: self.rcond,
            })
    }

    /// Dense inverse. Callers should keep `m` small (the engine only inverts
    /// per-point operators, never lattice-sized ones, unless the problem
    /// dimension is itself small).
    pub fn inverse(&self, n: usize) -> Result<DMatrix<f64>> {
        self.solve_mat(&DMatrix::identity(n, n))
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
pub struct SpdSolver {
    chol: nalgebra::Cholesky<f64, Dyn>,
    dim: usize,
}

impl SpdSolver {
    pub fn new(m: &DMatrix<f64>, name: &str) -> Result<Self> {
        let dim = m.nrows();
        let chol = nalgebra::Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite {
            name: name.to_string(),
        })?;
        Ok(Self { chol, dim })
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.solve(&DMatrix::identity(self.dim, self.dim))
    }
}

/// Invert a small matrix through LU, with a named error on singularity.
pub fn invert(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    LuSolver::new(m, name)?.inverse(m.nrows())
}

/// Invert a symmetric positive-definite matrix through Cholesky.
pub fn invert_spd(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    Ok(SpdSolver::new(m, name)?.inverse())
}

/// Dense rank-3 tensor with row-major layout over `(i, j, k)`.
///
/// Index meaning is documented at each use site; this type only supplies
/// storage and bounds-checked accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    n0: usize,
    n1: usize,
    n2: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n0: usize, n1: usize, n2: usize) -> Self {
        Self {
            n0,
            n1,
            n2,
            data: vec![0.0; n0 * n1 * n2],
        }
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n0, self.n1, self.n2)
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.n0 && j < self.n1 && k < self.n2);
        (i * self.n1 + j) * self.n2 + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = value;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let o = self.offset(i, j, k);
        self.data[o] += value;
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0_f64, |acc, &x| acc.max(crate::fmath::abs(x)))
    }

    /// Largest entry-wise absolute difference to `other` (dimensions must
    /// match).
    pub fn diff(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0_f64, |acc, (a, b)| acc.max(crate::fmath::abs(a - b)))
    }

    /// Fill slice `(i, ., .)` from a matrix of shape `(n1, n2)`.
    pub fn set_slice0(&mut self, i: usize, m: &DMatrix<f64>) {
        assert_eq!((m.nrows(), m.ncols()), (self.n1, self.n2));
        for j in 0..self.n1 {
            for k in 0..self.n2 {
                self.set(i, j, k, m[(j, k)]);
            }
        }
    }

    /// Extract slice `(i, ., .)` as a matrix of shape `(n1, n2)`.
    pub fn slice0(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n1, self.n2, |j, k| self.get(i, j, k))
    }
}
