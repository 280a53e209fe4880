//! Matrix-free linear operators.
//!
//! Tangent projection, vector transport, and the truncated SVD of the
//! normal component all consume an m×n map through its action on vectors
//! and s-width blocks, never through a dense array. Implementations exist
//! for dense matrices (tests and small oracles), sparse residuals, sampled
//! observation matrices, factored tangent vectors, and the lazily projected
//! normal component.

use nalgebra::{DMatrix, DVector};

use crate::lowrank::{LowRankMatrix, TangentVector};
use crate::sampled::{SampledMatrix, SparseResidual};

/// An m×n linear map given by products with vectors and blocks.
pub trait LinOp {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;

    /// A·x for x of length ncols.
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Aᵀ·x for x of length nrows.
    fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64>;

    /// A·B column by column.
    fn apply_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), b.ncols());
        for c in 0..b.ncols() {
            out.set_column(c, &self.apply(&b.column(c).into_owned()));
        }
        out
    }

    /// Aᵀ·B column by column.
    fn apply_transpose_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.ncols(), b.ncols());
        for c in 0..b.ncols() {
            out.set_column(c, &self.apply_transpose(&b.column(c).into_owned()));
        }
        out
    }

    /// Dense m×n realization; intended for small operators only.
    fn materialize(&self) -> DMatrix<f64> {
        self.apply_mat(&DMatrix::identity(self.ncols(), self.ncols()))
    }
}

impl LinOp for DMatrix<f64> {
    fn nrows(&self) -> usize {
        DMatrix::nrows(self)
    }

    fn ncols(&self) -> usize {
        DMatrix::ncols(self)
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self * x
    }

    fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        self.transpose() * x
    }

    fn apply_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self * b
    }

    fn apply_transpose_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.transpose() * b
    }

    fn materialize(&self) -> DMatrix<f64> {
        self.clone()
    }
}

macro_rules! sparse_linop {
    ($ty:ty) => {
        impl LinOp for $ty {
            fn nrows(&self) -> usize {
                self.m()
            }

            fn ncols(&self) -> usize {
                self.n()
            }

            fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
                let pat = self.pattern();
                let vals = self.values();
                let mut out = DVector::zeros(self.m());
                for e in 0..vals.len() {
                    out[pat.row(e)] += vals[e] * x[pat.col(e)];
                }
                out
            }

            fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
                let pat = self.pattern();
                let vals = self.values();
                let mut out = DVector::zeros(self.n());
                // Column-sorted traversal writes `out` sequentially.
                for &e in pat.col_order() {
                    let e = e as usize;
                    out[pat.col(e)] += vals[e] * x[pat.row(e)];
                }
                out
            }

            fn apply_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
                let pat = self.pattern();
                let vals = self.values();
                let bt = b.transpose();
                let p = b.ncols();
                let mut out = DMatrix::zeros(p, self.m());
                for e in 0..vals.len() {
                    let v = vals[e];
                    let src = bt.column(pat.col(e));
                    let mut dst = out.column_mut(pat.row(e));
                    for c in 0..p {
                        dst[c] += v * src[c];
                    }
                }
                out.transpose()
            }

            fn apply_transpose_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
                let pat = self.pattern();
                let vals = self.values();
                let bt = b.transpose();
                let p = b.ncols();
                let mut out = DMatrix::zeros(p, self.n());
                for &e in pat.col_order() {
                    let e = e as usize;
                    let v = vals[e];
                    let src = bt.column(pat.row(e));
                    let mut dst = out.column_mut(pat.col(e));
                    for c in 0..p {
                        dst[c] += v * src[c];
                    }
                }
                out.transpose()
            }

            fn materialize(&self) -> DMatrix<f64> {
                let pat = self.pattern();
                let vals = self.values();
                let mut out = DMatrix::zeros(self.m(), self.n());
                for e in 0..vals.len() {
                    out[(pat.row(e), pat.col(e))] = vals[e];
                }
                out
            }
        }
    };
}

sparse_linop!(SparseResidual);
sparse_linop!(SampledMatrix);

/// Negation of another operator.
pub struct Negated<'a, T: LinOp + ?Sized>(pub &'a T);

impl<T: LinOp + ?Sized> LinOp for Negated<'_, T> {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }

    fn ncols(&self) -> usize {
        self.0.ncols()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        -self.0.apply(x)
    }

    fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        -self.0.apply_transpose(x)
    }

    fn apply_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        -self.0.apply_mat(b)
    }

    fn apply_transpose_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        -self.0.apply_transpose_mat(b)
    }

    fn materialize(&self) -> DMatrix<f64> {
        -self.0.materialize()
    }
}

/// A factored tangent vector viewed as an m×n map; all products use only
/// s-width intermediates.
pub struct TangentOp<'a>(pub &'a TangentVector);

impl LinOp for TangentOp<'_> {
    fn nrows(&self) -> usize {
        self.0.base().nrows()
    }

    fn ncols(&self) -> usize {
        self.0.base().ncols()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let z = self.0;
        let u = z.base().u();
        let v = z.base().v();
        let vtx = v.transpose() * x;
        u * (z.m_block() * &vtx) + z.up() * vtx + u * (z.vp().transpose() * x)
    }

    fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        let z = self.0;
        let u = z.base().u();
        let v = z.base().v();
        let utx = u.transpose() * x;
        v * (z.m_block().transpose() * &utx) + v * (z.up().transpose() * x) + z.vp() * utx
    }

    fn apply_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let z = self.0;
        let u = z.base().u();
        let v = z.base().v();
        let vtb = v.transpose() * b;
        u * (z.m_block() * &vtb) + z.up() * vtb + u * (z.vp().transpose() * b)
    }

    fn apply_transpose_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let z = self.0;
        let u = z.base().u();
        let v = z.base().v();
        let utb = u.transpose() * b;
        v * (z.m_block().transpose() * &utb) + v * (z.up().transpose() * b) + z.vp() * utb
    }
}

/// Lazily projected normal component P_U⊥ · A · P_V⊥ of an inner operator;
/// never densified for large dimensions.
pub struct NormalProjected<'a, T: LinOp + ?Sized> {
    inner: &'a T,
    base: &'a LowRankMatrix,
}

impl<'a, T: LinOp + ?Sized> NormalProjected<'a, T> {
    pub fn new(inner: &'a T, base: &'a LowRankMatrix) -> Self {
        NormalProjected { inner, base }
    }
}

impl<T: LinOp + ?Sized> LinOp for NormalProjected<'_, T> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let u = self.base.u();
        let v = self.base.v();
        let x_perp = x - v * (v.transpose() * x);
        let y = self.inner.apply(&x_perp);
        &y - u * (u.transpose() * &y)
    }

    fn apply_transpose(&self, x: &DVector<f64>) -> DVector<f64> {
        let u = self.base.u();
        let v = self.base.v();
        let x_perp = x - u * (u.transpose() * x);
        let y = self.inner.apply_transpose(&x_perp);
        &y - v * (v.transpose() * &y)
    }

    fn apply_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let u = self.base.u();
        let v = self.base.v();
        let b_perp = b - v * (v.transpose() * b);
        let y = self.inner.apply_mat(&b_perp);
        &y - u * (u.transpose() * &y)
    }

    fn apply_transpose_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let u = self.base.u();
        let v = self.base.v();
        let b_perp = b - u * (u.transpose() * b);
        let y = self.inner.apply_transpose_mat(&b_perp);
        &y - v * (v.transpose() * &y)
    }

    fn materialize(&self) -> DMatrix<f64> {
        let u = self.base.u();
        let v = self.base.v();
        let dense = self.inner.materialize();
        let left = &dense - u * (u.transpose() * &dense);
        &left - (&left * v) * v.transpose()
    }
}
