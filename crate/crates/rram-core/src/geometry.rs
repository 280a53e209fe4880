//! Embedded geometry of the fixed-rank manifold and the bounded-rank variety.
//!
//! Provides the tangent/normal projections at a rank-s point, the Riemannian
//! gradient of the completion objective, the metric-projection retraction,
//! vector transport, and the truncated SVD of the normal component used by
//! the rank-increase step.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linop::{LinOp, Negated, NormalProjected, TangentOp};
use crate::lowrank::{LowRankMatrix, TangentVector};
use crate::sampled::{residual, SampledMatrix, SparseResidual};
use crate::tsvd::{truncated_svd, Tsvd, TsvdOptions};

/// Singular values below this multiple of the largest are truncated by the
/// retraction.
pub const RETRACT_SV_FLOOR: f64 = 1e-14;
/// Normal singular values below this multiple of the residual norm are
/// treated as zero.
pub const NORMAL_SV_FLOOR: f64 = 1e-12;

/// Projects an operator onto the tangent space at `x`.
///
/// Returns the factored blocks M = UᵀZV, Up = ZV − UM, Vp = ZᵀU − VMᵀ.
pub fn project_tangent(x: &Arc<LowRankMatrix>, z: &dyn LinOp) -> Result<TangentVector> {
    if z.nrows() != x.nrows() || z.ncols() != x.ncols() {
        return Err(Error::shape(format!(
            "operator is {}x{}, point is {}x{}",
            z.nrows(),
            z.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    let u = x.u();
    let v = x.v();
    let zv = z.apply_mat(v); // m×s
    let ztu = z.apply_transpose_mat(u); // n×s
    let m_block = u.transpose() * &zv;
    let up = &zv - u * &m_block;
    let vp = &ztu - v * m_block.transpose();
    Ok(TangentVector::from_trusted(Arc::clone(x), m_block, up, vp))
}

/// Lazy normal-space projection P_U⊥ · Z · P_V⊥ of an operator at `x`.
pub fn project_normal<'a, T: LinOp + ?Sized>(
    x: &'a LowRankMatrix,
    z: &'a T,
) -> Result<NormalProjected<'a, T>> {
    if z.nrows() != x.nrows() || z.ncols() != x.ncols() {
        return Err(Error::shape(format!(
            "operator is {}x{}, point is {}x{}",
            z.nrows(),
            z.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(NormalProjected::new(z, x))
}

/// Riemannian gradient of the completion objective at `x`: the tangent
/// projection of the Euclidean gradient P_Ω(X − A).
pub fn riemannian_gradient(
    problem: &SampledMatrix,
    x: &Arc<LowRankMatrix>,
) -> Result<TangentVector> {
    let res = residual(problem, x)?;
    project_tangent(x, &res)
}

/// Gradient from an already computed residual.
pub fn gradient_from_residual(
    res: &SparseResidual,
    x: &Arc<LowRankMatrix>,
) -> Result<TangentVector> {
    project_tangent(x, res)
}

/// Metric-projection retraction: the best rank-s approximation of X + tZ.
///
/// X + tZ factors exactly through the 2s-column blocks [U Up] and [V Vp];
/// a QR of each block reduces the problem to a 2s×2s dense SVD. Singular
/// values below `RETRACT_SV_FLOOR` times the largest are truncated, so the
/// result can have rank below s; a fully vanishing spectrum is an error.
pub fn retract(x: &LowRankMatrix, t: f64, z: &TangentVector) -> Result<LowRankMatrix> {
    if !t.is_finite() {
        return Err(Error::invalid(format!("step size {t} is not finite")));
    }
    if z.base().nrows() != x.nrows() || z.base().ncols() != x.ncols() || z.base().rank() != x.rank()
    {
        return Err(Error::shape("tangent vector does not conform to the point"));
    }
    let s = x.rank();
    let m = x.nrows();
    let n = x.ncols();

    // left = [U Up], right = [V Vp]
    let mut left = DMatrix::zeros(m, 2 * s);
    left.columns_mut(0, s).copy_from(x.u());
    left.columns_mut(s, s).copy_from(z.up());
    let mut right = DMatrix::zeros(n, 2 * s);
    right.columns_mut(0, s).copy_from(x.v());
    right.columns_mut(s, s).copy_from(z.vp());

    // X + tZ = left · C · rightᵀ with C = [[Σ + tM, tI], [tI, 0]].
    let mut c = DMatrix::zeros(2 * s, 2 * s);
    {
        let mut top_left = c.view_mut((0, 0), (s, s));
        top_left.copy_from(z.m_block());
        top_left *= t;
        for i in 0..s {
            top_left[(i, i)] += x.sigma()[i];
        }
    }
    for i in 0..s {
        c[(i, s + i)] = t;
        c[(s + i, i)] = t;
    }

    let lqr = left.qr();
    let rqr = right.qr();
    let k = lqr.r() * c * rqr.r().transpose();
    let svd = k.svd(true, true);
    let sigma = &svd.singular_values;
    let floor = sigma[0] * RETRACT_SV_FLOOR;
    let keep = sigma.iter().take(s).filter(|&&sv| sv > floor).count();
    if keep == 0 {
        return Err(Error::DegenerateRetraction);
    }
    let uk = svd.u.as_ref().expect("svd with u").columns(0, keep).into_owned();
    let vk = svd
        .v_t
        .as_ref()
        .expect("svd with v_t")
        .rows(0, keep)
        .transpose();
    let mut u_new = lqr.q() * uk;
    let mut v_new = rqr.q() * vk;
    canonical_signs(&mut u_new, &mut v_new);
    Ok(LowRankMatrix::from_trusted(u_new, sigma.rows(0, keep).into_owned(), v_new))
}

fn canonical_signs(u: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    for c in 0..u.ncols() {
        let col = u.column(c);
        let mut best = 0usize;
        let mut best_abs = 0.0;
        for (i, &val) in col.iter().enumerate() {
            if val.abs() > best_abs {
                best_abs = val.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            u.column_mut(c).neg_mut();
            v.column_mut(c).neg_mut();
        }
    }
}

/// Transports a tangent vector to the tangent space at another point by
/// projection; all products stay s-width.
pub fn transport(x_to: &Arc<LowRankMatrix>, z: &TangentVector) -> Result<TangentVector> {
    if z.base().rank() != x_to.rank() {
        return Err(Error::shape(format!(
            "transport between ranks {} and {}",
            z.base().rank(),
            x_to.rank()
        )));
    }
    if z.base().nrows() != x_to.nrows() || z.base().ncols() != x_to.ncols() {
        return Err(Error::shape("transport between different ambient shapes"));
    }
    project_tangent(x_to, &TangentOp(z))
}

/// Best rank-l̃ factored approximation W diag(d) Yᵀ of the normal component
/// of the negative Euclidean gradient.
#[derive(Debug, Clone)]
pub struct NormalCorrection {
    base: Arc<LowRankMatrix>,
    w: DMatrix<f64>,
    d: DVector<f64>,
    y: DMatrix<f64>,
}

impl NormalCorrection {
    pub fn base(&self) -> &Arc<LowRankMatrix> {
        &self.base
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }

    /// ‖D‖_F = ‖W D Yᵀ‖_F.
    pub fn norm(&self) -> f64 {
        self.d.norm()
    }

    /// Keeps the leading `l` triplets.
    pub fn take(&self, l: usize) -> NormalCorrection {
        let l = l.min(self.rank());
        NormalCorrection {
            base: Arc::clone(&self.base),
            w: self.w.columns(0, l).into_owned(),
            d: self.d.rows(0, l).into_owned(),
            y: self.y.columns(0, l).into_owned(),
        }
    }

    /// max(‖WᵀU‖, ‖YᵀV‖) against the base point.
    pub fn orthogonality_defect(&self) -> f64 {
        let a = (self.w.transpose() * self.base.u()).norm();
        let b = (self.y.transpose() * self.base.v()).norm();
        a.max(b)
    }
}

/// Outcome of the normal-space truncated SVD.
#[derive(Debug, Clone)]
pub enum NormalTopl {
    Correction(NormalCorrection),
    /// The normal component is numerically zero; distinct from an error.
    NothingToAdd,
}

/// Top-`l` singular triplets of the normal component of −∇f at `x`.
///
/// Singular values below `NORMAL_SV_FLOOR`·‖residual‖_F are treated as zero;
/// when none survive the result is [`NormalTopl::NothingToAdd`].
pub fn normal_topl(
    problem: &SampledMatrix,
    x: &Arc<LowRankMatrix>,
    l: usize,
    opts: &TsvdOptions,
) -> Result<NormalTopl> {
    let s = x.rank();
    let max_l = x.nrows().min(x.ncols()).saturating_sub(s);
    if l == 0 || l > max_l {
        return Err(Error::invalid(format!(
            "rank increase number {l} outside 1..={max_l}"
        )));
    }
    let res = residual(problem, x)?;
    normal_topl_from_residual(&res, x, l, opts)
}

/// Same as [`normal_topl`] but reuses an existing residual.
pub fn normal_topl_from_residual(
    res: &SparseResidual,
    x: &Arc<LowRankMatrix>,
    l: usize,
    opts: &TsvdOptions,
) -> Result<NormalTopl> {
    let rnorm = res.norm();
    if rnorm == 0.0 {
        return Ok(NormalTopl::NothingToAdd);
    }
    let neg = Negated(res);
    let h = project_normal(x, &neg)?;
    let t: Tsvd = truncated_svd(&h, l, opts);
    let floor = NORMAL_SV_FLOOR * rnorm;
    let keep = t.sigma.iter().filter(|&&sv| sv > floor).count();
    if keep == 0 {
        return Ok(NormalTopl::NothingToAdd);
    }
    let t = t.take(keep);
    // The exact correction factors are orthogonal to the base factors;
    // singular vectors attached to small values can leak components of
    // relative size eps·σ₁/σᵢ into the base subspace, so project that
    // leakage out.
    let w = &t.u - x.u() * (x.u().transpose() * &t.u);
    let y = &t.v - x.v() * (x.v().transpose() * &t.v);
    Ok(NormalTopl::Correction(NormalCorrection {
        base: Arc::clone(x),
        w,
        d: t.sigma,
        y,
    }))
}
