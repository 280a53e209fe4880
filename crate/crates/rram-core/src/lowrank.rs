//! Factored low-rank matrices and tangent vectors.
//!
//! A rank-s matrix is stored as a compact SVD triple (U, Σ, V) with
//! column-orthonormal U, V and strictly positive non-increasing singular
//! values. Tangent vectors at such a point are stored in the factored form
//! Z = U M Vᵀ + Up Vᵀ + U Vpᵀ with UᵀUp = 0 and VᵀVp = 0; the orthonormal
//! complements U⊥, V⊥ are never materialized.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Frobenius tolerance for the orthonormality invariants.
pub const ORTHO_TOL: f64 = 1e-12;
/// Drift level past which factors are re-orthonormalized.
pub const REORTH_TRIGGER: f64 = 1e-10;
/// Default cap on m·n for dense materialization.
pub const DENSE_CAP: usize = 1_000_000;

/// Compact SVD representation U diag(σ) Vᵀ of a rank-s matrix.
#[derive(Debug, Clone)]
pub struct LowRankMatrix {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v: DMatrix<f64>,
}

fn ortho_defect(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    (&g - DMatrix::<f64>::identity(g.nrows(), g.ncols())).norm()
}

impl LowRankMatrix {
    /// Validating constructor.
    pub fn new(u: DMatrix<f64>, sigma: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        let x = LowRankMatrix { u, sigma, v };
        x.validate()?;
        Ok(x)
    }

    /// Constructor for factors coming out of a fresh QR/SVD. Drift beyond
    /// `REORTH_TRIGGER` is repaired by re-orthonormalization; the result is
    /// invariant-checked in debug builds.
    pub(crate) fn from_trusted(u: DMatrix<f64>, sigma: DVector<f64>, v: DMatrix<f64>) -> Self {
        let x = LowRankMatrix { u, sigma, v };
        let x = x.repair_drift();
        debug_assert!(
            x.check(REORTH_TRIGGER).is_ok(),
            "trusted factors violate invariants"
        );
        x
    }

    pub fn validate(&self) -> Result<()> {
        self.check(ORTHO_TOL)
    }

    fn check(&self, ortho_tol: f64) -> Result<()> {
        let s = self.sigma.len();
        if s == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        if self.u.ncols() != s || self.v.ncols() != s {
            return Err(Error::shape(format!(
                "factor widths {} and {} do not match {} singular values",
                self.u.ncols(),
                self.v.ncols(),
                s
            )));
        }
        if self.u.nrows() < s || self.v.nrows() < s {
            return Err(Error::shape("rank exceeds matrix dimensions".to_string()));
        }
        for i in 0..s {
            if !(self.sigma[i] > 0.0) || !self.sigma[i].is_finite() {
                return Err(Error::invalid(format!(
                    "singular value {} is {}, must be positive and finite",
                    i, self.sigma[i]
                )));
            }
            if i > 0 && self.sigma[i] > self.sigma[i - 1] {
                return Err(Error::invalid("singular values must be non-increasing"));
            }
        }
        if ortho_defect(&self.u) > ortho_tol {
            return Err(Error::invalid("U is not column-orthonormal to tolerance"));
        }
        if ortho_defect(&self.v) > ortho_tol {
            return Err(Error::invalid("V is not column-orthonormal to tolerance"));
        }
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// ‖X‖_F, equal to the 2-norm of the singular values by orthonormal
    /// invariance.
    pub fn frobenius_norm(&self) -> f64 {
        self.sigma.norm()
    }

    /// (UΣ)ᵀ as an s×m matrix whose column i is row i of UΣ; used by the
    /// sparse kernels for contiguous access.
    pub(crate) fn u_scaled_transposed(&self) -> DMatrix<f64> {
        let s = self.rank();
        let m = self.nrows();
        DMatrix::from_fn(s, m, |c, i| self.u[(i, c)] * self.sigma[c])
    }

    /// Materializes U Σ Vᵀ densely; refuses when m·n exceeds `DENSE_CAP`.
    pub fn apply_dense(&self) -> Result<DMatrix<f64>> {
        self.apply_dense_capped(DENSE_CAP)
    }

    pub fn apply_dense_capped(&self, cap: usize) -> Result<DMatrix<f64>> {
        let size = self.nrows().checked_mul(self.ncols());
        match size {
            Some(sz) if sz <= cap => {}
            _ => {
                return Err(Error::invalid(format!(
                    "dense materialization of a {}x{} matrix exceeds the cap of {} entries",
                    self.nrows(),
                    self.ncols(),
                    cap
                )))
            }
        }
        let mut us = self.u.clone();
        for c in 0..self.rank() {
            us.column_mut(c).scale_mut(self.sigma[c]);
        }
        Ok(us * self.v.transpose())
    }

    /// Keeps the leading `r` singular triplets.
    pub fn truncate(&self, r: usize) -> Result<Self> {
        if r == 0 || r > self.rank() {
            return Err(Error::invalid(format!(
                "cannot truncate rank {} to {}",
                self.rank(),
                r
            )));
        }
        Ok(LowRankMatrix {
            u: self.u.columns(0, r).into_owned(),
            sigma: self.sigma.rows(0, r).into_owned(),
            v: self.v.columns(0, r).into_owned(),
        })
    }

    /// Re-orthonormalizes the factors via QR + small SVD when drift exceeds
    /// `REORTH_TRIGGER`; no-op otherwise.
    pub(crate) fn repair_drift(self) -> Self {
        let drift = ortho_defect(&self.u).max(ortho_defect(&self.v));
        if drift <= REORTH_TRIGGER {
            return self;
        }
        let qu = self.u.qr();
        let qv = self.v.qr();
        let mut mid = qu.r();
        // mid = Ru Σ Rvᵀ
        for c in 0..self.sigma.len() {
            mid.column_mut(c).scale_mut(self.sigma[c]);
        }
        let mid = mid * qv.r().transpose();
        let svd = mid.svd(true, true);
        let uu = svd.u.as_ref().expect("svd with u");
        let vv = svd.v_t.as_ref().expect("svd with v_t");
        let u = qu.q() * uu;
        let v = qv.q() * vv.transpose();
        let x = LowRankMatrix {
            u,
            sigma: svd.singular_values.clone(),
            v,
        };
        debug_assert!(x.check(REORTH_TRIGGER).is_ok(), "repair left invalid factors");
        x
    }
}

/// Factored tangent vector Z = U M Vᵀ + Up Vᵀ + U Vpᵀ at a base point.
#[derive(Debug, Clone)]
pub struct TangentVector {
    base: Arc<LowRankMatrix>,
    m_block: DMatrix<f64>,
    up: DMatrix<f64>,
    vp: DMatrix<f64>,
}

impl TangentVector {
    /// Validating constructor: checks block shapes and UᵀUp = 0, VᵀVp = 0.
    pub fn new(
        base: Arc<LowRankMatrix>,
        m_block: DMatrix<f64>,
        up: DMatrix<f64>,
        vp: DMatrix<f64>,
    ) -> Result<Self> {
        let s = base.rank();
        if m_block.nrows() != s
            || m_block.ncols() != s
            || up.nrows() != base.nrows()
            || up.ncols() != s
            || vp.nrows() != base.ncols()
            || vp.ncols() != s
        {
            return Err(Error::shape("tangent blocks do not conform to the base point"));
        }
        let z = TangentVector { base, m_block, up, vp };
        let defect = z.block_orthogonality_defect();
        if defect > ORTHO_TOL * (1.0 + z.norm()) {
            return Err(Error::invalid(format!(
                "tangent blocks are not orthogonal to the base factors (defect {defect:.3e})"
            )));
        }
        Ok(z)
    }

    pub(crate) fn from_trusted(
        base: Arc<LowRankMatrix>,
        m_block: DMatrix<f64>,
        up: DMatrix<f64>,
        vp: DMatrix<f64>,
    ) -> Self {
        TangentVector { base, m_block, up, vp }
    }

    pub fn zero(base: Arc<LowRankMatrix>) -> Self {
        let s = base.rank();
        let (m, n) = (base.nrows(), base.ncols());
        TangentVector {
            base,
            m_block: DMatrix::zeros(s, s),
            up: DMatrix::zeros(m, s),
            vp: DMatrix::zeros(n, s),
        }
    }

    pub fn base(&self) -> &Arc<LowRankMatrix> {
        &self.base
    }

    pub fn m_block(&self) -> &DMatrix<f64> {
        &self.m_block
    }

    pub fn up(&self) -> &DMatrix<f64> {
        &self.up
    }

    pub fn vp(&self) -> &DMatrix<f64> {
        &self.vp
    }

    /// max(‖UᵀUp‖, ‖VᵀVp‖).
    pub fn block_orthogonality_defect(&self) -> f64 {
        let a = (self.base.u().transpose() * &self.up).norm();
        let b = (self.base.v().transpose() * &self.vp).norm();
        a.max(b)
    }

    /// Factored inner product ⟨Z₁,Z₂⟩ = ⟨M₁,M₂⟩ + ⟨Up₁,Up₂⟩ + ⟨Vp₁,Vp₂⟩,
    /// exact under the block-orthogonality invariants.
    pub fn inner(&self, other: &TangentVector) -> f64 {
        debug_assert!(Arc::ptr_eq(&self.base, &other.base) || same_shape(self, other));
        self.m_block.dot(&other.m_block) + self.up.dot(&other.up) + self.vp.dot(&other.vp)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn scale(&self, t: f64) -> TangentVector {
        TangentVector {
            base: Arc::clone(&self.base),
            m_block: &self.m_block * t,
            up: &self.up * t,
            vp: &self.vp * t,
        }
    }

    /// Component-wise difference; both vectors must share the base point.
    pub fn sub(&self, other: &TangentVector) -> TangentVector {
        debug_assert!(Arc::ptr_eq(&self.base, &other.base) || same_shape(self, other));
        TangentVector {
            base: Arc::clone(&self.base),
            m_block: &self.m_block - &other.m_block,
            up: &self.up - &other.up,
            vp: &self.vp - &other.vp,
        }
    }

    /// Materializes Z densely (small instances only).
    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let size = self
            .base
            .nrows()
            .checked_mul(self.base.ncols())
            .filter(|&sz| sz <= DENSE_CAP);
        if size.is_none() {
            return Err(Error::invalid("tangent vector too large to densify"));
        }
        let u = self.base.u();
        let v = self.base.v();
        Ok(u * &self.m_block * v.transpose() + &self.up * v.transpose() + u * self.vp.transpose())
    }
}

fn same_shape(a: &TangentVector, b: &TangentVector) -> bool {
    a.base.nrows() == b.base.nrows()
        && a.base.ncols() == b.base.ncols()
        && a.base.rank() == b.base.rank()
}
