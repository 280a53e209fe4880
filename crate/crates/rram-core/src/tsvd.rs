//! Truncated SVD of a matrix-free operator.
//!
//! Small operators are materialized and decomposed densely. Larger ones go
//! through Golub–Kahan–Lanczos bidiagonalization with full
//! reorthogonalization, deterministic start vectors, and restart on
//! breakdown, so only operator products are required.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linop::LinOp;

/// Routing and convergence controls for [`truncated_svd`].
#[derive(Debug, Clone)]
pub struct TsvdOptions {
    /// Operators with max(m, n) at or below this bound are materialized and
    /// decomposed densely.
    pub dense_cutoff: usize,
    /// Ritz residual tolerance, relative to the largest singular value.
    pub tol: f64,
    /// Cap on bidiagonalization steps; `None` means 4·l + 20.
    pub max_iters: Option<usize>,
}

impl Default for TsvdOptions {
    fn default() -> Self {
        TsvdOptions {
            dense_cutoff: 512,
            tol: 1e-10,
            max_iters: None,
        }
    }
}

/// Leading singular triplets, descending; may hold fewer than requested when
/// the numerical rank is smaller.
#[derive(Debug, Clone)]
pub struct Tsvd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl Tsvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    fn empty(m: usize, n: usize) -> Self {
        Tsvd {
            u: DMatrix::zeros(m, 0),
            sigma: DVector::zeros(0),
            v: DMatrix::zeros(n, 0),
        }
    }

    /// Keeps the leading `r` triplets.
    pub fn take(&self, r: usize) -> Tsvd {
        let r = r.min(self.rank());
        Tsvd {
            u: self.u.columns(0, r).into_owned(),
            sigma: self.sigma.rows(0, r).into_owned(),
            v: self.v.columns(0, r).into_owned(),
        }
    }
}

/// Makes the largest-magnitude entry of each left vector positive, flipping
/// the paired right vector, so repeated runs produce identical factors.
fn canonicalize_signs(u: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
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

/// Top-`l` singular triplets of `op`.
pub fn truncated_svd(op: &dyn LinOp, l: usize, opts: &TsvdOptions) -> Tsvd {
    let (m, n) = (op.nrows(), op.ncols());
    let l = l.min(m).min(n);
    if l == 0 {
        return Tsvd::empty(m, n);
    }
    if m.max(n) <= opts.dense_cutoff {
        dense_tsvd(op, l)
    } else {
        lanczos_tsvd(op, l, opts)
    }
}

fn dense_tsvd(op: &dyn LinOp, l: usize) -> Tsvd {
    let dense = op.materialize();
    let svd = dense.svd(true, true);
    let u_full = svd.u.expect("svd with u");
    let vt_full = svd.v_t.expect("svd with v_t");
    let keep = l
        .min(svd.singular_values.len())
        .min(svd.singular_values.iter().filter(|&&s| s > 0.0).count());
    let mut u = u_full.columns(0, keep).into_owned();
    let mut v = vt_full.rows(0, keep).transpose();
    canonicalize_signs(&mut u, &mut v);
    Tsvd {
        u,
        sigma: svd.singular_values.rows(0, keep).into_owned(),
        v,
    }
}

/// Deterministic start vectors; independent of problem seeds so the routine
/// itself is a pure function of the operator.
fn start_stream() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x5afe_5eed_u64)
}

fn orthogonalize_against(x: &mut DVector<f64>, basis: &[DVector<f64>]) {
    // Two passes of classical Gram-Schmidt.
    for _ in 0..2 {
        for q in basis {
            let h = q.dot(x);
            x.axpy(-h, q, 1.0);
        }
    }
}

fn lanczos_tsvd(op: &dyn LinOp, l: usize, opts: &TsvdOptions) -> Tsvd {
    let (m, n) = (op.nrows(), op.ncols());
    let max_iters = opts.max_iters.unwrap_or(4 * l + 20).min(m.min(n));
    let mut rng = start_stream();
    let mut draw = |len: usize| -> DVector<f64> {
        DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
    };

    let mut qs: Vec<DVector<f64>> = Vec::with_capacity(max_iters + 1);
    let mut ps: Vec<DVector<f64>> = Vec::with_capacity(max_iters);
    let mut alphas: Vec<f64> = Vec::with_capacity(max_iters);
    let mut betas: Vec<f64> = Vec::with_capacity(max_iters);
    // Bidiagonal block boundaries: a restart after breakdown starts a fresh
    // block, so the small matrix stays block-bidiagonal with zero coupling.
    let mut scale = 0.0f64;

    let mut q = {
        let mut q0 = draw(n);
        let nrm = q0.norm();
        q0 /= nrm;
        q0
    };

    let mut fresh_block = true;
    let mut alpha_breakdowns = 0usize;
    while alphas.len() < max_iters {
        let j = alphas.len();
        qs.push(q.clone());
        let mut p = op.apply(&q);
        if !fresh_block && j > 0 {
            let beta_prev = betas[j - 1];
            p.axpy(-beta_prev, &ps[j - 1], 1.0);
        }
        orthogonalize_against(&mut p, &ps);
        let alpha = p.norm();
        scale = scale.max(alpha);
        let breakdown = scale.max(1e-300) * 1e-13;
        if alpha <= breakdown {
            // Left side exhausted for this start; restart with a fresh
            // vector orthogonal to the right basis. Repeated failures mean
            // the operator range is exhausted.
            alphas.push(0.0);
            betas.push(0.0);
            ps.push(DVector::zeros(m));
            alpha_breakdowns += 1;
            if alpha_breakdowns > 3 || !restart(&mut q, &mut draw, &qs) {
                break;
            }
            fresh_block = true;
            continue;
        }
        p /= alpha;
        ps.push(p.clone());
        alphas.push(alpha);

        let mut next_q = op.apply_transpose(&p);
        next_q.axpy(-alpha, &q, 1.0);
        orthogonalize_against(&mut next_q, &qs);
        let beta = next_q.norm();
        if beta <= breakdown {
            betas.push(0.0);
            if converged(&alphas, &betas, l, opts.tol).unwrap_or(false)
                || !restart(&mut q, &mut draw, &qs)
            {
                break;
            }
            fresh_block = true;
            continue;
        }
        next_q /= beta;
        betas.push(beta);
        q = next_q;
        fresh_block = false;

        if alphas.len() >= l {
            if let Some(true) = converged(&alphas, &betas, l, opts.tol) {
                break;
            }
        }
    }

    ritz_triplets(op, &qs, &ps, &alphas, &betas, l)
}

fn restart(
    q: &mut DVector<f64>,
    draw: &mut impl FnMut(usize) -> DVector<f64>,
    qs: &[DVector<f64>],
) -> bool {
    for _ in 0..3 {
        let mut cand = draw(q.len());
        orthogonalize_against(&mut cand, qs);
        let nrm = cand.norm();
        if nrm > 1e-8 {
            *q = cand / nrm;
            return true;
        }
    }
    false
}

fn small_bidiagonal(alphas: &[f64], betas: &[f64]) -> DMatrix<f64> {
    let j = alphas.len();
    let mut b = DMatrix::zeros(j, j);
    for i in 0..j {
        b[(i, i)] = alphas[i];
        if i + 1 < j && betas[i] != 0.0 {
            b[(i, i + 1)] = betas[i];
        }
    }
    b
}

fn converged(alphas: &[f64], betas: &[f64], l: usize, tol: f64) -> Option<bool> {
    let j = alphas.len();
    if j < l {
        return Some(false);
    }
    let b = small_bidiagonal(alphas, betas);
    let svd = b.svd(true, false);
    let u = svd.u.as_ref()?;
    let sig = &svd.singular_values;
    let top = sig[0].max(1e-300);
    let beta_last = *betas.last().unwrap_or(&0.0);
    let want = l.min(j);
    let ok = (0..want).all(|i| (beta_last * u[(j - 1, i)]).abs() <= tol * top);
    Some(ok)
}

fn ritz_triplets(
    op: &dyn LinOp,
    qs: &[DVector<f64>],
    ps: &[DVector<f64>],
    alphas: &[f64],
    betas: &[f64],
    l: usize,
) -> Tsvd {
    let (m, n) = (op.nrows(), op.ncols());
    let j = alphas.len();
    if j == 0 {
        return Tsvd::empty(m, n);
    }
    let b = small_bidiagonal(alphas, betas);
    let svd = b.svd(true, true);
    let ub = svd.u.expect("svd with u");
    let vbt = svd.v_t.expect("svd with v_t");
    let keep = l
        .min(j)
        .min(svd.singular_values.iter().filter(|&&s| s > 0.0).count());
    let mut u = DMatrix::zeros(m, keep);
    let mut v = DMatrix::zeros(n, keep);
    for c in 0..keep {
        let mut ucol = DVector::zeros(m);
        let mut vcol = DVector::zeros(n);
        for (row, p) in ps.iter().enumerate() {
            ucol.axpy(ub[(row, c)], p, 1.0);
        }
        for (row, qv) in qs.iter().enumerate().take(j) {
            vcol.axpy(vbt[(c, row)], qv, 1.0);
        }
        // Restart blocks leave exact zero columns in ps; renormalize to keep
        // the Ritz vectors orthonormal.
        let un = ucol.norm();
        if un > 0.0 {
            ucol /= un;
        }
        let vn = vcol.norm();
        if vn > 0.0 {
            vcol /= vn;
        }
        u.set_column(c, &ucol);
        v.set_column(c, &vcol);
    }
    let mut sigma = svd.singular_values.rows(0, keep).into_owned();
    // Tiny Ritz values whose vectors vanished entirely carry no information.
    let mut valid = keep;
    for c in 0..keep {
        if u.column(c).norm() == 0.0 || v.column(c).norm() == 0.0 {
            valid = c;
            break;
        }
    }
    if valid < keep {
        u = u.columns(0, valid).into_owned();
        v = v.columns(0, valid).into_owned();
        sigma = sigma.rows(0, valid).into_owned();
    }
    canonicalize_signs(&mut u, &mut v);
    Tsvd { u, sigma, v }
}
