//! Dense reference computations for the oracle suites.
//!
//! Everything here works on explicit dense matrices with naive formulas and
//! explicitly materialized orthonormal complements, independent of the
//! factored kernels under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

use rram_core::{LowRankMatrix, SampledMatrix};

pub fn assert_close(a: f64, b: f64, tol: f64, ctx: &str) {
    let scale = 1.0f64.max(a.abs()).max(b.abs());
    assert!(
        (a - b).abs() <= tol * scale,
        "{ctx}: {a} vs {b} (tol {tol})"
    );
}

pub fn assert_mat_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64, ctx: &str) {
    let scale = 1.0f64.max(a.norm()).max(b.norm());
    let diff = (a - b).norm();
    assert!(diff <= tol * scale, "{ctx}: |diff| = {diff:.3e} (tol {tol})");
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn_matrix(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random rank-s point with singular values in [1, 2].
///
/// The spectrum is jittered around an even grid so consecutive values stay
/// separated: singular vectors of near-tied values are resolved poorly by
/// any SVD, which would turn cross-route reconstruction comparisons into
/// noise.
pub fn random_point(m: usize, n: usize, s: usize, seed: u64) -> Arc<LowRankMatrix> {
    let mut r = rng(seed);
    let u = randn_matrix(m, s, &mut r).qr().q();
    let v = randn_matrix(n, s, &mut r).qr().q();
    let spacing = 1.0 / s as f64;
    let sigma: Vec<f64> = (0..s)
        .map(|i| 2.0 - i as f64 * spacing + (r.random::<f64>() - 0.5) * 0.4 * spacing)
        .collect();
    Arc::new(LowRankMatrix::new(u, DVector::from_vec(sigma), v).unwrap())
}

/// Dense X from the factors by a naive triple loop.
pub fn densify_point(x: &LowRankMatrix) -> DMatrix<f64> {
    let (m, n, s) = (x.nrows(), x.ncols(), x.rank());
    let mut out = DMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for c in 0..s {
                acc += x.u()[(i, c)] * x.sigma()[c] * x.v()[(j, c)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Dense zero-filled observation matrix.
pub fn densify_sampled(p: &SampledMatrix) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(p.m(), p.n());
    for (i, j, v) in p.iter() {
        out[(i, j)] = v;
    }
    out
}

/// 0/1 mask of the observed set.
pub fn mask_of(p: &SampledMatrix) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(p.m(), p.n());
    for (i, j, _) in p.iter() {
        out[(i, j)] = 1.0;
    }
    out
}

/// Entrywise product with the observation mask.
pub fn apply_mask(mask: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| mask[(i, j)] * z[(i, j)])
}

/// Dense residual P_Ω(X − A).
pub fn dense_residual(p: &SampledMatrix, x: &LowRankMatrix) -> DMatrix<f64> {
    let mask = mask_of(p);
    apply_mask(&mask, &(densify_point(x) - densify_sampled(p)))
}

/// Dense objective ½‖P_Ω(X − A)‖²_F.
pub fn dense_objective(p: &SampledMatrix, x: &LowRankMatrix) -> f64 {
    0.5 * dense_residual(p, x).norm_squared()
}

/// Explicit orthonormal complement of a column-orthonormal q: the first
/// m − s columns of a column-pivoted QR of I − qqᵀ.
pub fn orthonormal_complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let m = q.nrows();
    let s = q.ncols();
    let proj = DMatrix::<f64>::identity(m, m) - q * q.transpose();
    let cpqr = proj.col_piv_qr();
    cpqr.q().columns(0, m - s).into_owned()
}

/// Dense tangent projection via explicitly computed complements:
/// P_U Z P_V + P_U⊥ Z P_V + P_U Z P_V⊥.
pub fn dense_project_tangent(x: &LowRankMatrix, z: &DMatrix<f64>) -> DMatrix<f64> {
    let u = x.u();
    let v = x.v();
    let u_perp = orthonormal_complement(u);
    let v_perp = orthonormal_complement(v);
    let pu = u * u.transpose();
    let pv = v * v.transpose();
    let pu_perp = &u_perp * u_perp.transpose();
    let pv_perp = &v_perp * v_perp.transpose();
    &pu * z * &pv + pu_perp * z * &pv + pu * z * pv_perp
}

/// Dense normal projection U⊥U⊥ᵀ Z V⊥V⊥ᵀ with explicit complements.
pub fn dense_project_normal(x: &LowRankMatrix, z: &DMatrix<f64>) -> DMatrix<f64> {
    let u_perp = orthonormal_complement(x.u());
    let v_perp = orthonormal_complement(x.v());
    &u_perp * u_perp.transpose() * z * &v_perp * v_perp.transpose()
}

/// Dense best rank-r approximation.
pub fn dense_truncation(a: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for c in 0..r.min(svd.singular_values.len()) {
        out += svd.singular_values[c] * u.column(c) * vt.row(c);
    }
    out
}

/// Descending singular values of a dense matrix.
pub fn dense_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    a.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Uniform random Ω of given size with values from a dense matrix.
pub fn sample_entries(
    dense: &DMatrix<f64>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> SampledMatrix {
    let (m, n) = (dense.nrows(), dense.ncols());
    let chosen = rand::seq::index::sample(rng, m * n, count);
    let entries: Vec<_> = chosen
        .into_iter()
        .map(|flat| {
            let (i, j) = (flat / n, flat % n);
            (i, j, dense[(i, j)])
        })
        .collect();
    SampledMatrix::new(m, n, entries).unwrap()
}

/// Golden-section minimizer of a unimodal scalar function on [lo, hi].
pub fn golden_section_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
