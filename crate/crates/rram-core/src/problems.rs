//! Synthetic completion problems, initialization, and evaluation metrics.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::riemannian_gradient;
use crate::lowrank::LowRankMatrix;
use crate::rng::{stream_rng, Stream};
use crate::sampled::{residual, SampledMatrix};
use crate::tsvd::{truncated_svd, TsvdOptions};

/// Ground-truth data model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// A = LRᵀ with i.i.d. standard normal factors.
    Gaussian,
    /// A = U diag(1, 10⁻¹, …, 10⁻ʳ⁺¹) Vᵀ with orthonormal U, V.
    IllConditioned,
}

/// Specification of a synthetic problem instance.
#[derive(Debug, Clone, Serialize)]
pub struct SyntheticSpec {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    /// Oversampling rate: |Ω| / ((m + n − r)·r), must exceed 1.
    pub os: f64,
    pub kind: SyntheticKind,
    pub seed: u64,
    /// Bernoulli-per-entry sampling with matching expected size, instead of
    /// the default fixed-size sampling without replacement.
    pub bernoulli: bool,
}

impl SyntheticSpec {
    pub fn sample_count(&self) -> usize {
        (self.os * ((self.m + self.n - self.r) * self.r) as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.r > self.m.min(self.n) {
            return Err(Error::invalid("rank r must lie in 1..=min(m,n)"));
        }
        if !(self.os > 1.0) {
            return Err(Error::invalid("oversampling rate must exceed 1"));
        }
        if self.sample_count() > self.m * self.n {
            return Err(Error::invalid(format!(
                "requested {} samples exceed the {} entries available",
                self.sample_count(),
                self.m * self.n
            )));
        }
        Ok(())
    }
}

/// Factors of the generating matrix, A = left · rightᵀ.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

impl GroundTruth {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.left.ncols() {
            acc += self.left[(i, c)] * self.right[(j, c)];
        }
        acc
    }
}

fn sample_positions(spec: &SyntheticSpec) -> Vec<(usize, usize)> {
    let mut rng = stream_rng(spec.seed, Stream::Sampling);
    if spec.bernoulli {
        let p = spec.sample_count() as f64 / (spec.m * spec.n) as f64;
        let mut out = Vec::new();
        for i in 0..spec.m {
            for j in 0..spec.n {
                if rng.random::<f64>() < p {
                    out.push((i, j));
                }
            }
        }
        out
    } else {
        // Fixed-size uniform sampling without replacement over the flat
        // index space; `sample` is rejection-free at any density.
        sample(&mut rng, spec.m * spec.n, spec.sample_count())
            .into_iter()
            .map(|flat| (flat / spec.n, flat % spec.n))
            .collect()
    }
}

fn observe(spec: &SyntheticSpec, truth: &GroundTruth) -> Result<SampledMatrix> {
    let entries: Vec<(usize, usize, f64)> = sample_positions(spec)
        .into_iter()
        .map(|(i, j)| (i, j, truth.entry(i, j)))
        .collect();
    SampledMatrix::new(spec.m, spec.n, entries)
}

/// Gaussian-factor instance: A = LRᵀ, sampled uniformly without replacement.
pub fn gen_gaussian(spec: &SyntheticSpec) -> Result<(SampledMatrix, GroundTruth)> {
    if spec.kind != SyntheticKind::Gaussian {
        return Err(Error::invalid("spec kind is not gaussian"));
    }
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Factors);
    let left = DMatrix::from_fn(spec.m, spec.r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let right = DMatrix::from_fn(spec.n, spec.r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let truth = GroundTruth { left, right };
    let problem = observe(spec, &truth)?;
    Ok((problem, truth))
}

/// Ill-conditioned instance with singular values exactly 10⁰, 10⁻¹, …,
/// 10⁻ʳ⁺¹ on orthonormal factors.
pub fn gen_illconditioned(spec: &SyntheticSpec) -> Result<(SampledMatrix, GroundTruth)> {
    if spec.kind != SyntheticKind::IllConditioned {
        return Err(Error::invalid("spec kind is not ill-conditioned"));
    }
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Factors);
    let gu = DMatrix::from_fn(spec.m, spec.r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let gv = DMatrix::from_fn(spec.n, spec.r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = gu.qr().q();
    let v = gv.qr().q();
    let mut left = u;
    for c in 0..spec.r {
        let sv = 10f64.powi(-(c as i32));
        left.column_mut(c).scale_mut(sv);
    }
    let truth = GroundTruth { left, right: v };
    let problem = observe(spec, &truth)?;
    Ok((problem, truth))
}

/// Generates a problem according to the spec kind.
pub fn generate(spec: &SyntheticSpec) -> Result<(SampledMatrix, GroundTruth)> {
    match spec.kind {
        SyntheticKind::Gaussian => gen_gaussian(spec),
        SyntheticKind::IllConditioned => gen_illconditioned(spec),
    }
}

/// Initial point: best rank-k approximation of the zero-filled observations.
///
/// May return rank below k when the observation matrix has smaller numerical
/// rank; singular values under 1e-14 of the largest are dropped.
pub fn initial_point(problem: &SampledMatrix, k: usize, opts: &TsvdOptions) -> Result<LowRankMatrix> {
    if k == 0 || k > problem.m().min(problem.n()) {
        return Err(Error::invalid(format!(
            "initial rank {k} outside 1..=min(m,n)"
        )));
    }
    if problem.norm() == 0.0 {
        return Err(Error::invalid("all observed entries are zero"));
    }
    // The initialization truncated SVD is computed once per run; a larger
    // iteration allowance than the inner-loop default buys accurate bulk
    // singular values for the first gap test.
    let mut opts = opts.clone();
    opts.max_iters = Some(opts.max_iters.unwrap_or(4 * k + 20).max(6 * k + 40));
    let t = truncated_svd(problem, k, &opts);
    let floor = t.sigma.max() * 1e-14;
    let keep = t.sigma.iter().filter(|&&sv| sv > floor).count();
    if keep == 0 {
        return Err(Error::invalid("observation matrix is numerically zero"));
    }
    let t = t.take(keep);
    Ok(LowRankMatrix::from_trusted(t.u, t.sigma, t.v))
}

/// Random rank-k point: orthonormalized Gaussian factors, unit spectrum.
pub fn random_point(m: usize, n: usize, k: usize, seed: u64) -> Result<LowRankMatrix> {
    if k == 0 || k > m.min(n) {
        return Err(Error::invalid(format!("rank {k} outside 1..=min(m,n)")));
    }
    let mut rng = stream_rng(seed, Stream::InitPoint);
    let gu = DMatrix::from_fn(m, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let gv = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    LowRankMatrix::new(gu.qr().q(), DVector::from_element(k, 1.0), gv.qr().q())
}

/// The three per-iterate progress measures.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProgressMetrics {
    /// ‖grad f(X)‖ / max(1, ‖X‖).
    pub rel_gradient: f64,
    /// ‖P_Ω(X − A)‖ / ‖P_Ω(A)‖.
    pub rel_residual: f64,
    /// |1 − ‖P_Ω(X − A)‖ / ‖P_Ω(X_prev − A)‖|, when a previous point exists.
    pub rel_change: Option<f64>,
}

/// Evaluates the progress measures at `x` (and `x_prev` when given).
pub fn metrics(
    problem: &SampledMatrix,
    x: &Arc<LowRankMatrix>,
    x_prev: Option<&LowRankMatrix>,
) -> Result<ProgressMetrics> {
    let a_norm = problem.norm();
    if a_norm == 0.0 {
        return Err(Error::invalid("observed data is identically zero"));
    }
    let res = residual(problem, x)?;
    let grad = riemannian_gradient(problem, x)?;
    let rel_gradient = grad.norm() / x.frobenius_norm().max(1.0);
    let rel_residual = res.norm() / a_norm;
    let rel_change = match x_prev {
        Some(prev) => {
            let res_prev = residual(problem, prev)?;
            Some((1.0 - res.norm() / res_prev.norm()).abs())
        }
        None => None,
    };
    Ok(ProgressMetrics {
        rel_gradient,
        rel_residual,
        rel_change,
    })
}

/// Root mean squared error of the factored predictions over a test set.
pub fn rmse(x: &LowRankMatrix, test: &SampledMatrix) -> Result<f64> {
    rmse_impl(x, test, None)
}

/// RMSE with predictions clipped into `[lo, hi]` first (rating data).
pub fn rmse_clipped(x: &LowRankMatrix, test: &SampledMatrix, lo: f64, hi: f64) -> Result<f64> {
    rmse_impl(x, test, Some((lo, hi)))
}

fn rmse_impl(x: &LowRankMatrix, test: &SampledMatrix, clip: Option<(f64, f64)>) -> Result<f64> {
    if x.nrows() != test.m() || x.ncols() != test.n() {
        return Err(Error::shape(format!(
            "predictions are {}x{}, test set is {}x{}",
            x.nrows(),
            x.ncols(),
            test.m(),
            test.n()
        )));
    }
    let ust = x.u_scaled_transposed();
    let vt = x.v().transpose();
    let s = x.rank();
    let mut acc = 0.0;
    for (i, j, a) in test.iter() {
        let col_u = ust.column(i);
        let col_v = vt.column(j);
        let mut pred = 0.0;
        for c in 0..s {
            pred += col_u[c] * col_v[c];
        }
        if let Some((lo, hi)) = clip {
            pred = pred.clamp(lo, hi);
        }
        let err = pred - a;
        acc += err * err;
    }
    Ok((acc / test.nnz() as f64).sqrt())
}
