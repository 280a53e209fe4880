//! Riemannian gradient descent with alternating Barzilai–Borwein trial steps
//! and Zhang–Hager non-monotone backtracking on the fixed-rank manifold.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{gradient_from_residual, retract, transport};
use crate::lowrank::{LowRankMatrix, TangentVector};
use crate::sampled::{objective_of_residual, residual, SampledMatrix, SparseResidual};

/// Parameters of the non-monotone Barzilai–Borwein iteration.
#[derive(Debug, Clone)]
pub struct RbbConfig {
    /// Sufficient-decrease constant β ∈ (0, 1).
    pub beta: f64,
    /// Backtracking shrink δ ∈ (0, 1).
    pub delta: f64,
    /// Averaging weight θ ∈ [0, 1] of the non-monotone reference value.
    pub theta: f64,
    /// Lower clamp on the trial step.
    pub gamma_min: f64,
    /// Upper clamp on the trial step.
    pub gamma_max: f64,
    /// Trial step of the first iteration.
    pub gamma0: f64,
    /// Maximum number of accepted iterations.
    pub j_max: usize,
    /// Relative-gradient stopping tolerance.
    pub eps_g: f64,
    /// Relative-residual stopping tolerance.
    pub eps_omega: f64,
    /// Relative-change stopping tolerance.
    pub eps_f: f64,
    /// Maximum backtracking halvings per line search.
    pub h_max: usize,
    /// Optional wall-clock budget, checked between iterations.
    pub budget: Option<Duration>,
}

impl Default for RbbConfig {
    fn default() -> Self {
        RbbConfig {
            beta: 1e-4,
            delta: 0.5,
            theta: 0.85,
            gamma_min: 1e-10,
            gamma_max: 1e10,
            gamma0: 1e-2,
            j_max: 100,
            eps_g: 1e-12,
            eps_omega: 1e-12,
            eps_f: 1e-4,
            h_max: 25,
            budget: None,
        }
    }
}

impl RbbConfig {
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(msg.to_string()))
            }
        }
        check(self.beta > 0.0 && self.beta < 1.0, "beta must lie in (0,1)")?;
        check(self.delta > 0.0 && self.delta < 1.0, "delta must lie in (0,1)")?;
        check((0.0..=1.0).contains(&self.theta), "theta must lie in [0,1]")?;
        check(
            self.gamma_min > 0.0 && self.gamma_min < self.gamma_max,
            "require 0 < gamma_min < gamma_max",
        )?;
        check(self.gamma0 > 0.0, "gamma0 must be positive")?;
        check(self.eps_g >= 0.0 && self.eps_omega >= 0.0 && self.eps_f >= 0.0, "tolerances must be nonnegative")?;
        Ok(())
    }
}

/// Why a fixed-rank solve stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIterations,
    RelGradient,
    RelResidual,
    RelChange,
    LineSearchFailed,
    Budget,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StopReason::MaxIterations => "max-iterations",
            StopReason::RelGradient => "rel-gradient",
            StopReason::RelResidual => "rel-residual",
            StopReason::RelChange => "rel-change",
            StopReason::LineSearchFailed => "line-search-failed",
            StopReason::Budget => "budget",
        };
        f.write_str(s)
    }
}

/// One accepted iterate.
///
/// `step` and `backtracks` describe the line search that produced the
/// iterate (zero for the initial point); `c` and `q` are the Zhang–Hager
/// reference value and averaging accumulator after the update at this
/// iterate, so the acceptance inequality of row j+1 can be recomputed from
/// rows j and j+1.
#[derive(Debug, Clone, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub time_s: f64,
    pub f: f64,
    pub rel_grad: f64,
    pub rel_res: f64,
    pub rel_change: Option<f64>,
    pub rank: usize,
    pub step: f64,
    pub backtracks: usize,
    pub grad_norm: f64,
    pub c: f64,
    pub q: f64,
}

/// Per-iteration records of one solve plus the stop reason.
#[derive(Debug, Clone, Serialize)]
pub struct SolveTrace {
    pub records: Vec<IterRecord>,
    pub reason: StopReason,
    pub wall_time_s: f64,
}

impl SolveTrace {
    pub fn last(&self) -> &IterRecord {
        self.records.last().expect("trace has at least the initial record")
    }

    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

/// Observer hooks invoked on every accepted iterate during a solve.
pub trait SolveObserver {
    fn on_iterate(&mut self, x: &LowRankMatrix, record: &IterRecord);
}

/// No-op observer.
pub struct NoObserver;

impl SolveObserver for NoObserver {
    fn on_iterate(&mut self, _x: &LowRankMatrix, _record: &IterRecord) {}
}

/// Alternating Barzilai–Borwein trial step from the transported differences.
///
/// Odd iterations use ⟨S,S⟩ / |⟨S,K⟩|, even ones |⟨S,K⟩| / ⟨K,K⟩, both
/// clamped to [γ_min, γ_max]. Degenerate denominators fall back to the
/// previous accepted step, then to γ₀.
pub fn bb_stepsize(
    s_diff: &TangentVector,
    k_diff: &TangentVector,
    j: usize,
    prev_step: Option<f64>,
    cfg: &RbbConfig,
) -> f64 {
    let sk = s_diff.inner(k_diff).abs();
    let raw = if j % 2 == 1 {
        let ss = s_diff.inner(s_diff);
        if sk > 0.0 { ss / sk } else { f64::NAN }
    } else {
        let kk = k_diff.inner(k_diff);
        if kk > 0.0 { sk / kk } else { f64::NAN }
    };
    let fallback = prev_step.filter(|t| t.is_finite() && *t > 0.0).unwrap_or(cfg.gamma0);
    let gamma = if raw.is_finite() && raw > 0.0 { raw } else { fallback };
    gamma.clamp(cfg.gamma_min, cfg.gamma_max)
}

/// Result of one non-monotone backtracking search.
pub struct SearchOutcome {
    pub t: f64,
    pub x_next: Arc<LowRankMatrix>,
    pub res_next: SparseResidual,
    pub f_next: f64,
    pub backtracks: usize,
}

/// Finds the smallest h ≤ h_max with
/// f(retract(X, γδʰ, Z)) ≤ c + β·γδʰ·⟨grad, Z⟩, where Z = −grad.
pub fn nonmonotone_search(
    problem: &SampledMatrix,
    x: &LowRankMatrix,
    z: &TangentVector,
    grad_dot_z: f64,
    c_ref: f64,
    gamma: f64,
    cfg: &RbbConfig,
) -> Result<SearchOutcome> {
    let mut t = gamma;
    for h in 0..=cfg.h_max {
        let x_try = retract(x, t, z)?;
        let res_try = residual(problem, &x_try)?;
        let f_try = objective_of_residual(&res_try);
        if f_try <= c_ref + cfg.beta * t * grad_dot_z {
            return Ok(SearchOutcome {
                t,
                x_next: Arc::new(x_try),
                res_next: res_try,
                f_next: f_try,
                backtracks: h,
            });
        }
        t *= cfg.delta;
    }
    Err(Error::invalid(format!(
        "line search exhausted {} backtracking steps",
        cfg.h_max
    )))
}

/// Runs the fixed-rank solve from `x0`.
pub fn rbb_solve(
    problem: &SampledMatrix,
    x0: Arc<LowRankMatrix>,
    cfg: &RbbConfig,
) -> Result<(Arc<LowRankMatrix>, SolveTrace)> {
    rbb_solve_observed(problem, x0, cfg, &mut NoObserver)
}

/// Same as [`rbb_solve`] with per-iterate observer callbacks.
pub fn rbb_solve_observed(
    problem: &SampledMatrix,
    x0: Arc<LowRankMatrix>,
    cfg: &RbbConfig,
    observer: &mut dyn SolveObserver,
) -> Result<(Arc<LowRankMatrix>, SolveTrace)> {
    cfg.validate()?;
    let start = Instant::now();
    let a_norm = problem.norm();
    if a_norm == 0.0 {
        return Err(Error::invalid("observed data is identically zero"));
    }

    let mut x = x0;
    let mut res = residual(problem, &x)?;
    let mut f = objective_of_residual(&res);
    let mut grad = gradient_from_residual(&res, &x)?;
    let mut grad_norm = grad.norm();
    let mut c = f;
    let mut q = 1.0;
    let mut records = Vec::with_capacity(cfg.j_max + 1);

    let rel_res = res.norm() / a_norm;
    let rel_grad = grad_norm / x.frobenius_norm().max(1.0);
    let rec0 = IterRecord {
        iter: 0,
        time_s: start.elapsed().as_secs_f64(),
        f,
        rel_grad,
        rel_res,
        rel_change: None,
        rank: x.rank(),
        step: 0.0,
        backtracks: 0,
        grad_norm,
        c,
        q,
    };
    observer.on_iterate(&x, &rec0);
    records.push(rec0);

    let finish = |records: Vec<IterRecord>, reason: StopReason, x: Arc<LowRankMatrix>| {
        let wall = start.elapsed().as_secs_f64();
        Ok((x, SolveTrace { records, reason, wall_time_s: wall }))
    };

    if rel_res < cfg.eps_omega {
        return finish(records, StopReason::RelResidual, x);
    }
    if rel_grad < cfg.eps_g {
        return finish(records, StopReason::RelGradient, x);
    }

    let mut z = grad.scale(-1.0);
    let mut z_prev: Option<TangentVector> = None;
    let mut t_prev: Option<f64> = None;

    for j in 0..cfg.j_max {
        if let Some(budget) = cfg.budget {
            if start.elapsed() >= budget {
                return finish(records, StopReason::Budget, x);
            }
        }
        let gamma = match (&z_prev, t_prev) {
            (Some(zp), Some(tp)) if zp.base().rank() == x.rank() => {
                // S = t_{j−1}·T(Z_{j−1}), K = T(Z_{j−1}) − Z_j.
                let tz = transport(&x, zp)?;
                let s_diff = tz.scale(tp);
                let k_diff = tz.sub(&z);
                bb_stepsize(&s_diff, &k_diff, j, t_prev, cfg)
            }
            _ => cfg.gamma0.clamp(cfg.gamma_min, cfg.gamma_max),
        };

        let grad_dot_z = -grad_norm * grad_norm;
        let out = match nonmonotone_search(problem, &x, &z, grad_dot_z, c, gamma, cfg) {
            Ok(out) => out,
            Err(Error::Invalid(_)) => {
                return finish(records, StopReason::LineSearchFailed, x);
            }
            Err(e) => return Err(e),
        };

        let rank_changed = out.x_next.rank() != x.rank();
        let rel_change = (1.0 - out.res_next.norm() / res.norm()).abs();
        let rel_res = out.res_next.norm() / a_norm;

        // q_{j+1} = θ q_j + 1, c_{j+1} = (θ q_j c_j + f_{j+1}) / q_{j+1};
        // after the q update, θ q_j is exactly q_{j+1} − 1.
        q = cfg.theta * q + 1.0;
        c = ((q - 1.0) * c + out.f_next) / q;

        z_prev = if rank_changed { None } else { Some(z.clone()) };
        t_prev = Some(out.t);
        x = out.x_next;
        res = out.res_next;
        f = out.f_next;
        grad = gradient_from_residual(&res, &x)?;
        grad_norm = grad.norm();
        z = grad.scale(-1.0);

        let rel_grad = grad_norm / x.frobenius_norm().max(1.0);
        let rec = IterRecord {
            iter: j + 1,
            time_s: start.elapsed().as_secs_f64(),
            f,
            rel_grad,
            rel_res,
            rel_change: Some(rel_change),
            rank: x.rank(),
            step: out.t,
            backtracks: out.backtracks,
            grad_norm,
            c,
            q,
        };
        observer.on_iterate(&x, &rec);
        records.push(rec);

        if rel_grad < cfg.eps_g {
            return finish(records, StopReason::RelGradient, x);
        }
        if rel_res < cfg.eps_omega {
            return finish(records, StopReason::RelResidual, x);
        }
        if rel_change < cfg.eps_f {
            return finish(records, StopReason::RelChange, x);
        }
    }
    finish(records, StopReason::MaxIterations, x)
}
