//! Rank-adaptive driver: singular-gap rank reduction, fixed-rank solves,
//! and normal-correction rank increase on the bounded-rank variety.
//!
//! One outer cycle runs the fixed-rank solver, then either reduces the rank
//! when the iterate's spectrum shows a large relative gap, or increases it
//! when the normal component of the antigradient dominates the Riemannian
//! gradient, or stops.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    normal_topl_from_residual, riemannian_gradient, NormalCorrection, NormalTopl,
};
use crate::lowrank::LowRankMatrix;
use crate::rbb::{rbb_solve_observed, IterRecord, NoObserver, RbbConfig, SolveObserver, SolveTrace, StopReason};
use crate::sampled::{
    dot_sampled_factored, objective_of_residual, residual, sampled_factored_norm2, SampledMatrix,
    SparseResidual,
};
use crate::tsvd::TsvdOptions;

/// Rank-reduction rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReductionRule {
    /// Largest relative gap (σᵢ − σᵢ₊₁)/σᵢ > Δ; the default.
    RelativeGap,
    /// Comparison mode: drop singular values below Δ·σ₁.
    AbsoluteThreshold,
}

/// Parameters of the rank-adaptive driver.
#[derive(Debug, Clone)]
pub struct AdaptConfig {
    /// Rank upper bound k.
    pub k: usize,
    /// Rank-increase test factor ε: increase when ‖N‖ > ε‖G_s‖.
    pub eps_increase: f64,
    /// Rank increase number l.
    pub l: usize,
    /// Gap-detection threshold Δ ∈ (0, 1).
    pub delta_gap: f64,
    /// Cap on outer cycles.
    pub max_outer: usize,
    /// Fixed-rank solver parameters.
    pub inner: RbbConfig,
    /// Truncated-SVD routing for the normal component.
    pub tsvd: TsvdOptions,
    /// The increase-test norm uses at most this many normal triplets; when
    /// k − s exceeds it the computed norm is a lower bound, which only makes
    /// the test more conservative.
    pub test_rank_cap: usize,
    /// Reduction rule; `RelativeGap` unless comparing against the
    /// threshold-based variant.
    pub reduction: ReductionRule,
    /// Optional wall-clock budget for the whole adaptive solve.
    pub budget: Option<Duration>,
}

impl AdaptConfig {
    pub fn new(k: usize) -> Self {
        AdaptConfig {
            k,
            eps_increase: 10.0,
            l: 1,
            delta_gap: 0.1,
            max_outer: 50,
            inner: RbbConfig::default(),
            tsvd: TsvdOptions::default(),
            test_rank_cap: 10,
            reduction: ReductionRule::RelativeGap,
            budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("rank bound k must be positive"));
        }
        if self.l == 0 || self.l > self.k {
            return Err(Error::invalid("rank increase number l must lie in 1..=k"));
        }
        if !(self.delta_gap > 0.0 && self.delta_gap < 1.0) {
            return Err(Error::invalid("delta must lie in (0,1)"));
        }
        if !(self.eps_increase > 0.0) {
            return Err(Error::invalid("eps_increase must be positive"));
        }
        self.inner.validate()
    }
}

/// Kind of outer-cycle event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankEventKind {
    Reduce,
    Increase,
    InnerSolve,
}

impl std::fmt::Display for RankEventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RankEventKind::Reduce => "reduce",
            RankEventKind::Increase => "increase",
            RankEventKind::InnerSolve => "inner-solve",
        };
        f.write_str(s)
    }
}

/// One outer-cycle event with the norms known at that point.
#[derive(Debug, Clone, Serialize)]
pub struct RankEvent {
    pub cycle: usize,
    /// Global iteration count when the event fired.
    pub iter: usize,
    pub kind: RankEventKind,
    pub rank_before: usize,
    pub rank_after: usize,
    pub f: f64,
    pub norm_gs: Option<f64>,
    pub norm_n: Option<f64>,
}

/// Sequence of outer-cycle events.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RankTrace {
    pub events: Vec<RankEvent>,
}

impl RankTrace {
    pub fn reductions(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind == RankEventKind::Reduce)
            .count()
    }

    pub fn increases(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind == RankEventKind::Increase)
            .count()
    }
}

/// Why the adaptive driver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptStopReason {
    RelResidual,
    RelGradient,
    /// Relative change below tolerance across two consecutive outer cycles.
    RelChangeOuter,
    /// The correction direction vanishes on the observed set.
    StationaryOnObserved,
    MaxOuter,
    Budget,
    LineSearchFailed,
}

impl std::fmt::Display for AdaptStopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AdaptStopReason::RelResidual => "rel-residual",
            AdaptStopReason::RelGradient => "rel-gradient",
            AdaptStopReason::RelChangeOuter => "rel-change-outer",
            AdaptStopReason::StationaryOnObserved => "stationary-on-observed",
            AdaptStopReason::MaxOuter => "max-outer",
            AdaptStopReason::Budget => "budget",
            AdaptStopReason::LineSearchFailed => "line-search-failed",
        };
        f.write_str(s)
    }
}

/// Result of an adaptive solve.
#[derive(Debug)]
pub struct AdaptiveOutcome {
    pub x: Arc<LowRankMatrix>,
    pub solve_trace: SolveTrace,
    pub rank_trace: RankTrace,
    pub reason: AdaptStopReason,
}

/// Observer hooks for adaptive solves: inner iterates plus rank events.
pub trait AdaptiveObserver {
    fn on_iterate(&mut self, x: &LowRankMatrix, record: &IterRecord);
    fn on_rank_event(&mut self, _x: &LowRankMatrix, _event: &RankEvent) {}
}

impl AdaptiveObserver for NoObserver {
    fn on_iterate(&mut self, _x: &LowRankMatrix, _record: &IterRecord) {}
}

struct InnerBridge<'a>(&'a mut dyn AdaptiveObserver);

impl SolveObserver for InnerBridge<'_> {
    fn on_iterate(&mut self, x: &LowRankMatrix, record: &IterRecord) {
        self.0.on_iterate(x, record);
    }
}

/// Finds the 1-based index r̃ after which the spectrum is cut.
///
/// Returns s when no relative gap (σᵢ − σᵢ₊₁)/σᵢ exceeds Δ, otherwise the
/// index maximizing the gap; ties go to the smallest index.
pub fn detect_gap(sigma: &[f64], delta: f64) -> Result<usize> {
    if sigma.is_empty() {
        return Err(Error::invalid("empty spectrum"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta must lie in (0,1)"));
    }
    let s = sigma.len();
    let mut best_idx = s;
    let mut best_gap = delta;
    for i in 0..s - 1 {
        let gap = (sigma[i] - sigma[i + 1]) / sigma[i];
        if gap > best_gap {
            best_gap = gap;
            best_idx = i + 1;
        }
    }
    Ok(best_idx)
}

/// Reduction index under the σᵢ ≥ Δ·σ₁ comparison rule.
fn detect_threshold(sigma: &[f64], delta: f64) -> usize {
    let cutoff = delta * sigma[0];
    sigma.iter().take_while(|&&sv| sv >= cutoff).count().max(1)
}

/// Truncates the point to the detected index; returns it unchanged when no
/// gap is found.
pub fn reduce_rank(x: &LowRankMatrix, delta: f64) -> Result<LowRankMatrix> {
    reduce_rank_with(x, delta, ReductionRule::RelativeGap)
}

pub fn reduce_rank_with(x: &LowRankMatrix, delta: f64, rule: ReductionRule) -> Result<LowRankMatrix> {
    let sigma: Vec<f64> = x.sigma().iter().copied().collect();
    let r = match rule {
        ReductionRule::RelativeGap => detect_gap(&sigma, delta)?,
        ReductionRule::AbsoluteThreshold => detect_threshold(&sigma, delta),
    };
    if r == x.rank() {
        Ok(x.clone())
    } else {
        x.truncate(r)
    }
}

/// Rank-increase test: true iff s < k and ‖N‖ > ε‖G_s‖.
pub fn should_increase(norm_n: f64, norm_gs: f64, s: usize, k: usize, eps: f64) -> bool {
    s < k && norm_n > eps * norm_gs
}

/// Closed-form minimizer of t ↦ f(X + t·WDYᵀ):
/// α* = −⟨P_Ω(WDYᵀ), P_Ω(X−A)⟩ / ‖P_Ω(WDYᵀ)‖²_F.
pub fn exact_linesearch_alpha(res: &SparseResidual, corr: &NormalCorrection) -> Result<f64> {
    let d: Vec<f64> = corr.d().iter().copied().collect();
    let denom = sampled_factored_norm2(res, corr.w(), &d, corr.y());
    if denom == 0.0 {
        return Err(Error::NoObservableDirection);
    }
    let numer = dot_sampled_factored(res, corr.w(), &d, corr.y());
    Ok(-numer / denom)
}

/// Outcome of a rank-increase attempt.
#[derive(Debug)]
pub enum IncreaseOutcome {
    Increased {
        x: Arc<LowRankMatrix>,
        added: usize,
        alpha: f64,
    },
    /// No usable normal direction: nothing observable to add.
    NoIncrease,
}

/// Normal-correction rank increase: best rank-l normal direction, exact
/// quadratic line search, and direct SVD reassembly of the two factored
/// terms.
pub fn increase_rank(
    problem: &SampledMatrix,
    x: &Arc<LowRankMatrix>,
    l: usize,
    opts: &TsvdOptions,
) -> Result<IncreaseOutcome> {
    let res = residual(problem, x)?;
    let corr = match normal_topl_from_residual(&res, x, l, opts)? {
        NormalTopl::Correction(c) => c,
        NormalTopl::NothingToAdd => return Ok(IncreaseOutcome::NoIncrease),
    };
    increase_from_correction(x, &res, &corr)
}

/// Assembles X + αWDYᵀ from an already computed correction.
pub fn increase_from_correction(
    x: &Arc<LowRankMatrix>,
    res: &SparseResidual,
    corr: &NormalCorrection,
) -> Result<IncreaseOutcome> {
    let alpha = match exact_linesearch_alpha(res, corr) {
        Ok(a) => a,
        Err(Error::NoObservableDirection) => return Ok(IncreaseOutcome::NoIncrease),
        Err(e) => return Err(e),
    };
    if alpha == 0.0 {
        return Ok(IncreaseOutcome::NoIncrease);
    }
    let s = x.rank();
    let lt = corr.rank();
    let m = x.nrows();
    let n = x.ncols();

    // [U W] diag(Σ, αD) [V Y]ᵀ already is an SVD up to column order and the
    // sign of α, which is absorbed into W.
    let mut entries: Vec<(f64, usize)> = Vec::with_capacity(s + lt);
    for i in 0..s {
        entries.push((x.sigma()[i], i));
    }
    for i in 0..lt {
        entries.push((alpha.abs() * corr.d()[i], s + i));
    }
    entries.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

    let sign = if alpha < 0.0 { -1.0 } else { 1.0 };
    let mut u_new = DMatrix::zeros(m, s + lt);
    let mut v_new = DMatrix::zeros(n, s + lt);
    let mut sigma_new = DVector::zeros(s + lt);
    for (c, &(val, src)) in entries.iter().enumerate() {
        sigma_new[c] = val;
        if src < s {
            u_new.set_column(c, &x.u().column(src));
            v_new.set_column(c, &x.v().column(src));
        } else {
            let w = corr.w().column(src - s) * sign;
            u_new.set_column(c, &w);
            v_new.set_column(c, &corr.y().column(src - s));
        }
    }
    let x_new = LowRankMatrix::from_trusted(u_new, sigma_new, v_new);
    Ok(IncreaseOutcome::Increased {
        x: Arc::new(x_new),
        added: lt,
        alpha,
    })
}

/// Runs the full rank-adaptive loop from `x0`.
pub fn solve_adaptive(
    problem: &SampledMatrix,
    x0: Arc<LowRankMatrix>,
    cfg: &AdaptConfig,
) -> Result<AdaptiveOutcome> {
    solve_adaptive_observed(problem, x0, cfg, &mut NoObserver)
}

/// Same as [`solve_adaptive`] with per-iterate observer callbacks.
pub fn solve_adaptive_observed(
    problem: &SampledMatrix,
    x0: Arc<LowRankMatrix>,
    cfg: &AdaptConfig,
    observer: &mut dyn AdaptiveObserver,
) -> Result<AdaptiveOutcome> {
    cfg.validate()?;
    if x0.rank() > cfg.k {
        return Err(Error::invalid(format!(
            "initial rank {} exceeds the bound k = {}",
            x0.rank(),
            cfg.k
        )));
    }
    let start = Instant::now();
    let mut rank_trace = RankTrace::default();
    let mut records: Vec<IterRecord> = Vec::new();
    let mut iter_offset = 0usize;

    // Initialization-stage reduction.
    let mut x = {
        let reduced = reduce_rank_with(&x0, cfg.delta_gap, cfg.reduction)?;
        if reduced.rank() < x0.rank() {
            let f = objective_of_residual(&residual(problem, &reduced)?);
            let event = RankEvent {
                cycle: 0,
                iter: 0,
                kind: RankEventKind::Reduce,
                rank_before: x0.rank(),
                rank_after: reduced.rank(),
                f,
                norm_gs: None,
                norm_n: None,
            };
            observer.on_rank_event(&reduced, &event);
            rank_trace.events.push(event);
            Arc::new(reduced)
        } else {
            x0
        }
    };

    // The driver runs in two phases. While the rank is only ever reduced,
    // the gap test stays active: over-estimated initial ranks are pruned.
    // The first rank increase switches to the growth phase and retires the
    // gap test: increases deliberately append singular values far below the
    // current spectrum (a genuinely decaying spectrum keeps large relative
    // gaps at every index), so a gap test would immediately undo every
    // increase and the two mechanisms would cycle forever.
    let mut increase_phase = false;
    let mut prev_boundary_res: Option<f64> = None;
    let mut low_change_streak = 0usize;
    let mut final_reason = AdaptStopReason::MaxOuter;

    for cycle in 1..=cfg.max_outer {
        let mut inner_cfg = cfg.inner.clone();
        if let Some(budget) = cfg.budget {
            let left = budget.checked_sub(start.elapsed());
            match left {
                None | Some(Duration::ZERO) => {
                    final_reason = AdaptStopReason::Budget;
                    break;
                }
                Some(left) => {
                    inner_cfg.budget = Some(match cfg.inner.budget {
                        Some(b) => b.min(left),
                        None => left,
                    });
                }
            }
        }

        let cycle_t0 = start.elapsed().as_secs_f64();
        let entry_rank = x.rank();
        let (x_next, trace) = {
            let mut bridge = InnerBridge(observer);
            rbb_solve_observed(problem, Arc::clone(&x), &inner_cfg, &mut bridge)?
        };
        x = x_next;
        // Merge inner records with global iteration and time counters.
        let skip_first = !records.is_empty();
        for (idx, rec) in trace.records.iter().enumerate() {
            if skip_first && idx == 0 {
                continue;
            }
            let mut rec = rec.clone();
            rec.iter += iter_offset;
            rec.time_s += cycle_t0;
            records.push(rec);
        }
        iter_offset += trace.iterations();

        let res = residual(problem, &x)?;
        let f = objective_of_residual(&res);
        let grad = riemannian_gradient(problem, &x)?;
        let norm_gs = grad.norm();
        let event = RankEvent {
            cycle,
            iter: iter_offset,
            kind: RankEventKind::InnerSolve,
            rank_before: entry_rank,
            rank_after: x.rank(),
            f,
            norm_gs: Some(norm_gs),
            norm_n: None,
        };
        observer.on_rank_event(&x, &event);
        rank_trace.events.push(event);

        match trace.reason {
            StopReason::RelResidual => {
                final_reason = AdaptStopReason::RelResidual;
                break;
            }
            StopReason::RelGradient => {
                final_reason = AdaptStopReason::RelGradient;
                break;
            }
            StopReason::Budget => {
                final_reason = AdaptStopReason::Budget;
                break;
            }
            StopReason::LineSearchFailed => {
                final_reason = AdaptStopReason::LineSearchFailed;
                break;
            }
            StopReason::MaxIterations | StopReason::RelChange => {}
        }

        // Outer-cycle relative change; two consecutive quiet cycles stop the
        // driver even when rank events keep firing.
        let res_norm = res.norm();
        if let Some(prev) = prev_boundary_res {
            let rel_change = (1.0 - res_norm / prev).abs();
            if rel_change < cfg.inner.eps_f {
                low_change_streak += 1;
            } else {
                low_change_streak = 0;
            }
            if low_change_streak >= 2 {
                final_reason = AdaptStopReason::RelChangeOuter;
                break;
            }
        }
        prev_boundary_res = Some(res_norm);

        // Gap test, active only during the reduction phase.
        if !increase_phase {
            let sigma: Vec<f64> = x.sigma().iter().copied().collect();
            let r = match cfg.reduction {
                ReductionRule::RelativeGap => detect_gap(&sigma, cfg.delta_gap)?,
                ReductionRule::AbsoluteThreshold => detect_threshold(&sigma, cfg.delta_gap),
            };
            if r < x.rank() {
                let reduced = x.truncate(r)?;
                let f_red = objective_of_residual(&residual(problem, &reduced)?);
                let event = RankEvent {
                    cycle,
                    iter: iter_offset,
                    kind: RankEventKind::Reduce,
                    rank_before: x.rank(),
                    rank_after: r,
                    f: f_red,
                    norm_gs: Some(norm_gs),
                    norm_n: None,
                };
                observer.on_rank_event(&reduced, &event);
                rank_trace.events.push(event);
                x = Arc::new(reduced);
                continue;
            }
        }

        // Increase test.
        let s = x.rank();
        if s < cfg.k {
            let l_test = (cfg.k - s).min(cfg.test_rank_cap).max(cfg.l.min(cfg.k - s));
            let topl = normal_topl_from_residual(&res, &x, l_test, &cfg.tsvd)?;
            let (norm_n, corr) = match &topl {
                NormalTopl::Correction(c) => (c.norm(), Some(c)),
                NormalTopl::NothingToAdd => (0.0, None),
            };
            if should_increase(norm_n, norm_gs, s, cfg.k, cfg.eps_increase) {
                let corr = corr.expect("positive norm implies a correction");
                let l_eff = cfg.l.min(cfg.k - s).min(corr.rank());
                let outcome = increase_from_correction(&x, &res, &corr.take(l_eff))?;
                match outcome {
                    IncreaseOutcome::Increased { x: x_up, added, .. } => {
                        let event = RankEvent {
                            cycle,
                            iter: iter_offset,
                            kind: RankEventKind::Increase,
                            rank_before: s,
                            rank_after: s + added,
                            f,
                            norm_gs: Some(norm_gs),
                            norm_n: Some(norm_n),
                        };
                        observer.on_rank_event(&x_up, &event);
                        rank_trace.events.push(event);
                        x = x_up;
                        increase_phase = true;
                        continue;
                    }
                    IncreaseOutcome::NoIncrease => {
                        final_reason = AdaptStopReason::StationaryOnObserved;
                        break;
                    }
                }
            }
        }

        // Neither test fired: resume the fixed-rank optimization at the
        // current rank. Global progress is guarded by the inner stopping
        // criteria and the two-quiet-cycles rule above.
    }

    let wall = start.elapsed().as_secs_f64();
    let solve_trace = SolveTrace {
        records,
        reason: match final_reason {
            AdaptStopReason::RelResidual => StopReason::RelResidual,
            AdaptStopReason::RelGradient => StopReason::RelGradient,
            AdaptStopReason::LineSearchFailed => StopReason::LineSearchFailed,
            AdaptStopReason::Budget => StopReason::Budget,
            _ => StopReason::MaxIterations,
        },
        wall_time_s: wall,
    };
    Ok(AdaptiveOutcome {
        x,
        solve_trace,
        rank_trace,
        reason: final_reason,
    })
}
