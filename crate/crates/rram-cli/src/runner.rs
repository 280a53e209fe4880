//! Command implementations: problem generation, solves, and ratings runs.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use serde_json::json;

use rram_core::adaptive::{AdaptiveObserver, RankEvent, RankEventKind};
use rram_core::dataio::{
    export_trace, parse_movielens, split_train_test, RunMeta, TraceFormat, TraceRow,
};
use rram_core::lowrank::LowRankMatrix;
use rram_core::problems::{generate, initial_point, metrics, random_point, rmse, rmse_clipped};
use rram_core::rbb::{rbb_solve, IterRecord, SolveTrace};
use rram_core::sampled::SampledMatrix;
use rram_core::{solve_adaptive, RankTrace};

use crate::config::{InitKind, ProblemKind, RunConfig, SolveMode};

/// Runtime failure; maps to exit code 3.
#[derive(Debug)]
pub struct RunError(pub String);

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for RunError {}

impl From<rram_core::Error> for RunError {
    fn from(e: rram_core::Error) -> Self {
        RunError(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError(format!("i/o error: {e}"))
    }
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

fn meta_for(cfg: &RunConfig) -> RunMeta {
    RunMeta {
        config: cfg.echo.clone(),
        seed: cfg.seed,
        git_describe: git_describe(),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Dense factor export in MatrixMarket array format (column-major values).
fn write_dense_array(path: &Path, mat: &nalgebra::DMatrix<f64>) -> Result<(), RunError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    writeln!(w, "{} {}", mat.nrows(), mat.ncols())?;
    for j in 0..mat.ncols() {
        for i in 0..mat.nrows() {
            writeln!(w, "{}", mat[(i, j)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn load_problem(cfg: &RunConfig) -> Result<SampledMatrix, RunError> {
    match cfg.kind {
        ProblemKind::Gaussian | ProblemKind::IllConditioned => {
            let spec = cfg.synthetic.as_ref().expect("validated synthetic spec");
            let (problem, _) = generate(spec)?;
            Ok(problem)
        }
        ProblemKind::MatrixMarket => {
            let path = cfg.data_path.as_ref().expect("validated path");
            let file = File::open(path)
                .map_err(|e| RunError(format!("cannot open {}: {e}", path.display())))?;
            Ok(SampledMatrix::read_matrix_market(BufReader::new(file))?)
        }
        ProblemKind::MovieLens => Err(RunError(
            "movielens problems run through the `movielens` command".into(),
        )),
    }
}

fn initial_for(cfg: &RunConfig, problem: &SampledMatrix, k: usize) -> Result<LowRankMatrix, RunError> {
    match cfg.init {
        InitKind::Svd => Ok(initial_point(problem, k, &cfg.adapt.tsvd)?),
        InitKind::Random => Ok(random_point(problem.m(), problem.n(), k, cfg.seed)?),
    }
}

fn zero_time_unless(wall: bool, rows: &mut [TraceRow]) {
    if !wall {
        for r in rows {
            r.time_s = 0.0;
        }
    }
}

fn inner_rows(trace: &SolveTrace) -> Vec<TraceRow> {
    trace
        .records
        .iter()
        .map(|r| TraceRow {
            iter: r.iter,
            time_s: r.time_s,
            f: r.f,
            rel_grad: r.rel_grad,
            rel_res: r.rel_res,
            rel_change: r.rel_change,
            rank: r.rank,
            event: "inner".into(),
        })
        .collect()
}

/// Inner rows with reduce/increase markers spliced in at their global
/// iteration; event rows reuse the nearest solver row's gradient measure.
fn merged_rows(trace: &SolveTrace, rank_trace: &RankTrace, a_norm: f64) -> Vec<TraceRow> {
    let inner = inner_rows(trace);
    let mut events: Vec<&RankEvent> = rank_trace
        .events
        .iter()
        .filter(|e| e.kind != RankEventKind::InnerSolve)
        .collect();
    events.sort_by_key(|e| e.iter);
    let mut out = Vec::with_capacity(inner.len() + events.len());
    let mut ev = events.into_iter().peekable();
    for row in inner {
        let iter = row.iter;
        let rel_grad = row.rel_grad;
        let time_s = row.time_s;
        out.push(row);
        while ev.peek().is_some_and(|e| e.iter == iter) {
            let e = ev.next().unwrap();
            out.push(TraceRow {
                iter: e.iter,
                time_s,
                f: e.f,
                rel_grad,
                rel_res: (2.0 * e.f).sqrt() / a_norm,
                rel_change: None,
                rank: e.rank_after,
                event: e.kind.to_string(),
            });
        }
    }
    out
}

fn rank_trace_rows(rank_trace: &RankTrace) -> String {
    let mut out = String::from("cycle,iter,event,rank_before,rank_after,f,norm_gs,norm_n\n");
    for e in &rank_trace.events {
        let gs = e.norm_gs.map(|v| format!("{v}")).unwrap_or_default();
        let nn = e.norm_n.map(|v| format!("{v}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.cycle, e.iter, e.kind, e.rank_before, e.rank_after, e.f, gs, nn
        ));
    }
    out
}

fn export_all(
    cfg: &RunConfig,
    rows: &mut Vec<TraceRow>,
    rank_trace: Option<&RankTrace>,
    summary: &serde_json::Value,
) -> Result<Vec<PathBuf>, RunError> {
    ensure_dir(&cfg.out_dir)?;
    let meta = meta_for(cfg);
    zero_time_unless(cfg.wall_time, rows);
    let mut written = Vec::new();

    if cfg.out_format.wants_csv() {
        let path = cfg.out_dir.join("trace.csv");
        export_trace(rows, &path, TraceFormat::Csv, &meta)?;
        written.push(path);
    }
    if cfg.out_format.wants_json() {
        let path = cfg.out_dir.join("trace.json");
        export_trace(rows, &path, TraceFormat::Json, &meta)?;
        written.push(path);
    }
    if let Some(rt) = rank_trace {
        let path = cfg.out_dir.join("rank_trace.csv");
        fs::write(&path, rank_trace_rows(rt))?;
        written.push(path);
    }
    let path = cfg.out_dir.join("summary.json");
    let mut doc = summary.clone();
    doc["meta"] = json!({
        "seed": meta.seed,
        "git_describe": meta.git_describe,
    });
    fs::write(&path, format!("{:#}\n", doc))?;
    written.push(path);
    Ok(written)
}

/// `generate`: materialize a synthetic problem on disk.
pub fn cmd_generate(cfg: &RunConfig) -> Result<serde_json::Value, RunError> {
    let spec = match (&cfg.kind, &cfg.synthetic) {
        (ProblemKind::Gaussian | ProblemKind::IllConditioned, Some(spec)) => spec,
        _ => {
            return Err(RunError(
                "generate needs problem.kind = gaussian or ill-conditioned".into(),
            ))
        }
    };
    let (problem, truth) = generate(spec)?;
    ensure_dir(&cfg.out_dir)?;

    let problem_path = cfg.out_dir.join("problem.mtx");
    let file = File::create(&problem_path)?;
    let mut w = BufWriter::new(file);
    problem.write_matrix_market(&mut w)?;
    w.flush()?;

    let left_path = cfg.out_dir.join("left.mtx");
    let right_path = cfg.out_dir.join("right.mtx");
    write_dense_array(&left_path, &truth.left)?;
    write_dense_array(&right_path, &truth.right)?;

    let echo_path = cfg.out_dir.join("spec.cfg");
    fs::write(&echo_path, &cfg.echo)?;

    Ok(json!({
        "command": "generate",
        "m": problem.m(),
        "n": problem.n(),
        "nnz": problem.nnz(),
        "outputs": [problem_path, left_path, right_path, echo_path],
    }))
}

/// `solve`: fixed-rank or adaptive run on a synthetic or imported problem.
pub fn cmd_solve(cfg: &RunConfig) -> Result<serde_json::Value, RunError> {
    let k = cfg.rank_bound().map_err(|e| RunError(e.0))?;
    let problem = load_problem(cfg)?;
    let x0 = Arc::new(initial_for(cfg, &problem, k)?);
    let a_norm = problem.norm();

    let (x, solve_trace, rank_trace, reason) = match cfg.mode {
        SolveMode::Fixed => {
            let mut inner = cfg.adapt.inner.clone();
            inner.budget = cfg.budget;
            let (x, trace) = rbb_solve(&problem, x0, &inner)?;
            let reason = trace.reason.to_string();
            (x, trace, None, reason)
        }
        SolveMode::Adaptive => {
            let mut adapt = cfg.adapt.clone();
            adapt.budget = cfg.budget;
            let out = solve_adaptive(&problem, x0, &adapt)?;
            let reason = out.reason.to_string();
            (out.x, out.solve_trace, Some(out.rank_trace), reason)
        }
    };

    let final_metrics = metrics(&problem, &x, None)?;
    let last = solve_trace.last().clone();
    let wall = solve_trace.wall_time_s;
    let summary = json!({
        "command": "solve",
        "termination": reason,
        "final_rank": x.rank(),
        "final_f": last.f,
        "rel_gradient": final_metrics.rel_gradient,
        "rel_residual": final_metrics.rel_residual,
        "iterations": solve_trace.iterations(),
        "reductions": rank_trace.as_ref().map(|t| t.reductions()).unwrap_or(0),
        "increases": rank_trace.as_ref().map(|t| t.increases()).unwrap_or(0),
        "wall_time_s": if cfg.wall_time { json!(wall) } else { serde_json::Value::Null },
    });

    let mut rows = match &rank_trace {
        Some(rt) => merged_rows(&solve_trace, rt, a_norm),
        None => inner_rows(&solve_trace),
    };
    let outputs = export_all(cfg, &mut rows, rank_trace.as_ref(), &summary)?;

    eprintln!(
        "solve: {} after {} iterations, rank {}, rel residual {:.3e}, {:.2}s",
        reason,
        solve_trace.iterations(),
        x.rank(),
        final_metrics.rel_residual,
        wall
    );
    let mut doc = summary;
    doc["outputs"] = json!(outputs);
    Ok(doc)
}

/// RMSE probe attached to the adaptive solve.
struct RmseProbe<'a> {
    test: &'a SampledMatrix,
    every: usize,
    clip: Option<(f64, f64)>,
    seen: usize,
    rows: Vec<(usize, String, usize, f64)>,
    boundary_rmse: Vec<f64>,
}

impl RmseProbe<'_> {
    fn eval(&self, x: &LowRankMatrix) -> f64 {
        let r = match self.clip {
            Some((lo, hi)) => rmse_clipped(x, self.test, lo, hi),
            None => rmse(x, self.test),
        };
        r.expect("rmse dimensions verified at setup")
    }
}

impl AdaptiveObserver for RmseProbe<'_> {
    fn on_iterate(&mut self, x: &LowRankMatrix, record: &IterRecord) {
        self.seen += 1;
        if self.seen % self.every == 0 {
            let value = self.eval(x);
            self.rows
                .push((self.seen, "inner".into(), record.rank, value));
        }
    }

    fn on_rank_event(&mut self, x: &LowRankMatrix, event: &RankEvent) {
        let value = self.eval(x);
        if event.kind == RankEventKind::InnerSolve {
            self.boundary_rmse.push(value);
        }
        self.rows
            .push((self.seen, event.kind.to_string(), event.rank_after, value));
    }
}

/// `movielens`: parse, split, adaptive solve with periodic test RMSE.
pub fn cmd_movielens(cfg: &RunConfig) -> Result<serde_json::Value, RunError> {
    if cfg.kind != ProblemKind::MovieLens {
        return Err(RunError("movielens needs problem.kind = movielens".into()));
    }
    let path = cfg.data_path.as_ref().expect("validated path");
    let ds = parse_movielens(path, cfg.ml_format)?;
    let (train, test) = split_train_test(&ds, cfg.split, cfg.seed)?;

    // Rank parameter defaults to 10 for ratings data.
    let k = cfg.k.unwrap_or(10);
    let mut adapt = cfg.adapt.clone();
    adapt.k = k;
    adapt
        .validate()
        .map_err(|e| RunError(format!("adapt: {e}")))?;
    adapt.budget = Some(cfg.budget.unwrap_or(std::time::Duration::from_secs(60)));

    let x0 = Arc::new(initial_point(&train, k, &adapt.tsvd)?);
    let clip = cfg.clip.then_some((1.0, 5.0));
    let mut probe = RmseProbe {
        test: &test,
        every: cfg.rmse_every,
        clip,
        seen: 0,
        rows: Vec::new(),
        boundary_rmse: Vec::new(),
    };
    let out = rram_core::solve_adaptive_observed(&train, x0, &adapt, &mut probe)?;

    let final_rmse = probe.eval(&out.x);
    let first_boundary_rmse = probe.boundary_rmse.first().copied();
    let summary = json!({
        "command": "movielens",
        "users": ds.m(),
        "items": ds.n(),
        "ratings": ds.len(),
        "train": train.nnz(),
        "test": test.nnz(),
        "termination": out.reason.to_string(),
        "final_rank": out.x.rank(),
        "final_rmse": final_rmse,
        "first_boundary_rmse": first_boundary_rmse,
        "iterations": out.solve_trace.iterations(),
        "wall_time_s": if cfg.wall_time { json!(out.solve_trace.wall_time_s) } else { serde_json::Value::Null },
    });

    ensure_dir(&cfg.out_dir)?;
    let rmse_path = cfg.out_dir.join("rmse_trace.csv");
    {
        let mut text = String::from("iter,event,rank,rmse\n");
        for (iter, event, rank, value) in &probe.rows {
            text.push_str(&format!("{iter},{event},{rank},{value}\n"));
        }
        fs::write(&rmse_path, text)?;
    }

    let a_norm = train.norm();
    let mut rows = merged_rows(&out.solve_trace, &out.rank_trace, a_norm);
    let mut outputs = export_all(cfg, &mut rows, Some(&out.rank_trace), &summary)?;
    outputs.push(rmse_path);

    eprintln!(
        "movielens: {} users x {} items, {} ratings; final rank {}, test RMSE {:.4}, {:.2}s",
        ds.m(),
        ds.n(),
        ds.len(),
        out.x.rank(),
        final_rmse,
        out.solve_trace.wall_time_s
    );
    let mut doc = summary;
    doc["outputs"] = json!(outputs);
    Ok(doc)
}
