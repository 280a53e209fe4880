//! Generators, initialization, metrics, and trace export against oracles.

mod common;

use common::*;
use std::sync::Arc;

use rram_core::dataio::{write_trace_csv, TraceRow};
use rram_core::problems::{
    gen_gaussian, initial_point, metrics, rmse, rmse_clipped, SyntheticKind, SyntheticSpec,
};
use rram_core::tsvd::TsvdOptions;

#[test]
fn initial_point_matches_dense_truncated_svd() {
    // 40×30 sparse instance against the dense rank-k truncation.
    let spec = SyntheticSpec {
        m: 40,
        n: 30,
        r: 5,
        os: 3.0,
        kind: SyntheticKind::Gaussian,
        seed: 301,
        bernoulli: false,
    };
    let (problem, _) = gen_gaussian(&spec).unwrap();
    let x0 = initial_point(&problem, 5, &TsvdOptions::default()).unwrap();
    let oracle = dense_truncation(&densify_sampled(&problem), 5);
    assert_mat_close(&x0.apply_dense().unwrap(), &oracle, 1e-10, "initial point vs dense SVD");
}

#[test]
fn initial_point_through_lanczos_path_matches_dense() {
    // Force the iterative path with a zero dense cutoff.
    let spec = SyntheticSpec {
        m: 60,
        n: 45,
        r: 4,
        os: 3.0,
        kind: SyntheticKind::Gaussian,
        seed: 302,
        bernoulli: false,
    };
    let (problem, _) = gen_gaussian(&spec).unwrap();
    let opts = TsvdOptions {
        dense_cutoff: 0,
        ..TsvdOptions::default()
    };
    let x0 = initial_point(&problem, 4, &opts).unwrap();
    let oracle = dense_truncation(&densify_sampled(&problem), 4);
    assert_mat_close(&x0.apply_dense().unwrap(), &oracle, 1e-9, "lanczos initial point");
}

#[test]
fn initial_point_rejects_zero_observations() {
    let problem =
        rram_core::SampledMatrix::new(5, 4, vec![(0, 0, 0.0), (1, 2, 0.0)]).unwrap();
    assert!(initial_point(&problem, 2, &TsvdOptions::default()).is_err());
}

#[test]
fn metrics_match_dense_formulas() {
    let spec = SyntheticSpec {
        m: 20,
        n: 16,
        r: 3,
        os: 2.5,
        kind: SyntheticKind::Gaussian,
        seed: 303,
        bernoulli: false,
    };
    let (problem, _) = gen_gaussian(&spec).unwrap();
    let x = random_point(20, 16, 3, 304);
    let x_prev = random_point(20, 16, 3, 305);
    let got = metrics(&problem, &x, Some(&x_prev)).unwrap();

    let res = dense_residual(&problem, &x);
    let res_prev = dense_residual(&problem, &x_prev);
    let a_norm = densify_sampled(&problem).norm();
    let grad = dense_project_tangent(&x, &res);
    let want_grad = grad.norm() / densify_point(&x).norm().max(1.0);
    let want_res = res.norm() / a_norm;
    let want_change = (1.0 - res.norm() / res_prev.norm()).abs();

    assert_close(got.rel_gradient, want_grad, 1e-13, "rel gradient");
    assert_close(got.rel_residual, want_res, 1e-13, "rel residual");
    assert_close(got.rel_change.unwrap(), want_change, 1e-13, "rel change");
}

#[test]
fn rmse_matches_naive_loop() {
    let x = random_point(15, 12, 2, 311);
    let mut r = rng(312);
    let data = randn_matrix(15, 12, &mut r);
    let test = sample_entries(&data, 40, &mut r);
    let got = rmse(&x, &test).unwrap();
    let x_dense = densify_point(&x);
    let mut acc = 0.0;
    for (i, j, v) in test.iter() {
        let e = x_dense[(i, j)] - v;
        acc += e * e;
    }
    let want = (acc / 40.0).sqrt();
    assert_close(got, want, 1e-13, "rmse vs naive loop");

    // Clipping pushes every prediction into the range.
    let clipped = rmse_clipped(&x, &test, -0.5, 0.5).unwrap();
    let mut acc2 = 0.0;
    for (i, j, v) in test.iter() {
        let e = x_dense[(i, j)].clamp(-0.5, 0.5) - v;
        acc2 += e * e;
    }
    assert_close(clipped, (acc2 / 40.0).sqrt(), 1e-13, "clipped rmse");
}

#[test]
fn trace_csv_matches_golden_file() {
    let rows = vec![
        TraceRow {
            iter: 0,
            time_s: 0.0,
            f: 12.5,
            rel_grad: 0.25,
            rel_res: 1.0,
            rel_change: None,
            rank: 10,
            event: "inner".into(),
        },
        TraceRow {
            iter: 1,
            time_s: 0.125,
            f: 3.0517578125e-5,
            rel_grad: 0.001953125,
            rel_res: 0.0078125,
            rel_change: Some(0.9921875),
            rank: 10,
            event: "inner".into(),
        },
        TraceRow {
            iter: 1,
            time_s: 0.25,
            f: 3.0517578125e-5,
            rel_grad: 0.001953125,
            rel_res: 0.0078125,
            rel_change: None,
            rank: 4,
            event: "reduce".into(),
        },
    ];
    let mut buf = Vec::new();
    write_trace_csv(&rows, &mut buf).unwrap();
    let got = String::from_utf8(buf).unwrap();
    let golden = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/data/golden_trace.csv"
    ))
    .unwrap();
    assert_eq!(got, golden, "trace CSV deviates from the golden file");
}

#[test]
fn ground_truth_export_round_trip() {
    let spec = SyntheticSpec {
        m: 18,
        n: 14,
        r: 3,
        os: 2.0,
        kind: SyntheticKind::Gaussian,
        seed: 321,
        bernoulli: false,
    };
    let (problem, _) = gen_gaussian(&spec).unwrap();
    let mut buf = Vec::new();
    problem.write_matrix_market(&mut buf).unwrap();
    let back = rram_core::SampledMatrix::read_matrix_market(&buf[..]).unwrap();
    let a: Vec<_> = problem.iter().collect();
    let b: Vec<_> = back.iter().collect();
    assert_eq!(a, b);
    let x = Arc::new(initial_point(&problem, 3, &TsvdOptions::default()).unwrap());
    let m1 = metrics(&problem, &x, None).unwrap();
    let m2 = metrics(&back, &x, None).unwrap();
    assert_eq!(m1.rel_residual, m2.rel_residual);
}

#[test]
fn initial_point_can_return_lower_rank() {
    // Fully observed rank-2 data queried at k = 4 comes back rank 2.
    let spec = SyntheticSpec {
        m: 18,
        n: 12,
        r: 2,
        os: 3.0,
        kind: SyntheticKind::Gaussian,
        seed: 331,
        bernoulli: false,
    };
    let (_, t) = gen_gaussian(&spec).unwrap();
    let dense = &t.left * t.right.transpose();
    let mut entries = Vec::new();
    for i in 0..18 {
        for j in 0..12 {
            entries.push((i, j, dense[(i, j)]));
        }
    }
    let full = rram_core::SampledMatrix::new(18, 12, entries).unwrap();
    let x0 = initial_point(&full, 4, &TsvdOptions::default()).unwrap();
    assert_eq!(x0.rank(), 2);
}

#[test]
fn initialization_spectrum_gaps_at_the_true_rank() {
    // Rank-10 data sampled at OS = 3, initialized at k = 20: the largest
    // relative gap of the initialization spectrum sits at index 10.
    let spec = SyntheticSpec {
        m: 1000,
        n: 1000,
        r: 10,
        os: 3.0,
        kind: SyntheticKind::Gaussian,
        seed: 42,
        bernoulli: false,
    };
    let (problem, _) = gen_gaussian(&spec).unwrap();
    let x0 = initial_point(&problem, 20, &TsvdOptions::default()).unwrap();
    assert_eq!(x0.rank(), 20);
    let sigma: Vec<f64> = x0.sigma().iter().copied().collect();
    let split = rram_core::detect_gap(&sigma, 0.1).unwrap();
    assert_eq!(split, 10, "spectrum {sigma:?}");
}
