//! Dense-oracle checks for the factored kernels and the embedded geometry.

mod common;

use common::*;
use nalgebra::DMatrix;
use std::sync::Arc;

use rram_core::geometry::{
    normal_topl, project_normal, project_tangent, retract, riemannian_gradient, transport,
    NormalTopl,
};
use rram_core::linop::{LinOp, TangentOp};
use rram_core::sampled::{objective, residual};
use rram_core::tsvd::TsvdOptions;
use rram_core::TangentVector;

#[test]
fn residual_matches_dense_oracle() {
    // 8×6 rank-2 point, |Ω| = 20.
    let x = random_point(8, 6, 2, 21);
    let mut r = rng(22);
    let data = randn_matrix(8, 6, &mut r);
    let problem = sample_entries(&data, 20, &mut r);
    let res = residual(&problem, &x).unwrap();
    let oracle = dense_residual(&problem, &x);
    let got = LinOp::materialize(&res);
    assert_mat_close(&got, &oracle, 1e-13, "sparse residual vs dense");
    assert_close(
        objective(&problem, &x).unwrap(),
        dense_objective(&problem, &x),
        1e-13,
        "objective vs dense",
    );
}

#[test]
fn apply_dense_matches_triple_loop() {
    let x = random_point(9, 7, 3, 31);
    let got = x.apply_dense().unwrap();
    let oracle = densify_point(&x);
    assert_mat_close(&got, &oracle, 1e-14, "apply_dense vs naive product");
}

#[test]
fn residual_linearity_in_the_iterate() {
    // residual(X1 + X2 as dense) = residual(X1) + residual(X2) + P_Ω(A).
    let x1 = random_point(7, 6, 2, 41);
    let x2 = random_point(7, 6, 2, 42);
    let mut r = rng(43);
    let data = randn_matrix(7, 6, &mut r);
    let problem = sample_entries(&data, 18, &mut r);
    let mask = mask_of(&problem);
    let lhs = apply_mask(
        &mask,
        &(densify_point(&x1) + densify_point(&x2) - densify_sampled(&problem)),
    );
    let rhs = dense_residual(&problem, &x1) + dense_residual(&problem, &x2)
        + apply_mask(&mask, &densify_sampled(&problem));
    assert_mat_close(&lhs, &rhs, 1e-13, "residual linearity");
}

#[test]
fn project_tangent_matches_dense_complement_formula() {
    // 7×5 rank-2 point, dense random Z.
    let x = random_point(7, 5, 2, 51);
    let mut r = rng(52);
    let z = randn_matrix(7, 5, &mut r);
    let p = project_tangent(&x, &z).unwrap();
    let oracle = dense_project_tangent(&x, &z);
    assert_mat_close(&p.to_dense().unwrap(), &oracle, 1e-12, "tangent projection");
    assert!(p.block_orthogonality_defect() < 1e-12 * (1.0 + p.norm()));
}

#[test]
fn project_normal_matches_dense_oracle() {
    let x = random_point(8, 6, 2, 61);
    let mut r = rng(62);
    let z = randn_matrix(8, 6, &mut r);
    let op = project_normal(&x, &z).unwrap();
    let oracle = dense_project_normal(&x, &z);
    assert_mat_close(&op.materialize(), &oracle, 1e-12, "normal projection");
}

#[test]
fn pythagoras_splits_the_norm() {
    for seed in 0..10u64 {
        let x = random_point(9, 8, 3, 70 + seed);
        let mut r = rng(170 + seed);
        let z = randn_matrix(9, 8, &mut r);
        let pt = project_tangent(&x, &z).unwrap().to_dense().unwrap();
        let pn = project_normal(&x, &z).unwrap().materialize();
        assert_close(
            z.norm_squared(),
            pt.norm_squared() + pn.norm_squared(),
            1e-10,
            "‖Z‖² = ‖P_T Z‖² + ‖P_N Z‖²",
        );
    }
}

#[test]
fn gradient_matches_dense_projected_gradient() {
    let x = random_point(8, 7, 2, 81);
    let mut r = rng(82);
    let data = randn_matrix(8, 7, &mut r);
    let problem = sample_entries(&data, 25, &mut r);
    let grad = riemannian_gradient(&problem, &x).unwrap();
    let oracle = dense_project_tangent(&x, &dense_residual(&problem, &x));
    assert_mat_close(&grad.to_dense().unwrap(), &oracle, 1e-12, "riemannian gradient");
}

#[test]
fn gradient_directional_finite_difference() {
    // (f(R_X(hZ)) − f(X))/h ≈ ⟨grad, Z⟩ with relative error < 1e-5 at h = 1e-6.
    let x = random_point(10, 8, 3, 91);
    let mut r = rng(92);
    let data = randn_matrix(10, 8, &mut r);
    let problem = sample_entries(&data, 40, &mut r);
    let grad = riemannian_gradient(&problem, &x).unwrap();
    let z = project_tangent(&x, &randn_matrix(10, 8, &mut r)).unwrap();
    let z = z.scale(1.0 / z.norm());
    let ip = grad.inner(&z);
    assert!(ip.abs() > 1e-6, "degenerate direction, pick another seed");
    let h = 1e-6;
    let f0 = objective(&problem, &x).unwrap();
    let xh = retract(&x, h, &z).unwrap();
    let fh = objective(&problem, &xh).unwrap();
    let fd = (fh - f0) / h;
    assert!(
        ((fd - ip) / ip).abs() < 1e-5,
        "directional derivative {fd} vs inner product {ip}"
    );
}

#[test]
fn retract_matches_dense_truncated_svd() {
    // 9×7, s = 3, t = 0.37.
    let x = random_point(9, 7, 3, 101);
    let mut r = rng(102);
    let z = project_tangent(&x, &randn_matrix(9, 7, &mut r)).unwrap();
    let t = 0.37;
    let y = retract(&x, t, &z).unwrap();
    let dense_step = densify_point(&x) + t * z.to_dense().unwrap();
    let oracle = dense_truncation(&dense_step, 3);
    assert_mat_close(&y.apply_dense().unwrap(), &oracle, 1e-11, "retraction vs dense SVD");
}

#[test]
fn retract_error_is_second_order() {
    // ‖R_X(tZ) − (X + tZ)‖ decays ~100× per decade of t.
    let x = random_point(10, 9, 3, 111);
    let mut r = rng(112);
    let z = project_tangent(&x, &randn_matrix(10, 9, &mut r)).unwrap();
    let x_dense = densify_point(&x);
    let z_dense = z.to_dense().unwrap();
    let err = |t: f64| {
        let y = retract(&x, t, &z).unwrap();
        (y.apply_dense().unwrap() - (&x_dense + t * &z_dense)).norm()
    };
    let e2 = err(1e-2);
    let e3 = err(1e-3);
    let e4 = err(1e-4);
    for (hi, lo) in [(e2, e3), (e3, e4)] {
        let ratio = hi / lo;
        assert!(
            (50.0..=200.0).contains(&ratio),
            "second-order ratio {ratio} outside [50, 200] (errors {e2:.3e}, {e3:.3e}, {e4:.3e})"
        );
    }
}

#[test]
fn transport_matches_dense_projection() {
    let x_from = random_point(9, 7, 3, 121);
    let x_to = random_point(9, 7, 3, 122);
    let mut r = rng(123);
    let z = project_tangent(&x_from, &randn_matrix(9, 7, &mut r)).unwrap();
    let t = transport(&x_to, &z).unwrap();
    let oracle = dense_project_tangent(&x_to, &z.to_dense().unwrap());
    assert_mat_close(&t.to_dense().unwrap(), &oracle, 1e-12, "transport vs dense projection");
    assert!(t.block_orthogonality_defect() < 1e-12 * (1.0 + t.norm()));
}

#[test]
fn normal_topl_matches_dense_svd() {
    // 10×8, s = 2, l = 3 against the dense normal operator.
    let x = random_point(10, 8, 2, 131);
    let mut r = rng(132);
    let data = randn_matrix(10, 8, &mut r);
    let problem = sample_entries(&data, 36, &mut r);
    let out = normal_topl(&problem, &x, 3, &TsvdOptions::default()).unwrap();
    let corr = match out {
        NormalTopl::Correction(c) => c,
        NormalTopl::NothingToAdd => panic!("expected a correction"),
    };
    let oracle_op = dense_project_normal(&x, &(-dense_residual(&problem, &x)));
    let oracle_sv = dense_singular_values(&oracle_op);
    assert!(corr.rank() <= 3);
    for c in 0..corr.rank() {
        assert_close(corr.d()[c], oracle_sv[c], 1e-10, "normal singular value");
    }
    // Reconstruction matches the dense rank-l̃ truncation.
    let mut rec = DMatrix::zeros(10, 8);
    for c in 0..corr.rank() {
        rec += corr.d()[c] * corr.w().column(c) * corr.y().column(c).transpose();
    }
    let oracle_trunc = dense_truncation(&oracle_op, corr.rank());
    assert_mat_close(&rec, &oracle_trunc, 1e-10, "normal truncation");
    assert!(corr.orthogonality_defect() < 1e-10);
}

#[test]
fn normal_correction_is_orthogonal_to_tangent_space() {
    let x = random_point(11, 9, 3, 141);
    let mut r = rng(142);
    let data = randn_matrix(11, 9, &mut r);
    let problem = sample_entries(&data, 50, &mut r);
    let corr = match normal_topl(&problem, &x, 2, &TsvdOptions::default()).unwrap() {
        NormalTopl::Correction(c) => c,
        NormalTopl::NothingToAdd => panic!("expected a correction"),
    };
    let mut rec = DMatrix::zeros(11, 9);
    for c in 0..corr.rank() {
        rec += corr.d()[c] * corr.w().column(c) * corr.y().column(c).transpose();
    }
    for seed in 0..5u64 {
        let z = project_tangent(&x, &randn_matrix(11, 9, &mut rng(150 + seed))).unwrap();
        let ip = rec.dot(&z.to_dense().unwrap());
        assert!(
            ip.abs() <= 1e-10 * (1.0 + rec.norm() * z.norm()),
            "⟨WDYᵀ, Z⟩ = {ip}"
        );
    }
}

#[test]
fn factored_inner_product_matches_dense() {
    let x = random_point(8, 6, 2, 161);
    let mut r = rng(162);
    let z1 = project_tangent(&x, &randn_matrix(8, 6, &mut r)).unwrap();
    let z2 = project_tangent(&x, &randn_matrix(8, 6, &mut r)).unwrap();
    let dense_ip = z1.to_dense().unwrap().dot(&z2.to_dense().unwrap());
    assert_close(z1.inner(&z2), dense_ip, 1e-12, "factored inner product");
}

#[test]
fn tangent_cone_limit_case_equals_tangent_space() {
    // At s = k the cone is the tangent space: the normal part contributes
    // nothing, so the projected antigradient is the tangent projection.
    let x = random_point(8, 6, 3, 171);
    let mut r = rng(172);
    let z = randn_matrix(8, 6, &mut r);
    let pt = project_tangent(&x, &z).unwrap();
    let tangent_op = TangentOp(&pt);
    let full = tangent_op.materialize();
    assert_mat_close(&full, &dense_project_tangent(&x, &z), 1e-12, "s = k cone");
}

#[test]
fn zero_tangent_vector_round_trip() {
    let x = random_point(6, 5, 2, 181);
    let z = TangentVector::zero(Arc::clone(&x));
    let y = retract(&x, 1.0, &z).unwrap();
    assert_mat_close(
        &y.apply_dense().unwrap(),
        &x.apply_dense().unwrap(),
        1e-13,
        "retraction of zero vector",
    );
}

#[test]
fn gradient_vanishes_at_global_minimizer() {
    let x = random_point(8, 6, 2, 191);
    let dense = densify_point(&x);
    let mut entries = Vec::new();
    for i in 0..8 {
        for j in 0..6 {
            entries.push((i, j, dense[(i, j)]));
        }
    }
    let problem = rram_core::SampledMatrix::new(8, 6, entries).unwrap();
    let grad = riemannian_gradient(&problem, &x).unwrap();
    assert!(grad.norm() < 1e-12, "gradient norm {}", grad.norm());
}

#[test]
fn retraction_to_zero_is_degenerate() {
    // Z = U(−Σ/t)Vᵀ makes X + tZ the zero matrix.
    let x = random_point(7, 5, 2, 192);
    let t = 0.5;
    let m_block = nalgebra::DMatrix::from_fn(2, 2, |i, j| {
        if i == j {
            -x.sigma()[i] / t
        } else {
            0.0
        }
    });
    let z = TangentVector::new(
        Arc::clone(&x),
        m_block,
        nalgebra::DMatrix::zeros(7, 2),
        nalgebra::DMatrix::zeros(5, 2),
    )
    .unwrap();
    match retract(&x, t, &z) {
        Err(rram_core::Error::DegenerateRetraction) => {}
        other => panic!("expected degenerate retraction, got {other:?}"),
    }
}
