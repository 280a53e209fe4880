//! Property tests for the spec invariants.

mod common;

use common::*;
use proptest::prelude::*;

use rram_core::adaptive::detect_gap;
use rram_core::geometry::{project_normal, project_tangent};
use rram_core::linop::LinOp;
use rram_core::problems::{gen_gaussian, SyntheticKind, SyntheticSpec};
use rram_core::sampled::SampledMatrix;

/// Brute-force scan over every index of the relative-gap criterion.
fn brute_force_gap(sigma: &[f64], delta: f64) -> usize {
    let s = sigma.len();
    let mut best = s;
    let mut best_gap = f64::NEG_INFINITY;
    for i in 0..s.saturating_sub(1) {
        let gap = (sigma[i] - sigma[i + 1]) / sigma[i];
        if gap > best_gap {
            best_gap = gap;
            best = i + 1;
        }
    }
    if best_gap > delta {
        best
    } else {
        s
    }
}

fn descending_spectrum() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, 1..24).prop_map(|mut v| {
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn detect_gap_matches_brute_force(sigma in descending_spectrum(), delta in 0.01f64..0.99) {
        let got = detect_gap(&sigma, delta).unwrap();
        let want = brute_force_gap(&sigma, delta);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn detect_gap_never_expands(sigma in descending_spectrum(), delta in 0.01f64..0.99) {
        let r = detect_gap(&sigma, delta).unwrap();
        prop_assert!(r >= 1 && r <= sigma.len());
    }

    #[test]
    fn projections_split_norm(seed in 0u64..500) {
        let x = random_point(8, 7, 2, seed);
        let mut r = rng(seed ^ 0x9e37);
        let z = randn_matrix(8, 7, &mut r);
        let pt = project_tangent(&x, &z).unwrap();
        let pn = project_normal(&x, &z).unwrap().materialize();
        let lhs = z.norm_squared();
        let rhs = pt.inner(&pt) + pn.norm_squared();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.max(1.0));
    }

    #[test]
    fn matrix_market_round_trip(
        m in 1usize..12,
        n in 1usize..12,
        seed in 0u64..1000,
    ) {
        let mut r = rng(seed);
        let count = 1 + (seed as usize % (m * n));
        let dense = randn_matrix(m, n, &mut r);
        let p = sample_entries(&dense, count, &mut r);
        let mut buf = Vec::new();
        p.write_matrix_market(&mut buf).unwrap();
        let back = SampledMatrix::read_matrix_market(&buf[..]).unwrap();
        prop_assert_eq!(p.m(), back.m());
        prop_assert_eq!(p.n(), back.n());
        let a: Vec<_> = p.iter().collect();
        let b: Vec<_> = back.iter().collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sampling_without_replacement_is_exact(seed in 0u64..200) {
        let spec = SyntheticSpec {
            m: 25,
            n: 18,
            r: 2,
            os: 1.5 + (seed % 7) as f64 * 0.5,
            kind: SyntheticKind::Gaussian,
            seed,
            bernoulli: false,
        };
        let (p, _) = gen_gaussian(&spec).unwrap();
        prop_assert_eq!(p.nnz(), spec.sample_count());
        let mut pairs: Vec<_> = p.iter().map(|(i, j, _)| (i, j)).collect();
        pairs.sort_unstable();
        pairs.dedup();
        prop_assert_eq!(pairs.len(), spec.sample_count());
    }

    #[test]
    fn residual_operator_norm_matches_objective(seed in 0u64..200) {
        let x = random_point(9, 8, 2, seed);
        let mut r = rng(seed ^ 0x51);
        let dense = randn_matrix(9, 8, &mut r);
        let p = sample_entries(&dense, 30, &mut r);
        let res = rram_core::residual(&p, &x).unwrap();
        let f = rram_core::objective(&p, &x).unwrap();
        let from_res = 0.5 * res.norm() * res.norm();
        prop_assert!((f - from_res).abs() <= 1e-12 * f.max(1.0));
    }
}
