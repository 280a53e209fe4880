//! Recovers a rank-10 matrix from 6% of its entries without being told the
//! rank: the solver starts from a rank-15 initialization, prunes to the
//! true rank at the first gap test, and converges on the fixed-rank
//! manifold.
//!
//! ```sh
//! cargo run --release -p rram-core --example rank_recovery
//! ```

use std::sync::Arc;

use rram_core::{
    generate, initial_point, solve_adaptive, AdaptConfig, SyntheticKind, SyntheticSpec,
    TsvdOptions,
};

fn main() -> Result<(), rram_core::Error> {
    let spec = SyntheticSpec {
        m: 1000,
        n: 1000,
        r: 10,
        os: 3.0,
        kind: SyntheticKind::Gaussian,
        seed: 42,
        bernoulli: false,
    };
    let (problem, _truth) = generate(&spec)?;
    println!(
        "observed {} of {} entries ({:.1}%)",
        problem.nnz(),
        spec.m * spec.n,
        100.0 * problem.nnz() as f64 / (spec.m * spec.n) as f64
    );

    let k = 15;
    let x0 = initial_point(&problem, k, &TsvdOptions::default())?;
    println!("initialized at rank {k}");

    let out = solve_adaptive(&problem, Arc::new(x0), &AdaptConfig::new(k))?;
    for event in &out.rank_trace.events {
        println!(
            "cycle {:2} iter {:4}  {:12}  rank {:2} -> {:2}  f = {:.3e}",
            event.cycle, event.iter, event.kind.to_string(), event.rank_before, event.rank_after, event.f
        );
    }
    let last = out.solve_trace.last();
    println!(
        "stopped: {} after {} iterations at rank {}, relative residual {:.3e}",
        out.reason,
        out.solve_trace.iterations(),
        out.x.rank(),
        last.rel_res
    );
    Ok(())
}
