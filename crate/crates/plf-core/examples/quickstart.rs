//! Learn a voltage surrogate for one uncertain generator and test it under a
//! gamma-distributed input. Run from the workspace root:
//!
//!     cargo run --release -p plf-core --example quickstart

use plf_core::acpf::{DimensionMap, Quantity};
use plf_core::case;
use plf_core::learn;
use plf_core::testing;

fn main() {
    let text = std::fs::read_to_string("data/case30.m").expect("run from the workspace root");
    let case = case::parse_case(&text).unwrap();

    // generation at bus 27 varies over [0, 55] MW = [0, 0.55] pu
    let bounds = learn::UncertainBox::new(
        DimensionMap(vec![(27, Quantity::Active)]),
        vec![0.0],
        vec![0.55],
    )
    .unwrap();

    let result = learn::learn(
        &case,
        25,
        &bounds,
        0.01,
        0.01,
        &learn::BetaSchedule::FiniteCandidate,
        60,
        1,
    )
    .unwrap();
    println!(
        "learned |V25| in {} samples, bound ±{:.2e} pu (converged: {})",
        result.n_train, result.xi_max, result.converged
    );

    let dist = testing::InputDistribution {
        dims: bounds.dims.clone(),
        kind: testing::DistKind::Gamma {
            shape: vec![8.0],
            scale: vec![0.03],
            offset: vec![0.0],
        },
        truncate_to: Some((bounds.lower.clone(), bounds.upper.clone())),
    };
    let report = testing::test(&result, &dist, 50_000, 7).unwrap();
    println!(
        "|V25| = {:.5} ± {:.5} pu over 50000 gamma draws ({:.1} ms)",
        report.mean_pu,
        report.std_pu,
        report.elapsed_secs * 1e3
    );
}
