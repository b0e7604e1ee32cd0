//! Shared helpers for the integration suites: fixture loading and the
//! brute-force GP oracle kept independent of the library's Cholesky path.

// each integration binary uses a different subset of these helpers
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use plf_core::case::{parse_case, NetworkCase};
use plf_core::gp::Kernel;

pub fn data_path(name: &str) -> String {
    format!("{}/../../data/{}", env!("CARGO_MANIFEST_DIR"), name)
}

pub fn load_case(name: &str) -> NetworkCase {
    let path = data_path(name);
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("cannot read {path}: {e}"));
    parse_case(&text).unwrap_or_else(|e| panic!("cannot parse {path}: {e}"))
}

#[derive(Deserialize)]
pub struct Golden {
    pub bus_ids: Vec<i64>,
    pub vm: Vec<f64>,
    pub va_rad: Vec<f64>,
    pub iterations_flat_tol1e8: usize,
}

pub fn golden_case30() -> Golden {
    serde_json::from_str(include_str!("../golden/case30_solution.json")).unwrap()
}

pub fn golden_case118() -> Golden {
    serde_json::from_str(include_str!("../golden/case118_solution.json")).unwrap()
}

/// Posterior mean/variance by explicit dense inversion of the covariance
/// matrix. Same equations as the library, different linear-algebra route:
/// this path inverts `K` outright instead of factoring it.
pub fn dense_inverse_posterior(
    x: &[Vec<f64>],
    y: &[f64],
    noise_variance: f64,
    kernel: &Kernel,
    probe: &[f64],
) -> (f64, f64) {
    let n = x.len();
    let offset = y.iter().sum::<f64>() / n as f64;
    let k = DMatrix::<f64>::from_fn(n, n, |i, j| {
        kernel.eval(&x[i], &x[j]).unwrap() + if i == j { noise_variance } else { 0.0 }
    });
    let k_inv = k.try_inverse().expect("oracle covariance must be invertible");
    let k_star = DVector::<f64>::from_fn(n, |i, _| kernel.eval(&x[i], probe).unwrap());
    let y_centered = DVector::<f64>::from_fn(n, |i, _| y[i] - offset);
    let mean = k_star.dot(&(&k_inv * &y_centered)) + offset;
    let var = kernel.eval(probe, probe).unwrap() - k_star.dot(&(&k_inv * &k_star));
    (mean, var.max(0.0))
}
