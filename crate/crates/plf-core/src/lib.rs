//! Probabilistic load flow with Gaussian-process surrogates.
//!
//! The pipeline has two halves. The *learning* half drives a Newton-Raphson
//! AC power flow solver with an upper-confidence-bound sampling rule to fit a
//! GP surrogate `|V_bus| = f(injections)` over a rectangular uncertainty box,
//! stopping once a probabilistic learning bound on the worst-case error drops
//! below a requested tolerance. The *testing* half pushes arbitrary input
//! distributions through the surrogate to produce voltage statistics, and can
//! run a paired Monte-Carlo baseline through the full solver for validation.
//!
//! Modules follow the pipeline stages:
//! - [`case`]: network case parsing (MATPOWER `.m` subset and a JSON mirror)
//!   and admittance-matrix construction.
//! - [`acpf`]: the deterministic Newton-Raphson solver used as the sampling
//!   oracle.
//! - [`gp`]: exact GP regression with a squared-exponential kernel.
//! - [`learn`]: the active-learning loop, β schedules and learning bound.
//! - [`testing`]: distribution sampling, surrogate testing, Monte-Carlo
//!   baseline and the ε_v error index.

// validation comparisons are written `!(x > 0.0)` so NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acpf;
pub mod case;
pub mod gp;
pub mod learn;
pub mod sobol;
pub mod testing;
