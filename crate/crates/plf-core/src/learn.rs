//! Active learning of voltage surrogates with upper-confidence-bound sampling.
//!
//! The loop alternates acquisition (argmax of `μ + √β·σ` over a Sobol
//! candidate pool), a power flow solve at the chosen injection, and a GP
//! refit. It stops when the probabilistic learning bound — the maximum of
//! `√β·σ` over a fixed coverage grid — drops below the requested tolerance,
//! at which point the surrogate carries a `±ξ_max` error band that holds with
//! probability at least `1 − δ`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acpf::{self, DimensionMap, PowerFlowError, SolveOptions};
use crate::case::{BusId, NetworkCase};
use crate::gp::{GpError, GpModel, Kernel};
use crate::sobol::{SobolSeq, MAX_DIMS};

/// Fixed observation-noise variance for the near-deterministic solver oracle.
pub const ORACLE_NOISE_VARIANCE: f64 = 1e-10;

/// Candidate-pool size per box dimension, regenerated each iteration.
pub const CANDIDATES_PER_DIM: usize = 512;
/// Fixed bound-evaluation grid size per box dimension.
pub const PLB_GRID_PER_DIM: usize = 200;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("invalid uncertainty box: {0}")]
    InvalidBox(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Sobol(#[from] crate::sobol::TooManyDims),
}

/// Rectangular uncertainty region over net injections, per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainBox {
    pub dims: DimensionMap,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl UncertainBox {
    pub fn new(dims: DimensionMap, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, LearnError> {
        if dims.is_empty() {
            return Err(LearnError::InvalidBox("box has no dimensions".into()));
        }
        if dims.len() != lower.len() || dims.len() != upper.len() {
            return Err(LearnError::InvalidBox(format!(
                "box has {} dimensions but {}/{} bounds",
                dims.len(),
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(LearnError::InvalidBox(
                "lower bounds must be strictly below upper bounds".into(),
            ));
        }
        Ok(UncertainBox { dims, lower, upper })
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.ndim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    fn point_at(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, h))| l + t * (h - l))
            .collect()
    }

    /// `count` Sobol points mapped into the box, starting at `start`.
    pub fn sobol_points(&self, start: u32, count: usize) -> Result<Vec<Vec<f64>>, LearnError> {
        let seq = SobolSeq::new(self.ndim())?;
        Ok(seq
            .points(start, count)
            .iter()
            .map(|u| self.point_at(u))
            .collect())
    }

    pub fn sample_uniform<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| rng.random_range(*l..*u))
            .collect()
    }
}

/// Exploration-weight schedule for the confidence bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum BetaSchedule {
    /// `β_{i+1} = 2‖f‖² + 300·γ·ln³(i/δ)` with user-supplied RKHS norm bound
    /// and information-gain constant.
    TheoreticalRkhs { rkhs_norm_bound: f64, gamma_n: f64 },
    /// Finite-candidate-set schedule `β_t = 2·ln(|C|·t²·π²/(6δ))`.
    FiniteCandidate,
    /// Constant β, for ablations.
    Fixed { value: f64 },
}

impl BetaSchedule {
    /// Validate bound parameters.
    pub fn validate(&self) -> Result<(), LearnError> {
        match self {
            BetaSchedule::TheoreticalRkhs {
                rkhs_norm_bound,
                gamma_n,
            } if !(*rkhs_norm_bound > 0.0 && *gamma_n > 0.0) => Err(LearnError::InvalidParameter(
                "RKHS norm bound and gamma must be positive".into(),
            )),
            BetaSchedule::Fixed { value } if !(*value > 0.0) => Err(
                LearnError::InvalidParameter("fixed beta must be positive".into()),
            ),
            _ => Ok(()),
        }
    }

    /// β to use after `n_samples` observations (the `β_{N+1}` of the bound).
    pub fn value(&self, n_samples: usize, delta: f64, n_candidates: usize) -> f64 {
        match self {
            BetaSchedule::TheoreticalRkhs {
                rkhs_norm_bound,
                gamma_n,
            } => {
                let i = n_samples.max(1) as f64;
                2.0 * rkhs_norm_bound * rkhs_norm_bound
                    + 300.0 * gamma_n * (i / delta).ln().powi(3)
            }
            BetaSchedule::FiniteCandidate => {
                let t = (n_samples + 1) as f64;
                let m = n_candidates.max(1) as f64;
                2.0 * (m * t * t * std::f64::consts::PI.powi(2) / (6.0 * delta)).ln()
            }
            BetaSchedule::Fixed { value } => *value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetQuantity {
    #[serde(rename = "Vm")]
    VoltageMagnitude,
}

/// What a surrogate predicts, and the scaling to engineering units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetInfo {
    pub bus: BusId,
    pub quantity: TargetQuantity,
    /// Nominal kV of the target bus; kV output = per-unit × base_kv.
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub x: Vec<f64>,
    pub y: f64,
    /// Learning bound after refitting on this observation, per-unit.
    pub plb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFailure {
    pub attempt: usize,
    pub x: Vec<f64>,
    pub max_mismatch: f64,
}

/// A learned surrogate: the "semi-explicit" voltage solution over a box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnResult {
    pub model: GpModel,
    pub target: TargetInfo,
    pub input_box: UncertainBox,
    /// β backing the final bound (`β_{N+1}`).
    pub beta_final: f64,
    /// Achieved learning bound, per-unit.
    pub xi_max: f64,
    pub n_train: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    /// Solver non-convergences encountered while sampling; the points were
    /// skipped but still count against the budget.
    pub oracle_failures: Vec<OracleFailure>,
}

impl LearnResult {
    /// Trace as CSV: `iteration, x0.., y, plb`.
    pub fn trace_csv(&self) -> String {
        let d = self.input_box.ndim();
        let mut out = String::from("iteration");
        for k in 0..d {
            out.push_str(&format!(",x{k}"));
        }
        out.push_str(",y,plb\n");
        for (i, entry) in self.trace.iter().enumerate() {
            out.push_str(&format!("{}", i + 1));
            for v in &entry.x {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{},{}\n", entry.y, entry.plb));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<LearnResult, LearnError> {
        serde_json::from_str(text).map_err(|e| LearnError::InvalidParameter(e.to_string()))
    }
}

/// Argmax of the upper confidence bound `μ(x) + √β·σ(x)` over `candidates`.
///
/// Ties break toward the lowest candidate index. A winner that collides with
/// a training input (within 1e-12) is replaced by a uniform random point from
/// the box.
pub fn acquire_next<R: Rng>(
    model: &GpModel,
    bounds: &UncertainBox,
    beta: f64,
    candidates: &[Vec<f64>],
    rng: &mut R,
) -> Result<Vec<f64>, LearnError> {
    if candidates.is_empty() {
        return Err(LearnError::EmptyCandidateSet);
    }
    let sqrt_beta = beta.max(0.0).sqrt();
    let mut best_idx = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let (mean, std) = model.posterior(c);
        let score = mean + sqrt_beta * std;
        if score > best_score {
            best_score = score;
            best_idx = i;
        }
    }
    let chosen = &candidates[best_idx];
    if !collides(model.x_train(), chosen) {
        return Ok(chosen.clone());
    }
    // Algorithm fallback: draw uniformly until clear of the training set
    for _ in 0..100 {
        let draw = bounds.sample_uniform(rng);
        if !collides(model.x_train(), &draw) {
            return Ok(draw);
        }
    }
    Err(LearnError::InvalidParameter(
        "could not draw a non-colliding random point".into(),
    ))
}

fn collides(training: &[Vec<f64>], x: &[f64]) -> bool {
    training.iter().any(|row| {
        row.iter()
            .zip(x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            <= 1e-24
    })
}

/// The probabilistic learning bound: `max over grid of √β·σ(x)`.
pub fn compute_plb(
    model: &GpModel,
    bounds: &UncertainBox,
    beta: f64,
    grid: &[Vec<f64>],
) -> Result<f64, LearnError> {
    if grid.is_empty() {
        return Err(LearnError::EmptyCandidateSet);
    }
    debug_assert!(grid.iter().all(|p| bounds.contains(p)));
    let sqrt_beta = beta.max(0.0).sqrt();
    let mut worst: f64 = 0.0;
    for point in grid {
        let (_, std) = model.posterior(point);
        worst = worst.max(sqrt_beta * std);
    }
    Ok(worst)
}

/// Conservative kernel used before enough observations exist to fit one.
fn bootstrap_kernel(bounds: &UncertainBox) -> Kernel {
    let ls: Vec<f64> = bounds.widths().iter().map(|w| 0.25 * w).collect();
    Kernel::squared_exponential(0.01, ls).expect("positive by construction")
}

/// Hyperparameters are re-optimized every five observations; in between, the
/// factorization is rebuilt with the previous kernel.
fn should_refit_hyperparameters(n: usize) -> bool {
    n >= 5 && n.is_multiple_of(5)
}

/// Learn `|V_target|` as a function of the boxed injections.
#[allow(clippy::too_many_arguments)]
pub fn learn(
    case: &NetworkCase,
    target: BusId,
    bounds: &UncertainBox,
    delta: f64,
    xi_tol: f64,
    schedule: &BetaSchedule,
    budget: usize,
    seed: u64,
) -> Result<LearnResult, LearnError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(LearnError::InvalidParameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if !(xi_tol > 0.0) {
        return Err(LearnError::InvalidParameter(format!(
            "xi tolerance must be positive, got {xi_tol}"
        )));
    }
    schedule.validate()?;
    let target_idx = case
        .bus_index(target)
        .ok_or(LearnError::UnknownBus(target))?;
    for (bus, _) in bounds.dims.iter() {
        if case.bus_index(*bus).is_none() {
            return Err(LearnError::UnknownBus(*bus));
        }
    }
    let d = bounds.ndim();
    if d > 2 * case.n() {
        return Err(LearnError::InvalidBox(format!(
            "box has {d} dimensions, network admits at most {}",
            2 * case.n()
        )));
    }
    if d > MAX_DIMS {
        return Err(LearnError::Sobol(crate::sobol::TooManyDims(d)));
    }

    let target_info = TargetInfo {
        bus: target,
        quantity: TargetQuantity::VoltageMagnitude,
        base_kv: case.buses()[target_idx].base_kv,
    };
    let n_candidates = CANDIDATES_PER_DIM * d;
    let plb_grid = bounds.sobol_points(0, PLB_GRID_PER_DIM * d)?;
    let candidate_offset = (PLB_GRID_PER_DIM * d) as u32;
    let solve_opts = SolveOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut failures: Vec<OracleFailure> = Vec::new();
    let mut kernel = bootstrap_kernel(bounds);
    let mut model = GpModel::prior(kernel.clone(), ORACLE_NOISE_VARIANCE);
    let mut beta = schedule.value(0, delta, n_candidates);
    let mut plb = compute_plb(&model, bounds, beta, &plb_grid)?;
    let mut attempts = 0usize;

    while attempts < budget {
        // first point is uniform random; afterwards the UCB rule picks
        let x_next = if xs.is_empty() {
            bounds.sample_uniform(&mut rng)
        } else {
            // wrapping keeps indices valid for arbitrarily large budgets
            let start = candidate_offset
                .wrapping_add((attempts as u32).wrapping_mul(n_candidates as u32));
            let candidates = bounds.sobol_points(start, n_candidates)?;
            acquire_next(&model, bounds, beta, &candidates, &mut rng)?
        };
        attempts += 1;

        match acpf::solve_injection(case, &bounds.dims, &x_next, &solve_opts) {
            Ok(sol) => {
                xs.push(x_next.clone());
                ys.push(sol.vm[target_idx]);
            }
            Err(PowerFlowError::NonConvergence { max_mismatch, .. }) => {
                failures.push(OracleFailure {
                    attempt: attempts,
                    x: x_next,
                    max_mismatch,
                });
                continue;
            }
            Err(PowerFlowError::SingularJacobian { .. }) => {
                failures.push(OracleFailure {
                    attempt: attempts,
                    x: x_next,
                    max_mismatch: f64::INFINITY,
                });
                continue;
            }
            Err(e) => {
                return Err(LearnError::InvalidParameter(format!(
                    "power flow oracle rejected the sample: {e}"
                )))
            }
        }

        let n = xs.len();
        if should_refit_hyperparameters(n) {
            kernel = crate::gp::optimize_kernel(&xs, &ys, ORACLE_NOISE_VARIANCE, &bounds.widths())?;
        }
        model = GpModel::fit_with_kernel(&xs, &ys, ORACLE_NOISE_VARIANCE, kernel.clone())?;
        beta = schedule.value(n, delta, n_candidates);
        plb = compute_plb(&model, bounds, beta, &plb_grid)?;
        trace.push(TraceEntry {
            x: xs[n - 1].clone(),
            y: ys[n - 1],
            plb,
        });

        if plb <= xi_tol {
            return Ok(LearnResult {
                model,
                target: target_info,
                input_box: bounds.clone(),
                beta_final: beta,
                xi_max: plb,
                n_train: n,
                converged: true,
                trace,
                oracle_failures: failures,
            });
        }
    }

    // budget exhausted: best-so-far, flagged unconverged
    Ok(LearnResult {
        model,
        target: target_info,
        input_box: bounds.clone(),
        beta_final: beta,
        xi_max: plb,
        n_train: xs.len(),
        converged: false,
        trace,
        oracle_failures: failures,
    })
}

/// Learn several targets independently over the same box.
///
/// Targets run in parallel, each with its own deterministic RNG stream, so
/// the results equal sequential [`learn`] calls with the same derived seeds.
#[allow(clippy::too_many_arguments)]
pub fn learn_many(
    case: &NetworkCase,
    targets: &[BusId],
    bounds: &UncertainBox,
    delta: f64,
    xi_tol: f64,
    schedule: &BetaSchedule,
    budget: usize,
    seed: u64,
) -> Vec<Result<LearnResult, LearnError>> {
    targets
        .par_iter()
        .enumerate()
        .map(|(k, target)| {
            learn(
                case,
                *target,
                bounds,
                delta,
                xi_tol,
                schedule,
                budget,
                derive_seed(seed, k as u64),
            )
        })
        .collect()
}

/// Per-target RNG stream: a splitmix64 step over the base seed and index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
