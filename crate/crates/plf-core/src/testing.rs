//! Testing stage: push input uncertainty through a learned surrogate, run the
//! Monte-Carlo baseline through the full solver, and compare the two.
//!
//! Sampling is deterministic: row `k` draws from an RNG stream derived from
//! `(seed, k)`, so results are reproducible regardless of how the downstream
//! solves are parallelized.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acpf::{self, DimensionMap, PowerFlowError, SolveOptions};
use crate::case::{BusId, NetworkCase};
use crate::gp::GpError;
use crate::learn::{derive_seed, LearnResult};

#[derive(Debug, Error)]
pub enum TestError {
    #[error("distribution has {got} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rejection sampling stalled: {accepted} accepted of {proposed} proposals")]
    RejectionStall { accepted: usize, proposed: usize },
    #[error("{failed} of {total} power flow samples failed to converge")]
    ExcessiveFailures { failed: usize, total: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

/// Families of input uncertainty, parameterized per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistKind {
    Uniform {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Normal {
        mean: Vec<f64>,
        std: Vec<f64>,
    },
    /// `offset + scale · Gamma(shape, 1)` per dimension; a negative scale
    /// mirrors the distribution (uncertain load entering as net injection).
    Gamma {
        shape: Vec<f64>,
        scale: Vec<f64>,
        #[serde(default)]
        offset: Vec<f64>,
    },
    Empirical {
        samples: Vec<Vec<f64>>,
    },
}

/// An input distribution over injection coordinates, optionally truncated to
/// a box by rejection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDistribution {
    pub dims: DimensionMap,
    #[serde(flatten)]
    pub kind: DistKind,
    /// Resample draws falling outside these bounds.
    #[serde(default)]
    pub truncate_to: Option<(Vec<f64>, Vec<f64>)>,
}

impl InputDistribution {
    pub fn validate(&self) -> Result<(), TestError> {
        let d = self.dims.len();
        if d == 0 {
            return Err(TestError::InvalidParameter(
                "distribution has no dimensions".into(),
            ));
        }
        let check_len = |len: usize, what: &str| {
            if len != d {
                Err(TestError::DimensionMismatch {
                    expected: d,
                    got: len,
                })
            } else {
                Ok(())
            }
            .map_err(|e| {
                TestError::InvalidParameter(format!("{what}: {e}"))
            })
        };
        match &self.kind {
            DistKind::Uniform { lower, upper } => {
                check_len(lower.len(), "uniform lower")?;
                check_len(upper.len(), "uniform upper")?;
                if lower.iter().zip(upper).any(|(l, u)| l > u) {
                    return Err(TestError::InvalidParameter(
                        "uniform lower bound exceeds upper bound".into(),
                    ));
                }
            }
            DistKind::Normal { mean, std } => {
                check_len(mean.len(), "normal mean")?;
                check_len(std.len(), "normal std")?;
                if std.iter().any(|s| !(*s > 0.0)) {
                    return Err(TestError::InvalidParameter(
                        "normal std must be positive".into(),
                    ));
                }
            }
            DistKind::Gamma {
                shape,
                scale,
                offset,
            } => {
                check_len(shape.len(), "gamma shape")?;
                check_len(scale.len(), "gamma scale")?;
                if !offset.is_empty() {
                    check_len(offset.len(), "gamma offset")?;
                }
                if shape.iter().any(|a| !(*a > 0.0)) {
                    return Err(TestError::InvalidParameter(
                        "gamma shape must be positive".into(),
                    ));
                }
                if scale.iter().any(|b| *b == 0.0 || !b.is_finite()) {
                    return Err(TestError::InvalidParameter(
                        "gamma scale must be nonzero".into(),
                    ));
                }
            }
            DistKind::Empirical { samples } => {
                if samples.is_empty() {
                    return Err(TestError::InvalidParameter(
                        "empirical distribution has no samples".into(),
                    ));
                }
                if samples.iter().any(|r| r.len() != d) {
                    return Err(TestError::InvalidParameter(
                        "empirical sample rows have wrong dimension".into(),
                    ));
                }
            }
        }
        if let Some((lo, hi)) = &self.truncate_to {
            check_len(lo.len(), "truncation lower")?;
            check_len(hi.len(), "truncation upper")?;
        }
        Ok(())
    }

    fn accepts(&self, x: &[f64]) -> bool {
        match &self.truncate_to {
            None => true,
            Some((lo, hi)) => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h),
        }
    }
}

enum Sampler {
    Uniform(Vec<(f64, f64)>),
    Normal(Vec<rand_distr::Normal<f64>>),
    Gamma(Vec<(rand_distr::Gamma<f64>, f64, f64)>), // (gamma(shape, |scale|), sign, offset)
    Empirical(Vec<Vec<f64>>),
}

impl Sampler {
    fn prepare(kind: &DistKind) -> Result<Sampler, TestError> {
        Ok(match kind {
            DistKind::Uniform { lower, upper } => Sampler::Uniform(
                lower.iter().copied().zip(upper.iter().copied()).collect(),
            ),
            DistKind::Normal { mean, std } => Sampler::Normal(
                mean.iter()
                    .zip(std)
                    .map(|(m, s)| {
                        rand_distr::Normal::new(*m, *s)
                            .map_err(|e| TestError::InvalidParameter(e.to_string()))
                    })
                    .collect::<Result<_, _>>()?,
            ),
            DistKind::Gamma {
                shape,
                scale,
                offset,
            } => Sampler::Gamma(
                shape
                    .iter()
                    .enumerate()
                    .map(|(k, a)| {
                        let b = scale[k];
                        let off = offset.get(k).copied().unwrap_or(0.0);
                        rand_distr::Gamma::new(*a, b.abs())
                            .map(|g| (g, b.signum(), off))
                            .map_err(|e| TestError::InvalidParameter(e.to_string()))
                    })
                    .collect::<Result<_, _>>()?,
            ),
            DistKind::Empirical { samples } => Sampler::Empirical(samples.clone()),
        })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Sampler::Uniform(ranges) => ranges
                .iter()
                .map(|(l, u)| if l == u { *l } else { rng.random_range(*l..*u) })
                .collect(),
            Sampler::Normal(dists) => dists.iter().map(|d| d.sample(rng)).collect(),
            Sampler::Gamma(dists) => dists
                .iter()
                .map(|(g, sign, off)| off + sign * g.sample(rng))
                .collect(),
            Sampler::Empirical(rows) => rows[rng.random_range(0..rows.len())].clone(),
        }
    }
}

/// Draw `n` i.i.d. rows; truncation resamples rejected draws.
pub fn sample(dist: &InputDistribution, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, TestError> {
    dist.validate()?;
    if n == 0 {
        return Err(TestError::InvalidParameter(
            "sample count must be at least 1".into(),
        ));
    }
    let sampler = Sampler::prepare(&dist.kind)?;
    let mut rows = Vec::with_capacity(n);
    let mut proposed = 0usize;
    for k in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        let mut tries = 0usize;
        loop {
            let draw = sampler.draw(&mut rng);
            proposed += 1;
            tries += 1;
            if dist.accepts(&draw) {
                rows.push(draw);
                break;
            }
            if tries >= 100_000 {
                return Err(TestError::RejectionStall {
                    accepted: k,
                    proposed,
                });
            }
        }
    }
    if (rows.len() as f64) < 0.01 * proposed as f64 {
        return Err(TestError::RejectionStall {
            accepted: rows.len(),
            proposed,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges, per-unit; `edges.len() == counts.len() + 1`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// CSV with one row per bin: `edge_lo,edge_hi,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("edge_lo,edge_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        out
    }
}

/// Output statistics of one testing run (surrogate or Monte-Carlo).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    /// Samples included in the statistics.
    pub n_samples: usize,
    /// Power flow samples excluded for non-convergence (Monte-Carlo only).
    pub excluded: usize,
    pub mean_pu: f64,
    pub std_pu: f64,
    pub mean_kv: f64,
    pub std_kv: f64,
    pub histogram: Histogram,
    /// `(percent, per-unit value)` at 1, 5, 50, 95, 99%.
    pub quantiles_pu: Vec<(f64, f64)>,
    /// Learning bound carried over from the surrogate; zero for Monte-Carlo.
    pub xi_max_pu: f64,
    /// GP predictive standard deviation over the samples, when requested.
    /// Kept out of the histogram, which summarizes posterior means only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictive_std_pu: Option<PredictiveStd>,
    pub elapsed_secs: f64,
}

/// Summary of the surrogate's own uncertainty across a test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveStd {
    pub mean: f64,
    pub max: f64,
}

impl TestReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<TestReport, TestError> {
        serde_json::from_str(text).map_err(|e| TestError::InvalidParameter(e.to_string()))
    }
}

/// Average percentage relative error between paired Monte-Carlo and surrogate
/// voltages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorIndex {
    pub eps_v_percent: f64,
    pub n_samples: usize,
}

/// Evaluate the surrogate on `n` draws from `dist` and summarize the
/// posterior means.
pub fn test(
    result: &LearnResult,
    dist: &InputDistribution,
    n: usize,
    seed: u64,
) -> Result<TestReport, TestError> {
    test_with_bins(result, dist, n, seed, None)
}

pub fn test_with_bins(
    result: &LearnResult,
    dist: &InputDistribution,
    n: usize,
    seed: u64,
    bins: Option<usize>,
) -> Result<TestReport, TestError> {
    test_detailed(result, dist, n, seed, bins, false)
}

/// As [`test()`], optionally summarizing the surrogate's predictive standard
/// deviation alongside the mean statistics.
pub fn test_detailed(
    result: &LearnResult,
    dist: &InputDistribution,
    n: usize,
    seed: u64,
    bins: Option<usize>,
    predictive_std: bool,
) -> Result<TestReport, TestError> {
    if dist.dims != result.input_box.dims {
        return Err(TestError::DimensionMismatch {
            expected: result.input_box.dims.len(),
            got: dist.dims.len(),
        });
    }
    let samples = sample(dist, n, seed)?;
    let started = Instant::now();
    let (means, stds) = result.model.posterior_batch(&samples)?;
    let elapsed = started.elapsed().as_secs_f64();
    let mut report = report_from_values(
        &means,
        result.target.base_kv,
        result.xi_max,
        elapsed,
        0,
        bins,
    );
    if predictive_std {
        report.predictive_std_pu = Some(PredictiveStd {
            mean: stds.iter().sum::<f64>() / stds.len() as f64,
            max: stds.iter().cloned().fold(0.0, f64::max),
        });
    }
    Ok(report)
}

/// Monte-Carlo baseline: `n` independent solver runs through `dist`.
///
/// Non-converged samples are excluded from the statistics and counted; more
/// than 1% of them is an error.
pub fn mcs(
    case: &NetworkCase,
    target: BusId,
    dist: &InputDistribution,
    n: usize,
    seed: u64,
) -> Result<TestReport, TestError> {
    mcs_with_bins(case, target, dist, n, seed, None)
}

pub fn mcs_with_bins(
    case: &NetworkCase,
    target: BusId,
    dist: &InputDistribution,
    n: usize,
    seed: u64,
    bins: Option<usize>,
) -> Result<TestReport, TestError> {
    let target_idx = case.bus_index(target).ok_or(TestError::UnknownBus(target))?;
    let samples = sample(dist, n, seed)?;
    let opts = SolveOptions::default();
    let started = Instant::now();
    let solved: Vec<Option<f64>> = samples
        .par_iter()
        .map(|row| {
            acpf::solve_injection(case, &dist.dims, row, &opts)
                .ok()
                .map(|sol| sol.vm[target_idx])
        })
        .collect();
    let elapsed = started.elapsed().as_secs_f64();
    let values: Vec<f64> = solved.iter().flatten().copied().collect();
    let excluded = n - values.len();
    if excluded * 100 > n {
        return Err(TestError::ExcessiveFailures {
            failed: excluded,
            total: n,
        });
    }
    Ok(report_from_values(
        &values,
        case.buses()[target_idx].base_kv,
        0.0,
        elapsed,
        excluded,
        bins,
    ))
}

/// Paired ε_v: the same sample matrix goes through both the solver and the
/// surrogate, and the average percentage relative error is taken per pair.
pub fn error_index(
    samples: &[Vec<f64>],
    result: &LearnResult,
    case: &NetworkCase,
    target: BusId,
) -> Result<ErrorIndex, TestError> {
    let target_idx = case.bus_index(target).ok_or(TestError::UnknownBus(target))?;
    if samples.is_empty() {
        return Err(TestError::InvalidParameter(
            "error index needs at least one sample".into(),
        ));
    }
    let (gp_means, _) = result.model.posterior_batch(samples)?;
    let opts = SolveOptions::default();
    let truths: Vec<Option<f64>> = samples
        .par_iter()
        .map(|row| {
            acpf::solve_injection(case, &result.input_box.dims, row, &opts)
                .ok()
                .map(|sol| sol.vm[target_idx])
        })
        .collect();

    let mut total = 0.0;
    let mut used = 0usize;
    for (truth, gp) in truths.iter().zip(&gp_means) {
        if let Some(v_true) = truth {
            total += ((v_true - gp) / v_true).abs();
            used += 1;
        }
    }
    let failed = samples.len() - used;
    if failed * 100 > samples.len() {
        return Err(TestError::ExcessiveFailures {
            failed,
            total: samples.len(),
        });
    }
    Ok(ErrorIndex {
        eps_v_percent: total / used as f64 * 100.0,
        n_samples: used,
    })
}

fn report_from_values(
    values: &[f64],
    base_kv: f64,
    xi_max: f64,
    elapsed_secs: f64,
    excluded: usize,
    bins: Option<usize>,
) -> TestReport {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantiles = [1.0, 5.0, 50.0, 95.0, 99.0]
        .iter()
        .map(|p| (*p, quantile_sorted(&sorted, p / 100.0)))
        .collect();
    TestReport {
        n_samples: n,
        excluded,
        mean_pu: mean,
        std_pu: std,
        mean_kv: mean * base_kv,
        std_kv: std * base_kv,
        histogram: histogram(&sorted, bins),
        quantiles_pu: quantiles,
        xi_max_pu: xi_max,
        predictive_std_pu: None,
        elapsed_secs,
    }
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Freedman-Diaconis bins by default (Sturges when the IQR degenerates).
fn histogram(sorted: &[f64], bins: Option<usize>) -> Histogram {
    let n = sorted.len();
    let lo = sorted[0];
    let hi = sorted[n - 1];
    if lo == hi {
        let eps = lo.abs().max(1.0) * 1e-9;
        return Histogram {
            edges: vec![lo - eps, hi + eps],
            counts: vec![n as u64],
        };
    }
    let nbins = bins.unwrap_or_else(|| {
        let iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
        let width = 2.0 * iqr / (n as f64).cbrt();
        if width > 0.0 {
            (((hi - lo) / width).ceil() as usize).clamp(1, 400)
        } else {
            (1.0 + (n as f64).log2().ceil()) as usize
        }
    });
    let edges: Vec<f64> = (0..=nbins)
        .map(|i| lo + (hi - lo) * i as f64 / nbins as f64)
        .collect();
    let mut counts = vec![0u64; nbins];
    for &v in sorted {
        let mut b = ((v - lo) / (hi - lo) * nbins as f64) as usize;
        if b >= nbins {
            b = nbins - 1;
        }
        counts[b] += 1;
    }
    Histogram { edges, counts }
}
