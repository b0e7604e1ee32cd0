//! Exact Gaussian-process regression with a squared-exponential kernel.
//!
//! Posterior inference goes through a Cholesky factorization of
//! `K = k(X, X) + σ_ε² I`; mean queries are O(N), variance queries O(N²).
//! Hyperparameters are chosen by maximizing the log marginal likelihood with
//! a multi-start Nelder-Mead search in log space. Outputs are mean-centered
//! internally (the stored offset realizes the zero-mean prior without losing
//! the ~1.0 pu level of voltage data).

use nalgebra::{DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

type CholeskyFactor = nalgebra::linalg::Cholesky<f64, Dyn>;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance matrix is not positive definite even after jitter escalation")]
    FactorizationFailure,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Stationary covariance function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum Kernel {
    SquaredExponential {
        /// σ_f², in squared output units.
        signal_variance: f64,
        /// One positive lengthscale per input dimension.
        lengthscales: Vec<f64>,
    },
}

impl Kernel {
    pub fn squared_exponential(
        signal_variance: f64,
        lengthscales: Vec<f64>,
    ) -> Result<Self, GpError> {
        if !(signal_variance > 0.0) {
            return Err(GpError::InvalidParameter(format!(
                "signal variance must be positive, got {signal_variance}"
            )));
        }
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0)) {
            return Err(GpError::InvalidParameter(
                "lengthscales must be positive and nonempty".into(),
            ));
        }
        Ok(Kernel::SquaredExponential {
            signal_variance,
            lengthscales,
        })
    }

    pub fn dims(&self) -> usize {
        match self {
            Kernel::SquaredExponential { lengthscales, .. } => lengthscales.len(),
        }
    }

    pub fn signal_variance(&self) -> f64 {
        match self {
            Kernel::SquaredExponential {
                signal_variance, ..
            } => *signal_variance,
        }
    }

    pub fn lengthscales(&self) -> &[f64] {
        match self {
            Kernel::SquaredExponential { lengthscales, .. } => lengthscales,
        }
    }

    /// `σ_f² · exp(−½ Σ_d ((a_d − b_d)/ℓ_d)²)`
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64, GpError> {
        let d = self.dims();
        if a.len() != d {
            return Err(GpError::DimensionMismatch {
                expected: d,
                got: a.len(),
            });
        }
        if b.len() != d {
            return Err(GpError::DimensionMismatch {
                expected: d,
                got: b.len(),
            });
        }
        Ok(self.eval_unchecked(a, b))
    }

    fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::SquaredExponential {
                signal_variance,
                lengthscales,
            } => {
                let mut z = 0.0;
                for ((&ai, &bi), &l) in a.iter().zip(b).zip(lengthscales) {
                    let t = (ai - bi) / l;
                    z += t * t;
                }
                signal_variance * (-0.5 * z).exp()
            }
        }
    }
}

/// Free-function form of [`Kernel::eval`].
pub fn kernel_eval(kernel: &Kernel, a: &[f64], b: &[f64]) -> Result<f64, GpError> {
    kernel.eval(a, b)
}

const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-6;

#[derive(Clone, Serialize, Deserialize)]
struct GpModelData {
    x: Vec<Vec<f64>>,
    /// Mean-centered outputs.
    y: Vec<f64>,
    offset: f64,
    kernel: Kernel,
    noise_variance: f64,
}

/// Fitted GP surrogate. Immutable once built; posterior queries are safe to
/// run concurrently.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "GpModelData", into = "GpModelData")]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y_centered: DVector<f64>,
    offset: f64,
    kernel: Kernel,
    noise_variance: f64,
    chol: Option<CholeskyFactor>,
    alpha: DVector<f64>,
}

impl std::fmt::Debug for GpModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GpModel")
            .field("n_train", &self.n_train())
            .field("dims", &self.dims())
            .field("kernel", &self.kernel)
            .field("noise_variance", &self.noise_variance)
            .field("offset", &self.offset)
            .finish()
    }
}

impl TryFrom<GpModelData> for GpModel {
    type Error = GpError;
    fn try_from(d: GpModelData) -> Result<Self, GpError> {
        GpModel::from_centered(d.x, d.y, d.offset, d.kernel, d.noise_variance)
    }
}

impl From<GpModel> for GpModelData {
    fn from(m: GpModel) -> Self {
        GpModelData {
            x: m.x,
            y: m.y_centered.iter().copied().collect(),
            offset: m.offset,
            kernel: m.kernel,
            noise_variance: m.noise_variance,
        }
    }
}

impl GpModel {
    /// Prior-only model with no observations.
    pub fn prior(kernel: Kernel, noise_variance: f64) -> GpModel {
        GpModel {
            x: Vec::new(),
            y_centered: DVector::zeros(0),
            offset: 0.0,
            kernel,
            noise_variance,
            chol: None,
            alpha: DVector::zeros(0),
        }
    }

    /// Fit with hyperparameters selected by marginal-likelihood maximization.
    pub fn fit(x: &[Vec<f64>], y: &[f64], noise_variance: f64) -> Result<GpModel, GpError> {
        let widths = observed_widths(x)?;
        let kernel = optimize_kernel(x, y, noise_variance, &widths)?;
        GpModel::fit_with_kernel(x, y, noise_variance, kernel)
    }

    /// Fit with fixed hyperparameters.
    pub fn fit_with_kernel(
        x: &[Vec<f64>],
        y: &[f64],
        noise_variance: f64,
        kernel: Kernel,
    ) -> Result<GpModel, GpError> {
        if x.is_empty() {
            return Err(GpError::EmptyTrainingSet);
        }
        if x.len() != y.len() {
            return Err(GpError::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        let d = x[0].len();
        if kernel.dims() != d {
            return Err(GpError::DimensionMismatch {
                expected: d,
                got: kernel.dims(),
            });
        }
        if x.iter().any(|row| row.len() != d) {
            return Err(GpError::InvalidParameter(
                "training rows have inconsistent dimensions".into(),
            ));
        }
        if !(noise_variance >= 0.0) {
            return Err(GpError::InvalidParameter(
                "noise variance must be non-negative".into(),
            ));
        }

        let (xm, ym) = merge_duplicates(x, y);
        let offset = ym.iter().sum::<f64>() / ym.len() as f64;
        let y_centered: Vec<f64> = ym.iter().map(|v| v - offset).collect();
        GpModel::from_centered(xm, y_centered, offset, kernel, noise_variance)
    }

    fn from_centered(
        x: Vec<Vec<f64>>,
        y_centered: Vec<f64>,
        offset: f64,
        kernel: Kernel,
        noise_variance: f64,
    ) -> Result<GpModel, GpError> {
        if x.is_empty() {
            let mut prior = GpModel::prior(kernel, noise_variance);
            prior.offset = offset;
            return Ok(prior);
        }
        let n = x.len();
        let base = DMatrix::<f64>::from_fn(n, n, |i, j| kernel.eval_unchecked(&x[i], &x[j]));
        let y_centered = DVector::from_vec(y_centered);

        // jitter is a repair: first attempt is unperturbed
        let mut jitter = 0.0;
        loop {
            let mut k = base.clone();
            for i in 0..n {
                k[(i, i)] += noise_variance + jitter;
            }
            if let Some(chol) = k.cholesky() {
                let alpha = chol.solve(&y_centered);
                return Ok(GpModel {
                    x,
                    y_centered,
                    offset,
                    kernel,
                    noise_variance,
                    chol: Some(chol),
                    alpha,
                });
            }
            jitter = if jitter == 0.0 {
                JITTER_START
            } else {
                jitter * 10.0
            };
            if jitter > JITTER_MAX {
                return Err(GpError::FactorizationFailure);
            }
        }
    }

    pub fn n_train(&self) -> usize {
        self.x.len()
    }
    pub fn dims(&self) -> usize {
        self.kernel.dims()
    }
    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }
    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }
    pub fn offset(&self) -> f64 {
        self.offset
    }
    pub fn x_train(&self) -> &[Vec<f64>] {
        &self.x
    }

    /// Training outputs with the offset restored.
    pub fn y_train(&self) -> Vec<f64> {
        self.y_centered.iter().map(|v| v + self.offset).collect()
    }

    /// Posterior mean and standard deviation at one point.
    ///
    /// Panics if the query dimension does not match the kernel; use
    /// [`GpModel::posterior_batch`] for fallible input paths.
    pub fn posterior(&self, at: &[f64]) -> (f64, f64) {
        assert_eq!(
            at.len(),
            self.dims(),
            "posterior query dimension mismatch"
        );
        let kxx = self.kernel.eval_unchecked(at, at);
        let Some(chol) = &self.chol else {
            return (self.offset, kxx.max(0.0).sqrt());
        };
        let n = self.x.len();
        let kstar = DVector::from_fn(n, |i, _| self.kernel.eval_unchecked(&self.x[i], at));
        let mean = kstar.dot(&self.alpha) + self.offset;
        let w = chol.solve(&kstar);
        let var = (kxx - kstar.dot(&w)).max(0.0);
        (mean, var.sqrt())
    }

    /// Elementwise posterior over many points.
    ///
    /// Rows are independent, so large batches are evaluated in parallel;
    /// results do not depend on the partitioning.
    pub fn posterior_batch(&self, xs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), GpError> {
        let d = self.dims();
        if let Some(bad) = xs.iter().find(|row| row.len() != d) {
            return Err(GpError::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        let pairs: Vec<(f64, f64)> = if xs.len() >= 4096 {
            xs.par_iter().map(|row| self.posterior(row)).collect()
        } else {
            xs.iter().map(|row| self.posterior(row)).collect()
        };
        Ok(pairs.into_iter().unzip())
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.x.len();
        if n == 0 {
            return 0.0;
        }
        let chol = self.chol.as_ref().expect("fitted model has a factor");
        let mut log_det_half = 0.0;
        let l = chol.l_dirty();
        for i in 0..n {
            log_det_half += l[(i, i)].ln();
        }
        -0.5 * self.y_centered.dot(&self.alpha)
            - log_det_half
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<GpModel, GpError> {
        serde_json::from_str(text).map_err(|e| GpError::InvalidParameter(e.to_string()))
    }
}

/// Rows closer than 1e-12 are treated as the same input; their outputs are
/// averaged.
fn merge_duplicates(x: &[Vec<f64>], y: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(x.len());
    let mut sums: Vec<f64> = Vec::with_capacity(x.len());
    let mut counts: Vec<usize> = Vec::with_capacity(x.len());
    'rows: for (row, &val) in x.iter().zip(y) {
        for (j, kept) in xs.iter().enumerate() {
            let d2: f64 = kept
                .iter()
                .zip(row)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 <= 1e-24 {
                sums[j] += val;
                counts[j] += 1;
                continue 'rows;
            }
        }
        xs.push(row.clone());
        sums.push(val);
        counts.push(1);
    }
    let ys = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| s / *c as f64)
        .collect();
    (xs, ys)
}

fn observed_widths(x: &[Vec<f64>]) -> Result<Vec<f64>, GpError> {
    if x.is_empty() {
        return Err(GpError::EmptyTrainingSet);
    }
    let d = x[0].len();
    let mut widths = vec![0.0; d];
    for k in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in x {
            lo = lo.min(row[k]);
            hi = hi.max(row[k]);
        }
        widths[k] = hi - lo;
    }
    Ok(widths)
}

/// Select squared-exponential hyperparameters by maximizing the log marginal
/// likelihood: 8 log-spaced lengthscale starts, Nelder-Mead refinement in log
/// space, lengthscales bounded to [0.01, 100]× the per-dimension input width.
pub fn optimize_kernel(
    x: &[Vec<f64>],
    y: &[f64],
    noise_variance: f64,
    widths: &[f64],
) -> Result<Kernel, GpError> {
    if x.is_empty() {
        return Err(GpError::EmptyTrainingSet);
    }
    let d = x[0].len();
    if widths.len() != d {
        return Err(GpError::DimensionMismatch {
            expected: d,
            got: widths.len(),
        });
    }
    let widths: Vec<f64> = widths.iter().map(|w| w.max(1e-9)).collect();

    let y_lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = (y_hi - y_lo).max(0.0);
    // keeping σ_f at or above a quarter of the observed spread guards the
    // learning bound against collapse from a few near-equal observations
    let sf_lo = (0.25 * range).max(1e-6);
    let sf_hi = (10.0 * range).max(1.0);
    let ls_lo: Vec<f64> = widths.iter().map(|w| 0.01 * w).collect();
    let ls_hi: Vec<f64> = widths.iter().map(|w| 100.0 * w).collect();

    let clamp_params = |p: &[f64]| -> (f64, Vec<f64>) {
        let sf = p[0].exp().clamp(sf_lo, sf_hi);
        let ls: Vec<f64> = (0..d)
            .map(|k| p[1 + k].exp().clamp(ls_lo[k], ls_hi[k]))
            .collect();
        (sf, ls)
    };

    let objective = |p: &[f64]| -> f64 {
        let (sf, ls) = clamp_params(p);
        let kernel = Kernel::SquaredExponential {
            signal_variance: sf * sf,
            lengthscales: ls,
        };
        match GpModel::fit_with_kernel(x, y, noise_variance, kernel) {
            Ok(m) => -m.log_marginal_likelihood(),
            Err(_) => f64::INFINITY,
        }
    };

    let sf0 = (0.5 * range).clamp(sf_lo, sf_hi);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let fracs = log_spaced(0.05, 2.0, 8);
    for frac in fracs {
        let mut start = Vec::with_capacity(1 + d);
        start.push(sf0.ln());
        for w in &widths {
            start.push((frac * w).ln());
        }
        let (p, value) = nelder_mead(&objective, &start, 0.4, 200);
        if best.as_ref().is_none_or(|(bv, _)| value < *bv) {
            best = Some((value, p));
        }
    }
    let (_, p) = best.expect("at least one start");
    let (sf, ls) = clamp_params(&p);
    Kernel::squared_exponential(sf * sf, ls)
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Standard Nelder-Mead simplex minimization; returns the best vertex.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        let fv = f(&v);
        simplex.push((v, fv));
    }

    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let worst = simplex[n].clone();
        let best_val = simplex[0].1;
        if (worst.1 - best_val).abs() < 1e-10 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(v, _)| v[k]).sum::<f64>() / n as f64)
            .collect();
        let blend = |a: f64| -> Vec<f64> {
            (0..n)
                .map(|k| centroid[k] + a * (worst.0[k] - centroid[k]))
                .collect()
        };

        let refl = blend(-1.0);
        let f_refl = f(&refl);
        if f_refl < best_val {
            let exp = blend(-2.0);
            let f_exp = f(&exp);
            simplex[n] = if f_exp < f_refl {
                (exp, f_exp)
            } else {
                (refl, f_refl)
            };
        } else if f_refl < simplex[n - 1].1 {
            simplex[n] = (refl, f_refl);
        } else {
            let contr = blend(0.5);
            let f_contr = f(&contr);
            if f_contr < worst.1 {
                simplex[n] = (contr, f_contr);
            } else {
                // shrink toward best
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = entry
                        .0
                        .iter()
                        .zip(&best)
                        .map(|(a, b)| b + 0.5 * (a - b))
                        .collect();
                    let fv = f(&v);
                    *entry = (v, fv);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (v, fv) = simplex.swap_remove(0);
    (v, fv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn kernel1(sv: f64, l: f64) -> Kernel {
        Kernel::squared_exponential(sv, vec![l]).unwrap()
    }

    #[test]
    fn kernel_at_zero_distance_is_signal_variance() {
        let k = Kernel::squared_exponential(2.5, vec![1.0, 2.0]).unwrap();
        assert_eq!(k.eval(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 2.5);
    }

    #[test]
    fn kernel_unit_values() {
        let k = kernel1(1.0, 1.0);
        assert_relative_eq!(
            k.eval(&[0.0], &[1.0]).unwrap(),
            0.606531,
            epsilon = 1e-6
        );
        let k2 = Kernel::squared_exponential(2.0, vec![1.0, 2.0]).unwrap();
        assert_relative_eq!(
            k2.eval(&[0.0, 0.0], &[1.0, 2.0]).unwrap(),
            2.0 * (-1.0f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn kernel_dimension_mismatch() {
        let k = kernel1(1.0, 1.0);
        assert!(matches!(
            k.eval(&[0.0, 1.0], &[0.0, 1.0]),
            Err(GpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_point_posterior_recovers_observation() {
        // with mean-centering the centered target is 0, so the shrinkage
        // formula (y - offset)·k/(k + σ²) + offset reduces to the offset
        let v = 0.97;
        let noise = 1e-4;
        let m = GpModel::fit_with_kernel(&[vec![0.0]], &[v], noise, kernel1(1.0, 1.0)).unwrap();
        let (mean, _) = m.posterior(&[0.0]);
        let k = 1.0;
        let expected = (v - m.offset()) * k / (k + noise) + m.offset();
        assert_relative_eq!(mean, expected, epsilon = 1e-12);
        assert_relative_eq!(mean, v, epsilon = 1e-12);
    }

    #[test]
    fn duplicate_rows_are_merged() {
        let x = vec![vec![1.0], vec![1.0], vec![2.0]];
        let y = vec![0.5, 0.7, 1.0];
        let m = GpModel::fit_with_kernel(&x, &y, 1e-10, kernel1(1.0, 1.0)).unwrap();
        assert_eq!(m.n_train(), 2);
        let (mean, _) = m.posterior(&[1.0]);
        assert_relative_eq!(mean, 0.6, epsilon = 1e-3);
    }

    #[test]
    fn interpolation_limit_at_training_points() {
        let x = vec![vec![0.0], vec![0.5], vec![1.0]];
        let y = vec![1.0, 0.98, 0.95];
        let m = GpModel::fit_with_kernel(&x, &y, 1e-12, kernel1(0.01, 0.4)).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let (mean, std) = m.posterior(xi);
            assert_relative_eq!(mean, *yi, epsilon = 1e-5);
            assert!(std < 1e-5, "std at training point was {std}");
        }
    }

    #[test]
    fn prior_reversion_far_from_data() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = vec![0.9, 1.1];
        let m = GpModel::fit_with_kernel(&x, &y, 1e-10, kernel1(0.04, 0.3)).unwrap();
        let (mean, std) = m.posterior(&[50.0]);
        assert_relative_eq!(mean, m.offset(), epsilon = 1e-9);
        assert_relative_eq!(std, 0.2, epsilon = 1e-9);
    }

    #[test]
    fn empty_and_singleton_batches() {
        let m = GpModel::fit_with_kernel(&[vec![0.0]], &[1.0], 1e-10, kernel1(1.0, 1.0)).unwrap();
        let (means, stds) = m.posterior_batch(&[]).unwrap();
        assert!(means.is_empty() && stds.is_empty());
        let (means, stds) = m.posterior_batch(&[vec![0.3]]).unwrap();
        let (mean, std) = m.posterior(&[0.3]);
        assert_eq!(means[0], mean);
        assert_eq!(stds[0], std);
    }

    #[test]
    fn batch_dimension_mismatch() {
        let m = GpModel::fit_with_kernel(&[vec![0.0]], &[1.0], 1e-10, kernel1(1.0, 1.0)).unwrap();
        assert!(matches!(
            m.posterior_batch(&[vec![0.0, 1.0]]),
            Err(GpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn posterior_std_respects_noise_floor() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0]).collect();
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v[0]).sin()).collect();
        let noise = 1e-10;
        let m = GpModel::fit_with_kernel(&x, &y, noise, kernel1(1.0, 0.3)).unwrap();
        for xi in &x {
            let (_, std) = m.posterior(xi);
            assert!(std <= noise.sqrt() + 1e-8, "std {std} above noise floor");
        }
    }

    #[test]
    fn prior_model_uses_kernel_only() {
        let m = GpModel::prior(kernel1(0.09, 1.0), 1e-10);
        let (mean, std) = m.posterior(&[0.7]);
        assert_eq!(mean, 0.0);
        assert_relative_eq!(std, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn serialization_round_trip_preserves_posterior() {
        let x = vec![vec![0.0, 0.0], vec![0.5, 1.0], vec![1.0, 0.2]];
        let y = vec![0.98, 0.97, 0.95];
        let kernel = Kernel::squared_exponential(0.01, vec![0.5, 0.8]).unwrap();
        let m = GpModel::fit_with_kernel(&x, &y, 1e-10, kernel).unwrap();
        let m2 = GpModel::from_json(&m.to_json()).unwrap();
        for probe in [[0.1, 0.9], [0.7, 0.3]] {
            let a = m.posterior(&probe);
            let b = m2.posterior(&probe);
            assert_eq!(a.0.to_bits(), b.0.to_bits());
            assert_eq!(a.1.to_bits(), b.1.to_bits());
        }
    }

    #[test]
    fn fitted_hyperparameters_generalize() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 6.0 / 19.0]).collect();
        let y: Vec<f64> = x.iter().map(|v| v[0].sin()).collect();
        let m = GpModel::fit(&x, &y, 1e-10).unwrap();
        for probe in [0.25, 1.9, 3.3, 5.1] {
            let (mean, _) = m.posterior(&[probe]);
            assert!(
                (mean - probe.sin()).abs() < 0.01,
                "probe {probe}: {mean} vs {}",
                probe.sin()
            );
        }
    }

    #[test]
    fn factorization_failure_after_jitter_escalation() {
        // strongly negative "noise" makes K indefinite regardless of jitter
        let x = vec![vec![0.0], vec![1.0]];
        let y = vec![0.0, 1.0];
        let m = GpModel::fit_with_kernel(&x, &y, -10.0, kernel1(1.0, 1.0));
        assert!(matches!(m, Err(GpError::InvalidParameter(_))));
        let base = DMatrix::<f64>::from_fn(2, 2, |i, j| if i == j { -5.0 } else { 0.0 });
        assert!(base.cholesky().is_none());
    }
}
