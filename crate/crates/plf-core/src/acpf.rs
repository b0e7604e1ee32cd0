//! Deterministic Newton-Raphson AC power flow.
//!
//! The solver is the sampling oracle for the learning loop: given a network
//! case and an injection override vector it returns converged bus voltages.
//! It is stateless with respect to the case, so many solves may run
//! concurrently against one shared [`NetworkCase`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{BusId, BusKind, NetworkCase};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("power flow did not converge after {iterations} iterations (mismatch {max_mismatch:.3e} pu)")]
    NonConvergence {
        iterations: usize,
        max_mismatch: f64,
    },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error("injection vector has {got} values for {expected} dimensions")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid case for power flow: {0}")]
    BadCase(String),
}

/// Which injected quantity a coordinate controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(rename = "P")]
    Active,
    #[serde(rename = "Q")]
    Reactive,
}

/// Fixed ordering of injection coordinates: one `(bus, quantity)` per entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionMap(pub Vec<(BusId, Quantity)>);

impl DimensionMap {
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
    pub fn iter(&self) -> impl Iterator<Item = &(BusId, Quantity)> {
        self.0.iter()
    }
}

/// Net injection overrides in per-unit, ordered by a [`DimensionMap`].
///
/// Each entry replaces the base-case net injection (generation minus demand)
/// of its `(bus, quantity)` coordinate; coordinates not named keep their
/// base-case values. Later duplicates win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionVector {
    pub dims: DimensionMap,
    pub values: Vec<f64>,
}

impl InjectionVector {
    pub fn new(dims: DimensionMap, values: Vec<f64>) -> Result<Self, PowerFlowError> {
        if dims.len() != values.len() {
            return Err(PowerFlowError::DimensionMismatch {
                expected: dims.len(),
                got: values.len(),
            });
        }
        Ok(InjectionVector { dims, values })
    }

    /// Empty override: solve the base case as given.
    pub fn base() -> Self {
        InjectionVector {
            dims: DimensionMap(Vec::new()),
            values: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPoint {
    /// Initialize from the case-file voltage columns (setpoints at PV/slack).
    CaseFile,
    /// Unit magnitude, zero angle (setpoints at PV/slack).
    Flat,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Convergence threshold on the ∞-norm of the power mismatch, per-unit.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub start: StartPoint,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-8,
            max_iterations: 30,
            start: StartPoint::CaseFile,
        }
    }
}

/// Converged operating point for one injection vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    /// Voltage magnitudes, per-unit, in bus table order.
    pub vm: Vec<f64>,
    /// Voltage angles, radians, in bus table order.
    pub va: Vec<f64>,
    pub iterations: usize,
    /// Final ∞-norm power mismatch, per-unit.
    pub max_mismatch: f64,
    pub converged: bool,
}

impl PowerFlowSolution {
    /// Voltage magnitude at a bus id (`read_voltage`).
    pub fn voltage_at(&self, case: &NetworkCase, bus: BusId) -> Result<f64, PowerFlowError> {
        let idx = case
            .bus_index(bus)
            .ok_or(PowerFlowError::UnknownBus(bus))?;
        Ok(self.vm[idx])
    }
}

/// Voltage magnitude of `sol` at `bus`.
pub fn read_voltage(
    sol: &PowerFlowSolution,
    case: &NetworkCase,
    bus: BusId,
) -> Result<f64, PowerFlowError> {
    sol.voltage_at(case, bus)
}

/// Base-case net injections (generation minus demand), per-unit, per bus.
pub fn base_injections(case: &NetworkCase) -> (Vec<f64>, Vec<f64>) {
    let base = case.base_mva();
    let mut p: Vec<f64> = case.buses().iter().map(|b| -b.pd / base).collect();
    let mut q: Vec<f64> = case.buses().iter().map(|b| -b.qd / base).collect();
    for g in case.gens() {
        if !g.status {
            continue;
        }
        let i = case.bus_index(g.bus).expect("validated at construction");
        p[i] += g.pg / base;
        q[i] += g.qg / base;
    }
    (p, q)
}

/// Solve the power balance equations for one injection vector.
pub fn solve_nrlf(
    case: &NetworkCase,
    x: &InjectionVector,
    opts: &SolveOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    solve_injection(case, &x.dims, &x.values, opts)
}

/// As [`solve_nrlf`] but borrowing the dimension map, for hot loops that reuse
/// one map across many value vectors.
pub fn solve_injection(
    case: &NetworkCase,
    dims: &DimensionMap,
    values: &[f64],
    opts: &SolveOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let n = case.n();
    if dims.len() != values.len() {
        return Err(PowerFlowError::DimensionMismatch {
            expected: dims.len(),
            got: values.len(),
        });
    }
    if dims.len() > 2 * n {
        return Err(PowerFlowError::BadCase(format!(
            "injection vector has {} dimensions, network admits at most {}",
            dims.len(),
            2 * n
        )));
    }

    // scheduled injections: base case overridden by x
    let (mut p_spec, mut q_spec) = base_injections(case);
    for ((bus, quantity), value) in dims.iter().zip(values) {
        let i = case
            .bus_index(*bus)
            .ok_or(PowerFlowError::UnknownBus(*bus))?;
        match quantity {
            Quantity::Active => p_spec[i] = *value,
            Quantity::Reactive => q_spec[i] = *value,
        }
    }

    // voltage setpoints from in-service generators; PV buses without one
    // degrade to PQ for the solve
    let mut vset: Vec<Option<f64>> = vec![None; n];
    for g in case.gens() {
        if g.status {
            vset[case.bus_index(g.bus).expect("validated")] = Some(g.vset);
        }
    }
    let slack = case.slack_index();
    let slack_vm = vset[slack].ok_or_else(|| {
        PowerFlowError::BadCase("slack bus has no in-service generator".into())
    })?;
    let kinds: Vec<BusKind> = case
        .buses()
        .iter()
        .enumerate()
        .map(|(i, b)| match b.kind {
            BusKind::Pv if vset[i].is_none() => BusKind::Pq,
            k => k,
        })
        .collect();

    let mut vm: Vec<f64> = case
        .buses()
        .iter()
        .enumerate()
        .map(|(i, b)| match kinds[i] {
            BusKind::Slack => slack_vm,
            BusKind::Pv => vset[i].expect("pv retained only with setpoint"),
            BusKind::Pq => match opts.start {
                StartPoint::CaseFile => b.vm,
                StartPoint::Flat => 1.0,
            },
        })
        .collect();
    let mut va: Vec<f64> = case
        .buses()
        .iter()
        .map(|b| match opts.start {
            StartPoint::CaseFile => b.va.to_radians(),
            StartPoint::Flat => 0.0,
        })
        .collect();
    va[slack] = case.buses()[slack].va.to_radians();

    let ang: Vec<usize> = (0..n).filter(|&i| kinds[i] != BusKind::Slack).collect();
    let mag: Vec<usize> = (0..n).filter(|&i| kinds[i] == BusKind::Pq).collect();
    let na = ang.len();
    let nm = mag.len();

    let y = case.ybus();
    let mut p_calc = vec![0.0; n];
    let mut q_calc = vec![0.0; n];

    let calc = |vm: &[f64], va: &[f64], p: &mut [f64], q: &mut [f64]| {
        for i in 0..n {
            let mut pi = 0.0;
            let mut qi = 0.0;
            for j in 0..n {
                let yij = y[(i, j)];
                if yij.re == 0.0 && yij.im == 0.0 {
                    continue;
                }
                let th = va[i] - va[j];
                let (s, c) = th.sin_cos();
                let vv = vm[i] * vm[j];
                pi += vv * (yij.re * c + yij.im * s);
                qi += vv * (yij.re * s - yij.im * c);
            }
            p[i] = pi;
            q[i] = qi;
        }
    };

    let mismatch_norm = |p_calc: &[f64], q_calc: &[f64]| {
        let mut worst: f64 = 0.0;
        for &i in &ang {
            worst = worst.max((p_spec[i] - p_calc[i]).abs());
        }
        for &i in &mag {
            worst = worst.max((q_spec[i] - q_calc[i]).abs());
        }
        worst
    };

    let mut iterations = 0;
    loop {
        calc(&vm, &va, &mut p_calc, &mut q_calc);
        let worst = mismatch_norm(&p_calc, &q_calc);
        if worst <= opts.tolerance {
            return Ok(PowerFlowSolution {
                vm,
                va,
                iterations,
                max_mismatch: worst,
                converged: true,
            });
        }
        if iterations >= opts.max_iterations {
            return Err(PowerFlowError::NonConvergence {
                iterations,
                max_mismatch: worst,
            });
        }

        // polar-form Jacobian over [Δθ(pv+pq); ΔV(pq)]
        let mut jac = DMatrix::<f64>::zeros(na + nm, na + nm);
        for (r, &i) in ang.iter().enumerate() {
            for (c, &j) in ang.iter().enumerate() {
                jac[(r, c)] = if i == j {
                    -q_calc[i] - y[(i, i)].im * vm[i] * vm[i]
                } else {
                    let yij = y[(i, j)];
                    let th = va[i] - va[j];
                    vm[i] * vm[j] * (yij.re * th.sin() - yij.im * th.cos())
                };
            }
            for (c, &j) in mag.iter().enumerate() {
                jac[(r, na + c)] = if i == j {
                    p_calc[i] / vm[i] + y[(i, i)].re * vm[i]
                } else {
                    let yij = y[(i, j)];
                    let th = va[i] - va[j];
                    vm[i] * (yij.re * th.cos() + yij.im * th.sin())
                };
            }
        }
        for (r, &i) in mag.iter().enumerate() {
            for (c, &j) in ang.iter().enumerate() {
                jac[(na + r, c)] = if i == j {
                    p_calc[i] - y[(i, i)].re * vm[i] * vm[i]
                } else {
                    let yij = y[(i, j)];
                    let th = va[i] - va[j];
                    -vm[i] * vm[j] * (yij.re * th.cos() + yij.im * th.sin())
                };
            }
            for (c, &j) in mag.iter().enumerate() {
                jac[(na + r, na + c)] = if i == j {
                    q_calc[i] / vm[i] - y[(i, i)].im * vm[i]
                } else {
                    let yij = y[(i, j)];
                    let th = va[i] - va[j];
                    vm[i] * (yij.re * th.sin() - yij.im * th.cos())
                };
            }
        }

        let mut rhs = DVector::<f64>::zeros(na + nm);
        for (r, &i) in ang.iter().enumerate() {
            rhs[r] = p_spec[i] - p_calc[i];
        }
        for (r, &i) in mag.iter().enumerate() {
            rhs[na + r] = q_spec[i] - q_calc[i];
        }

        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or(PowerFlowError::SingularJacobian {
                iteration: iterations,
            })?;
        for (r, &i) in ang.iter().enumerate() {
            va[i] += step[r];
        }
        for (r, &i) in mag.iter().enumerate() {
            vm[i] += step[na + r];
        }
        iterations += 1;
    }
}

/// Net injections implied by a voltage profile, per-unit (the power balance
/// equation evaluated at the solution).
pub fn injections_at(case: &NetworkCase, vm: &[f64], va: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = case.n();
    let y = case.ybus();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let yij = y[(i, j)];
            if yij.re == 0.0 && yij.im == 0.0 {
                continue;
            }
            let th = va[i] - va[j];
            let (s, c) = th.sin_cos();
            let vv = vm[i] * vm[j];
            p[i] += vv * (yij.re * c + yij.im * s);
            q[i] += vv * (yij.re * s - yij.im * c);
        }
    }
    (p, q)
}

/// Series `I²r` losses summed over in-service branches, MW. Computed from
/// branch currents, independently of the nodal power balance.
pub fn branch_loss_mw(case: &NetworkCase, sol: &PowerFlowSolution) -> f64 {
    use num_complex::Complex64;
    let mut total = 0.0;
    for br in case.branches() {
        if !br.status {
            continue;
        }
        let f = case.bus_index(br.from).expect("validated");
        let t = case.bus_index(br.to).expect("validated");
        let vf = Complex64::from_polar(sol.vm[f], sol.va[f]);
        let vt = Complex64::from_polar(sol.vm[t], sol.va[t]);
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let i_series = (vf / br.tap - vt) * ys;
        total += i_series.norm_sqr() * br.r;
    }
    total * case.base_mva()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::parse_case;

    const TWO_BUS: &str = "\
mpc.baseMVA = 100;
mpc.bus = [
    1 3 0  0 0 0 1 1 0 135 1 1.05 0.95;
    2 1 50 0 0 0 1 1 0 135 1 1.05 0.95;
];
mpc.gen = [
    1 0 0 99 -99 1.0 100 1 99 0;
];
mpc.branch = [
    1 2 0.0 0.1 0.0 0 0 0 0 0 1;
];
";

    /// Closed-form |V2| for the lossless two-bus case: the positive root of
    /// V⁴ − V²(V1² − 2xQ) + x²(P² + Q²) = 0 on the upper branch.
    fn two_bus_voltage(p_load: f64, q_load: f64, x: f64) -> f64 {
        let b = 1.0 - 2.0 * x * q_load;
        let disc = b * b - 4.0 * x * x * (p_load * p_load + q_load * q_load);
        ((b + disc.sqrt()) / 2.0).sqrt()
    }

    #[test]
    fn two_bus_matches_closed_form() {
        let case = parse_case(TWO_BUS).unwrap();
        let sol = solve_nrlf(&case, &InjectionVector::base(), &SolveOptions::default()).unwrap();
        assert!(sol.converged);
        let expected = two_bus_voltage(0.5, 0.0, 0.1);
        assert!(
            (sol.vm[1] - expected).abs() < 1e-10,
            "got {}, expected {}",
            sol.vm[1],
            expected
        );
        // same answer when the load enters through an injection override
        let x = InjectionVector::new(
            DimensionMap(vec![(2, Quantity::Active)]),
            vec![-0.5],
        )
        .unwrap();
        let sol2 = solve_nrlf(&case, &x, &SolveOptions::default()).unwrap();
        assert!((sol2.vm[1] - expected).abs() < 1e-10);
    }

    #[test]
    fn no_load_case_is_flat() {
        let text = TWO_BUS.replace("2 1 50 0", "2 1 0  0");
        let case = parse_case(&text).unwrap();
        let sol = solve_nrlf(&case, &InjectionVector::base(), &SolveOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 0);
        assert!((sol.vm[0] - 1.0).abs() < 1e-12 && (sol.vm[1] - 1.0).abs() < 1e-12);
        assert!(sol.va[1].abs() < 1e-12);
        assert!(sol.max_mismatch < 1e-12);
    }

    #[test]
    fn read_voltage_and_unknown_bus() {
        let case = parse_case(TWO_BUS).unwrap();
        let sol = solve_nrlf(&case, &InjectionVector::base(), &SolveOptions::default()).unwrap();
        assert!((read_voltage(&sol, &case, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            read_voltage(&sol, &case, 99),
            Err(PowerFlowError::UnknownBus(99))
        ));
    }

    #[test]
    fn slack_holds_setpoint() {
        let case = parse_case(TWO_BUS).unwrap();
        let sol = solve_nrlf(&case, &InjectionVector::base(), &SolveOptions::default()).unwrap();
        assert_eq!(sol.vm[0], 1.0);
        assert_eq!(sol.va[0], 0.0);
    }

    #[test]
    fn heavier_load_lowers_voltage() {
        let case = parse_case(TWO_BUS).unwrap();
        let dims = DimensionMap(vec![(2, Quantity::Active)]);
        let mut last = f64::INFINITY;
        for load in [0.1, 0.5, 1.0, 1.5, 2.0] {
            let sol =
                solve_injection(&case, &dims, &[-load], &SolveOptions::default()).unwrap();
            assert!(sol.vm[1] < last, "voltage should fall as load rises");
            last = sol.vm[1];
        }
    }

    #[test]
    fn infeasible_load_reports_nonconvergence() {
        // max deliverable P over x=0.1 from a 1.0 pu source is 1/(2x) = 5 pu
        let case = parse_case(TWO_BUS).unwrap();
        let dims = DimensionMap(vec![(2, Quantity::Active)]);
        match solve_injection(&case, &dims, &[-6.0], &SolveOptions::default()) {
            Err(PowerFlowError::NonConvergence { max_mismatch, .. }) => {
                assert!(max_mismatch > 0.0)
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn residual_reproduces_specified_injections() {
        let case = parse_case(TWO_BUS).unwrap();
        let dims = DimensionMap(vec![(2, Quantity::Active), (2, Quantity::Reactive)]);
        let values = [-0.7, -0.2];
        let sol = solve_injection(&case, &dims, &values, &SolveOptions::default()).unwrap();
        let (p, q) = injections_at(&case, &sol.vm, &sol.va);
        assert!((p[1] - values[0]).abs() < 1e-8);
        assert!((q[1] - values[1]).abs() < 1e-8);
    }

    #[test]
    fn identical_inputs_give_bit_identical_solutions() {
        let case = parse_case(TWO_BUS).unwrap();
        let dims = DimensionMap(vec![(2, Quantity::Active)]);
        let a = solve_injection(&case, &dims, &[-0.42], &SolveOptions::default()).unwrap();
        let b = solve_injection(&case, &dims, &[-0.42], &SolveOptions::default()).unwrap();
        assert!(a
            .vm
            .iter()
            .zip(&b.vm)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a
            .va
            .iter()
            .zip(&b.va)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn dimension_checks() {
        let case = parse_case(TWO_BUS).unwrap();
        let dims = DimensionMap(vec![(2, Quantity::Active)]);
        assert!(matches!(
            solve_injection(&case, &dims, &[0.1, 0.2], &SolveOptions::default()),
            Err(PowerFlowError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            InjectionVector::new(DimensionMap(vec![(2, Quantity::Active)]), vec![]),
            Err(PowerFlowError::DimensionMismatch { .. })
        ));
        let too_many = DimensionMap(
            (0..5)
                .map(|k| (1 + (k % 2) as BusId, Quantity::Active))
                .collect(),
        );
        assert!(matches!(
            solve_injection(&case, &too_many, &[0.0; 5], &SolveOptions::default()),
            Err(PowerFlowError::BadCase(_))
        ));
    }
}
