//! Solver integration tests against the stored golden solutions and the
//! conservation identities.

mod common;

use common::{golden_case118, golden_case30, load_case};
use plf_core::acpf::{
    self, base_injections, branch_loss_mw, injections_at, read_voltage, DimensionMap,
    InjectionVector, Quantity, SolveOptions, StartPoint,
};
use plf_core::case::{build_ybus, parse_case, BusKind};
use plf_core::testing::{mcs, DistKind, InputDistribution};

#[test]
fn case30_tables_have_expected_shape() {
    let case = load_case("case30.m");
    assert_eq!(case.n(), 30);
    assert_eq!(case.branches().len(), 41);
    assert_eq!(case.gens().len(), 6);
    assert_eq!(case.base_mva(), 100.0);
}

#[test]
fn case118_tables_have_expected_shape() {
    let case = load_case("case118.m");
    assert_eq!(case.n(), 118);
    assert_eq!(case.branches().len(), 186);
    assert_eq!(case.gens().len(), 54);
}

#[test]
fn case30_base_solution_matches_golden() {
    let case = load_case("case30.m");
    let golden = golden_case30();
    let sol = acpf::solve_nrlf(&case, &InjectionVector::base(), &SolveOptions::default()).unwrap();
    assert!(sol.converged);
    assert!(sol.iterations <= 6, "took {} iterations", sol.iterations);
    for (i, id) in golden.bus_ids.iter().enumerate() {
        let idx = case.bus_index(*id).unwrap();
        assert!(
            (sol.vm[idx] - golden.vm[i]).abs() < 1e-6,
            "bus {id}: vm {} vs golden {}",
            sol.vm[idx],
            golden.vm[i]
        );
        assert!((sol.va[idx] - golden.va_rad[i]).abs() < 1e-6);
    }
}

#[test]
fn case118_base_solution_matches_golden() {
    let case = load_case("case118.m");
    let golden = golden_case118();
    let sol = acpf::solve_nrlf(&case, &InjectionVector::base(), &SolveOptions::default()).unwrap();
    assert!(sol.converged);
    assert!(sol.iterations <= 6, "took {} iterations", sol.iterations);
    for (i, id) in golden.bus_ids.iter().enumerate() {
        let idx = case.bus_index(*id).unwrap();
        assert!(
            (sol.vm[idx] - golden.vm[i]).abs() < 1e-6,
            "bus {id}: vm {} vs golden {}",
            sol.vm[idx],
            golden.vm[i]
        );
        assert!((sol.va[idx] - golden.va_rad[i]).abs() < 1e-6);
    }
}

#[test]
fn flat_start_matches_case_file_start_on_shipped_cases() {
    // both shipped cases store flat voltage columns, so the two starting
    // policies must land on the same solution
    let case = load_case("case118.m");
    let flat = SolveOptions {
        start: StartPoint::Flat,
        ..SolveOptions::default()
    };
    let a = acpf::solve_nrlf(&case, &InjectionVector::base(), &SolveOptions::default()).unwrap();
    let b = acpf::solve_nrlf(&case, &InjectionVector::base(), &flat).unwrap();
    assert_eq!(a.vm, b.vm);
}

#[test]
fn read_voltage_from_golden_solution() {
    let case = load_case("case30.m");
    let golden = golden_case30();
    let sol = acpf::solve_nrlf(&case, &InjectionVector::base(), &SolveOptions::default()).unwrap();
    // slack holds its setpoint
    assert_eq!(read_voltage(&sol, &case, 1).unwrap(), 1.0);
    let v30 = read_voltage(&sol, &case, 30).unwrap();
    assert!((v30 - golden.vm[29]).abs() < 1e-6);
}

#[test]
fn ybus_row_sums_match_independent_recomputation() {
    // row sum = everything that does not cancel between diagonal and
    // off-diagonal terms: charging, tap corrections, bus shunts; recomputed
    // here directly from the branch list
    for name in ["case30.m", "case118.m"] {
        let case = load_case(name);
        let y = case.ybus();
        let n = case.n();
        let mut expected = vec![num_complex::Complex64::new(0.0, 0.0); n];
        for br in case.branches() {
            if !br.status {
                continue;
            }
            let f = case.bus_index(br.from).unwrap();
            let t = case.bus_index(br.to).unwrap();
            let ys = num_complex::Complex64::new(1.0, 0.0)
                / num_complex::Complex64::new(br.r, br.x);
            let half = num_complex::Complex64::new(0.0, br.b / 2.0);
            let tap = br.tap;
            expected[f] += (ys + half) / (tap * tap) - ys / tap;
            expected[t] += (ys + half) - ys / tap;
        }
        for (i, bus) in case.buses().iter().enumerate() {
            expected[i] += num_complex::Complex64::new(bus.gs, bus.bs) / case.base_mva();
        }
        for i in 0..n {
            let row_sum: num_complex::Complex64 = (0..n).map(|j| y[(i, j)]).sum();
            assert!(
                (row_sum - expected[i]).norm() < 1e-9,
                "{name} bus row {i}: {row_sum} vs {}",
                expected[i]
            );
        }
    }
}

#[test]
fn ybus_rebuild_is_bit_identical_and_symmetric_where_untapped() {
    let case = load_case("case118.m");
    let again = build_ybus(&case).unwrap();
    assert_eq!(case.ybus(), &again);
    let y = case.ybus();
    let n = case.n();
    let mut adjacent = vec![vec![false; n]; n];
    for br in case.branches() {
        if !br.status {
            continue;
        }
        let f = case.bus_index(br.from).unwrap();
        let t = case.bus_index(br.to).unwrap();
        adjacent[f][t] = true;
        adjacent[t][f] = true;
        assert!(y[(f, t)].norm() > 0.0, "adjacent entry must be nonzero");
        // no phase shifters: off-diagonal symmetry holds for any tap
        assert!((y[(f, t)] - y[(t, f)]).norm() < 1e-12);
    }
    // conductance/susceptance vanish wherever buses are not connected
    for i in 0..n {
        for j in 0..n {
            if i != j && !adjacent[i][j] {
                assert_eq!(y[(i, j)].norm(), 0.0, "entry ({i},{j}) should be zero");
            }
        }
    }
}

#[test]
fn generation_covers_demand_plus_independent_losses() {
    for name in ["case30.m", "case118.m"] {
        let case = load_case(name);
        let sol =
            acpf::solve_nrlf(&case, &InjectionVector::base(), &SolveOptions::default()).unwrap();
        // total net injection over all buses equals the series losses
        let (p, _) = injections_at(&case, &sol.vm, &sol.va);
        let net_mw = p.iter().sum::<f64>() * case.base_mva();
        let loss_mw = branch_loss_mw(&case, &sol);
        assert!(
            (net_mw - loss_mw).abs() < 1e-4,
            "{name}: net {net_mw} MW vs losses {loss_mw} MW"
        );
    }
}

#[test]
fn residual_property_holds_at_off_base_injections() {
    let case = load_case("case30.m");
    let dims = DimensionMap(vec![(27, Quantity::Active), (30, Quantity::Active)]);
    let values = [0.40, -0.18];
    let sol = acpf::solve_injection(&case, &dims, &values, &SolveOptions::default()).unwrap();
    let (p, q) = injections_at(&case, &sol.vm, &sol.va);
    let (p_base, q_base) = base_injections(&case);
    for (i, bus) in case.buses().iter().enumerate() {
        if bus.kind == BusKind::Slack {
            continue;
        }
        let expected_p = match bus.id {
            27 => values[0],
            30 => values[1],
            _ => p_base[i],
        };
        assert!(
            (p[i] - expected_p).abs() < 1e-8,
            "bus {}: P {} vs {}",
            bus.id,
            p[i],
            expected_p
        );
        if bus.kind == BusKind::Pq {
            assert!((q[i] - q_base[i]).abs() < 1e-8);
        }
    }
    // PV buses hold their setpoints
    for g in case.gens() {
        let idx = case.bus_index(g.bus).unwrap();
        if case.buses()[idx].kind == BusKind::Pv {
            assert!((sol.vm[idx] - g.vset).abs() < 1e-12);
        }
    }
}

#[test]
fn solution_serializes_to_json_and_back() {
    let case = load_case("case30.m");
    let sol = acpf::solve_nrlf(&case, &InjectionVector::base(), &SolveOptions::default()).unwrap();
    let text = serde_json::to_string(&sol).unwrap();
    let back: plf_core::acpf::PowerFlowSolution = serde_json::from_str(&text).unwrap();
    assert_eq!(back, sol);
}

#[test]
fn parsed_json_mirror_solves_identically() {
    let case = load_case("case30.m");
    let mirrored = parse_case(&case.to_json()).unwrap();
    assert_eq!(case, mirrored);
    let a = acpf::solve_nrlf(&case, &InjectionVector::base(), &SolveOptions::default()).unwrap();
    let b =
        acpf::solve_nrlf(&mirrored, &InjectionVector::base(), &SolveOptions::default()).unwrap();
    assert_eq!(a.vm, b.vm);
}

#[test]
fn mcs_on_case30_is_reproducible_across_runs() {
    let case = load_case("case30.m");
    let dist = InputDistribution {
        dims: DimensionMap(vec![(27, Quantity::Active)]),
        kind: DistKind::Uniform {
            lower: vec![0.0],
            upper: vec![0.55],
        },
        truncate_to: None,
    };
    let a = mcs(&case, 25, &dist, 500, 42).unwrap();
    let b = mcs(&case, 25, &dist, 500, 42).unwrap();
    assert_eq!(a.mean_pu.to_bits(), b.mean_pu.to_bits());
    assert_eq!(a.histogram, b.histogram);
    assert_eq!(a.excluded, 0);
}
