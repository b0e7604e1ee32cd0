#!/usr/bin/env python3
"""Reference Newton-Raphson power flow used to produce the golden solutions.

This is an independent implementation (plain numpy, polar-form NR) kept apart
from the Rust solver so the stored golden files act as a cross-implementation
check. It is validated below against the closed-form two-bus solution and a
generation/load/loss balance identity before any golden file is written.

Usage: python3 tools/make_goldens.py
Reads  data/case30.m, data/case118.m
Writes crates/plf-core/tests/golden/case30_solution.json, case118_solution.json
"""

import json
import math
import os
import re
import sys

import numpy as np

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


# ---------------------------------------------------------------------------
# MATPOWER .m subset parser (mirrors the contract of the Rust parser)
# ---------------------------------------------------------------------------

def parse_case_m(text):
    def matrix(name):
        m = re.search(r"mpc\.%s\s*=\s*\[(.*?)\];" % name, text, re.S)
        if m is None:
            raise ValueError("missing mpc.%s" % name)
        rows = []
        for line in m.group(1).splitlines():
            line = line.split("%")[0].strip().rstrip(";").strip()
            if not line:
                continue
            rows.append([float(tok) for tok in line.replace(",", " ").split()])
        return rows

    base = float(re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)\s*;", text).group(1))
    return base, matrix("bus"), matrix("gen"), matrix("branch")


def build_ybus(base, bus, gen, branch):
    n = len(bus)
    ids = [int(r[0]) for r in bus]
    idx = {b: i for i, b in enumerate(ids)}
    Y = np.zeros((n, n), dtype=complex)
    for row in branch:
        f, t = idx[int(row[0])], idx[int(row[1])]
        status = int(row[10]) if len(row) > 10 else 1
        if status == 0:
            continue
        r, x, b = row[2], row[3], row[4]
        tap = row[8] if len(row) > 8 and row[8] != 0.0 else 1.0
        ys = 1.0 / complex(r, x)
        Y[f, f] += (ys + 1j * b / 2.0) / (tap * tap)
        Y[t, t] += ys + 1j * b / 2.0
        Y[f, t] += -ys / tap
        Y[t, f] += -ys / tap
    for i, row in enumerate(bus):
        Y[i, i] += complex(row[4], row[5]) / base
    return Y, idx


def solve_nr(base, bus, gen, branch, tol=1e-10, max_iter=25, flat=True):
    """Polar Newton-Raphson. Returns (Vm, Va, iterations_at_1e-8, final_mismatch)."""
    Y = build_ybus(base, bus, gen, branch)[0]
    G, B = Y.real, Y.imag
    n = len(bus)
    ids = [int(r[0]) for r in bus]
    idx = {b: i for i, b in enumerate(ids)}

    kind = [int(r[1]) for r in bus]  # 1 PQ, 2 PV, 3 slack
    P = np.array([-r[2] / base for r in bus])
    Q = np.array([-r[3] / base for r in bus])
    vset = {}
    for g in gen:
        if int(g[7]) == 0:
            continue
        i = idx[int(g[0])]
        P[i] += g[1] / base
        Q[i] += g[2] / base
        vset[i] = g[5]

    Vm = np.array([1.0 if flat else r[7] for r in bus])
    Va = np.array([0.0 if flat else math.radians(r[8]) for r in bus])
    for i in range(n):
        if kind[i] in (2, 3) and i in vset:
            Vm[i] = vset[i]

    pv = [i for i in range(n) if kind[i] == 2]
    pq = [i for i in range(n) if kind[i] == 1]
    ang = pv + pq  # angle unknowns
    mag = pq      # magnitude unknowns

    def calc_pq():
        V = Vm * np.exp(1j * Va)
        S = V * np.conj(Y @ V)
        return S.real, S.imag

    it8 = None
    mism = None
    for it in range(max_iter + 1):
        Pc, Qc = calc_pq()
        dP = P - Pc
        dQ = Q - Qc
        f = np.concatenate([dP[ang], dQ[mag]])
        mism = np.max(np.abs(f)) if len(f) else 0.0
        if it8 is None and mism <= 1e-8:
            it8 = it
        if mism <= tol:
            return Vm, Va, it8 if it8 is not None else it, mism
        if it == max_iter:
            break
        na, nm = len(ang), len(mag)
        J = np.zeros((na + nm, na + nm))
        th = Va[:, None] - Va[None, :]
        ct, st = np.cos(th), np.sin(th)
        # dP/dth, dP/dV, dQ/dth, dQ/dV
        for a, i in enumerate(ang):
            for b_, j in enumerate(ang):
                if i == j:
                    J[a, b_] = -Qc[i] - B[i, i] * Vm[i] ** 2
                else:
                    J[a, b_] = Vm[i] * Vm[j] * (G[i, j] * st[i, j] - B[i, j] * ct[i, j])
            for b_, j in enumerate(mag):
                if i == j:
                    J[a, na + b_] = Pc[i] / Vm[i] + G[i, i] * Vm[i]
                else:
                    J[a, na + b_] = Vm[i] * (G[i, j] * ct[i, j] + B[i, j] * st[i, j])
        for a, i in enumerate(mag):
            for b_, j in enumerate(ang):
                if i == j:
                    J[na + a, b_] = Pc[i] - G[i, i] * Vm[i] ** 2
                else:
                    J[na + a, b_] = -Vm[i] * Vm[j] * (G[i, j] * ct[i, j] + B[i, j] * st[i, j])
            for b_, j in enumerate(mag):
                if i == j:
                    J[na + a, na + b_] = Qc[i] / Vm[i] - B[i, i] * Vm[i]
                else:
                    J[na + a, na + b_] = Vm[i] * (G[i, j] * st[i, j] - B[i, j] * ct[i, j])
        dx = np.linalg.solve(J, f)
        Va[ang] += dx[:na]
        Vm[mag] += dx[na:]
    raise RuntimeError("did not converge, mismatch %g" % mism)


def losses_mw(base, bus, branch, Vm, Va, idx):
    V = Vm * np.exp(1j * Va)
    total = 0.0
    for row in branch:
        if len(row) > 10 and int(row[10]) == 0:
            continue
        f, t = idx[int(row[0])], idx[int(row[1])]
        tap = row[8] if len(row) > 8 and row[8] != 0.0 else 1.0
        ys = 1.0 / complex(row[2], row[3])
        i_ser = (V[f] / tap - V[t]) * ys
        total += abs(i_ser) ** 2 * row[2]
    return total * base


def two_bus_check():
    """Slack 1.0∠0, line x=0.10 pu, PQ load P=0.5 pu: closed-form |V2|."""
    base = 100.0
    bus = [
        [1, 3, 0, 0, 0, 0, 1, 1, 0, 135, 1, 1.05, 0.95],
        [2, 1, 50.0, 0, 0, 0, 1, 1, 0, 135, 1, 1.05, 0.95],
    ]
    gen = [[1, 0, 0, 99, -99, 1.0, 100, 1, 99, 0]]
    branch = [[1, 2, 0.0, 0.1, 0.0, 0, 0, 0, 0, 0, 1, -360, 360]]
    Vm, Va, it8, mism = solve_nr(base, bus, gen, branch, tol=1e-12)
    expected = math.sqrt((1.0 + math.sqrt(1.0 - 4.0 * 0.1 ** 2 * 0.5 ** 2)) / 2.0)
    err = abs(Vm[1] - expected)
    assert err < 1e-10, "two-bus closed form mismatch %.3e" % err
    print("two-bus closed-form check: |V2|=%.12f expected %.12f (err %.2e)" % (Vm[1], expected, err))


def run_case(name, variants=()):
    path = os.path.join(ROOT, "data", name + ".m")
    with open(path) as fh:
        base, bus, gen, branch = parse_case_m(fh.read())
    Y, idx = build_ybus(base, bus, gen, branch)
    Vm, Va, it8, mism = solve_nr(base, bus, gen, branch)
    loss = losses_mw(base, bus, branch, Vm, Va, idx)
    pd = sum(r[2] for r in bus)
    pg_pv = sum(g[1] for g in gen if int(g[7]) == 1 and int(bus[idx[int(g[0])]][1]) == 2)
    # slack output implied by balance: check against injected slack P
    V = Vm * np.exp(1j * Va)
    S = V * np.conj(Y @ V)
    slack_i = [i for i, r in enumerate(bus) if int(r[1]) == 3][0]
    slack_pg = S[slack_i].real * base + bus[slack_i][2]
    bal = abs(pg_pv + slack_pg - pd - loss)
    assert bal < 1e-4, "power balance violated: %.3e MW" % bal
    print("%s: n=%d, iters@1e-8=%d, mismatch=%.2e, Vm range [%.4f, %.4f], losses %.2f MW, slack %.2f MW, balance err %.2e MW"
          % (name, len(bus), it8, mism, Vm.min(), Vm.max(), loss, slack_pg, bal))
    out = {
        "bus_ids": [int(r[0]) for r in bus],
        "vm": [float(v) for v in Vm],
        "va_rad": [float(v) for v in Va],
        "iterations_flat_tol1e8": int(it8),
    }
    gold = os.path.join(ROOT, "crates", "plf-core", "tests", "golden")
    os.makedirs(gold, exist_ok=True)
    with open(os.path.join(gold, name + "_solution.json"), "w") as fh:
        json.dump(out, fh, indent=1)
        fh.write("\n")
    # extra diagnostics for study configuration sanity
    for label, bus_id, pg_mw in variants:
        gen2 = [list(g) for g in gen]
        for g in gen2:
            if int(g[0]) == bus_id:
                g[1] = pg_mw
        Vm2, _, _, _ = solve_nr(base, bus, gen2, branch)
        print("  %s: Pg@%d=%.1f MW -> |V25|=%.5f |V21|=%.5f |V28|=%.5f |V30|=%.5f"
              % (label, bus_id, pg_mw, Vm2[idx.get(25, 0)], Vm2[idx.get(21, 0)],
                 Vm2[idx.get(28, 0)], Vm2[idx.get(30, 0)]))
    return base, bus, gen, branch, Vm


if __name__ == "__main__":
    two_bus_check()
    run_case("case30", variants=[("base+", 27, 0.0), ("base+", 27, 27.5), ("base+", 27, 55.0)])
    run_case("case118")
    print("golden files written")
