"""The thirteen acceptance criteria at their stated tolerances.

Each test records a one-line verdict that is printed in the terminal summary
(and on stdout when run with ``-s``).
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE
from horizonrisk import cli
from horizonrisk import diagnostics as D
from horizonrisk.core import (Claim, Constant, Entropic, Family, Linear, VolterraLinear, VolterraQuadratic,
                              quadratic_form_driver)
from horizonrisk.duality import closed_form
from horizonrisk.mc import MCBackend, SolverConfig, mc_solve, mc_solve_bsvie
from horizonrisk.tree import TreeMeasure, TreeModel, tree_dual_sup, tree_expectation, tree_penalty, tree_solve

pytestmark = pytest.mark.acceptance
START = time.perf_counter()


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def mc200():
    return MCBackend.simulate(SolverConfig(M=200_000, N=200, seed=2024))


@pytest.fixture(scope="module")
def tree8():
    return TreeModel.uniform(1.0, 8)


@pytest.fixture(scope="module")
def corpus20():
    return D.claim_corpus(np.random.default_rng(20), 20)


def test_c01_linear_closed_form(mc200):
    d, c = Linear(0.3, 0.1), Claim.linear(1.0, 1.0)
    tree = tree_solve(TreeModel.uniform(1.0, 256), d, c, 1.0).value0
    t0 = time.perf_counter()
    res = mc_solve(mc200.ens, d, c, 1.0, mc200.cfg)
    secs = time.perf_counter() - t0
    ok = abs(tree + 0.2) <= 5e-3 and abs(res.value + 0.2) <= 5e-3 and secs < 60
    record(1, ok, f"tree {tree:.6f}, mc {res.value:.6f} (se {res.stderr:.1e}, {secs:.1f}s), oracle -0.2")


def test_c02_entropic(mc200):
    d, c = Entropic(1.0), Claim.linear(1.0, 1.0)
    cf = closed_form(d, c, 0.0, 1.0)
    res = mc_solve(mc200.ens, d, c, 1.0, mc200.cfg)
    ok = abs(cf - 0.5) <= 1e-12 and abs(res.value - 0.5) <= 2e-2
    record(2, ok, f"closed form {cf!r}, mc {res.value:.6f}, oracle 0.5")


def test_c03_bsvie_closed_forms(mc200):
    vl = VolterraLinear(0.0, 1.0)
    zero = Claim.constant(0.0, 1.0)
    tree = tree_solve(TreeModel.uniform(1.0, 64), vl, zero, 1.0).value0
    mc_l = mc_solve_bsvie(mc200.ens, vl, zero, 0.0, 1.0, mc200.cfg).value
    vq = VolterraQuadratic(1.0, 0.0)
    x = Claim.linear(1.0, 1.0)
    mc_q = mc_solve_bsvie(mc200.ens, vq, x, 0.0, 1.0, mc200.cfg).value
    cf_q = closed_form(vq, x, 0.0, 1.0)
    ok = abs(tree - 1.0) <= 1e-10 and abs(mc_l - 1.0) <= 5e-3 and abs(mc_q - cf_q) <= 2e-2 \
        and abs(cf_q - 0.5) <= 1e-12
    record(3, ok, f"linear tree {tree:.12f}, mc {mc_l:.6f}; quadratic mc {mc_q:.6f} vs {cf_q}")


def test_c04_gamma_surfaces(mc200):
    tree = TreeModel.uniform(1.0, 20)
    ts = [k / 10 for k in range(10)]
    us = [k / 10 + 0.1 for k in range(10)]
    worst = 0.0
    rng = np.random.default_rng(4)
    for a in (0.2, -0.35, 1.0):
        d = Constant(a)
        for t in ts:
            c = D.place(D.claim_corpus(rng, 5)[int(10 * t) % 5], t)
            grid_u = [u for u in us if u >= t - 1e-12]
            rep = D.gamma_surface(tree, d, c, 0.0, t, grid_u)
            for row, g in zip(rep.rows, rep.gammas):
                worst = max(worst, float(np.max(np.abs(g - (row["u"] - row["t"]) * a))))
    mc_worst = 0.0
    for r in (0.5, 1.0, 2.0):
        d = quadratic_form_driver(c0=lambda t, s, r=r: math.exp(-r * s))
        for t, u in ((0.5, 1.0), (0.25, 0.75)):
            rep = D.gamma_surface(mc200, d, Claim.call(0.0, t), 0.0, t, [u])
            exact = math.exp(-r * t) * (1 - math.exp(-r * (u - t))) / r
            mc_worst = max(mc_worst, abs(rep.rows[0]["gamma"] - exact))
    record(4, worst <= 1e-10 and mc_worst <= 5e-3, f"tree worst {worst:.1e}, mc exponential worst {mc_worst:.1e}")


def test_c05_strong_tc(tree8, corpus20):
    drivers = [Linear(0.3, 0.1), Entropic(1.0), Constant(0.2), quadratic_form_driver(c0=0.1, c1=0.3, c2=0.2, c3=0.4),
               VolterraLinear(0.2, 1.0)]
    worst = max(D.check_time_consistency("strong", tree8, d, corpus20, tol=1e-10).worst_violation for d in drivers)
    record(5, worst <= 1e-10, f"worst violation {worst:.1e} over 165 triples, 20 claims, {len(drivers)} drivers")


def _catalog():
    normalized = [Linear(0.3), Linear(-0.5), Entropic(1.0), Entropic(0.25), VolterraLinear(0.4, 0.0),
                  VolterraLinear(lambda t, s: s, 0.0), VolterraQuadratic(1.0), quadratic_form_driver(c2=0.5, c3=0.2),
                  quadratic_form_driver(c1=0.3, c3=lambda t, s: 1 + s), Constant(0.0)]
    non = [Constant(0.2), Constant(-0.4), Linear(0.3, 0.1), Entropic(1.0, 0.2), Entropic(1.0, lambda s: 1 + s),
           VolterraLinear(0.0, 1.0), VolterraLinear(0.1, lambda t, s: t + s + 0.1), VolterraQuadratic(1.0, 0.3),
           quadratic_form_driver(c0=0.05, c3=0.4), quadratic_form_driver(c0=lambda t, s: -(1 + s), c1=0.2)]
    return normalized, non


def test_c06_normalization_restriction(tree8):
    normalized, non = _catalog()
    rng = np.random.default_rng(6)
    pairs = [(0.25, 0.5), (0.5, 1.0), (0.0, 0.75)]
    mismatches, const_gap = [], 0.0
    for d in normalized + non:
        pred = D.zero_section_vanishes(d, tree8.grid)
        norm = D.check_structure("normalization", tree8, d, [], pairs, tol=1e-10).verdict
        claims = {t: [D.place(c, t) for c in D.claim_corpus(rng, 5)] for t, _ in pairs}
        restr = all(D.check_structure("restriction", tree8, d, claims[t], [(t, u)], tol=1e-10).verdict
                    for t, u in pairs)
        if not (pred == norm == restr):
            mismatches.append(d.label)
    for a in (0.2, -0.4, 0.7):
        for t, u in pairs:
            rep = D.check_structure("restriction", tree8, Constant(a), [Claim.constant(0.1, t)], [(t, u)])
            const_gap = max(const_gap, abs(rep.worst_violation - (u - t) * abs(a)))
    ok = not mismatches and const_gap <= 1e-10 and len(normalized) == len(non) == 10
    record(6, ok, f"verdict mismatches {mismatches}, Constant(a) gap {const_gap:.1e}")


def _families():
    inc = [D.abs_family(lambda u: u), D.abs_family(lambda u: 0.2 + u * u), D.abs_family(lambda u: math.sqrt(u))]
    dec = [D.abs_family(lambda u: 1 - u), D.abs_family(lambda u: 1.2 - u * u), D.abs_family(lambda u: 2 * (1 - u))]
    v_ok = [D.volterra_abs(lambda t: 1 - t), D.volterra_abs(lambda t: 1.5 - t * t)]
    v_bad = [D.volterra_abs(lambda t: t), D.volterra_abs(lambda t: 0.1 + t * t)]
    return inc, dec, v_ok, v_bad


def test_c07_family_theorems(tree8, corpus20):
    inc, dec, v_ok, v_bad = _families()
    sub = lambda d: D.check_time_consistency("sub", tree8, d, corpus20)  # noqa: E731
    passes = [sub(d) for d in inc + v_ok]
    fails = [sub(d) for d in dec + v_bad]
    ok = all(r.verdict for r in passes) and all(not r.verdict and r.worst_violation > 0 for r in fails)
    record(7, ok, f"pass-side worst {max(r.worst_violation for r in passes):.1e}, "
                  f"fail-side min {min(r.worst_violation for r in fails):.3f}")


def test_c08_horizon_comparison(tree8):
    rng = np.random.default_rng(8)
    worst, hyp = -math.inf, True
    for _ in range(100):
        d1, d2 = D.comparison_fixture(rng, 0.5, 1.0)
        x1, x2 = D.comparison_terminals(tree8, rng, 0.5, 1.0)
        rep = D.check_horizon_comparison(tree8, d1, d2, x1, x2, 0.5, 1.0)
        hyp &= rep.hypotheses
        worst = max(worst, rep.worst_violation)
    record(8, hyp and worst <= 1e-10, f"100 fixtures, hypotheses hold {hyp}, worst violation {worst:.1e}")


def test_c09_dual(tree8):
    qg = np.linspace(-2, 2, 41)
    rng = np.random.default_rng(9)
    drivers = [Linear(0.3, 0.1), Linear(-0.5), Entropic(1.0), Entropic(0.5, 0.1),
               quadratic_form_driver(c0=0.1, c2=0.4, c3=0.2)]
    claims = [Claim.linear(1.0, 1.0), Claim.call(0.0, 1.0), Claim.put(0.2, 0.5), Claim.constant(0.3, 1.0)]
    weak, lin_gap, ent_gap = math.inf, 0.0, 0.0
    for d in drivers:
        for c in claims:
            primal = tree_solve(tree8, d, c, 1.0).values(0)
            dual, _ = tree_dual_sup(tree8, d, c, 0, 1, qg)
            weak = min(weak, float(np.min(primal - dual)))
            for _ in range(10):
                m = TreeMeasure.random(tree8, rng, 0.0, 1.0, float(rng.choice([0.5, 1.0, 2.0])))
                k, vals = tree8.claim_nodes(c)
                e = tree_expectation(m, -vals, k, 0.0) - tree_penalty(tree8, d, m, 0, 1)
                weak = min(weak, float(np.min(primal - e)))
            if isinstance(d, Linear):
                lin_gap = max(lin_gap, float(np.max(np.abs(primal - dual))))
            elif isinstance(d, Entropic):
                ent_gap = max(ent_gap, float(np.max(primal - dual)))
    ok = weak >= -1e-12 and lin_gap <= 1e-10 and ent_gap <= 2e-2
    record(9, ok, f"min primal-minus-dual {weak:.1e}, Linear gap {lin_gap:.1e}, Entropic gap {ent_gap:.1e}")


def test_c10_driver_recovery():
    mc = MCBackend.simulate(SolverConfig(M=100_000, N=128, seed=10))
    eps = 4 / 128
    s_grid = [0.0, 0.25, 0.5, 0.75, 0.875]
    z_grid = [-1.0, -0.5, 0.0, 0.5, 1.0]
    zz = np.asarray(z_grid)
    worst = 0.0
    est = {}
    drivers = {"lin": Linear(0.3, 0.1), "lin2": Linear(0.3, 0.2), "ent": Entropic(1.0), "ent2": Entropic(2.0)}
    for name, d in drivers.items():
        est[name] = D.recover_driver(mc, d, z_grid, s_grid, eps)
        truth = np.array([[float(np.asarray(d(s, s, 0.0, z))) for z in zz] for s in s_grid])
        worst = max(worst, float(np.max(np.abs(est[name] - truth))))
    order = max(float(np.max(est["lin"] - est["lin2"])), float(np.max(est["ent"] - est["ent2"])))
    ok = worst <= 0.05 and order <= 0.05
    record(10, ok, f"worst recovery error {worst:.1e}, worst order violation {order:.1e}")


def test_c11_penalty_relations():
    tree = TreeModel.uniform(1.0, 6)
    rng = np.random.default_rng(11)
    triples = D.all_triples(tree.grid)

    def ms(s, t, u):
        return [D.random_measures(tree, rng, s, t, u) for _ in range(6)]

    singles = [Linear(0.3, 0.1), Entropic(1.0), Constant(0.2), quadratic_form_driver(c0=0.1, c1=0.2, c2=0.3, c3=0.4)]
    cocycle = max(D.check_penalty_relations("cocycle", tree, d, ms, triples).worst_violation for d in singles)
    inc, dec, _, _ = _families()
    claims = D.claim_corpus(np.random.default_rng(111), 20)
    mism = []
    for d in singles + inc + dec:
        a = D.check_penalty_relations("sub_penalty", tree, d, ms, triples).verdict
        b = D.check_time_consistency("sub", tree, d, claims).verdict
        if a != b:
            mism.append(d.label)
    record(11, cocycle <= 1e-9 and not mism, f"cocycle residual {cocycle:.1e}, verdict mismatches {mism}")


def test_c12_implication_meta(tree8, corpus20):
    inc, dec, v_ok, v_bad = _families()
    normalized, non = _catalog()
    fixtures = normalized + non + inc + dec + v_ok + v_bad + [
        Family({t: Entropic(1.0 + t) for t in tree8.grid.times}),
        Family({t: Linear(0.2, -0.1 * t) for t in tree8.grid.times}),
    ]
    bad = []
    for d in fixtures:
        v = D.implication_verdicts(tree8, d, corpus20[:8])
        for arrow in D.implication_counterexamples(v):
            bad.append(f"{d.label}: {arrow}")
    record(12, not bad, f"{len(fixtures)} fixtures, counterexamples {bad}")


def test_c13_reproducibility(tmp_path):
    root = Path(__file__).resolve().parents[1] / "manifests"
    same = True
    for m in sorted(root.glob("*.json")):
        outs = []
        for i in range(2):
            out = tmp_path / m.stem / str(i)
            assert cli.main(["run", str(m), "--output-dir", str(out), "--workers", str(1 + 3 * i)]) == 0
            outs.append({p.name: p.read_bytes() for p in out.iterdir()})
        same &= outs[0] == outs[1]
    elapsed = time.perf_counter() - START
    record(13, same and elapsed < 900, f"byte-identical reruns {same}, acceptance suite {elapsed:.0f}s")
