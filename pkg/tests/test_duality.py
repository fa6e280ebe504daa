import math

import numpy as np
import pytest

from horizonrisk.core import Claim, Constant, Entropic, Family, Linear, VolterraLinear, VolterraQuadratic
from horizonrisk.duality import (MeasureSpec, build_density, build_premium_measure, closed_form,
                                 mc_density, penalty_mc, reweighted_mean, zero_section_integral)
from horizonrisk.errors import PositivityError
from horizonrisk.mc import SolverConfig, mc_solve_bsde, simulate_paths
from horizonrisk.tree import TreeModel, tree_expectation, tree_solve


def test_closed_form_examples():
    assert closed_form(Constant(0.5), Claim.constant(0.0, 1.0), 0, 1) == 0.5
    assert closed_form(Entropic(1.0), Claim.linear(1.0, 1.0), 0, 1) == pytest.approx(0.5, abs=1e-12)
    assert closed_form(VolterraLinear(0.2, 0.1), Claim.linear(1.0, 1.0), 0, 1) == pytest.approx(-0.1, abs=1e-15)
    assert closed_form(Linear(0.3, 0.1), Claim.linear(1.0, 1.0), 0, 1) == pytest.approx(-0.2, abs=1e-15)
    assert closed_form(VolterraQuadratic(1.0), Claim.linear(1.0, 1.0), 0, 1) == pytest.approx(0.5)
    assert closed_form(Entropic(1.0), Claim.call(0.0, 1.0), 0, 1) is None


def test_closed_form_conditional():
    # rho_{t,1}(B_1) for the quadratic Volterra example: -B_t + (1 - t)/2
    d = VolterraQuadratic(1.0)
    assert closed_form(d, Claim.linear(1.0, 1.0), 0.5, 1.0, b_s=0.3) == pytest.approx(-0.3 + 0.25)
    # time-dependent coefficients go through quadrature
    ent = Entropic(2.0, a=lambda s: math.exp(-s))
    assert closed_form(ent, Claim.constant(0.0, 1.0), 0.0, 1.0) == pytest.approx(1 - math.exp(-1), abs=1e-12)


def test_closed_form_matches_tree():
    tree = TreeModel.uniform(1.0, 8)
    for d in (Constant(0.3), Linear(-0.4, 0.2), VolterraLinear(0.1, lambda t, s: 1 + t)):
        sol = tree_solve(tree, d, Claim.linear(1.0, 1.0), 1.0)
        for k in (0, 4):
            cf = [closed_form(d, Claim.linear(1.0, 1.0), tree.time(k), 1.0, b) for b in tree.brownian(k)]
            assert np.allclose(sol.values(k), cf, atol=1e-12)


def test_density_tree():
    tree = TreeModel.uniform(1.0, 6)
    moves, dens = build_density(MeasureSpec.constant(0.0, 0, 1), tree)
    assert np.all(dens == 1)
    moves, dens = build_density(MeasureSpec.of_time(lambda t: 0.5 + t, 0.0, 1.0), tree)
    assert dens.mean() == pytest.approx(1.0, abs=1e-14) and np.all(dens > 0)
    with pytest.raises(PositivityError):
        build_density(MeasureSpec.constant(3.0, 0, 1), tree)


def test_density_mc():
    ens = simulate_paths(SolverConfig(M=200000, N=10, seed=4))
    dens = mc_density(MeasureSpec.constant(0.3, 0, 1), ens)
    assert abs(dens.mean() - 1) <= 5 * dens.std() / math.sqrt(ens.M)
    est, se = reweighted_mean(ens.paths[:, -1, 0], dens)
    assert abs(est - 0.3) <= 3 * se
    before = mc_density(MeasureSpec.constant(0.3, 0.5, 1), ens, upto=0.5)
    assert np.all(before == 1)


def test_penalty_mc_examples():
    ens = simulate_paths(SolverConfig(M=20000, N=10, seed=4))
    est, se, bad = penalty_mc(ens, Entropic(1.0), MeasureSpec.constant(1.0, 0, 1), 0, 1)
    assert est == pytest.approx(0.5, abs=1e-12) and bad == 0
    est, _, _ = penalty_mc(ens, Linear(0.3, 0.1), MeasureSpec.constant(0.3, 0.2, 0.8), 0.2, 0.8)
    assert est == pytest.approx(-0.06, abs=1e-12)
    est, _, bad = penalty_mc(ens, Linear(0.3, 0.1), MeasureSpec.constant(0.15, 0, 1), 0, 1)
    assert est == math.inf and bad > 0


def test_weak_duality_mc():
    cfg = SolverConfig(M=40000, N=20, seed=9)
    ens = simulate_paths(cfg)
    d = Entropic(1.0)
    c = Claim.call(0.0, 1.0)
    r = mc_solve_bsde(ens, d, c, 1.0, cfg)
    for q in (-1.0, -0.5, 0.0, 0.4):
        m = MeasureSpec.constant(q, 0, 1)
        dens = mc_density(m, ens)
        e, se1 = reweighted_mean(-ens.paths[:, -1, 0].clip(min=0), dens)
        a, se2, _ = penalty_mc(ens, d, m, 0, 1)
        assert e - a <= r.value + 3 * math.sqrt(r.stderr**2 + se1**2 + se2**2)


def test_premium_linear_tree():
    tree = TreeModel.uniform(1.0, 8)
    # horizon-dependent slopes make the two Z profiles differ
    d = Family({0.5: Linear(-0.2, 0.1), 1.0: Linear(0.3, 0.1)})
    c = Claim.call(0.0, 0.5)
    pm = build_premium_measure(tree_solve(tree, d, c, 1.0), tree_solve(tree, d, c, 0.5))
    q = pm.tree_measure.q
    # q = b wherever the Z profiles differ, 0 elsewhere
    assert set(np.round(np.unique(q), 14)) <= {0.0, 0.3}
    assert np.any(np.isclose(q, 0.3, rtol=0, atol=1e-14))
    same = build_premium_measure(tree_solve(tree, d, c, 1.0), tree_solve(tree, d, c, 1.0))
    assert np.all(same.tree_measure.q == 0)


def test_premium_entropic_example():
    tree = TreeModel.uniform(1.0, 8)
    d = Entropic(1.0)
    c = Claim.linear(1.0, 0.5)
    long, short = tree_solve(tree, d, c, 1.0), tree_solve(tree, d, c, 0.5)
    pm = build_premium_measure(long, short)
    cost = np.zeros((8, 9))
    gamma = long.value0 - short.value0
    assert gamma == pytest.approx(0.0, abs=1e-15)
    assert tree_expectation(pm.tree_measure, np.zeros(9), 8, 0.0)[0] + cost.sum() == pytest.approx(gamma)
    assert zero_section_integral(d, 0, 0.5, 1.0) == 0.0


def test_premium_mc():
    cfg = SolverConfig(M=20000, N=10, seed=2)
    ens = simulate_paths(cfg)
    d = Family({0.5: Linear(-0.2, 0.1), 1.0: Linear(0.3, 0.1)})
    c = Claim.call(0.0, 0.5)
    pm = build_premium_measure(mc_solve_bsde(ens, d, c, 1.0, cfg), mc_solve_bsde(ens, d, c, 0.5, cfg),
                               d=d, ens=ens)
    q = pm.spec.at(0.2, ens.paths[:, 2, :])
    assert np.all(np.isclose(q, 0.3) | np.isclose(q, 0.0))
    assert np.mean(np.isclose(q, 0.3)) > 0.5


def test_zero_section_integral():
    from horizonrisk.core import quadratic_form_driver

    d = quadratic_form_driver(c0=lambda t, s: math.exp(-s))
    assert zero_section_integral(d, 0, 0.5, 1.0) == pytest.approx(math.exp(-0.5) * (1 - math.exp(-0.5)))
