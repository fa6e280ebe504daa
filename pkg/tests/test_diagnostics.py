import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from horizonrisk import diagnostics as D
from horizonrisk.core import (Claim, Constant, Entropic, Family, Linear, VolterraLinear, VolterraQuadratic,
                              quadratic_form_driver)
from horizonrisk.errors import InvalidArgumentError, UnsupportedError
from horizonrisk.tree import TreeMeasure, TreeModel


@pytest.fixture(scope="module")
def corpus():
    return D.claim_corpus(np.random.default_rng(7), 10)


def test_strong_tc_linear(tree8, corpus):
    rep = D.check_time_consistency("strong", tree8, Linear(0.3, 0.1), corpus)
    assert rep.verdict and rep.worst_violation <= 1e-10
    assert len(rep.triples) == 165 and rep.backend == "tree"


def test_family_sub_tc(tree8, corpus):
    inc = D.abs_family(lambda u: u)
    dec = D.abs_family(lambda u: 1.0 - u)
    assert D.check_time_consistency("sub_tc", tree8, inc, corpus).verdict
    rep = D.check_time_consistency("sub_tc", tree8, dec, corpus)
    assert not rep.verdict and rep.worst_violation > 0


def test_order_label(tree8, corpus):
    rep = D.check_time_consistency("order_tc", tree8, Entropic(1.0), corpus[:2], [(0, 0.5, 1.0)])
    assert rep.notes == ["order-TC (canonical witness)"]


def test_off_grid_triples(tree8, corpus):
    with pytest.raises(InvalidArgumentError):
        D.check_time_consistency("strong", tree8, Linear(0.3), corpus, [(0, 0.3, 1.0)])
    with pytest.raises(InvalidArgumentError):
        D.check_time_consistency("strong", tree8, Linear(0.3), corpus, [(0, 0.75, 0.5)])
    with pytest.raises(InvalidArgumentError):
        D.check_time_consistency("bogus", tree8, Linear(0.3), corpus)


def test_verdict_matches_tolerance(tree8, corpus):
    rep = D.check_time_consistency("sub_tc", tree8, D.abs_family(lambda u: 1 - u), corpus[:3],
                                   [(0, 0.5, 1.0)], tol=10.0)
    assert rep.verdict == (rep.worst_violation <= rep.tolerance)


def test_structure_examples(tree8):
    rep = D.check_structure("restriction", tree8, Linear(0.3, 0.0), [Claim.linear(1.0, 0.5)], [(0.5, 1.0)])
    assert rep.verdict and rep.worst_violation <= 1e-10
    rep = D.check_structure("restriction", tree8, Constant(0.2), [Claim.constant(0.0, 0.5)], [(0.5, 1.0)])
    assert rep.worst_violation == pytest.approx(0.1, abs=1e-12) and not rep.verdict
    rep = D.check_structure("normalization", tree8, Constant(0.2), [], [(1.0, 1.0)])
    assert rep.verdict
    with pytest.raises(InvalidArgumentError):
        D.check_structure("restriction", tree8, Linear(0.3), [Claim.linear(1.0, 1.0)], [(0.5, 1.0)])


def test_restriction_constant_family(tree8, corpus):
    two = Family({t: (Entropic(1.0) if t < 0.75 else Entropic(2.0)) for t in np.linspace(0, 1, 9)})
    claims = [D.place(c, 0.5) for c in corpus]
    rep = D.check_structure("restriction", tree8, two, claims, [(0.5, 1.0)])
    assert not rep.verdict and rep.worst_violation > 1e-3
    single = Family({t: Entropic(1.0) for t in np.linspace(0, 1, 9)})
    assert D.check_structure("restriction", tree8, single, claims, [(0.5, 1.0)]).verdict


def test_gamma_examples(tree8):
    rep = D.gamma_surface(tree8, Constant(0.2), Claim.constant(0.0, 0.5), 0, 0.5, [0.5, 1.0])
    assert rep.gammas[0][0] == 0.0
    assert rep.gammas[1][0] == pytest.approx(0.1, abs=1e-14)
    assert rep.rows[1]["closed_form"] == pytest.approx(0.1)
    d = quadratic_form_driver(c0=lambda t, s: math.exp(-s))
    rep = D.gamma_surface(tree8, d, Claim.linear(1.0, 0.5), 0, 0.5, [1.0])
    assert rep.rows[0]["closed_form"] == pytest.approx(0.2386512185411911, abs=1e-12)
    with pytest.raises(InvalidArgumentError):
        D.gamma_surface(tree8, d, Claim.linear(1.0, 1.0), 0, 0.5, [1.0])


@given(st.floats(-2, 2), st.integers(0, 9))
def test_gamma_translation_invariance(m, i):
    tree = TreeModel.uniform(1.0, 8)
    c = D.place(D.claim_corpus(np.random.default_rng(i), 5)[i % 5], 0.5)
    d = quadratic_form_driver(c0=0.1, c1=0.2, c2=0.3)
    a = D.gamma_surface(tree, d, c, 0.25, 0.5, [0.75, 1.0])
    b = D.gamma_surface(tree, d, c.shifted(m), 0.25, 0.5, [0.75, 1.0])
    for x, y in zip(a.gammas, b.gammas):
        assert np.allclose(x, y, atol=1e-12)


@pytest.mark.parametrize("d", [Constant(0.3), Entropic(1.0, 0.1), quadratic_form_driver(c0=0.05, c3=0.5),
                               VolterraLinear(0.2, lambda t, s: s), VolterraQuadratic(1.0, lambda t, s: t)],
                         ids=lambda d: d.label)
def test_nonnegative_zero_section_gives_longevity(tree8, corpus, d):
    assert D.zero_section_nonnegative(d, tree8.grid)
    for c in corpus:
        rep = D.gamma_surface(tree8, d, D.place(c, 0.5), 0.25, 0.5, [0.5, 0.75, 1.0])
        assert all(np.all(g >= -1e-12) for g in rep.gammas)


@pytest.mark.parametrize("d", [Linear(0.3, 0.1), Entropic(1.0, lambda s: s), quadratic_form_driver(c1=0.2, c3=0.3)],
                         ids=lambda d: d.label)
def test_gamma_identity(tree8, d):
    for c in (Claim.call(0.0, 0.5), Claim.linear(-1.0, 0.25)):
        assert D.gamma_identity_residual(tree8, d, c, 0.0, 0.5, 1.0) <= 1e-9
        assert D.gamma_identity_residual(tree8, d, c, 0.25, 0.5, 0.875) <= 1e-9


def test_horizon_comparison_examples(tree8):
    zero = Claim.constant(0.0, 0.5)
    rep = D.check_horizon_comparison(tree8, Constant(0.0), Constant(0.1), zero, Claim.constant(0.0, 1.0), 0.5, 1.0)
    assert rep.verdict and rep.hypotheses
    rep = D.check_horizon_comparison(tree8, Entropic(1.0), Entropic(1.0), Claim.call(0, 0.5), Claim.call(0, 0.5),
                                     0.5, 0.5)
    assert rep.verdict and rep.worst_violation == 0.0
    with pytest.raises(InvalidArgumentError):
        D.check_horizon_comparison(tree8, Constant(0.0), Constant(0.0), zero, zero, 1.0, 0.5)


def test_horizon_comparison_fuzz_detects_violation(tree8, rng):
    d1, d2 = D.comparison_fixture(rng)
    x1, x2 = D.comparison_terminals(tree8, rng, 0.5, 1.0)
    # break the terminal ordering: the tail conclusion must fail
    rep = D.check_horizon_comparison(tree8, d1, Constant(0.0), x1, x2 - 10.0, 0.5, 1.0)
    assert not rep.verdict and rep.worst_violation > 1


def test_recover_driver_tree():
    tree = TreeModel.uniform(1.0, 128)
    est = D.recover_driver(tree, Linear(0.3, 0.1), [1.0], [0.25], 4 / 128)
    assert est[0, 0] == pytest.approx(0.4, abs=1e-12)
    assert np.allclose(D.recover_driver(tree, Constant(0.0), [-1, 1], [0.0], 4 / 128), 0, atol=1e-14)
    with pytest.raises(InvalidArgumentError):
        D.recover_driver(tree, Linear(0.3), [1.0], [0.0], 0.5 / 128)
    ent = D.recover_driver(tree, Entropic(1.0), [-1.0, 2.0], [0.5], 4 / 128, richardson=True)
    assert np.allclose(ent, [[0.5, 2.0]], atol=1e-6)


def test_recover_driver_custom_evaluator(tree8):
    est = D.recover_driver(tree8, Linear(0.3), [1.0, 2.0], [0.0], 0.25, evaluator=lambda z, s, e: 7 * z * e)
    assert np.allclose(est, [[7.0, 14.0]])


def test_penalty_identity_measures(tree6):
    P = lambda s, t, u: [(TreeMeasure.identity(tree6, s, t), TreeMeasure.identity(tree6, t, u))]  # noqa: E731
    for kind in D.PENALTY_KINDS:
        rep = D.check_penalty_relations(kind, tree6, Entropic(1.0), P, [(0, 0.5, 1.0)])
        assert rep.verdict and rep.worst_violation == 0.0


def test_penalty_family(tree6, rng):
    def ms(s, t, u):
        return [(TreeMeasure.random(tree6, rng, s, t, 0.5), TreeMeasure.random(tree6, rng, t, u, 0.2))
                for _ in range(3)]

    triples = [(0, 1 / 3, 2 / 3)]
    assert D.check_penalty_relations("sub_penalty", tree6, D.abs_family(lambda u: u), ms, triples).verdict
    rep = D.check_penalty_relations("sub_penalty", tree6, D.abs_family(lambda u: 1 - u), ms, triples)
    assert not rep.verdict and rep.worst_violation > 0


def test_weak_cocycle_equality_at_argmax(tree6, corpus):
    P = lambda s, t, u: []  # noqa: E731
    for d in (Linear(0.5, 0.1), Entropic(1.0)):
        rep = D.check_penalty_relations("weak_cocycle", tree6, d, P, [(0, 0.5, 1.0)], claims=corpus[:4],
                                        q_grid=np.linspace(-2, 2, 41))
        assert rep.verdict, rep.worst_violation


def test_acceptance_examples(tree8):
    rep = D.check_acceptance_inclusion(tree8, Constant(0.2), [Claim.constant(-0.15), Claim.constant(0.3)],
                                       [(0, 0.5, 1.0)])
    rows = {r["claim"]: r for r in rep.rows}
    assert not rows["const(-0.15)"]["in_su"]
    assert rows["const(0.3)"]["in_su"] and rows["const(0.3)"]["in_st"]
    assert rep.verdict
    rep = D.check_acceptance_inclusion(tree8, Entropic(1.0), D.claim_corpus(np.random.default_rng(1), 50),
                                       [(0, 0.5, 1.0)])
    assert rep.equal_memberships == 50
    rep = D.check_acceptance_inclusion(tree8, Linear(0.3), [Claim.constant(0.0)], [(0, 0.5, 1.0)])
    assert rep.rows[0]["in_su"] and rep.rows[0]["in_st"]


def test_implications(tree8, corpus):
    for d in (Linear(0.3, 0.1), D.abs_family(lambda u: 1 - u), D.abs_family(lambda u: u), Constant(-0.2)):
        v = D.implication_verdicts(tree8, d, corpus[:4])
        assert D.implication_counterexamples(v) == []


def test_implication_counterexample_detection():
    v = dict(strong_tc=True, weak_tc=False, order_tc=True, sub_tc=False, h_longevity=True,
             rho0_nonpositive=True, rho0_nonnegative=True)
    bad = D.implication_counterexamples(v)
    assert "strong => weak" in bad and "weak <=> order" in bad


def test_mc_checks(mc_small):
    claims = [Claim.linear(1.0, 0.0)]
    rep = D.check_time_consistency("strong", mc_small, Linear(0.3, 0.1), claims, [(0, 0.5, 1.0)])
    assert rep.verdict and rep.backend == "mc"
    with pytest.raises(UnsupportedError):
        D.check_time_consistency("strong", mc_small, Linear(0.3), claims, [(0.5, 0.5, 1.0)])
    rep = D.check_structure("restriction", mc_small, Constant(0.2), [Claim.constant(0.0, 0.5)], [(0.5, 1.0)])
    assert not rep.verdict


def test_zero_section_predicates(tree8):
    assert D.zero_section_vanishes(Linear(0.3), tree8.grid)
    assert not D.zero_section_vanishes(Constant(0.1), tree8.grid)
    assert D.zero_section_vanishes(D.abs_family(lambda u: u), tree8.grid)
