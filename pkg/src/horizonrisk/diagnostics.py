"""Checkable forms of the time-consistency and horizon-risk properties.

Tree verdicts are exact up to rounding and default to an absolute tolerance of
1e-9; Monte Carlo checks run at ``s = 0`` and use 3 combined standard errors.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Claim, Driver, Family, TimeGrid, quadratic_form_driver, resolve
from .duality import zero_section_integral
from .errors import InvalidArgumentError, UnsupportedError
from .mc import MCBackend, difference_stderr, solve_values
from .tree import (TreeMeasure, TreeModel, _sweep, premium_kernel, tree_dual_sup, tree_expectation,
                   tree_pasting, tree_penalty, tree_solve)
from . import kernels

TREE_TOL = 1e-9
MC_SIGMAS = 3.0

TC_KINDS = ("strong_tc", "weak_tc", "order_tc", "sub_tc", "h_longevity")
STRUCTURE_KINDS = ("restriction", "normalization")
PENALTY_KINDS = ("cocycle", "weak_cocycle", "sub_penalty")
PROPERTIES = TC_KINDS + STRUCTURE_KINDS + PENALTY_KINDS + (
    "horizon_comparison", "acceptance_inclusion")
_ALIASES = {"strong": "strong_tc", "weak": "weak_tc", "order": "order_tc", "sub": "sub_tc"}


@dataclass
class ConsistencyReport:
    property: str
    triples: list
    worst_violation: float
    tolerance: float
    verdict: bool
    backend: str
    label: str = ""
    rows: list = field(default_factory=list, repr=False)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict


@dataclass
class GammaReport:
    """``gamma(s, t, u, X)`` per horizon ``u``; tree values are level-s node vectors."""

    claim: str
    backend: str
    rows: list = field(default_factory=list)

    @property
    def gammas(self):
        return [r["gamma"] for r in self.rows]


def _kind(kind):
    kind = _ALIASES.get(kind, kind)
    if kind not in PROPERTIES:
        raise InvalidArgumentError(f"unknown property {kind!r}")
    return kind


def _backend_tag(backend):
    if isinstance(backend, TreeModel):
        return "tree"
    if isinstance(backend, MCBackend):
        return "mc"
    raise InvalidArgumentError("backend must be a TreeModel or an MCBackend")


def _grid(backend) -> TimeGrid:
    return backend.grid


def all_triples(grid: TimeGrid, stride=1):
    idx = range(0, grid.N + 1, stride)
    t = grid.times
    return [(float(t[a]), float(t[b]), float(t[c])) for a in idx for b in idx for c in idx if a <= b <= c]


def _levels(grid, triples):
    out = []
    for s, t, u in triples:
        a, b, c = grid.index(s), grid.index(t), grid.index(u)
        if not a <= b <= c:
            raise InvalidArgumentError(f"triple {(s, t, u)} is not ordered")
        out.append((a, b, c))
    return out


def place(c: Claim, u) -> Claim:
    """Markov claim re-declared as a function of ``B_u``."""
    if not c.markov:
        raise UnsupportedError(f"claim {c.label!r} cannot be moved to another horizon")
    f = c.terminal
    return dataclasses.replace(c, u=float(u), payoff=lambda p: f(p[:, -1, :]))


def _verdict(worst, tol):
    return bool(worst <= tol)


def _finish(kind, triples, viol, tol, tag, label, rows, notes=()):
    worst = max(viol) if viol else 0.0
    return ConsistencyReport(kind, list(triples), float(worst), float(tol), _verdict(worst, tol), tag,
                             label, rows, list(notes))


# ---------------------------------------------------------------------------
# tree evaluation helpers


class _TreeEval:
    """Memoized ``rho`` rows on one tree for one driver."""

    def __init__(self, tree, d):
        self.tree, self.d = tree, d
        self._cache = {}

    def solve(self, claim, u_level, key=None):
        k = (key if key is not None else id(claim), u_level)
        if k not in self._cache:
            self._cache[k] = tree_solve(self.tree, self.d, claim, self.tree.time(u_level))
        return self._cache[k]

    def node(self, values, level, u_level):
        claim = self.tree.node_claim(values, level)
        return tree_solve(self.tree, self.d, claim, self.tree.time(u_level))

    def zero(self, t_level, u_level):
        return self.solve(Claim.constant(0.0, self.tree.time(t_level)), u_level, ("zero", t_level))


def _node_violation(a, b):
    return float(np.max(a - b))


# ---------------------------------------------------------------------------
# time consistency


def check_time_consistency(kind, backend, d: Driver, claims, triples=None, tol=None,
                           label="") -> ConsistencyReport:
    """Strong, weak, order (canonical witness), sub TC, or h-longevity over triples.

    Claims are Markov templates placed at ``u`` (at ``t`` for h-longevity).
    """
    kind = _kind(kind)
    if kind not in TC_KINDS:
        raise InvalidArgumentError(f"{kind} is not a time-consistency property")
    tag = _backend_tag(backend)
    grid = _grid(backend)
    triples = all_triples(grid) if triples is None else list(triples)
    lv = _levels(grid, triples)
    if tag == "tree":
        return _tc_tree(kind, backend, d, claims, triples, lv, TREE_TOL if tol is None else tol, label)
    return _tc_mc(kind, backend, d, claims, triples, lv, tol, label)


def _tc_tree(kind, tree, d, claims, triples, lv, tol, label):
    ev = _TreeEval(tree, d)
    rows, viol = [], []
    notes = ["order-TC (canonical witness)"] if kind == "order_tc" else []
    for ci, c in enumerate(claims):
        for (s, t, u), (a, b, e) in zip(triples, lv):
            if kind == "h_longevity":
                X = place(c, tree.time(b))
                ru = ev.solve(X, e, (ci, "t", b)).values(a)
                rt = ev.solve(X, b, (ci, "t", b)).values(a)
                v = _node_violation(rt, ru)
            else:
                X = place(c, tree.time(e))
                sol_u = ev.solve(X, e, (ci, "u", e))
                inner = sol_u.values(b)
                rhs = sol_u.values(a)
                if kind in ("strong_tc", "sub_tc"):
                    lhs = ev.node(-inner, b, b).values(a)
                    diff = lhs - rhs
                    v = float(np.max(np.abs(diff))) if kind == "strong_tc" else float(np.max(diff))
                else:
                    zero = ev.zero(b, e).values(b)
                    witness = zero - inner
                    if kind == "weak_tc":
                        lhs = ev.node(witness, b, e).values(a)
                        v = float(np.max(np.abs(lhs - rhs)))
                    else:
                        # premise rho_tu(Y) = rho_tu(X) is computed, not assumed
                        wsol = ev.node(witness, b, e)
                        premise = float(np.max(np.abs(wsol.values(b) - inner)))
                        concl = float(np.max(np.abs(wsol.values(a) - rhs)))
                        v = concl if premise <= tol else 0.0
            viol.append(v)
            rows.append({"s": s, "t": t, "u": u, "claim": c.label, "violation": v})
    return _finish(kind, triples, viol, tol, "tree", label or d.label, rows, notes)


def _mc_rho(mc: MCBackend, d, claim_level, values, horizon_level, s_level=0):
    g = mc.grid
    return solve_values(mc.ens, d, claim_level, values, g.times[horizon_level], mc.cfg,
                        s=g.times[s_level], origin=0)


def _tc_mc(kind, mc, d, claims, triples, lv, tol, label):
    rows, viol, tols = [], [], []
    notes = ["Monte Carlo smoke check at s = 0; nested regressions"]
    for c in claims:
        for (s, t, u), (a, b, e) in zip(triples, lv):
            if a != 0:
                raise UnsupportedError("Monte Carlo consistency checks are evaluated at s = 0")
            if kind == "h_longevity":
                k, vals = mc.ens.claim_values(place(c, t))
                ru = _mc_rho(mc, d, k, vals, e)
                rt = _mc_rho(mc, d, k, vals, b)
                diff, se = rt.value - ru.value, math.hypot(difference_stderr(rt, ru),
                                                           math.hypot(rt.regression_se, ru.regression_se))
            else:
                k, vals = mc.ens.claim_values(place(c, u))
                rhs = _mc_rho(mc, d, k, vals, e)
                inner = _mc_rho(mc, d, k, vals, e, s_level=b)
                if kind in ("strong_tc", "sub_tc"):
                    lhs = _mc_rho(mc, d, b, -inner.fitted, b)
                else:
                    zero = _mc_rho(mc, d, b, np.zeros(mc.ens.M), e, s_level=b)
                    lhs = _mc_rho(mc, d, b, zero.fitted - inner.fitted, e)
                diff = lhs.value - rhs.value
                se = math.hypot(lhs.stderr, rhs.stderr)
            v = abs(diff) if kind in ("strong_tc", "weak_tc", "order_tc") else diff
            thr = MC_SIGMAS * se if tol is None else tol
            viol.append(v - thr)
            tols.append(thr)
            rows.append({"s": s, "t": t, "u": u, "claim": c.label, "violation": v, "stderr": se})
    rep = _finish(kind, triples, viol, 0.0, "mc", label or d.label, rows, notes)
    rep.worst_violation = max((r["violation"] for r in rows), default=0.0)
    rep.tolerance = max(tols, default=0.0)
    return rep


# ---------------------------------------------------------------------------
# restriction / normalization


def check_structure(kind, backend, d: Driver, claims, pairs, tol=None, label="") -> ConsistencyReport:
    """Restriction ``|rho_st(X) - rho_su(X)|`` or normalization ``|rho_tu(0)|``.

    Tree checks cover every level ``s <= t``; Monte Carlo checks use ``s = 0``.
    """
    kind = _kind(kind)
    if kind not in STRUCTURE_KINDS:
        raise InvalidArgumentError(f"{kind} is not a structure property")
    tag = _backend_tag(backend)
    grid = _grid(backend)
    rows, viol, triples = [], [], []
    tol = (TREE_TOL if tag == "tree" else None) if tol is None else tol
    thresholds = []
    for t, u in pairs:
        b, e = grid.index(t), grid.index(u)
        if b > e:
            raise InvalidArgumentError(f"pair {(t, u)} is not ordered")
        if kind == "normalization":
            if tag == "tree":
                v = float(np.max(np.abs(tree_solve(backend, d, Claim.constant(0.0, t), u).values(b))))
                thr = tol
            else:
                r = _mc_rho(backend, d, b, np.zeros(backend.ens.M), e, s_level=b)
                v, thr = abs(float(np.mean(r.fitted))), tol if tol is not None else MC_SIGMAS * r.stderr
            viol.append(v - thr)
            thresholds.append(thr)
            triples.append((float(grid.times[b]), float(t), float(u)))
            rows.append({"s": float(t), "t": float(t), "u": float(u), "claim": "0", "violation": v})
            continue
        for c in claims:
            if c.u > t + 1e-12:
                raise InvalidArgumentError(f"claim {c.label!r} is not measurable at t = {t}")
            if tag == "tree":
                st = tree_solve(backend, d, c, t)
                su = tree_solve(backend, d, c, u)
                k = min(b, backend.level(c.u))
                v = max(float(np.max(np.abs(st.values(a) - su.values(a)))) for a in range(k + 1))
                thr = tol
            else:
                k, vals = backend.ens.claim_values(c)
                rt, ru = _mc_rho(backend, d, k, vals, b), _mc_rho(backend, d, k, vals, e)
                v = abs(rt.value - ru.value)
                thr = tol if tol is not None else MC_SIGMAS * math.hypot(
                    difference_stderr(rt, ru), math.hypot(rt.regression_se, ru.regression_se))
            viol.append(v - thr)
            thresholds.append(thr)
            triples.append((0.0, float(t), float(u)))
            rows.append({"s": 0.0, "t": float(t), "u": float(u), "claim": c.label, "violation": v})
    worst = max((r["violation"] for r in rows), default=0.0)
    ok = all(x <= 0 for x in viol)
    return ConsistencyReport(kind, triples, worst, max(thresholds, default=tol or 0.0), ok, tag,
                             label or d.label, rows)


def zero_section_nonnegative(d: Driver, grid: TimeGrid, horizons=None) -> bool:
    return _zero_section_sign(d, grid, horizons) >= 0


def zero_section_vanishes(d: Driver, grid: TimeGrid, horizons=None, tol=1e-14) -> bool:
    """Lattice test of ``g(t, s, 0) = 0`` (every family member for families)."""
    return _zero_section_abs(d, grid, horizons) <= tol


def _members(d, grid, horizons):
    hs = grid.times[1:] if horizons is None else horizons
    return [(float(h), resolve(d, h)) for h in hs] if isinstance(d, Family) else [(grid.T, d)]


def _zero_sections(d, grid, horizons):
    for h, m in _members(d, grid, horizons):
        for t in grid.times:
            if t > h:
                break
            for s in grid.times:
                if s < t and m.volterra:
                    continue
                if s >= h:
                    break
                yield m.zero_section(t, s)


def _zero_section_abs(d, grid, horizons):
    return max((abs(v) for v in _zero_sections(d, grid, horizons)), default=0.0)


def _zero_section_sign(d, grid, horizons):
    return min(_zero_sections(d, grid, horizons), default=0.0)


# ---------------------------------------------------------------------------
# gamma


def gamma_surface(backend, d: Driver, c: Claim, s, t, u_grid) -> GammaReport:
    """``gamma(s, t, u, X) = rho_su(X) - rho_st(X)`` for each ``u`` in ``u_grid``.

    The closed-form column is ``int_t^u g(s, v, 0) dv`` for single drivers.
    """
    tag = _backend_tag(backend)
    grid = _grid(backend)
    a, b = grid.index(s), grid.index(t)
    if a > b:
        raise InvalidArgumentError("gamma needs s <= t")
    if c.u > t + 1e-12:
        raise InvalidArgumentError(f"claim {c.label!r} is not measurable at t = {t}")
    rep = GammaReport(c.label, tag)
    single = not isinstance(d, Family)
    if tag == "tree":
        base = tree_solve(backend, d, c, t).values(a)
    else:
        if a != 0:
            raise UnsupportedError("Monte Carlo gamma surfaces are evaluated at s = 0")
        k, vals = backend.ens.claim_values(c)
        short = _mc_rho(backend, d, k, vals, b)
    for u in u_grid:
        e = grid.index(u)
        if e < b:
            raise InvalidArgumentError("gamma needs u >= t")
        cf = zero_section_integral(d, float(grid.times[a]), float(grid.times[b]), float(grid.times[e])) \
            if single else None
        if tag == "tree":
            g = tree_solve(backend, d, c, u).values(a) - base
            se = 0.0
        else:
            long = short if e == b else _mc_rho(backend, d, k, vals, e)
            g = long.value - short.value
            se = 0.0 if e == b else math.hypot(difference_stderr(long, short),
                                               math.hypot(long.regression_se, short.regression_se))
        rep.rows.append({"s": float(grid.times[a]), "t": float(grid.times[b]), "u": float(grid.times[e]),
                         "gamma": g, "closed_form": cf, "stderr": se, "backend": tag})
    return rep


def gamma_identity_residual(tree: TreeModel, d: Driver, c: Claim, s, t, u) -> float:
    """Largest nodewise gap between gamma and ``E_Q~[sum g(v, 0) dt]`` on the tree."""
    a, b, e = tree.level(s), tree.level(t), tree.level(u)
    long = tree_solve(tree, d, c, u)
    short = tree_solve(tree, d, c, t)
    if long.volterra:
        Yl, _ = long.frozen(a)
        Ys, _ = short.frozen(a)
        gamma = Yl[a, : a + 1] - Ys[a, : a + 1]
    else:
        gamma = long.values(a) - short.values(a)
    m = premium_kernel(long, short, a)
    frozen = tree.time(a)
    cost = np.zeros((max(e, 1), tree.N + 1))
    for k in range(b, e):
        cost[k, : k + 1] = long.driver.zero_section(frozen, tree.time(k)) * tree.dt
    V = kernels.measure_sweep(e, a, np.zeros(e + 1), m.q, cost, tree.sqrt_dt)
    return float(np.max(np.abs(gamma - V[a, : a + 1])))


# ---------------------------------------------------------------------------
# horizon comparison


def _ancestor_bounds(k, j, k1):
    return max(0, j - (k - k1)), min(j, k1)


def check_horizon_comparison(tree: TreeModel, d1: Driver, d2: Driver, xi1, xi2, T1, T2,
                             tol=1e-10, lattice=None, label="") -> ConsistencyReport:
    """Nodewise check of both conclusions of the horizon comparison theorem.

    ``xi1``/``xi2`` are terminal values (not losses) given as node vectors at
    levels ``T1``/``T2`` or as claims. Hypotheses are sampled on a lattice and
    reported; the verdict concerns the conclusions.
    """
    if T1 > T2:
        raise InvalidArgumentError("horizon comparison needs T1 <= T2")
    k1, k2 = tree.level(T1), tree.level(T2)
    x1 = _node_values(tree, xi1, k1)
    x2 = _node_values(tree, xi2, k2)
    y1 = _terminal_solve(tree, d1, x1, k1)
    y2 = _terminal_solve(tree, d2, x2, k2)
    lat = np.linspace(-3.0, 3.0, 13) if lattice is None else np.asarray(lattice, dtype=float)
    yy, zz = np.meshgrid(lat, lat)
    yy, zz = yy.ravel(), zz.ravel()
    hyp = []
    for k in range(k2):
        s = tree.time(k)
        g2 = np.asarray(d2(0.0, s, yy, zz[:, None]), dtype=float)
        if k < k1:
            g1 = np.asarray(d1(0.0, s, yy, zz[:, None]), dtype=float)
            hyp.append(float(np.min(g2 - g1)))
        else:
            hyp.append(float(np.min(g2)))
    term_gap = math.inf
    for j2 in range(k2 + 1):
        lo, hi = _ancestor_bounds(k2, j2, k1)
        term_gap = min(term_gap, float(np.min(x2[j2] - x1[lo : hi + 1])))
    hypotheses = min(hyp + [term_gap]) >= -1e-12
    rows, viol = [], []
    for k in range(k1 + 1):
        v = float(np.max(y1[k, : k + 1] - y2[k, : k + 1]))
        viol.append(v)
        rows.append({"level": k, "conclusion": "Y2 >= Y1", "violation": v})
    for k in range(k1, k2 + 1):
        worst = -math.inf
        for j in range(k + 1):
            lo, hi = _ancestor_bounds(k, j, k1)
            worst = max(worst, float(np.max(x1[lo : hi + 1] - y2[k, j])))
        viol.append(worst)
        rows.append({"level": k, "conclusion": "Y2 >= xi1", "violation": worst})
    worst = max(viol)
    notes = [f"hypotheses hold on lattice: {hypotheses}"]
    rep = ConsistencyReport("horizon_comparison", [(0.0, float(T1), float(T2))], worst, tol,
                            worst <= tol, "tree", label, rows, notes)
    rep.hypotheses = hypotheses
    return rep


def _node_values(tree, xi, k):
    if isinstance(xi, Claim):
        level, vals = tree.claim_nodes(xi)
        if level != k:
            raise InvalidArgumentError("terminal claim must sit at its horizon")
        return vals
    vals = np.asarray(xi, dtype=float)
    if vals.shape != (k + 1,):
        raise InvalidArgumentError("terminal node vector has the wrong length")
    return vals


def _terminal_solve(tree, d, xi_vals, k):
    Y, _ = _sweep(tree, resolve(d, tree.time(k)), k, 0, k, -xi_vals)
    return Y


def comparison_fixture(rng, T1=0.5, T2=1.0, scale=1.0):
    """Random hypothesis-satisfying driver pair and ordered terminal values.

    ``g1 = c0 + c4 s + c1 y + c2 z + c3 |z|``; ``g2`` adds ``|noise|`` before
    T1 and is ``|h|`` afterwards. Slopes keep the explicit scheme monotone for
    ``dt >= 1/64``.
    """
    from .core import Custom

    c0, c4 = rng.uniform(-1, 1, 2) * scale
    c1 = rng.uniform(-1, 1)
    c2 = rng.uniform(-1, 1)
    c3 = rng.uniform(0, 1)
    n = rng.uniform(-0.5, 0.5, 4)
    h = rng.uniform(-1, 1, 4)

    def g1(t, s, y, z):
        x = z[..., 0]
        return c0 + c4 * s + c1 * y + c2 * x + c3 * np.abs(x)

    def g2(t, s, y, z):
        x = z[..., 0]
        if s < T1 - 1e-12:
            return g1(t, s, y, z) + np.abs(n[0] + n[1] * s + n[2] * y + n[3] * x)
        return np.abs(h[0] + h[1] * s + h[2] * y + h[3] * x)

    lip1 = abs(c2) + c3
    d1 = Custom(g1, supports_y=True, lipschitz=lip1 + abs(c1), label="fuzz-g1")
    d2 = Custom(g2, supports_y=True, lipschitz=lip1 + 0.5 + 2 * abs(c1) + 1.0, label="fuzz-g2")
    return d1, d2


def comparison_terminals(tree, rng, T1, T2):
    k1, k2 = tree.level(T1), tree.level(T2)
    x1 = rng.uniform(-1, 1, k1 + 1)
    x2 = np.empty(k2 + 1)
    for j2 in range(k2 + 1):
        lo, hi = _ancestor_bounds(k2, j2, k1)
        x2[j2] = np.max(x1[lo : hi + 1]) + rng.uniform(0, 0.5)
    return x1, x2


# ---------------------------------------------------------------------------
# driver recovery


def recover_driver(backend, d: Driver, z_grid, s_grid, eps, richardson=False, horizon=None,
                   evaluator=None):
    """Finite-eps converse-comparison estimate of the driver on an (s, z) lattice.

    ``g^(s, z) = rho_{s, s+eps}(-z (B_{s+eps} - B_s)) / eps``; ``evaluator`` may
    replace the built-in risk evaluation and is called as
    ``evaluator(z, s, eps) -> float``. ``horizon`` picks a family member.
    """
    grid = _grid(backend)
    dt = grid.T / grid.N
    if eps < dt - 1e-12:
        raise InvalidArgumentError("eps must be at least one grid step")
    m = eps / dt
    if abs(m - round(m)) > 1e-9:
        raise InvalidArgumentError("eps must be a multiple of the grid step")
    if horizon is not None:
        d = resolve(d, horizon)
    ev = evaluator or (lambda z, s, e: _recovery_value(backend, d, z, s, e))
    out = np.empty((len(s_grid), len(z_grid)))
    for i, s in enumerate(s_grid):
        for j, z in enumerate(z_grid):
            g1 = ev(z, s, eps) / eps
            if richardson:
                g2 = ev(z, s, 2 * eps) / (2 * eps)
                g1 = 2 * g1 - g2
            out[i, j] = g1
    return out


def _recovery_value(backend, d, z, s, eps):
    grid = _grid(backend)
    a = grid.index(s)
    e = grid.index(s + eps)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if isinstance(backend, TreeModel):
        claim = Claim.linear(-z, backend.time(e))
        vals = tree_solve(backend, d, claim, backend.time(e), stop=a).values(a)
        b = backend.brownian(a)
        return float(np.mean(vals - z[0] * b))
    ens = backend.ens
    inc = ens.paths[:, e, :] - ens.paths[:, a, :]
    vals = -(inc @ z)
    r = solve_values(ens, d, e, vals, grid.times[e], backend.cfg, s=grid.times[a], origin=a)
    return r.value


# ---------------------------------------------------------------------------
# penalty relations


def _pen(tree, d, m, a, b, horizon_level):
    return tree_penalty(tree, d, m, tree.time(a), tree.time(b), horizon=tree.time(horizon_level))


def _e_q(m, values, level, a):
    if np.all(np.isfinite(values)):
        return tree_expectation(m, values, level, m.tree.time(a))
    # inf is absorbing: any reachable infinite node makes the expectation infinite
    fin = np.where(np.isfinite(values), values, 0.0)
    base = tree_expectation(m, fin, level, m.tree.time(a))
    hits = tree_expectation(m, np.where(np.isfinite(values), 0.0, 1.0), level, m.tree.time(a))
    return np.where(hits > 0, np.inf, base)


def _signed_gap(lhs, rhs):
    """``lhs - rhs`` with the conventions inf - inf = 0, x - inf = -inf."""
    out = np.empty_like(lhs)
    for i, (x, y) in enumerate(zip(lhs, rhs)):
        if math.isinf(y):
            out[i] = 0.0 if math.isinf(x) else -math.inf
        elif math.isinf(x):
            out[i] = math.inf
        else:
            out[i] = x - y
    return out


def random_measures(tree, rng, s, t, u, bounds=(0.0, 0.25, 0.5, 1.0)):
    """Pairs (Q on [s, t], R on [t, u]) with uniform kernels on random bounds."""
    A = float(rng.choice(bounds))
    B = float(rng.choice(bounds))
    return TreeMeasure.random(tree, rng, s, t, A), TreeMeasure.random(tree, rng, t, u, B)


def check_penalty_relations(kind, tree: TreeModel, d: Driver, measures, triples, tol=None,
                            claims=None, q_grid=None, label="") -> ConsistencyReport:
    """Cocycle, weak cocycle or sub-penalty residuals with exact tree penalties.

    ``measures`` maps each triple to a list of ``(Q, R)`` pairs, or is a
    callable ``(s, t, u) -> list``. The weak-cocycle ess-inf is ``-rho_tu(0)``
    from an exact tree solve; its equality half is tested at the dual argmax
    for each of ``claims``.
    """
    kind = _kind(kind)
    if kind not in PENALTY_KINDS:
        raise InvalidArgumentError(f"{kind} is not a penalty relation")
    tol = TREE_TOL if tol is None else tol
    rows, viol = [], []
    notes = []
    for s, t, u in triples:
        a, b, e = tree.level(s), tree.level(t), tree.level(u)
        pairs = measures(s, t, u) if callable(measures) else measures
        for Q, R in pairs:
            S = tree_pasting(Q.restrict(s, t), R.restrict(t, u))
            if kind == "cocycle":
                lhs = _pen(tree, d, S, a, e, e)
                rhs = _pen(tree, d, S, a, b, b) + _e_q(S, _pen(tree, d, S, b, e, e), b, a)
                gap = _signed_gap(lhs, rhs)
                gap2 = _signed_gap(rhs, lhs)
                v = float(np.max(np.maximum(gap, gap2)))
            elif kind == "sub_penalty":
                lhs = _pen(tree, d, S, a, e, e)
                rhs = _pen(tree, d, S, a, b, b) + _e_q(S, _pen(tree, d, S, b, e, e), b, a)
                v = float(np.max(_signed_gap(lhs, rhs)))
            else:
                Qf = Q if Q.window[1] >= e else tree_pasting(Q.restrict(s, t), TreeMeasure.identity(tree, t, u))
                v = float(np.max(_weak_cocycle_gap(tree, d, Qf, R, S, a, b, e)))
            viol.append(v)
            rows.append({"s": s, "t": t, "u": u, "violation": v, "relation": kind})
        if kind == "weak_cocycle" and claims:
            qg = np.linspace(-2, 2, 41) if q_grid is None else q_grid
            for c in claims:
                v = _weak_cocycle_equality(tree, d, c, a, b, e, qg)
                viol.append(v)
                rows.append({"s": s, "t": t, "u": u, "violation": v, "relation": "equality at argmax",
                             "claim": c.label})
    if kind == "weak_cocycle":
        notes.append("ess-inf of alpha_tu taken as -rho_tu(0) from an exact tree solve")
    return _finish(kind, list(triples), viol, tol, "tree", label or d.label, rows, notes)


def _essinf(tree, d, b, e):
    return -tree_solve(tree, d, Claim.constant(0.0, tree.time(b)), tree.time(e)).values(b)


def _weak_cocycle_gap(tree, d, Q, R, S, a, b, e):
    lhs = _pen(tree, d, S, a, e, e)
    tail = _pen(tree, d, R, b, e, e) - _essinf(tree, d, b, e)
    rhs = _pen(tree, d, Q, a, e, e) + _e_q(Q, tail, b, a)
    return _signed_gap(lhs, rhs)


def _weak_cocycle_equality(tree, d, c, a, b, e, q_grid):
    """``|lhs - rhs|`` of the weak cocycle at the optimal scenarios for claim ``c``."""
    s, t, u = tree.time(a), tree.time(b), tree.time(e)
    X = place(c, u)
    inner = tree_solve(tree, d, X, u).values(b)
    zero = _essinf(tree, d, b, e)
    Y = tree.node_claim(-zero - inner, b)
    _, Q = tree_dual_sup(tree, d, Y, s, u, q_grid)
    _, R = tree_dual_sup(tree, d, X, t, u, q_grid)
    S = tree_pasting(Q.restrict(s, t), R.restrict(t, u))
    gap = _weak_cocycle_gap(tree, d, Q, R, S, a, b, e)
    back = _signed_gap(_pen(tree, d, Q, a, e, e) + _e_q(Q, _pen(tree, d, R, b, e, e) - zero, b, a),
                       _pen(tree, d, S, a, e, e))
    return float(np.max(np.maximum(np.abs(np.where(np.isfinite(gap), gap, np.inf)), back)))


# ---------------------------------------------------------------------------
# acceptance sets


def check_acceptance_inclusion(tree: TreeModel, d: Driver, claims, triples, tol=1e-12,
                               label="") -> ConsistencyReport:
    """Sampled check of ``A_su intersected with L(F_t)`` contained in ``A_st``.

    Each claim is placed at ``t``; membership is nodewise ``rho <= tol`` at level s.
    The violation is the largest ``rho_st`` over claims accepted at horizon u.
    """
    rows, viol = [], []
    equal = 0
    for s, t, u in triples:
        a = tree.level(s)
        for c in claims:
            X = place(c, t)
            r_su = tree_solve(tree, d, X, u).values(a)
            r_st = tree_solve(tree, d, X, t).values(a)
            in_su = bool(np.all(r_su <= tol))
            in_st = bool(np.all(r_st <= tol))
            equal += in_su == in_st
            v = float(np.max(r_st)) if in_su else -math.inf
            viol.append(v)
            rows.append({"s": s, "t": t, "u": u, "claim": c.label, "in_su": in_su, "in_st": in_st,
                         "violation": v})
    worst = max(viol, default=-math.inf)
    rep = ConsistencyReport("acceptance_inclusion", list(triples), worst, tol, worst <= tol, "tree",
                            label or d.label, rows, [f"memberships equal for {equal} of {len(rows)}"])
    rep.equal_memberships = equal
    return rep


# ---------------------------------------------------------------------------
# fixtures and the implication diagram


def claim_corpus(rng, n=20, tree=True):
    """Seeded claim templates: constants, linear, calls/puts and (tree only)
    bounded random functions of ``B``."""
    kinds = ["constant", "linear", "call", "put"] + (["random"] if tree else [])
    out = []
    for i in range(n):
        kind = kinds[i % len(kinds)]
        if kind == "constant":
            out.append(Claim.constant(rng.uniform(-1, 1), label=f"const#{i}"))
        elif kind == "linear":
            out.append(Claim.linear(rng.uniform(-1, 1), 0.0, rng.uniform(-0.5, 0.5), label=f"linear#{i}"))
        elif kind == "call":
            out.append(Claim.call(rng.uniform(-0.5, 0.5), 0.0, rng.uniform(-1, 1), label=f"call#{i}"))
        elif kind == "put":
            out.append(Claim.put(rng.uniform(-0.5, 0.5), 0.0, rng.uniform(-1, 1), label=f"put#{i}"))
        else:
            amp = rng.uniform(-1, 1, 3) / 3
            freq = rng.uniform(0.5, 4, 3)
            ph = rng.uniform(0, 2 * np.pi, 3)

            def f(b, amp=amp, freq=freq, ph=ph):
                x = np.asarray(b, dtype=float)[:, :1]
                return np.sum(amp * np.sin(freq * x + ph), axis=1)

            out.append(Claim.custom(lambda p, f=f: f(p[:, -1, :]), 0.0, terminal=f, label=f"random#{i}"))
    return out


def abs_family(coef, label=None):
    """Family ``g_u(z) = coef(u) |z|``."""
    return Family(lambda u: quadratic_form_driver(c3=float(coef(u))), label=label or "abs-family")


def volterra_abs(coef, zero=0.0, label=None):
    """Volterra driver ``zero(t, s) + coef(t) |z|``."""
    c0 = zero if callable(zero) else float(zero)
    return quadratic_form_driver(c0=c0, c3=lambda t, s: float(coef(t)), volterra=True,
                                 label=label or "volterra-abs")


def implication_verdicts(tree: TreeModel, d: Driver, claims, triples=None, tol=TREE_TOL):
    """Verdicts for every node of the implication diagram on one fixture."""
    triples = all_triples(tree.grid) if triples is None else triples
    out = {k: check_time_consistency(k, tree, d, claims, triples, tol=tol).verdict for k in TC_KINDS}
    pairs = sorted({(t, u) for _, t, u in triples})
    zeros = [tree_solve(tree, d, Claim.constant(0.0, t), u).values(tree.level(t)) for t, u in pairs]
    out["rho0_nonpositive"] = all(np.all(z <= tol) for z in zeros)
    out["rho0_nonnegative"] = all(np.all(z >= -tol) for z in zeros)
    return out


def implication_counterexamples(v) -> list:
    """Arrows of the diagram violated by a verdict dictionary."""
    bad = []
    if v["strong_tc"] and not v["weak_tc"]:
        bad.append("strong => weak")
    if v["strong_tc"] and not v["order_tc"]:
        bad.append("strong => order")
    if v["weak_tc"] != v["order_tc"]:
        bad.append("weak <=> order")
    if v["weak_tc"] and v["h_longevity"] and v["rho0_nonpositive"] and not v["sub_tc"]:
        bad.append("weak + h-longevity + rho(0) <= 0 => sub")
    if v["sub_tc"] and v["rho0_nonnegative"] and not v["h_longevity"]:
        bad.append("sub + rho(0) >= 0 => h-longevity")
    return bad
