"""Girsanov measures, closed-form oracles, Monte Carlo penalties and premium measures.

Sign convention: ``dQ/dP = exp{int q dB - 1/2 int |q|^2 ds}``, under which
``B - int q ds`` is a Q-Brownian motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .core import Claim, Constant, Driver, Entropic, Linear, VolterraLinear, VolterraQuadratic, resolve
from .errors import InvalidArgumentError
from .mc import MCResult, PathEnsemble, design, standard_error
from .tree import TreeMeasure, TreeModel, TreeSolution, all_moves, premium_kernel

CONVENTION = "dQ/dP = exp(int q dB - 1/2 int |q|^2 ds); B - int q ds is a Q-Brownian motion"


@dataclass(frozen=True)
class MeasureSpec:
    """Girsanov kernel on the window ``[s, u]``.

    ``q`` is a constant (scalar or d-vector), a function of time ``q(t)`` or a
    state functional ``q(t, B_t)`` mapping ``(n, d)`` states to ``(n, d)``.
    """

    q: object
    s: float
    u: float
    kind: str = "constant"

    def __post_init__(self):
        if self.kind not in ("constant", "time", "state"):
            raise InvalidArgumentError(f"unknown kernel kind {self.kind!r}")
        if self.s > self.u:
            raise InvalidArgumentError("measure window needs s <= u")

    @classmethod
    def constant(cls, q, s, u):
        return cls(np.atleast_1d(np.asarray(q, dtype=float)), float(s), float(u), "constant")

    @classmethod
    def of_time(cls, fn, s, u):
        return cls(fn, float(s), float(u), "time")

    @classmethod
    def of_state(cls, fn, s, u):
        return cls(fn, float(s), float(u), "state")

    def at(self, t, b) -> np.ndarray:
        """Kernel values for states ``b`` of shape ``(n, d)`` at time ``t``."""
        b = np.asarray(b, dtype=float)
        if self.kind == "constant":
            out = self.q
        elif self.kind == "time":
            out = np.atleast_1d(np.asarray(self.q(t), dtype=float))
        else:
            out = np.asarray(self.q(t, b), dtype=float)
        return np.broadcast_to(out, b.shape)

    def on_tree(self, tree: TreeModel) -> TreeMeasure:
        q = np.zeros((tree.N, tree.N + 1))
        lo, hi = tree.level(self.s), tree.level(self.u)
        for k in range(lo, hi):
            b = tree.brownian(k)[:, None]
            q[k, : k + 1] = self.at(tree.time(k), b)[:, 0]
        return TreeMeasure(tree, q, (lo, hi))


@dataclass
class PremiumMeasure:
    """Measure under which gamma is the expected integrated zero section."""

    spec: MeasureSpec | None
    tree_measure: TreeMeasure | None = None
    s: float = 0.0
    t: float = 0.0
    u: float = 0.0


def build_density(m: MeasureSpec, backend):
    """Density of ``m``: per path on an ensemble, per enumerated path on a tree.

    On the tree the result is ``(moves, density)`` over all ``2^N`` move
    sequences, built from the exact kernel ``1 + q dB``.
    """
    if isinstance(backend, TreeModel):
        tm = m.on_tree(backend)
        moves = all_moves(backend.N)
        return moves, tm.path_density(moves)
    if isinstance(backend, PathEnsemble):
        return mc_density(m, backend)
    raise InvalidArgumentError("backend must be a TreeModel or a PathEnsemble")


def mc_density(m: MeasureSpec, ens: PathEnsemble, upto=None) -> np.ndarray:
    """``exp(sum q dB - 1/2 |q|^2 dt)`` over the window steps (left-point kernel)."""
    grid = ens.grid
    lo, hi = grid.index(m.s), grid.index(m.u)
    if upto is not None:
        hi = min(hi, grid.index(upto))
    log_d = np.zeros(ens.M)
    for k in range(lo, hi):
        dt = grid.times[k + 1] - grid.times[k]
        q = m.at(grid.times[k], ens.paths[:, k, :])
        log_d += np.sum(q * ens.increments[:, k, :], axis=1) - 0.5 * np.sum(q * q, axis=1) * dt
    return np.exp(log_d)


def reweighted_mean(values, density, antithetic=True):
    """Self-normalized ``E_Q[V]`` and its delta-method standard error.

    Normalizing by the sample density mean makes deterministic integrands exact.
    """
    v = np.asarray(values, dtype=float)
    density = np.asarray(density, dtype=float)
    mass = density.mean()
    est = float((v * density).mean() / mass)
    return est, standard_error(density * (v - est) / mass, antithetic)


# ---------------------------------------------------------------------------
# closed forms


def _integral(fn, a, b):
    if b <= a:
        return 0.0
    val, _ = integrate.quad(fn, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)
    return float(val)


def _claim_affine(c: Claim):
    if c.kind == "constant":
        return None, c.params[0]
    if c.kind == "linear":
        return np.asarray(c.params[0], dtype=float), c.params[1]
    return "unsupported", None


def closed_form(d: Driver, c: Claim, s, horizon, b_s=0.0):
    """Exact ``rho_{s, horizon}(X)`` given ``B_s = b_s``, or None when uncataloged.

    Covers constant and ``w . B_u + c`` claims under the catalog drivers with
    deterministic coefficients.
    """
    s, h = float(s), float(horizon)
    if s > h or c.u > h:
        return None
    d = resolve(d, h)
    w, c0 = _claim_affine(c)
    if isinstance(w, str):
        return None
    if c.u < s and w is not None:
        return None
    dim = d.dim if w is None else w.size
    b_s = np.broadcast_to(np.asarray(b_s, dtype=float), (dim,))
    w_ = np.zeros(dim) if w is None else w
    base = -(float(w_ @ b_s) + c0)
    span = max(c.u - s, 0.0)
    wsq = float(w_ @ w_)
    if type(d) is Constant:
        return base + d.a * (h - s)
    if type(d) is Linear:
        return base - float(w_ @ d.b) * span + d.a * (h - s)
    if type(d) is Entropic:
        a_int = d.a_const * (h - s) if d.a_const is not None else _integral(d.a, s, h)
        return base + 0.5 * d.b * wsq * span + a_int
    if type(d) is VolterraLinear:
        if d.a_const is not None:
            drift = float(w_ @ d.a_const) * span
        else:
            drift = sum(_integral(lambda v, i=i: float(d.a(s, v)[i]), s, max(c.u, s)) * w_[i]
                        for i in range(dim))
        b_int = d.b_const * (h - s) if d.b_const is not None else _integral(lambda v: float(d.b(s, v)), s, h)
        return base - drift + b_int
    if type(d) is VolterraQuadratic:
        a_int = d.a_const * (h - s) if d.a_const is not None else _integral(lambda v: float(d.a(s, v)), s, h)
        return base + 0.5 * d._b(s) * wsq * span + a_int
    return None


def zero_section_integral(d: Driver, s, t, u):
    """``int_t^u g(s, v, 0) dv`` for a driver with deterministic zero section."""
    d = resolve(d, u)
    if type(d) is Constant:
        return d.a * (u - t)
    return _integral(lambda v: d.zero_section(s, v), t, u)


# ---------------------------------------------------------------------------
# penalties on an ensemble


def penalty_mc(ens: PathEnsemble, d: Driver, m: MeasureSpec, s, t, horizon=None):
    """``alpha_{st}(Q)`` by reweighting the integrated conjugate.

    Returns ``(estimate, standard error, out-of-domain count)``; any sampled
    point outside the conjugate's effective domain makes the estimate +inf.
    """
    grid = ens.grid
    lo, hi = grid.index(s), grid.index(t)
    d = resolve(d, grid.times[hi] if horizon is None else horizon)
    frozen = grid.times[lo]
    integral = np.zeros(ens.M)
    bad = 0
    for k in range(lo, hi):
        tk = grid.times[k]
        dt = grid.times[k + 1] - tk
        if not (m.s - 1e-12 <= tk < m.u - 1e-12):
            q = np.zeros((ens.M, ens.d))
        else:
            q = m.at(tk, ens.paths[:, k, :])
        vals = np.asarray(d.conjugate(frozen, tk, q), dtype=float)
        vals = np.broadcast_to(vals, (ens.M,))
        finite = np.isfinite(vals)
        bad += int(np.count_nonzero(~finite))
        integral += np.where(finite, vals, 0.0) * dt
    if bad:
        return math.inf, 0.0, bad
    dens = mc_density(m, ens, upto=t)
    est, se = reweighted_mean(integral, dens, ens.antithetic)
    return est, se, 0


# ---------------------------------------------------------------------------
# premium measure


def build_premium_measure(sol_long, sol_short, d: Driver | None = None, s=0.0, ens=None, basis=3):
    """h-longevity premium measure from the long- and short-horizon solutions.

    Tree solutions give an exact kernel. Monte Carlo results give a state
    kernel built from the per-level Z regressions.
    """
    if isinstance(sol_long, TreeSolution):
        tree = sol_long.tree
        k = tree.level(s)
        tm = premium_kernel(sol_long, sol_short, k)
        return PremiumMeasure(None, tm, tree.time(k), tree.time(sol_short.horizon_level),
                              tree.time(sol_long.horizon_level))
    if isinstance(sol_long, MCResult):
        if d is None or ens is None:
            raise InvalidArgumentError("Monte Carlo premium measures need the driver and the ensemble")
        return mc_premium_measure(sol_long, sol_short, d, ens, basis, s)
    raise InvalidArgumentError("unsupported solution type")


def _z_function(res: MCResult, grid, basis, origin=0):
    times = grid.times

    def z_at(k, b):
        if k not in res.coefficients or res.coefficients[k][1] is None:
            return np.zeros_like(b)
        cy, cz = res.coefficients[k]
        if k <= origin or cy.size == 1:
            return np.broadcast_to(cz.T, b.shape)
        x = b / math.sqrt(times[k] - times[origin])
        return design(x, basis) @ cz

    return z_at


class MCPremium:
    """State kernel ``q(t_k, B) = Delta_z g`` from regression Z profiles."""

    def __init__(self, long, short, d, grid, basis, t_level, u_level, s_level, frozen):
        self.zl = _z_function(long, grid, basis)
        self.zs = _z_function(short, grid, basis)
        self.d = d
        self.grid = grid
        self.t_level, self.u_level, self.s_level = t_level, u_level, s_level
        self.frozen = frozen

    def __call__(self, t, b):
        k = self.grid.index(t)
        zl = self.zl(k, b)
        zs = self.zs(k, b) if k < self.t_level else np.zeros_like(b)
        out = np.zeros_like(b)
        for i in range(b.shape[1]):
            mid = zs.copy()
            mid[:, i] = zl[:, i]
            lo = zs.copy()
            if i:
                lo[:, :i] = zl[:, :i]
                mid[:, :i] = zl[:, :i]
            dz = zl[:, i] - zs[:, i]
            ok = np.abs(dz) >= 1e-12
            gm = np.asarray(self.d(self.frozen, t, 0.0, mid))
            gl = np.asarray(self.d(self.frozen, t, 0.0, lo))
            out[:, i] = np.where(ok, (gm - gl) / np.where(ok, dz, 1.0), 0.0)
        return out


def mc_premium_measure(long: MCResult, short: MCResult, d: Driver, ens: PathEnsemble, basis=3, s=0.0):
    """Premium measure from two Monte Carlo solves sharing an ensemble."""
    grid = ens.grid
    t_level = max(short.coefficients) + 1 if short.coefficients else 0
    u_level = max(long.coefficients) + 1 if long.coefficients else 0
    s_level = grid.index(s)
    dd = resolve(d, grid.times[u_level])
    frozen = grid.times[s_level] if dd.volterra else 0.0
    kern = MCPremium(long, short, dd, grid, basis, t_level, u_level, s_level, frozen)
    spec = MeasureSpec.of_state(kern, grid.times[s_level], grid.times[u_level])
    return PremiumMeasure(spec, None, grid.times[s_level], grid.times[t_level], grid.times[u_level])
