"""Exact one-dimensional recombining binomial backend.

Node ``(k, j)`` carries ``B = (2j - k) sqrt(dt)``; its children are
``(k + 1, j + 1)`` (up) and ``(k + 1, j)`` (down). Backward equations use the
explicit scheme ``Y_k = E_P[Y_{k+1}] + g(t_k, Z_k) dt`` with
``Z_k = (Y_up - Y_down) / (2 sqrt(dt))``.

Claims measurable before the solve horizon are handled without leaving the
recombining lattice: the drivers here do not read ``y``, so the recursion runs
from zero at the horizon and the claim enters once its own level is reached.
Rows above the claim level therefore hold the claim-free part of ``Y``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import Claim, Driver, TimeGrid, resolve
from .errors import InvalidArgumentError, PositivityError, UnsupportedError


class TreeModel:
    def __init__(self, grid: TimeGrid):
        if not grid.uniform:
            raise UnsupportedError("the binomial tree needs a uniform grid (non-uniform steps do not recombine)")
        self.grid = grid
        self.N = grid.N
        self.dt = grid.T / grid.N
        self.sqrt_dt = math.sqrt(self.dt)

    @classmethod
    def uniform(cls, T=1.0, N=8):
        return cls(TimeGrid(T, N))

    def level(self, t) -> int:
        return self.grid.index(t)

    def time(self, k) -> float:
        return float(self.grid.times[k])

    def brownian(self, k) -> np.ndarray:
        j = np.arange(k + 1)
        return (2 * j - k) * self.sqrt_dt

    def claim_nodes(self, claim: Claim):
        """``(level, values)`` of a Markov claim on the lattice."""
        if not claim.markov:
            raise UnsupportedError(f"claim {claim.label!r} is path dependent; the tree needs functions of B_u")
        if claim.kind in ("linear", "call", "put") and len(claim.params[0]) != 1:
            raise UnsupportedError("the tree backend is one-dimensional")
        k = self.level(claim.u)
        vals = np.asarray(claim.terminal(self.brownian(k)[:, None]), dtype=float).reshape(-1)
        if vals.shape != (k + 1,) or not np.all(np.isfinite(vals)):
            raise InvalidArgumentError(f"claim {claim.label!r} is not finite on the tree")
        return k, vals

    def node_claim(self, values, level, label=None) -> Claim:
        """Claim given by node values at ``level`` (e.g. an inner risk evaluation)."""
        values = np.asarray(values, dtype=float)
        if values.shape != (level + 1,):
            raise InvalidArgumentError("node claim needs one value per node")
        return Claim.nodes(values, self.time(level), self.dt, label=label)

    def __repr__(self):
        return f"TreeModel(T={self.grid.T}, N={self.N})"


def _check_dim(d: Driver):
    if d.dim != 1:
        raise UnsupportedError("the tree backend is one-dimensional")


def coef_table(tree: TreeModel, d: Driver, top: int, frozen: float = 0.0):
    """Per-level ``(c0, c1, c2, c3)`` or None when ``d`` has no such form."""
    if d.supports_y:
        return None
    rows = []
    for k in range(top):
        f = d.quad_form(frozen, tree.time(k))
        if f is None:
            return None
        rows.append(f)
    return np.array(rows, dtype=float).reshape(top, 4)


def _sweep_callable(tree, d, top, stop, claim_level, claim_vals, frozen=0.0):
    Y = np.full((top + 1, top + 1), np.nan)
    Z = np.full((max(top, 1), top + 1), np.nan)
    y = np.zeros(top + 1)
    if claim_level == top:
        y = y - claim_vals
    Y[top, : top + 1] = y
    for k in range(top - 1, stop - 1, -1):
        yu, yd = y[1 : k + 2], y[: k + 1]
        z = (yu - yd) / (2.0 * tree.sqrt_dt)
        pred = 0.5 * (yu + yd)
        g = np.asarray(d(frozen, tree.time(k), pred, z[:, None]), dtype=float)
        y = pred + g * tree.dt
        if k == claim_level:
            y = y - claim_vals
        Y[k, : k + 1] = y
        Z[k, : k + 1] = z
    return Y, Z


def _sweep(tree, d, top, stop, claim_level, claim_vals, frozen=0.0):
    coef = coef_table(tree, d, top, frozen)
    if coef is None:
        return _sweep_callable(tree, d, top, stop, claim_level, claim_vals, frozen)
    return kernels.sweep_affine(top, stop, claim_level, claim_vals, coef, tree.sqrt_dt, tree.dt)


@dataclass
class TreeSolution:
    """Solution arrays; ``Y[k, :k + 1]`` is ``rho_{t_k, horizon}(X)`` at level k.

    For Volterra drivers row k comes from the recursion frozen at ``t_k`` and
    :meth:`frozen` returns a whole frozen sheet.
    """

    tree: TreeModel
    driver: Driver
    horizon_level: int
    claim_level: int
    claim_vals: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    volterra: bool = False
    _sheets: dict = field(default_factory=dict, repr=False)

    def values(self, k: int) -> np.ndarray:
        if k > self.claim_level:
            raise InvalidArgumentError("levels after the claim level hold only the claim-free part")
        return self.Y[k, : k + 1]

    def at(self, t) -> np.ndarray:
        return self.values(self.tree.level(t))

    @property
    def value0(self) -> float:
        return float(self.Y[0, 0])

    def frozen(self, i: int):
        """``(Y, Z)`` of the recursion with the driver frozen at level ``i``."""
        if not self.volterra:
            return self.Y, self.Z
        if i not in self._sheets:
            self._sheets[i] = _sweep(self.tree, self.driver, self.horizon_level, i,
                                     self.claim_level, self.claim_vals, self.tree.time(i))
        return self._sheets[i]


def tree_solve(tree: TreeModel, d: Driver, c: Claim, horizon, stop=0) -> TreeSolution:
    """Risk evaluations ``rho_{t_k, horizon}(X)`` for every level ``k >= stop``."""
    _check_dim(d)
    top = tree.level(horizon)
    k_c, vals = tree.claim_nodes(c)
    if k_c > top:
        raise InvalidArgumentError("claim is not measurable at the horizon")
    stop = min(stop, k_c)
    d = resolve(d, tree.time(top))
    _check_dim(d)
    if not d.volterra:
        Y, Z = _sweep(tree, d, top, stop, k_c, vals)
        return TreeSolution(tree, d, top, k_c, vals, Y, Z)
    hi = min(top, k_c)
    coefs = [coef_table(tree, d, top, tree.time(i)) for i in range(stop, hi + 1)]
    if all(cf is not None for cf in coefs):
        Y, Z = kernels.volterra_diagonal(top, stop, hi, k_c, vals,
                                         np.array(coefs).reshape(hi - stop + 1, top, 4),
                                         tree.sqrt_dt, tree.dt)
    else:
        Y = np.full((top + 1, top + 1), np.nan)
        Z = np.full((max(top, 1), top + 1), np.nan)
        for i in range(stop, hi + 1):
            Yi, Zi = _sweep_callable(tree, d, top, i, k_c, vals, tree.time(i))
            Y[i] = Yi[i]
            if i < top:
                Z[i] = Zi[i]
    return TreeSolution(tree, d, top, k_c, vals, Y, Z, volterra=True)


def rho(tree: TreeModel, d: Driver, c: Claim, s, horizon) -> np.ndarray:
    """``rho_{s, horizon}(X)`` at the level-s nodes."""
    k = tree.level(s)
    return tree_solve(tree, d, c, horizon, stop=k).values(k)


# ---------------------------------------------------------------------------
# measures


class TreeMeasure:
    """Markov Girsanov kernel: one-step density ``1 + q(k, j) dB`` on steps ``[lo, hi)``."""

    def __init__(self, tree: TreeModel, q, window):
        lo, hi = (int(w) for w in window)
        if not 0 <= lo <= hi <= tree.N:
            raise InvalidArgumentError(f"window {window} is outside the tree")
        q = np.zeros((tree.N, tree.N + 1)) if q is None else np.array(q, dtype=float)
        if q.shape != (tree.N, tree.N + 1):
            raise InvalidArgumentError("kernel array must have shape (N, N + 1)")
        mask = np.zeros_like(q, dtype=bool)
        for k in range(lo, hi):
            mask[k, : k + 1] = True
        q = np.where(mask, q, 0.0)
        if not np.all(np.isfinite(q)):
            raise InvalidArgumentError("kernel values must be finite")
        worst = float(np.max(np.abs(q))) * tree.sqrt_dt if q.size else 0.0
        if worst >= 1.0:
            raise PositivityError(f"|q| sqrt(dt) = {worst:.6g} >= 1: tree density would not be positive")
        self.tree = tree
        self.q = q
        self.window = (lo, hi)
        self.q.setflags(write=False)

    @classmethod
    def constant(cls, tree, value, s, t):
        lo, hi = tree.level(s), tree.level(t)
        return cls(tree, np.full((tree.N, tree.N + 1), float(value)), (lo, hi))

    @classmethod
    def function(cls, tree, fn, s, t):
        """Kernel ``fn(t_k, B)`` evaluated on node Brownian values."""
        lo, hi = tree.level(s), tree.level(t)
        q = np.zeros((tree.N, tree.N + 1))
        for k in range(lo, hi):
            q[k, : k + 1] = np.broadcast_to(fn(tree.time(k), tree.brownian(k)), (k + 1,))
        return cls(tree, q, (lo, hi))

    @classmethod
    def random(cls, tree, rng, s, t, bound=1.0):
        bound = min(float(bound), 0.999 / tree.sqrt_dt)
        lo, hi = tree.level(s), tree.level(t)
        return cls(tree, rng.uniform(-bound, bound, size=(tree.N, tree.N + 1)), (lo, hi))

    @classmethod
    def identity(cls, tree, s=0.0, t=0.0):
        return cls(tree, None, (tree.level(s), tree.level(t)))

    def restrict(self, s, t) -> TreeMeasure:
        """Kernel switched off outside ``[s, t)``."""
        lo, hi = self.tree.level(s), self.tree.level(t)
        a, b = max(lo, self.window[0]), min(hi, self.window[1])
        return TreeMeasure(self.tree, self.q, (a, b) if a <= b else (lo, lo))

    def up_probability(self, k) -> np.ndarray:
        return 0.5 * (1.0 + self.q[k, : k + 1] * self.tree.sqrt_dt)

    def path_density(self, moves) -> np.ndarray:
        """Densities of move sequences (rows of +1/-1) of any length."""
        moves = np.atleast_2d(np.asarray(moves, dtype=int))
        dens = np.ones(moves.shape[0])
        j = np.zeros(moves.shape[0], dtype=int)
        for k in range(moves.shape[1]):
            dens *= 1.0 + self.q[k, j] * moves[:, k] * self.tree.sqrt_dt
            j += moves[:, k] > 0
        return dens


def all_moves(n: int) -> np.ndarray:
    """Every +1/-1 path of length ``n`` (each with P-probability ``2^-n``)."""
    if n > 20:
        raise InvalidArgumentError("path enumeration is limited to 20 steps")
    return np.array(list(itertools.product((-1, 1), repeat=n)), dtype=int).reshape(-1, n)


def tree_pasting(Q: TreeMeasure, R: TreeMeasure) -> TreeMeasure:
    """Measure with kernel Q on Q's window followed by R on R's window."""
    if Q.tree is not R.tree and Q.tree.grid != R.tree.grid:
        raise InvalidArgumentError("measures live on different trees")
    if Q.window[1] != R.window[0]:
        raise InvalidArgumentError(f"windows {Q.window} and {R.window} do not abut")
    q = np.array(Q.q)
    lo, mid, hi = Q.window[0], Q.window[1], R.window[1]
    q[mid:hi] = R.q[mid:hi]
    return TreeMeasure(Q.tree, q, (lo, hi))


def tree_expectation(m: TreeMeasure, values, level, s) -> np.ndarray:
    """``E_Q[V | F_s]`` for node values ``V`` at ``level`` (level-s nodes)."""
    tree = m.tree
    k = tree.level(s)
    if level < k:
        raise InvalidArgumentError("conditioning level is after the value level")
    V = kernels.measure_sweep(level, k, np.asarray(values, dtype=float), m.q,
                              np.zeros((max(level, 1), tree.N + 1)), tree.sqrt_dt)
    return V[k, : k + 1]


def conjugate_costs(tree, d, q_tri, lo, hi, frozen=None):
    """``g*(q(k, j)) dt`` on steps ``[lo, hi)``; inf outside the effective domain."""
    cost = np.zeros((max(hi, 1), tree.N + 1))
    for k in range(lo, hi):
        t_frozen = tree.time(lo) if frozen is None else frozen
        c = np.asarray(d.conjugate(t_frozen, tree.time(k), q_tri[k, : k + 1]), dtype=float)
        cost[k, : k + 1] = c * tree.dt
    return cost


def tree_penalty(tree: TreeModel, d: Driver, m: TreeMeasure, s, t, horizon=None) -> np.ndarray:
    """``alpha_{st}(Q) = E_Q[sum_k g*(t_s, t_k, q_k) dt | F_s]`` at the level-s nodes.

    Only the kernel on ``[s, t)`` enters. Families are resolved at ``horizon``
    (default ``t``); Volterra drivers are frozen at ``s``.
    """
    _check_dim(d)
    lo, hi = tree.level(s), tree.level(t)
    if lo > hi:
        raise InvalidArgumentError("penalty window needs s <= t")
    d = resolve(d, tree.time(hi) if horizon is None else horizon)
    cost = conjugate_costs(tree, d, m.q, lo, hi)
    if hi == lo:
        return np.zeros(lo + 1)
    V = kernels.measure_sweep(hi, lo, np.zeros(hi + 1), m.q, cost, tree.sqrt_dt)
    return V[lo, : lo + 1]


def _positivity(q_grid, tree):
    q_grid = np.asarray(q_grid, dtype=float).reshape(-1)
    if q_grid.size == 0:
        raise InvalidArgumentError("q_grid is empty")
    if not np.all(np.isfinite(q_grid)):
        raise InvalidArgumentError("q_grid must be finite")
    if np.max(np.abs(q_grid)) * tree.sqrt_dt >= 1.0:
        raise PositivityError("q_grid violates |q| sqrt(dt) < 1")
    return q_grid


def tree_dual_sup(tree: TreeModel, d: Driver, c: Claim, s, t, q_grid, refine=False):
    """Grid supremum of ``E_Q[-X | F_s] - alpha_{st}(Q)`` over Markov kernels.

    Returns level-s values and the maximizing kernel as a :class:`TreeMeasure`
    on ``[s, t]``. With ``refine`` a Newton step on the conjugate improves each
    nodewise choice for drivers with a smooth conjugate; without it the result
    is a pure grid lower bound.
    """
    _check_dim(d)
    q_grid = _positivity(q_grid, tree)
    lo, top = tree.level(s), tree.level(t)
    k_c, vals = tree.claim_nodes(c)
    if k_c > top or k_c < lo:
        raise InvalidArgumentError("claim must be measurable between s and t")
    d = resolve(d, tree.time(top))
    frozen = tree.time(lo)
    conj = np.empty((max(top, 1), q_grid.size))
    for k in range(top):
        conj[k] = d.conjugate(frozen, tree.time(k), q_grid) if k >= lo else 0.0
    if refine:
        V, qsel = _dual_refined(tree, d, top, lo, k_c, vals, q_grid, conj, frozen)
    else:
        V, A = kernels.dual_sweep(top, lo, k_c, vals, q_grid, conj, tree.sqrt_dt, tree.dt)
        qsel = np.zeros((tree.N, tree.N + 1))
        for k in range(lo, top):
            qsel[k, : k + 1] = q_grid[A[k, : k + 1]]
    return V[lo, : lo + 1], TreeMeasure(tree, qsel, (lo, top))


def _dual_refined(tree, d, top, lo, k_c, vals, q_grid, conj, frozen):
    sq, dt = tree.sqrt_dt, tree.dt
    bound = 0.999 / sq
    V = np.full((top + 1, top + 1), np.nan)
    qsel = np.zeros((tree.N, tree.N + 1))
    v = np.zeros(top + 1)
    if k_c == top:
        v = v - vals
    V[top, : top + 1] = v
    p = 0.5 * (1.0 + q_grid * sq)
    for k in range(top - 1, lo - 1, -1):
        vu, vd = v[1 : k + 2], v[: k + 1]
        cand = p[:, None] * vu + (1.0 - p)[:, None] * vd - (conj[k] * dt)[:, None]
        cand[~np.isfinite(conj[k])] = -np.inf
        a = np.argmax(cand, axis=0)
        best = cand[a, np.arange(k + 1)]
        qb = q_grid[a]
        form = d.quad_form(frozen, tree.time(k))
        if form is not None and form[2] > 0:
            c0, c1, c2, c3 = form
            zq = (vu - vd) / (2.0 * sq)
            dev = qb - c1
            active = np.abs(dev) > c3
            slope = np.sign(dev) * np.maximum(np.abs(dev) - c3, 0.0) / (2.0 * c2)
            step = np.where(active, (zq - slope) * 2.0 * c2, 0.0)
            qn = np.clip(qb + step, -bound, bound)
            gn = np.asarray(d.conjugate(frozen, tree.time(k), qn), dtype=float)
            pn = 0.5 * (1.0 + qn * sq)
            trial = pn * vu + (1.0 - pn) * vd - gn * dt
            better = np.isfinite(trial) & (trial > best)
            best = np.where(better, trial, best)
            qb = np.where(better, qn, qb)
        v = best
        if k == k_c:
            v = v - vals
        V[k, : k + 1] = v
        qsel[k, : k + 1] = qb
    return V, qsel


# ---------------------------------------------------------------------------
# premium measure and gamma on the tree


def difference_quotient(d: Driver, t_frozen, s, z_long, z_short):
    """``(g(z_long) - g(z_short)) / (z_long - z_short)``, 0 where |dz| < 1e-12."""
    z_long = np.asarray(z_long, dtype=float)
    z_short = np.asarray(z_short, dtype=float)
    dz = z_long - z_short
    g1 = np.asarray(d(t_frozen, s, 0.0, z_long[:, None]), dtype=float)
    g2 = np.asarray(d(t_frozen, s, 0.0, z_short[:, None]), dtype=float)
    ok = np.abs(dz) >= 1e-12
    return np.where(ok, (g1 - g2) / np.where(ok, dz, 1.0), 0.0)


def premium_kernel(sol_long: TreeSolution, sol_short: TreeSolution, s_level: int) -> TreeMeasure:
    """Kernel of the premium measure between horizons ``t < u`` from level ``s``.

    Before ``t`` it is the difference quotient of the driver between the two Z
    profiles; after ``t`` the short solution is frozen (Z = 0).
    """
    tree = sol_long.tree
    u, t = sol_long.horizon_level, sol_short.horizon_level
    if sol_short.tree is not tree and sol_short.tree.grid != tree.grid:
        raise InvalidArgumentError("solutions live on different trees")
    if t > u:
        raise InvalidArgumentError("short solution has the longer horizon")
    frozen = tree.time(s_level)
    _, Zl = sol_long.frozen(s_level)
    _, Zs = sol_short.frozen(s_level)
    q = np.zeros((tree.N, tree.N + 1))
    for k in range(s_level, u):
        zl = Zl[k, : k + 1]
        zs = Zs[k, : k + 1] if k < t else np.zeros(k + 1)
        q[k, : k + 1] = difference_quotient(sol_long.driver, frozen, tree.time(k), zl, zs)
    return TreeMeasure(tree, q, (s_level, u))


def zero_section_costs(tree, d, lo, t_level, hi, frozen):
    """``g(t_k, 0) dt`` on steps ``[t_level, hi)``, zero on ``[lo, t_level)``."""
    cost = np.zeros((max(hi, 1), tree.N + 1))
    for k in range(t_level, hi):
        cost[k, : k + 1] = d.zero_section(frozen, tree.time(k)) * tree.dt
    return cost
