"""Monte Carlo backward solvers for BSDE and BSVIE risk measures (d >= 1).

Conditional expectations are least-squares regressions on monomials of the
standardized Brownian state ``B_{t_k} - B_{t_origin}``. The scheme is the
multi-step variant: each path carries ``-X + sum_j g(t_j, Z_j) dt`` over the
remaining steps, and ``Z_k`` is the regression of the target, centred by its
level-k fit, times ``dB_k / dt``. Centring makes the estimate exactly
translation invariant and removes most of the variance.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .core import Claim, Driver, TimeGrid, resolve
from .errors import CapacityError, InvalidArgumentError, NumericalError

BLOCK = 8192
MEMORY_LIMIT = float(os.environ.get("HORIZONRISK_MEMORY_LIMIT", 3e9))


@dataclass(frozen=True)
class SolverConfig:
    M: int = 20000
    N: int = 50
    basis: int = 3
    z_clip: float = 10.0
    seed: int = 0
    antithetic: bool = True
    dim: int = 1

    def __post_init__(self):
        if self.basis < 0:
            raise InvalidArgumentError("basis degree must be >= 0")
        if not self.z_clip > 0:
            raise InvalidArgumentError("z_clip must be positive")
        if self.M < 2 or self.N < 1:
            raise InvalidArgumentError("need M >= 2 paths and N >= 1 steps")
        if self.antithetic and self.M % 2:
            raise InvalidArgumentError("antithetic sampling needs an even path count")


class PathEnsemble:
    """Brownian increments ``(M, N, d)``; antithetic pairs are rows ``2i, 2i + 1``."""

    def __init__(self, grid: TimeGrid, increments, seed, antithetic):
        self.grid = grid
        self.increments = increments
        self.increments.setflags(write=False)
        self.M, self.N, self.d = increments.shape
        self.seed = seed
        self.antithetic = antithetic
        self._paths = None

    @property
    def paths(self) -> np.ndarray:
        """``(M, N + 1, d)`` Brownian values, ``B_0 = 0``."""
        if self._paths is None:
            p = np.zeros((self.M, self.N + 1, self.d))
            np.cumsum(self.increments, axis=1, out=p[:, 1:, :])
            p.setflags(write=False)
            self._paths = p
        return self._paths

    def claim_values(self, c: Claim) -> tuple[int, np.ndarray]:
        k = self.grid.index(c.u)
        vals = np.asarray(c.payoff(self.paths[:, : k + 1, :]), dtype=float).reshape(-1)
        if vals.shape != (self.M,) or not np.all(np.isfinite(vals)):
            raise InvalidArgumentError(f"claim {c.label!r} is not finite on the ensemble")
        return k, vals


def simulate_paths(cfg: SolverConfig, grid: TimeGrid | None = None) -> PathEnsemble:
    """Seeded ensemble; each block of ``BLOCK`` paths draws from its own substream."""
    grid = grid or TimeGrid(1.0, cfg.N)
    M, N, d = cfg.M, grid.N, cfg.dim
    need = 2.0 * M * N * d * 8
    if need > MEMORY_LIMIT:
        raise CapacityError(f"ensemble needs about {need / 1e9:.2f} GB (limit {MEMORY_LIMIT / 1e9:.2f} GB)")
    try:
        inc = np.empty((M, N, d))
    except MemoryError as exc:
        raise CapacityError(str(exc)) from exc
    sd = np.sqrt(np.diff(grid.times))[None, :, None]
    n_blocks = -(-M // BLOCK)
    streams = np.random.SeedSequence(cfg.seed).spawn(n_blocks)
    for b, ss in enumerate(streams):
        lo, hi = b * BLOCK, min(M, (b + 1) * BLOCK)
        rng = np.random.default_rng(ss)
        if cfg.antithetic:
            half = rng.standard_normal(((hi - lo) // 2, N, d)) * sd
            inc[lo:hi:2] = half
            inc[lo + 1 : hi : 2] = -half
        else:
            inc[lo:hi] = rng.standard_normal((hi - lo, N, d)) * sd
    return PathEnsemble(grid, inc, cfg.seed, cfg.antithetic)


def standard_error(values, antithetic: bool) -> float:
    values = np.asarray(values, dtype=float)
    if antithetic:
        pairs = 0.5 * (values[0::2] + values[1::2])
        return float(np.std(pairs, ddof=1) / math.sqrt(pairs.size)) if pairs.size > 1 else 0.0
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


def _exponents(d, p):
    out = [e for n in range(p + 1) for e in itertools.product(range(n + 1), repeat=d) if sum(e) == n]
    return sorted(set(out), key=lambda e: (sum(e), tuple(-x for x in e)))


def design(x, p) -> np.ndarray:
    """Monomials of total degree <= p in the columns of ``x``."""
    cols = []
    for e in _exponents(x.shape[1], p):
        col = np.ones(x.shape[0])
        for i, n in enumerate(e):
            if n:
                col = col * x[:, i] ** n
        cols.append(col)
    return np.column_stack(cols)


class _Regressor:
    def __init__(self, A, level):
        self.A = A
        Q, R = np.linalg.qr(A)
        diag = np.abs(np.diag(R))
        if diag.size and diag.min() <= 1e-10 * max(diag.max(), 1e-300):
            raise NumericalError("regression matrix is singular (degenerate state spread)", level)
        self.Q, self.R = Q, R

    def coef(self, y):
        return np.linalg.solve(self.R, self.Q.T @ y)

    def coef_var(self, resid, v):
        """Variance of ``v . coef`` from the residuals of a fit."""
        w = np.linalg.solve(self.R, np.eye(self.R.shape[0])).T @ v
        return float(np.var(resid) * (w @ w))

    def fit(self, y):
        c = self.coef(y)
        return self.A @ c, c


@dataclass
class MCResult:
    value: float
    stderr: float
    coefficients: dict = field(repr=False)
    pathwise: np.ndarray = field(repr=False)
    fitted: np.ndarray = field(repr=False)
    level: int = 0
    antithetic: bool = True
    regression_se: float = 0.0


def _mc_backward(ens: PathEnsemble, driver: Driver, top: int, claim_level: int, neg_claim,
                 stop: int, cfg: SolverConfig, origin: int = 0, frozen: float = 0.0) -> MCResult:
    if not 0 <= stop <= claim_level <= top <= ens.N:
        raise InvalidArgumentError("need stop <= claim level <= horizon on the grid")
    if driver.dim != ens.d:
        raise InvalidArgumentError(f"driver dim {driver.dim} does not match ensemble dim {ens.d}")
    times = ens.grid.times
    paths, inc = ens.paths, ens.increments
    target = np.zeros(ens.M)
    if claim_level == top:
        target = target + neg_claim
    coefs = {}
    reg_var = 0.0
    ones = np.ones((ens.M, 1))
    for k in range(top - 1, stop - 1, -1):
        dt = times[k + 1] - times[k]
        if k <= origin:
            reg = _Regressor(ones, k)
        else:
            x = (paths[:, k, :] - paths[:, origin, :]) / math.sqrt(times[k] - times[origin])
            reg = _Regressor(design(x, cfg.basis), k)
        y_fit, cy = reg.fit(target)
        zt = (target - y_fit)[:, None] * inc[:, k, :] / dt
        cz = reg.coef(zt)
        Z = reg.A @ cz
        coefs[k] = (cy, cz)
        norm = np.sqrt(np.sum(Z * Z, axis=1))
        over = norm > cfg.z_clip
        if np.any(over):
            Z = Z.copy()
            Z[over] *= (cfg.z_clip / norm[over])[:, None]
        g = np.asarray(driver(frozen, times[k], y_fit, Z), dtype=float)
        reg_var += dt * dt * _coef_noise(driver, frozen, times[k], y_fit, Z, reg, zt - reg.A @ cz)
        target = target + g * dt
        if k == claim_level:
            target = target + neg_claim
    if stop <= origin:
        fitted = np.full(ens.M, target.mean())
    else:
        x = (paths[:, stop, :] - paths[:, origin, :]) / math.sqrt(times[stop] - times[origin])
        reg = _Regressor(design(x, cfg.basis), stop)
        fitted, c = reg.fit(target)
        coefs[stop] = (c, None)
    if not np.all(np.isfinite(target)):
        raise NumericalError("non-finite values in the backward recursion", stop)
    se = math.sqrt(standard_error(target, ens.antithetic) ** 2 + reg_var)
    return MCResult(float(target.mean()), se, coefs, target, fitted, stop, ens.antithetic,
                    math.sqrt(reg_var))


def _coef_noise(driver, frozen, s, y, Z, reg, resid):
    """Delta-method variance of ``mean g(Z)`` from the Z-regression coefficients."""
    total = 0.0
    for i in range(Z.shape[1]):
        h = 1e-6 * max(1.0, float(np.max(np.abs(Z[:, i]))))
        up, dn = Z.copy(), Z.copy()
        up[:, i] += h
        dn[:, i] -= h
        grad = (np.asarray(driver(frozen, s, y, up)) - np.asarray(driver(frozen, s, y, dn))) / (2 * h)
        v = grad @ reg.A / Z.shape[0]
        total += reg.coef_var(resid[:, i], v)
    return total


def solve_values(ens, d, claim_level, claim_values, horizon, cfg, s=0.0, origin=None) -> MCResult:
    """Backward solve for claim values given per path at ``claim_level``."""
    top = ens.grid.index(horizon)
    stop = ens.grid.index(s)
    d = resolve(d, ens.grid.times[top])
    frozen = ens.grid.times[stop] if d.volterra else 0.0
    return _mc_backward(ens, d, top, claim_level, -np.asarray(claim_values, dtype=float), stop,
                        cfg, stop if origin is None else origin, frozen)


def mc_solve_bsde(ens: PathEnsemble, d: Driver, c: Claim, horizon, cfg: SolverConfig | None = None,
                  s=0.0) -> MCResult:
    """``rho_{s, horizon}(X)``; at ``s = 0`` the value is the common time-0 estimate."""
    cfg = cfg or SolverConfig(M=ens.M, N=ens.N, antithetic=ens.antithetic, dim=ens.d)
    if resolve(d, horizon).volterra:
        raise InvalidArgumentError("use mc_solve_bsvie for Volterra drivers")
    k, vals = ens.claim_values(c)
    return solve_values(ens, d, k, vals, horizon, cfg, s=s, origin=0)


def mc_solve_bsvie(ens: PathEnsemble, d: Driver, c: Claim, s, horizon,
                   cfg: SolverConfig | None = None) -> MCResult:
    """One backward pass with the driver frozen at ``s``; the value is read at level s."""
    cfg = cfg or SolverConfig(M=ens.M, N=ens.N, antithetic=ens.antithetic, dim=ens.d)
    k, vals = ens.claim_values(c)
    return solve_values(ens, d, k, vals, horizon, cfg, s=s, origin=0)


def mc_solve(ens, d, c, horizon, cfg=None, s=0.0) -> MCResult:
    """Dispatch on the driver kind (after resolving a family)."""
    if resolve(d, horizon).volterra:
        return mc_solve_bsvie(ens, d, c, s, horizon, cfg)
    return mc_solve_bsde(ens, d, c, horizon, cfg, s)


def difference_stderr(a: MCResult, b: MCResult) -> float:
    """Standard error of ``a - b`` on a shared ensemble (common random numbers)."""
    return standard_error(a.pathwise - b.pathwise, a.antithetic)


@dataclass
class MCBackend:
    """An ensemble together with the solver settings used on it."""

    ens: PathEnsemble
    cfg: SolverConfig

    @classmethod
    def simulate(cls, cfg: SolverConfig, grid: TimeGrid | None = None):
        return cls(simulate_paths(cfg, grid), cfg)

    @property
    def grid(self):
        return self.ens.grid
