"""Time grids, the driver catalog, claims and risk-query containers.

Drivers follow the convention ``g(t, s, y, z)``: ``t`` is the frozen first
argument of a Volterra driver (ignored by ordinary BSDE drivers), ``s`` is the
running time, ``y`` is only read by drivers built with ``supports_y=True``.
All evaluations are vectorized: ``z`` has trailing dimension ``dim``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import optimize

from .errors import InvalidArgumentError, UnsupportedError

# singleton effective domains (affine drivers) are matched with this slack
DOMAIN_TOL = 1e-9
GRID_TOL = 1e-9


class TimeGrid:
    """Monotone grid ``0 = t_0 < ... < t_N = T`` (uniform unless ``times`` given)."""

    def __init__(self, T: float, N: int, times=None):
        if N < 1:
            raise InvalidArgumentError("grid needs N >= 1")
        if not (math.isfinite(T) and T > 0):
            raise InvalidArgumentError("grid horizon T must be positive and finite")
        if times is None:
            times = np.linspace(0.0, T, N + 1)
        times = np.asarray(times, dtype=float)
        if times.shape != (N + 1,):
            raise InvalidArgumentError("times must have N + 1 entries")
        if times[0] != 0.0 or abs(times[-1] - T) > GRID_TOL * T:
            raise InvalidArgumentError("times must start at 0 and end at T")
        if np.any(np.diff(times) <= 0):
            raise InvalidArgumentError("times must be strictly increasing")
        self.T = float(T)
        self.N = int(N)
        self.times = times
        self.times.setflags(write=False)

    @property
    def dts(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def uniform(self) -> bool:
        d = self.dts
        return bool(np.allclose(d, d[0], rtol=1e-12, atol=0.0))

    @property
    def dt(self) -> float:
        if not self.uniform:
            raise UnsupportedError("non-uniform grid has no single step size")
        return self.T / self.N

    def index(self, t: float) -> int:
        """Grid index of ``t``; off-grid times are rejected."""
        t = float(t)
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > GRID_TOL * max(1.0, self.T):
            raise InvalidArgumentError(f"time {t!r} is not a grid point")
        return k

    def on_grid(self, t: float) -> bool:
        try:
            self.index(t)
        except InvalidArgumentError:
            return False
        return True

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash((self.T, self.N, self.times.tobytes()))

    def __repr__(self):
        return f"TimeGrid(T={self.T}, N={self.N})"


# ---------------------------------------------------------------------------
# coefficient helpers


def _fn1(x):
    if callable(x):
        return x
    x = float(x)
    return lambda s: x


def _fn2(x):
    if callable(x):
        return x
    x = float(x)
    return lambda t, s: x


def _vec_fn2(x, dim):
    if callable(x):
        return lambda t, s: np.broadcast_to(np.asarray(x(t, s), dtype=float), (dim,))
    v = np.broadcast_to(np.asarray(x, dtype=float), (dim,)).copy()
    return lambda t, s: v


def _as_z(z, dim):
    z = np.asarray(z, dtype=float)
    if dim == 1 and (z.ndim == 0 or z.shape[-1] != 1):
        z = z[..., None]
    if z.shape[-1] != dim:
        raise InvalidArgumentError(f"z has trailing dimension {z.shape[-1]}, driver dim is {dim}")
    return z


def _sq(z):
    return np.sum(z * z, axis=-1)


def quad_form_conjugate(c0, c1, c2, c3, q):
    """Convex conjugate of ``c0 + c1 z + c2 z^2 + c3 |z|`` (scalar z)."""
    q = np.asarray(q, dtype=float)
    p = np.abs(q - c1)
    if c2 > 0:
        excess = np.maximum(p - c3, 0.0)
        return excess * excess / (4.0 * c2) - c0
    return np.where(p <= c3 + DOMAIN_TOL, -c0, np.inf)


class Driver:
    """Base class of the driver catalog."""

    kind = "driver"
    volterra = False

    def __init__(self, dim=1, lipschitz=None, supports_y=False, label=None):
        if dim < 1:
            raise InvalidArgumentError("driver dimension must be >= 1")
        self.dim = int(dim)
        self.lipschitz = lipschitz
        self.supports_y = bool(supports_y)
        self.label = label or self.kind

    # subclasses implement _eval(t, s, z) or override __call__
    def __call__(self, t, s, y, z):
        z = _as_z(z, self.dim)
        return self._eval(t, s, z)

    def conjugate(self, t, s, q):
        raise NotImplementedError

    def zero_section(self, t, s) -> float:
        return float(np.asarray(self(t, s, 0.0, np.zeros(self.dim))).reshape(-1)[0])

    def quad_form(self, t, s):
        """``(c0, c1, c2, c3)`` with g = c0 + c1 z + c2 z^2 + c3 |z|, or None."""
        return None

    def member(self, horizon):
        return self

    def __repr__(self):
        return f"{type(self).__name__}({self.label})"


class Constant(Driver):
    kind = "constant"

    def __init__(self, a, dim=1, label=None):
        super().__init__(dim, lipschitz=0.0, label=label or f"constant(a={a})")
        self.a = float(a)

    def _eval(self, t, s, z):
        return np.full(z.shape[:-1], self.a)

    def conjugate(self, t, s, q):
        q = _as_z(q, self.dim)
        return np.where(np.sqrt(_sq(q)) <= DOMAIN_TOL, -self.a, np.inf)

    def quad_form(self, t, s):
        return (self.a, 0.0, 0.0, 0.0) if self.dim == 1 else None


class Linear(Driver):
    """``g(z) = b . z + a``."""

    kind = "linear"

    def __init__(self, b, a=0.0, dim=None, label=None):
        b = np.atleast_1d(np.asarray(b, dtype=float))
        dim = dim or b.size
        self.b = np.broadcast_to(b, (dim,)).copy()
        self.a = float(a)
        super().__init__(dim, lipschitz=float(np.linalg.norm(self.b)),
                         label=label or f"linear(b={b.tolist()}, a={a})")

    def _eval(self, t, s, z):
        return _affine(z, self.b, self.a)

    def conjugate(self, t, s, q):
        return _affine_conjugate(_as_z(q, self.dim), self.b, self.a)

    def quad_form(self, t, s):
        return (self.a, float(self.b[0]), 0.0, 0.0) if self.dim == 1 else None


def _affine(z, slope, intercept):
    return z @ slope + intercept


def _affine_conjugate(q, slope, intercept):
    off = np.sqrt(_sq(q - slope))
    return np.where(off <= DOMAIN_TOL, -intercept, np.inf)


class Entropic(Driver):
    """``g(s, z) = b |z|^2 / 2 + a(s)``; not Lipschitz, solved with z clipping on MC."""

    kind = "entropic"

    def __init__(self, b, a=0.0, dim=1, label=None):
        if not b > 0:
            raise InvalidArgumentError("entropic driver needs b > 0")
        super().__init__(dim, lipschitz=None, label=label or f"entropic(b={b})")
        self.b = float(b)
        self.a = _fn1(a)
        self.a_const = None if callable(a) else float(a)

    def _eval(self, t, s, z):
        return 0.5 * self.b * _sq(z) + self.a(s)

    def conjugate(self, t, s, q):
        q = _as_z(q, self.dim)
        return _sq(q) / (2.0 * self.b) - self.a(s)

    def quad_form(self, t, s):
        return (float(self.a(s)), 0.0, 0.5 * self.b, 0.0) if self.dim == 1 else None


class VolterraLinear(Driver):
    """``g(t, s, z) = a(t, s) . z + b(t, s)``."""

    kind = "volterra_linear"
    volterra = True

    def __init__(self, a, b, dim=1, label=None):
        self.a = _vec_fn2(a, dim)
        self.b = _fn2(b)
        self.a_const = None if callable(a) else np.broadcast_to(np.asarray(a, float), (dim,)).copy()
        self.b_const = None if callable(b) else float(b)
        lip = None if self.a_const is None else float(np.linalg.norm(self.a_const))
        super().__init__(dim, lipschitz=lip, label=label or "volterra_linear")

    def _eval(self, t, s, z):
        return _affine(z, self.a(t, s), float(self.b(t, s)))

    def conjugate(self, t, s, q):
        return _affine_conjugate(_as_z(q, self.dim), self.a(t, s), float(self.b(t, s)))

    def quad_form(self, t, s):
        if self.dim != 1:
            return None
        return (float(self.b(t, s)), float(self.a(t, s)[0]), 0.0, 0.0)


class VolterraQuadratic(Driver):
    """``g(t, s, z) = b(t) |z|^2 / 2 + a(t, s)`` with ``b > 0``."""

    kind = "volterra_quadratic"
    volterra = True

    def __init__(self, b, a=0.0, dim=1, label=None):
        if not callable(b) and not b > 0:
            raise InvalidArgumentError("quadratic Volterra driver needs b > 0")
        super().__init__(dim, lipschitz=None, label=label or "volterra_quadratic")
        self.b = _fn1(b)
        self.a = _fn2(a)
        self.b_const = None if callable(b) else float(b)
        self.a_const = None if callable(a) else float(a)

    def _b(self, t):
        b = float(self.b(t))
        if not b > 0:
            raise InvalidArgumentError(f"quadratic Volterra coefficient b({t}) = {b} is not positive")
        return b

    def _eval(self, t, s, z):
        return 0.5 * self._b(t) * _sq(z) + float(self.a(t, s))

    def conjugate(self, t, s, q):
        q = _as_z(q, self.dim)
        return _sq(q) / (2.0 * self._b(t)) - float(self.a(t, s))

    def quad_form(self, t, s):
        if self.dim != 1:
            return None
        return (float(self.a(t, s)), 0.0, 0.5 * self._b(t), 0.0)


class Family(Driver):
    """Horizon-indexed family ``u -> g_u``.

    ``members`` is either a callable of the horizon or a mapping keyed by grid
    times. A family has to be resolved with :meth:`member` before evaluation.
    """

    kind = "family"

    def __init__(self, members, label=None):
        if isinstance(members, Mapping):
            keys = np.array(sorted(members), dtype=float)
            table = {float(k): members[k] for k in members}

            def pick(u):
                i = int(np.argmin(np.abs(keys - u)))
                if abs(keys[i] - u) > GRID_TOL * max(1.0, abs(u)):
                    raise InvalidArgumentError(f"family has no member for horizon {u}")
                return table[float(keys[i])]

            self._pick = pick
            sample = next(iter(table.values()))
        else:
            self._pick = members
            sample = None
        self._cache = {}
        if sample is not None:
            dim, vol = sample.dim, sample.volterra
        else:
            probe = members(0.0)
            dim, vol = probe.dim, probe.volterra
        super().__init__(dim, label=label or "family")
        self.volterra = vol

    def member(self, horizon):
        key = round(float(horizon), 12)
        if key not in self._cache:
            d = self._pick(float(horizon))
            if isinstance(d, Family):
                raise InvalidArgumentError("family members must not be families")
            self._cache[key] = d
        return self._cache[key]

    def _unresolved(self, *args, **kwargs):
        raise InvalidArgumentError("family driver must be resolved with a horizon first")

    __call__ = _unresolved
    conjugate = _unresolved
    zero_section = _unresolved
    quad_form = _unresolved


class Custom(Driver):
    """User callback ``fn(t, s, y, z)``, vectorized over leading axes.

    ``conjugate`` may be supplied; otherwise it is approximated numerically
    (scalar ``z`` only) by a lattice search refined with a bounded scalar
    minimization. ``quad_form`` lets the compiled tree kernels handle the driver.
    """

    kind = "custom"

    def __init__(self, fn, dim=1, supports_y=False, lipschitz=None, conjugate=None,
                 quad_form=None, volterra=False, label=None, z_search=50.0):
        super().__init__(dim, lipschitz=lipschitz, supports_y=supports_y, label=label or "custom")
        self.fn = fn
        self.volterra = bool(volterra)
        self._conj = conjugate
        self._quad = quad_form
        self.z_search = float(z_search)

    def __call__(self, t, s, y, z):
        z = _as_z(z, self.dim)
        y = np.broadcast_to(np.asarray(y, dtype=float), z.shape[:-1])
        if not self.supports_y:
            y = np.zeros_like(y)
        out = np.asarray(self.fn(t, s, y, z), dtype=float)
        return np.broadcast_to(out, z.shape[:-1]).copy() if out.shape != z.shape[:-1] else out

    def quad_form(self, t, s):
        if self._quad is None or self.dim != 1:
            return None
        return tuple(float(c) for c in self._quad(t, s))

    def conjugate(self, t, s, q):
        if self._conj is not None:
            q = _as_z(q, self.dim)
            return np.asarray(self._conj(t, s, q), dtype=float)
        qf = self.quad_form(t, s)
        if qf is not None:
            return quad_form_conjugate(*qf, np.asarray(_as_z(q, 1))[..., 0])
        return self._numeric_conjugate(t, s, q)

    def _numeric_conjugate(self, t, s, q):
        if self.dim != 1:
            raise UnsupportedError("numerical conjugate is only available for scalar z")
        q = np.asarray(_as_z(q, 1))[..., 0]
        zs = np.linspace(-self.z_search, self.z_search, 4001)
        gz = self(t, s, 0.0, zs[:, None])
        flat = q.reshape(-1)
        out = np.empty(flat.shape)
        step = zs[1] - zs[0]
        for n, qq in enumerate(flat):
            vals = qq * zs - gz
            i = int(np.argmax(vals))
            if i == 0 or i == zs.size - 1:
                out[n] = np.inf
                continue
            res = optimize.minimize_scalar(
                lambda x: -(qq * x - float(self(t, s, 0.0, np.array([[x]]))[0])),
                bounds=(zs[i] - step, zs[i] + step), method="bounded",
                options={"xatol": 1e-12})
            out[n] = max(vals[i], -res.fun)
        return out.reshape(q.shape)


def quadratic_form_driver(c0=0.0, c1=0.0, c2=0.0, c3=0.0, volterra=False, label=None):
    """Scalar driver ``c0 + c1 z + c2 z^2 + c3 |z|`` with coefficients of ``(t, s)``.

    Coefficients may be numbers or callables ``(t, s) -> float``; ``c2`` and
    ``c3`` must be non-negative so that the driver is convex.
    """
    fs = [_fn2(c) for c in (c0, c1, c2, c3)]

    def form(t, s):
        a0, a1, a2, a3 = (float(f(t, s)) for f in fs)
        if a2 < 0 or a3 < 0:
            raise InvalidArgumentError("quadratic-form driver needs c2, c3 >= 0")
        return a0, a1, a2, a3

    def fn(t, s, y, z):
        a0, a1, a2, a3 = form(t, s)
        x = z[..., 0]
        return a0 + a1 * x + a2 * x * x + a3 * np.abs(x)

    lip = None
    if not any(callable(c) for c in (c1, c2, c3)) and float(c2) == 0.0:
        lip = abs(float(c1)) + float(c3)
    return Custom(fn, dim=1, lipschitz=lip, quad_form=form, volterra=volterra,
                  label=label or "quadratic_form")


def resolve(driver: Driver, horizon: float) -> Driver:
    """Pick the member of a horizon family; other drivers are returned unchanged."""
    return driver.member(horizon)


# ---------------------------------------------------------------------------
# operations


def _check_finite(*xs):
    for x in xs:
        if not np.all(np.isfinite(np.asarray(x, dtype=float))):
            raise InvalidArgumentError("driver inputs must be finite")


def eval_driver(d: Driver, t, s, y, z):
    """Driver value ``g(t, s, y, z)``; scalar in, scalar out."""
    _check_finite(t, s, y, z)
    if d.volterra and t > s + GRID_TOL:
        raise InvalidArgumentError("Volterra drivers need t <= s")
    out = d(t, s, y, z)
    out = np.asarray(out, dtype=float)
    return float(out.reshape(-1)[0]) if out.size == 1 else out


def conjugate(d: Driver, t, s, q):
    """Convex conjugate in ``z``; returns ``(value, in_domain)``."""
    _check_finite(t, s, q)
    val = np.asarray(d.conjugate(t, s, q), dtype=float)
    dom = np.isfinite(val)
    if val.size == 1:
        return float(val.reshape(-1)[0]), bool(dom.reshape(-1)[0])
    return val, dom


def lipschitz_probe(d: Driver, t=0.0, s=0.0, z_lattice=None, warn=True):
    """Largest difference quotient of ``d`` in ``z`` on a lattice (scalar drivers).

    Emits a ``RuntimeWarning`` when it exceeds the declared constant.
    """
    if z_lattice is None:
        z_lattice = np.linspace(-5.0, 5.0, 201)
    z = np.asarray(z_lattice, dtype=float)
    g = np.asarray(d(t, s, 0.0, z[:, None]), dtype=float)
    slopes = np.abs(np.diff(g) / np.diff(z))
    est = float(np.max(slopes)) if slopes.size else 0.0
    if warn and d.lipschitz is not None and est > d.lipschitz * (1 + 1e-9) + 1e-12:
        warnings.warn(f"{d.label}: sampled Lipschitz constant {est:.4g} exceeds declared "
                      f"{d.lipschitz:.4g}", RuntimeWarning, stacklevel=2)
    return est


# ---------------------------------------------------------------------------
# claims


@dataclass(frozen=True)
class Claim:
    """Terminal position ``X`` as a path functional measurable at time ``u``.

    ``payoff`` maps an array of Brownian paths ``(n, k_u + 1, d)`` restricted
    to ``[0, u]`` to ``(n,)`` values. ``terminal`` is set for Markov claims
    (functions of ``B_u`` alone); only those can be placed on a recombining tree.
    """

    u: float
    payoff: Callable = field(repr=False)
    label: str = "claim"
    kind: str = "custom"
    terminal: Callable | None = field(default=None, repr=False)
    params: tuple = ()

    @property
    def markov(self) -> bool:
        return self.terminal is not None

    @staticmethod
    def constant(c, u=0.0, label=None):
        c = float(c)
        return Claim(u=float(u), payoff=lambda p: np.full(p.shape[0], c),
                     terminal=lambda b: np.full(b.shape[0], c),
                     label=label or f"const({c})", kind="constant", params=(c,))

    @staticmethod
    def linear(w, u, c=0.0, label=None):
        """``X = w . B_u + c``."""
        w = np.atleast_1d(np.asarray(w, dtype=float))
        c = float(c)
        return Claim(u=float(u), payoff=lambda p: p[:, -1, :] @ w + c,
                     terminal=lambda b: b @ w + c,
                     label=label or f"linear(w={w.tolist()}, u={u})", kind="linear",
                     params=(tuple(w.tolist()), c))

    @staticmethod
    def call(K, u, w=1.0, label=None):
        """``X = max(w . B_u - K, 0)``."""
        w = np.atleast_1d(np.asarray(w, dtype=float))
        K = float(K)
        return Claim(u=float(u), payoff=lambda p: np.maximum(p[:, -1, :] @ w - K, 0.0),
                     terminal=lambda b: np.maximum(b @ w - K, 0.0),
                     label=label or f"call(K={K}, u={u})", kind="call",
                     params=(tuple(w.tolist()), K))

    @staticmethod
    def put(K, u, w=1.0, label=None):
        w = np.atleast_1d(np.asarray(w, dtype=float))
        K = float(K)
        return Claim(u=float(u), payoff=lambda p: np.maximum(K - p[:, -1, :] @ w, 0.0),
                     terminal=lambda b: np.maximum(K - b @ w, 0.0),
                     label=label or f"put(K={K}, u={u})", kind="put",
                     params=(tuple(w.tolist()), K))

    @staticmethod
    def nodes(values, u, dt, label=None):
        """Function of the tree node at level ``k_u``; ``dt`` is the tree step.

        Off the tree lattice the claim has no value.
        """
        values = np.asarray(values, dtype=float).copy()
        k = values.size - 1
        sq = math.sqrt(dt)

        def terminal(b):
            b = np.asarray(b, dtype=float)[:, 0]
            j = (b / sq + k) / 2.0
            jr = np.rint(j)
            if np.any(np.abs(j - jr) > 1e-6) or np.any(jr < 0) or np.any(jr > k):
                raise UnsupportedError("node claims are only defined on tree lattice points")
            return values[jr.astype(int)]

        return Claim(u=float(u), payoff=lambda p: terminal(p[:, -1, :]), terminal=terminal,
                     label=label or f"nodes(u={u})", kind="nodes", params=(tuple(values),))

    @staticmethod
    def custom(payoff, u, terminal=None, label="custom"):
        return Claim(u=float(u), payoff=payoff, terminal=terminal, label=label, kind="custom")

    def shifted(self, m):
        """``X + m`` for a constant ``m``."""
        m = float(m)
        term = None if self.terminal is None else (lambda b, f=self.terminal: f(b) + m)
        params = self.params
        if self.kind == "constant":
            params = (self.params[0] + m,)
        elif self.kind == "linear":
            params = (self.params[0], self.params[1] + m)
        kind = self.kind if self.kind in ("constant", "linear") else "custom"
        return Claim(u=self.u, payoff=lambda p, f=self.payoff: f(p) + m, terminal=term,
                     label=f"{self.label}+{m}", kind=kind, params=params)


def claim_eval(c: Claim, path, grid: TimeGrid) -> float:
    """Payoff of one path given on the grid (rows are grid times)."""
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[:, None]
    k = grid.index(c.u)
    if path.shape[0] < k + 1:
        raise InvalidArgumentError(f"path has {path.shape[0]} points, claim needs {k + 1}")
    return float(np.asarray(c.payoff(path[None, : k + 1, :]))[0])


# ---------------------------------------------------------------------------
# queries and surfaces


@dataclass(frozen=True)
class RiskQuery:
    s: float
    horizon: float
    claim: Claim

    def __post_init__(self):
        if self.s > self.horizon + GRID_TOL:
            raise InvalidArgumentError("evaluation time must not exceed the horizon")
        if self.claim.u > self.horizon + GRID_TOL:
            raise InvalidArgumentError("claim is not measurable at the horizon")


@dataclass
class RiskSurface:
    """``rho_{s,t}(X)`` over (evaluation index, horizon index) cells.

    Tree cells hold node vectors at level ``s``; MC cells hold scalars at
    ``s = 0`` together with a standard error.
    """

    grid: TimeGrid
    claim_label: str
    backend: str
    values: dict = field(default_factory=dict)
    stderr: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def cells(self):
        return sorted(self.values)
