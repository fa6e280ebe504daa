"""Pure numpy versions of the binomial-tree kernels.

Every routine mirrors ``_kernels.pyx`` operation for operation so that both
backends agree to rounding. Triangular outputs are ``(levels, width)`` arrays
padded with NaN (or -1 for index arrays) right of the diagonal.
"""

import numpy as np


def _tri(rows, width, fill=np.nan, dtype=float):
    return np.full((rows, width), fill, dtype=dtype)


def sweep_affine(top, stop, claim_level, claim_vals, coef, sqrt_dt, dt):
    """Explicit backward scheme for ``g = c0 + c1 z + c2 z^2 + c3 |z|``.

    ``coef[k]`` holds the coefficients used on the step from level ``k + 1`` to
    ``k``. The recursion starts from zero at ``top``; ``-claim_vals`` is added
    once level ``claim_level`` is reached.
    """
    Y = _tri(top + 1, top + 1)
    Z = _tri(max(top, 1), top + 1)
    y = np.zeros(top + 1)
    if claim_level == top:
        y = y - claim_vals
    Y[top, : top + 1] = y
    for k in range(top - 1, stop - 1, -1):
        yu = y[1 : k + 2]
        yd = y[: k + 1]
        z = (yu - yd) / (2.0 * sqrt_dt)
        c0, c1, c2, c3 = coef[k, 0], coef[k, 1], coef[k, 2], coef[k, 3]
        y = 0.5 * (yu + yd) + (c0 + c1 * z + c2 * z * z + c3 * np.abs(z)) * dt
        if k == claim_level:
            y = y - claim_vals
        Y[k, : k + 1] = y
        Z[k, : k + 1] = z
    return Y, Z


def volterra_diagonal(top, lo, hi, claim_level, claim_vals, coef3, sqrt_dt, dt):
    """Rows ``lo..hi`` of a BSVIE solution, one frozen-driver sweep per row.

    ``coef3[i - lo]`` is the coefficient table of the driver frozen at level i.
    """
    Y = _tri(top + 1, top + 1)
    Z = _tri(max(top, 1), top + 1)
    for i in range(lo, hi + 1):
        Yi, Zi = sweep_affine(top, i, claim_level, claim_vals, coef3[i - lo], sqrt_dt, dt)
        Y[i] = Yi[i]
        if i < top:
            Z[i] = Zi[i]
    return Y, Z


def dual_sweep(top, stop, claim_level, claim_vals, q_grid, conj, sqrt_dt, dt):
    """Nodewise maximization of ``E_Q[V_{k+1}] - g*(q) dt`` over ``q_grid``.

    ``conj[k, m]`` is the conjugate at level k for ``q_grid[m]`` (may be inf).
    Ties resolve to the lowest grid index.
    """
    V = _tri(top + 1, top + 1)
    A = _tri(max(top, 1), top + 1, fill=-1, dtype=np.int64)
    v = np.zeros(top + 1)
    if claim_level == top:
        v = v - claim_vals
    V[top, : top + 1] = v
    p = 0.5 * (1.0 + q_grid * sqrt_dt)
    for k in range(top - 1, stop - 1, -1):
        vu = v[1 : k + 2]
        vd = v[: k + 1]
        c = conj[k]
        cand = p[:, None] * vu[None, :] + (1.0 - p)[:, None] * vd[None, :] - (c * dt)[:, None]
        cand[~np.isfinite(c)] = -np.inf
        a = np.argmax(cand, axis=0)
        v = cand[a, np.arange(k + 1)]
        if k == claim_level:
            v = v - claim_vals
        V[k, : k + 1] = v
        A[k, : k + 1] = a
    return V, A


def measure_sweep(top, stop, terminal, q_tri, cost_tri, sqrt_dt):
    """``V_k = E_Q[V_{k+1}] + cost_k`` under the one-step kernel ``q_tri``.

    ``cost_tri`` may hold inf entries, which are absorbing.
    """
    V = _tri(top + 1, top + 1)
    v = np.asarray(terminal, dtype=float).copy()
    V[top, : top + 1] = v
    for k in range(top - 1, stop - 1, -1):
        p = 0.5 * (1.0 + q_tri[k, : k + 1] * sqrt_dt)
        v = p * v[1 : k + 2] + (1.0 - p) * v[: k + 1] + cost_tri[k, : k + 1]
        V[k, : k + 1] = v
    return V
