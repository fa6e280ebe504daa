import numpy as np
import pytest
from hypothesis import given, strategies as st

from horizonrisk import _fallback, kernels

compiled = pytest.importorskip("horizonrisk._kernels")


def _inputs(seed, top):
    rng = np.random.default_rng(seed)
    coef = rng.uniform(-1, 1, (top, 4))
    coef[:, 2:] = np.abs(coef[:, 2:])
    return rng, coef, rng.normal(size=top + 1)


@given(st.integers(0, 10**6), st.integers(1, 12), st.data())
def test_sweep_parity(seed, top, data):
    rng, coef, vals = _inputs(seed, top)
    cl = data.draw(st.integers(0, top))
    stop = data.draw(st.integers(0, cl))
    args = (top, stop, cl, vals[: cl + 1], coef, 0.3, 0.09)
    for a, b in zip(compiled.sweep_affine(*args), _fallback.sweep_affine(*args)):
        np.testing.assert_array_equal(a, b)


@given(st.integers(0, 10**6), st.integers(1, 10), st.data())
def test_volterra_parity(seed, top, data):
    rng = np.random.default_rng(seed)
    lo = data.draw(st.integers(0, top))
    hi = data.draw(st.integers(lo, top))
    coef3 = rng.uniform(0, 1, (hi - lo + 1, top, 4))
    vals = rng.normal(size=top + 1)
    args = (top, lo, hi, top, vals, coef3, 0.3, 0.09)
    for a, b in zip(compiled.volterra_diagonal(*args), _fallback.volterra_diagonal(*args)):
        np.testing.assert_array_equal(a, b)


@given(st.integers(0, 10**6), st.integers(1, 10))
def test_dual_parity(seed, top):
    rng = np.random.default_rng(seed)
    q = np.linspace(-1, 1, 9)
    conj = rng.uniform(0, 1, (top, 9))
    conj[rng.uniform(size=conj.shape) < 0.3] = np.inf
    vals = rng.normal(size=top + 1)
    args = (top, 0, top, vals, q, conj, 0.3, 0.09)
    for a, b in zip(compiled.dual_sweep(*args), _fallback.dual_sweep(*args)):
        np.testing.assert_array_equal(a, b)


@given(st.integers(0, 10**6), st.integers(1, 10))
def test_measure_parity(seed, top):
    rng = np.random.default_rng(seed)
    q = rng.uniform(-2, 2, (top, top + 1))
    cost = rng.uniform(-1, 1, (top, top + 1))
    term = rng.normal(size=top + 1)
    np.testing.assert_array_equal(compiled.measure_sweep(top, 0, term, q, cost, 0.3),
                                  _fallback.measure_sweep(top, 0, term, q, cost, 0.3))


def test_read_only_inputs():
    q = np.zeros((3, 4))
    q.setflags(write=False)
    out = kernels.measure_sweep(3, 0, np.ones(4), q, np.zeros((3, 4)), 0.5)
    assert out[0, 0] == 1.0


def test_dispatch():
    assert kernels.BACKEND in ("compiled", "python")


def test_pure_python_switch():
    import os
    import subprocess
    import sys

    env = dict(os.environ, HORIZONRISK_PURE="1")
    out = subprocess.run([sys.executable, "-c", "import horizonrisk; print(horizonrisk.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
