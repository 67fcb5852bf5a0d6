import sys

import numpy as np
import pytest

from dimts import autodiff as ad


def numeric_grad(f, x, h=1e-6):
    """Central finite differences of the scalar function ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / scale


def check_grads(fn, *arrays, h=1e-6):
    """Largest relative error between reverse-mode and finite-difference gradients of ``fn``."""
    grads = ad.grad_of(fn, *arrays)
    worst = 0.0
    for i, arr in enumerate(arrays):
        def f(v, i=i):
            args = [np.array(a, dtype=np.float64) for a in arrays]
            args[i] = v
            return float(ad.value_of(fn(*[ad.as_node(a) for a in args])))
        worst = max(worst, rel_error(grads[i], numeric_grad(f, arr, h)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
