import sys

import numpy as np
import pytest

from rlsrgan import tensor as T


def numerical_grad(f, arr, indices=None, step=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. entries of ``arr`` (mutated in place)."""
    flat = arr.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = {}
    for i in indices:
        orig = flat[i]
        flat[i] = orig + step
        plus = f()
        flat[i] = orig - step
        minus = f()
        flat[i] = orig
        out[i] = (plus - minus) / (2 * step)
    return out


def max_rel_error(analytic, numeric, floor=1e-6):
    """Largest absolute deviation, relative to the largest gradient magnitude compared.

    ``floor`` keeps identically-zero gradients (a conv bias feeding batch norm)
    from turning round-off into a relative error of 1.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), floor)
    return float(np.max(np.abs(a - n)) / scale)


def gradcheck(loss_fn, tensors, samples=None, rng=None, step=1e-5):
    """Compare backward() grads against central differences for every tensor.

    ``loss_fn`` rebuilds the graph and returns a scalar Tensor. ``samples``
    limits the number of checked entries per tensor (random subset).
    Returns the worst relative error. Each tensor's error is scaled by its own
    largest gradient, floored at 1e-3 of the largest gradient in the whole check.
    """
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = [t.grad.copy() for t in tensors]
    floor = max(1e-3 * max(float(np.max(np.abs(g))) for g in analytic), 1e-12)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        size = t.data.size
        if samples is None or samples >= size:
            idx = list(range(size))
        else:
            idx = list((rng or np.random.default_rng(0)).choice(size, samples, replace=False))
        with T.no_grad():
            num = numerical_grad(lambda: loss_fn().item(), t.data, idx, step)
        worst = max(worst, max_rel_error(g.reshape(-1)[idx], [num[i] for i in idx], floor))
    return worst


@pytest.fixture
def f64():
    with T.float64_mode():
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
