"""Shared fixtures/helpers: a local central-difference gradient oracle.

Kept independent of grformer.verification so engine tests do not lean on the
code they are meant to vouch for.
"""

import numpy as np
import pytest

from grformer import precision
from grformer.tensor import Tensor, backward


@pytest.fixture(autouse=True)
def double_precision():
    # Oracle checks need f64; individual tests opt into f32 explicitly.
    with precision.use_precision("f64"):
        yield


def relative_error(ga: float, gn: float) -> float:
    return abs(ga - gn) / max(1.0, abs(ga), abs(gn))


def check_grads(build, arrays, tol=1e-4, step=1e-5, max_entries=None, seed=0):
    """Compare tape gradients of `build` against central differences.

    build: callable(list[Tensor]) -> scalar Tensor. arrays: list of float64
    ndarrays (mutated in place during probing, restored after).
    """
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    backward(build(leaves))

    def loss_at():
        return float(build([Tensor(a) for a in arrays]).data)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for leaf, a in zip(leaves, arrays):
        assert leaf.grad is not None, "missing gradient for an input slot"
        flat = a.reshape(-1)
        gflat = leaf.grad.reshape(-1)
        idxs = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idxs = sorted(rng.choice(flat.size, size=max_entries, replace=False))
        for i in idxs:
            keep = flat[i]
            flat[i] = keep + step
            up = loss_at()
            flat[i] = keep - step
            down = loss_at()
            flat[i] = keep
            err = relative_error(gflat[i], (up - down) / (2.0 * step))
            worst = max(worst, err)
            assert err <= tol, f"slot {i}: analytic {gflat[i]:.6g} vs numeric {(up - down) / (2.0 * step):.6g}"
    return worst
