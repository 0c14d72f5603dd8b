import numpy as np
import pytest

import dpl
from dpl import tensor as T


@pytest.fixture
def f64():
    """Run a test in 64-bit mode (finite differences need the precision)."""
    with T.default_dtype(np.float64):
        yield


_PRETRAIN_CACHE = {}


def pretrained_psi_full():
    """Full-budget pretrained extractor, computed once per session.

    Returns (psi, accuracy, wall_seconds); the acceptance gate asserts on
    the recorded numbers.
    """
    if "psi" not in _PRETRAIN_CACHE:
        import time

        rng = dpl.Rng(100)
        data = dpl.generate_synthetic("textures", 2000, 32, rng.child(1))
        psi = dpl.FeatureNetPsi(rng.child(2))
        t0 = time.time()
        dpl.pretrain_psi(psi, data, 5, rng.child(3))
        _PRETRAIN_CACHE["psi"] = (psi, psi.final_accuracy, time.time() - t0)
    return _PRETRAIN_CACHE["psi"]


@pytest.fixture(scope="session")
def pretrained_psi():
    return pretrained_psi_full()[0]


def finite_difference(fn, arrays, which, index, step=1e-5):
    """Central difference of scalar fn w.r.t. arrays[which][index]."""
    arrays[which][index] += step
    hi = fn(arrays)
    arrays[which][index] -= 2 * step
    lo = fn(arrays)
    arrays[which][index] += step
    return (hi - lo) / (2 * step)


def check_gradients(build, arrays, rng, n_points=20, rtol=1e-6, atol=1e-8,
                    step=1e-5):
    """Compare taped gradients against central finite differences.

    ``build`` maps a list of numpy arrays to a scalar Tensor while
    recording on the active tape; leaves are created inside so the caller
    controls which arrays get gradients.
    """
    tensors = [T.Tensor(a, requires_grad=True) for a in arrays]

    with T.ComputationTape() as tape:
        loss = build(tensors)
        T.backward(loss, tape)

    def fn(arrs):
        ts = [T.Tensor(a) for a in arrs]
        return build(ts).item()

    plain = [t.data.copy() for t in tensors]
    for _ in range(n_points):
        which = int(rng.integers(0, len(arrays)))
        flat = int(rng.integers(0, arrays[which].size))
        index = np.unravel_index(flat, arrays[which].shape)
        expected = finite_difference(fn, plain, which, index, step)
        got = tensors[which].grad[index]
        assert got == pytest.approx(expected, rel=rtol, abs=atol), (
            f"grad mismatch at arg {which} index {index}: {got} vs fd {expected}"
        )
