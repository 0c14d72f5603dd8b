import numpy as np
import pytest

from conftest import check_gradients
from dpl import tensor as T
from dpl.losses import (ContextualParams, LossError, blur_tensor, color_loss,
                        contextual_loss, perceptual_loss, pixel_loss,
                        texture_loss, triplet_loss)
from dpl.tensor import ComputationTape, Tensor


def _featset(*arrays):
    return [Tensor(a) for a in arrays]


def _vectors_to_tap(vecs: np.ndarray) -> np.ndarray:
    """(N, C) position vectors -> [C, 1, N] feature tensor."""
    return vecs.T.reshape(vecs.shape[1], 1, vecs.shape[0])


# -- perceptual ------------------------------------------------------------------


def test_perceptual_identity_zero():
    f = _featset(np.random.default_rng(0).normal(size=(4, 3, 3)))
    assert perceptual_loss(f, f).item() == pytest.approx(0.0, abs=1e-12)


def test_perceptual_arithmetic():
    fa = _featset(np.array([[[1.0, 2.0]]]))
    fb = _featset(np.array([[[1.0, 4.0]]]))
    assert perceptual_loss(fa, fb).item() == pytest.approx(2.0)


def test_perceptual_shape_mismatch():
    with pytest.raises(LossError, match="shape mismatch"):
        perceptual_loss(_featset(np.zeros((2, 2, 2))), _featset(np.zeros((2, 3, 3))))


def test_perceptual_gradient(f64):
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 4, 4))
    b = rng.normal(size=(3, 4, 4))
    check_gradients(lambda ts: perceptual_loss([ts[0]], [ts[1]]), [a, b], rng,
                    n_points=20, rtol=1e-6)


# -- contextual ------------------------------------------------------------------


def contextual_oracle(a_vecs, b_vecs, h=0.5, eps=1e-5):
    """Straight-line evaluation of the affinity chain on (N, C) arrays."""
    mu = b_vecs.mean(axis=0, keepdims=True)
    ac, bc = a_vecs - mu, b_vecs - mu
    an = ac / np.sqrt((ac**2).sum(axis=1, keepdims=True) + eps * eps)
    bn = bc / np.sqrt((bc**2).sum(axis=1, keepdims=True) + eps * eps)
    d = 1.0 - an @ bn.T
    dt = d / (d.min(axis=1, keepdims=True) + eps)
    w = np.exp((1.0 - dt) / h)
    cx = w / w.sum(axis=1, keepdims=True)
    return -np.log(cx.max(axis=0).mean())


def test_contextual_identity_small():
    vecs = np.array([[1.0, 0.2], [0.1, 1.0], [-1.0, 0.5], [0.4, -1.0]])
    f = _featset(_vectors_to_tap(vecs))
    assert contextual_loss(f, f).item() < 0.01


def test_contextual_orthogonal_uniform_gives_log_n():
    # zero-mean target set so centering is a no-op; all cross cosines are 0
    e = np.eye(8)
    ys = np.stack([e[0], -e[0], e[1], -e[1]])
    xs = np.stack([e[2], -e[2], e[3], -e[3]])
    loss = contextual_loss(_featset(_vectors_to_tap(xs)), _featset(_vectors_to_tap(ys)))
    assert loss.item() == pytest.approx(np.log(4.0), rel=1e-3)


def test_contextual_permutation_invariant_in_first_set():
    rng = np.random.default_rng(2)
    xs = rng.normal(size=(6, 4))
    ys = rng.normal(size=(5, 4))
    base = contextual_loss(_featset(_vectors_to_tap(xs)), _featset(_vectors_to_tap(ys)))
    perm = contextual_loss(_featset(_vectors_to_tap(xs[::-1].copy())),
                           _featset(_vectors_to_tap(ys)))
    assert base.item() == pytest.approx(perm.item(), rel=1e-9)


def test_contextual_matches_oracle_on_random_sets(f64):
    rng = np.random.default_rng(3)
    for _ in range(50):
        na, nb = int(rng.integers(2, 8)), int(rng.integers(2, 8))
        xs = rng.normal(size=(na, 2))
        ys = rng.normal(size=(nb, 2))
        got = contextual_loss(_featset(_vectors_to_tap(xs)),
                              _featset(_vectors_to_tap(ys))).item()
        assert got == pytest.approx(contextual_oracle(xs, ys), rel=1e-6, abs=1e-9)


def test_contextual_handles_zero_norm_vector():
    xs = np.array([[0.0, 0.0], [1.0, 2.0]])
    ys = np.array([[1.0, -1.0], [-1.0, 1.0]])
    value = contextual_loss(_featset(_vectors_to_tap(xs)),
                            _featset(_vectors_to_tap(ys))).item()
    assert np.isfinite(value) and value >= 0.0


def test_contextual_channel_mismatch():
    with pytest.raises(LossError, match="channel mismatch"):
        contextual_loss(_featset(np.zeros((2, 2, 2))), _featset(np.zeros((4, 2, 2))))


def test_contextual_gradient(f64):
    rng = np.random.default_rng(4)
    a = rng.normal(size=(3, 2, 2))
    b = rng.normal(size=(3, 2, 2))
    check_gradients(lambda ts: contextual_loss([ts[0]], [ts[1]]), [a, b], rng,
                    n_points=20, rtol=1e-5, atol=1e-7)


def test_contextual_bad_params():
    with pytest.raises(LossError):
        ContextualParams(bandwidth=0.0)


# -- triplet ----------------------------------------------------------------------


def _scalar_set(value):
    return _featset(np.array([[[value]]]))


def test_triplet_degenerate_equals_margin():
    f = _scalar_set(0.3)
    assert triplet_loss(f, f, f, margin=1.0).item() == pytest.approx(1.0)


def test_triplet_satisfied_margin_zero():
    a = _scalar_set(0.0)
    p = _scalar_set(np.sqrt(0.2))
    n = _scalar_set(np.sqrt(1.5))
    assert triplet_loss(a, p, n, margin=1.0).item() == pytest.approx(0.0, abs=1e-7)


def test_triplet_violated_margin():
    a = _scalar_set(0.0)
    p = _scalar_set(np.sqrt(0.5))
    n = _scalar_set(np.sqrt(0.3))
    assert triplet_loss(a, p, n, margin=1.0).item() == pytest.approx(1.2, rel=1e-5)


def test_triplet_zero_when_negative_far(f64):
    rng = np.random.default_rng(5)
    for _ in range(100):
        a = rng.normal(size=(2, 2, 2))
        p = a + rng.normal(scale=0.01, size=a.shape)
        n = a + 10.0 + rng.normal(size=a.shape)
        loss = triplet_loss(_featset(a), _featset(p), _featset(n), margin=1.0)
        assert loss.item() == 0.0


def test_triplet_gradient_active_hinge(f64):
    rng = np.random.default_rng(6)
    a = rng.normal(size=(2, 3, 3))
    p = a + rng.normal(scale=2.0, size=a.shape)
    n = a + rng.normal(scale=0.05, size=a.shape)

    def build(ts):
        return triplet_loss([ts[0]], [ts[1]], [ts[2]], margin=1.0)

    check_gradients(build, [a, p, n], rng, n_points=20, rtol=1e-6)


# -- color / texture / pixel ---------------------------------------------------------


def _img_tensor(seed, size=16):
    return Tensor(np.random.default_rng(seed).uniform(size=(3, size, size)))


def test_color_identity_zero():
    a = _img_tensor(7)
    assert color_loss(a, a).item() == pytest.approx(0.0, abs=1e-12)


def test_color_constant_offset():
    a = Tensor(np.full((3, 16, 16), 0.2))
    b = Tensor(np.full((3, 16, 16), 0.4))
    assert color_loss(a, b).item() == pytest.approx(0.04, rel=1e-6)


def test_color_ignores_shared_high_frequency(f64):
    rng = np.random.default_rng(8)
    a = rng.uniform(0.2, 0.8, size=(3, 32, 32))
    b = rng.uniform(0.2, 0.8, size=(3, 32, 32))
    checker = 0.05 * ((np.indices((32, 32)).sum(axis=0) % 2) * 2 - 1)
    base = color_loss(Tensor(a), Tensor(b), sigma=3.0).item()
    shifted = color_loss(Tensor(a + checker), Tensor(b + checker), sigma=3.0).item()
    assert shifted == pytest.approx(base, abs=1e-4)


def test_blur_tensor_matches_image_blur(f64):
    from dpl.image import Image, gaussian_blur

    rng = np.random.default_rng(9)
    arr = rng.uniform(size=(12, 12, 3))
    want = gaussian_blur(Image.from_array(arr), 1.7).pixels.transpose(2, 0, 1)
    got = blur_tensor(Tensor(arr.transpose(2, 0, 1)), 1.7).data
    assert np.allclose(got, want, atol=1e-9)


def test_texture_identity_zero():
    a = _img_tensor(10)
    assert texture_loss(a, a).item() == pytest.approx(0.0, abs=1e-12)


def test_texture_blind_to_color():
    # pure red vs a color with identical BT.601 luma
    a = np.zeros((3, 8, 8))
    a[0] = 1.0
    b = np.zeros((3, 8, 8))
    b[1] = 0.299 / 0.587  # green level matching red luma
    assert texture_loss(Tensor(a), Tensor(b)).item() == pytest.approx(0.0, abs=1e-10)


def test_texture_symmetric():
    a, b = _img_tensor(11), _img_tensor(12)
    assert texture_loss(a, b).item() == pytest.approx(texture_loss(b, a).item(), rel=1e-9)


def test_pixel_identity_zero():
    a = _img_tensor(13)
    for kind in ("l1", "mse"):
        assert pixel_loss(kind, a, a).item() == pytest.approx(0.0, abs=1e-12)


def test_pixel_arithmetic():
    a = Tensor(np.array([0.0, 1.0]))
    b = Tensor(np.array([1.0, 1.0]))
    assert pixel_loss("l1", a, b).item() == pytest.approx(0.5)
    assert pixel_loss("mse", a, b).item() == pytest.approx(0.5)


def test_pixel_mse_gradient(f64):
    rng = np.random.default_rng(14)
    a = rng.normal(size=(3, 5, 5))
    b = rng.normal(size=(3, 5, 5))
    check_gradients(lambda ts: pixel_loss("mse", ts[0], ts[1]), [a, b], rng,
                    n_points=20, rtol=1e-6)


# -- shared properties -----------------------------------------------------------------


def test_all_losses_non_negative_1000_trials():
    rng = np.random.default_rng(15)
    for trial in range(1000):
        shape = (3, 4, 4)
        a = Tensor(rng.normal(size=shape))
        b = Tensor(rng.normal(size=shape))
        c = Tensor(rng.normal(size=shape))
        assert perceptual_loss([a], [b]).item() >= 0.0
        assert triplet_loss([a], [b], [c], margin=1.0).item() >= 0.0
        assert pixel_loss("l1", a, b).item() >= 0.0
        assert pixel_loss("mse", a, b).item() >= 0.0
        if trial % 20 == 0:  # blur/contextual are heavier; sample them
            assert color_loss(a, b).item() >= 0.0
            assert texture_loss(a, b).item() >= 0.0
            assert contextual_loss([a], [b]).item() >= -1e-9


def test_symmetric_losses_are_symmetric():
    rng = np.random.default_rng(16)
    for _ in range(20):
        a = Tensor(rng.uniform(size=(3, 8, 8)))
        b = Tensor(rng.uniform(size=(3, 8, 8)))
        for fn in (lambda u, v: pixel_loss("l1", u, v),
                   lambda u, v: pixel_loss("mse", u, v),
                   color_loss, texture_loss):
            assert fn(a, b).item() == pytest.approx(fn(b, a).item(), rel=1e-9)
