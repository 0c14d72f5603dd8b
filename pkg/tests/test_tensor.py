import numpy as np
import pytest

from conftest import check_gradients
from dpl import tensor as T
from dpl.optim import Adam, AdamState, adam_step
from dpl.tensor import AutodiffError, ComputationTape, Tensor


def test_elementwise_add():
    out = T.elementwise("add", Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    assert np.allclose(out.data, [4.0, 6.0])


def test_elementwise_scalar_broadcast():
    out = T.elementwise("mul", Tensor([2.0, 3.0]), 0.0)
    assert np.allclose(out.data, [0.0, 0.0])


def test_elementwise_shape_mismatch_names_shapes():
    with pytest.raises(AutodiffError, match=r"\(2,\).*\(3,\)"):
        T.elementwise("add", Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_sub_self_zero_gradient():
    with ComputationTape() as tape:
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        loss = (x - x).sum()
        assert np.allclose(loss.data, 0.0)
        T.backward(loss, tape)
    assert np.allclose(x.grad, 0.0)


def test_backward_sum_gives_ones():
    with ComputationTape() as tape:
        x = Tensor([5.0, 6.0, 7.0], requires_grad=True)
        T.backward(x.sum(), tape)
    assert np.allclose(x.grad, [1.0, 1.0, 1.0])


def test_backward_accumulates_on_repeat():
    with ComputationTape() as tape:
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * x).sum()
        T.backward(loss, tape)
        first = x.grad.copy()
        T.backward(loss, tape)
    assert np.allclose(x.grad, 2 * first)


def test_backward_k_times_scales_linearly(f64):
    rng = np.random.default_rng(0)
    with ComputationTape() as tape:
        x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        loss = T.relu(x * 2.0 - 0.5).mean()
        T.backward(loss, tape)
        once = x.grad.copy()
        for _ in range(4):
            T.backward(loss, tape)
    assert np.array_equal(x.grad, 5 * once)


def test_backward_requires_rank0():
    with ComputationTape() as tape:
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = x * 2.0
        with pytest.raises(AutodiffError, match="rank-0"):
            T.backward(y, tape)


def test_backward_loss_not_on_tape():
    with ComputationTape() as tape1:
        x = Tensor([1.0], requires_grad=True)
        loss = x.sum()
    with ComputationTape() as tape2:
        with pytest.raises(AutodiffError, match="not produced under this tape"):
            T.backward(loss, tape2)


def test_zero_grads_and_rerun_matches_fresh(f64):
    rng = np.random.default_rng(1)
    data = rng.normal(size=(3, 3))
    with ComputationTape() as tape:
        x = Tensor(data, requires_grad=True)
        loss = (x * x * x).sum()
        T.backward(loss, tape)
        fresh = x.grad.copy()
        T.zero_grads([x])
        assert np.all(x.grad == 0.0)
        T.zero_grads([x])  # idempotent
        assert np.all(x.grad == 0.0)
        T.backward(loss, tape)
    assert np.array_equal(x.grad, fresh)


# -- relu ----------------------------------------------------------------------


def test_relu_values():
    out = T.relu(Tensor([-1.0, 0.0, 2.0]))
    assert np.allclose(out.data, [0.0, 0.0, 2.0])


def test_relu_all_negative_zero_grad():
    with ComputationTape() as tape:
        x = Tensor([-1.0, -5.0], requires_grad=True)
        T.backward(T.relu(x).sum(), tape)
    assert np.allclose(x.grad, 0.0)


def test_relu_gradient_finite_difference(f64):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 5))
    x[np.abs(x) < 0.1] += 0.5  # stay away from the kink
    check_gradients(lambda ts: T.relu(ts[0]).mean(), [x], rng, rtol=1e-6)


# -- conv2d ---------------------------------------------------------------------


def naive_conv2d(x, w, b, stride=1, padding=0):
    c, h, wd = x.shape
    o, i, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for y in range(ho):
            for xx in range(wo):
                acc = 0.0
                for ic in range(i):
                    for a in range(kh):
                        for bb in range(kw):
                            acc += xp[ic, y * stride + a, xx * stride + bb] * w[oc, ic, a, bb]
                out[oc, y, xx] = acc + b[oc]
    return out


def test_conv2d_all_ones_sums():
    out = T.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))),
                   Tensor(np.zeros(1)))
    assert out.shape == (1, 1, 1)
    assert out.data[0, 0, 0] == pytest.approx(9.0)


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(3)
    x = rng.uniform(size=(1, 4, 4))
    out = T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    assert np.allclose(out.data, x, atol=1e-6)


def test_conv2d_matches_naive_oracle(f64):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    got = T.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    want = naive_conv2d(x, w, b)
    assert np.allclose(got, want, rtol=1e-6)


@pytest.mark.parametrize("trial", range(10))
def test_conv2d_random_shapes_vs_oracle(f64, trial):
    rng = np.random.default_rng(1000 + trial)
    c = int(rng.integers(1, 4))
    o = int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    h = int(rng.integers(k, k + 5))
    w = int(rng.integers(k, k + 5))
    x = rng.normal(size=(c, h, w))
    wt = rng.normal(size=(o, c, k, k))
    b = rng.normal(size=o)
    got = T.conv2d(Tensor(x), Tensor(wt), Tensor(b), stride, padding).data
    assert np.allclose(got, naive_conv2d(x, wt, b, stride, padding), rtol=1e-6, atol=1e-9)


def test_conv2d_channel_mismatch():
    with pytest.raises(AutodiffError, match="channel mismatch"):
        T.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))),
                 Tensor(np.zeros(1)))


def test_conv2d_empty_output():
    with pytest.raises(AutodiffError, match="empty output"):
        T.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))),
                 Tensor(np.zeros(1)))


def test_conv2d_gradients(f64):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)

    def build(ts):
        return (T.conv2d(ts[0], ts[1], ts[2], stride=2, padding=1) ** 2).mean()

    check_gradients(build, [x, w, b], rng, n_points=30, rtol=1e-5)


# -- pooling / upsampling -------------------------------------------------------


def test_max_pool2_basic():
    out = T.max_pool2(Tensor([[[1.0, 2.0], [3.0, 4.0]]]))
    assert out.data[0, 0, 0] == pytest.approx(4.0)


def test_max_pool2_constant():
    out = T.max_pool2(Tensor(np.full((2, 4, 4), 0.7)))
    assert out.shape == (2, 2, 2)
    assert np.allclose(out.data, 0.7)


def test_max_pool2_odd_extent_errors():
    with pytest.raises(AutodiffError, match="even"):
        T.max_pool2(Tensor(np.zeros((1, 3, 4))))


def test_max_pool2_tie_routes_to_first_index():
    with ComputationTape() as tape:
        x = Tensor([[[2.0, 2.0], [2.0, 2.0]]], requires_grad=True)
        T.backward(T.max_pool2(x).sum(), tape)
    assert np.allclose(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])


def test_max_pool2_gradient(f64):
    rng = np.random.default_rng(6)
    # unique window maxima with clear margins
    x = rng.permutation(64).astype(float).reshape(1, 8, 8)
    check_gradients(lambda ts: (T.max_pool2(ts[0]) ** 2).mean(), [x], rng,
                    n_points=20, rtol=1e-6)


def test_upsample_replicates():
    out = T.upsample_nearest2(Tensor(np.full((1, 1, 1), 5.0)))
    assert out.shape == (1, 2, 2)
    assert np.allclose(out.data, 5.0)


def test_upsample_then_mean_downsample_is_identity():
    rng = np.random.default_rng(7)
    x = rng.uniform(size=(3, 4, 4))
    up = T.upsample_nearest2(Tensor(x)).data
    down = up.reshape(3, 4, 2, 4, 2).mean(axis=(2, 4))
    assert np.allclose(down, x, atol=1e-6)


def test_upsample_gradient(f64):
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 3, 3))
    check_gradients(lambda ts: (T.upsample_nearest2(ts[0]) ** 2).mean(), [x], rng,
                    n_points=15, rtol=1e-6)


def test_reflect_pad_gradient(f64):
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 5, 5))
    check_gradients(lambda ts: (T.reflect_pad2d(ts[0], 2) ** 2).mean(), [x], rng,
                    n_points=15, rtol=1e-6)


def test_reduce_extremes_gradient(f64):
    rng = np.random.default_rng(10)
    x = rng.normal(size=(4, 5))

    def build(ts):
        return T.reduce_max(ts[0], axis=1).sum() - T.reduce_min(ts[0], axis=0).sum()

    check_gradients(build, [x], rng, n_points=15, rtol=1e-6)


def test_matmul_and_transpose_gradient(f64):
    rng = np.random.default_rng(11)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(5, 4))

    def build(ts):
        return ((ts[0] @ ts[1].transpose()) ** 2).mean()

    check_gradients(build, [a, b], rng, n_points=20, rtol=1e-6)


def test_determinism_bit_identical():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(2, 8, 8)).astype(np.float32)
    w = rng.normal(size=(4, 2, 3, 3)).astype(np.float32)
    b = rng.normal(size=4).astype(np.float32)
    runs = []
    for _ in range(2):
        with ComputationTape() as tape:
            xt = Tensor(x, requires_grad=True)
            out = T.relu(T.conv2d(xt, Tensor(w, requires_grad=True), Tensor(b), padding=1))
            T.backward(out.mean(), tape)
        runs.append((out.data.copy(), xt.grad.copy()))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert np.array_equal(runs[0][1], runs[1][1])


# -- Adam -----------------------------------------------------------------------


def test_adam_first_step_bias_corrected():
    p = Tensor([0.0], requires_grad=True)
    p.grad = np.ones(1, dtype=p.dtype)
    state = AdamState(lr=1e-4)
    adam_step(p, state)
    assert p.data[0] == pytest.approx(-1e-4, rel=1e-6)
    assert state.t == 1
    assert np.allclose(p.grad, 1.0)  # grad untouched


def test_adam_zero_grad_is_noop():
    p = Tensor([1.5, -2.0], requires_grad=True)
    p.grad = np.zeros(2, dtype=p.dtype)
    before = p.data.copy()
    state = AdamState(lr=0.1)
    for _ in range(5):
        adam_step(p, state)
    assert np.array_equal(p.data, before)


def test_adam_missing_grad_errors():
    with pytest.raises(AutodiffError, match="no gradient"):
        adam_step(Tensor([1.0], requires_grad=True), AdamState())


def test_adam_descends_quadratic(f64):
    w = Tensor([1.0], requires_grad=True)
    opt = Adam([w], lr=0.05)
    values = []
    for _ in range(10):
        with ComputationTape() as tape:
            loss = (w * w).sum()
            values.append(loss.item())
            T.backward(loss, tape)
        opt.step()
        opt.zero_grad()
    with ComputationTape():
        values.append((w * w).sum().item())
    assert all(b < a for a, b in zip(values, values[1:]))
