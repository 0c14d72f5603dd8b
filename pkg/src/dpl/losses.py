"""Training losses: feature-space perceptual and contextual distances, the
triplet hinge, blurred color and grayscale texture distances, and pixel
baselines. A feature set is the ordered list of per-tap tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .image import GRAY_WEIGHTS, gaussian_kernel1d
from .tensor import Tensor

FeatureSet = list


class LossError(Exception):
    pass


@dataclass
class ContextualParams:
    bandwidth: float = 0.5
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.bandwidth <= 0 or self.epsilon <= 0:
            raise LossError("contextual bandwidth and epsilon must be positive")


def _check_same_shapes(fa: FeatureSet, fb: FeatureSet, op: str) -> None:
    if len(fa) != len(fb):
        raise LossError(f"{op}: tap count mismatch {len(fa)} vs {len(fb)}")
    for i, (a, b) in enumerate(zip(fa, fb)):
        if a.shape != b.shape:
            raise LossError(f"{op}: tap {i} shape mismatch {a.shape} vs {b.shape}")


def perceptual_loss(fa: FeatureSet, fb: FeatureSet) -> Tensor:
    """Mean over taps of the mean squared feature difference."""
    _check_same_shapes(fa, fb, "perceptual_loss")
    total = None
    for a, b in zip(fa, fb):
        tap = ((a - b) ** 2).mean()
        total = tap if total is None else total + tap
    return total * (1.0 / len(fa))


def _positions(feat: Tensor) -> Tensor:
    """[C,H,W] -> (H*W, C): one feature vector per spatial position."""
    c = feat.shape[0]
    return feat.reshape((c, -1)).transpose()


def contextual_loss(fa: FeatureSet, fb: FeatureSet,
                    params: ContextualParams | None = None) -> Tensor:
    """Set-matching loss over per-position feature vectors.

    Per tap: mean-center both sets by the second set's mean, convert
    cosine distances to row-normalized affinities, and score how well
    every target vector is matched by its best candidate. Spatial extents
    may differ between the two sets; channel widths must agree.
    Zero-norm vectors are handled by the epsilon inside the norm, not by
    raising.
    """
    params = params or ContextualParams()
    if len(fa) != len(fb):
        raise LossError(f"contextual_loss: tap count mismatch {len(fa)} vs {len(fb)}")
    h, eps = params.bandwidth, params.epsilon
    total = None
    for i, (a, b) in enumerate(zip(fa, fb)):
        if a.shape[0] != b.shape[0]:
            raise LossError(
                f"contextual_loss: tap {i} channel mismatch {a.shape[0]} vs {b.shape[0]}"
            )
        av = _positions(a)  # (Na, C)
        bv = _positions(b)  # (Nb, C)
        mu = bv.mean(axis=0, keepdims=True)
        ac, bc = av - mu, bv - mu
        an = ac / T.sqrt((ac * ac).sum(axis=1, keepdims=True) + eps * eps)
        bn = bc / T.sqrt((bc * bc).sum(axis=1, keepdims=True) + eps * eps)
        d = 1.0 - (an @ bn.transpose())  # (Na, Nb) cosine distances
        d_tilde = d / (T.reduce_min(d, axis=1, keepdims=True) + eps)
        w = T.exp((1.0 - d_tilde) * (1.0 / h))
        cx = w / w.sum(axis=1, keepdims=True)
        tap = -T.log(T.reduce_max(cx, axis=0).mean())
        total = tap if total is None else total + tap
    return total * (1.0 / len(fa))


def triplet_loss(anchor: FeatureSet, positive: FeatureSet, negative: FeatureSet,
                 margin: float) -> Tensor:
    """Hinge on size-normalized squared feature distances, summed over taps."""
    _check_same_shapes(anchor, positive, "triplet_loss(anchor, positive)")
    _check_same_shapes(anchor, negative, "triplet_loss(anchor, negative)")
    d_ap = None
    d_an = None
    for a, p, n in zip(anchor, positive, negative):
        tap_ap = ((a - p) ** 2).mean()
        tap_an = ((a - n) ** 2).mean()
        d_ap = tap_ap if d_ap is None else d_ap + tap_ap
        d_an = tap_an if d_an is None else d_an + tap_an
    return T.relu(d_ap - d_an + margin)


def _blur_weights(sigma: float, dtype):
    k = gaussian_kernel1d(sigma)
    n = len(k)
    wv = np.zeros((3, 3, n, 1))
    wh = np.zeros((3, 3, 1, n))
    for c in range(3):
        wv[c, c, :, 0] = k
        wh[c, c, 0, :] = k
    zero = np.zeros(3)
    return (T.constant(wv, dtype), T.constant(wh, dtype),
            T.constant(zero, dtype), n // 2)


def blur_tensor(x: Tensor, sigma: float) -> Tensor:
    """Differentiable separable Gaussian blur of [3,H,W] with reflect padding."""
    wv, wh, zero, radius = _blur_weights(sigma, x.dtype)
    padded = T.reflect_pad2d(x, radius)
    return T.conv2d(T.conv2d(padded, wv, zero), wh, zero)


def color_loss(a: Tensor, b: Tensor, sigma: float = 3.0) -> Tensor:
    """MSE between Gaussian-blurred images: sensitive to color/brightness only."""
    if a.shape != b.shape:
        raise LossError(f"color_loss shape mismatch {a.shape} vs {b.shape}")
    return ((blur_tensor(a, sigma) - blur_tensor(b, sigma)) ** 2).mean()


def luma_tensor(x: Tensor) -> Tensor:
    weights = T.constant(GRAY_WEIGHTS.reshape(3, 1, 1), x.dtype)
    return (x * weights).sum(axis=0)


def texture_loss(a: Tensor, b: Tensor) -> Tensor:
    """MSE between grayscale versions: blind to color, sensitive to structure."""
    if a.shape != b.shape:
        raise LossError(f"texture_loss shape mismatch {a.shape} vs {b.shape}")
    return ((luma_tensor(a) - luma_tensor(b)) ** 2).mean()


def pixel_loss(kind: str, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise LossError(f"pixel_loss shape mismatch {a.shape} vs {b.shape}")
    if kind == "l1":
        return T.absolute(a - b).mean()
    if kind == "mse":
        return ((a - b) ** 2).mean()
    raise LossError(f"unknown pixel loss kind {kind!r}")
