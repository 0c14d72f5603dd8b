"""The three networks: generator F, frozen feature extractor, and the
trainable 1x1-conv selection layer, plus extractor pretraining."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .image import Image, to_tensor
from .optim import Adam
from .rng import Rng
from .tensor import Tensor


class NetworkError(Exception):
    pass


class Conv2dLayer:
    def __init__(self, c_in: int, c_out: int, k: int, rng: Rng,
                 stride: int = 1, padding: int = 0, zero_init: bool = False):
        self.stride = stride
        self.padding = padding
        if zero_init:
            w = np.zeros((c_out, c_in, k, k))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / (c_in * k * k)), size=(c_out, c_in, k, k))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def params(self):
        return [self.weight, self.bias]


class LinearLayer:
    def __init__(self, n_in: int, n_out: int, rng: Rng):
        w = rng.normal(0.0, np.sqrt(1.0 / n_in), size=(n_in, n_out))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return (x @ self.weight) + self.bias

    def params(self):
        return [self.weight, self.bias]


class _Net:
    """Shared parameter bookkeeping: named layers with weight/bias pairs."""

    def _layers(self) -> dict:
        raise NotImplementedError

    def params(self) -> list[Tensor]:
        out = []
        for layer in self._layers().values():
            out.extend(layer.params())
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for name, layer in self._layers().items():
            state[f"{name}.weight"] = layer.weight.data
            state[f"{name}.bias"] = layer.bias.data
        return state

    def load_state_dict(self, state: dict) -> None:
        for name, layer in self._layers().items():
            for attr in ("weight", "bias"):
                key = f"{name}.{attr}"
                if key not in state:
                    raise NetworkError(f"checkpoint missing tensor {key!r}")
                arr = np.asarray(state[key])
                param: Tensor = getattr(layer, attr)
                if arr.shape != param.shape:
                    raise NetworkError(
                        f"checkpoint tensor {key!r} has shape {arr.shape}, expected {param.shape}"
                    )
                param.data = arr.astype(T.get_default_dtype())

    def set_trainable(self, flag: bool) -> None:
        for p in self.params():
            p.requires_grad = flag

    def trainable(self) -> bool:
        return any(p.requires_grad for p in self.params())


class GeneratorF(_Net):
    """Small encoder-decoder with a global additive skip.

    The output head is zero-initialized, so an untrained generator is an
    exact identity map; training sees unclamped values.
    """

    def __init__(self, rng: Rng):
        self.enc1 = Conv2dLayer(3, 16, 3, rng.child(1), padding=1)
        self.enc2 = Conv2dLayer(16, 32, 3, rng.child(2), stride=2, padding=1)
        self.mid = Conv2dLayer(32, 32, 3, rng.child(3), padding=1)
        self.dec1 = Conv2dLayer(32, 16, 3, rng.child(4), padding=1)
        self.dec2 = Conv2dLayer(16, 3, 3, rng.child(5), padding=1, zero_init=True)

    def _layers(self):
        return {"enc1": self.enc1, "enc2": self.enc2, "mid": self.mid,
                "dec1": self.dec1, "dec2": self.dec2}

    def __call__(self, x: Tensor) -> Tensor:
        _, h, w = x.shape
        if h % 2 or w % 2 or h < 8 or w < 8:
            raise NetworkError(f"generator needs even extents >= 8, got {h}x{w}")
        z = T.relu(self.enc1(x))
        z = T.relu(self.enc2(z))
        z = T.relu(self.mid(z))
        z = T.upsample_nearest2(z)
        z = T.relu(self.dec1(z))
        return x + self.dec2(z)


class FeatureNetPsi(_Net):
    """3-block CNN pretrained on synthetic textures; taps after each block.

    In transformation training all parameters are frozen and only the tap
    activations are consumed; the classification head exists for
    pretraining alone.
    """

    TAP_CHANNELS = (16, 32, 64)

    def __init__(self, rng: Rng):
        self.block1 = Conv2dLayer(3, 16, 3, rng.child(11), padding=1)
        self.block2 = Conv2dLayer(16, 32, 3, rng.child(12), padding=1)
        self.block3 = Conv2dLayer(32, 64, 3, rng.child(13), padding=1)
        self.head = LinearLayer(64, 10, rng.child(14))

    def _layers(self):
        return {"block1": self.block1, "block2": self.block2,
                "block3": self.block3, "head": self.head}

    def __call__(self, x: Tensor) -> list[Tensor]:
        _, h, w = x.shape
        if h % 4 or w % 4:
            raise NetworkError(f"extractor needs extents divisible by 4, got {h}x{w}")
        h1 = T.relu(self.block1(x))
        h2 = T.relu(self.block2(T.max_pool2(h1)))
        h3 = T.relu(self.block3(T.max_pool2(h2)))
        return [h1, h2, h3]

    def logits(self, x: Tensor) -> Tensor:
        h3 = self(x)[-1]
        pooled = h3.reshape((64, -1)).mean(axis=1).reshape((1, 64))
        return self.head(pooled).reshape(10)


class SelectionPhi(_Net):
    """Per-tap pair of 1x1 convolutions with a relu between, halving channels.

    Initialization starts near "pass the pre-trained features through":
    the first conv is an identity matrix plus small noise, the second a
    slice onto the first C/2 channels plus small noise.
    """

    def __init__(self, rng: Rng, channels=(16, 32, 64), noise: float = 0.01):
        self._channels = tuple(channels)
        self._convs = {}
        for i, c in enumerate(self._channels):
            first = Conv2dLayer(c, c, 1, rng.child(100 + i))
            first.weight.data = (
                np.eye(c).reshape(c, c, 1, 1)
                + rng.child(200 + i).normal(0.0, noise, size=(c, c, 1, 1))
            ).astype(first.weight.dtype)
            second = Conv2dLayer(c, c // 2, 1, rng.child(300 + i))
            second.weight.data = (
                np.eye(c)[: c // 2].reshape(c // 2, c, 1, 1)
                + rng.child(400 + i).normal(0.0, noise, size=(c // 2, c, 1, 1))
            ).astype(second.weight.dtype)
            self._convs[f"tap{i}_first"] = first
            self._convs[f"tap{i}_second"] = second

    def _layers(self):
        return self._convs

    def __call__(self, features: list[Tensor]) -> list[Tensor]:
        if len(features) != len(self._channels):
            raise NetworkError(
                f"expected {len(self._channels)} taps, got {len(features)}"
            )
        out = []
        for i, (feat, c) in enumerate(zip(features, self._channels)):
            if feat.shape[0] != c:
                raise NetworkError(
                    f"tap {i}: channel mismatch, feature has {feat.shape[0]}, selector expects {c}"
                )
            z = T.relu(self._convs[f"tap{i}_first"](feat))
            out.append(self._convs[f"tap{i}_second"](z))
        return out


def log_softmax(logits: Tensor) -> Tensor:
    shift = T.constant(np.max(logits.data), dtype=logits.dtype)
    z = logits - shift
    return z - T.log(T.exp(z).sum())


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    onehot = np.zeros(logits.shape[0])
    onehot[label] = 1.0
    return -(log_softmax(logits) * T.constant(onehot, dtype=logits.dtype)).sum()


def classify(psi: FeatureNetPsi, image: Image) -> int:
    return int(np.argmax(psi.logits(to_tensor(image)).data))


def accuracy(psi: FeatureNetPsi, dataset) -> float:
    hits = sum(1 for img, label in dataset if classify(psi, img) == label)
    return hits / len(dataset)


def pretrain_psi(psi: FeatureNetPsi, dataset, epochs: int, rng: Rng,
                 lr: float = 1e-3, holdout_frac: float = 0.1,
                 target_accuracy: float = 0.80, log=None) -> FeatureNetPsi:
    """Train the texture classifier until held-out accuracy meets the gate.

    Raises NetworkError if accuracy stays below 50% after the full epoch
    budget (bad seed or budget too small).
    """
    n_hold = max(1, int(len(dataset) * holdout_frac))
    heldout, train = dataset[:n_hold], dataset[n_hold:]
    psi.set_trainable(True)
    opt = Adam(psi.params(), lr=lr)
    acc = accuracy(psi, heldout)
    if log is not None:
        log(f"epoch 0 heldout_accuracy {acc:.4f}")
    for epoch in range(1, epochs + 1):
        for idx in rng.permutation(len(train)):
            img, label = train[int(idx)]
            with T.ComputationTape() as tape:
                loss = cross_entropy(psi.logits(to_tensor(img)), label)
                T.backward(loss, tape)
            opt.step()
            opt.zero_grad()
        acc = accuracy(psi, heldout)
        if log is not None:
            log(f"epoch {epoch} heldout_accuracy {acc:.4f}")
        if acc >= target_accuracy:
            break
    if acc < 0.50:
        raise NetworkError(
            f"pretraining reached only {acc:.2%} held-out accuracy; "
            "increase the epoch/sample budget or change the seed"
        )
    psi.set_trainable(False)
    psi.final_accuracy = acc
    return psi
