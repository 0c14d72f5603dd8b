"""Alternating two-optimizer training loop.

Each iteration: build a triplet from the current pair and the generator's
own output, accumulate the selector gradient (without stepping), take one
Adam step on the generator, and apply the accumulated selector update
every N iterations. The extractor stays frozen throughout in
feature-selection mode; the generator is frozen while the triplet
gradient is computed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .image import Image, augment, color_jitter, from_tensor, gaussian_blur, random_crop, to_grayscale, to_tensor
from .losses import (ContextualParams, color_loss, contextual_loss, perceptual_loss,
                     pixel_loss, texture_loss, triplet_loss)
from .networks import FeatureNetPsi, GeneratorF, SelectionPhi
from .optim import Adam
from .rng import Rng
from .tensor import Tensor

STRATEGY_KINDS = ("instance_self", "task_oriented", "source_anchored")
MODES = ("feature_selection", "full", "frozen")
DISTORTION_KINDS = ("gaussian_blur", "color_jitter", "grayscale")
LOSS_NAMES = ("perceptual", "contextual", "pixel_l1", "color", "texture")


class TrainerError(Exception):
    pass


class TrainingDiverged(TrainerError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"non-finite loss {value} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class DistortionSpec:
    kind: str = "color_jitter"
    blur_sigma: tuple[float, float] = (1.0, 2.0)
    jitter_scale: tuple[float, float] = (0.6, 1.4)
    jitter_bias: tuple[float, float] = (-0.1, 0.1)

    def __post_init__(self):
        if self.kind not in DISTORTION_KINDS:
            raise TrainerError(f"unknown distortion kind {self.kind!r}")
        if self.blur_sigma[0] > self.blur_sigma[1] or self.blur_sigma[0] <= 0:
            raise TrainerError(f"bad blur sigma range {self.blur_sigma}")

    def apply(self, image: Image, rng: Rng) -> Image:
        if self.kind == "gaussian_blur":
            return gaussian_blur(image, rng.uniform(*self.blur_sigma))
        if self.kind == "color_jitter":
            return color_jitter(image, rng, self.jitter_scale, self.jitter_bias)
        return to_grayscale(image)


@dataclass
class TripletStrategy:
    kind: str = "task_oriented"
    crop: int = 16
    distortion: DistortionSpec | None = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise TrainerError(f"unknown triplet strategy {self.kind!r}")
        if self.kind == "task_oriented" and self.distortion is None:
            raise TrainerError("task_oriented triplets require a distortion")
        if self.kind != "task_oriented" and self.distortion is not None:
            raise TrainerError(f"{self.kind} triplets must not carry a distortion")


@dataclass
class Triplet:
    anchor: Image
    positive: Image
    negative: Image
    provenance: tuple[str, str, str]


def build_triplet(strategy: TripletStrategy, x: Image, y: Image, x_gen: Image,
                  rng: Rng) -> Triplet:
    """Assign crop roles per strategy; each crop offset is drawn independently."""
    size = strategy.crop
    if strategy.kind == "instance_self":
        return Triplet(random_crop(y, size, rng), random_crop(y, size, rng),
                       random_crop(x_gen, size, rng),
                       ("crop(Y)", "crop(Y)", "crop(gen)"))
    if strategy.kind == "source_anchored":
        return Triplet(random_crop(x, size, rng), random_crop(x, size, rng),
                       random_crop(x_gen, size, rng),
                       ("crop(X)", "crop(X)", "crop(gen)"))
    distorted = strategy.distortion.apply(y, rng)
    return Triplet(random_crop(distorted, size, rng), random_crop(x_gen, size, rng),
                   random_crop(y, size, rng),
                   ("crop(distort(Y))", "crop(gen)", "crop(Y)"))


@dataclass
class DplConfig:
    strategy: TripletStrategy = field(default_factory=lambda: TripletStrategy(
        kind="task_oriented", distortion=DistortionSpec("color_jitter")))
    interval: int = 4  # selector applies once per N accumulations
    margin: float = 1.0
    mode: str = "feature_selection"
    iterations: int = 2000
    lr_generator: float = 1e-4
    lr_selector: float = 1e-4
    loss_weights: dict = field(default_factory=lambda: {"perceptual": 1.0})
    contextual_params: ContextualParams = field(default_factory=ContextualParams)
    color_sigma: float = 3.0
    augment_pairs: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise TrainerError(f"unknown fine-tune mode {self.mode!r}")
        if self.interval < 1:
            raise TrainerError(f"accumulate interval must be >= 1, got {self.interval}")
        if self.margin < 0:
            raise TrainerError(f"margin must be >= 0, got {self.margin}")
        for name in self.loss_weights:
            if name not in LOSS_NAMES:
                raise TrainerError(f"unknown loss component {name!r}")
        weights = [self.loss_weights.get(n, 0.0) for n in LOSS_NAMES]
        if any(w < 0 for w in weights) or not any(w > 0 for w in weights):
            raise TrainerError("loss weights must be >= 0 with at least one positive")


@dataclass
class TrainState:
    iteration: int = 0
    accum_count: int = 0
    gen_opt: Adam | None = None
    sel_opt: Adam | None = None


@dataclass
class HistoryRow:
    iteration: int
    generator_loss: float
    components: dict
    d_c: float
    f_norm: float
    phi_norm: float


def param_norm(params) -> float:
    return float(np.sqrt(sum(float((p.data**2).sum()) for p in params)))


def param_hash(params) -> str:
    digest = hashlib.sha256()
    for p in params:
        digest.update(np.ascontiguousarray(p.data).tobytes())
    return digest.hexdigest()


def _selector_params(psi: FeatureNetPsi, phi: SelectionPhi, mode: str):
    if mode == "feature_selection":
        return phi.params()
    if mode == "full":
        return psi.params()
    return []


def _features(psi: FeatureNetPsi, phi: SelectionPhi, x: Tensor, mode: str):
    taps = psi(x)
    return phi(taps) if mode == "feature_selection" else taps


def generator_step(f: GeneratorF, psi: FeatureNetPsi, phi: SelectionPhi,
                   x: Tensor, y: Tensor, config: DplConfig,
                   state: TrainState) -> tuple[float, dict]:
    """One Adam step on the generator under the configured loss recipe.

    The extractor and selector are frozen for the duration of the step.
    """
    psi_was, phi_was = psi.trainable(), phi.trainable()
    psi.set_trainable(False)
    phi.set_trainable(False)
    try:
        with T.ComputationTape() as tape:
            x_gen = f(x)
            components = {}
            total = None
            for name, weight in config.loss_weights.items():
                if weight <= 0:
                    continue
                if name == "perceptual":
                    term = perceptual_loss(_features(psi, phi, x_gen, config.mode),
                                           _features(psi, phi, y, config.mode))
                elif name == "contextual":
                    term = contextual_loss(_features(psi, phi, x_gen, config.mode),
                                           _features(psi, phi, y, config.mode),
                                           config.contextual_params)
                elif name == "pixel_l1":
                    term = pixel_loss("l1", x_gen, y)
                elif name == "color":
                    term = color_loss(x_gen, y, config.color_sigma)
                else:
                    term = texture_loss(x_gen, y)
                components[name] = term.item()
                weighted = term * weight
                total = weighted if total is None else total + weighted
            value = total.item()
            if not np.isfinite(value):
                raise TrainingDiverged(state.iteration, value)
            T.backward(total, tape)
        state.gen_opt.step()
        state.gen_opt.zero_grad()
    finally:
        psi.set_trainable(psi_was)
        phi.set_trainable(phi_was)
    return value, components


def selector_accumulate(psi: FeatureNetPsi, phi: SelectionPhi, triplet: Triplet,
                        margin: float, config: DplConfig, state: TrainState) -> float:
    """Accumulate the triplet-loss gradient into the fine-tuned parameters
    without stepping; the generator never appears on this tape."""
    if config.mode == "frozen":
        raise TrainerError("selector_accumulate called in frozen mode")
    if config.mode == "feature_selection":
        psi.set_trainable(False)
        phi.set_trainable(True)
    else:
        psi.set_trainable(True)
    with T.ComputationTape() as tape:
        fa = _features(psi, phi, to_tensor(triplet.anchor), config.mode)
        fp = _features(psi, phi, to_tensor(triplet.positive), config.mode)
        fn = _features(psi, phi, to_tensor(triplet.negative), config.mode)
        loss = triplet_loss(fa, fp, fn, margin)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(state.iteration, value)
        T.backward(loss, tape)
    state.accum_count += 1
    return value


def selector_apply(params, state: TrainState, interval: int) -> None:
    """One Adam step on the accumulated selector gradient, then reset."""
    if state.accum_count < interval:
        raise TrainerError(
            f"selector_apply before interval: {state.accum_count} < {interval}"
        )
    state.sel_opt.step()
    state.sel_opt.zero_grad()
    state.accum_count = 0


def run_training(config: DplConfig, dataset, f: GeneratorF, psi: FeatureNetPsi,
                 phi: SelectionPhi, rng: Rng,
                 sample_hook=None) -> tuple[GeneratorF, list[HistoryRow]]:
    """Full training loop; returns the generator and per-iteration history.

    The extractor/selector are inspectable afterwards but form no part of
    the output contract.
    """
    if not dataset:
        raise TrainerError("empty dataset")
    psi.set_trainable(False)
    state = TrainState()
    state.gen_opt = Adam(f.params(), lr=config.lr_generator)
    sel_params = _selector_params(psi, phi, config.mode)
    if sel_params:
        state.sel_opt = Adam(sel_params, lr=config.lr_selector)
    data_rng = rng.child(1)
    aug_rng = rng.child(2)
    trip_rng = rng.child(3)
    history: list[HistoryRow] = []

    for it in range(config.iterations):
        state.iteration = it
        x_img, y_img = dataset[data_rng.integers(0, len(dataset))]
        if config.augment_pairs:
            # identical child seed -> identical draws for both halves of the pair
            x_img = augment(x_img, aug_rng.child(it))
            y_img = augment(y_img, aug_rng.child(it))
        x_t = to_tensor(x_img)
        y_t = to_tensor(y_img)

        d_c = 0.0
        if config.mode != "frozen":
            # generator frozen: its output enters the triplet as plain data
            x_gen_img = from_tensor(f(x_t).detach())
            triplet = build_triplet(config.strategy, x_img, y_img, x_gen_img,
                                    trip_rng)
            d_c = selector_accumulate(psi, phi, triplet, config.margin, config, state)

        gen_loss, components = generator_step(f, psi, phi, x_t, y_t, config, state)

        if config.mode != "frozen" and state.accum_count >= config.interval:
            selector_apply(sel_params, state, config.interval)

        history.append(HistoryRow(
            iteration=it,
            generator_loss=gen_loss,
            components=components,
            d_c=d_c,
            f_norm=param_norm(f.params()),
            phi_norm=param_norm(phi.params()),
        ))
        if sample_hook is not None:
            sample_hook(it, f, x_img, y_img)
    return f, history
