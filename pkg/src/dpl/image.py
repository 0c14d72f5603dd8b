"""RGB image type, binary PPM I/O, crops, augmentation, and distortions.

Images are HxWx3 float64 rasters in [0,1]; constructors clamp on the way
in so every stored value stays inside the range. Tensor conversion is a
lossless [3,H,W] transpose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .tensor import Tensor, get_default_dtype


class ImageError(Exception):
    """Raised on malformed files or invalid image operations."""


@dataclass(frozen=True)
class Image:
    pixels: np.ndarray  # (H, W, 3) float64 in [0, 1]

    @staticmethod
    def from_array(arr: np.ndarray, clamp: bool = True) -> "Image":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ImageError(f"expected (H, W, 3) array, got {arr.shape}")
        if clamp:
            arr = np.clip(arr, 0.0, 1.0)
        return Image(np.ascontiguousarray(arr))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def to_tensor(image: Image, requires_grad: bool = False) -> Tensor:
    """Image -> Tensor[3,H,W] in the current default element type."""
    return Tensor(image.pixels.transpose(2, 0, 1), requires_grad=requires_grad,
                  dtype=get_default_dtype())


def from_tensor(t: Tensor) -> Image:
    """Tensor[3,H,W] -> Image, clamping to [0,1] on write-out."""
    if t.data.ndim != 3 or t.shape[0] != 3:
        raise ImageError(f"expected [3,H,W] tensor, got {t.shape}")
    return Image.from_array(t.data.transpose(1, 2, 0))


# -- PPM (P6, maxval 255) -----------------------------------------------------


def save_image(image: Image, path) -> None:
    h, w = image.height, image.width
    payload = np.round(np.clip(image.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(payload.tobytes())


def _read_token(f) -> bytes:
    # whitespace-delimited token, skipping '#' comments
    tok = b""
    while True:
        ch = f.read(1)
        if ch == b"":
            raise ImageError("truncated PPM header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def load_image(path) -> Image:
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic != b"P6":
            raise ImageError(f"unsupported PPM magic {magic!r} (only binary P6)")
        try:
            w = int(_read_token(f))
            h = int(_read_token(f))
            maxval = int(_read_token(f))
        except ValueError as e:
            raise ImageError(f"malformed PPM header: {e}") from None
        if w <= 0 or h <= 0:
            raise ImageError(f"invalid PPM dimensions {w}x{h}")
        if maxval != 255:
            raise ImageError(f"unsupported PPM maxval {maxval} (only 255)")
        payload = f.read(w * h * 3)
        if len(payload) != w * h * 3:
            raise ImageError(
                f"truncated PPM payload: expected {w * h * 3} bytes, got {len(payload)}"
            )
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return Image(arr.astype(np.float64) / 255.0)


# -- crops and augmentation ---------------------------------------------------


def random_crop(image: Image, size: int, rng: Rng) -> Image:
    """Axis-aligned size x size crop at a uniform valid offset."""
    if size > min(image.height, image.width):
        raise ImageError(
            f"crop size {size} exceeds image extent {image.height}x{image.width}"
        )
    top = rng.integers(0, image.height - size + 1)
    left = rng.integers(0, image.width - size + 1)
    return Image(np.ascontiguousarray(image.pixels[top : top + size, left : left + size]))


def augment(image: Image, rng: Rng) -> Image:
    """Independent 50% horizontal/vertical flips plus a 90-degree rotation."""
    if image.height != image.width:
        raise ImageError("augment requires a square image (rotations)")
    px = image.pixels
    if rng.uniform() < 0.5:
        px = px[:, ::-1]
    if rng.uniform() < 0.5:
        px = px[::-1, :]
    k = rng.integers(0, 4)
    if k:
        px = np.rot90(px, k)
    return Image(np.ascontiguousarray(px))


# -- distortions ---------------------------------------------------------------


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian of radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ImageError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def _blur_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="reflect")
    out = np.zeros_like(arr)
    sl = [slice(None)] * arr.ndim
    for i, wgt in enumerate(kernel):
        sl[axis] = slice(i, i + arr.shape[axis])
        out += wgt * padded[tuple(sl)]
    return out


def gaussian_blur(image: Image, sigma: float) -> Image:
    """Separable Gaussian blur with reflect padding."""
    k = gaussian_kernel1d(sigma)
    out = _blur_axis(_blur_axis(image.pixels, k, 0), k, 1)
    return Image.from_array(out)


def color_jitter(image: Image, rng: Rng,
                 scale_range: tuple[float, float] = (0.6, 1.4),
                 bias_range: tuple[float, float] = (-0.1, 0.1)) -> Image:
    """Per-channel affine jitter v' = clamp(s*v + b, 0, 1)."""
    lo_s, hi_s = scale_range
    lo_b, hi_b = bias_range
    if not (0.0 <= lo_s <= hi_s <= 1.5):
        raise ImageError(f"scale range {scale_range} outside [0.0, 1.5]")
    if not (-0.25 <= lo_b <= hi_b <= 0.25):
        raise ImageError(f"bias range {bias_range} outside [-0.25, 0.25]")
    s = rng.uniform(lo_s, hi_s, size=3)
    b = rng.uniform(lo_b, hi_b, size=3)
    return Image.from_array(image.pixels * s + b)


GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])  # BT.601 luma


def to_grayscale(image: Image) -> Image:
    luma = image.pixels @ GRAY_WEIGHTS
    return Image.from_array(np.repeat(luma[:, :, None], 3, axis=2))
