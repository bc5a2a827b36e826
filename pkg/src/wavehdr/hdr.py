"""Radiometric preprocessing, mu-law tone mapping and training losses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, clamp_min0, concat_channels, conv2d, make_node, mean_abs, pad_edge, reshape, scale, split_channels, sub
from .errors import ConfigError, ShapeError

DEFAULT_GAMMA = 2.2
DEFAULT_MU = 5000.0
DEFAULT_LAMBDA = 0.25


def exposure_times(biases) -> tuple[float, float, float]:
    """EV biases to exposure times, t = 2**bias."""
    return tuple(float(2.0 ** b) for b in biases)


@dataclass
class BracketSample:
    """Three LDR frames of one scene plus the reference-aligned ground truth.

    ``ldr`` arrays are (1, C, H, W) in [0, 1]; frame index 1 (the middle
    exposure) is the reference.
    """

    ldr: tuple[np.ndarray, np.ndarray, np.ndarray]
    exposure_time: tuple[float, float, float]
    gt_hdr: np.ndarray | None = None
    name: str = ""

    reference_index = 1

    def __post_init__(self):
        if len(self.ldr) != 3 or len(self.exposure_time) != 3:
            raise ShapeError("a bracket needs exactly three frames and three exposure times")
        self.ldr = tuple(np.clip(np.asarray(f), 0.0, 1.0) for f in self.ldr)
        shapes = {f.shape for f in self.ldr}
        if len(shapes) != 1 or self.ldr[0].ndim != 4:
            raise ShapeError(f"LDR frames must share one 4-D shape, got {sorted(shapes)}")
        t = self.exposure_time
        if not all(x > 0 for x in t):
            raise ConfigError(f"exposure times must be positive, got {t}")
        if not (t[0] < t[1] < t[2]):
            raise ConfigError(f"exposure times must be strictly increasing, got {t}")
        if self.gt_hdr is not None:
            if self.gt_hdr.shape != self.ldr[0].shape:
                raise ShapeError(f"ground truth shape {self.gt_hdr.shape} != LDR shape {self.ldr[0].shape}")
            if np.any(self.gt_hdr < 0):
                raise ConfigError("ground-truth HDR must be non-negative")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.ldr[0].shape


def gamma_to_linear(ldr, t: float, gamma: float = DEFAULT_GAMMA):
    """L**gamma / t. Accepts arrays or Tensors (the result is not differentiated)."""
    if not t > 0:
        raise ConfigError(f"exposure time must be positive, got {t}")
    if not gamma > 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    if isinstance(ldr, Tensor):
        return Tensor(np.power(ldr.data, gamma) / t)
    return np.power(ldr, gamma) / t


def build_input(sample: BracketSample, gamma: float = DEFAULT_GAMMA, dtype=np.float64) -> list[Tensor]:
    """Per-frame network inputs: LDR channels followed by their linearized copy."""
    out = []
    for frame, t in zip(sample.ldr, sample.exposure_time):
        lin = gamma_to_linear(frame, t, gamma)
        out.append(concat_channels([Tensor(frame.astype(dtype)), Tensor(lin.astype(dtype))]))
    return out


def stack_inputs(batch: list[list[Tensor]]) -> list[Tensor]:
    """Concatenate per-sample inputs along the batch axis (frame-wise)."""
    return [Tensor(np.concatenate([b[i].data for b in batch], axis=0)) for i in range(3)]


def mu_law_array(h: np.ndarray, mu: float = DEFAULT_MU) -> np.ndarray:
    return np.log1p(mu * h) / math.log1p(mu)


def mu_law(h: Tensor, mu: float = DEFAULT_MU) -> Tensor:
    """log(1 + mu*h) / log(1 + mu), for h >= 0."""
    if not mu > 0:
        raise ConfigError(f"mu must be positive, got {mu}")
    x = h.data
    denom = math.log1p(mu)
    out = (np.log1p(mu * x) / denom).astype(x.dtype, copy=False)
    return make_node("mu_law", (h,), out, lambda g: (g * (mu / ((1.0 + mu * x) * denom)),))


def _check_pair(pred: Tensor, gt: Tensor) -> None:
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")


def _tonemap_pair(pred: Tensor, gt: Tensor, mu: float) -> tuple[Tensor, Tensor]:
    _check_pair(pred, gt)
    return mu_law(clamp_min0(pred), mu), mu_law(clamp_min0(gt), mu)


def reconstruction_loss(pred: Tensor, gt: Tensor, mu: float = DEFAULT_MU) -> Tensor:
    tp, tg = _tonemap_pair(pred, gt, mu)
    return mean_abs(sub(tp, tg))


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


def sobel(x: Tensor) -> tuple[Tensor, Tensor]:
    """Per-channel horizontal and vertical Sobel responses.

    Borders are replicate-padded so that constant images respond with exact
    zeros everywhere.
    """
    n, c, h, w = x.shape
    flat = pad_edge(reshape(x, (n * c, 1, h, w)), 1)
    kernel = Tensor(np.stack([SOBEL_X, SOBEL_Y])[:, None].astype(x.dtype))
    gx, gy = split_channels(conv2d(flat, kernel, None, stride=1, zero_pad=0), [1, 1])
    return reshape(gx, (n, c, h, w)), reshape(gy, (n, c, h, w))


def sobel_loss(pred: Tensor, gt: Tensor, mu: float = DEFAULT_MU) -> Tensor:
    tp, tg = _tonemap_pair(pred, gt, mu)
    # Sobel is linear, so filter the difference once
    gx, gy = sobel(sub(tp, tg))
    return add(mean_abs(gx), mean_abs(gy))


def total_loss(pred: Tensor, gt: Tensor, lam: float = DEFAULT_LAMBDA, mu: float = DEFAULT_MU) -> Tensor:
    if lam < 0:
        raise ConfigError(f"loss weight must be non-negative, got {lam}")
    tp, tg = _tonemap_pair(pred, gt, mu)
    diff = sub(tp, tg)
    rec = mean_abs(diff)
    if lam == 0:
        return rec
    gx, gy = sobel(diff)
    return add(rec, scale(add(mean_abs(gx), mean_abs(gy)), lam))


def triangle_merge(sample: BracketSample, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Static exposure merge weighting each linearized frame by a hat function.

    Pixels where every frame is clipped take the shortest exposure when the
    reference is bright and the longest when it is dark.
    """
    num = np.zeros_like(sample.ldr[0], dtype=np.float64)
    den = np.zeros_like(num)
    lins = []
    for frame, t in zip(sample.ldr, sample.exposure_time):
        w = 1.0 - np.abs(2.0 * frame - 1.0)
        lin = gamma_to_linear(frame.astype(np.float64), t, gamma)
        lins.append(lin)
        num += w * lin
        den += w
    fallback = np.where(sample.ldr[1] >= 0.5, lins[0], lins[2])
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, num / safe, fallback)
