"""Single-level separable 2-D orthonormal DWT/IDWT with periodic extension.

Analysis along one axis of length ``n`` (even) is

    low[k]  = sum_j lo[j] * x[(2k + j) mod n]
    high[k] = sum_j hi[j] * x[(2k + j) mod n]

with ``hi[j] = (-1)**j * lo[L-1-j]``. The analysis operator is orthogonal, so
synthesis is its transpose and the pair is exactly invertible.

Band naming follows the usual image convention: ``lh`` is low-pass along the
width and high-pass along the height (horizontal edges, vertical detail),
``hl`` the reverse, ``hh`` high-pass along both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import Tensor, make_node
from .errors import ConfigError, GeometryError, ShapeError

WAVELET_KINDS = ("haar", "db2", "db3", "sym2")


def _daubechies_lowpass(kind: str) -> np.ndarray:
    # Closed forms of the orthonormal scaling filters. sym2 coincides with db2:
    # for two vanishing moments the least-asymmetric solution is the same filter.
    if kind == "haar":
        return np.array([1.0, 1.0]) / math.sqrt(2.0)
    if kind in ("db2", "sym2"):
        s3 = math.sqrt(3.0)
        return np.array([1 + s3, 3 + s3, 3 - s3, 1 - s3]) / (4 * math.sqrt(2.0))
    if kind == "db3":
        a = math.sqrt(10.0)
        b = math.sqrt(5 + 2 * a)
        return np.array(
            [1 + a + b, 5 + a + 3 * b, 10 - 2 * a + 2 * b, 10 - 2 * a - 2 * b, 5 + a - 3 * b, 1 + a - b]
        ) / (16 * math.sqrt(2.0))
    raise ConfigError(f"unknown wavelet kind {kind!r}; expected one of {WAVELET_KINDS}")


@dataclass(frozen=True, eq=False)
class WaveletKind:
    tag: str
    dec_lo: np.ndarray
    dec_hi: np.ndarray

    @property
    def rec_lo(self) -> np.ndarray:
        return self.dec_lo[::-1].copy()

    @property
    def rec_hi(self) -> np.ndarray:
        return self.dec_hi[::-1].copy()

    @property
    def length(self) -> int:
        return len(self.dec_lo)


def _check_orthonormal(w: WaveletKind, tol: float = 1e-14) -> None:
    lo, hi = w.dec_lo, w.dec_hi
    n = len(lo)
    for shift in range(0, n, 2):
        same = 1.0 if shift == 0 else 0.0
        if abs(np.dot(lo[shift:], lo[: n - shift]) - same) > tol:
            raise ConfigError(f"{w.tag}: low-pass not orthonormal at shift {shift}")
        if abs(np.dot(hi[shift:], hi[: n - shift]) - same) > tol:
            raise ConfigError(f"{w.tag}: high-pass not orthonormal at shift {shift}")
    for shift in range(-(n - 2), n, 2):
        if shift >= 0:
            d = np.dot(lo[shift:], hi[: n - shift])
        else:
            d = np.dot(lo[: n + shift], hi[-shift:])
        if abs(d) > tol:
            raise ConfigError(f"{w.tag}: low/high not orthogonal at shift {shift}")


def get_wavelet(kind: str | WaveletKind) -> WaveletKind:
    """Look up a wavelet by tag, validating orthonormality on first use."""
    if isinstance(kind, WaveletKind):
        return kind
    return _build_wavelet(kind)


@lru_cache(maxsize=None)
def _build_wavelet(kind: str) -> WaveletKind:
    lo = _daubechies_lowpass(kind)
    sign = np.array([(-1.0) ** j for j in range(len(lo))])
    hi = sign * lo[::-1]
    lo.flags.writeable = False
    hi.flags.writeable = False
    w = WaveletKind(kind, lo, hi)
    _check_orthonormal(w)
    return w


@dataclass(frozen=True)
class WaveletBands:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self):
        shapes = {self.ll.shape, self.lh.shape, self.hl.shape, self.hh.shape}
        if len(shapes) != 1:
            raise ShapeError(f"wavelet bands disagree in shape: {sorted(shapes)}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.ll.shape

    def as_tuple(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return (self.ll, self.lh, self.hl, self.hh)


def _analyze(x: np.ndarray, axis: int, w: WaveletKind) -> tuple[np.ndarray, np.ndarray]:
    # tap j reads x[(2k + j) mod n]: even taps come from the even samples,
    # odd taps from the odd samples, each cyclically advanced by j // 2
    x = np.moveaxis(x, axis, -1)
    even, odd = x[..., 0::2], x[..., 1::2]
    lo = hi = None
    for j in range(w.length):
        s = np.roll(even if j % 2 == 0 else odd, -(j // 2), axis=-1)
        if lo is None:
            lo = w.dec_lo[j] * s
            hi = w.dec_hi[j] * s
        else:
            lo += w.dec_lo[j] * s
            hi += w.dec_hi[j] * s
    return np.moveaxis(lo, -1, axis), np.moveaxis(hi, -1, axis)


def _synthesize(lo: np.ndarray, hi: np.ndarray, axis: int, w: WaveletKind) -> np.ndarray:
    # exact transpose of _analyze
    lo = np.moveaxis(lo, axis, -1)
    hi = np.moveaxis(hi, axis, -1)
    even = np.zeros(lo.shape, dtype=np.result_type(lo, hi))
    odd = np.zeros_like(even)
    for j in range(w.length):
        contrib = np.roll(w.dec_lo[j] * lo + w.dec_hi[j] * hi, j // 2, axis=-1)
        if j % 2 == 0:
            even += contrib
        else:
            odd += contrib
    out = np.empty(lo.shape[:-1] + (2 * lo.shape[-1],), dtype=even.dtype)
    out[..., 0::2] = even
    out[..., 1::2] = odd
    return np.moveaxis(out, -1, axis)


def _dwt2_array(x: np.ndarray, w: WaveletKind) -> tuple[np.ndarray, ...]:
    lo_h, hi_h = _analyze(x, 2, w)  # along height
    ll, hl = _analyze(lo_h, 3, w)
    lh, hh = _analyze(hi_h, 3, w)
    return ll, lh, hl, hh


def _idwt2_array(ll, lh, hl, hh, w: WaveletKind) -> np.ndarray:
    lo_h = _synthesize(ll, hl, 3, w)
    hi_h = _synthesize(lh, hh, 3, w)
    return np.ascontiguousarray(_synthesize(lo_h, hi_h, 2, w))


def dwt2(x: Tensor, kind: str | WaveletKind = "haar") -> WaveletBands:
    """Split a (N, C, H, W) tensor into four (N, C, H/2, W/2) sub-bands."""
    w = get_wavelet(kind)
    if x.data.ndim != 4:
        raise ShapeError(f"dwt2 expects a 4-D tensor, got shape {x.shape}")
    h, wd = x.shape[2], x.shape[3]
    if h % 2 or wd % 2 or h == 0 or wd == 0:
        raise GeometryError(f"dwt2 needs even, non-zero spatial extents, got {h}x{wd}; pad first")
    ll, lh, hl, hh = _dwt2_array(x.data, w)
    dtype = x.dtype
    ll, lh, hl, hh = (a.astype(dtype, copy=False) for a in (ll, lh, hl, hh))
    if not x.requires_grad:
        return WaveletBands(*(Tensor._wrap(a, False) for a in (ll, lh, hl, hh)))

    # One node per band; each pulls back through the transpose with the other
    # bands zeroed. Linear, so the per-band gradients sum correctly.
    zeros = np.zeros_like(ll)
    bands = []
    for pos, arr in enumerate((ll, lh, hl, hh)):
        def back(g, pos=pos):
            parts = [zeros] * 4
            parts[pos] = g
            return (_idwt2_array(*parts, w).astype(dtype, copy=False),)

        bands.append(make_node(f"dwt2.{('ll', 'lh', 'hl', 'hh')[pos]}", (x,), arr, back))
    return WaveletBands(*bands)


def idwt2(bands: WaveletBands, kind: str | WaveletKind = "haar") -> Tensor:
    """Inverse of :func:`dwt2`; doubles the spatial extents."""
    w = get_wavelet(kind)
    parts = bands.as_tuple()
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise ShapeError(f"idwt2: band shapes disagree: {sorted(shapes)}")
    if parts[0].data.ndim != 4:
        raise ShapeError(f"idwt2 expects 4-D bands, got {parts[0].shape}")
    dtype = parts[0].dtype
    out = _idwt2_array(*(p.data for p in parts), w).astype(dtype, copy=False)

    def back(g):
        return tuple(a.astype(dtype, copy=False) for a in _dwt2_array(g, w))

    return make_node("idwt2", parts, out, back)


def band_energy(bands: WaveletBands) -> dict[str, float]:
    return {
        name: float(np.sum(t.data.astype(np.float64) ** 2))
        for name, t in zip(("ll", "lh", "hl", "hh"), bands.as_tuple())
    }
