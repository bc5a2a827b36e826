"""Sub-band panels for visual inspection, with an exact way back.

Each panel is a band min-max normalized to [0, 1]; its (min, max) pair is
kept so the coefficients, and hence the source image, can be recovered.
Bands whose range is negligible render as mid-gray (0.5).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import GeometryError
from .wavelet import WaveletBands, dwt2, idwt2

BANDS = ("LL", "LH", "HL", "HH")
FLAT_TOL = 1e-12


@dataclass
class Panel:
    level: int
    band: str
    image: np.ndarray  # (1, C, h, w) in [0, 1]
    lo: float
    hi: float

    @property
    def key(self) -> str:
        return f"L{self.level}_{self.band}"

    def coefficients(self) -> np.ndarray:
        if self.hi == self.lo:
            return np.full_like(self.image, self.lo)
        return self.image * (self.hi - self.lo) + self.lo


def normalize(band: np.ndarray) -> tuple[np.ndarray, float, float]:
    lo, hi = float(band.min()), float(band.max())
    if hi - lo <= FLAT_TOL * max(1.0, abs(lo), abs(hi)):
        mid = 0.5 * (lo + hi)
        return np.full_like(band, 0.5), mid, mid
    return (band - lo) / (hi - lo), lo, hi


def decompose(img: np.ndarray, level: int = 1, kind: str = "haar") -> list[Panel]:
    """Detail panels for levels 1..level and the final LL panel."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None, None]
    if level < 1:
        raise GeometryError(f"level must be >= 1, got {level}")
    h, w = img.shape[-2:]
    if h % (1 << level) or w % (1 << level):
        raise GeometryError(f"{h}x{w} image cannot be split {level} times (needs multiples of {1 << level})")
    panels = []
    ll = img
    for lv in range(1, level + 1):
        b = dwt2(Tensor(ll), kind)
        for name, t in zip(BANDS[1:], (b.lh, b.hl, b.hh)):
            panels.append(Panel(lv, name, *normalize(t.data)))
        ll = b.ll.data
    panels.append(Panel(level, "LL", *normalize(ll)))
    return panels


def reconstruct(panels: list[Panel], kind: str = "haar") -> np.ndarray:
    """Invert :func:`decompose`."""
    by_key = {p.key: p for p in panels}
    level = max(p.level for p in panels)
    ll = by_key[f"L{level}_LL"].coefficients()
    for lv in range(level, 0, -1):
        det = [Tensor(by_key[f"L{lv}_{b}"].coefficients()) for b in BANDS[1:]]
        ll = idwt2(WaveletBands(Tensor(ll), *det), kind).data
    return ll


def energy_fractions(panels: list[Panel], level: int = 1) -> dict[str, float]:
    """Share of the high-frequency energy held by each detail band at ``level``."""
    e = {p.band: float(np.sum(p.coefficients() ** 2)) for p in panels if p.level == level and p.band != "LL"}
    total = sum(e.values())
    return {k: (v / total if total > 0 else 0.0) for k, v in e.items()}


def save_panels(panels: list[Panel], out_dir: str | Path, prefix: str = "") -> list[Path]:
    """One 16-bit PNG per panel plus ``<prefix>panels.npz`` with exact values."""
    from .data import write_png16

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    arrays = {}
    for p in panels:
        img = p.image
        if img.shape[1] not in (1, 3):
            img = img.mean(axis=1, keepdims=True)
        path = out / f"{prefix}{p.key}.png"
        write_png16(path, img)
        paths.append(path)
        arrays[p.key] = p.image
        arrays[f"{p.key}_range"] = np.array([p.lo, p.hi])
    np.savez(out / f"{prefix}panels.npz", **arrays)
    return paths


def load_panels(path: str | Path) -> list[Panel]:
    with np.load(path) as z:
        keys = [k for k in z.files if not k.endswith("_range")]
        out = []
        for k in keys:
            lv, band = k.split("_")
            lo, hi = z[f"{k}_range"]
            out.append(Panel(int(lv[1:]), band, z[k], float(lo), float(hi)))
    return out
