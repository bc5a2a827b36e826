"""Synthetic exposure brackets, dataset directories and joint augmentation.

Dataset layout (one directory per sample under a root)::

    <root>/<sample>/ldr_1.png    16-bit PNG, short exposure
    <root>/<sample>/ldr_2.png    16-bit PNG, reference exposure
    <root>/<sample>/ldr_3.png    16-bit PNG, long exposure
    <root>/<sample>/exposure.txt three EV biases, one per line, increasing
    <root>/<sample>/gt.fhdr      linear ground truth (see write_hdr)
"""

from __future__ import annotations

import logging
import math
import queue
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import cv2
import numpy as np

from .errors import ConfigError, DataError, GeometryError
from .hdr import DEFAULT_GAMMA, BracketSample, exposure_times

logger = logging.getLogger(__name__)

LDR_NAMES = ("ldr_1.png", "ldr_2.png", "ldr_3.png")
EXPOSURE_NAME = "exposure.txt"
GT_NAME = "gt.fhdr"

HDR_MAGIC = b"FHDR"
HDR_VERSION = 1


# ---------------------------------------------------------------------------
# scenes


@dataclass
class Shape:
    """An axis-aligned rectangle or a disc with an optional stripe texture.

    ``motion`` holds one integer (dy, dx) displacement per frame; the
    reference (middle) entry must be (0, 0).
    """

    kind: str
    center: tuple[int, int]
    size: tuple[int, int]
    radiance: tuple[float, ...]
    motion: tuple[tuple[int, int], tuple[int, int], tuple[int, int]] = ((0, 0), (0, 0), (0, 0))
    stripe_period: float = 0.0
    stripe_angle: float = 0.0
    stripe_depth: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rect", "disc"):
            raise ConfigError(f"unknown shape kind {self.kind!r}")
        if any(r < 0 for r in self.radiance):
            raise ConfigError("shape radiance must be non-negative")
        if tuple(self.motion[1]) != (0, 0):
            raise ConfigError("the reference frame must not be displaced")
        if not 0 <= self.stripe_depth < 1:
            raise ConfigError("stripe depth must lie in [0, 1)")


@dataclass
class SceneSpec:
    seed: int
    height: int
    width: int
    channels: int = 3
    # background radiance: exp(log_level + log_slope . (y, x) / size) per channel
    log_level: tuple[float, ...] = (-2.0, -2.0, -2.0)
    log_slope: tuple[float, float] = (1.5, 1.5)
    texture_depth: float = 0.3
    shapes: list[Shape] = field(default_factory=list)

    def __post_init__(self):
        if self.height < 2 or self.width < 2 or self.channels < 1:
            raise ConfigError(f"degenerate canvas {self.channels}x{self.height}x{self.width}")
        if len(self.log_level) != self.channels:
            raise ConfigError("log_level needs one entry per channel")
        for s in self.shapes:
            if len(s.radiance) != self.channels:
                raise ConfigError("shape radiance needs one entry per channel")


def default_scene_spec(
    seed: int, height: int = 64, width: int = 64, channels: int = 3, max_motion: int = 6, movers: int = 3
) -> SceneSpec:
    """A random scene with a clipped light source, a near-black hole and a few
    textured objects that move between frames."""
    rng = np.random.default_rng(seed)
    size = min(height, width)

    def motion():
        if max_motion == 0:
            return ((0, 0), (0, 0), (0, 0))
        d1 = tuple(int(v) for v in rng.integers(-max_motion, max_motion + 1, 2))
        d3 = tuple(int(v) for v in rng.integers(-max_motion, max_motion + 1, 2))
        return (d1, (0, 0), d3)

    def color(lo, hi):
        base = rng.uniform(lo, hi)
        return tuple(float(base * rng.uniform(0.7, 1.3)) for _ in range(channels))

    def center():
        return (int(rng.integers(0, height)), int(rng.integers(0, width)))

    shapes = []
    for _ in range(movers):
        shapes.append(
            Shape(
                kind=str(rng.choice(["rect", "disc"])),
                center=center(),
                size=tuple(int(v) for v in rng.integers(size // 8, size // 3, 2)),
                radiance=color(0.05, 1.2),
                motion=motion(),
                stripe_period=float(rng.uniform(3.0, 8.0)),
                stripe_angle=float(rng.uniform(0, math.pi)),
                stripe_depth=float(rng.uniform(0.2, 0.6)),
            )
        )
    hole = max(2, size // 12)
    shapes.append(Shape("rect", center(), (hole, hole), tuple([1e-8] * channels)))
    # small enough to stay under the 1% tail used for normalization
    lamp = max(0, int(math.sqrt(0.004 * height * width)) - 1)
    shapes.append(Shape("rect", center(), (lamp, lamp), tuple([100.0] * channels)))
    level = float(rng.uniform(-3.0, -1.5))
    return SceneSpec(
        seed=seed,
        height=height,
        width=width,
        channels=channels,
        log_level=tuple(level + float(rng.uniform(-0.2, 0.2)) for _ in range(channels)),
        log_slope=(float(rng.uniform(-1.2, 1.2)), float(rng.uniform(-1.2, 1.2))),
        texture_depth=float(rng.uniform(0.1, 0.4)),
        shapes=shapes,
    )


def _shape_mask(s: Shape, yy: np.ndarray, xx: np.ndarray, dy: int, dx: int) -> np.ndarray:
    cy, cx = s.center[0] + dy, s.center[1] + dx
    if s.kind == "rect":
        hy, hx = s.size[0] / 2.0, s.size[1] / 2.0
        return (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
    return ((yy - cy) / max(s.size[0], 1)) ** 2 + ((xx - cx) / max(s.size[1], 1)) ** 2 <= 1.0


def synth_scene(spec: SceneSpec, frame: int = 1) -> np.ndarray:
    """Linear radiance (1, C, H, W) of the scene as seen in ``frame``."""
    h, w, c = spec.height, spec.width, spec.channels
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    ramp = spec.log_slope[0] * yy / h + spec.log_slope[1] * xx / w
    # fixed-seed background texture so the scene carries high frequencies
    trng = np.random.default_rng(spec.seed + 7919)
    tex = np.ones((h, w))
    for _ in range(3):
        period = trng.uniform(2.5, 10.0)
        ang = trng.uniform(0, math.pi)
        tex *= 1.0 + spec.texture_depth * np.sin(2 * math.pi * (xx * math.cos(ang) + yy * math.sin(ang)) / period)
    out = np.stack([np.exp(spec.log_level[ch] + ramp) * tex for ch in range(c)])[None]
    for s in spec.shapes:
        dy, dx = s.motion[frame]
        mask = _shape_mask(s, yy, xx, dy, dx)
        if not mask.any():
            continue
        pattern = np.ones((h, w))
        if s.stripe_period > 0 and s.stripe_depth > 0:
            # texture is attached to the shape, so it moves with it
            ly, lx = yy - dy, xx - dx
            phase = (lx * math.cos(s.stripe_angle) + ly * math.sin(s.stripe_angle)) / s.stripe_period
            pattern = 1.0 + s.stripe_depth * np.sign(np.sin(2 * math.pi * phase) + 1e-12)
        for ch in range(c):
            out[0, ch][mask] = (s.radiance[ch] * pattern)[mask]
    return out


def quantize(ldr: np.ndarray, bit_depth: int = 8) -> np.ndarray:
    """Snap [0, 1] values to the LDR grid, expressed exactly as 16-bit codes / 65535."""
    if not 1 <= bit_depth <= 16:
        raise ConfigError(f"bit depth must be in [1, 16], got {bit_depth}")
    levels = (1 << bit_depth) - 1
    code = np.round(np.clip(ldr, 0.0, 1.0) * levels) * (65535 // levels)
    return code / 65535.0


def render_bracket(
    scene: SceneSpec | np.ndarray,
    biases: Sequence[float] = (-2.0, 0.0, 2.0),
    gamma: float = DEFAULT_GAMMA,
    bit_depth: int = 8,
    anchor_percentile: float = 99.0,
    name: str = "",
) -> BracketSample:
    """Expose, gamma-encode, clip and quantize three frames of a scene.

    A SceneSpec supplies per-frame object motion; a bare radiance array is
    treated as static. Radiance is rescaled so the reference exposure puts
    the chosen percentile of the static scene at 1.
    """
    t = exposure_times(biases)
    if isinstance(scene, SceneSpec):
        frames = [synth_scene(scene, i) for i in range(3)]
    else:
        if np.any(scene < 0):
            raise ConfigError("radiance must be non-negative")
        frames = [np.asarray(scene, dtype=np.float64)] * 3
    ref = frames[1]
    anchor = float(np.percentile(ref * t[1], anchor_percentile))
    k = 1.0 / anchor if anchor > 0 else 1.0
    ldr = tuple(quantize(np.clip((f * k * ti) ** (1.0 / gamma), 0.0, 1.0), bit_depth) for f, ti in zip(frames, t))
    gt = (ref * k).astype(np.float32).astype(np.float64)
    sample = BracketSample(ldr, t, gt, name)
    sample.biases = tuple(float(b) for b in biases)
    return sample


def bracket_coverage(sample: BracketSample) -> tuple[bool, bool]:
    """(short exposure has clipped-white pixels, long exposure has black pixels)."""
    return bool(np.any(sample.ldr[0] >= 1.0)), bool(np.any(sample.ldr[2] <= 0.0))


# ---------------------------------------------------------------------------
# files


def write_hdr(path: str | Path, hdr: np.ndarray) -> None:
    """Raw float32 raster.

    Layout, all little-endian: 4-byte magic ``FHDR``; uint32 version (1);
    uint32 channels, height, width; then channels*height*width float32 values
    in channel-major, row-major order.
    """
    arr = np.asarray(hdr)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise DataError(f"can only store one image, got batch of {arr.shape[0]}")
        arr = arr[0]
    c, h, w = arr.shape
    payload = arr.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(HDR_MAGIC + struct.pack("<4I", HDR_VERSION, c, h, w) + payload)


def read_hdr(path: str | Path) -> np.ndarray:
    """Inverse of :func:`write_hdr`; returns a (1, C, H, W) float64 array."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read HDR file {path}: {exc}") from exc
    if len(raw) < 20 or raw[:4] != HDR_MAGIC:
        raise DataError(f"{path}: not an FHDR raster")
    version, c, h, w = struct.unpack("<4I", raw[4:20])
    if version != HDR_VERSION:
        raise DataError(f"{path}: unsupported FHDR version {version}")
    if len(raw) - 20 != 4 * c * h * w:
        raise DataError(f"{path}: payload size does not match header {c}x{h}x{w}")
    return np.frombuffer(raw, dtype="<f4", offset=20).reshape(1, c, h, w).astype(np.float64)


def write_png16(path: str | Path, img: np.ndarray) -> None:
    """Store (1, C, H, W) values in [0, 1] as a 16-bit PNG (C = 1 or 3)."""
    arr = np.asarray(img)[0]
    code = np.round(np.clip(arr, 0, 1) * 65535).astype(np.uint16)
    if code.shape[0] == 1:
        out = code[0]
    elif code.shape[0] == 3:
        out = code[::-1].transpose(1, 2, 0)  # RGB -> BGR for OpenCV
    else:
        raise DataError(f"PNG storage supports 1 or 3 channels, got {code.shape[0]}")
    if not cv2.imwrite(str(path), np.ascontiguousarray(out)):
        raise DataError(f"failed to write {path}")


def read_png16(path: str | Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DataError(f"cannot read image {path}")
    if img.dtype == np.uint8:
        img = img.astype(np.float64) / 255.0
    else:
        img = img.astype(np.float64) / 65535.0
    if img.ndim == 2:
        return img[None, None]
    return img[:, :, ::-1].transpose(2, 0, 1)[None].copy()


def parse_exposure_file(path: str | Path) -> tuple[float, float, float]:
    """Three EV biases, one per line, strictly increasing."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read exposure file {path}: {exc}") from exc
    lines = [ln.strip().replace("−", "-") for ln in text.splitlines() if ln.strip()]
    if len(lines) != 3:
        raise DataError(f"{path}: expected 3 exposure biases, found {len(lines)} lines")
    try:
        biases = tuple(float(ln) for ln in lines)
    except ValueError as exc:
        raise DataError(f"{path}: malformed exposure bias ({exc})") from exc
    if not (biases[0] < biases[1] < biases[2]):
        raise DataError(f"{path}: exposure biases must be strictly increasing, got {biases}")
    return biases


def save_sample(sample: BracketSample, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, frame in zip(LDR_NAMES, sample.ldr):
        write_png16(d / name, frame)
    biases = getattr(sample, "biases", None) or tuple(math.log2(t) for t in sample.exposure_time)
    (d / EXPOSURE_NAME).write_text("".join(f"{b!r}\n" for b in biases))
    if sample.gt_hdr is not None:
        write_hdr(d / GT_NAME, sample.gt_hdr)
    return d


def load_ldr_triplet(paths: Sequence[str | Path], exposure_path: str | Path) -> BracketSample:
    frames = [read_png16(p) for p in paths]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise DataError(f"LDR frames differ in size: {[f.shape for f in frames]}")
    biases = parse_exposure_file(exposure_path)
    sample = BracketSample(tuple(frames), exposure_times(biases))
    sample.biases = biases
    return sample


def load_sample(directory: str | Path, require_gt: bool = True) -> BracketSample:
    d = Path(directory)
    for name in LDR_NAMES + (EXPOSURE_NAME,):
        if not (d / name).is_file():
            raise DataError(f"{d}: missing {name}")
    sample = load_ldr_triplet([d / n for n in LDR_NAMES], d / EXPOSURE_NAME)
    gt_path = d / GT_NAME
    if gt_path.is_file():
        gt = read_hdr(gt_path)
        if gt.shape != sample.shape:
            raise DataError(f"{d}: ground truth {gt.shape} does not match LDR size {sample.shape}")
        biases = sample.biases
        sample = BracketSample(sample.ldr, sample.exposure_time, gt, d.name)
        sample.biases = biases
    elif require_gt:
        raise DataError(f"{d}: missing {GT_NAME}")
    else:
        sample.name = d.name
    return sample


def list_samples(root: str | Path) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / EXPOSURE_NAME).exists())
    if not dirs:
        raise DataError(f"no samples under {root}")
    return dirs


def make_synthetic_dataset(
    root: str | Path,
    count: int,
    seed: int = 0,
    size: int = 64,
    channels: int = 3,
    max_motion: int = 6,
    biases: Sequence[float] = (-2.0, 0.0, 2.0),
    bit_depth: int = 8,
) -> list[Path]:
    root = Path(root)
    out = []
    for i in range(count):
        spec = default_scene_spec(seed * 100003 + i, size, size, channels, max_motion)
        sample = render_bracket(spec, biases, bit_depth=bit_depth, name=f"{i:04d}")
        out.append(save_sample(sample, root / f"{i:04d}"))
    return out


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class Augment:
    top: int
    left: int
    size: int
    flip: bool  # mirror along the width axis
    rot90: int  # counter-clockwise quarter turns


def draw_augment(rng: np.random.Generator, height: int, width: int, crop: int) -> Augment:
    if crop > min(height, width):
        raise GeometryError(f"crop {crop} exceeds image size {height}x{width}")
    if crop <= 0 or crop % 8:
        raise GeometryError(f"crop must be a positive multiple of 8, got {crop}")
    return Augment(
        int(rng.integers(0, height - crop + 1)),
        int(rng.integers(0, width - crop + 1)),
        crop,
        bool(rng.integers(0, 2)),
        int(rng.integers(0, 4)),
    )


def flip_width(img: np.ndarray) -> np.ndarray:
    return img[..., ::-1]


def apply_augment(img: np.ndarray, aug: Augment) -> np.ndarray:
    out = img[..., aug.top:aug.top + aug.size, aug.left:aug.left + aug.size]
    if aug.flip:
        out = flip_width(out)
    return np.ascontiguousarray(np.rot90(out, aug.rot90, axes=(-2, -1)))


def apply_to_sample(sample: BracketSample, aug: Augment) -> BracketSample:
    ldr = tuple(apply_augment(f, aug) for f in sample.ldr)
    gt = None if sample.gt_hdr is None else apply_augment(sample.gt_hdr, aug)
    return BracketSample(ldr, sample.exposure_time, gt, sample.name)


def crop_augment(sample: BracketSample, crop: int, seed) -> BracketSample:
    """One random crop, mirror and quarter-turn shared by all four images."""
    rng = np.random.default_rng(seed)
    return apply_to_sample(sample, draw_augment(rng, sample.shape[2], sample.shape[3], crop))


# ---------------------------------------------------------------------------
# iteration


def batch_plan(n_samples: int, batch: int, steps: int, shuffle_seed: int) -> list[list[int]]:
    """Sample indices per step: successive reshuffled passes over the dataset."""
    rng = np.random.default_rng(shuffle_seed)
    order: list[int] = []
    plan = []
    for _ in range(steps):
        idx = []
        for _ in range(batch):
            if not order:
                order = [int(i) for i in rng.permutation(n_samples)]
            idx.append(order.pop(0))
        plan.append(idx)
    return plan


def iterate_batches(
    samples: Sequence[BracketSample], batch: int, steps: int, crop: int, shuffle_seed: int, augment_seed: int
) -> Iterator[list[BracketSample]]:
    for step, idx in enumerate(batch_plan(len(samples), batch, steps, shuffle_seed)):
        yield [crop_augment(samples[i], crop, (augment_seed, step, slot)) for slot, i in enumerate(idx)]


def prefetch(items: Iterable, depth: int = 2) -> Iterator:
    """Run an iterator on a worker thread; items arrive in the original order."""
    if depth <= 0:
        yield from items
        return
    q: queue.Queue = queue.Queue(maxsize=depth)
    done = object()
    stop = threading.Event()

    def worker():
        try:
            for item in items:
                if stop.is_set():
                    return
                q.put((True, item))
            q.put((True, done))
        except BaseException as exc:  # surfaced on the consumer side
            q.put((False, exc))

    t = threading.Thread(target=worker, daemon=True)
    t.start()
    try:
        while True:
            ok, item = q.get()
            if not ok:
                raise item
            if item is done:
                return
            yield item
    finally:
        stop.set()
