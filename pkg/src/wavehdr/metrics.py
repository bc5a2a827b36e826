"""PSNR and SSIM in the linear and mu-law domains, plus evaluation reports.

Report files
------------
``report.json``  machine-readable: ``{"samples": [{name, psnr_mu, psnr_l,
ssim_mu, ssim_l}, ...], "mean": {...}, "config_digest", "checkpoint_digest",
"skipped"}``; floats are written with full precision.
``report.txt``   the same numbers as a fixed-width table.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import DataError, GeometryError, ShapeError
from .hdr import BracketSample, mu_law_array

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
METRIC_KEYS = ("psnr_mu", "psnr_l", "ssim_mu", "ssim_l")


def _arr(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def mse_to_psnr(mse: float, peak: float = 1.0) -> float:
    if mse < 0:
        raise ValueError("mse must be non-negative")
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def psnr(pred, gt, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE), capped at 99 dB."""
    p, g = _arr(pred), _arr(gt)
    if p.shape != g.shape:
        raise ShapeError(f"psnr: shapes differ {p.shape} vs {g.shape}")
    if not peak > 0:
        raise ValueError("peak must be positive")
    return mse_to_psnr(float(np.mean((p - g) ** 2)), peak)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    # separable correlation over the last two axes, valid region only
    k = win.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2) @ win
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-1) @ win


def ssim_map(pred, gt, dynamic_range: float = 1.0) -> np.ndarray:
    x, y = _arr(pred), _arr(gt)
    if x.shape != y.shape:
        raise ShapeError(f"ssim: shapes differ {x.shape} vs {y.shape}")
    if x.shape[-1] < SSIM_WINDOW or x.shape[-2] < SSIM_WINDOW:
        raise GeometryError(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {x.shape[-2:]}")
    win = gaussian_window()
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    mx, my = _filter_valid(x, win), _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    num = (2 * (mx * my) + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(pred, gt, dynamic_range: float = 1.0) -> float:
    """Gaussian-window SSIM averaged over channels and valid positions."""
    return float(np.mean(ssim_map(pred, gt, dynamic_range)))


def sample_metrics(pred: np.ndarray, gt: np.ndarray, mu: float = 5000.0) -> dict[str, float]:
    pred = np.maximum(_arr(pred), 0.0)
    gt = _arr(gt)
    tp, tg = mu_law_array(pred, mu), mu_law_array(gt, mu)
    return {
        "psnr_mu": psnr(tp, tg),
        "psnr_l": psnr(pred, gt),
        "ssim_mu": ssim(tp, tg),
        "ssim_l": ssim(pred, gt),
    }


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class EvalReport:
    samples: list[dict] = field(default_factory=list)
    config_digest: str = ""
    checkpoint_digest: str = ""
    skipped: int = 0

    @property
    def mean(self) -> dict[str, float]:
        if not self.samples:
            return {k: float("nan") for k in METRIC_KEYS}
        return {k: sum(s[k] for s in self.samples) / len(self.samples) for k in METRIC_KEYS}

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "mean": self.mean,
            "config_digest": self.config_digest,
            "checkpoint_digest": self.checkpoint_digest,
            "skipped": self.skipped,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        try:
            d = json.loads(text)
            return cls(list(d["samples"]), d["config_digest"], d["checkpoint_digest"], int(d["skipped"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"malformed report: {exc}") from exc

    def to_table(self) -> str:
        head = f"{'sample':<16}" + "".join(f"{k:>12}" for k in METRIC_KEYS)
        lines = [head, "-" * len(head)]
        for s in self.samples + [dict(name="mean", **self.mean)]:
            lines.append(f"{s['name']:<16}" + "".join(f"{s[k]:>12.4f}" for k in METRIC_KEYS))
        lines.append(f"skipped: {self.skipped}  config: {self.config_digest[:12]}  checkpoint: {self.checkpoint_digest[:12]}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "report.txt").write_text(self.to_table())

    @classmethod
    def read(cls, out_dir: str | Path) -> "EvalReport":
        return cls.from_json((Path(out_dir) / "report.json").read_text())


def evaluate_samples(
    samples: Sequence[BracketSample],
    predictor: Callable[[BracketSample], np.ndarray],
    mu: float = 5000.0,
    config_digest: str = "",
    checkpoint_digest: str = "",
    workers: int = 1,
) -> EvalReport:
    """Score full frames; samples without ground truth are skipped and counted."""
    usable = [s for s in samples if s.gt_hdr is not None]
    skipped = len(samples) - len(usable)
    if skipped:
        logger.warning("skipping %d sample(s) without ground truth", skipped)

    def one(s):
        row = sample_metrics(predictor(s), s.gt_hdr, mu)
        return {"name": s.name, **row}

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, usable))
    else:
        rows = [one(s) for s in usable]
    return EvalReport(rows, config_digest, checkpoint_digest, skipped)


def evaluate(params: Mapping[str, np.ndarray], dataset: str | Path, cfg, workers: int = 1) -> EvalReport:
    """Run the model on every sample under ``dataset`` and score it."""
    from .checkpoint import params_digest
    from .data import list_samples, load_sample
    from .model import predict

    samples = [load_sample(d, require_gt=False) for d in list_samples(dataset)]
    return evaluate_samples(
        samples,
        lambda s: predict(s, params, cfg),
        cfg.mu,
        sha256_text(cfg.dumps()),
        params_digest(params),
        workers,
    )
