"""Scripted experiment runs: the ablation grid and the static-merge baseline.

Every variant is trained on the same training set with the same seeds and
scored on the same held-out set. Results land in::

    <out>/<variant>/            training run (see train.py) + report.json/.txt
    <out>/triangle/             baseline report
    <out>/summary.json          {variant: {"mean": {...}, "status": ...}}
    <out>/summary.txt           table of mean PSNR-mu / PSNR-L / SSIM-mu / SSIM-L
"""

from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path
from typing import Mapping, Sequence

from .checkpoint import atomic_write, params_digest
from .data import default_scene_spec, render_bracket
from .errors import NumericError
from .hdr import BracketSample, triangle_merge
from .metrics import METRIC_KEYS, EvalReport, evaluate_samples, sha256_text
from .model import ModelConfig, predict
from .train import TrainConfig, train

logger = logging.getLogger(__name__)

ABLATIONS: dict[str, dict] = {
    "full": {},
    "no-attention": {"attention": False},
    "wavelet-db2": {"wavelet": "db2"},
    "wavelet-db3": {"wavelet": "db3"},
    "wavelet-sym2": {"wavelet": "sym2"},
    "avg-hf-fusion": {"avg_hf_fusion": True},
    "no-sobel": {"sobel_loss": False},
    "forward-all-bands": {"forward_all_bands": True},
}


TEST_SEED_OFFSET = 10_000


def synthetic_split(
    train_count: int, test_count: int, size: int = 64, seed: int = 0, max_motion: int = 6
) -> tuple[list[BracketSample], list[BracketSample]]:
    """In-memory train/test brackets drawn from disjoint scene seeds."""
    def make(i, tag):
        return render_bracket(default_scene_spec(i, size, size, max_motion=max_motion), name=f"{tag}{i:05d}")

    base = seed * 100_003
    train_set = [make(base + i, "train") for i in range(train_count)]
    test_set = [make(base + TEST_SEED_OFFSET + i, "test") for i in range(test_count)]
    return train_set, test_set


def variant_config(base: TrainConfig, overrides: Mapping) -> TrainConfig:
    return dataclasses.replace(base, model=dataclasses.replace(base.model, **overrides))


def baseline_report(test: Sequence[BracketSample], gamma: float = 2.2, mu: float = 5000.0) -> EvalReport:
    return evaluate_samples(test, lambda s: triangle_merge(s, gamma), mu, sha256_text("triangle"), "")


def run_variant(name: str, cfg: TrainConfig, train_set, test_set, out_root: Path | None) -> dict:
    out = None if out_root is None else out_root / name
    try:
        result = train(train_set, cfg, out)
    except NumericError as exc:
        logger.error("%s aborted at step %s", name, exc.step)
        return {"status": "numeric-abort", "step": exc.step, "mean": None}
    report = evaluate_samples(
        test_set, lambda s: predict(s, result.params, cfg.model), cfg.model.mu,
        sha256_text(cfg.model.dumps()), params_digest(result.params),
    )
    if out is not None:
        report.write(out)
    return {
        "status": "ok",
        "mean": report.mean,
        "final_loss": result.losses[-1] if result.losses else None,
        "seconds": result.seconds,
    }


def run_grid(
    train_set: Sequence[BracketSample],
    test_set: Sequence[BracketSample],
    base: TrainConfig,
    out_root: str | Path | None = None,
    variants: Sequence[str] | None = None,
) -> dict[str, dict]:
    names = list(ABLATIONS) if variants is None else list(variants)
    root = None if out_root is None else Path(out_root)
    summary: dict[str, dict] = {}
    base_rep = baseline_report(test_set, base.model.gamma, base.model.mu)
    summary["triangle"] = {"status": "ok", "mean": base_rep.mean}
    if root is not None:
        base_rep.write(root / "triangle")
    for name in names:
        logger.info("variant %s", name)
        summary[name] = run_variant(name, variant_config(base, ABLATIONS[name]), train_set, test_set, root)
    if root is not None:
        atomic_write(root / "summary.json", json.dumps(summary, indent=2).encode())
        atomic_write(root / "summary.txt", summary_table(summary).encode())
    return summary


def summary_table(summary: Mapping[str, dict]) -> str:
    head = f"{'variant':<20}" + "".join(f"{k:>10}" for k in METRIC_KEYS) + "  status"
    lines = [head, "-" * len(head)]
    for name, row in summary.items():
        if row.get("mean"):
            vals = "".join(f"{row['mean'][k]:>10.4f}" for k in METRIC_KEYS)
        else:
            vals = "".join(f"{'-':>10}" for _ in METRIC_KEYS)
        lines.append(f"{name:<20}{vals}  {row['status']}")
    return "\n".join(lines) + "\n"
