"""Training loop: batches -> forward -> loss -> backward -> Adam, with logging
and atomic checkpoints.

Run directory contents::

    config.json       full TrainConfig (model config nested), enough to re-run
    loss_log.tsv      step, loss, lr (tab separated, full precision)
    ckpt_<step>.ckpt  periodic checkpoints (+ .json architecture file)
    final.ckpt        parameters after the last step
    abort.json        only after a numeric abort: the offending step
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import AdamState, Graph, Tensor, adam_step, audit_finite
from .checkpoint import atomic_write, save_checkpoint
from .data import iterate_batches, list_samples, load_sample, prefetch
from .errors import ConfigError, NumericError
from .hdr import BracketSample, build_input, stack_inputs, total_loss
from .model import ModelConfig, forward, init_params

logger = logging.getLogger(__name__)

PRECISIONS = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch: int = 16
    crop: int = 256
    lr: float = 2e-4
    # explicit (first step, lr) pairs; None means lr, lr/10, lr/100 at 1/3 and 2/3
    lr_schedule: tuple[tuple[int, float], ...] | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    init_seed: int | None = None
    shuffle_seed: int | None = None
    augment_seed: int | None = None
    precision: str = "float64"
    checkpoint_every: int = 0
    log_every: int = 50
    prefetch: int = 2
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1:
            raise ConfigError(f"steps must be >= 0 and batch >= 1, got {self.steps}, {self.batch}")
        if self.crop < 8 or self.crop % 8:
            raise ConfigError(f"crop must be a positive multiple of 8, got {self.crop}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}")
        sched = self.schedule()
        if any(b[0] <= a[0] for a, b in zip(sched, sched[1:])):
            raise ConfigError("lr schedule thresholds must be strictly increasing")
        if any(lr <= 0 for _, lr in sched):
            raise ConfigError("learning rates must be positive")

    def seeds(self) -> tuple[int, int, int]:
        """(init, shuffle, augment), each defaulting to an offset of ``seed``."""
        pick = lambda v, k: self.seed + k if v is None else v
        return pick(self.init_seed, 0), pick(self.shuffle_seed, 1), pick(self.augment_seed, 2)

    def schedule(self) -> list[tuple[int, float]]:
        if self.lr_schedule is not None:
            return [(int(s), float(v)) for s, v in self.lr_schedule]
        out = [(0, self.lr)]
        for frac, div in ((1, 10.0), (2, 100.0)):
            at = frac * self.steps // 3
            if at > out[-1][0]:
                out.append((at, self.lr / div))
        return out

    def lr_at(self, step: int) -> float:
        lr = self.schedule()[0][1]
        for start, value in self.schedule():
            if step >= start:
                lr = value
        return lr

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        if self.lr_schedule is not None:
            d["lr_schedule"] = [list(p) for p in self.lr_schedule]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        if "model" in d and not isinstance(d["model"], ModelConfig):
            d["model"] = ModelConfig.from_dict(d["model"])
        if d.get("lr_schedule") is not None:
            d["lr_schedule"] = tuple((int(s), float(v)) for s, v in d["lr_schedule"])
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    losses: list[float]
    out_dir: Path | None
    seconds: float


def batch_tensors(batch: Sequence[BracketSample], cfg: ModelConfig, dtype) -> tuple[list[Tensor], Tensor]:
    inputs = stack_inputs([build_input(s, cfg.gamma, dtype) for s in batch])
    gt = Tensor(np.concatenate([s.gt_hdr for s in batch], axis=0).astype(dtype))
    return inputs, gt


def train_step(
    params: dict[str, np.ndarray], state: AdamState, batch: Sequence[BracketSample], cfg: TrainConfig, step: int
) -> tuple[dict[str, np.ndarray], AdamState, float]:
    dtype = PRECISIONS[cfg.precision]
    inputs, gt = batch_tensors(batch, cfg.model, dtype)
    with Graph() as g:
        P = {k: g.param(k, v) for k, v in params.items()}
        loss = total_loss(forward(inputs, P, cfg.model), gt, cfg.model.loss_weight, cfg.model.mu)
    grads = g.backward(loss)
    value = loss.item()
    audit_finite({"loss": np.array(value)}, step)
    audit_finite(grads, step)
    new_params, state = adam_step(params, grads, state, cfg.lr_at(step), cfg.beta1, cfg.beta2, cfg.eps)
    audit_finite(new_params, step)
    return new_params, state, value


def _write_log(path: Path, rows: list[tuple[int, float, float]]) -> None:
    text = "step\tloss\tlr\n" + "".join(f"{s}\t{l!r}\t{r!r}\n" for s, l, r in rows)
    atomic_write(path, text.encode("utf-8"))


def read_loss_log(path: str | Path) -> list[tuple[int, float, float]]:
    rows = []
    for line in Path(path).read_text().splitlines()[1:]:
        s, l, r = line.split("\t")
        rows.append((int(s), float(l), float(r)))
    return rows


def train(
    samples: Sequence[BracketSample],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Optimize a freshly initialized model on ``samples``.

    With ``out_dir`` the run writes its config snapshot, loss log and
    checkpoints there. A non-finite loss, gradient or parameter raises
    NumericError after ``abort.json`` records the step.
    """
    if not samples:
        raise ConfigError("no training samples")
    if any(s.gt_hdr is None for s in samples):
        raise ConfigError("every training sample needs ground truth")
    dtype = PRECISIONS[cfg.precision]
    init_seed, shuffle_seed, augment_seed = cfg.seeds()
    params = init_params(cfg.model, init_seed, dtype)
    state = AdamState.zeros_like(params)
    out = Path(out_dir) if out_dir is not None else None
    rows: list[tuple[int, float, float]] = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        atomic_write(out / "config.json", cfg.dumps().encode("utf-8"))
        save_checkpoint(out / "ckpt_000000.ckpt", params, cfg.model)
        _write_log(out / "loss_log.tsv", rows)

    t0 = time.perf_counter()
    batches = prefetch(iterate_batches(samples, cfg.batch, cfg.steps, cfg.crop, shuffle_seed, augment_seed), cfg.prefetch)
    try:
        for step, batch in enumerate(batches):
            params, state, value = train_step(params, state, batch, cfg, step)
            rows.append((step, value, cfg.lr_at(step)))
            if progress is not None:
                progress(step, value)
            if cfg.log_every and step % cfg.log_every == 0:
                logger.info("step %d loss %.6f lr %.2e", step, value, cfg.lr_at(step))
            if out is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"ckpt_{step + 1:06d}.ckpt", params, cfg.model)
                _write_log(out / "loss_log.tsv", rows)
    except NumericError as exc:
        if out is not None:
            _write_log(out / "loss_log.tsv", rows)
            atomic_write(out / "abort.json", json.dumps({"step": exc.step, "error": str(exc)}).encode("utf-8"))
        raise
    if out is not None:
        _write_log(out / "loss_log.tsv", rows)
        if cfg.steps > 0:
            save_checkpoint(out / "final.ckpt", params, cfg.model)
    return TrainResult(params, [r[1] for r in rows], out, time.perf_counter() - t0)


def load_dataset(root: str | Path) -> list[BracketSample]:
    return [load_sample(d) for d in list_samples(root)]
