"""Wavelet-domain HDR fusion network.

Layout, coarse to fine::

    per frame (shared weights):  conv1 -> DWT -> conv2 -> DWT
    merger  (1/4 res):  attention on support LLs -> fuse conv -> DWT
                        -> residual blocks on LL -> IDWT with its own high bands
    FGU x2  (1/4 -> 1/2 -> full):  high bands fused per orientation,
                        low bands attention-merged with the stage below,
                        IDWT, squeeze conv
    head:   + reference conv1 features (global residual) -> output conv

All convolutions are 3x3, stride 1, zero padding 1.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, concat_channels, conv2d, leaky_relu, mul, sigmoid
from .errors import ConfigError, GeometryError, ShapeError
from .hdr import BracketSample, build_input
from .wavelet import WAVELET_KINDS, WaveletBands, dwt2, get_wavelet, idwt2

FRAMES = 3
REF = 1
MULTIPLE = 8  # three DWT levels end to end


@dataclass(frozen=True)
class ModelConfig:
    """Architecture, ablation switches and the loss/radiometry constants
    stored alongside every checkpoint."""

    width: int = 64
    channels: int = 3
    wavelet: str = "haar"
    attention: bool = True
    avg_hf_fusion: bool = False
    forward_all_bands: bool = False
    sobel_loss: bool = True
    res_blocks: int = 9
    slope: float = 0.01
    lam: float = 0.25
    mu: float = 5000.0
    gamma: float = 2.2
    merger_high_bands: str = "merger-dwt"

    def __post_init__(self):
        if self.width < 1 or self.channels < 1:
            raise ConfigError(f"width and channels must be positive, got {self.width}, {self.channels}")
        if self.wavelet not in WAVELET_KINDS:
            raise ConfigError(f"unknown wavelet {self.wavelet!r}; expected one of {WAVELET_KINDS}")
        if self.res_blocks < 0:
            raise ConfigError("res_blocks must be non-negative")
        if self.lam < 0 or self.mu <= 0 or self.gamma <= 0:
            raise ConfigError(f"invalid loss constants lam={self.lam}, mu={self.mu}, gamma={self.gamma}")
        if self.merger_high_bands != "merger-dwt":
            raise ConfigError(f"unsupported merger_high_bands {self.merger_high_bands!r}")

    @property
    def loss_weight(self) -> float:
        return self.lam if self.sobel_loss else 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# parameters


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every learnable array, in a fixed order."""
    w, c = cfg.width, cfg.channels
    stage_in = 4 * w if cfg.forward_all_bands else w
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cout, cin):
        shapes[f"{name}.weight"] = (cout, cin, 3, 3)
        shapes[f"{name}.bias"] = (cout,)

    conv("enc.conv1", w, 2 * c)
    conv("enc.conv2", w, stage_in)
    if cfg.attention:
        for f in ("att1", "att3"):
            conv(f"merge.{f}.conv_a", stage_in, 2 * stage_in)
            conv(f"merge.{f}.conv_b", stage_in, stage_in)
    conv("merge.fuse", w, 3 * stage_in)
    for i in range(cfg.res_blocks):
        conv(f"merge.res{i}.conv_a", w, w)
        conv(f"merge.res{i}.conv_b", w, w)
    for level in (2, 1):
        p = f"fgu{level}"
        if not cfg.avg_hf_fusion:
            for band in ("lh", "hl", "hh"):
                conv(f"{p}.hf.{band}.conv_a", w, 3 * w)
                conv(f"{p}.hf.{band}.conv_b", w, w)
        if cfg.attention:
            for f in ("att1", "att3"):
                conv(f"{p}.{f}.conv_a", w, 2 * w)
                conv(f"{p}.{f}.conv_b", w, w)
        conv(f"{p}.ll_fuse", w, 4 * w)
        conv(f"{p}.squeeze", w, w)
    conv("out", c, w)
    return shapes


def _linear_output(name: str) -> bool:
    # convs not followed by the leaky activation
    return (
        name.startswith("out.")
        or ".conv_b." in name and (".att" in name or ".hf." in name)
    )


def init_std(name: str, shape: tuple[int, ...]) -> float:
    """Fan-in scaled standard deviation used to draw a conv weight."""
    fan_in = shape[1] * shape[2] * shape[3]
    gain = 1.0 if _linear_output(name) else math.sqrt(2.0)
    return gain / math.sqrt(fan_in)


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> dict[str, np.ndarray]:
    """Deterministic initialization.

    Residual blocks start as identities. The output conv also starts at zero:
    its inputs are almost all non-negative, so a random filter with a
    negative sum would emit a channel that is negative everywhere, which the
    clamp before the tone curve leaves without gradient for good.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".bias") or (".res" in name and ".conv_b." in name) or name == "out.weight":
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = (rng.standard_normal(shape) * init_std(name, shape)).astype(dtype)
    return params


def validate_params(params: Mapping[str, np.ndarray], cfg: ModelConfig) -> None:
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ConfigError(f"parameters do not match config: missing={missing[:5]} extra={extra[:5]}")
    for k, shape in expected.items():
        if tuple(params[k].shape) != shape:
            raise ConfigError(f"parameter {k!r} has shape {params[k].shape}, config expects {shape}")


def as_constants(params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# building blocks


def _conv(x: Tensor, P: Mapping[str, Tensor], name: str, slope: float | None) -> Tensor:
    y = conv2d(x, P[f"{name}.weight"], P[f"{name}.bias"], stride=1, zero_pad=1)
    return y if slope is None else leaky_relu(y, slope)


@dataclass
class EncoderOutput:
    level1_bands: list[WaveletBands]
    level2_bands: list[WaveletBands]
    deepest: list[Tensor]
    ref_features: Tensor


def _check_geometry(x: Tensor) -> None:
    h, w = x.shape[2], x.shape[3]
    if h % MULTIPLE or w % MULTIPLE or h == 0 or w == 0:
        raise GeometryError(f"spatial extents must be non-zero multiples of {MULTIPLE}, got {h}x{w}")


def _split_bands(bands: WaveletBands, pieces: int) -> list[WaveletBands]:
    split = [ad.split_batch(t, pieces) for t in bands.as_tuple()]
    return [WaveletBands(*(s[i] for s in split)) for i in range(pieces)]


def _stage_input(bands: WaveletBands, cfg: ModelConfig) -> Tensor:
    if cfg.forward_all_bands:
        return concat_channels(list(bands.as_tuple()))
    return bands.ll


def encode(inputs: list[Tensor], P: Mapping[str, Tensor], cfg: ModelConfig) -> EncoderOutput:
    """Run the shared per-frame encoder; the frames are batched together."""
    if len(inputs) != FRAMES:
        raise ShapeError(f"expected {FRAMES} input frames, got {len(inputs)}")
    for x in inputs:
        if x.shape != inputs[0].shape:
            raise ShapeError(f"input frames differ in shape: {x.shape} vs {inputs[0].shape}")
        _check_geometry(x)
    if inputs[0].shape[1] != 2 * cfg.channels:
        raise ShapeError(f"inputs need {2 * cfg.channels} channels, got {inputs[0].shape[1]}")
    w = get_wavelet(cfg.wavelet)
    x = ad.concat_batch(inputs)
    f1 = _conv(x, P, "enc.conv1", cfg.slope)
    b1 = dwt2(f1, w)
    f2 = _conv(_stage_input(b1, cfg), P, "enc.conv2", cfg.slope)
    b2 = dwt2(f2, w)
    level2 = _split_bands(b2, FRAMES)
    if cfg.forward_all_bands:
        deepest = ad.split_batch(_stage_input(b2, cfg), FRAMES)
    else:
        deepest = [b.ll for b in level2]
    ref_features = ad.split_batch(f1, FRAMES)[REF]
    return EncoderOutput(_split_bands(b1, FRAMES), level2, deepest, ref_features)


def attention_mask(ref: Tensor, sup: Tensor, P: Mapping[str, Tensor], prefix: str, slope: float = 0.01) -> Tensor:
    """Per-pixel weights in (0, 1) for a support feature map."""
    if ref.shape != sup.shape:
        raise ShapeError(f"attention: reference {ref.shape} and support {sup.shape} differ")
    h = _conv(concat_channels([ref, sup]), P, f"{prefix}.conv_a", slope)
    return sigmoid(_conv(h, P, f"{prefix}.conv_b", None))


def _masked_triplet(feats: list[Tensor], P, prefix: str, cfg: ModelConfig) -> list[Tensor]:
    if not cfg.attention:
        return list(feats)
    ref = feats[REF]
    m1 = attention_mask(ref, feats[0], P, f"{prefix}.att1", cfg.slope)
    m3 = attention_mask(ref, feats[2], P, f"{prefix}.att3", cfg.slope)
    return [mul(m1, feats[0]), ref, mul(m3, feats[2])]


def merge(ll: list[Tensor], P: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Attention-weighted fusion of the deepest low-frequency features."""
    if len(ll) != FRAMES or len({t.shape for t in ll}) != 1:
        raise ShapeError(f"merge needs three equal-shape inputs, got {[t.shape for t in ll]}")
    w = get_wavelet(cfg.wavelet)
    fused = _conv(concat_channels(_masked_triplet(ll, P, "merge", cfg)), P, "merge.fuse", cfg.slope)
    b3 = dwt2(fused, w)
    x = b3.ll
    for i in range(cfg.res_blocks):
        h = _conv(x, P, f"merge.res{i}.conv_a", cfg.slope)
        x = ad.add(x, _conv(h, P, f"merge.res{i}.conv_b", None))
    return idwt2(WaveletBands(x, b3.lh, b3.hl, b3.hh), w)


def fuse_high_band(group: list[Tensor], P: Mapping[str, Tensor], prefix: str, cfg: ModelConfig) -> Tensor:
    if cfg.avg_hf_fusion:
        return ad.scale(ad.add(ad.add(group[0], group[1]), group[2]), 1.0 / 3.0)
    h = _conv(concat_channels(group), P, f"{prefix}.conv_a", cfg.slope)
    # sub-band coefficients are signed, so the second conv stays linear
    return _conv(h, P, f"{prefix}.conv_b", None)


def fgu(
    level_bands: list[WaveletBands], fused_below: Tensor, P: Mapping[str, Tensor], cfg: ModelConfig, prefix: str
) -> Tensor:
    """Frequency-guided upsampling: fuse per-frame sub-bands, then IDWT."""
    if len(level_bands) != FRAMES:
        raise ShapeError(f"fgu needs bands from {FRAMES} frames")
    if fused_below.shape != level_bands[0].shape:
        raise ShapeError(f"fgu: fused map {fused_below.shape} != band shape {level_bands[0].shape}")
    w = get_wavelet(cfg.wavelet)
    high = [
        fuse_high_band([getattr(b, band) for b in level_bands], P, f"{prefix}.hf.{band}", cfg)
        for band in ("lh", "hl", "hh")
    ]
    lows = _masked_triplet([b.ll for b in level_bands], P, prefix, cfg)
    low = _conv(concat_channels(lows + [fused_below]), P, f"{prefix}.ll_fuse", cfg.slope)
    up = idwt2(WaveletBands(low, *high), w)
    return _conv(up, P, f"{prefix}.squeeze", cfg.slope)


def forward(inputs: list[Tensor], P: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Predicted linear HDR (unclamped), same spatial size as the inputs."""
    enc = encode(inputs, P, cfg)
    f = merge(enc.deepest, P, cfg)
    f = fgu(enc.level2_bands, f, P, cfg, "fgu2")
    f = fgu(enc.level1_bands, f, P, cfg, "fgu1")
    f = ad.add(f, enc.ref_features)
    return _conv(f, P, "out", None)


# ---------------------------------------------------------------------------
# inference helpers


def pad_to_multiple(x: np.ndarray, multiple: int = MULTIPLE) -> tuple[np.ndarray, tuple[int, int]]:
    """Edge-pad the bottom/right of an NCHW array up to a multiple."""
    h, w = x.shape[2], x.shape[3]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
    return x, (h, w)


def padded_sample(sample: BracketSample) -> BracketSample:
    ldr = tuple(pad_to_multiple(f)[0] for f in sample.ldr)
    gt = None if sample.gt_hdr is None else pad_to_multiple(sample.gt_hdr)[0]
    return BracketSample(ldr, sample.exposure_time, gt, sample.name)


def predict(sample: BracketSample, params: Mapping[str, np.ndarray], cfg: ModelConfig, dtype=np.float64) -> np.ndarray:
    """Full-frame inference: pad, run, crop back, clamp at zero."""
    h, w = sample.shape[2], sample.shape[3]
    inputs = build_input(padded_sample(sample), cfg.gamma, dtype=dtype)
    consts = {k: Tensor(np.asarray(v, dtype=dtype)) for k, v in params.items()}
    out = forward(inputs, consts, cfg).data[:, :, :h, :w]
    return np.maximum(out, 0.0).astype(np.float64)
