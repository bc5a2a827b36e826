"""Central finite-difference checks for graph-built scalar functions."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .autodiff import Graph, Tensor


def analytic_grad(fn: Callable[[dict[str, Tensor]], Tensor], inputs: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    with Graph() as g:
        ts = {k: g.param(k, v) for k, v in inputs.items()}
        loss = fn(ts)
    return g.backward(loss)


def numeric_grad(
    fn: Callable[[dict[str, Tensor]], Tensor],
    inputs: Mapping[str, np.ndarray],
    eps: float = 1e-3,
    entries: Mapping[str, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Central differences; ``entries`` optionally restricts which flat indices
    are probed (others are left as NaN)."""
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}

    def value(arrs):
        return fn({k: Tensor(v) for k, v in arrs.items()}).item()

    out = {}
    for name, arr in base.items():
        grad = np.full(arr.size, np.nan)
        idx = range(arr.size) if entries is None else entries[name]
        for i in idx:
            flat = arr.reshape(-1)
            old = flat[i]
            flat[i] = old + eps
            up = value(base)
            flat[i] = old - eps
            down = value(base)
            flat[i] = old
            grad[i] = (up - down) / (2 * eps)
        out[name] = grad.reshape(arr.shape)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), ignoring NaN entries of ``b``."""
    mask = ~np.isnan(b)
    a, b = a[mask], b[mask]
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def check(
    fn: Callable[[dict[str, Tensor]], Tensor],
    inputs: Mapping[str, np.ndarray],
    eps: float = 1e-3,
    entries: Mapping[str, np.ndarray] | None = None,
) -> float:
    """Worst relative error over all inputs."""
    an = analytic_grad(fn, inputs)
    nu = numeric_grad(fn, inputs, eps, entries)
    return max(relative_error(an[k], nu[k]) for k in inputs)


def model_gradient_error(cfg, seed: int = 0, size: int = 16, per_param: int = 2, eps: float = 1e-3) -> float:
    """End-to-end check of d(total_loss)/d(weights) for a model config.

    Finite differences only make sense where the loss is smooth, so the
    probe point is chosen away from its non-differentiable set: the output
    layer is scaled so predictions sit near 1 (clear of the clamp and of the
    steep part of the tone curve) and the target is the tone-mapped
    prediction plus a positive ramp, which fixes the sign of every L1 and
    Sobel term. Returns the norm-wise relative error over ``per_param``
    random entries of every parameter.
    """
    from .hdr import BracketSample, build_input, exposure_times, mu_law_array, total_loss
    from .model import as_constants, forward, init_params, init_std

    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed)
    w = params["out.weight"]
    params["out.weight"] = rng.standard_normal(w.shape) * init_std("out.weight", w.shape) * 0.1
    params["out.bias"] = params["out.bias"] + 1.0
    ldr = tuple(rng.uniform(0, 1, (1, cfg.channels, size, size)) for _ in range(3))
    sample = BracketSample(ldr, exposure_times((-2, 0, 2)))
    inputs = build_input(sample, cfg.gamma)

    pred0 = np.maximum(forward(inputs, as_constants(params), cfg).data, 0.0)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    tau = mu_law_array(pred0, cfg.mu) + 0.1 + 0.02 * (yy + xx)
    gt = Tensor(np.expm1(tau * np.log1p(cfg.mu)) / cfg.mu)

    def loss(P):
        return total_loss(forward(inputs, P, cfg), gt, cfg.loss_weight, cfg.mu)

    grads = analytic_grad(loss, params)
    an, nu = [], []
    for name, arr in params.items():
        for i in rng.choice(arr.size, min(per_param, arr.size), replace=False):
            vals = []
            for sign in (1, -1):
                probe = dict(params)
                probe[name] = arr.copy()
                probe[name].reshape(-1)[i] += sign * eps
                vals.append(loss(as_constants(probe)).item())
            an.append(grads[name].reshape(-1)[i])
            nu.append((vals[0] - vals[1]) / (2 * eps))
    return relative_error(np.array(an), np.array(nu))
