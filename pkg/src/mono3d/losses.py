"""Training losses as plain numpy value/gradient functions.

Every loss returns ``(value, grad)`` (or a tuple of grads), so gradients can
be checked against finite differences without an autodiff framework.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .targets import PredictionMaps, TargetMaps, net_to_depth

PROB_CLAMP = 1e-6
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class FocalConfig:
    beta: float = 4.0
    gamma: float = 2.0

    def __post_init__(self):
        if not (self.beta > 0 and self.gamma > 0):
            raise ValueError("focal beta and gamma must be positive")


def clamp_prob(h):
    return np.clip(h, PROB_CLAMP, 1.0 - PROB_CLAMP)


def focal_loss(pred, target, cfg: FocalConfig = FocalConfig(), also_grad: bool = True):
    """Penalty-reduced pixel-wise focal loss, normalised by the number of peaks.

    ``pred`` must already lie in (0, 1); pixels where ``target == 1`` exactly
    are the positives.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    pos = target == 1.0
    n = int(pos.sum())
    if n == 0:
        raise ValueError("focal loss needs at least one ground-truth peak")
    b, g = cfg.beta, cfg.gamma
    one_m = 1.0 - pred
    neg_w = (1.0 - target) ** b
    log_p, log_1mp = np.log(pred), np.log(one_m)
    per = np.where(pos, one_m**g * log_p, neg_w * pred**g * log_1mp)
    value = -per.sum() / n
    if not also_grad:
        return value, None
    d_pos = -g * one_m ** (g - 1) * log_p + one_m**g / pred
    d_neg = neg_w * (g * pred ** (g - 1) * log_1mp - pred**g / one_m)
    grad = -np.where(pos, d_pos, d_neg) / n
    return value, grad


def laplacian_depth_loss(z, sigma, z_target):
    """Mean Laplacian NLL over anchors; returns (value, dL/dz, dL/dsigma)."""
    z = np.asarray(z, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    z_target = np.asarray(z_target, dtype=np.float64)
    if z.size == 0:
        raise ValueError("depth loss needs at least one anchor")
    if np.any(sigma <= 0):
        raise ValueError("depth uncertainty sigma must be positive")
    r = z - z_target
    n = z.size
    value = np.sum(SQRT2 / sigma * np.abs(r) + np.log(sigma)) / n
    dz = SQRT2 / sigma * np.sign(r) / n
    dsigma = (1.0 / sigma - SQRT2 * np.abs(r) / sigma**2) / n
    return value, dz, dsigma


def dim_aware_lambda(dims, dims_target):
    """Per-object compensation weight: standard L1 over relative L1 (1 when both are 0)."""
    diff = np.abs(dims - dims_target)
    std = diff.sum(axis=-1)
    raw = (diff / dims).sum(axis=-1)
    return np.where(raw > 0, std / np.where(raw > 0, raw, 1.0), 1.0)


def dim_aware_l1(dims, dims_target, lam=None):
    """Dimension-aware L1 over ``(n, 3)`` dims; value equals the standard L1.

    ``lam`` fixes the per-object compensation weights (no gradient flows
    through them); by default they are computed from the inputs.
    """
    dims = np.atleast_2d(np.asarray(dims, dtype=np.float64))
    dims_target = np.atleast_2d(np.asarray(dims_target, dtype=np.float64))
    if np.any(dims <= 0):
        raise ValueError("predicted dimensions must be positive")
    if lam is None:
        lam = dim_aware_lambda(dims, dims_target)
    n = dims.shape[0]
    r = dims - dims_target
    raw = (np.abs(r) / dims).sum(axis=-1)
    value = float(np.sum(lam * raw) / n)
    grad = lam[:, None] * np.sign(r) * dims_target / dims**2 / n
    return value, grad


def masked_l1(pred, target, mask):
    """Sum of |pred - target| over masked pixels (all channels) / masked count.

    ``pred``/``target`` are ``(C, h, w)``; ``mask`` broadcasts to ``(h, w)``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool).reshape(pred.shape[-2:])
    count = int(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(pred)
    r = (pred - target) * mask
    return float(np.abs(r).sum() / count), np.sign(r) / count


def angle_bin_ce(logits, target_bin):
    """Softmax cross-entropy over ``(n, b)`` logits, mean over anchors."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    target_bin = np.atleast_1d(np.asarray(target_bin))
    n, b = logits.shape
    if b < 2:
        raise ValueError("need at least two bins")
    if np.any((target_bin < 0) | (target_bin >= b)):
        raise ValueError(f"target bin out of range [0, {b})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(n)
    value = float(-log_p[rows, target_bin].sum() / n)
    grad = np.exp(log_p)
    grad[rows, target_bin] -= 1.0
    return value, grad / n


TERMS = (
    "focal_center", "focal_keypoint", "depth", "dims", "angle_bin", "angle_res",
    "offset_c", "offset_k", "size2d", "residual_b", "residual_k",
)


def default_weights() -> dict[str, float]:
    w = {t: 1.0 for t in TERMS}
    w["size2d"] = 0.1
    return w


@dataclass
class LossBundle:
    terms: dict[str, float]
    weights: dict[str, float] = field(default_factory=default_weights)
    total: float = 0.0


def total_loss(terms: dict[str, float], weights: dict[str, float] | None = None) -> LossBundle:
    w = default_weights()
    if weights:
        unknown = set(weights) - set(TERMS)
        if unknown:
            raise ValueError(f"unknown loss terms: {sorted(unknown)}")
        w.update(weights)
    full = {t: float(terms.get(t, 0.0)) for t in TERMS}
    total = sum(w[t] * full[t] for t in TERMS)
    return LossBundle(full, w, total)


def frame_losses(pred: PredictionMaps, target: TargetMaps, *, num_bins: int = 12,
                 depth_eps: float = 1e-4, focal: FocalConfig = FocalConfig(),
                 weights: dict[str, float] | None = None) -> LossBundle:
    """Every loss term for one frame, evaluated at the target anchors."""
    terms: dict[str, float] = {}
    mc = target.mask_center[0]
    mk = target.mask_keypoint[0]
    ys, xs = np.nonzero(mc)

    if (target.center_heatmap == 1.0).any():
        terms["focal_center"] = focal_loss(clamp_prob(pred.center_heatmap), target.center_heatmap, focal, False)[0]
    if pred.keypoint_heatmap is not None and (target.keypoint_heatmap == 1.0).any():
        terms["focal_keypoint"] = focal_loss(clamp_prob(pred.keypoint_heatmap), target.keypoint_heatmap, focal, False)[0]

    if ys.size:
        z = net_to_depth(pred.depth[0, ys, xs], depth_eps)
        z_t = net_to_depth(target.depth[0, ys, xs], depth_eps)
        terms["depth"] = laplacian_depth_loss(z, np.exp(pred.depth[1, ys, xs]), z_t)[0]
        terms["dims"] = dim_aware_l1(pred.dims3d[:, ys, xs].T, target.dims3d[:, ys, xs].T)[0]
        bins = target.angle_bin[0, ys, xs]
        terms["angle_bin"] = angle_bin_ce(pred.angle[:num_bins, ys, xs].T, bins)[0]
        res_pred = pred.angle[num_bins + bins, ys, xs]
        terms["angle_res"] = float(np.abs(res_pred - target.angle_res[0, ys, xs]).mean())

    terms["offset_c"] = masked_l1(pred.center_offset, target.center_offset, mc)[0]
    terms["size2d"] = masked_l1(pred.size2d, target.size2d, mc)[0]
    if pred.corner_offsets is not None:
        terms["offset_k"] = masked_l1(pred.corner_offsets, target.corner_offsets, mc)[0]
    if pred.residual_b is not None:
        terms["residual_b"] = masked_l1(pred.residual_b, target.residual_b, mc)[0]
    if pred.residual_k is not None:
        terms["residual_k"] = masked_l1(pred.residual_k, target.residual_k, mk)[0]
    return total_loss(terms, weights)
