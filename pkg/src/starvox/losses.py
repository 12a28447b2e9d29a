"""Reference implementations of the training losses.

Pure functions over volumes, intended for validating an external trainer
and for regression tests; no gradients, no reduction tricks. The total
loss is binary cross-entropy on the object probability plus a weighted
distance term: probability-weighted mean absolute error on foreground
voxels and an L1 pull toward zero on background voxels. All reductions
are plain means over all voxels, accumulated in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volumes import DistVolume, ScalarVolume

CLAMP_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_d: float = 0.1
    lambda_reg: float = 1e-4

    def __post_init__(self):
        if self.lambda_d < 0 or self.lambda_reg < 0:
            raise ValueError("loss weights must be >= 0")


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what} shape mismatch: {a.shape} vs {b.shape}")


def loss_obj(p: ScalarVolume, p_hat: ScalarVolume) -> float:
    """Binary cross-entropy, mean over voxels; predictions are clamped to
    [eps, 1-eps] before the logarithm."""
    _check_same_shape(p.data, p_hat.data, "probability")
    t = p.data.astype(np.float64)
    q = np.clip(p_hat.data.astype(np.float64), CLAMP_EPS, 1.0 - CLAMP_EPS)
    return float(np.mean(-t * np.log(q) - (1.0 - t) * np.log1p(-q)))


def loss_dist(p: ScalarVolume, d: DistVolume, d_hat: DistVolume, w: LossWeights | None = None) -> float:
    """Distance loss: p * mean_k |d_k - d_hat_k| on voxels with p > 0, plus
    lambda_reg * mean_k |d_hat_k| on voxels with p = 0; mean over voxels."""
    w = w or LossWeights()
    _check_same_shape(d.data, d_hat.data, "distance")
    if p.data.shape != d.data.shape[:3]:
        raise ValueError(f"probability/distance shape mismatch: {p.data.shape} vs {d.data.shape}")
    prob = p.data.astype(np.float64)
    fg = prob > 0
    mae = np.abs(d.data.astype(np.float64) - d_hat.data.astype(np.float64)).mean(axis=-1)
    reg = np.abs(d_hat.data.astype(np.float64)).mean(axis=-1)
    per_voxel = np.where(fg, prob * mae, w.lambda_reg * reg)
    return float(per_voxel.mean())


def loss_total(
    p: ScalarVolume,
    p_hat: ScalarVolume,
    d: DistVolume,
    d_hat: DistVolume,
    w: LossWeights | None = None,
) -> float:
    """loss_obj + lambda_d * loss_dist."""
    w = w or LossWeights()
    return loss_obj(p, p_hat) + w.lambda_d * loss_dist(p, d, d_hat, w)
