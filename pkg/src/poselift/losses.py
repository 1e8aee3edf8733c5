"""Training and refinement loss functions.

All losses accept tensors for the quantities they must be
differentiable in and plain arrays (or detached tensors) for constants.
Reductions average over joints first, then over any batch axes, so the
loss weights are independent of the joint count and batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .network import GaussianPosePrediction

DEFAULT_LAMBDA_PROJECTION = 1.0
DEFAULT_LAMBDA_UNCERTAINTY = 0.005


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar values of the combined refinement objective's parts."""

    total: float
    projection: float
    uncertainty: float
    nll: float | None = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _check_joint_match(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape[-2] != b.shape[-2]:
        raise ShapeError(f"{what}: joint counts differ ({a.shape} vs {b.shape})")


def _per_joint_sq(diff: Tensor) -> Tensor:
    # [.., K, d] -> [.., K] squared Euclidean norms
    return (diff * diff).sum(axis=-1)


def mpjpe_loss(pred, gt) -> Tensor:
    """Mean per-joint Euclidean distance (canonical units)."""
    pred, gt = _as_tensor(pred), _as_tensor(gt)
    _check_joint_match(pred, gt, "mpjpe_loss")
    return _per_joint_sq(pred - gt).sqrt().mean()


def nll_train_loss(pred: GaussianPosePrediction, gt) -> Tensor:
    """Gaussian negative log-likelihood with diagonal per-joint variance:

        (1 / 2K) * sum_k( ||gt_k - mu_k||^2 * exp(-s_k) + s_k )

    averaged over any batch axes.
    """
    gt = _as_tensor(gt)
    _check_joint_match(pred.mu, gt, "nll_train_loss")
    sq = _per_joint_sq(gt - pred.mu)  # [.., K]
    weighted = sq * (-pred.s).exp() + pred.s
    return weighted.mean() * 0.5


def projection_loss(pred3d, j2d, p) -> Tensor:
    """Mean per-joint 2D distance between the projected prediction and the
    observed 2D pose. ``p`` is a constant [3, 2] (or batched [.., 3, 2])."""
    pred3d, j2d = _as_tensor(pred3d), _as_tensor(j2d)
    _check_joint_match(pred3d, j2d, "projection_loss")
    projected = ad.matmul(pred3d, _as_tensor(p))
    return _per_joint_sq(projected - j2d).sqrt().mean()


def uncertainty_loss(current3d, anchor: GaussianPosePrediction) -> Tensor:
    """Squared distance to the anchor mean, weighted by inverse anchor
    variance: (1 / 2K) * sum_k ||mu_k - cur_k||^2 * exp(-s_k).

    The anchor is treated as a constant: no gradient flows into it.
    """
    current3d = _as_tensor(current3d)
    anchor_mu = Tensor(anchor.mu.data)
    inv_var = Tensor(np.exp(-anchor.s.data))
    _check_joint_match(current3d, anchor_mu, "uncertainty_loss")
    sq = _per_joint_sq(anchor_mu - current3d)
    return (sq * inv_var).mean() * 0.5


def combined_loss(
    current3d,
    j2d,
    p,
    anchor: GaussianPosePrediction,
    lambda_projection: float = DEFAULT_LAMBDA_PROJECTION,
    lambda_uncertainty: float = DEFAULT_LAMBDA_UNCERTAINTY,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted refinement objective; returns the differentiable total and
    a float breakdown satisfying total == lp * proj + lu * unc exactly."""
    if lambda_projection < 0 or lambda_uncertainty < 0:
        raise ValueError("loss weights must be non-negative")
    proj = projection_loss(current3d, j2d, p)
    unc = uncertainty_loss(current3d, anchor)
    total = proj * lambda_projection + unc * lambda_uncertainty
    breakdown = LossBreakdown(
        total=lambda_projection * proj.item() + lambda_uncertainty * unc.item(),
        projection=proj.item(),
        uncertainty=unc.item(),
    )
    return total, breakdown
