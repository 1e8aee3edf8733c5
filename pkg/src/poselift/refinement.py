"""Frozen-parameter test-time optimization of a latent state.

Given a trained network and one 2D observation, the refinement loop
holds every model weight fixed and optimizes only a latent state: the
2D input itself ("input-latent") or the pre-decoder hidden activation
("deep-latent"). Each step decodes the current latent to a 3D pose,
scores it with a projection term against the observed 2D pose plus an
uncertainty term anchored to the network's own initial prediction, and
applies one Adam update to the latent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .camera import check_projection
from .checkpoint import params_digest
from .errors import ContractError, ShapeError
from .losses import (
    DEFAULT_LAMBDA_PROJECTION,
    DEFAULT_LAMBDA_UNCERTAINTY,
    combined_loss,
)
from .network import (
    GaussianPosePrediction,
    ModelConfig,
    ModelParams,
    decode_mu,
    decode_s,
    forward_hidden,
)
from .optim import adam_step, init_adam
from .skeleton import SkeletonGraph
from .validation import as_pose2d, as_pose3d

INPUT_LATENT = "input-latent"
DEEP_LATENT = "deep-latent"


@dataclass(frozen=True)
class OptimizationConfig:
    lambda_projection: float = DEFAULT_LAMBDA_PROJECTION
    lambda_uncertainty: float = DEFAULT_LAMBDA_UNCERTAINTY
    iterations: int = 5
    lr: float = 1e-2
    variant: str = INPUT_LATENT

    def __post_init__(self):
        if self.iterations < 0:
            raise ContractError("iteration count must be >= 0")
        if self.lr <= 0:
            raise ContractError("refinement step size must be positive")
        if self.lambda_projection < 0 or self.lambda_uncertainty < 0:
            raise ContractError("loss weights must be non-negative")
        if self.variant not in (INPUT_LATENT, DEEP_LATENT):
            raise ContractError(f"unknown variant {self.variant!r}")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    projection: float
    uncertainty: float
    total: float
    mpjpe_mm: float | None


@dataclass
class OptimizationTrace:
    records: list[TraceRecord] = field(default_factory=list)
    ops_per_iteration: int = 0  # tape nodes per refinement step

    def __len__(self) -> int:
        return len(self.records)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "proj_loss", "unc_loss", "total_loss", "mpjpe_mm"])
            for r in self.records:
                writer.writerow(
                    [
                        r.iteration,
                        repr(r.projection),
                        repr(r.uncertainty),
                        repr(r.total),
                        "" if r.mpjpe_mm is None else repr(r.mpjpe_mm),
                    ]
                )


def _mpjpe_mm(pred: np.ndarray, gt: np.ndarray | None) -> float | None:
    if gt is None:
        return None
    return float(np.sqrt(((pred - gt) ** 2).sum(axis=-1)).mean() * 1000.0)


def _verify_frozen(before: str, params: ModelParams, cfg: ModelConfig) -> None:
    after = params_digest(params, cfg)
    if after != before:
        raise ContractError("model parameters changed during latent refinement")


def optimize_latent(
    params: ModelParams,
    cfg: ModelConfig,
    g: SkeletonGraph,
    j2d,
    p,
    ocfg: OptimizationConfig,
    gt=None,
    verify_frozen: bool = True,
) -> tuple[np.ndarray, OptimizationTrace]:
    """Optimize the 2D input latent; returns the decoded pose and a trace
    of length iterations + 1 (losses before each step plus the final state)."""
    j2d = as_pose2d(j2d, joints=cfg.joints)
    p = check_projection(p)
    if gt is not None:
        gt = as_pose3d(gt, joints=cfg.joints)
    digest_before = params_digest(params, cfg) if verify_frozen else None
    frozen = params.detached()

    # anchor prediction from the unmodified input, hoisted out of the loop
    hidden0 = forward_hidden(frozen, cfg, g, j2d)
    anchor = GaussianPosePrediction(decode_mu(frozen, hidden0), decode_s(frozen, hidden0))

    z = Tensor(j2d.copy(), requires_grad=True)
    state = init_adam({"z": z}, lr=ocfg.lr)
    trace = OptimizationTrace()
    for t in range(ocfg.iterations):
        with Tape() as tape:
            mu = decode_mu(frozen, forward_hidden(frozen, cfg, g, z))
            total, parts = combined_loss(
                mu, j2d, p, anchor, ocfg.lambda_projection, ocfg.lambda_uncertainty
            )
            z.zero_grad()
            tape.backward(total)
        trace.ops_per_iteration = len(tape.nodes)
        trace.records.append(
            TraceRecord(t, parts.projection, parts.uncertainty, parts.total,
                        _mpjpe_mm(mu.data, gt))
        )
        adam_step(state, {"z": z}, {"z": z.grad})

    final_mu = decode_mu(frozen, forward_hidden(frozen, cfg, g, z.detach()))
    _, parts = combined_loss(
        final_mu, j2d, p, anchor, ocfg.lambda_projection, ocfg.lambda_uncertainty
    )
    trace.records.append(
        TraceRecord(ocfg.iterations, parts.projection, parts.uncertainty, parts.total,
                    _mpjpe_mm(final_mu.data, gt))
    )
    if verify_frozen:
        _verify_frozen(digest_before, params, cfg)
    return final_mu.data, trace


def optimize_latent_deep(
    params: ModelParams,
    cfg: ModelConfig,
    g: SkeletonGraph,
    j2d,
    p,
    ocfg: OptimizationConfig,
    gt=None,
    verify_frozen: bool = True,
) -> tuple[np.ndarray, OptimizationTrace]:
    """Optimize the pre-decoder hidden state instead of the 2D input; each
    step only re-runs the decoders."""
    j2d = as_pose2d(j2d, joints=cfg.joints)
    p = check_projection(p)
    if gt is not None:
        gt = as_pose3d(gt, joints=cfg.joints)
    digest_before = params_digest(params, cfg) if verify_frozen else None
    frozen = params.detached()

    hidden0 = forward_hidden(frozen, cfg, g, j2d)
    anchor = GaussianPosePrediction(decode_mu(frozen, hidden0), decode_s(frozen, hidden0))

    h = Tensor(hidden0.data.copy(), requires_grad=True)
    state = init_adam({"h": h}, lr=ocfg.lr)
    trace = OptimizationTrace()
    for t in range(ocfg.iterations):
        with Tape() as tape:
            mu = decode_mu(frozen, h)
            total, parts = combined_loss(
                mu, j2d, p, anchor, ocfg.lambda_projection, ocfg.lambda_uncertainty
            )
            h.zero_grad()
            tape.backward(total)
        trace.ops_per_iteration = len(tape.nodes)
        trace.records.append(
            TraceRecord(t, parts.projection, parts.uncertainty, parts.total,
                        _mpjpe_mm(mu.data, gt))
        )
        adam_step(state, {"h": h}, {"h": h.grad})

    final_mu = decode_mu(frozen, h.detach())
    _, parts = combined_loss(
        final_mu, j2d, p, anchor, ocfg.lambda_projection, ocfg.lambda_uncertainty
    )
    trace.records.append(
        TraceRecord(ocfg.iterations, parts.projection, parts.uncertainty, parts.total,
                    _mpjpe_mm(final_mu.data, gt))
    )
    if verify_frozen:
        _verify_frozen(digest_before, params, cfg)
    return final_mu.data, trace


def refine_sample(params, cfg, g, j2d, p, ocfg: OptimizationConfig, gt=None,
                  verify_frozen: bool = True):
    """Dispatch on the configured latent variant."""
    fn = optimize_latent if ocfg.variant == INPUT_LATENT else optimize_latent_deep
    return fn(params, cfg, g, j2d, p, ocfg, gt=gt, verify_frozen=verify_frozen)


def refine_batch(
    params: ModelParams,
    cfg: ModelConfig,
    g: SkeletonGraph,
    j2d_batch,
    p_batch,
    ocfg: OptimizationConfig,
    gt_batch=None,
) -> tuple[np.ndarray, list[OptimizationTrace]]:
    """Vectorized input-latent refinement across samples.

    Per-sample losses are summed (not averaged) so each sample's latent
    receives exactly the gradient of its own objective, and the Adam
    moment arrays are elementwise, so no state is shared across samples.
    """
    if ocfg.variant != INPUT_LATENT:
        raise ContractError("batched refinement supports the input-latent variant only")
    x = np.asarray(j2d_batch, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (cfg.joints, 2):
        raise ShapeError(f"batch shape {x.shape} does not match [n, {cfg.joints}, 2]")
    p = np.asarray(p_batch, dtype=np.float64)
    if p.shape != (x.shape[0], 3, 2):
        raise ShapeError(f"projection batch shape {p.shape} does not match [n, 3, 2]")
    gts = None
    if gt_batch is not None:
        gts = np.asarray(gt_batch, dtype=np.float64)
        if gts.shape != (x.shape[0], cfg.joints, 3):
            raise ShapeError(f"gt batch shape {gts.shape} does not match [n, {cfg.joints}, 3]")

    digest_before = params_digest(params, cfg)
    frozen = params.detached()
    hidden0 = forward_hidden(frozen, cfg, g, x)
    anchor_mu = decode_mu(frozen, hidden0).data
    anchor_inv_var = np.exp(-decode_s(frozen, hidden0).data)

    n = x.shape[0]
    p_t = Tensor(p)
    obs = Tensor(x)
    mu_anchor = Tensor(anchor_mu)
    inv_var = Tensor(anchor_inv_var)

    def per_sample_losses(mu):
        diff2d = ad.matmul(mu, p_t) - obs
        proj = (diff2d * diff2d).sum(axis=-1).sqrt().mean(axis=-1)  # [n]
        d3 = mu_anchor - mu
        unc = ((d3 * d3).sum(axis=-1) * inv_var).mean(axis=-1) * 0.5  # [n]
        return proj, unc

    z = Tensor(x.copy(), requires_grad=True)
    state = init_adam({"z": z}, lr=ocfg.lr)
    per_iter = np.empty((ocfg.iterations + 1, 3, n))
    mpjpes = np.empty((ocfg.iterations + 1, n)) if gts is not None else None

    def record(t, mu_data, proj_vals, unc_vals):
        total_vals = ocfg.lambda_projection * proj_vals + ocfg.lambda_uncertainty * unc_vals
        per_iter[t] = (proj_vals, unc_vals, total_vals)
        if mpjpes is not None:
            mpjpes[t] = np.sqrt(((mu_data - gts) ** 2).sum(axis=-1)).mean(axis=-1) * 1000.0

    ops_per_iteration = 0
    for t in range(ocfg.iterations):
        with Tape() as tape:
            mu = decode_mu(frozen, forward_hidden(frozen, cfg, g, z))
            proj, unc = per_sample_losses(mu)
            batch_loss = (
                proj.sum() * ocfg.lambda_projection + unc.sum() * ocfg.lambda_uncertainty
            )
            z.zero_grad()
            tape.backward(batch_loss)
        ops_per_iteration = len(tape.nodes)
        record(t, mu.data, proj.data, unc.data)
        adam_step(state, {"z": z}, {"z": z.grad})

    final_mu = decode_mu(frozen, forward_hidden(frozen, cfg, g, z.detach()))
    proj, unc = per_sample_losses(final_mu)
    record(ocfg.iterations, final_mu.data, proj.data, unc.data)
    _verify_frozen(digest_before, params, cfg)

    traces = []
    for i in range(n):
        records = [
            TraceRecord(
                t,
                float(per_iter[t, 0, i]),
                float(per_iter[t, 1, i]),
                float(per_iter[t, 2, i]),
                None if mpjpes is None else float(mpjpes[t, i]),
            )
            for t in range(ocfg.iterations + 1)
        ]
        traces.append(OptimizationTrace(records, ops_per_iteration))
    return final_mu.data, traces
