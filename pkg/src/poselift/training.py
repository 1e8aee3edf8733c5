"""Mini-batch maximum-likelihood training of the lifting network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape
from .errors import ContractError
from .losses import nll_train_loss
from .network import ModelConfig, ModelParams, forward
from .optim import adam_step, gradients_of, init_adam
from .skeleton import SkeletonGraph, default_h36m_skeleton


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_nll: float
    train_mpjpe_mm: float
    val_mpjpe_mm: float | None


def _mean_mpjpe_mm(pred_mu: np.ndarray, gt: np.ndarray) -> float:
    return float(np.sqrt(((pred_mu - gt) ** 2).sum(axis=-1)).mean() * 1000.0)


def train(
    params: ModelParams,
    cfg: ModelConfig,
    dataset,
    epochs: int,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    val_fraction: float = 0.0,
    g: SkeletonGraph | None = None,
) -> tuple[ModelParams, list[EpochRecord]]:
    """Minimize the Gaussian NLL over shuffled mini-batches with Adam.

    Deterministic given ``seed``. Returns the (in-place updated) params
    and one record per epoch with the mean train loss, train MPJPE and,
    when ``val_fraction`` > 0, MPJPE on a held-out split.
    """
    if not dataset:
        raise ContractError("training dataset is empty")
    if epochs < 1:
        raise ContractError("epochs must be >= 1")
    if not 0.0 <= val_fraction < 1.0:
        raise ContractError("val_fraction must lie in [0, 1)")
    if g is None:
        g = default_h36m_skeleton()

    x = np.stack([s.j2d for s in dataset])
    y = np.stack([s.j3d for s in dataset])
    rng = np.random.default_rng(seed)

    n_val = int(round(len(dataset) * val_fraction))
    order = rng.permutation(len(dataset))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if train_idx.size == 0:
        raise ContractError("val_fraction leaves no training samples")
    x_train, y_train = x[train_idx], y[train_idx]
    x_val, y_val = x[val_idx], y[val_idx]

    state = init_adam(params, lr=lr)
    records: list[EpochRecord] = []
    for epoch in range(epochs):
        perm = rng.permutation(len(x_train))
        nll_sum = 0.0
        dist_sum = 0.0
        for start in range(0, len(perm), batch_size):
            idx = perm[start : start + batch_size]
            with Tape() as tape:
                pred = forward(params, cfg, g, x_train[idx])
                loss = nll_train_loss(pred, y_train[idx])
                params.zero_grad()
                tape.backward(loss)
            adam_step(state, dict(params.items()), gradients_of(params))
            nll_sum += loss.item() * len(idx)
            dist_sum += np.sqrt(((pred.mu.data - y_train[idx]) ** 2).sum(axis=-1)).mean() * len(idx)
        train_nll = nll_sum / len(perm)
        if not np.isfinite(train_nll):
            raise ContractError(f"training loss became non-finite at epoch {epoch}")
        val_mpjpe = None
        if n_val:
            val_pred = forward(params.detached(), cfg, g, x_val)
            val_mpjpe = _mean_mpjpe_mm(val_pred.mu.data, y_val)
        records.append(
            EpochRecord(
                epoch=epoch,
                train_nll=train_nll,
                train_mpjpe_mm=float(dist_sum / len(perm) * 1000.0),
                val_mpjpe_mm=val_mpjpe,
            )
        )
    return params, records
