"""Adam with bias correction, over named tensor collections."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ShapeError


@dataclass
class AdamState:
    """First/second moment accumulators mirroring the parameter shapes."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, tensor in params.items():
        state.m[name] = np.zeros_like(tensor.data)
        state.v[name] = np.zeros_like(tensor.data)
    return state


def adam_step(state: AdamState, params, grads) -> None:
    """One update over ``params`` (name -> Tensor) given ``grads``
    (name -> ndarray). Missing or None grads are treated as zero."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    for name, tensor in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(tensor.data)
        if grad.shape != tensor.data.shape:
            raise ShapeError(
                f"gradient shape {grad.shape} does not match parameter "
                f"{name} with shape {tensor.data.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / bias1
        v_hat = v / bias2
        tensor.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def gradients_of(params) -> dict[str, np.ndarray]:
    """Collect accumulated .grad arrays from a named tensor collection."""
    out: dict[str, np.ndarray] = {}
    for name, tensor in params.items():
        if tensor.grad is not None:
            out[name] = tensor.grad
    return out


def single(name: str, tensor: Tensor) -> dict[str, Tensor]:
    """Convenience one-tensor collection for latent-state optimization."""
    return {name: tensor}
