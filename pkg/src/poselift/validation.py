"""Input validation helpers shared by the estimator, CLI and core modules."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite values")
    return arr


def as_pose2d(x, joints: int | None = None, name: str = "pose2d") -> np.ndarray:
    """Coerce to a float64 [K, 2] array of normalized image coordinates."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ShapeError(f"{name} must have shape [K, 2], got {arr.shape}")
    if joints is not None and arr.shape[0] != joints:
        raise ShapeError(f"{name} has {arr.shape[0]} joints, expected {joints}")
    return check_finite(arr, name)


def as_pose3d(x, joints: int | None = None, name: str = "pose3d") -> np.ndarray:
    """Coerce to a float64 [K, 3] array in canonical length units."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ShapeError(f"{name} must have shape [K, 3], got {arr.shape}")
    if joints is not None and arr.shape[0] != joints:
        raise ShapeError(f"{name} has {arr.shape[0]} joints, expected {joints}")
    return check_finite(arr, name)


def as_pose_batch(x, joints: int | None = None, coords: int = 2, name: str = "poses") -> np.ndarray:
    """Coerce to a float64 [n, K, coords] batch; a single pose gains a batch axis."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[2] != coords:
        raise ShapeError(f"{name} must have shape [n, K, {coords}], got {arr.shape}")
    if joints is not None and arr.shape[1] != joints:
        raise ShapeError(f"{name} has {arr.shape[1]} joints, expected {joints}")
    return check_finite(arr, name)
