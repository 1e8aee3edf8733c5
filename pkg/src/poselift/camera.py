"""Linear 3D-to-2D joint projection and synthetic camera sampling.

The projection model is a plain 3x2 matrix applied to joint rows; depth
enters only through the two skew coefficients of the third row. This is
deliberately linear (no perspective divide).
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError
from .validation import as_pose3d, check_finite

# Full-scale-to-rank-loss guard: a usable projection must keep p'p well
# conditioned so the 2D constraint carries information in two directions.
_MAX_CONDITION = 1e6

SCALE_RANGE = (0.8, 1.2)
ROTATION_RANGE_DEG = 15.0
SKEW_RANGE = 0.2


def check_projection(p, name: str = "projection") -> np.ndarray:
    """Validate a 3x2 projection matrix (finite, rank 2)."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.shape != (3, 2):
        raise ShapeError(f"{name} must have shape (3, 2), got {arr.shape}")
    check_finite(arr, name)
    gram = arr.T @ arr
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > _MAX_CONDITION:
        raise ContractError(f"{name} is rank deficient (cond(p'p) = {cond:.3g})")
    return arr


def project(j3d, p) -> np.ndarray:
    """Project [K, 3] joints to [K, 2] image coordinates: rows of j3d @ p."""
    j3d = as_pose3d(j3d)
    p = check_projection(p)
    return j3d @ p


def orthographic() -> np.ndarray:
    """The drop-z projection [[1,0],[0,1],[0,0]]."""
    return np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])


def sample_camera(rng_seed) -> np.ndarray:
    """Draw a random in-plane-rotated, scaled projection with mild depth skew.

    Deterministic per seed. The parameter ranges keep projections of
    canonical poses inside the normalized image box.
    """
    rng = np.random.default_rng(rng_seed)
    scale = rng.uniform(*SCALE_RANGE)
    phi = np.deg2rad(rng.uniform(-ROTATION_RANGE_DEG, ROTATION_RANGE_DEG))
    skew = rng.uniform(-SKEW_RANGE, SKEW_RANGE, size=2)
    p = scale * np.array(
        [
            [np.cos(phi), -np.sin(phi)],
            [np.sin(phi), np.cos(phi)],
            [skew[0], skew[1]],
        ]
    )
    return check_projection(p)
