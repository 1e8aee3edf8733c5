"""Synthetic articulated-skeleton data with consistent 2D projections.

Poses are sampled by forward kinematics over the default 17-joint tree:
each child joint sits at a fixed bone length from its parent, in a
random direction within a 60-degree cone around a rest direction. All
coordinates are root-relative, in canonical units (1 unit = 1000 mm).

Datasets are JSON-Lines, one sample per line, optionally gzipped.
"""

from __future__ import annotations

import gzip
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .camera import check_projection, project, sample_camera
from .errors import ContractError, DatasetFormatError, ShapeError
from .skeleton import SkeletonGraph, default_h36m_skeleton
from .validation import as_pose2d, as_pose3d, check_finite

# Bone length per child joint (canonical units), index 0 (root) unused.
# Roughly human proportions at half scale so projections stay inside the
# normalized image box for every camera draw.
DEFAULT_BONE_LENGTHS = np.array(
    [
        0.0,  # pelvis (root)
        0.065,  # r_hip
        0.225,  # r_knee
        0.225,  # r_ankle
        0.065,  # l_hip
        0.225,  # l_knee
        0.225,  # l_ankle
        0.115,  # spine
        0.130,  # thorax
        0.060,  # neck
        0.060,  # head
        0.075,  # l_shoulder
        0.140,  # l_elbow
        0.125,  # l_wrist
        0.075,  # r_shoulder
        0.140,  # r_elbow
        0.125,  # r_wrist
    ]
)

# Rest direction of the bone ending at each child joint.
_REST_DIRECTIONS = {
    1: (-1.0, 0.0, 0.0),
    2: (0.0, -1.0, 0.0),
    3: (0.0, -1.0, 0.0),
    4: (1.0, 0.0, 0.0),
    5: (0.0, -1.0, 0.0),
    6: (0.0, -1.0, 0.0),
    7: (0.0, 1.0, 0.0),
    8: (0.0, 1.0, 0.0),
    9: (0.0, 1.0, 0.0),
    10: (0.0, 1.0, 0.0),
    11: (1.0, 0.0, 0.0),
    12: (1.0, -0.3, 0.0),
    13: (1.0, -0.3, 0.0),
    14: (-1.0, 0.0, 0.0),
    15: (-1.0, -0.3, 0.0),
    16: (-1.0, -0.3, 0.0),
}

CONE_HALF_ANGLE_DEG = 60.0

# Joints at limb ends are noisier in real 2D detections; the "limbend"
# profile mirrors that with a graded multiplier.
_LIMB_END_MULTIPLIER = np.array(
    [1.0, 1.0, 1.5, 2.0, 1.0, 1.5, 2.0, 1.0, 1.0, 1.0, 1.5, 1.0, 1.5, 2.0, 1.0, 1.5, 2.0]
)


@dataclass
class PoseSample:
    """One training/evaluation item: 3D ground truth plus its 2D views."""

    j3d: np.ndarray  # [K, 3] root-relative ground truth
    j2d: np.ndarray  # [K, 2] noisy network input
    p: np.ndarray  # [3, 2] projection used to render the 2D views
    noise_scale: np.ndarray  # [K] per-joint noise sigma
    j2d_clean: np.ndarray | None = None  # [K, 2] exact projection of j3d

    def __post_init__(self):
        self.j3d = as_pose3d(self.j3d, name="j3d")
        k = self.j3d.shape[0]
        self.j2d = as_pose2d(self.j2d, joints=k, name="j2d")
        self.p = check_projection(self.p)
        self.noise_scale = np.asarray(self.noise_scale, dtype=np.float64)
        if self.noise_scale.shape != (k,):
            raise ShapeError(f"noise_scale must have shape ({k},), got {self.noise_scale.shape}")
        if np.any(self.noise_scale < 0):
            raise ContractError("noise_scale must be non-negative")
        if self.j2d_clean is not None:
            self.j2d_clean = as_pose2d(self.j2d_clean, joints=k, name="j2d_clean")

    @property
    def joint_count(self) -> int:
        return self.j3d.shape[0]


def uniform_noise_profile(sigma: float, joints: int = 17) -> np.ndarray:
    if sigma < 0:
        raise ContractError("noise sigma must be non-negative")
    return np.full(joints, float(sigma))


def limb_end_noise_profile(sigma: float, joints: int = 17) -> np.ndarray:
    """Base sigma on the torso, 1.5x at knees/elbows/head, 2x at wrists/ankles."""
    if joints != 17:
        raise ShapeError("limb-end profile is defined for the 17-joint skeleton")
    if sigma < 0:
        raise ContractError("noise sigma must be non-negative")
    return float(sigma) * _LIMB_END_MULTIPLIER.copy()


def _rotation_from_z(direction: np.ndarray) -> np.ndarray:
    """Rotation matrix taking the +z axis onto ``direction`` (unit vector)."""
    z = np.array([0.0, 0.0, 1.0])
    c = float(np.dot(z, direction))
    if c > 1.0 - 1e-12:
        return np.eye(3)
    if c < -1.0 + 1e-12:
        return np.diag([1.0, -1.0, -1.0])  # pi rotation about x
    axis = np.cross(z, direction)
    axis /= np.linalg.norm(axis)
    angle = math.acos(c)
    kx, ky, kz = axis
    kmat = np.array([[0, -kz, ky], [kz, 0, -kx], [-ky, kx, 0]])
    return np.eye(3) + math.sin(angle) * kmat + (1 - math.cos(angle)) * (kmat @ kmat)


def _sample_cone_direction(rest: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cos_max = math.cos(math.radians(CONE_HALF_ANGLE_DEG))
    cos_t = rng.uniform(cos_max, 1.0)
    psi = rng.uniform(0.0, 2.0 * math.pi)
    sin_t = math.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    local = np.array([sin_t * math.cos(psi), sin_t * math.sin(psi), cos_t])
    return _rotation_from_z(rest) @ local


def sample_pose(g: SkeletonGraph, bone_lengths, rng_seed) -> np.ndarray:
    """Forward-kinematics sample of a root-relative [K, 3] pose."""
    bone_lengths = np.asarray(bone_lengths, dtype=np.float64)
    if bone_lengths.shape != (g.joint_count,):
        raise ShapeError(
            f"bone_lengths must have shape ({g.joint_count},), got {bone_lengths.shape}"
        )
    if np.any(bone_lengths[1:] <= 0):
        raise ContractError("bone lengths must be strictly positive")
    parents = g.parents()  # contract error if not a tree
    rng = np.random.default_rng(rng_seed)
    pose = np.zeros((g.joint_count, 3))
    for child in range(1, g.joint_count):
        rest = np.asarray(_REST_DIRECTIONS.get(child, (0.0, 1.0, 0.0)))
        rest = rest / np.linalg.norm(rest)
        direction = _sample_cone_direction(rest, rng)
        pose[child] = pose[parents[child]] + bone_lengths[child] * direction
    return pose


def _truncated_noise(rng: np.random.Generator, sigma: float) -> np.ndarray:
    """2-vector of N(0, sigma^2) noise, redrawn until its norm is <= 6 sigma."""
    if sigma == 0.0:
        return np.zeros(2)
    while True:
        eps = rng.normal(0.0, sigma, size=2)
        if float(np.hypot(eps[0], eps[1])) <= 6.0 * sigma:
            return eps


def make_sample(i: int, noise_profile: np.ndarray, rng_seed: int,
                g: SkeletonGraph, bone_lengths: np.ndarray) -> PoseSample:
    """Sample ``i`` of the dataset stream; depends only on (rng_seed, i)."""
    j3d = sample_pose(g, bone_lengths, rng_seed=[rng_seed, i, 0])
    p = sample_camera([rng_seed, i, 1])
    j2d_clean = project(j3d, p)
    rng = np.random.default_rng([rng_seed, i, 2])
    noise = np.stack([_truncated_noise(rng, s) for s in noise_profile])
    return PoseSample(
        j3d=j3d,
        j2d=j2d_clean + noise,
        p=p,
        noise_scale=noise_profile.copy(),
        j2d_clean=j2d_clean,
    )


def make_dataset(n: int, noise_profile, rng_seed: int,
                 g: SkeletonGraph | None = None, bone_lengths=None) -> list[PoseSample]:
    """Generate ``n`` samples, each with its own camera, deterministically."""
    if n < 1:
        raise ContractError("dataset size must be at least 1")
    if g is None:
        g = default_h36m_skeleton()
    if bone_lengths is None:
        bone_lengths = DEFAULT_BONE_LENGTHS
    noise_profile = np.asarray(noise_profile, dtype=np.float64)
    if noise_profile.shape != (g.joint_count,):
        raise ShapeError(
            f"noise profile must have shape ({g.joint_count},), got {noise_profile.shape}"
        )
    if np.any(noise_profile < 0):
        raise ContractError("noise sigmas must be non-negative")
    return [make_sample(i, noise_profile, rng_seed, g, bone_lengths) for i in range(n)]


# -- JSON-Lines serialization -------------------------------------------------


def _open_text(path, mode: str):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8", newline="\n")
    return io.open(path, mode, encoding="utf-8", newline="\n")


def sample_to_json(sample: PoseSample) -> str:
    doc = {
        "j3d": sample.j3d.tolist(),
        "j2d": sample.j2d.tolist(),
        "P": sample.p.tolist(),
        "noise_scale": sample.noise_scale.tolist(),
    }
    if sample.j2d_clean is not None:
        doc["j2d_clean"] = sample.j2d_clean.tolist()
    return json.dumps(doc)


def save_dataset(samples, path) -> None:
    with _open_text(path, "w") as fh:
        for sample in samples:
            fh.write(sample_to_json(sample))
            fh.write("\n")


def _parse_sample(doc: dict, line_no: int, joints: int | None) -> PoseSample:
    for key in ("j3d", "j2d", "P", "noise_scale"):
        if key not in doc:
            raise DatasetFormatError(f'missing required field "{key}"', line=line_no)
    try:
        sample = PoseSample(
            j3d=np.asarray(doc["j3d"], dtype=np.float64),
            j2d=np.asarray(doc["j2d"], dtype=np.float64),
            p=np.asarray(doc["P"], dtype=np.float64),
            noise_scale=np.asarray(doc["noise_scale"], dtype=np.float64),
            j2d_clean=(
                np.asarray(doc["j2d_clean"], dtype=np.float64)
                if "j2d_clean" in doc
                else None
            ),
        )
    except (TypeError, ValueError, ContractError) as exc:
        raise DatasetFormatError(str(exc), line=line_no) from exc
    if joints is not None and sample.joint_count != joints:
        raise ShapeError(
            f"line {line_no}: sample has {sample.joint_count} joints, expected {joints}"
        )
    return sample


def load_dataset(path, joints: int | None = 17) -> list[PoseSample]:
    """Read a JSONL dataset; ``joints`` pins the expected skeleton size."""
    samples = []
    with _open_text(path, "r") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"invalid JSON ({exc.msg})", line=line_no) from exc
            samples.append(_parse_sample(doc, line_no, joints))
    return samples
