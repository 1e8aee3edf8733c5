"""Human-skeleton topology and graph convolution over it."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError

# Fixed joint ordering for the default 17-joint skeleton. This ordering
# is part of the dataset/checkpoint file formats and must not change.
H36M_JOINT_NAMES = (
    "pelvis",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
)

H36M_EDGES = (
    (0, 1),
    (1, 2),
    (2, 3),
    (0, 4),
    (4, 5),
    (5, 6),
    (0, 7),
    (7, 8),
    (8, 9),
    (9, 10),
    (8, 11),
    (11, 12),
    (12, 13),
    (8, 14),
    (14, 15),
    (15, 16),
)


@dataclass(frozen=True)
class SkeletonGraph:
    """Undirected joint graph; self-loops are added by normalization, not stored."""

    joint_count: int
    edges: frozenset[tuple[int, int]]
    joint_names: tuple[str, ...] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.joint_count <= 0:
            raise ShapeError("joint_count must be positive")
        for i, j in self.edges:
            if not (0 <= i < self.joint_count and 0 <= j < self.joint_count):
                raise ShapeError(f"edge ({i}, {j}) outside [0, {self.joint_count})")
            if i == j:
                raise ContractError(f"self-loop ({i}, {j}) not allowed")
        if self.joint_names is not None and len(self.joint_names) != self.joint_count:
            raise ShapeError("joint_names length must equal joint_count")

    @staticmethod
    def from_edges(joint_count, edges, joint_names=None) -> "SkeletonGraph":
        canon = frozenset((min(i, j), max(i, j)) for i, j in edges)
        names = tuple(joint_names) if joint_names is not None else None
        return SkeletonGraph(joint_count, canon, names)

    @staticmethod
    def from_json(text: str) -> "SkeletonGraph":
        doc = json.loads(text)
        return SkeletonGraph.from_edges(doc["K"], doc["edges"], doc.get("names"))

    def to_json(self) -> str:
        doc = {"K": self.joint_count, "edges": sorted(self.edges)}
        if self.joint_names is not None:
            doc["names"] = list(self.joint_names)
        return json.dumps(doc)

    def is_connected(self) -> bool:
        seen = {0}
        stack = [0]
        neighbors = {k: [] for k in range(self.joint_count)}
        for i, j in self.edges:
            neighbors[i].append(j)
            neighbors[j].append(i)
        while stack:
            for n in neighbors[stack.pop()]:
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        return len(seen) == self.joint_count

    def parents(self) -> list[int]:
        """Parent index per joint for a tree rooted at joint 0 (-1 for the root).

        Raises ContractError when the graph is not a tree.
        """
        if len(self.edges) != self.joint_count - 1 or not self.is_connected():
            raise ContractError("skeleton is not a tree rooted at joint 0")
        neighbors = {k: [] for k in range(self.joint_count)}
        for i, j in self.edges:
            neighbors[i].append(j)
            neighbors[j].append(i)
        parent = [-1] * self.joint_count
        order = [0]
        seen = {0}
        while order:
            cur = order.pop(0)
            for n in sorted(neighbors[cur]):
                if n not in seen:
                    seen.add(n)
                    parent[n] = cur
                    order.append(n)
        return parent


def normalized_adjacency(g: SkeletonGraph) -> np.ndarray:
    """Symmetric-normalized adjacency with self-loops: D^-1/2 (A + I) D^-1/2."""
    cached = g._cache.get("norm_adj")
    if cached is not None:
        return cached
    k = g.joint_count
    a = np.eye(k)
    for i, j in g.edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    inv_sqrt_deg = 1.0 / np.sqrt(a.sum(axis=1))
    out = a * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]
    g._cache["norm_adj"] = out
    return out


def gcn_layer(x: Tensor, w: Tensor, g: SkeletonGraph, activate: bool = True) -> Tensor:
    """One graph convolution: neighbor aggregation of x @ w, optional ReLU.

    ``x`` may carry leading batch axes; the trailing two must be [K, d_in].
    """
    k = g.joint_count
    if x.shape[-2] != k:
        raise ShapeError(f"input joints {x.shape} do not match skeleton K={k}")
    if w.shape[0] != x.shape[-1]:
        raise ShapeError(f"weight shape {w.shape} does not match features {x.shape}")
    adj = Tensor(normalized_adjacency(g))
    out = ad.matmul(adj, ad.matmul(x, w))
    return ad.relu(out) if activate else out


def default_h36m_skeleton() -> SkeletonGraph:
    """The standard 17-joint pelvis-rooted kinematic tree."""
    return SkeletonGraph.from_edges(17, H36M_EDGES, H36M_JOINT_NAMES)
