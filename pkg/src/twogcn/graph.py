"""Two-person graph construction.

Builds the joint graph over one or two bodies under each edge labeling
strategy, partitions edges by hop distance, and produces the symmetrically
normalized adjacency stacks consumed by the spatial graph convolution.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .skeleton_io import SkeletonSequence

STRATEGIES = ("physical", "pairwise", "interactive", "geometric", "fc", "onlypairwise")
PART_NAMES = ("torso", "left_arm", "right_arm", "left_leg", "right_leg")
NUM_PARTS = 5
DEFAULT_MAX_HOP = 2
GEOMETRIC_THRESHOLD = 0.3


class GraphError(Exception):
    pass


class MissingSequence(GraphError):
    pass


class IndexOutOfRange(GraphError):
    pass


class NonSymmetric(GraphError):
    pass


@dataclass(frozen=True)
class SkeletonTopology:
    """Static per-body skeleton description: bones, center, functional parts."""

    joint_count: int
    bone_edges: tuple[tuple[int, int], ...]
    center_joint: int
    part_assignment: tuple[int, ...]  # joint index -> part id 0..4
    hand_joints: tuple[int, int]  # (left, right)
    leg_joints: tuple[int, int]

    def __post_init__(self):
        n = self.joint_count
        indexed = [self.center_joint, *self.hand_joints, *self.leg_joints]
        indexed += [i for e in self.bone_edges for i in e]
        if any(i < 0 or i >= n for i in indexed):
            raise IndexOutOfRange(f"topology references joints outside 0..{n - 1}")
        if len(self.bone_edges) != n - 1 or not self._is_connected():
            raise ValueError("bone_edges must form a spanning tree")
        if len(self.part_assignment) != n or set(self.part_assignment) != set(range(NUM_PARTS)):
            raise ValueError(f"part assignment must cover all joints with {NUM_PARTS} parts")

    def _is_connected(self) -> bool:
        adj = self.neighbors()
        seen = {0}
        queue = deque([0])
        while queue:
            i = queue.popleft()
            for j in adj[i]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        return len(seen) == self.joint_count

    def neighbors(self) -> list[list[int]]:
        adj = [[] for _ in range(self.joint_count)]
        for i, j in self.bone_edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def parents(self) -> np.ndarray:
        """Parent of each joint on the path toward the center joint (center -> itself)."""
        parent = np.full(self.joint_count, -1, dtype=np.int64)
        parent[self.center_joint] = self.center_joint
        adj = self.neighbors()
        queue = deque([self.center_joint])
        while queue:
            i = queue.popleft()
            for j in adj[i]:
                if parent[j] < 0:
                    parent[j] = i
                    queue.append(j)
        return parent


# NTU 25-joint layout, 0-based. Hand/thumb tips attach to the hand joints.
NTU_BONES = (
    (0, 1), (1, 20), (2, 20), (3, 2), (4, 20), (5, 4), (6, 5), (7, 6),
    (8, 20), (9, 8), (10, 9), (11, 10), (12, 0), (13, 12), (14, 13), (15, 14),
    (16, 0), (17, 16), (18, 17), (19, 18), (21, 7), (22, 7), (23, 11), (24, 11),
)
_NTU_PARTS = {
    0: (0, 1, 2, 3, 20),
    1: (4, 5, 6, 7, 21, 22),
    2: (8, 9, 10, 11, 23, 24),
    3: (12, 13, 14, 15),
    4: (16, 17, 18, 19),
}

SBU_BONES = (
    (0, 1), (1, 2), (3, 1), (4, 3), (5, 4), (6, 1), (7, 6), (8, 7),
    (9, 2), (10, 9), (11, 10), (12, 2), (13, 12), (14, 13),
)
_SBU_PARTS = {
    0: (0, 1, 2),
    1: (3, 4, 5),
    2: (6, 7, 8),
    3: (9, 10, 11),
    4: (12, 13, 14),
}


def _parts_tuple(n: int, groups: dict[int, tuple[int, ...]]) -> tuple[int, ...]:
    out = [-1] * n
    for part, joints in groups.items():
        for j in joints:
            out[j] = part
    return tuple(out)


NTU_TOPOLOGY = SkeletonTopology(
    joint_count=25,
    bone_edges=NTU_BONES,
    center_joint=1,
    part_assignment=_parts_tuple(25, _NTU_PARTS),
    hand_joints=(7, 11),
    leg_joints=(15, 19),
)

SBU_TOPOLOGY = SkeletonTopology(
    joint_count=15,
    bone_edges=SBU_BONES,
    center_joint=2,
    part_assignment=_parts_tuple(15, _SBU_PARTS),
    hand_joints=(5, 8),
    leg_joints=(11, 14),
)

LAYOUTS = {"ntu": NTU_TOPOLOGY, "sbu": SBU_TOPOLOGY}


@dataclass
class LabeledAdjacency:
    """Weighted adjacency plus its hop partition and normalized stack."""

    strategy: str
    A: np.ndarray  # [V, V], symmetric, zero diagonal
    hops: np.ndarray  # [V, V] int, -1 where unreachable
    A_d: np.ndarray  # [K, V, V]
    A_norm: np.ndarray  # [K, V, V]

    @property
    def V(self) -> int:
        return self.A.shape[0]

    @property
    def K(self) -> int:
        return self.A_d.shape[0]

    def to_json(self) -> str:
        return json.dumps({
            "strategy": self.strategy,
            "V": self.V,
            "K": self.K,
            "matrices": self.A_norm.tolist(),
        })


def _physical_support(topology: SkeletonTopology, two_person: bool) -> np.ndarray:
    n = topology.joint_count
    v = 2 * n if two_person else n
    sup = np.zeros((v, v), dtype=bool)

    def link(i, j):
        sup[i, j] = sup[j, i] = True

    for i, j in topology.bone_edges:
        link(i, j)
        if two_person:
            link(i + n, j + n)
    if two_person:
        link(topology.center_joint, topology.center_joint + n)
    return sup


def _flatten_for_geometry(sequence: SkeletonSequence, two_person: bool) -> np.ndarray:
    data = sequence.data.astype(np.float64)
    c, t, m, n = data.shape
    if two_person:
        if m != 2:
            raise MissingSequence("geometric labeling over two bodies needs M=2 data")
        return data.transpose(1, 2, 3, 0).reshape(t, 2 * n, c)  # [T, 2N, C]
    return data[:, :, 0, :].transpose(1, 2, 0)  # [T, N, C]


def correlation_matrix(points: np.ndarray) -> np.ndarray:
    """Mean over frames of exp(-squared joint distance / channel count).

    ``points`` is [T, V, C] in float64; the channel count C is the
    denominator of the exponent.
    """
    x = np.asarray(points, dtype=np.float64)
    c = x.shape[-1]
    diff = x[:, :, None, :] - x[:, None, :, :]
    d2 = np.einsum("tijc,tijc->tij", diff, diff)
    return np.exp(-d2 / c).mean(axis=0)


def geometric_correlation(sequence: SkeletonSequence, two_person: bool = True) -> np.ndarray:
    return correlation_matrix(_flatten_for_geometry(sequence, two_person))


def build_adjacency(strategy: str, topology: SkeletonTopology, two_person: bool = True,
                    sequence: SkeletonSequence | None = None, *,
                    max_hop: int = DEFAULT_MAX_HOP,
                    interactive_all_pairs: bool = False,
                    geometric_threshold: float = GEOMETRIC_THRESHOLD,
                    keep_bone_edges: bool = True) -> LabeledAdjacency:
    """Build the labeled adjacency for one strategy, partitioned and normalized.

    ``two_person=False`` yields the single-body graph used by the baseline
    graph scale; only physical and geometric labelings are meaningful there.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    n = topology.joint_count
    v = 2 * n if two_person else n
    phys = _physical_support(topology, two_person)

    if not two_person and strategy in ("pairwise", "interactive", "onlypairwise"):
        raise ValueError(f"{strategy} labeling needs a two-person graph")

    if strategy == "geometric":
        if sequence is None:
            raise MissingSequence("geometric labeling requires a sequence")
        return geometric_adjacency(_flatten_for_geometry(sequence, two_person),
                                   topology, two_person, max_hop=max_hop,
                                   geometric_threshold=geometric_threshold,
                                   keep_bone_edges=keep_bone_edges)
    else:
        A = np.zeros((v, v), dtype=np.float64)
        if strategy == "fc":
            A[:] = 1.0
            np.fill_diagonal(A, 0.0)
        elif strategy == "onlypairwise":
            for i in range(n):
                A[i, i + n] = A[i + n, i] = 1.0
        else:
            A[phys] = 1.0
            if strategy == "pairwise":
                for i in range(n):
                    A[i, i + n] = A[i + n, i] = 1.0
            elif strategy == "interactive":
                lh, rh = topology.hand_joints
                pairs = [(lh, lh + n), (rh, rh + n), (lh, rh), (lh + n, rh + n)]
                if interactive_all_pairs:
                    pairs += [(lh, rh + n), (rh, lh + n)]
                for i, j in pairs:
                    A[i, j] = A[j, i] = 1.0

    hops, a_d = hop_partition(A, max_hop)
    return LabeledAdjacency(strategy=strategy, A=A, hops=hops, A_d=a_d,
                            A_norm=normalize(a_d))


def geometric_adjacency(points: np.ndarray, topology: SkeletonTopology,
                        two_person: bool = True, *, max_hop: int = DEFAULT_MAX_HOP,
                        geometric_threshold: float = GEOMETRIC_THRESHOLD,
                        keep_bone_edges: bool = True) -> LabeledAdjacency:
    """Geometric labeling straight from [T, V, C] joint positions."""
    n = topology.joint_count
    v = 2 * n if two_person else n
    if points.shape[1] != v:
        raise IndexOutOfRange(f"points cover {points.shape[1]} joints, graph has {v}")
    A = correlation_matrix(points)
    np.fill_diagonal(A, 0.0)
    weak = A < geometric_threshold
    if keep_bone_edges:
        weak &= ~_physical_support(topology, two_person)
    A = np.where(weak, 0.0, A)
    hops, a_d = hop_partition(A, max_hop)
    return LabeledAdjacency(strategy="geometric", A=A, hops=hops, A_d=a_d,
                            A_norm=normalize(a_d))


def hop_partition(A: np.ndarray, max_hop: int) -> tuple[np.ndarray, np.ndarray]:
    """Shortest-path hops on the support of A and the per-hop adjacency stack.

    Returns ``(hops, A_d)`` with hops[i, j] = -1 when unreachable, A_d[0] the
    identity, and A_d[d] carrying A's weights exactly where hops == d.
    """
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"adjacency must be square, got {A.shape}")
    if not np.allclose(A, A.T):
        raise NonSymmetric("adjacency support must be symmetric")
    v = A.shape[0]
    support = A != 0
    hops = np.full((v, v), -1, dtype=np.int64)
    neighbors = [np.nonzero(support[i])[0] for i in range(v)]
    for src in range(v):
        hops[src, src] = 0
        queue = deque([src])
        while queue:
            i = queue.popleft()
            for j in neighbors[i]:
                if hops[src, j] < 0:
                    hops[src, j] = hops[src, i] + 1
                    queue.append(j)
    # direct edges keep A's weights; structural pairs further out carry unit
    # weight (there is no direct entry to inherit at hop >= 2)
    weights = np.where(support, A, 1.0)
    a_d = np.zeros((max_hop + 1, v, v), dtype=np.float64)
    a_d[0] = np.eye(v)
    for d in range(1, max_hop + 1):
        a_d[d] = np.where(hops == d, weights, 0.0)
    return hops, a_d


def normalize(a_d: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization per hop subset; zero-degree rows stay zero."""
    stack = np.asarray(a_d, dtype=np.float64)
    single = stack.ndim == 2
    if single:
        stack = stack[None]
    out = np.empty_like(stack)
    for k, mat in enumerate(stack):
        deg = mat.sum(axis=1)
        inv_sqrt = np.zeros_like(deg)
        nz = deg > 0
        inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
        out[k] = inv_sqrt[:, None] * mat * inv_sqrt[None, :]
    return out[0] if single else out


def swap_permutation(v: int) -> np.ndarray:
    """Joint permutation exchanging the two persons of a 2N-joint graph."""
    n = v // 2
    return np.concatenate([np.arange(n, 2 * n), np.arange(n)])


def export_adjacency(adj: LabeledAdjacency, path) -> None:
    from pathlib import Path

    Path(path).write_text(adj.to_json())
