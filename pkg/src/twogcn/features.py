"""Input feature construction.

Expands a canonical sequence into the four 2C-channel branches (joint, bone,
joint motion, bone motion), applies the graph-scale modes that decide how a
two-body sample maps onto graphs, and synthesizes a mirror skeleton for
single-body inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import SkeletonTopology
from .skeleton_io import SkeletonSequence

GRAPH_SCALE_MODES = ("baseline", "mutual", "randomswap", "symmetry")
BRANCHES = ("J", "B", "JM", "BM")


@dataclass
class FeatureBundle:
    """The four preprocessed streams for every graph of one sample.

    Each stream is [G, 2C, T, V] where G is the number of graphs the sample
    maps to under the chosen graph-scale mode.
    """

    joint: np.ndarray
    bone: np.ndarray
    joint_motion: np.ndarray
    bone_motion: np.ndarray
    label: int = 0
    sample_id: str = ""

    def __post_init__(self):
        shapes = {s.shape for s in self.streams().values()}
        if len(shapes) != 1:
            raise ValueError(f"branch streams disagree on shape: {shapes}")
        if self.joint.ndim != 4:
            raise ValueError("streams must be [graphs, channels, T, V]")

    def streams(self) -> dict[str, np.ndarray]:
        return {"J": self.joint, "B": self.bone, "JM": self.joint_motion,
                "BM": self.bone_motion}

    @property
    def graphs_per_sample(self) -> int:
        return self.joint.shape[0]


def _person_centers(x: np.ndarray, topology: SkeletonTopology) -> np.ndarray:
    """Center-joint coordinates of the person owning each column of x [C,T,V]."""
    n = topology.joint_count
    persons = x.shape[2] // n
    centers = np.empty_like(x)
    for p in range(persons):
        block = slice(p * n, (p + 1) * n)
        centers[:, :, block] = x[:, :, [p * n + topology.center_joint]]
    return centers


def joint_branch(x: np.ndarray, topology: SkeletonTopology) -> np.ndarray:
    """Raw coordinates stacked with coordinates relative to the person center."""
    relative = x - _person_centers(x, topology)
    return np.concatenate([x, relative], axis=0)


def bone_vectors(x: np.ndarray, topology: SkeletonTopology) -> np.ndarray:
    """Per-joint bone vector toward the parent joint (zero at each center)."""
    n = topology.joint_count
    persons = x.shape[2] // n
    parents = topology.parents()
    index = np.concatenate([parents + p * n for p in range(persons)])
    return x - x[:, :, index]


def bone_branch(x: np.ndarray, topology: SkeletonTopology) -> np.ndarray:
    """Bone vectors stacked with per-axis arccos direction angles.

    Zero-length bones (the center joints, zero-padded bodies) take the
    arccos(0) = pi/2 convention on every axis.
    """
    bones = bone_vectors(x, topology)
    norm = np.sqrt((bones * bones).sum(axis=0, keepdims=True))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(norm > 0, bones / norm, 0.0)
    angles = np.arccos(np.clip(ratio, -1.0, 1.0)).astype(x.dtype)
    return np.concatenate([bones, angles], axis=0)


def motion_branch(stream: np.ndarray) -> np.ndarray:
    """Frame-difference velocities and accelerations, stacked on channels.

    The first frame of both outputs holds the raw first-frame values; the
    acceleration recursion treats the pre-sequence velocity as zero.
    """
    velocity = np.zeros_like(stream)
    accel = np.zeros_like(stream)
    velocity[:, 1:] = stream[:, 1:] - stream[:, :-1]
    accel[:, 1:] = velocity[:, 1:] - velocity[:, :-1]
    velocity[:, 0] = stream[:, 0]
    accel[:, 0] = stream[:, 0]
    return np.concatenate([velocity, accel], axis=0)


def flatten_bodies(seq: SkeletonSequence) -> np.ndarray:
    """[C,T,M,N] -> [C,T,M*N] with person-major joint order."""
    c, t, m, n = seq.data.shape
    return seq.data.reshape(c, t, m * n)


def swap_persons(data: np.ndarray) -> np.ndarray:
    """Exchange the two body slots of a [C,T,M,N] tensor."""
    return data[:, :, ::-1, :].copy()


def apply_graph_scale(seq: SkeletonSequence, mode: str,
                      rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Map one two-body sample to its graph inputs [C,T,V] under a scale mode."""
    if mode not in GRAPH_SCALE_MODES:
        raise ValueError(f"unknown graph-scale mode {mode!r}")
    if seq.M != 2:
        raise ValueError("graph-scale modes operate on M=2 sequences")
    if mode == "baseline":
        return [seq.data[:, :, 0, :].copy(), seq.data[:, :, 1, :].copy()]
    flat = flatten_bodies(seq)
    if mode == "mutual":
        return [flat]
    swapped = flatten_bodies(SkeletonSequence(
        data=swap_persons(seq.data), label=seq.label, sample_id=seq.sample_id,
        subject_id=seq.subject_id, camera_id=seq.camera_id, setup_id=seq.setup_id))
    if mode == "symmetry":
        return [flat, swapped]
    # randomswap: training-time coin flip; evaluation uses mutual ordering
    if rng is None:
        return [flat]
    return [swapped if rng.random() < 0.5 else flat]


def mirror_second_body(seq: SkeletonSequence, topology: SkeletonTopology,
                       mode: str = "reflect") -> SkeletonSequence:
    """Fill an empty second body slot with a mirror of the first.

    ``reflect`` flips the lateral coordinate about the person's own center
    joint; ``copy`` duplicates the body unchanged.
    """
    if seq.M != 2:
        raise ValueError("mirroring needs an M=2 sequence")
    if np.any(seq.data[:, :, 1, :] != 0):
        raise ValueError("second body slot is not empty")
    data = seq.data.copy()
    body = data[:, :, 0, :]
    if mode == "copy":
        data[:, :, 1, :] = body
    elif mode == "reflect":
        mirrored = body.copy()
        mirrored[0] = 2.0 * body[0, :, topology.center_joint][:, None] - body[0]
        data[:, :, 1, :] = mirrored
    else:
        raise ValueError(f"unknown mirror mode {mode!r}")
    return SkeletonSequence(data=data, label=seq.label, sample_id=seq.sample_id,
                            subject_id=seq.subject_id, camera_id=seq.camera_id,
                            setup_id=seq.setup_id)


def feature_bundle(seq: SkeletonSequence, topology: SkeletonTopology, mode: str,
                   rng: np.random.Generator | None = None) -> FeatureBundle:
    """Build the four input branches for every graph of one sample."""
    graphs = apply_graph_scale(seq, mode, rng)
    joint, bone, jm, bm = [], [], [], []
    for x in graphs:
        bones = bone_vectors(x, topology)
        joint.append(joint_branch(x, topology))
        bone.append(bone_branch(x, topology))
        jm.append(motion_branch(x))
        bm.append(motion_branch(bones))
    return FeatureBundle(joint=np.stack(joint), bone=np.stack(bone),
                         joint_motion=np.stack(jm), bone_motion=np.stack(bm),
                         label=seq.label, sample_id=seq.sample_id)
