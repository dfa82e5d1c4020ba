"""Synthetic two-person interaction sequences for desk-scale experiments.

Four classes with distinct interaction kinematics on the 25-joint layout:
approach (bodies close in), depart (bodies separate), kick (one leg swings at
the partner), and handshake (synchronized hand oscillation at close range).
Coordinates carry mild Gaussian noise; everything is deterministic per seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .skeleton_io import DatasetManifest, ManifestEntry, SkeletonSequence, write_canonical

CLASS_NAMES = ("approach", "depart", "kick", "handshake")

# rough standing pose, 0-based NTU joint order, meters: (lateral, up, depth)
_BASE_POSE = np.array([
    (0.00, 0.90, 0.00),   # 0 spine base
    (0.00, 1.05, 0.00),   # 1 spine mid (center)
    (0.00, 1.45, 0.00),   # 2 neck
    (0.00, 1.60, 0.00),   # 3 head
    (-0.20, 1.30, 0.00),  # 4 left shoulder
    (-0.26, 1.02, 0.00),  # 5 left elbow
    (-0.27, 0.80, 0.00),  # 6 left wrist
    (-0.27, 0.72, 0.00),  # 7 left hand
    (0.20, 1.30, 0.00),   # 8 right shoulder
    (0.26, 1.02, 0.00),   # 9 right elbow
    (0.27, 0.80, 0.00),   # 10 right wrist
    (0.27, 0.72, 0.00),   # 11 right hand
    (-0.10, 0.85, 0.00),  # 12 left hip
    (-0.12, 0.45, 0.00),  # 13 left knee
    (-0.13, 0.08, 0.00),  # 14 left ankle
    (-0.15, 0.02, 0.05),  # 15 left foot
    (0.10, 0.85, 0.00),   # 16 right hip
    (0.12, 0.45, 0.00),   # 17 right knee
    (0.13, 0.08, 0.00),   # 18 right ankle
    (0.15, 0.02, 0.05),   # 19 right foot
    (0.00, 1.30, 0.00),   # 20 spine high
    (-0.28, 0.66, 0.00),  # 21 left hand tip
    (-0.24, 0.70, 0.00),  # 22 left thumb
    (0.28, 0.66, 0.00),   # 23 right hand tip
    (0.24, 0.70, 0.00),   # 24 right thumb
], dtype=np.float64)

_RIGHT_ARM = (9, 10, 11, 23, 24)
_ARM_REACH = {9: 0.45, 10: 0.8, 11: 1.0, 23: 1.05, 24: 0.95}
_RIGHT_LEG = (17, 18, 19)
_LEG_REACH = {17: 0.5, 18: 0.9, 19: 1.0}


def _sequence_for_class(label: int, rng: np.random.Generator, frames: int,
                        noise: float) -> np.ndarray:
    """Noise-free kinematics plus optional coordinate noise; [3, T, 2, 25]."""
    t_axis = np.linspace(0.0, 1.0, frames)
    data = np.zeros((3, frames, 2, 25), dtype=np.float64)

    near = 0.9 + rng.uniform(-0.08, 0.08)
    far = 1.7 + rng.uniform(-0.1, 0.1)
    if label == 0:  # approach
        distance = far + (near - far) * t_axis
    elif label == 1:  # depart
        distance = near + (far - near) * t_axis
    else:
        distance = np.full(frames, near)

    phase = rng.uniform(0.0, 2 * np.pi)
    sway = 0.01 * np.sin(2 * np.pi * t_axis * rng.uniform(0.5, 1.5) + phase)

    for t in range(frames):
        d = distance[t]
        for person, sign in ((0, 1.0), (1, -1.0)):
            pose = _BASE_POSE.copy()
            pose[:, 0] *= sign  # face the partner
            pose[:, 0] += sign * (-d / 2)
            pose[:, 2] += sway[t] * sign
            data[:, t, person, :] = pose.T

    if label == 2:  # kick: person 0's right leg swings toward person 1
        amp = 0.55 + rng.uniform(-0.05, 0.05)
        swing = amp * np.sin(np.pi * np.clip((t_axis - 0.25) / 0.5, 0.0, 1.0))
        for joint in _RIGHT_LEG:
            reach = _LEG_REACH[joint]
            data[0, :, 0, joint] += reach * swing
            data[1, :, 0, joint] += 0.55 * reach * swing
    elif label == 3:  # handshake: both right hands meet and oscillate
        freq = 2.0 + rng.uniform(-0.3, 0.3)
        wobble = 0.06 * np.sin(2 * np.pi * freq * t_axis + phase)
        for person, sign in ((0, 1.0), (1, -1.0)):
            hand_rest = data[0, :, person, 11]
            target = sign * (-0.05) + wobble  # both hands track one point
            shift = target - hand_rest
            for joint in _RIGHT_ARM:
                reach = _ARM_REACH[joint]
                data[0, :, person, joint] += reach * shift
                data[1, :, person, joint] += 0.1 * np.abs(shift)

    if noise > 0:
        data += rng.normal(scale=noise, size=data.shape)
    return data


def make_toy_dataset(seed: int, classes: int = 4, samples_per_class: int = 32,
                     *, out_dir, frames: int = 64, noise: float = 0.015,
                     prefix: str = "toy") -> DatasetManifest:
    """Generate canonical sample files plus a manifest under ``out_dir``."""
    if not 1 <= classes <= len(CLASS_NAMES):
        raise ValueError(f"classes must be in 1..{len(CLASS_NAMES)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for label in range(classes):
        for idx in range(samples_per_class):
            data = _sequence_for_class(label, rng, frames, noise)
            sample_id = f"{prefix}-{CLASS_NAMES[label]}-{idx:03d}"
            seq = SkeletonSequence(data=data.astype(np.float32), label=label,
                                   sample_id=sample_id, subject_id=idx,
                                   camera_id=1, setup_id=1)
            path = out_dir / f"{sample_id}.2pgc"
            path.write_bytes(write_canonical(seq))
            entries.append(ManifestEntry(sample_id=sample_id, path=str(path),
                                         label=label, subject_id=idx,
                                         camera_id=1, setup_id=1))
    manifest = DatasetManifest(entries=entries, num_classes=classes, joint_count=25)
    manifest.validate()
    manifest.save(out_dir / "manifest.json")
    return manifest
