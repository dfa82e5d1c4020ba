"""Shared fixture builders for the test suite."""

from __future__ import annotations

import numpy as np

from twogcn.skeleton_io import SkeletonSequence


def ntu_text(frames, joint_count: int = 25) -> str:
    """Render NTU ``.skeleton`` text from a frame description.

    ``frames`` is a list of frames; each frame is a list of
    ``(body_id, coords)`` where coords is an array-like [joint_count, 3].
    This generator is the round-trip oracle for the parser tests: whatever it
    writes, the parser must read back.
    """
    lines = [str(len(frames))]
    for bodies in frames:
        lines.append(str(len(bodies)))
        for body_id, coords in bodies:
            coords = np.asarray(coords, dtype=np.float32)
            lines.append(f"{body_id} 0 0 0 0 0 0 0.0 0.0 2")
            lines.append(str(joint_count))
            for j in range(joint_count):
                x, y, z = (repr(float(c)) for c in coords[j])
                lines.append(f"{x} {y} {z} 0 0 0 0 1 0 0 0 2")
    return "\n".join(lines) + "\n"


def sbu_text(data: np.ndarray) -> str:
    """Render SBU CSV text from a [C, T, 2, 15] array (round-trip oracle)."""
    c, t, m, n = data.shape
    lines = []
    for fr in range(t):
        fields = [str(fr + 1)]
        for body in range(m):
            for joint in range(n):
                for ch in range(c):
                    fields.append(repr(float(data[ch, fr, body, joint])))
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def random_sequence(rng: np.random.Generator, c=3, t=4, m=2, n=25,
                    label=3, sample_id="s0", subject=1, camera=2, setup=3) -> SkeletonSequence:
    data = rng.normal(size=(c, t, m, n)).astype(np.float32)
    return SkeletonSequence(data=data, label=label, sample_id=sample_id,
                            subject_id=subject, camera_id=camera, setup_id=setup)
