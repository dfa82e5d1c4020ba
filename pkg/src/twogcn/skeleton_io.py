"""Skeleton capture ingestion.

Parses raw motion-capture text formats (NTU-style ``.skeleton`` files and
SBU-style CSV lines) into a canonical ``[C, T, M, N]`` tensor, resamples
sequences in time, and reads/writes the binary sample container used by the
rest of the pipeline.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"2PGC"
VERSION = 1
VERSION_FEATURE = 2  # same container plus a trailing branch-tag field
BRANCH_TAGS = ("J", "B", "JM", "BM")

NTU_JOINTS = 25
SBU_JOINTS = 15


class SkeletonIOError(Exception):
    """Base class for parsing and container errors."""


class TruncatedFile(SkeletonIOError):
    pass


class MalformedNumber(SkeletonIOError):
    pass


class JointCountMismatch(SkeletonIOError):
    pass


class FieldCountMismatch(SkeletonIOError):
    pass


class TooManyBodies(SkeletonIOError):
    pass


class PadOverflow(SkeletonIOError):
    pass


class BadMagic(SkeletonIOError):
    pass


class UnsupportedVersion(SkeletonIOError):
    pass


class LengthMismatch(SkeletonIOError):
    pass


@dataclass
class RawBodyFrame:
    """One tracked body in one frame: id, xyz coordinates, tracking states."""

    body_id: int
    joints: np.ndarray  # [J, 3] float32
    tracking: np.ndarray  # [J] int32

    def joint_count(self) -> int:
        return self.joints.shape[0]


@dataclass
class SkeletonSequence:
    """Canonical multi-body joint tensor plus sample metadata.

    ``data`` has shape [C, T, M, N]: coordinate channels, frames, body slots,
    joints per body. Absent bodies are explicit all-zero slices.
    """

    data: np.ndarray
    label: int = 0
    sample_id: str = ""
    subject_id: int = 0
    camera_id: int = 0
    setup_id: int = 0

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise ValueError(f"expected 4-d [C,T,M,N] data, got shape {self.data.shape}")
        c, t, m, n = self.data.shape
        if c not in (2, 3) or m not in (1, 2) or n not in (15, 25) or t < 1:
            raise ValueError(f"unsupported sequence shape C={c} T={t} M={m} N={n}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("sequence data contains non-finite values")

    @property
    def C(self) -> int:
        return self.data.shape[0]

    @property
    def T(self) -> int:
        return self.data.shape[1]

    @property
    def M(self) -> int:
        return self.data.shape[2]

    @property
    def N(self) -> int:
        return self.data.shape[3]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SkeletonSequence):
            return NotImplemented
        return (
            self.label == other.label
            and self.sample_id == other.sample_id
            and self.subject_id == other.subject_id
            and self.camera_id == other.camera_id
            and self.setup_id == other.setup_id
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )


class _LineCursor:
    """Line-by-line reader that raises TruncatedFile past the end."""

    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self) -> tuple[str, int]:
        if self.pos >= len(self.lines):
            raise TruncatedFile(f"input ended at line {self.pos + 1}")
        line = self.lines[self.pos]
        self.pos += 1
        return line, self.pos  # 1-based line number


def _parse_count(line: str, lineno: int, what: str) -> int:
    tok = line.split()
    if len(tok) != 1:
        raise MalformedNumber(f"line {lineno}: expected a single {what}, got {line!r}")
    try:
        value = int(tok[0])
    except ValueError:
        raise MalformedNumber(f"line {lineno}: bad {what} {tok[0]!r}") from None
    if value < 0:
        raise MalformedNumber(f"line {lineno}: negative {what} {value}")
    return value


def _parse_float(tok: str, lineno: int) -> float:
    try:
        value = float(tok)
    except ValueError:
        raise MalformedNumber(f"line {lineno}: bad number {tok!r}") from None
    if not np.isfinite(value):
        raise MalformedNumber(f"line {lineno}: non-finite number {tok!r}")
    return value


def _parse_int(tok: str, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        pass
    value = _parse_float(tok, lineno)
    if value != int(value):
        raise MalformedNumber(f"line {lineno}: expected integer, got {tok!r}")
    return int(value)


def parse_ntu_skeleton(text) -> list[list[RawBodyFrame]]:
    """Parse NTU-layout ``.skeleton`` text into per-frame body records.

    Keeps (x, y, z) and the tracking state of each joint; depth, colour and
    orientation fields are discarded. Raises TruncatedFile, MalformedNumber or
    JointCountMismatch on malformed input, never anything unstructured.
    """
    if hasattr(text, "read"):
        text = text.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    cur = _LineCursor(text)

    line, lineno = cur.next()
    frame_count = _parse_count(line, lineno, "frame count")
    frames: list[list[RawBodyFrame]] = []
    for _ in range(frame_count):
        line, lineno = cur.next()
        body_count = _parse_count(line, lineno, "body count")
        bodies: list[RawBodyFrame] = []
        for _ in range(body_count):
            line, lineno = cur.next()
            info = line.split()
            if len(info) != 10:
                raise MalformedNumber(
                    f"line {lineno}: body info line has {len(info)} fields, expected 10"
                )
            body_id = _parse_int(info[0], lineno)
            line, lineno = cur.next()
            joint_count = _parse_count(line, lineno, "joint count")
            if joint_count != NTU_JOINTS:
                raise JointCountMismatch(
                    f"line {lineno}: joint count {joint_count}, expected {NTU_JOINTS}"
                )
            coords = np.empty((joint_count, 3), dtype=np.float32)
            tracking = np.empty(joint_count, dtype=np.int32)
            for j in range(joint_count):
                line, lineno = cur.next()
                tok = line.split()
                if len(tok) != 12:
                    raise MalformedNumber(
                        f"line {lineno}: joint line has {len(tok)} fields, expected 12"
                    )
                coords[j, 0] = _parse_float(tok[0], lineno)
                coords[j, 1] = _parse_float(tok[1], lineno)
                coords[j, 2] = _parse_float(tok[2], lineno)
                tracking[j] = _parse_int(tok[11], lineno)
            bodies.append(RawBodyFrame(body_id=body_id, joints=coords, tracking=tracking))
        frames.append(bodies)
    return frames


def parse_sbu(text, layout: tuple[int, int, int] = (2, SBU_JOINTS, 3), *, label: int = 0,
              sample_id: str = "", subject_id: int = 0, camera_id: int = 0,
              setup_id: int = 0) -> SkeletonSequence:
    """Parse SBU-layout CSV text: one frame per line, index then M*N*C reals."""
    if hasattr(text, "read"):
        text = text.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    bodies, joints, channels = layout
    want = 1 + bodies * joints * channels
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = [f for f in line.strip().split(",") if f != ""]
        if len(fields) != want:
            raise FieldCountMismatch(
                f"line {lineno}: {len(fields)} fields, expected {want}"
            )
        rows.append([_parse_float(tok, lineno) for tok in fields[1:]])
    if not rows:
        raise TruncatedFile("no frames in SBU input")
    # field order per line: person-major, then joint, then coordinate
    arr = np.asarray(rows, dtype=np.float32).reshape(len(rows), bodies, joints, channels)
    data = arr.transpose(3, 0, 1, 2)  # -> [C, T, M, N]
    return SkeletonSequence(data=data, label=label, sample_id=sample_id,
                            subject_id=subject_id, camera_id=camera_id, setup_id=setup_id)


def to_sequence(frames: list[list[RawBodyFrame]], label: int = 0, *, sample_id: str = "",
                subject_id: int = 0, camera_id: int = 0, setup_id: int = 0,
                joint_count: int = NTU_JOINTS) -> SkeletonSequence:
    """Assign parsed bodies to two fixed slots (first-appearance order).

    Frames where a body is absent hold zeros for its slot; parsed coordinates
    are copied without any numeric transformation.
    """
    slot_of: dict[int, int] = {}
    for bodies in frames:
        for body in bodies:
            if body.body_id not in slot_of:
                slot_of[body.body_id] = len(slot_of)
    if len(slot_of) > 2:
        raise TooManyBodies(f"{len(slot_of)} distinct body ids, at most 2 supported")
    t_total = max(len(frames), 1)
    data = np.zeros((3, t_total, 2, joint_count), dtype=np.float32)
    for t, bodies in enumerate(frames):
        for body in bodies:
            slot = slot_of[body.body_id]
            data[:, t, slot, :] = body.joints.T
    return SkeletonSequence(data=data, label=label, sample_id=sample_id,
                            subject_id=subject_id, camera_id=camera_id, setup_id=setup_id)


def resample_temporal(seq: SkeletonSequence, target_t: int, mode: str = "interpolate") -> SkeletonSequence:
    """Resize a sequence to ``target_t`` frames.

    ``interpolate`` maps the frame axis onto target_t uniformly spaced
    positions in [0, T-1] with per-channel linear interpolation; ``pad``
    appends zero frames (requires T <= target_t).
    """
    if target_t < 1:
        raise ValueError("target_t must be >= 1")
    t = seq.T
    if mode == "pad":
        if t > target_t:
            raise PadOverflow(f"cannot pad {t} frames down to {target_t}")
        data = np.zeros((seq.C, target_t, seq.M, seq.N), dtype=np.float32)
        data[:, :t] = seq.data
    elif mode == "interpolate":
        if t == 1:
            data = np.repeat(seq.data, target_t, axis=1)
        else:
            pos = np.linspace(0.0, t - 1, target_t)
            lo = np.floor(pos).astype(np.int64)
            hi = np.minimum(lo + 1, t - 1)
            frac = (pos - lo).astype(np.float32)
            a = seq.data[:, lo]
            b = seq.data[:, hi]
            data = a + (b - a) * frac[None, :, None, None]
    else:
        raise ValueError(f"unknown resample mode {mode!r}")
    return SkeletonSequence(data=data, label=seq.label, sample_id=seq.sample_id,
                            subject_id=seq.subject_id, camera_id=seq.camera_id,
                            setup_id=seq.setup_id)


def _pack_header(version: int, shape, label: int, subject_id: int, camera_id: int,
                 setup_id: int) -> bytes:
    c, t, m, n = shape
    return MAGIC + struct.pack("<9I", version, c, t, m, n, label, subject_id,
                               camera_id, setup_id)


def write_canonical(seq: SkeletonSequence) -> bytes:
    """Serialize to the little-endian binary sample container."""
    header = _pack_header(VERSION, seq.data.shape, seq.label, seq.subject_id,
                          seq.camera_id, seq.setup_id)
    return header + seq.data.tobytes()


def _read_header(blob: bytes):
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagic(f"bad magic {blob[:4]!r}")
    if len(blob) < 4 + 36:
        raise TruncatedFile("container header incomplete")
    version, c, t, m, n, label, subject, camera, setup = struct.unpack_from("<9I", blob, 4)
    if version not in (VERSION, VERSION_FEATURE):
        raise UnsupportedVersion(f"container version {version}")
    return version, (c, t, m, n), label, subject, camera, setup


def read_canonical(blob: bytes, sample_id: str = "") -> SkeletonSequence:
    """Deserialize a version-1 sample container written by write_canonical."""
    version, shape, label, subject, camera, setup = _read_header(blob)
    if version != VERSION:
        raise UnsupportedVersion("feature-cache container; use read_feature_cache")
    c, t, m, n = shape
    payload = blob[40:]
    expected = c * t * m * n * 4
    if len(payload) != expected:
        raise LengthMismatch(f"payload {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return SkeletonSequence(data=data, label=label, sample_id=sample_id,
                            subject_id=subject, camera_id=camera, setup_id=setup)


def write_feature_cache(stream: np.ndarray, branch_tag: str, *, label: int = 0,
                        subject_id: int = 0, camera_id: int = 0, setup_id: int = 0) -> bytes:
    """Serialize one preprocessed branch stream [channels, T, V]."""
    if branch_tag not in BRANCH_TAGS:
        raise ValueError(f"branch tag must be one of {BRANCH_TAGS}")
    arr = np.ascontiguousarray(stream, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"expected [channels, T, V] stream, got shape {arr.shape}")
    ch, t, v = arr.shape
    header = _pack_header(VERSION_FEATURE, (ch, t, 1, v), label, subject_id,
                          camera_id, setup_id)
    return header + struct.pack("<I", BRANCH_TAGS.index(branch_tag)) + arr.tobytes()


def read_feature_cache(blob: bytes) -> tuple[np.ndarray, str, dict]:
    """Deserialize a branch stream; returns (array [ch,T,V], tag, metadata)."""
    version, shape, label, subject, camera, setup = _read_header(blob)
    if version != VERSION_FEATURE:
        raise UnsupportedVersion("sample container; use read_canonical")
    ch, t, m, v = shape
    (tag_idx,) = struct.unpack_from("<I", blob, 40)
    if tag_idx >= len(BRANCH_TAGS):
        raise UnsupportedVersion(f"unknown branch tag index {tag_idx}")
    payload = blob[44:]
    expected = ch * t * m * v * 4
    if len(payload) != expected:
        raise LengthMismatch(f"payload {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(ch, t, v).copy()
    meta = {"label": label, "subject_id": subject, "camera_id": camera, "setup_id": setup}
    return arr, BRANCH_TAGS[tag_idx], meta


@dataclass
class ManifestEntry:
    sample_id: str
    path: str
    label: int
    subject_id: int = 0
    camera_id: int = 0
    setup_id: int = 0


@dataclass
class DatasetManifest:
    """Index of canonical sample files plus dataset-level counts."""

    entries: list[ManifestEntry] = field(default_factory=list)
    num_classes: int = 0
    joint_count: int = NTU_JOINTS

    def validate(self):
        seen = set()
        for e in self.entries:
            if e.sample_id in seen:
                raise ValueError(f"duplicate sample_id {e.sample_id!r}")
            seen.add(e.sample_id)
            if not 0 <= e.label < self.num_classes:
                raise ValueError(f"label {e.label} out of range for {self.num_classes} classes")

    def to_json(self) -> str:
        return json.dumps({
            "num_classes": self.num_classes,
            "joint_count": self.joint_count,
            "entries": [vars(e) for e in self.entries],
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        doc = json.loads(text)
        manifest = cls(
            entries=[ManifestEntry(**e) for e in doc["entries"]],
            num_classes=doc["num_classes"],
            joint_count=doc["joint_count"],
        )
        manifest.validate()
        return manifest

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_json(Path(path).read_text())

    def filter(self, *, subjects=None, cameras=None, setups=None,
               exclude: bool = False) -> "DatasetManifest":
        """Keep entries matching the given id sets (or drop them with exclude)."""

        def match(e: ManifestEntry) -> bool:
            ok = ((subjects is None or e.subject_id in subjects)
                  and (cameras is None or e.camera_id in cameras)
                  and (setups is None or e.setup_id in setups))
            return not ok if exclude else ok

        return DatasetManifest(entries=[e for e in self.entries if match(e)],
                               num_classes=self.num_classes, joint_count=self.joint_count)


def load_sample(entry: ManifestEntry, root=None) -> SkeletonSequence:
    path = Path(entry.path)
    if root is not None and not path.is_absolute():
        path = Path(root) / path
    return read_canonical(path.read_bytes(), sample_id=entry.sample_id)
