"""Compact binary pose-file serialization (.aigk) and video-vs-pose size accounting.

Byte layout (normative, bit-exact, little-endian throughout):

    offset  size  field
    0       4     magic "AIGK"
    4       1     version, unsigned 8-bit, = 1
    5       1     dims, unsigned 8-bit, 2 or 3
    6       2     n_keypoints, unsigned 16-bit
    8       4     n_frames, unsigned 32-bit
    12      4     fps, 32-bit float
    16      2     topology name length in bytes, unsigned 16-bit
    18      n     topology name, UTF-8
    18+n    -     payload: n_frames * n_keypoints * (dims+1) 32-bit floats,
                  frame-major, joint-minor, coords then confidence

Values are stored as 32-bit floats, so encode/decode round-trips are
bit-exact for float32-representable data. The header carries the topology
by name only; the full topology travels in a sidecar JSON document. A pose
file contains no pixels, faces, or background imagery.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, TruncationError, ValidationError
from .skeleton import PoseSequence, SkeletonTopology, builtin_topologies, validate

MAGIC = b"AIGK"
VERSION = 1
_HEADER = struct.Struct("<4sBBHIfH")
FILE_EXTENSION = ".aigk"


def header_size(topology_name: str) -> int:
    return _HEADER.size + len(topology_name.encode("utf-8"))


def payload_size(n_frames: int, n_keypoints: int, dims: int) -> int:
    return n_frames * n_keypoints * (dims + 1) * 4


def encoded_size(seq: PoseSequence) -> int:
    """Exact on-disk size in bytes: header + payload, no compression."""
    return header_size(seq.topology.name) + payload_size(seq.n_frames, seq.n_joints, seq.dims)


def encode(seq: PoseSequence) -> bytes:
    """Serialize a validated sequence to .aigk bytes."""
    violations = validate(seq)
    if violations:
        raise ValidationError(
            f"cannot encode invalid sequence ({len(violations)} violations, "
            f"first: {violations[0]})",
            violations,
        )
    name = seq.topology.name.encode("utf-8")
    header = _HEADER.pack(
        MAGIC, VERSION, seq.dims, seq.n_joints, seq.n_frames, seq.fps, len(name)
    )
    payload = np.concatenate(
        [seq.coords, seq.confidence[:, :, None]], axis=2
    ).astype("<f4").tobytes()
    return header + name + payload


def decode(data: bytes, topology: SkeletonTopology | None = None) -> PoseSequence:
    """Exact inverse of encode.

    Topology resolution: an explicitly passed topology wins (its joint count
    must match the header); otherwise the header name is looked up among the
    built-in topologies; unknown names get a placeholder topology with
    generic joint names and no bones.
    """
    if len(data) < _HEADER.size:
        raise TruncationError(_HEADER.size, len(data))
    magic, version, dims, n_kp, n_frames, fps, name_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}, expected {VERSION}")
    if dims not in (2, 3):
        raise FormatError(f"dims must be 2 or 3, got {dims}")
    if not math.isfinite(fps) or fps <= 0:
        raise FormatError(f"fps must be finite and positive, got {fps}")
    name_end = _HEADER.size + name_len
    if len(data) < name_end:
        raise TruncationError(name_end, len(data))
    name = data[_HEADER.size:name_end].decode("utf-8")

    expected = payload_size(n_frames, n_kp, dims)
    actual = len(data) - name_end
    if actual != expected:
        raise TruncationError(expected, actual)

    if topology is not None:
        if topology.n_joints != n_kp:
            raise FormatError(
                f"file has {n_kp} keypoints but topology '{topology.name}' "
                f"has {topology.n_joints}"
            )
    else:
        topology = builtin_topologies().get(name)
        if topology is not None and topology.n_joints != n_kp:
            topology = None
        if topology is None:
            topology = SkeletonTopology(
                name=name,
                joint_names=tuple(f"kp{i:02d}" for i in range(n_kp)),
                parents=(None,) * n_kp,
                bones=(),
            )

    flat = np.frombuffer(data, dtype="<f4", offset=name_end)
    arr = flat.reshape(n_frames, n_kp, dims + 1).astype(np.float64)
    return PoseSequence(topology, fps, arr[:, :, :dims], arr[:, :, dims])


def read_pose_file(path, topology: SkeletonTopology | None = None) -> PoseSequence:
    with open(path, "rb") as f:
        return decode(f.read(), topology)


def write_pose_file(path, seq: PoseSequence) -> int:
    data = encode(seq)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


@dataclass(frozen=True)
class VideoProfile:
    """Size metadata of a source video clip; no pixels are ever handled here."""

    duration_s: float
    fps: float
    width: int
    height: int
    size_bytes: int

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValueError("video size must be positive")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")

    @property
    def bitrate_bps(self) -> float:
        return self.size_bytes * 8 / self.duration_s


# The benchmark reference clip: 10 s of 4K 60 fps video, 27.7 MB on disk.
CLIP_4K60_10S = VideoProfile(duration_s=10.0, fps=60.0, width=3840, height=2160,
                             size_bytes=27_700_000)


@dataclass(frozen=True)
class SizeReduction:
    ratio: float
    orders_of_magnitude: float


def size_reduction(video: VideoProfile, seq: PoseSequence) -> SizeReduction:
    """How much smaller the encoded pose file is than its source video.

    ratio = video bytes / encoded pose bytes; orders_of_magnitude = log10(ratio).
    """
    pose_bytes = encoded_size(seq)
    ratio = video.size_bytes / pose_bytes
    return SizeReduction(ratio=ratio, orders_of_magnitude=math.log10(ratio))
