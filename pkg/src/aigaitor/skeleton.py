"""Core domain types: skeleton topologies, keypoint sequences, camera projection.

Conventions used throughout the package (stated once, here):

- Image coordinates: origin top-left, u rightward, v downward, in pixels.
- 3D camera frame: x right, y down, z forward, in meters.
- A missing/occluded joint is encoded as confidence 0.0 with coords
  (0, 0[, 0]) rather than an absent record, so frames stay rectangular.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ProjectionError

# COCO-17 joint indices, used by the synthetic generator and gait metrics.
NOSE = 0
LEFT_EYE, RIGHT_EYE = 1, 2
LEFT_EAR, RIGHT_EAR = 3, 4
LEFT_SHOULDER, RIGHT_SHOULDER = 5, 6
LEFT_ELBOW, RIGHT_ELBOW = 7, 8
LEFT_WRIST, RIGHT_WRIST = 9, 10
LEFT_HIP, RIGHT_HIP = 11, 12
LEFT_KNEE, RIGHT_KNEE = 13, 14
LEFT_ANKLE, RIGHT_ANKLE = 15, 16


@dataclass(frozen=True)
class SkeletonTopology:
    """Named keypoint schema: joint order, parent tree, and bone list.

    Topology is data, not code; alternative schemas load from JSON documents
    of the form {name, joints:[string], parents:[int|null], bones:[[int,int]]}.
    """

    name: str
    joint_names: tuple[str, ...]
    parents: tuple[int | None, ...]
    bones: tuple[tuple[int, int], ...]

    def __post_init__(self):
        n = len(self.joint_names)
        if n < 1:
            raise ValueError("topology needs at least one joint")
        if len(self.parents) != n:
            raise ValueError(f"parents has {len(self.parents)} entries for {n} joints")
        for p in self.parents:
            if p is not None and not 0 <= p < n:
                raise ValueError(f"parent index {p} out of range for {n} joints")
        seen = set()
        for a, b in self.bones:
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"bone ({a},{b}) out of range for {n} joints")
            if a == b:
                raise ValueError(f"bone ({a},{b}) connects a joint to itself")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ValueError(f"duplicate bone {key}")
            seen.add(key)

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    def index(self, joint_name: str) -> int:
        """Joint index by name; raises KeyError listing available names."""
        try:
            return self.joint_names.index(joint_name)
        except ValueError:
            raise KeyError(
                f"joint '{joint_name}' not in topology '{self.name}' "
                f"(available: {list(self.joint_names)})"
            ) from None

    @classmethod
    def from_json(cls, doc: dict) -> "SkeletonTopology":
        return cls(
            name=doc["name"],
            joint_names=tuple(doc["joints"]),
            parents=tuple(doc["parents"]),
            bones=tuple((int(a), int(b)) for a, b in doc["bones"]),
        )

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "joints": list(self.joint_names),
            "parents": list(self.parents),
            "bones": [list(b) for b in self.bones],
        }


def _load_builtin(name: str) -> SkeletonTopology:
    text = resources.files("aigaitor.data").joinpath(f"{name}.json").read_text()
    return SkeletonTopology.from_json(json.loads(text))


_COCO17: SkeletonTopology | None = None


def coco17() -> SkeletonTopology:
    """The default 17-joint COCO keypoint topology."""
    global _COCO17
    if _COCO17 is None:
        _COCO17 = _load_builtin("coco17")
    return _COCO17


def builtin_topologies() -> dict[str, SkeletonTopology]:
    """Topologies shipped with the package, keyed by name."""
    return {"coco17": coco17()}


def load_topology(path) -> SkeletonTopology:
    with open(path) as f:
        return SkeletonTopology.from_json(json.load(f))


@dataclass(frozen=True)
class Keypoint:
    """One estimated landmark: 2D pixel or 3D camera-frame coords plus confidence."""

    coords: tuple[float, ...]
    confidence: float

    def __post_init__(self):
        if len(self.coords) not in (2, 3):
            raise ValueError("keypoint must have 2 or 3 coordinates")
        if not all(math.isfinite(c) for c in self.coords):
            raise ValueError(f"non-finite keypoint coords {self.coords}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class PoseSequence:
    """Timestamped keypoint frames at a fixed frame rate.

    Attributes:
        topology: joint schema the frames follow
        fps: frames per second, > 0
        coords: float64 array of shape (n_frames, n_joints, dims), dims in {2, 3}
        confidence: float64 array of shape (n_frames, n_joints)

    Arrays are made non-writeable on construction; sequences are immutable
    values safe to share between threads. Structural problems (ragged or
    mismatched shapes) raise here; value-level problems (non-finite coords,
    confidence out of range) are reported by :func:`validate` instead.
    """

    topology: SkeletonTopology
    fps: float
    coords: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        conf = np.asarray(self.confidence, dtype=np.float64)
        if coords.ndim != 3:
            raise ValueError(f"coords must be (frames, joints, dims), got shape {coords.shape}")
        t, j, d = coords.shape
        if d not in (2, 3):
            raise ValueError(f"dims must be 2 or 3, got {d}")
        if j != self.topology.n_joints:
            raise ValueError(
                f"frames have {j} joints but topology '{self.topology.name}' "
                f"has {self.topology.n_joints}"
            )
        if conf.shape != (t, j):
            raise ValueError(f"confidence shape {conf.shape} != {(t, j)}")
        if not self.fps > 0:
            raise ValueError(f"fps must be > 0, got {self.fps}")
        coords = np.ascontiguousarray(coords)
        conf = np.ascontiguousarray(conf)
        coords.setflags(write=False)
        conf.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "confidence", conf)

    @classmethod
    def from_frames(cls, topology, fps, frames) -> "PoseSequence":
        """Build from per-frame (n_joints, dims+1) arrays, last column = confidence."""
        frames = [np.asarray(f, dtype=np.float64) for f in frames]
        if not frames:
            raise ValueError("from_frames needs at least one frame; use empty() for none")
        shapes = {f.shape for f in frames}
        if len(shapes) != 1:
            raise ValueError(f"ragged frames: shapes {sorted(shapes)}")
        stacked = np.stack(frames)
        return cls(topology, fps, stacked[:, :, :-1], stacked[:, :, -1])

    @classmethod
    def empty(cls, topology, fps, dims) -> "PoseSequence":
        return cls(
            topology,
            fps,
            np.zeros((0, topology.n_joints, dims)),
            np.zeros((0, topology.n_joints)),
        )

    @property
    def n_frames(self) -> int:
        return self.coords.shape[0]

    @property
    def n_joints(self) -> int:
        return self.coords.shape[1]

    @property
    def dims(self) -> int:
        return self.coords.shape[2]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.fps

    def keypoint(self, frame: int, joint: int) -> Keypoint:
        return Keypoint(tuple(self.coords[frame, joint]), float(self.confidence[frame, joint]))

    def with_coords(self, coords, confidence=None) -> "PoseSequence":
        """Copy of this sequence with replaced coordinate (and optional confidence) arrays."""
        conf = self.confidence if confidence is None else confidence
        return PoseSequence(self.topology, self.fps, coords, conf)

    def equals(self, other: "PoseSequence") -> bool:
        """Bit-exact equality of data, fps, and topology."""
        return (
            self.topology == other.topology
            and self.fps == other.fps
            and self.coords.shape == other.coords.shape
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.confidence, other.confidence)
        )


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics mapping 3D camera-frame points to pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")

    @classmethod
    def from_json(cls, doc: dict) -> "CameraModel":
        return cls(
            fx=float(doc["fx"]), fy=float(doc["fy"]),
            cx=float(doc["cx"]), cy=float(doc["cy"]),
            width=int(doc["width"]), height=int(doc["height"]),
        )

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box with detection confidence."""

    x: float
    y: float
    w: float
    h: float
    confidence: float = 1.0

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError("box width/height must be non-negative")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def clamped(self, width: int, height: int) -> "BoundingBox":
        """Intersection with the image; a clamped box clamps to itself."""
        x0 = min(max(self.x, 0.0), float(width))
        y0 = min(max(self.y, 0.0), float(height))
        x1 = min(max(self.x + self.w, 0.0), float(width))
        y1 = min(max(self.y + self.h, 0.0), float(height))
        return BoundingBox(x0, y0, x1 - x0, y1 - y0, self.confidence)


def project(point, cam: CameraModel) -> tuple[float, float]:
    """Project one 3D camera-frame point (meters) to pixel coordinates.

    u = fx*x/z + cx, v = fy*y/z + cy. Raises ProjectionError when z <= 0.
    """
    x, y, z = (float(c) for c in point)
    if not z > 0:
        raise ProjectionError(f"non-positive depth z={z}")
    return (cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy)


def project_points(points: np.ndarray, cam: CameraModel, valid_mask=None) -> np.ndarray:
    """Vectorized pinhole projection of a (..., 3) array to (..., 2) pixels.

    When valid_mask is given, only masked-true entries must have positive
    depth; others are projected as garbage-in/garbage-out and should be
    ignored by the caller.
    """
    pts = np.asarray(points, dtype=np.float64)
    z = pts[..., 2]
    check = z <= 0 if valid_mask is None else (z <= 0) & valid_mask
    if np.any(check):
        idx = tuple(int(i) for i in np.argwhere(check)[0])
        raise ProjectionError(f"non-positive depth z={z[idx]} at index {idx}")
    safe_z = np.where(z > 0, z, 1.0)
    u = cam.fx * pts[..., 0] / safe_z + cam.cx
    v = cam.fy * pts[..., 1] / safe_z + cam.cy
    return np.stack([u, v], axis=-1)


def bone_lengths(seq: PoseSequence) -> np.ndarray:
    """Per-frame, per-bone Euclidean lengths in meters, shape (n_frames, n_bones).

    Only defined for 3D sequences; 2D input raises TypeError.
    """
    if seq.dims != 3:
        raise TypeError(f"bone_lengths needs a 3D sequence, got dims={seq.dims}")
    idx_a = [a for a, _ in seq.topology.bones]
    idx_b = [b for _, b in seq.topology.bones]
    if not idx_a:
        return np.zeros((seq.n_frames, 0))
    diff = seq.coords[:, idx_a, :] - seq.coords[:, idx_b, :]
    return np.linalg.norm(diff, axis=2)


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by validate(); data, not an exception."""

    kind: str
    frame: int | None = None
    joint: int | None = None
    detail: str = ""

    def __str__(self):
        where = f" frame={self.frame}" if self.frame is not None else ""
        where += f" joint={self.joint}" if self.joint is not None else ""
        return f"{self.kind}{where} {self.detail}".rstrip()


def validate(seq: PoseSequence) -> list[Violation]:
    """Every value-level invariant violation in the sequence; empty list means ok.

    Checks: finite coordinates, confidence in [0, 1]. Structural invariants
    (rectangular frames, dims, fps, topology joint count) are enforced at
    construction and cannot be violated here.
    """
    violations = []
    bad_coord = ~np.isfinite(seq.coords)
    for t, j in zip(*np.nonzero(bad_coord.any(axis=2))):
        violations.append(Violation("non_finite", int(t), int(j),
                                    f"coords {seq.coords[t, j].tolist()}"))
    conf = seq.confidence
    bad_conf = ~np.isfinite(conf) | (conf < 0.0) | (conf > 1.0)
    for t, j in zip(*np.nonzero(bad_conf)):
        violations.append(Violation("confidence_range", int(t), int(j),
                                    f"confidence {conf[t, j]}"))
    violations.sort(key=lambda v: (v.frame or 0, v.joint or 0, v.kind))
    return violations
