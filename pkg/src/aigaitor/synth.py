"""Closed-form synthetic gait generator with analytically known ground truth.

The generator trades physiological realism for exactness: sinusoidal ankle
trajectories, knees placed by two-bone inverse kinematics so limb lengths
are rigid every frame, and heel strikes defined at the analytic maxima of
the forward ankle offset. That makes limb lengths, event times, cadence,
and knee angles available in closed form for testing the refinement and
gait-metric stages against.

Internally the walk lives in a world frame (x lateral toward the subject's
left, y up, z forward); the emitted sequence is posed into the camera frame
of a laterally placed camera (subject crosses the image left to right).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import skeleton as sk
from .errors import ParameterError, ProjectionError
from .skeleton import CameraModel, PoseSequence, coco17, project_points

# Rigid body-frame offsets (meters). Upper-body joints follow the pelvis.
HIP_HALF_WIDTH = 0.10
ANKLE_HEIGHT = 0.05
SHOULDER_HALF_WIDTH = 0.17
TORSO_LENGTH = 0.55
DEFAULT_STANDOFF_M = 4.0


@dataclass(frozen=True)
class GaitParams:
    """Parameters of the synthetic walk; thigh and shank both equal leg_segment_m."""

    duration_s: float = 10.0
    fps: float = 60.0
    cadence_steps_per_min: float = 120.0
    step_length_m: float = 0.5
    leg_segment_m: float = 0.45
    pelvis_height_m: float = 0.8
    lateral_sway_amp_m: float = 0.02
    noise_seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ParameterError(f"duration_s must be positive, got {self.duration_s}")
        if self.fps < 1:
            raise ParameterError(f"fps must be >= 1, got {self.fps}")
        if not 20 <= self.cadence_steps_per_min <= 240:
            raise ParameterError(
                f"cadence must be in [20, 240] steps/min, got {self.cadence_steps_per_min}")
        if self.step_length_m < 0:
            raise ParameterError(f"step_length_m must be >= 0, got {self.step_length_m}")
        if self.leg_segment_m <= 0:
            raise ParameterError(f"leg_segment_m must be positive, got {self.leg_segment_m}")
        if self.pelvis_height_m <= 0:
            raise ParameterError(f"pelvis_height_m must be positive, got {self.pelvis_height_m}")
        if self.lateral_sway_amp_m < 0:
            raise ParameterError(
                f"lateral_sway_amp_m must be >= 0, got {self.lateral_sway_amp_m}")

    @property
    def n_frames(self) -> int:
        return round(self.duration_s * self.fps)

    @property
    def stride_freq_hz(self) -> float:
        """Per-leg cycle frequency: cadence/120 (two steps per stride)."""
        return self.cadence_steps_per_min / 120.0

    @property
    def forward_speed_mps(self) -> float:
        return self.step_length_m * self.cadence_steps_per_min / 60.0

    @classmethod
    def from_json(cls, doc: dict) -> "GaitParams":
        return cls(**doc)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Analytic truth for a generated walk: strike times, cadence, clean pose."""

    params: GaitParams
    right_heel_strikes: np.ndarray
    left_heel_strikes: np.ndarray
    cadence_steps_per_min: float
    step_length_m: float
    pose: PoseSequence

    def strikes(self, side: str) -> np.ndarray:
        if side == "right":
            return self.right_heel_strikes
        if side == "left":
            return self.left_heel_strikes
        raise KeyError(f"side must be 'left' or 'right', got {side!r}")

    def knee_angle_deg(self, side: str, times) -> np.ndarray:
        """Closed-form interior knee angle (hip-knee-ankle) at given times, degrees."""
        p = self.params
        t = np.asarray(times, dtype=np.float64)
        phase = 0.0 if side == "right" else math.pi
        off = (p.step_length_m / 2.0) * np.sin(2 * math.pi * p.stride_freq_hz * t + phase)
        sway = p.lateral_sway_amp_m * np.sin(2 * math.pi * p.stride_freq_hz * t)
        d_sq = sway**2 + (p.pelvis_height_m - ANKLE_HEIGHT) ** 2 + off**2
        cos_angle = 1.0 - d_sq / (2.0 * p.leg_segment_m**2)
        return np.degrees(np.arccos(np.clip(cos_angle, -1.0, 1.0)))

    def to_json(self) -> dict:
        """Sidecar document: everything except the pose arrays (those live in .aigk)."""
        return {
            "params": self.params.to_json(),
            "right_heel_strikes_s": self.right_heel_strikes.tolist(),
            "left_heel_strikes_s": self.left_heel_strikes.tolist(),
            "cadence_steps_per_min": self.cadence_steps_per_min,
            "step_length_m": self.step_length_m,
        }


def _strike_times(params: GaitParams, phase: float) -> np.ndarray:
    """Analytic maxima of the forward ankle offset within [0, duration)."""
    if params.step_length_m == 0:
        return np.zeros(0)
    f = params.stride_freq_hz
    first = ((math.pi / 2.0 - phase) % (2.0 * math.pi)) / (2.0 * math.pi * f)
    n = math.ceil((params.duration_s - first) * f - 1e-12)
    return first + np.arange(max(n, 0)) / f


def _ik_knee(hip: np.ndarray, ankle: np.ndarray, segment: float, frame: int) -> np.ndarray:
    """Two-bone IK: knee position such that both segments have exact length."""
    diff = ankle - hip
    d = float(np.linalg.norm(diff))
    if d < 1e-9:
        raise ParameterError(f"hip and ankle coincide at frame {frame}")
    if d > 2.0 * segment:
        raise ParameterError(
            f"ankle unreachable at frame {frame}: hip-ankle distance {d:.4f} m "
            f"exceeds 2*leg_segment = {2 * segment:.4f} m"
        )
    u = diff / d
    height = math.sqrt(max(segment**2 - (d / 2.0) ** 2, 0.0))
    # Knees bend toward world +z (forward).
    bend = np.array([0.0, 0.0, 1.0]) - u[2] * u
    norm = float(np.linalg.norm(bend))
    if norm < 1e-9:
        bend, norm = np.array([1.0, 0.0, 0.0]) - u[0] * u, 1.0
    return (hip + ankle) / 2.0 + (height / norm) * bend


def generate(params: GaitParams,
             standoff_m: float = DEFAULT_STANDOFF_M) -> tuple[PoseSequence, GroundTruth]:
    """Synthesize a 3D camera-frame walk and its analytic ground truth.

    The pelvis advances at step_length*cadence/60 m/s along world +z; each
    ankle's forward offset from the pelvis is (step_length/2)*sin(2*pi*f*t
    + phase) with f = cadence/120 and phases pi apart between sides. All
    confidences are 1. Raises ParameterError if the ankle is ever farther
    than two leg segments from the hip.
    """
    topo = coco17()
    n = params.n_frames
    t = np.arange(n) / params.fps
    f = params.stride_freq_hz
    speed = params.forward_speed_mps

    sway = params.lateral_sway_amp_m * np.sin(2 * math.pi * f * t)
    pelvis = np.stack([sway, np.full(n, params.pelvis_height_m), speed * t], axis=1)

    world = np.zeros((n, topo.n_joints, 3))

    def rigid(joint, dx, dy, dz):
        world[:, joint] = pelvis + np.array([dx, dy, dz])

    rigid(sk.NOSE, 0.0, TORSO_LENGTH + 0.23, 0.08)
    rigid(sk.LEFT_EYE, 0.035, TORSO_LENGTH + 0.27, 0.05)
    rigid(sk.RIGHT_EYE, -0.035, TORSO_LENGTH + 0.27, 0.05)
    rigid(sk.LEFT_EAR, 0.08, TORSO_LENGTH + 0.25, -0.01)
    rigid(sk.RIGHT_EAR, -0.08, TORSO_LENGTH + 0.25, -0.01)
    rigid(sk.LEFT_SHOULDER, SHOULDER_HALF_WIDTH, TORSO_LENGTH, 0.0)
    rigid(sk.RIGHT_SHOULDER, -SHOULDER_HALF_WIDTH, TORSO_LENGTH, 0.0)
    rigid(sk.LEFT_ELBOW, SHOULDER_HALF_WIDTH + 0.03, TORSO_LENGTH - 0.28, 0.0)
    rigid(sk.RIGHT_ELBOW, -SHOULDER_HALF_WIDTH - 0.03, TORSO_LENGTH - 0.28, 0.0)
    rigid(sk.LEFT_WRIST, SHOULDER_HALF_WIDTH + 0.05, TORSO_LENGTH - 0.55, 0.02)
    rigid(sk.RIGHT_WRIST, -SHOULDER_HALF_WIDTH - 0.05, TORSO_LENGTH - 0.55, 0.02)
    rigid(sk.LEFT_HIP, HIP_HALF_WIDTH, 0.0, 0.0)
    rigid(sk.RIGHT_HIP, -HIP_HALF_WIDTH, 0.0, 0.0)

    half_step = params.step_length_m / 2.0
    for side_sign, phase, ankle_j, knee_j, hip_j in (
        (1.0, math.pi, sk.LEFT_ANKLE, sk.LEFT_KNEE, sk.LEFT_HIP),
        (-1.0, 0.0, sk.RIGHT_ANKLE, sk.RIGHT_KNEE, sk.RIGHT_HIP),
    ):
        offset = half_step * np.sin(2 * math.pi * f * t + phase)
        world[:, ankle_j, 0] = side_sign * HIP_HALF_WIDTH
        world[:, ankle_j, 1] = ANKLE_HEIGHT
        world[:, ankle_j, 2] = speed * t + offset
        for k in range(n):
            world[k, knee_j] = _ik_knee(
                world[k, hip_j], world[k, ankle_j], params.leg_segment_m, k)

    # Pose into the camera frame of a laterally placed camera:
    # x_cam = forward progress (centered), y_cam = down, z_cam = depth.
    cam_coords = np.empty_like(world)
    cam_coords[:, :, 0] = world[:, :, 2] - speed * params.duration_s / 2.0
    cam_coords[:, :, 1] = params.pelvis_height_m - world[:, :, 1]
    cam_coords[:, :, 2] = world[:, :, 0] + standoff_m

    pose = PoseSequence(topo, params.fps, cam_coords, np.ones((n, topo.n_joints)))
    truth = GroundTruth(
        params=params,
        right_heel_strikes=_strike_times(params, 0.0),
        left_heel_strikes=_strike_times(params, math.pi),
        cadence_steps_per_min=params.cadence_steps_per_min,
        step_length_m=params.step_length_m,
        pose=pose,
    )
    return pose, truth


def add_noise(seq: PoseSequence, sigma: float, seed: int) -> PoseSequence:
    """Seeded Gaussian perturbation per coordinate; sigma in meters (3D) or pixels (2D).

    Confidences are redrawn uniform in [0.5, 1]. sigma = 0 returns the input
    unchanged. Identical seed implies identical output; all randomness flows
    through the explicit seed.
    """
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return seq
    rng = np.random.default_rng(seed)
    coords = seq.coords + rng.normal(0.0, sigma, seq.coords.shape)
    confidence = rng.uniform(0.5, 1.0, seq.confidence.shape)
    return seq.with_coords(coords, confidence)


def project_sequence(seq: PoseSequence, cam: CameraModel) -> PoseSequence:
    """Project a 3D sequence to 2D pixel observations; confidences are copied."""
    if seq.dims != 3:
        raise TypeError(f"project_sequence needs a 3D sequence, got dims={seq.dims}")
    depths = seq.coords[:, :, 2]
    bad = depths <= 0
    if np.any(bad):
        t, j = (int(i) for i in np.argwhere(bad)[0])
        raise ProjectionError(
            f"non-positive depth z={depths[t, j]} at frame {t}, joint {j}")
    pixels = project_points(seq.coords, cam)
    return PoseSequence(seq.topology, seq.fps, pixels, seq.confidence)


def default_camera() -> CameraModel:
    """A 1080p pinhole camera suited to the generator's default standoff."""
    return CameraModel(fx=1000.0, fy=1000.0, cx=960.0, cy=540.0, width=1920, height=1080)


def load_params(path) -> GaitParams:
    with open(path) as fh:
        return GaitParams.from_json(json.load(fh))
