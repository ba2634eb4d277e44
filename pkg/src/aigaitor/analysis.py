"""Downstream gait analysis: windowing, window classification, events, metrics.

A clip is cut into fixed-length sliding windows (default 90 frames at a
60-frame stride, giving 9 windows for a 10 s 60 fps clip). Each window is
pelvis-centered and torso-scaled, classified by a small graph-convolutional
network with loadable weights, and the per-window decisions are reduced to
a single trial label by naive majority voting. Independently, heel-strike
events are detected from forward ankle displacement and summarized into
cadence, step times, and knee-angle series.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.signal import find_peaks

from .errors import AnalysisError, ConfigurationError, NormalizationError
from .skeleton import PoseSequence, SkeletonTopology


@dataclass(frozen=True)
class WindowSpec:
    window_frames: int = 90
    stride_frames: int = 60

    def __post_init__(self):
        if self.window_frames < 1 or self.stride_frames < 1:
            raise ConfigurationError("window_frames and stride_frames must be >= 1")

    @classmethod
    def from_json(cls, doc: dict) -> "WindowSpec":
        return cls(**doc)

    def to_json(self) -> dict:
        return {"window_frames": self.window_frames, "stride_frames": self.stride_frames}


@dataclass(frozen=True, eq=False)
class Window:
    """A view into a sequence: frames [start, start + len)."""

    topology: SkeletonTopology
    fps: float
    start: int
    coords: np.ndarray
    confidence: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.coords.shape[0]

    @property
    def dims(self) -> int:
        return self.coords.shape[2]


def window_count(n_frames: int, spec: WindowSpec) -> int:
    """floor((N - W)/S) + 1 complete windows; 0 when the clip is shorter than W."""
    if n_frames < spec.window_frames:
        return 0
    return (n_frames - spec.window_frames) // spec.stride_frames + 1


def make_windows(seq: PoseSequence, spec: WindowSpec) -> list[Window]:
    """Complete windows starting at 0, S, 2S, ...; a trailing partial window is dropped."""
    windows = []
    for i in range(window_count(seq.n_frames, spec)):
        start = i * spec.stride_frames
        stop = start + spec.window_frames
        windows.append(Window(seq.topology, seq.fps, start,
                              seq.coords[start:stop], seq.confidence[start:stop]))
    return windows


def normalize_window(window: Window) -> Window:
    """Pelvis-center and torso-scale a window; invariant to translation and scale.

    Per frame, the hip midpoint is subtracted from every joint; all
    coordinates are then divided by the median hip-to-shoulder-midpoint
    distance over the window. Zero-confidence joints are left at the origin.
    """
    topo = window.topology
    hips = [topo.index("left_hip"), topo.index("right_hip")]
    shoulders = [topo.index("left_shoulder"), topo.index("right_shoulder")]
    pelvis = window.coords[:, hips, :].mean(axis=1)
    shoulder_mid = window.coords[:, shoulders, :].mean(axis=1)
    scale = float(np.median(np.linalg.norm(shoulder_mid - pelvis, axis=1)))
    if scale < 1e-6:
        raise NormalizationError(
            f"degenerate torso scale {scale} in window at frame {window.start}")
    coords = (window.coords - pelvis[:, None, :]) / scale
    coords[window.confidence == 0] = 0.0
    return Window(topo, window.fps, window.start, coords, window.confidence.copy())


@dataclass(frozen=True, eq=False)
class ClassifierWeights:
    """Dense parameters of the bundled fixed-adjacency GCN window classifier.

    adjacency: (J, J) row-normalized (rows sum to 1)
    w1:        (C_in, H) per-frame feature projection
    temporal_kernel: (H, K) per-channel temporal kernel, K odd
    w_out:     (H, n_classes), b_out: (n_classes,)
    """

    adjacency: np.ndarray
    w1: np.ndarray
    temporal_kernel: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.float64)
        w1 = np.asarray(self.w1, dtype=np.float64)
        kern = np.asarray(self.temporal_kernel, dtype=np.float64)
        w_out = np.asarray(self.w_out, dtype=np.float64)
        b_out = np.asarray(self.b_out, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ConfigurationError(f"adjacency must be square, got {adj.shape}")
        row_sums = adj.sum(axis=1)
        if np.max(np.abs(row_sums - 1.0)) > 1e-6:
            raise ConfigurationError(
                f"adjacency rows must sum to 1 within 1e-6, got sums {row_sums}")
        if kern.ndim != 2 or kern.shape[1] % 2 != 1:
            raise ConfigurationError(
                f"temporal_kernel must be (H, K) with K odd, got {kern.shape}")
        hidden = w1.shape[1] if w1.ndim == 2 else -1
        if w1.ndim != 2:
            raise ConfigurationError(f"w1 must be (C_in, H), got {w1.shape}")
        if kern.shape[0] != hidden:
            raise ConfigurationError(
                f"temporal_kernel channels {kern.shape[0]} != hidden size {hidden}")
        if w_out.shape != (hidden, b_out.shape[0]):
            raise ConfigurationError(
                f"w_out shape {w_out.shape} inconsistent with hidden {hidden} "
                f"and {b_out.shape[0]} classes")
        if len(self.class_names) != b_out.shape[0]:
            raise ConfigurationError(
                f"{len(self.class_names)} class names for {b_out.shape[0]} classes")
        for name, arr in (("adjacency", adj), ("w1", w1), ("temporal_kernel", kern),
                          ("w_out", w_out), ("b_out", b_out)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n_joints(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_channels(self) -> int:
        return self.w1.shape[0]

    @property
    def n_classes(self) -> int:
        return self.b_out.shape[0]

    @classmethod
    def from_json(cls, doc: dict) -> "ClassifierWeights":
        return cls(
            adjacency=np.array(doc["adjacency"], dtype=np.float64),
            w1=np.array(doc["w1"], dtype=np.float64),
            temporal_kernel=np.array(doc["temporal_kernel"], dtype=np.float64),
            w_out=np.array(doc["w_out"], dtype=np.float64),
            b_out=np.array(doc["b_out"], dtype=np.float64),
            class_names=tuple(doc["class_names"]),
        )

    def to_json(self) -> dict:
        return {
            "adjacency": self.adjacency.tolist(),
            "w1": self.w1.tolist(),
            "temporal_kernel": self.temporal_kernel.tolist(),
            "w_out": self.w_out.tolist(),
            "b_out": self.b_out.tolist(),
            "class_names": list(self.class_names),
        }


def load_weights(path) -> ClassifierWeights:
    with open(path) as fh:
        return ClassifierWeights.from_json(json.load(fh))


def bundled_weights() -> ClassifierWeights:
    """The classifier weights shipped with the package."""
    text = resources.files("aigaitor.data").joinpath("classifier_weights.json").read_text()
    return ClassifierWeights.from_json(json.loads(text))


def classify_window(window: Window, weights: ClassifierWeights) -> np.ndarray:
    """Forward pass: per-frame graph convolution, temporal convolution, softmax.

    H1_t = relu(A_hat @ X_t @ W1); H2 = per-channel same-padding temporal
    convolution of H1 over frames; logits = mean over frames and joints of
    H2 times W_out plus b_out. Returns post-softmax scores summing to 1.
    """
    if window.coords.shape[1] != weights.n_joints:
        raise ConfigurationError(
            f"window has {window.coords.shape[1]} joints but adjacency is "
            f"{weights.n_joints}x{weights.n_joints}")
    if window.dims != weights.n_channels:
        raise ConfigurationError(
            f"window has {window.dims} coordinate channels but w1 expects "
            f"{weights.n_channels}")
    if window.n_frames < 1:
        raise ConfigurationError("window must contain at least one frame")

    x = window.coords
    h1 = np.maximum(np.einsum("ij,tjc,ch->tih", weights.adjacency, x, weights.w1), 0.0)

    n_frames, _, hidden = h1.shape
    k = weights.temporal_kernel.shape[1]
    pad = k // 2
    padded = np.zeros((n_frames + 2 * pad, h1.shape[1], hidden))
    padded[pad:pad + n_frames] = h1
    h2 = np.zeros_like(h1)
    for tap in range(k):
        h2 += padded[tap:tap + n_frames] * weights.temporal_kernel[:, tap]

    pooled = h2.mean(axis=(0, 1))
    logits = pooled @ weights.w_out + weights.b_out
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


@dataclass(frozen=True, eq=False)
class TrialResult:
    """Per-window decisions plus the majority-voted trial label."""

    per_window: tuple
    trial_class: int
    vote_counts: np.ndarray
    class_names: tuple[str, ...] | None = None

    def to_json(self) -> dict:
        doc = {
            "per_window": [
                {"class": int(c), "scores": [float(s) for s in scores]}
                for c, scores in self.per_window
            ],
            "trial_class": int(self.trial_class),
            "vote_counts": [int(v) for v in self.vote_counts],
        }
        if self.class_names is not None:
            doc["class_names"] = list(self.class_names)
            doc["trial_class_name"] = self.class_names[self.trial_class]
        return doc


def majority_vote(per_window, class_names=None) -> TrialResult:
    """Trial label = class with most window votes.

    Ties break on the highest mean score among the tied classes, then the
    lowest class index, so results are deterministic. The result is
    invariant to window order.
    """
    per_window = [(int(c), np.asarray(s, dtype=np.float64)) for c, s in per_window]
    if not per_window:
        raise AnalysisError("majority_vote needs at least one window")
    n_classes = per_window[0][1].shape[0]
    counts = np.zeros(n_classes, dtype=np.int64)
    for c, _ in per_window:
        counts[c] += 1
    best = counts.max()
    tied = [c for c in range(n_classes) if counts[c] == best]
    if len(tied) > 1:
        mean_scores = np.mean([s for _, s in per_window], axis=0)
        top = max(mean_scores[c] for c in tied)
        tied = [c for c in tied if mean_scores[c] == top]
    return TrialResult(per_window=tuple(per_window), trial_class=min(tied),
                       vote_counts=counts, class_names=class_names)


def classify_sequence(seq: PoseSequence, weights: ClassifierWeights,
                      spec: WindowSpec | None = None) -> TrialResult:
    """make_windows -> normalize -> classify -> vote, in one call."""
    spec = spec or WindowSpec()
    windows = make_windows(seq, spec)
    if not windows:
        raise AnalysisError(
            f"no complete {spec.window_frames}-frame windows in {seq.n_frames} frames")
    per_window = []
    for window in windows:
        scores = classify_window(normalize_window(window), weights)
        per_window.append((int(np.argmax(scores)), scores))
    return majority_vote(per_window, class_names=weights.class_names)


def joint_angle_series(seq: PoseSequence, center_joint: int, joint_a: int,
                       joint_b: int) -> np.ndarray:
    """Interior angle at center_joint between limbs to joint_a and joint_b, degrees.

    Frames where either limb vector is shorter than 1e-9 yield NaN (flagged
    missing, not fatal). Works for 2D and 3D sequences.
    """
    n_joints = seq.n_joints
    for idx in (center_joint, joint_a, joint_b):
        if not 0 <= idx < n_joints:
            raise IndexError(f"joint index {idx} out of range for {n_joints} joints")
    v1 = seq.coords[:, joint_a, :] - seq.coords[:, center_joint, :]
    v2 = seq.coords[:, joint_b, :] - seq.coords[:, center_joint, :]
    n1 = np.linalg.norm(v1, axis=1)
    n2 = np.linalg.norm(v2, axis=1)
    degenerate = (n1 < 1e-9) | (n2 < 1e-9)
    denom = np.where(degenerate, 1.0, n1 * n2)
    cos_angle = np.clip((v1 * v2).sum(axis=1) / denom, -1.0, 1.0)
    angles = np.degrees(np.arccos(cos_angle))
    angles[degenerate] = np.nan
    return angles


def _interp_gaps(values: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Linear interpolation over low-confidence samples."""
    if good.all():
        return values
    idx = np.arange(values.shape[0])
    return np.interp(idx, idx[good], values[good])


def detect_gait_events(seq: PoseSequence) -> dict[str, np.ndarray]:
    """Heel-strike times per side, in seconds.

    A heel strike is a local maximum of the ankle's displacement from the
    hip midpoint along the walking direction (the principal horizontal axis
    of the hip-midpoint trajectory), subject to a minimum peak separation of
    0.25 * (120 / cadence_estimate) seconds, with the cadence estimated from
    the dominant frequency of the ankle signals. Deterministic.

    Requires ankles and hips to be confidently observed in at least half the
    frames; raises AnalysisError otherwise. A trajectory whose net forward
    displacement does not exceed the ankle-swing range (standing in place)
    yields zero strikes.
    """
    topo = seq.topology
    joints = {name: topo.index(name)
              for name in ("left_ankle", "right_ankle", "left_hip", "right_hip")}
    confident = np.ones(seq.n_frames, dtype=bool)
    for idx in joints.values():
        confident &= seq.confidence[:, idx] > 0
    if seq.n_frames == 0 or confident.sum() < 0.5 * seq.n_frames:
        raise AnalysisError(
            f"ankles and hips confidently observed in only {int(confident.sum())} "
            f"of {seq.n_frames} frames (need at least half)")

    # Horizontal plane: (x, z) for camera-frame 3D (y is down), full (u, v) for 2D.
    cols = [0, 2] if seq.dims == 3 else [0, 1]
    hip_mid = seq.coords[:, [joints["left_hip"], joints["right_hip"]], :].mean(axis=1)
    horiz = np.stack([_interp_gaps(hip_mid[:, c], confident) for c in cols], axis=1)

    centered = horiz[confident] - horiz[confident].mean(axis=0)
    cov = centered.T @ centered
    eigvals, eigvecs = np.linalg.eigh(cov)
    direction = eigvecs[:, int(np.argmax(eigvals))]
    travel = horiz[-1] - horiz[0]
    if float(travel @ direction) < 0:
        direction = -direction

    signals = {}
    for side in ("left", "right"):
        ankle = np.stack(
            [_interp_gaps(seq.coords[:, joints[f"{side}_ankle"], c], confident)
             for c in cols], axis=1)
        signals[side] = (ankle - horiz) @ direction

    swing_range = max(float(s.max() - s.min()) for s in signals.values())
    net_forward = abs(float(travel @ direction))
    if swing_range < 1e-12 or net_forward <= swing_range:
        return {"left": np.zeros(0), "right": np.zeros(0)}

    spectrum = np.zeros(seq.n_frames // 2 + 1)
    for s in signals.values():
        spectrum += np.abs(np.fft.rfft(s - s.mean()))
    freqs = np.fft.rfftfreq(seq.n_frames, d=1.0 / seq.fps)
    dominant = float(freqs[1:][int(np.argmax(spectrum[1:]))]) if len(freqs) > 1 else 0.0
    cadence_estimate = min(max(120.0 * dominant, 20.0), 240.0)
    separation_s = 0.25 * (120.0 / cadence_estimate)
    distance = max(1, round(separation_s * seq.fps))

    strikes = {}
    for side, signal in signals.items():
        prominence = 0.05 * (signal.max() - signal.min())
        peaks, _ = find_peaks(signal, distance=distance, prominence=prominence)
        strikes[side] = peaks / seq.fps
    return strikes


@dataclass(frozen=True, eq=False)
class GaitMetrics:
    """Trial-level clinical summary: cadence, step times, events, angle series."""

    cadence_steps_per_min: float | None
    mean_step_time_s: dict[str, float | None]
    heel_strike_times_s: dict[str, np.ndarray]
    joint_angle_series_deg: dict[str, np.ndarray] = field(default_factory=dict)
    fps: float = 0.0

    def to_json(self) -> dict:
        def clean(values):
            return [None if math.isnan(v) else float(v) for v in values]

        return {
            "cadence_steps_per_min": self.cadence_steps_per_min,
            "mean_step_time_s": dict(self.mean_step_time_s),
            "heel_strike_times_s": {k: [float(t) for t in v]
                                    for k, v in self.heel_strike_times_s.items()},
            "joint_angle_series_deg": {k: clean(v)
                                       for k, v in self.joint_angle_series_deg.items()},
        }

    def angle_csv_rows(self) -> list[list]:
        """One row per frame: frame index, time, then each named angle series."""
        names = sorted(self.joint_angle_series_deg)
        n = max((len(v) for v in self.joint_angle_series_deg.values()), default=0)
        rows = [["frame", "time_s"] + names]
        for t in range(n):
            row = [t, t / self.fps if self.fps else 0.0]
            for name in names:
                value = self.joint_angle_series_deg[name][t]
                row.append("" if math.isnan(value) else float(value))
            rows.append(row)
        return rows


def compute_metrics(seq: PoseSequence) -> GaitMetrics:
    """Cadence, per-side step times, heel strikes, and knee-angle series.

    cadence = 60 * (total strikes - 1) / (last - first strike time); with
    fewer than two strikes it is reported as missing (None). Step times are
    successive inter-strike intervals, attributed to the side whose strike
    ends the interval.
    """
    strikes = detect_gait_events(seq)
    merged = sorted(
        [(float(t), side) for side in strikes for t in strikes[side]])
    if len(merged) >= 2:
        first, last = merged[0][0], merged[-1][0]
        cadence = 60.0 * (len(merged) - 1) / (last - first) if last > first else None
    else:
        cadence = None

    intervals: dict[str, list[float]] = {"left": [], "right": []}
    for (t_prev, _), (t_cur, side) in zip(merged, merged[1:]):
        intervals[side].append(t_cur - t_prev)
    mean_step_time = {
        side: (sum(vals) / len(vals) if vals else None)
        for side, vals in intervals.items()
    }

    topo = seq.topology
    angles = {}
    for side in ("left", "right"):
        angles[f"{side}_knee_deg"] = joint_angle_series(
            seq, topo.index(f"{side}_knee"), topo.index(f"{side}_hip"),
            topo.index(f"{side}_ankle"))

    return GaitMetrics(
        cadence_steps_per_min=cadence,
        mean_step_time_s=mean_step_time,
        heel_strike_times_s=strikes,
        joint_angle_series_deg=angles,
        fps=seq.fps,
    )
