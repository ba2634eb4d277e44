"""Deterministic edge-vs-cloud latency composition.

Stage costs are modeled per frame, per window, per token, or as fixed
overheads; network transfers as payload/bandwidth plus a fixed per-transfer
overhead. Pipelines sum their stage and transfer times, minus a documented
correction for preprocessing shared between stages that consume the same
decoded video. Everything is a pure function of its inputs: identical specs
produce identical reports, bit for bit.

The bundled profile and pipeline files encode a published benchmark of an
iPhone 14 (A15 Bionic) against an NVIDIA H200 cloud server, row by row, and
`run_golden` checks the simulator against that table's end-to-end cells at
stated tolerances.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

from .analysis import WindowSpec, window_count
from .errors import ConfigurationError, InconsistencyError

STAGE_KINDS = ("per_frame", "per_window", "per_token", "fixed")
PLACEMENTS = ("device", "cloud")
POLICIES = ("none", "subtract_min", "subtract_max")

# Calibrated so the bandwidth formula reproduces both published transfer
# rows (16 s at 15 Mbps, 2.0 s at 300 Mbps) for the 27.7 MB reference clip.
DEFAULT_LINK_OVERHEAD_S = 1.25


@dataclass(frozen=True)
class StageProfile:
    """Latency parameterization of one pipeline stage on one device class."""

    name: str
    kind: str
    per_frame_ms: float = 0.0
    per_window_ms: float = 0.0
    prefill_ms_per_token: float = 0.0
    decode_ms_per_token: float = 0.0
    fixed_overhead_s: float = 0.0
    shares_decoded_input: bool = False
    metadata: dict = field(default_factory=dict)

    _USED = {
        "per_frame": ("per_frame_ms",),
        "per_window": ("per_window_ms",),
        "per_token": ("prefill_ms_per_token", "decode_ms_per_token"),
        "fixed": (),
    }

    def __post_init__(self):
        if self.kind not in STAGE_KINDS:
            raise ConfigurationError(
                f"stage '{self.name}': kind must be one of {STAGE_KINDS}, got {self.kind!r}")
        rate_fields = ("per_frame_ms", "per_window_ms",
                       "prefill_ms_per_token", "decode_ms_per_token")
        used = self._USED[self.kind]
        for f_name in rate_fields + ("fixed_overhead_s",):
            value = getattr(self, f_name)
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(
                    f"stage '{self.name}': {f_name} must be non-negative and finite, "
                    f"got {value}")
            if f_name in rate_fields and f_name not in used and value != 0.0:
                raise ConfigurationError(
                    f"stage '{self.name}': {f_name} must be zero for kind "
                    f"'{self.kind}', got {value}")

    @classmethod
    def from_json(cls, name: str, doc: dict) -> "StageProfile":
        return cls(
            name=name,
            kind=doc["kind"],
            per_frame_ms=float(doc.get("per_frame_ms", 0.0)),
            per_window_ms=float(doc.get("per_window_ms", 0.0)),
            prefill_ms_per_token=float(doc.get("prefill_ms_per_token", 0.0)),
            decode_ms_per_token=float(doc.get("decode_ms_per_token", 0.0)),
            fixed_overhead_s=float(doc.get("fixed_overhead_s", 0.0)),
            shares_decoded_input=bool(doc.get("shares_decoded_input", False)),
            metadata=dict(doc.get("metadata", {})),
        )


@dataclass(frozen=True)
class NetworkLink:
    """Transfer model: payload_bits/bandwidth plus a fixed per-transfer overhead."""

    bandwidth_mbps: float
    fixed_overhead_s: float = DEFAULT_LINK_OVERHEAD_S

    def __post_init__(self):
        if not self.bandwidth_mbps > 0:
            raise ConfigurationError(f"bandwidth must be positive, got {self.bandwidth_mbps}")
        if self.fixed_overhead_s < 0:
            raise ConfigurationError(f"link overhead must be >= 0, got {self.fixed_overhead_s}")


@dataclass(frozen=True)
class ClipSpec:
    duration_s: float
    fps: float
    n_frames: int

    def __post_init__(self):
        if self.n_frames != round(self.duration_s * self.fps):
            raise ConfigurationError(
                f"n_frames {self.n_frames} != duration*fps = "
                f"{self.duration_s * self.fps}")


CLIP_10S_60FPS = ClipSpec(duration_s=10.0, fps=60.0, n_frames=600)


@dataclass(frozen=True)
class TokenCounts:
    input_tokens: int
    output_tokens: int

    @classmethod
    def from_json(cls, doc: dict) -> "TokenCounts":
        return cls(input_tokens=int(doc["in"]), output_tokens=int(doc["out"]))

    def to_json(self) -> dict:
        return {"in": self.input_tokens, "out": self.output_tokens}


def transfer_time(payload_bytes: float, link: NetworkLink) -> float:
    """Seconds to move a payload over the link; an empty payload is free."""
    if payload_bytes < 0:
        raise ConfigurationError(f"payload must be >= 0, got {payload_bytes}")
    if payload_bytes == 0:
        return 0.0
    return payload_bytes * 8.0 / (link.bandwidth_mbps * 1e6) + link.fixed_overhead_s


def stage_time(stage: StageProfile, clip: ClipSpec,
               window_spec: WindowSpec | None = None,
               tokens: TokenCounts | None = None) -> float:
    """Seconds one stage takes on the given clip."""
    if stage.kind == "per_frame":
        return clip.n_frames * stage.per_frame_ms / 1000.0 + stage.fixed_overhead_s
    if stage.kind == "per_window":
        if window_spec is None:
            raise ConfigurationError(
                f"stage '{stage.name}' is per_window but no window spec was given")
        n_windows = window_count(clip.n_frames, window_spec)
        return n_windows * stage.per_window_ms / 1000.0 + stage.fixed_overhead_s
    if stage.kind == "per_token":
        if tokens is None:
            raise ConfigurationError(
                f"stage '{stage.name}' is per_token but no token counts were given")
        ms = (tokens.input_tokens * stage.prefill_ms_per_token
              + tokens.output_tokens * stage.decode_ms_per_token)
        return ms / 1000.0 + stage.fixed_overhead_s
    return stage.fixed_overhead_s


def calibrate_overhead(observed_e2e_s: float, per_frame_ms: float, n_frames: int) -> float:
    """Fixed overhead implied by an observed end-to-end time and a per-frame rate."""
    overhead = observed_e2e_s - n_frames * per_frame_ms / 1000.0
    if overhead < 0:
        raise InconsistencyError(
            f"observed {observed_e2e_s} s is less than the per-frame total "
            f"{n_frames * per_frame_ms / 1000.0} s")
    return overhead


def decode_prefill_ratio(stage: StageProfile) -> float:
    """How many times more one decoded token costs than one prefilled token."""
    if stage.kind != "per_token":
        raise ConfigurationError(f"stage '{stage.name}' is not per_token")
    if stage.prefill_ms_per_token == 0:
        raise ConfigurationError(f"stage '{stage.name}' has zero prefill rate")
    return stage.decode_ms_per_token / stage.prefill_ms_per_token


@dataclass(frozen=True)
class PipelineSpec:
    """Ordered stages with a placement, transfer payloads, and clip geometry."""

    name: str
    placement: str
    stages: tuple[str, ...]
    uploads_bytes: tuple[int, ...] = ()
    downloads_bytes: tuple[int, ...] = ()
    clip: ClipSpec = CLIP_10S_60FPS
    window_spec: WindowSpec = WindowSpec()
    token_counts: TokenCounts | None = None
    shared_overhead_policy: str | None = None

    def __post_init__(self):
        if self.placement not in PLACEMENTS:
            raise ConfigurationError(
                f"placement must be one of {PLACEMENTS}, got {self.placement!r}")
        if self.placement == "device" and (self.uploads_bytes or self.downloads_bytes):
            raise ConfigurationError(
                f"pipeline '{self.name}': device placement must have empty transfer lists")
        if self.shared_overhead_policy is not None and \
                self.shared_overhead_policy not in POLICIES:
            raise ConfigurationError(
                f"policy must be one of {POLICIES}, got {self.shared_overhead_policy!r}")

    @property
    def effective_policy(self) -> str:
        """Documented defaults: subtract_max on device, subtract_min on cloud."""
        if self.shared_overhead_policy is not None:
            return self.shared_overhead_policy
        return "subtract_max" if self.placement == "device" else "subtract_min"

    @classmethod
    def from_json(cls, doc: dict) -> "PipelineSpec":
        tokens = doc.get("tokens")
        return cls(
            name=doc["name"],
            placement=doc["placement"],
            stages=tuple(doc["stages"]),
            uploads_bytes=tuple(int(b) for b in doc.get("uploads_bytes", [])),
            downloads_bytes=tuple(int(b) for b in doc.get("downloads_bytes", [])),
            clip=ClipSpec(**doc["clip"]),
            window_spec=WindowSpec.from_json(doc.get(
                "window", {"window_frames": 90, "stride_frames": 60})),
            token_counts=TokenCounts.from_json(tokens) if tokens else None,
            shared_overhead_policy=doc.get("shared_overhead_policy"),
        )


@dataclass(frozen=True)
class LatencyReport:
    """Per-stage and transfer seconds, the shared-overhead correction, and the total."""

    pipeline: str
    placement: str
    policy: str
    stage_seconds: dict[str, float]
    upload_seconds: tuple[float, ...]
    download_seconds: tuple[float, ...]
    shared_overhead_correction: float
    total_s: float
    gain_vs_comparison: float | None = None

    def to_json(self) -> dict:
        doc = asdict(self)
        if self.gain_vs_comparison is None:
            doc.pop("gain_vs_comparison")
        return doc

    def to_csv_rows(self) -> list[list]:
        rows = [["component", "seconds"]]
        rows += [[name, s] for name, s in self.stage_seconds.items()]
        rows += [[f"upload_{i}", s] for i, s in enumerate(self.upload_seconds)]
        rows += [[f"download_{i}", s] for i, s in enumerate(self.download_seconds)]
        rows.append(["shared_overhead_correction", -self.shared_overhead_correction])
        rows.append(["total", self.total_s])
        return rows


def pipeline_time(spec: PipelineSpec, profiles: dict[str, StageProfile],
                  link: NetworkLink | None = None) -> LatencyReport:
    """Compose stage and transfer times into an end-to-end report.

    total = sum(stage times) + sum(transfer times) - correction, where the
    correction removes (k-1) copies of the largest (subtract_max) or smallest
    (subtract_min) fixed overhead among the k stages marked as sharing the
    decoded input, modeling preprocessing paid once rather than per stage.
    """
    stage_seconds: dict[str, float] = {}
    shared_overheads = []
    for name in spec.stages:
        if name not in profiles:
            raise ConfigurationError(
                f"pipeline '{spec.name}' references unknown stage '{name}' "
                f"(known: {sorted(profiles)})")
        stage = profiles[name]
        stage_seconds[name] = stage_time(stage, spec.clip, spec.window_spec,
                                         spec.token_counts)
        if stage.shares_decoded_input:
            shared_overheads.append(stage.fixed_overhead_s)

    if (spec.uploads_bytes or spec.downloads_bytes) and link is None:
        raise ConfigurationError(
            f"pipeline '{spec.name}' has transfers but no network link was given")
    uploads = tuple(transfer_time(b, link) for b in spec.uploads_bytes)
    downloads = tuple(transfer_time(b, link) for b in spec.downloads_bytes)

    policy = spec.effective_policy
    correction = 0.0
    if policy != "none" and len(shared_overheads) >= 2:
        extreme = max(shared_overheads) if policy == "subtract_max" else min(shared_overheads)
        correction = (len(shared_overheads) - 1) * extreme

    total = sum(stage_seconds.values()) + sum(uploads) + sum(downloads) - correction
    return LatencyReport(
        pipeline=spec.name,
        placement=spec.placement,
        policy=policy,
        stage_seconds=stage_seconds,
        upload_seconds=uploads,
        download_seconds=downloads,
        shared_overhead_correction=correction,
        total_s=total,
    )


def compare(device_report: LatencyReport, cloud_report: LatencyReport) -> float:
    """Gain of running on-device: cloud total divided by device total."""
    if device_report.total_s <= 0 or cloud_report.total_s <= 0:
        raise ConfigurationError("compare needs positive totals on both reports")
    return cloud_report.total_s / device_report.total_s


def with_gain(report: LatencyReport, gain: float) -> LatencyReport:
    return replace(report, gain_vs_comparison=gain)


# ---------------------------------------------------------------------------
# Bundled data: benchmark profiles, pipeline specs, and the golden dataset.

def _read_data(filename: str) -> dict:
    text = resources.files("aigaitor.data").joinpath(filename).read_text()
    return json.loads(text)


def profiles_from_json(doc: dict) -> dict[str, dict[str, StageProfile]]:
    """Parse a profile-set document: {\"profile_sets\": {set_name: {stage: {...}}}}."""
    sets = {}
    for set_name, stages in doc["profile_sets"].items():
        sets[set_name] = {
            name: StageProfile.from_json(name, stage_doc)
            for name, stage_doc in stages.items()
        }
    return sets


def load_profiles(path) -> dict[str, dict[str, StageProfile]]:
    with open(path) as fh:
        return profiles_from_json(json.load(fh))


def builtin_profiles() -> dict[str, dict[str, StageProfile]]:
    """Device (iPhone 14) and cloud (H200 server) stage profiles from the benchmark."""
    return profiles_from_json(_read_data("table2_profiles.json"))


def load_pipeline_spec(path) -> PipelineSpec:
    with open(path) as fh:
        return PipelineSpec.from_json(json.load(fh))


BUILTIN_PIPELINES = ("time_priority_device", "time_priority_cloud",
                     "quality_priority_device", "quality_priority_cloud")


def builtin_pipeline(name: str) -> PipelineSpec:
    if name not in BUILTIN_PIPELINES:
        raise ConfigurationError(
            f"unknown bundled pipeline '{name}' (available: {BUILTIN_PIPELINES})")
    text = resources.files("aigaitor.data").joinpath(
        "pipelines", f"{name}.json").read_text()
    return PipelineSpec.from_json(json.loads(text))


def load_golden() -> dict:
    """The shipped table2 golden dataset: benchmark cell values and tolerances."""
    return _read_data("table2_golden.json")


@dataclass(frozen=True)
class GoldenCheck:
    name: str
    computed: float
    expected: float
    tolerance: str
    passed: bool

    def to_json(self) -> dict:
        return asdict(self)


def run_golden(profiles: dict[str, dict[str, StageProfile]] | None = None,
               golden: dict | None = None) -> list[GoldenCheck]:
    """Evaluate every golden cell; each check records computed vs expected."""
    golden = golden or load_golden()
    profiles = profiles or builtin_profiles()
    overhead = golden["link_fixed_overhead_s"]
    checks = []

    for cell in golden["transfers"]:
        link = NetworkLink(cell["bandwidth_mbps"], overhead)
        computed = transfer_time(cell["payload_bytes"], link)
        tol = cell["abs_tol_s"]
        checks.append(GoldenCheck(
            name=cell["name"], computed=computed, expected=cell["expected_s"],
            tolerance=f"abs +/- {tol} s",
            passed=abs(computed - cell["expected_s"]) <= tol))

    tokens = TokenCounts.from_json(golden["token_counts"])
    for cell in golden["token_stages"]:
        stage = profiles[cell["profile_set"]][cell["stage"]]
        computed = stage_time(stage, CLIP_10S_60FPS, tokens=tokens)
        tol = cell["rel_tol"]
        checks.append(GoldenCheck(
            name=cell["name"], computed=computed, expected=cell["expected_s"],
            tolerance=f"rel +/- {tol * 100:g}%",
            passed=abs(computed - cell["expected_s"]) <= tol * cell["expected_s"]))

    ratio_cell = golden["decode_prefill_ratio"]
    ratio = decode_prefill_ratio(profiles[ratio_cell["profile_set"]][ratio_cell["stage"]])
    checks.append(GoldenCheck(
        name="decode_prefill_ratio", computed=ratio,
        expected=(ratio_cell["min"] + ratio_cell["max"]) / 2.0,
        tolerance=f"range [{ratio_cell['min']}, {ratio_cell['max']}]",
        passed=ratio_cell["min"] <= ratio <= ratio_cell["max"]))

    for cell in golden["pipelines"]:
        spec = builtin_pipeline(cell["spec"])
        link = None
        if cell["link_mbps"] is not None:
            link = NetworkLink(cell["link_mbps"], overhead)
        report = pipeline_time(spec, profiles[spec.placement], link)
        tol = cell["rel_tol"]
        checks.append(GoldenCheck(
            name=cell["name"], computed=report.total_s, expected=cell["expected_s"],
            tolerance=f"rel +/- {tol * 100:g}%",
            passed=abs(report.total_s - cell["expected_s"]) <= tol * cell["expected_s"]))
    return checks
