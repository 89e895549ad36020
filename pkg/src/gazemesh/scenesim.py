"""Ground-truth scene and device-fleet simulator.

Builds a planar stage with moving targets viewed by a stationary central
camera and N head-mounted devices. Every device gets a pose-derived true
homography (ego to central), a drifting clock, and a gaze/blink behavior
model. Frames carry identifiable feature points rather than pixels; the
noiseless latents behind every emitted sample are kept so downstream
estimates can be checked against ground truth.

Coordinates are image-convention pixels: origin top-left, x rightward,
y downward.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .timesync import ClockModel

# rng stream tags so every subsystem draws from an independent substream
_S_SCENE, _S_SEAT, _S_GAZE, _S_BLINK, _S_FRAMES, _S_DESC, _S_CLOCK = range(7)

DESCRIPTOR_DIM = 16


@dataclass(frozen=True)
class Target:
    """A stage element following a piecewise-linear trajectory in central coords."""

    target_id: str
    waypoints: tuple[tuple[float, float, float], ...]  # (t_s, x, y), time-sorted
    salience: float = 1.0

    def __post_init__(self) -> None:
        if not self.waypoints:
            raise ValueError("target needs at least one waypoint")
        times = [w[0] for w in self.waypoints]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("waypoints must be time-sorted")
        if self.salience < 0:
            raise ValueError("salience must be >= 0")

    def position(self, t_s: float) -> tuple[float, float]:
        wp = self.waypoints
        if t_s <= wp[0][0]:
            return wp[0][1], wp[0][2]
        for a, b in zip(wp, wp[1:]):
            if t_s <= b[0]:
                span = b[0] - a[0]
                f = 0.0 if span == 0 else (t_s - a[0]) / span
                return a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])
        return wp[-1][1], wp[-1][2]

    def positions(self, t_s: np.ndarray) -> np.ndarray:
        wp = np.asarray(self.waypoints, dtype=np.float64)
        x = np.interp(t_s, wp[:, 0], wp[:, 1])
        y = np.interp(t_s, wp[:, 0], wp[:, 2])
        return np.column_stack([x, y])


@dataclass(frozen=True)
class Scene:
    central_width: int = 720
    central_height: int = 480
    duration_s: float = 60.0
    targets: tuple[Target, ...] = ()
    seed: int = 0
    anchors: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    central_rate_hz: float = 60.0

    def __post_init__(self) -> None:
        if self.central_width <= 0 or self.central_height <= 0:
            raise ValueError("frame dimensions must be positive")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")

    @property
    def dims(self) -> tuple[int, int]:
        return self.central_width, self.central_height

    def to_json(self) -> str:
        doc = {
            "central_width": self.central_width,
            "central_height": self.central_height,
            "duration_s": self.duration_s,
            "seed": self.seed,
            "central_rate_hz": self.central_rate_hz,
            "targets": [
                {"id": t.target_id, "salience": t.salience, "waypoints": [list(w) for w in t.waypoints]}
                for t in self.targets
            ],
            "anchors": [[round(float(x), 6), round(float(y), 6)] for x, y in self.anchors],
        }
        return json.dumps(doc, sort_keys=True)


def build_scene(config: dict) -> Scene:
    """Materialize a Scene from a config dict; deterministic for a given seed.

    Targets either carry explicit waypoints or a random_walk spec
    ({start, step_sd, interval_s}) expanded with the scene seed. Waypoints
    outside the frame are a validation error.
    """
    seed = int(config.get("seed", 0))
    w = int(config.get("central_width", 720))
    h = int(config.get("central_height", 480))
    duration = float(config.get("duration_s", 60.0))
    rng = np.random.default_rng([seed, _S_SCENE])

    targets = []
    for tc in config.get("targets", []):
        if "random_walk" in tc:
            rw = tc["random_walk"]
            x, y = rw["start"]
            step = float(rw.get("step_sd", 20.0))
            interval = float(rw.get("interval_s", 1.0))
            t, pts = 0.0, [(0.0, float(x), float(y))]
            while t < duration:
                t += interval
                x = float(np.clip(x + rng.normal(0, step), 0, w - 1))
                y = float(np.clip(y + rng.normal(0, step), 0, h - 1))
                pts.append((min(t, duration), x, y))
            waypoints = tuple(pts)
        else:
            waypoints = tuple(tuple(map(float, wp)) for wp in tc["waypoints"])
        for _, x, y in waypoints:
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"target {tc['id']}: waypoint ({x}, {y}) outside {w}x{h} frame")
        targets.append(Target(target_id=str(tc["id"]), waypoints=waypoints, salience=float(tc.get("salience", 1.0))))

    n_anchors = int(config.get("anchor_count", 120))
    margin = float(config.get("anchor_margin_px", 40.0))
    anchors = np.column_stack([
        rng.uniform(margin, w - margin, size=n_anchors),
        rng.uniform(margin, h - margin, size=n_anchors),
    ])
    return Scene(
        central_width=w,
        central_height=h,
        duration_s=duration,
        targets=tuple(targets),
        seed=seed,
        anchors=anchors,
        central_rate_hz=float(config.get("central_rate_hz", 60.0)),
    )


@dataclass(frozen=True)
class FleetParams:
    """Per-device behavior knobs shared across the fleet."""

    ego_width: int = 1600
    ego_height: int = 1200
    gaze_rate_hz: float = 200.0
    frame_rate_hz: float = 30.0
    gaze_noise_sd: float = 3.0
    foveal_jitter_sd: float = 0.0
    blink_rate_per_min: float = 12.0
    blink_duration_mean_ms: float = 303.0
    blink_duration_sd_ms: float = 69.0
    clock_offset_range_ms: float = 300.0
    drift_ppm_range: tuple[float, float] = (0.5, 3.0)
    clock_jitter_sd_us: float = 10.0
    occlusion_fraction: float = 0.2
    feature_noise_sd: float = 1.0
    descriptor_noise_sd: float = 0.05
    dropped_frame_fraction: float = 0.0
    max_rotation_deg: float = 5.0
    # apparent size of central content in the egoview per row, nearest first;
    # values between/beyond are interpolated linearly
    row_scale_profile: tuple[float, float] = (515.0, 396.0)
    nominal_central_diag: float = 520.0


@dataclass(frozen=True)
class SimDevice:
    device_id: str
    seat: tuple[int, int]  # (row, col)
    true_h: np.ndarray  # 3x3 ego -> central, ground truth
    clock: ClockModel
    params: FleetParams

    @property
    def ego_dims(self) -> tuple[int, int]:
        return self.params.ego_width, self.params.ego_height

    @property
    def central_to_ego(self) -> np.ndarray:
        return np.linalg.inv(self.true_h)


@dataclass(frozen=True)
class GazeSample:
    device_id: str
    t_device_ns: int
    x: float
    y: float
    blink: bool


@dataclass(frozen=True)
class FeatureFrame:
    """One camera observation: identifiable feature points with descriptors."""

    source_id: str
    t_ns: int  # device clock for ego frames, reference clock for central
    ids: tuple[str, ...]
    xy: np.ndarray  # (n, 2)
    desc: np.ndarray  # (n, DESCRIPTOR_DIM)

    def __post_init__(self) -> None:
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("feature ids must be unique within a frame")


@dataclass(frozen=True)
class StreamMetrics:
    fps: float
    jitter_mean_ms: float
    jitter_sd_ms: float
    dropped_frames: int


def _apply_h(m: np.ndarray, pts: np.ndarray) -> np.ndarray:
    ph = np.column_stack([pts, np.ones(len(pts))])
    q = ph @ m.T
    return q[:, :2] / q[:, 2:3]


def seat_homography(
    scene: Scene, row: int, col: int, rows: int, cols: int, params: FleetParams, rng: np.random.Generator
) -> np.ndarray:
    """Ground-truth ego->central homography for one seat.

    Built by composing, in central->ego direction: centering, a mild
    perspective skew that grows with the seat's lateral offset, a row-scale
    (nearer rows see the stage larger), a rotation within the configured
    bound, and a translation to the ego center plus a small random shift.
    The returned matrix is the inverse, normalized to m22 = 1.
    """
    near, far = params.row_scale_profile
    if rows > 1:
        diag = near + (far - near) * (row / (rows - 1))
    else:
        diag = (near + far) / 2
    k = diag / params.nominal_central_diag

    theta = math.radians(rng.uniform(-params.max_rotation_deg, params.max_rotation_deg))
    col_offset = 0.0 if cols <= 1 else (col - (cols - 1) / 2) / ((cols - 1) / 2)
    px = col_offset * 2e-5 + rng.normal(0, 3e-6)
    py = rng.normal(0, 3e-6)
    shift = rng.uniform(-40, 40, size=2)

    cw, ch = scene.central_width / 2, scene.central_height / 2
    ew, eh = params.ego_width / 2, params.ego_height / 2
    t_center = np.array([[1, 0, -cw], [0, 1, -ch], [0, 0, 1]], dtype=np.float64)
    persp = np.array([[1, 0, 0], [0, 1, 0], [px, py, 1]], dtype=np.float64)
    scale = np.array([[k, 0, 0], [0, k, 0], [0, 0, 1]], dtype=np.float64)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)
    t_ego = np.array([[1, 0, ew + shift[0]], [0, 1, eh + shift[1]], [0, 0, 1]], dtype=np.float64)

    central_to_ego = t_ego @ rot @ scale @ persp @ t_center
    h = np.linalg.inv(central_to_ego)
    return h / h[2, 2]


def place_devices(
    scene: Scene,
    n: int,
    rows: int,
    cols: int,
    seed: int | None = None,
    params: FleetParams | None = None,
) -> list[SimDevice]:
    """Seat n devices row-major on a rows x cols grid with per-seat clocks and homographies."""
    if n < 1:
        raise ValueError("need at least 1 device")
    if n > rows * cols:
        raise ValueError(f"{n} devices exceed the {rows}x{cols} seat grid")
    params = params or FleetParams()
    seed = scene.seed if seed is None else seed
    devices = []
    for idx in range(n):
        row, col = divmod(idx, cols)
        rng = np.random.default_rng([seed, _S_SEAT, idx])
        h = seat_homography(scene, row, col, rows, cols, params, rng)
        if abs(np.linalg.det(h)) < 1e-12:
            raise ValueError(f"degenerate homography for seat ({row}, {col})")
        offset_ns = int(rng.uniform(-params.clock_offset_range_ms, params.clock_offset_range_ms) * 1e6)
        lo, hi = params.drift_ppm_range
        drift = rng.uniform(lo, hi) * 1e-6 * rng.choice([-1.0, 1.0])
        clock = ClockModel(
            initial_offset_ns=offset_ns,
            drift_rate=float(drift),
            jitter_sd_ns=params.clock_jitter_sd_us * 1e3,
        )
        devices.append(SimDevice(
            device_id=f"d{idx:02d}",
            seat=(row, col),
            true_h=h,
            clock=clock,
            params=params,
        ))
    return devices


@dataclass(frozen=True)
class AttentionPolicy:
    """Markov switching between targets with exponentially distributed dwell."""

    dwell_mean_s: float = 1.2


def attention_schedule(
    scene: Scene, policy: AttentionPolicy, rng: np.random.Generator
) -> list[tuple[float, int]]:
    """(start_s, target_index) segments covering the scene duration."""
    weights = np.array([t.salience for t in scene.targets], dtype=np.float64)
    if weights.sum() == 0:
        weights = np.ones_like(weights)
    p = weights / weights.sum()
    segments = []
    t = 0.0
    current = int(rng.choice(len(scene.targets), p=p))
    while t < scene.duration_s:
        segments.append((t, current))
        t += rng.exponential(policy.dwell_mean_s)
        if len(scene.targets) > 1:
            w = weights.copy()
            w[current] = 0.0
            current = int(rng.choice(len(scene.targets), p=w / w.sum()))
    return segments


def blink_schedule(
    duration_s: float,
    rate_per_min: float,
    duration_mean_ms: float,
    duration_sd_ms: float,
    rng: np.random.Generator,
    min_duration_ms: float = 50.0,
) -> list[tuple[int, int]]:
    """Poisson blink onsets with Gaussian durations (clipped); overlaps dropped."""
    if rate_per_min <= 0:
        return []
    out: list[tuple[int, int]] = []
    t = 0.0
    last_end = -1.0
    rate_s = rate_per_min / 60.0
    while True:
        t += rng.exponential(1.0 / rate_s)
        if t >= duration_s:
            return out
        if t < last_end:
            continue  # arrival during an ongoing blink
        dur_ms = max(rng.normal(duration_mean_ms, duration_sd_ms), min_duration_ms)
        end = t + dur_ms / 1e3
        out.append((int(t * 1e9), int(min(end, duration_s) * 1e9)))
        last_end = end


@dataclass
class GazeTrace:
    """Full gaze output of one device plus the noiseless latents behind it."""

    device_id: str
    t_ref_ns: np.ndarray
    t_device_ns: np.ndarray
    ego_xy: np.ndarray  # noisy, blink carryover applied
    blink: np.ndarray
    latent_central: np.ndarray  # attended position in central coords
    latent_ego: np.ndarray  # exact pre-noise ego gaze
    attended: np.ndarray  # target index per sample
    blink_intervals: list[tuple[int, int]]

    def samples(self) -> Iterator[GazeSample]:
        for i in range(len(self.t_ref_ns)):
            yield GazeSample(
                device_id=self.device_id,
                t_device_ns=int(self.t_device_ns[i]),
                x=float(self.ego_xy[i, 0]),
                y=float(self.ego_xy[i, 1]),
                blink=bool(self.blink[i]),
            )


def generate_gaze(
    device: SimDevice,
    scene: Scene,
    policy: AttentionPolicy | None = None,
    seed: int | None = None,
) -> GazeTrace:
    """Simulate the device's gaze stream over the scene duration.

    The wearer fixates the attended target (salience-weighted Markov
    switching); ego gaze is the inverse-homography image of the attended
    central position plus per-sample Gaussian noise. During blinks the
    emitted coordinates freeze at the last pre-blink values and the blink
    flag is set. Timestamps pass through the device clock.
    """
    policy = policy or AttentionPolicy()
    seed = scene.seed if seed is None else seed
    dev_idx = int(device.device_id.lstrip("d"))
    rng = np.random.default_rng([seed, _S_GAZE, dev_idx])
    brng = np.random.default_rng([seed, _S_BLINK, dev_idx])
    crng = np.random.default_rng([seed, _S_CLOCK, dev_idx])
    p = device.params

    n = int(scene.duration_s * p.gaze_rate_hz)
    t_s = np.arange(n) / p.gaze_rate_hz
    t_ref = np.rint(t_s * 1e9).astype(np.int64)

    segments = attention_schedule(scene, policy, rng)
    seg_starts = np.array([s[0] for s in segments])
    seg_targets = np.array([s[1] for s in segments])
    attended = seg_targets[np.searchsorted(seg_starts, t_s, side="right") - 1]

    central = np.empty((n, 2), dtype=np.float64)
    for ti, target in enumerate(scene.targets):
        sel = attended == ti
        if sel.any():
            central[sel] = target.positions(t_s[sel])
    if p.foveal_jitter_sd > 0:
        central = central + rng.normal(0.0, p.foveal_jitter_sd, size=central.shape)

    g = device.central_to_ego
    latent_ego = _apply_h(g, central)
    ego = latent_ego + rng.normal(0.0, p.gaze_noise_sd, size=latent_ego.shape)

    blink = np.zeros(n, dtype=bool)
    intervals = blink_schedule(
        scene.duration_s, p.blink_rate_per_min, p.blink_duration_mean_ms, p.blink_duration_sd_ms, brng
    )
    for start, end in intervals:
        blink[(t_ref >= start) & (t_ref < end)] = True
    # freeze coordinates at the last pre-blink value
    if blink.any():
        hold = np.where(blink, 0, np.arange(n))
        hold = np.maximum.accumulate(hold)
        ego = ego[hold]

    t_device = device.clock.device_times(t_ref, crng)
    return GazeTrace(
        device_id=device.device_id,
        t_ref_ns=t_ref,
        t_device_ns=t_device,
        ego_xy=ego,
        blink=blink,
        latent_central=central,
        latent_ego=latent_ego,
        attended=attended,
        blink_intervals=intervals,
    )


# --- feature frames ----------------------------------------------------------

def _anchor_ids(n: int) -> list[str]:
    return [f"a{i:03d}" for i in range(n)]


def base_descriptors(scene: Scene, ids: Sequence[str]) -> np.ndarray:
    """Stable per-feature descriptor vectors derived from the scene seed."""
    out = np.empty((len(ids), DESCRIPTOR_DIM), dtype=np.float64)
    for i, fid in enumerate(ids):
        digest = abs(hash_stable(fid))
        rng = np.random.default_rng([scene.seed, _S_DESC, digest])
        out[i] = rng.normal(0.0, 1.0, size=DESCRIPTOR_DIM)
    return out


def hash_stable(s: str) -> int:
    """Process-independent string hash (Python's builtin hash is salted)."""
    h = 2166136261
    for b in s.encode():
        h = ((h ^ b) * 16777619) & 0xFFFFFFFF
    return h


def _scene_points_at(scene: Scene, t_s: float) -> tuple[list[str], np.ndarray]:
    ids = _anchor_ids(len(scene.anchors))
    pts = [scene.anchors]
    for target in scene.targets:
        ids.append(f"t:{target.target_id}")
        pts.append(np.array([target.position(t_s)]))
    return ids, np.vstack(pts)


def render_central_frames(scene: Scene, rate_hz: float | None = None) -> list[FeatureFrame]:
    """Central-camera stream: scene features in central coordinates, reference clock."""
    rate = rate_hz or scene.central_rate_hz
    n = int(scene.duration_s * rate)
    ids0, _ = _scene_points_at(scene, 0.0)
    desc = base_descriptors(scene, ids0)
    frames = []
    for i in range(n):
        t_s = i / rate
        ids, pts = _scene_points_at(scene, t_s)
        frames.append(FeatureFrame(
            source_id="central",
            t_ns=int(round(t_s * 1e9)),
            ids=tuple(ids),
            xy=pts,
            desc=desc,
        ))
    return frames


def render_ego_frames(
    device: SimDevice,
    scene: Scene,
    seed: int | None = None,
    rate_hz: float | None = None,
) -> list[FeatureFrame]:
    """Egoview stream: inverse-mapped scene features with noise, occlusion and drops.

    A random fraction of features per frame is occluded; features falling
    outside the ego frame are not visible; a configurable fraction of whole
    frames is dropped to emulate network loss. Frame timestamps are on the
    device clock.
    """
    p = device.params
    seed = scene.seed if seed is None else seed
    dev_idx = int(device.device_id.lstrip("d"))
    rng = np.random.default_rng([seed, _S_FRAMES, dev_idx])
    crng = np.random.default_rng([seed, _S_CLOCK, dev_idx, 1])
    rate = rate_hz or p.frame_rate_hz
    n = int(scene.duration_s * rate)
    g = device.central_to_ego
    ids0, _ = _scene_points_at(scene, 0.0)
    desc0 = base_descriptors(scene, ids0)
    w, h = p.ego_width, p.ego_height

    frames = []
    for i in range(n):
        dropped = p.dropped_frame_fraction > 0 and rng.random() < p.dropped_frame_fraction
        # draw per-frame randomness regardless of drops so the remaining
        # stream does not depend on the drop pattern
        ids, central_pts = _scene_points_at(scene, i / rate)
        ego_pts = _apply_h(g, central_pts)
        if p.feature_noise_sd > 0:
            ego_pts = ego_pts + rng.normal(0.0, p.feature_noise_sd, size=ego_pts.shape)
        occluded = rng.random(len(ids)) < p.occlusion_fraction
        dnoise = rng.normal(0.0, p.descriptor_noise_sd, size=desc0.shape) if p.descriptor_noise_sd > 0 else 0.0
        if dropped:
            continue
        visible = (~occluded
                   & (ego_pts[:, 0] >= 0) & (ego_pts[:, 0] < w)
                   & (ego_pts[:, 1] >= 0) & (ego_pts[:, 1] < h))
        t_ref = int(round(i / rate * 1e9))
        frames.append(FeatureFrame(
            source_id=device.device_id,
            t_ns=int(device.clock.device_time(t_ref, crng)),
            ids=tuple(np.array(ids)[visible]),
            xy=ego_pts[visible],
            desc=(desc0 + dnoise)[visible],
        ))
    return frames


def stream_metrics(timestamps_ns: Sequence[int], window: int = 180) -> StreamMetrics:
    """Frame-stream health over the trailing window of timestamps.

    fps is (m-1)/span over the last `window` stamps; jitter is the
    mean/standard deviation of successive inter-frame differences in ms;
    dropped counts missing frames implied by gaps larger than 1.5x the
    nominal (median) interval.
    """
    t = np.asarray(timestamps_ns, dtype=np.int64)
    if len(t) < 2:
        raise ValueError("need at least 2 timestamps")
    t = t[-window:]
    diffs = np.diff(t).astype(np.float64)
    span_s = (t[-1] - t[0]) / 1e9
    fps = (len(t) - 1) / span_s if span_s > 0 else 0.0
    nominal = float(np.median(diffs))
    gap_mask = diffs > 1.5 * nominal
    dropped = int(np.sum(np.rint(diffs[gap_mask] / nominal) - 1)) if gap_mask.any() else 0
    return StreamMetrics(
        fps=float(fps),
        jitter_mean_ms=float(diffs.mean() / 1e6),
        jitter_sd_ms=float(diffs.std() / 1e6),
        dropped_frames=dropped,
    )


# --- wire formats -------------------------------------------------------------

def gaze_to_jsonl(sample: GazeSample) -> str:
    return json.dumps({
        "device_id": sample.device_id,
        "t_ns": sample.t_device_ns,
        "x": sample.x,
        "y": sample.y,
        "blink": sample.blink,
    }, sort_keys=True)


def gaze_from_jsonl(line: str) -> GazeSample:
    d = json.loads(line)
    return GazeSample(device_id=d["device_id"], t_device_ns=int(d["t_ns"]), x=float(d["x"]),
                      y=float(d["y"]), blink=bool(d["blink"]))


def frame_to_jsonl(frame: FeatureFrame) -> str:
    points = [
        [fid, float(x), float(y), [round(float(v), 6) for v in dv]]
        for fid, (x, y), dv in zip(frame.ids, frame.xy, frame.desc)
    ]
    return json.dumps({"source_id": frame.source_id, "t_ns": frame.t_ns, "points": points}, sort_keys=True)


def frame_from_jsonl(line: str) -> FeatureFrame:
    d = json.loads(line)
    ids = tuple(p[0] for p in d["points"])
    xy = np.array([[p[1], p[2]] for p in d["points"]], dtype=np.float64).reshape(-1, 2)
    desc = np.array([p[3] for p in d["points"]], dtype=np.float64).reshape(-1, DESCRIPTOR_DIM if d["points"] else 0)
    return FeatureFrame(source_id=d["source_id"], t_ns=int(d["t_ns"]), ids=ids, xy=xy, desc=desc)


def write_truth_jsonl(path: Path | str, devices: Sequence[SimDevice], traces: Sequence[GazeTrace]) -> None:
    """Ground-truth sidecar: one header line per device (true homography),
    then per-sample true central gaze."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as f:
        for dev in devices:
            f.write(json.dumps({
                "device_id": dev.device_id,
                "h_true": [[float(v) for v in row] for row in dev.true_h],
                "seat": list(dev.seat),
                "clock_offset_ns": dev.clock.initial_offset_ns,
                "clock_drift": dev.clock.drift_rate,
            }, sort_keys=True) + "\n")
        for trace in traces:
            for i in range(len(trace.t_ref_ns)):
                f.write(json.dumps({
                    "device_id": trace.device_id,
                    "t_ref_ns": int(trace.t_ref_ns[i]),
                    "x": round(float(trace.latent_central[i, 0]), 4),
                    "y": round(float(trace.latent_central[i, 1]), 4),
                    "target": int(trace.attended[i]),
                    "blink": bool(trace.blink[i]),
                }, sort_keys=True) + "\n")
