"""Session orchestration: device actors, status polling, and the
record/stream/both pipelines.

A supervisor owns one actor per simulated device; commands (start, stop,
cancel, restart) are queued to the actor thread and resolved as futures so
one wedged device can never stall the API or its neighbors. Recording-mode
sessions publish every stream into the durable hub and then run the
projection/analysis pipeline post-hoc over a replay; streaming-mode
sessions process ring-buffered windows live. Both-mode does both, and its
post-hoc outputs are byte-identical to a record-only run of the same seed.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import analysis, projection, report, scenesim, timesync
from .config import ConfigError, attention_policy, fleet_params, scene_config
from .scenesim import FeatureFrame, GazeTrace, Scene, SimDevice
from .streamhub import Record, SessionAnnotation, StallMonitor, StreamHub, replay_session
from .timesync import NetworkLink, OffsetSample, TimeMap

log = logging.getLogger(__name__)

NS = 1_000_000_000
ACTIONS = ("start", "stop", "cancel", "restart")
COMMAND_TIMEOUT_S = 5.0


@dataclass
class DeviceStatus:
    device_id: str
    battery_pct: float
    storage_pct: float
    ping_ms: float
    recording: bool
    last_sample_t: int | None
    alert: str | None = None

    def to_json(self) -> dict:
        return {
            "device_id": self.device_id,
            "battery_pct": round(self.battery_pct, 2),
            "storage_pct": round(self.storage_pct, 2),
            "ping_ms": round(self.ping_ms, 3),
            "recording": self.recording,
            "last_sample_t": self.last_sample_t,
            "alert": self.alert,
        }


class SessionClock:
    """Session-time source: either advanced manually (simulated sessions)
    or paced against the wall clock."""

    def __init__(self, pace: float = 0.0):
        self.pace = pace
        self._manual_ns = 0
        self._t0 = time.monotonic()

    def advance_to(self, t_ns: int) -> None:
        self._manual_ns = max(self._manual_ns, t_ns)

    def now_ns(self) -> int:
        if self.pace > 0:
            return int((time.monotonic() - self._t0) * self.pace * NS)
        return self._manual_ns


class DeviceActor:
    """One worker thread per device; commands arrive as (name, future) messages."""

    def __init__(self, device: SimDevice, clock: SessionClock):
        self.device = device
        self.clock = clock
        self.recording = False
        self.failed = False
        self.wedged = False  # induced fault: the actor stops servicing commands
        self.recording_accum_ns = 0
        self.recording_since: int | None = None
        self.discarded = 0
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def submit(self, action: str) -> "queue.Queue[dict]":
        result: queue.Queue = queue.Queue(maxsize=1)
        self._queue.put((action, result))
        return result

    def _run(self) -> None:
        while True:
            action, result = self._queue.get()
            if action == "__halt__":
                result.put({"ok": True})
                return
            if self.wedged and action != "restart":
                continue  # never answers: the caller times out
            result.put(self._apply(action))

    def _apply(self, action: str) -> dict:
        now = self.clock.now_ns()
        if action == "start":
            if self.failed:
                return {"ok": False, "error": "device failed; restart required"}
            if self.recording:
                return {"ok": True, "note": "already recording"}
            self.recording = True
            self.recording_since = now
            return {"ok": True}
        if action == "stop":
            if not self.recording:
                return {"ok": True, "note": "already stopped"}
            self._accumulate(now)
            self.recording = False
            return {"ok": True}
        if action == "cancel":
            note = None if self.recording else "no recording in progress"
            if self.recording:
                self._accumulate(now)
            self.recording = False
            self.discarded += 1
            return {"ok": True, **({"note": note} if note else {})}
        if action == "restart":
            self.failed = False
            self.wedged = False
            self.recording = True
            self.recording_since = now
            return {"ok": True, "note": "restarted"}
        return {"ok": False, "error": f"unknown action: {action}"}

    def _accumulate(self, now: int) -> None:
        if self.recording_since is not None:
            self.recording_accum_ns += max(0, now - self.recording_since)
            self.recording_since = None

    def recording_ns(self, now: int) -> int:
        total = self.recording_accum_ns
        if self.recording and self.recording_since is not None:
            total += max(0, now - self.recording_since)
        return total

    def mark_failed(self) -> None:
        self.failed = True
        self.recording = False


@dataclass
class LiveState:
    """What the API serves for a running session."""

    collective: dict[str, list[tuple[int, float]]] = field(default_factory=lambda: {
        "sd_x": [], "sd_y": [], "contour_area": [], "points_in_frame": []})
    recent_gaze: dict[str, deque] = field(default_factory=dict)  # device -> deque[(t_ns, x, y)]
    heatmap: analysis.HeatmapGrid | None = None
    heatmap_t_ns: int = 0
    alerts: list[dict] = field(default_factory=list)
    transformed_count: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


class FleetSupervisor:
    """Owns device actors, the hub, and live session state."""

    def __init__(self, devices: Sequence[SimDevice], hub: StreamHub, seed: int = 0,
                 battery_drain_pct_per_h: float = 12.0, storage_fill_pct_per_h: float = 18.0,
                 ping_base_ms: float = 0.25, clock: SessionClock | None = None):
        self.clock = clock or SessionClock()
        self.hub = hub
        self.seed = seed
        self.battery_drain = battery_drain_pct_per_h
        self.storage_fill = storage_fill_pct_per_h
        self.ping_base_ms = ping_base_ms
        self.actors = {d.device_id: DeviceActor(d, self.clock) for d in devices}
        self.stall_monitor: StallMonitor | None = None
        self.active_alerts: dict[str, str] = {}
        self.live = LiveState()
        for d in devices:
            self.live.recent_gaze[d.device_id] = deque(maxlen=512)

    @property
    def device_ids(self) -> list[str]:
        return sorted(self.actors)

    def trigger(self, action: str, device_ids: Sequence[str] | None = None,
                timeout_s: float = COMMAND_TIMEOUT_S) -> dict[str, dict]:
        """Apply an action to a device subset; failures stay per-device."""
        if action not in ACTIONS:
            raise ValueError(f"unknown action: {action}")
        targets = list(device_ids) if device_ids is not None else self.device_ids
        pending: dict[str, queue.Queue] = {}
        results: dict[str, dict] = {}
        for did in targets:
            actor = self.actors.get(did)
            if actor is None:
                results[did] = {"ok": False, "error": f"unknown device: {did}"}
                continue
            pending[did] = actor.submit(action)
        for did, q in pending.items():
            try:
                results[did] = q.get(timeout=timeout_s)
            except queue.Empty:
                results[did] = {"ok": False, "error": f"command timed out after {timeout_s:.0f}s"}
        return results

    def poll_status(self, device_ids: Sequence[str] | None = None,
                    now_ns: int | None = None) -> list[DeviceStatus]:
        now = self.clock.now_ns() if now_ns is None else now_ns
        self._drain_alerts(now)
        out = []
        last_seen = {}
        if "gaze" in self.hub.topics:
            last_seen = self.hub.topics["gaze"].last_seen
        for did in (device_ids or self.device_ids):
            actor = self.actors.get(did)
            if actor is None:
                continue
            rec_h = actor.recording_ns(now) / NS / 3600.0
            idle_h = max(0.0, now / NS / 3600.0 - rec_h)
            battery = max(0.0, 100.0 - self.battery_drain * rec_h - 0.1 * self.battery_drain * idle_h)
            storage = min(100.0, self.storage_fill * rec_h)
            dev_idx = int(did.lstrip("d"))
            prng = np.random.default_rng([self.seed, 7, dev_idx, now // NS])
            ping = self.ping_base_ms * (1.0 + abs(prng.normal(0.0, 0.2)))
            alert = self.active_alerts.get(did)
            if actor.failed and alert is None:
                alert = "device failed"
            out.append(DeviceStatus(
                device_id=did,
                battery_pct=battery,
                storage_pct=storage,
                ping_ms=float(ping),
                recording=actor.recording,
                last_sample_t=last_seen.get(did),
                alert=alert,
            ))
        return out

    def _drain_alerts(self, now_ns: int) -> None:
        if self.stall_monitor is None:
            return
        for event in self.stall_monitor.check(now_ns):
            if event["type"] == "alert":
                self.active_alerts[event["key"]] = (
                    f"no data since t={event['last_seen_ns'] / 1e9:.2f}s")
            else:
                self.active_alerts.pop(event["key"], None)
            with self.live.lock:
                self.live.alerts.append(event)

    def annotate(self, label: str) -> SessionAnnotation:
        ann = SessionAnnotation(label=label, t_ref_ns=self.clock.now_ns())
        self.hub.append_annotation(ann)
        return ann

    def shutdown(self) -> None:
        for actor in self.actors.values():
            actor.submit("__halt__")


# --- simulation bundle --------------------------------------------------------

@dataclass
class SimBundle:
    scene: Scene
    devices: list[SimDevice]
    traces: dict[str, GazeTrace]
    ego_frames: dict[str, list[FeatureFrame]]
    central_frames: list[FeatureFrame]
    sync_samples: dict[str, list[OffsetSample]]
    killed_at: dict[str, int]


def simulate_fleet(cfg: dict) -> SimBundle:
    """Run the full deterministic simulation described by the config."""
    scene = scenesim.build_scene(scene_config(cfg))
    f = cfg["fleet"]
    params = fleet_params(cfg)
    seed = int(cfg["session"]["seed"])
    devices = scenesim.place_devices(scene, int(f["n_devices"]), int(f["rows"]), int(f["cols"]),
                                     seed=seed, params=params)
    policy = attention_policy(cfg)
    sync_cfg = cfg["sync"]
    link = NetworkLink(
        one_way_mean_ns=float(sync_cfg["one_way_mean_us"]) * 1e3,
        one_way_jitter_sd_ns=float(sync_cfg["one_way_jitter_sd_us"]) * 1e3,
        asymmetry_ns=float(sync_cfg["asymmetry_us"]) * 1e3,
    )
    duration_ns = int(scene.duration_s * NS)

    kills = {k["device"]: int(float(k["at_s"]) * NS) for k in cfg["session"].get("failures", [])}
    traces, frames, sync = {}, {}, {}
    for idx, dev in enumerate(devices):
        trace = scenesim.generate_gaze(dev, scene, policy, seed=seed)
        ego = scenesim.render_ego_frames(dev, scene, seed=seed)
        srng = np.random.default_rng([seed, 4, idx])
        samples = timesync.run_sync_session(
            dev.clock, link, duration_ns, srng,
            epoch_interval_ns=int(float(sync_cfg["epoch_interval_s"]) * NS),
            probes_per_epoch=int(sync_cfg["probes_per_epoch"]),
            loss_probability=float(sync_cfg["probe_loss_probability"]),
        )
        if dev.device_id in kills:
            t_kill = kills[dev.device_id]
            keep = trace.t_ref_ns < t_kill
            trace = GazeTrace(
                device_id=trace.device_id,
                t_ref_ns=trace.t_ref_ns[keep], t_device_ns=trace.t_device_ns[keep],
                ego_xy=trace.ego_xy[keep], blink=trace.blink[keep],
                latent_central=trace.latent_central[keep], latent_ego=trace.latent_ego[keep],
                attended=trace.attended[keep],
                blink_intervals=[iv for iv in trace.blink_intervals if iv[0] < t_kill],
            )
            ego = [fr for fr, t in zip(ego, _frame_ref_times(dev, ego)) if t < t_kill]
            samples = [s for s in samples if s.t_ref_ns < t_kill]
        traces[dev.device_id] = trace
        frames[dev.device_id] = ego
        sync[dev.device_id] = samples
    central = scenesim.render_central_frames(scene)
    # network-loss windows on the camera link, then the recorder's tolerance:
    # it gives up after too many consecutive missing frames
    for window in cfg["scene"].get("central_dropouts", []):
        lo = int(float(window["start_s"]) * NS)
        hi = lo + int(float(window["duration_s"]) * NS)
        central = [f for f in central if not lo <= f.t_ns < hi]
    tolerance = int(cfg["session"].get("dropped_frame_tolerance", 600))
    cut = apply_drop_tolerance([f.t_ns for f in central], scene.central_rate_hz, tolerance)
    if cut < len(central):
        log.warning("central recorder terminated at frame %d: gap beyond %d dropped frames",
                    cut, tolerance)
        central = central[:cut]
    return SimBundle(scene=scene, devices=devices, traces=traces, ego_frames=frames,
                     central_frames=central, sync_samples=sync, killed_at=kills)


def _frame_ref_times(dev: SimDevice, frames: Sequence[FeatureFrame]) -> list[int]:
    # good enough for kill truncation: invert the noiseless clock map
    return [int(dev.clock.reference_time(f.t_ns)) for f in frames]


def apply_drop_tolerance(timestamps_ns: Sequence[int], nominal_hz: float, tolerance: int = 600) -> int:
    """Index where a recorder should terminate: the first gap reaching
    `tolerance` consecutive missing frames. Returns len(timestamps) if the
    stream never breaches the tolerance."""
    t = np.asarray(timestamps_ns, dtype=np.int64)
    if len(t) < 2:
        return len(t)
    nominal = NS / nominal_hz
    gaps = np.diff(t)
    missing = np.rint(gaps / nominal) - 1
    bad = np.flatnonzero(missing >= tolerance)
    return int(bad[0]) + 1 if len(bad) else len(t)


# --- publishing ---------------------------------------------------------------

def publish_bundle(bundle: SimBundle, hub: StreamHub) -> None:
    """Publish every simulated stream in deterministic reference-time order.

    Record timestamps are broker arrival times on the reference clock;
    payloads carry the device-clock stamps.
    """
    events: list[tuple[int, int, str, str, bytes]] = []  # (t_ref, seq, topic, key, payload)
    seq = 0
    for did in sorted(bundle.traces):
        trace = bundle.traces[did]
        for i in range(len(trace.t_ref_ns)):
            payload = scenesim.gaze_to_jsonl(scenesim.GazeSample(
                device_id=did, t_device_ns=int(trace.t_device_ns[i]),
                x=float(trace.ego_xy[i, 0]), y=float(trace.ego_xy[i, 1]),
                blink=bool(trace.blink[i]))).encode()
            events.append((int(trace.t_ref_ns[i]), seq, "gaze", did, payload))
            seq += 1
        dev = next(d for d in bundle.devices if d.device_id == did)
        for frame, t_ref in zip(bundle.ego_frames[did], _frame_ref_times(dev, bundle.ego_frames[did])):
            events.append((t_ref, seq, "egoframes", did, scenesim.frame_to_jsonl(frame).encode()))
            seq += 1
        for s in bundle.sync_samples[did]:
            payload = json.dumps({"t_ref_ns": s.t_ref_ns, "offset_ns": s.offset_ns,
                                  "rtt_ns": s.rtt_ns}, sort_keys=True).encode()
            events.append((s.t_ref_ns, seq, "offsets", did, payload))
            seq += 1
    for frame in bundle.central_frames:
        events.append((frame.t_ns, seq, "centralframes", "central",
                       scenesim.frame_to_jsonl(frame).encode()))
        seq += 1
    events.sort(key=lambda e: (e[0], e[1]))
    for t_ref, _, topic, key, payload in events:
        hub.publish(topic, key, t_ref, payload)


# --- decoding replayed records --------------------------------------------------

def decode_gaze_records(records: Sequence[Record]) -> dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per device: (t_device_ns, xy, blink), sorted by device timestamp."""
    buckets: dict[str, list] = {}
    for r in records:
        buckets.setdefault(r.key, []).append(json.loads(r.payload))
    out = {}
    for did, rows in buckets.items():
        rows.sort(key=lambda d: d["t_ns"])
        t = np.array([d["t_ns"] for d in rows], dtype=np.int64)
        xy = np.array([[d["x"], d["y"]] for d in rows], dtype=np.float64)
        blink = np.array([d["blink"] for d in rows], dtype=bool)
        out[did] = (t, xy, blink)
    return out


def decode_frame_records(records: Sequence[Record]) -> dict[str, list[FeatureFrame]]:
    out: dict[str, list[FeatureFrame]] = {}
    for r in records:
        out.setdefault(r.key, []).append(scenesim.frame_from_jsonl(r.payload.decode()))
    for frames in out.values():
        frames.sort(key=lambda f: f.t_ns)
    return out


def decode_offset_records(records: Sequence[Record]) -> dict[str, list[OffsetSample]]:
    out: dict[str, list[OffsetSample]] = {}
    for r in records:
        d = json.loads(r.payload)
        out.setdefault(r.key, []).append(OffsetSample(
            t_ref_ns=int(d["t_ref_ns"]), offset_ns=int(d["offset_ns"]), rtt_ns=int(d["rtt_ns"])))
    for samples in out.values():
        samples.sort(key=lambda s: s.t_ref_ns)
    return out


def fit_fleet_timemaps(offsets: Mapping[str, Sequence[OffsetSample]], cfg: dict) -> dict[str, TimeMap]:
    threshold_ns = float(cfg["sync"]["ransac_threshold_ms"]) * 1e6
    max_iters = int(cfg["sync"]["max_iters"])
    seed = int(cfg["session"]["seed"])
    maps = {}
    for did, samples in offsets.items():
        if len(samples) < 2:
            log.warning("device %s has %d offset samples; skipping time map", did, len(samples))
            continue
        maps[did] = timesync.fit_timemap(samples, threshold_ns=threshold_ns,
                                         max_iters=max_iters, seed=seed)
    return maps


# --- post-hoc pipeline -----------------------------------------------------------

HEATMAP_CELL_EGO = 8.0
HEATMAP_CELL_CENTRAL = 4.0


def posthoc_pipeline(session_dir: Path, out_dir: Path, cfg: dict) -> dict[str, Path]:
    """Replay a persisted session and produce projection + analysis outputs.

    Everything written here is a deterministic function of the session logs
    and the config, so a replayed both-mode session produces byte-identical
    files to a record-mode session of the same seed.
    """
    out_dir = Path(out_dir)
    records = replay_session(session_dir)
    gaze = decode_gaze_records(records.get("gaze", []))
    ego_frames = decode_frame_records(records.get("egoframes", []))
    central_frames = decode_frame_records(records.get("centralframes", [])).get("central", [])
    offsets = decode_offset_records(records.get("offsets", []))
    timemaps = fit_fleet_timemaps(offsets, cfg)

    usable = sorted(set(gaze) & set(ego_frames) & set(timemaps))
    dropped = sorted((set(gaze) | set(ego_frames)) - set(usable))
    if dropped:
        log.warning("excluding devices with incomplete streams: %s", dropped)

    proj_cfg = cfg["projection"]
    dims = (int(cfg["scene"]["central_width"]), int(cfg["scene"]["central_height"]))
    transformed, diag = projection.project_batch(
        {d: gaze[d] for d in usable},
        {d: ego_frames[d] for d in usable},
        central_frames,
        timemaps,
        pairing_tolerance_ms=float(proj_cfg["pairing_tolerance_ms"]),
        inlier_threshold=float(proj_cfg["inlier_threshold_px"]),
        ratio_threshold=float(proj_cfg["ratio_threshold"]),
        central_dims=dims,
        seed=int(cfg["session"]["seed"]),
    )

    paths: dict[str, Path] = {}
    tpath = out_dir / "transformed.jsonl"
    tpath.parent.mkdir(parents=True, exist_ok=True)
    with open(tpath, "w", newline="\n") as fh:
        for s in transformed:
            fh.write(projection.transformed_to_jsonl(s) + "\n")
    paths["transformed"] = tpath
    projection.write_homography_diagnostics(out_dir / "homography_diag.csv", diag.homography_rows)
    paths["homography_diag"] = out_dir / "homography_diag.csv"

    tm_path = out_dir / "timemaps.json"
    with open(tm_path, "w", newline="\n") as fh:
        json.dump({d: {"slope": m.slope, "intercept_ns": m.intercept_ns, "score": m.score}
                   for d, m in sorted(timemaps.items())}, fh, sort_keys=True, indent=1)
    paths["timemaps"] = tm_path

    paths.update(analysis_outputs(out_dir / "analysis", cfg, {d: gaze[d] for d in usable},
                                  transformed, timemaps, dims))
    try:
        paths.update(report.session_figures(out_dir / "figures", out_dir, dims))
    except Exception:  # figures are best-effort companions to the CSV outputs
        log.exception("figure generation failed")
    return paths


def analysis_outputs(
    adir: Path,
    cfg: dict,
    gaze: Mapping[str, tuple[np.ndarray, np.ndarray, np.ndarray]],
    transformed: Sequence[projection.TransformedGaze],
    timemaps: Mapping[str, TimeMap],
    central_dims: tuple[int, int],
) -> dict[str, Path]:
    adir.mkdir(parents=True, exist_ok=True)
    ego_dims = (int(cfg["fleet"]["ego_width"]), int(cfg["fleet"]["ego_height"]))
    paths: dict[str, Path] = {}

    by_frame: dict[int, list[tuple[float, float]]] = {}
    by_device: dict[str, list[tuple[int, float, float]]] = {}
    for s in transformed:
        by_frame.setdefault(s.t_ref_ns, []).append((s.x, s.y))
        by_device.setdefault(s.device_id, []).append((s.t_ref_ns, s.x, s.y))

    frame_ts = sorted(by_frame)
    sd_x, sd_y, areas, in_frame = [], [], [], []
    for t in frame_ts:
        pts = np.array(by_frame[t])
        sx, sy = analysis.dispersion_sd(pts)
        sd_x.append(sx)
        sd_y.append(sy)
        areas.append(analysis.contour_area(pts, central_dims))
        in_frame.append(float(analysis.points_in_frame(pts, central_dims)))
    for name, series in (("sd_x", sd_x), ("sd_y", sd_y), ("contour_area", areas),
                         ("points_in_frame", in_frame)):
        analysis.write_series_csv(adir / f"collective_{name}.csv", frame_ts, series)
        analysis.write_series_csv(adir / f"collective_{name}_smoothed.csv", frame_ts,
                                  analysis.rolling_mean(series))
        paths[f"collective_{name}"] = adir / f"collective_{name}.csv"

    ego_heat, tr_heat = {}, {}
    metrics_rows = []
    for did in sorted(gaze):
        t_dev, xy, blink = gaze[did]
        clean = xy[~blink]
        dev_transformed = np.array([[x, y] for _, x, y in by_device.get(did, [])])
        row: dict[str, object] = {"device_id": did}
        if len(clean) >= 2:
            row["velocity_ego_px"] = analysis.gaze_velocity(clean)
            row["entropy_ego"] = analysis.gaze_entropy(clean, ego_dims)
            ego_heat[did] = analysis.heatmap(clean, ego_dims, cell_size=HEATMAP_CELL_EGO)
        if len(dev_transformed) >= 2:
            row["velocity_transformed_px"] = analysis.gaze_velocity(dev_transformed)
            row["entropy_transformed"] = analysis.gaze_entropy(dev_transformed, central_dims)
            tr_heat[did] = analysis.heatmap(dev_transformed, central_dims,
                                            cell_size=HEATMAP_CELL_CENTRAL)
        metrics_rows.append(row)

    mpath = adir / "device_metrics.csv"
    cols = ["device_id", "velocity_ego_px", "velocity_transformed_px", "entropy_ego",
            "entropy_transformed"]
    with open(mpath, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for row in metrics_rows:
            fh.write(",".join(
                f"{row[c]:.9g}" if isinstance(row.get(c), float) else str(row.get(c, ""))
                for c in cols) + "\n")
    paths["device_metrics"] = mpath

    for label, heats in (("ego", ego_heat), ("transformed", tr_heat)):
        if len(heats) >= 2:
            ids, sim = analysis.pairwise_heatmap_matrix(heats, analysis.heatmap_sim)
            analysis.write_pairwise_csv(adir / f"pairwise_sim_{label}.csv", ids, sim, "sim")
            paths[f"pairwise_sim_{label}"] = adir / f"pairwise_sim_{label}.csv"
            try:
                ids, cc = analysis.pairwise_heatmap_matrix(heats, analysis.heatmap_cc)
                analysis.write_pairwise_csv(adir / f"pairwise_cc_{label}.csv", ids, cc, "cc")
                paths[f"pairwise_cc_{label}"] = adir / f"pairwise_cc_{label}.csv"
            except ValueError:
                log.warning("constant heatmap: pairwise CC for %s skipped", label)
        hdir = adir / "heatmaps"
        for did, grid in heats.items():
            analysis.save_heatmap_raw(grid, hdir / f"{label}_{did}.f32")

    intervals = {}
    for did, (t_dev, xy, blink) in gaze.items():
        tm = timemaps.get(did)
        if tm is None or not blink.any():
            continue
        t_ref = timesync.map_timestamps(tm, t_dev)
        starts = list(np.flatnonzero(blink[1:] & ~blink[:-1]) + 1)
        if blink[0]:
            starts.insert(0, 0)
        ivs = []
        for s0 in starts:
            e = s0
            while e + 1 < len(blink) and blink[e + 1]:
                e += 1
            ivs.append((int(t_ref[s0]), int(t_ref[e]) + 1))
        intervals[did] = ivs
    if intervals:
        t_hi = max(max(e for _, e in ivs) for ivs in intervals.values())
        bins, density = analysis.blink_raster(intervals, 0, t_hi, bin_ms=100.0)
        analysis.write_series_csv(adir / "blink_density.csv", bins, density)
        paths["blink_density"] = adir / "blink_density.csv"
    return paths


# --- session entry points ---------------------------------------------------------

@dataclass
class SessionResult:
    mode: str
    out_dir: Path
    session_dir: Path
    device_ids: list[str]
    paths: dict[str, Path]
    supervisor: FleetSupervisor | None = None
    bundle: SimBundle | None = None


def run_session(cfg: dict, supervisor_out: list | None = None) -> SessionResult:
    """Execute a full session per the config's session.mode."""
    mode = cfg["session"]["mode"]
    if mode not in ("record", "stream", "both"):
        raise ConfigError(f"unknown session mode: {mode}")
    out_dir = Path(cfg["session"]["out_dir"])
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"output directory not writable: {out_dir}: {e}") from e

    bundle = simulate_fleet(cfg)
    session_dir = out_dir / "session"
    durable = mode in ("record", "both")
    hub = StreamHub(mode="record" if durable else "stream",
                    session_dir=session_dir if durable else None,
                    retention=int(cfg["session"]["stream_retention"]))
    hub.create_default_topics(int(cfg["session"]["partitions"]))

    supervisor = FleetSupervisor(
        bundle.devices, hub, seed=int(cfg["session"]["seed"]),
        battery_drain_pct_per_h=float(cfg["session"]["battery_drain_pct_per_h"]),
        storage_fill_pct_per_h=float(cfg["session"]["storage_fill_pct_per_h"]),
    )
    supervisor.stall_monitor = hub.monitor("gaze", float(cfg["session"]["stall_max_silence_ms"]))
    if supervisor_out is not None:
        supervisor_out.append(supervisor)
    supervisor.trigger("start")

    live_runner = LiveRunner(cfg, bundle, hub, supervisor) if mode in ("stream", "both") else None
    publish_bundle(bundle, hub)
    if live_runner is not None:
        live_runner.drain_all()
    duration_ns = int(bundle.scene.duration_s * NS)
    supervisor.clock.advance_to(duration_ns)
    for did, t_kill in bundle.killed_at.items():
        supervisor.actors[did].mark_failed()
    supervisor._drain_alerts(duration_ns)
    supervisor.trigger("stop", [d for d in supervisor.device_ids if d not in bundle.killed_at])

    # survivor streams stay intact regardless of which devices died
    paths: dict[str, Path] = {}
    odir = out_dir / "offsets"
    for did, samples in bundle.sync_samples.items():
        timesync.write_offset_csv(samples, odir / f"{did}.csv")
    paths["offsets_dir"] = odir
    (out_dir / "scene.json").write_text(bundle.scene.to_json() + "\n")
    scenesim.write_truth_jsonl(out_dir / "truth.jsonl", bundle.devices,
                               list(bundle.traces.values()))
    paths["truth"] = out_dir / "truth.jsonl"

    if durable:
        hub.close()
        paths.update(posthoc_pipeline(session_dir, out_dir, cfg))
    if live_runner is not None:
        live_runner.flush_outputs(out_dir / "live")
        paths["live_dir"] = out_dir / "live"
    return SessionResult(mode=mode, out_dir=out_dir, session_dir=session_dir,
                         device_ids=sorted(bundle.traces), paths=paths,
                         supervisor=supervisor, bundle=bundle)


class LiveRunner:
    """Streaming-mode consumer: projects ring-buffered windows as they fill
    and keeps the supervisor's live state current."""

    def __init__(self, cfg: dict, bundle: SimBundle, hub: StreamHub, supervisor: FleetSupervisor):
        self.cfg = cfg
        self.bundle = bundle
        self.hub = hub
        self.supervisor = supervisor
        self.window_ns = int(float(cfg["session"]["stream_window_s"]) * NS)
        self.dims = (int(cfg["scene"]["central_width"]), int(cfg["scene"]["central_height"]))
        self.offsets_so_far: dict[str, list[OffsetSample]] = {}
        self.next_offsets = {"gaze": 0, "egoframes": 0, "centralframes": 0, "offsets": 0}
        self.gaze_buf: dict[str, list] = {}
        self.frame_buf: dict[str, list[FeatureFrame]] = {}
        self.central_buf: list[FeatureFrame] = []
        self.timemaps: dict[str, TimeMap] = {}
        self.collective_rows: list[tuple[int, float, float, float, float]] = []

    def drain_all(self) -> None:
        """Consume everything currently in the hub, window by window."""
        self._ingest()
        t_hi = int(self.bundle.scene.duration_s * NS)
        t = 0
        while t < t_hi:
            t += self.window_ns
            self._process_window(t - self.window_ns, min(t, t_hi))
            self.supervisor.clock.advance_to(min(t, t_hi))
            self.supervisor._drain_alerts(min(t, t_hi))

    def _ingest(self) -> None:
        for topic in self.next_offsets:
            for rec in self.hub.consume(topic, group="live", from_offset=0):
                self._accept(topic, rec)

    def _accept(self, topic: str, rec: Record) -> None:
        if topic == "gaze":
            d = json.loads(rec.payload)
            self.gaze_buf.setdefault(rec.key, []).append(
                (rec.t_ns, d["t_ns"], d["x"], d["y"], d["blink"]))
            with self.supervisor.live.lock:
                self.supervisor.live.recent_gaze.setdefault(rec.key, deque(maxlen=512)).append(
                    (rec.t_ns, d["x"], d["y"]))
        elif topic == "egoframes":
            self.frame_buf.setdefault(rec.key, []).append(
                scenesim.frame_from_jsonl(rec.payload.decode()))
        elif topic == "centralframes":
            self.central_buf.append(scenesim.frame_from_jsonl(rec.payload.decode()))
        elif topic == "offsets":
            d = json.loads(rec.payload)
            self.offsets_so_far.setdefault(rec.key, []).append(OffsetSample(
                t_ref_ns=int(d["t_ref_ns"]), offset_ns=int(d["offset_ns"]), rtt_ns=int(d["rtt_ns"])))

    def _process_window(self, t_lo: int, t_hi: int) -> None:
        for did, samples in self.offsets_so_far.items():
            usable = [s for s in samples if s.t_ref_ns <= t_hi]
            if len(usable) >= 2:
                try:
                    self.timemaps[did] = timesync.fit_timemap(
                        usable, threshold_ns=float(self.cfg["sync"]["ransac_threshold_ms"]) * 1e6,
                        max_iters=int(self.cfg["sync"]["max_iters"]),
                        seed=int(self.cfg["session"]["seed"]))
                except ValueError:
                    continue
        central = [f for f in self.central_buf if t_lo <= f.t_ns < t_hi]
        if not central or not self.timemaps:
            return
        traces = {}
        frames = {}
        for did, rows in self.gaze_buf.items():
            if did not in self.timemaps:
                continue
            rows_w = [r for r in rows if t_lo - NS <= r[0] < t_hi + NS]
            if not rows_w:
                continue
            t_dev = np.array([r[1] for r in rows_w], dtype=np.int64)
            xy = np.array([[r[2], r[3]] for r in rows_w], dtype=np.float64)
            blink = np.array([r[4] for r in rows_w], dtype=bool)
            traces[did] = (t_dev, xy, blink)
            frames[did] = [f for f in self.frame_buf.get(did, [])]
        if not traces:
            return
        frames = {d: v for d, v in frames.items() if v}
        transformed, _ = projection.project_batch(
            {d: traces[d] for d in frames}, frames, central,
            {d: self.timemaps[d] for d in frames},
            pairing_tolerance_ms=float(self.cfg["projection"]["pairing_tolerance_ms"]),
            inlier_threshold=float(self.cfg["projection"]["inlier_threshold_px"]),
            ratio_threshold=float(self.cfg["projection"]["ratio_threshold"]),
            central_dims=self.dims,
            seed=int(self.cfg["session"]["seed"]),
        )
        by_frame: dict[int, list[tuple[float, float]]] = {}
        for s in transformed:
            by_frame.setdefault(s.t_ref_ns, []).append((s.x, s.y))
        live = self.supervisor.live
        pts_latest: np.ndarray | None = None
        for t in sorted(by_frame):
            pts = np.array(by_frame[t])
            sx, sy = analysis.dispersion_sd(pts)
            area = analysis.contour_area(pts, self.dims)
            nin = float(analysis.points_in_frame(pts, self.dims))
            self.collective_rows.append((t, sx, sy, area, nin))
            with live.lock:
                live.collective["sd_x"].append((t, sx))
                live.collective["sd_y"].append((t, sy))
                live.collective["contour_area"].append((t, area))
                live.collective["points_in_frame"].append((t, nin))
            pts_latest = pts
            live.transformed_count += len(pts)
        if pts_latest is not None:
            all_pts = [p for t in sorted(by_frame)[-30:] for p in by_frame[t]]
            grid = analysis.heatmap(np.array(all_pts), self.dims, cell_size=10.0)
            with live.lock:
                live.heatmap = grid
                live.heatmap_t_ns = max(by_frame)

    def flush_outputs(self, live_dir: Path) -> None:
        live_dir.mkdir(parents=True, exist_ok=True)
        rows = sorted(self.collective_rows)
        ts = [r[0] for r in rows]
        for i, name in enumerate(("sd_x", "sd_y", "contour_area", "points_in_frame"), start=1):
            analysis.write_series_csv(live_dir / f"live_{name}.csv", ts, [r[i] for r in rows])
