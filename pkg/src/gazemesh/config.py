"""Session configuration: one JSON document covering scene, fleet and run options."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .scenesim import AttentionPolicy, FleetParams

MODES = ("record", "stream", "both")


class ConfigError(ValueError):
    """Invalid or unreadable configuration; the CLI maps this to exit code 2."""


DEFAULT_CONFIG: dict = {
    "scene": {
        "central_width": 720,
        "central_height": 480,
        "duration_s": 20.0,
        "seed": 0,
        "central_rate_hz": 60.0,
        "anchor_count": 120,
        "anchor_margin_px": 40.0,
        "targets": [
            {"id": "left", "salience": 1.0,
             "waypoints": [[0.0, 300.0, 240.0], [9999.0, 300.0, 240.0]]},
            {"id": "right", "salience": 1.0,
             "waypoints": [[0.0, 420.0, 240.0], [9999.0, 420.0, 240.0]]},
        ],
    },
    "fleet": {
        "n_devices": 4,
        "rows": 2,
        "cols": 2,
        "ego_width": 1600,
        "ego_height": 1200,
        "gaze_rate_hz": 200.0,
        "frame_rate_hz": 30.0,
        "gaze_noise_sd": 3.0,
        "foveal_jitter_sd": 0.0,
        "blink_rate_per_min": 12.0,
        "blink_duration_mean_ms": 303.0,
        "blink_duration_sd_ms": 69.0,
        "clock_offset_range_ms": 300.0,
        "drift_ppm_range": [0.5, 3.0],
        "clock_jitter_sd_us": 10.0,
        "occlusion_fraction": 0.2,
        "feature_noise_sd": 1.0,
        "descriptor_noise_sd": 0.05,
        "dropped_frame_fraction": 0.0,
    },
    "sync": {
        "epoch_interval_s": 10.0,
        "probes_per_epoch": 8,
        "ransac_threshold_ms": 2.0,
        "max_iters": 500,
        "one_way_mean_us": 250.0,
        "one_way_jitter_sd_us": 140.0,
        "asymmetry_us": 0.0,
        "probe_loss_probability": 0.0,
    },
    "attention": {"dwell_mean_s": 1.2},
    "projection": {
        "pairing_tolerance_ms": 25.0,
        "inlier_threshold_px": 3.0,
        "ratio_threshold": 0.8,
    },
    "session": {
        "mode": "record",
        "seed": 0,
        "out_dir": "gazemesh_out",
        "partitions": 6,
        "stall_max_silence_ms": 1000.0,
        "stream_window_s": 2.0,
        "stream_retention": 5000,
        "dropped_frame_tolerance": 600,
        "battery_drain_pct_per_h": 12.0,
        "storage_fill_pct_per_h": 18.0,
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: Path | str | None = None, overrides: dict | None = None) -> dict:
    """Read a config document and merge it over the defaults."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as f:
                user = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        cfg = _deep_merge(cfg, user)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    session = cfg.get("session", {})
    if session.get("mode") not in MODES:
        raise ConfigError(f"session.mode must be one of {MODES}")
    fleet = cfg.get("fleet", {})
    n = fleet.get("n_devices", 0)
    if n < 1:
        raise ConfigError("fleet.n_devices must be >= 1")
    if n > fleet.get("rows", 0) * fleet.get("cols", 0):
        raise ConfigError("fleet.n_devices exceeds the seat grid")
    scene = cfg.get("scene", {})
    if scene.get("duration_s", 0) <= 0:
        raise ConfigError("scene.duration_s must be > 0")
    if not scene.get("targets"):
        raise ConfigError("scene.targets must be non-empty")
    for k in ("gaze_rate_hz", "frame_rate_hz"):
        if fleet.get(k, 0) <= 0:
            raise ConfigError(f"fleet.{k} must be > 0")


def fleet_params(cfg: dict) -> FleetParams:
    f = cfg["fleet"]
    return FleetParams(
        ego_width=int(f["ego_width"]),
        ego_height=int(f["ego_height"]),
        gaze_rate_hz=float(f["gaze_rate_hz"]),
        frame_rate_hz=float(f["frame_rate_hz"]),
        gaze_noise_sd=float(f["gaze_noise_sd"]),
        foveal_jitter_sd=float(f["foveal_jitter_sd"]),
        blink_rate_per_min=float(f["blink_rate_per_min"]),
        blink_duration_mean_ms=float(f["blink_duration_mean_ms"]),
        blink_duration_sd_ms=float(f["blink_duration_sd_ms"]),
        clock_offset_range_ms=float(f["clock_offset_range_ms"]),
        drift_ppm_range=tuple(f["drift_ppm_range"]),
        clock_jitter_sd_us=float(f["clock_jitter_sd_us"]),
        occlusion_fraction=float(f["occlusion_fraction"]),
        feature_noise_sd=float(f["feature_noise_sd"]),
        descriptor_noise_sd=float(f["descriptor_noise_sd"]),
        dropped_frame_fraction=float(f["dropped_frame_fraction"]),
    )


def attention_policy(cfg: dict) -> AttentionPolicy:
    return AttentionPolicy(dwell_mean_s=float(cfg["attention"]["dwell_mean_s"]))


def scene_config(cfg: dict) -> dict:
    sc = copy.deepcopy(cfg["scene"])
    sc.setdefault("seed", cfg["session"]["seed"])
    return sc


def data_dir() -> Path:
    return Path(os.environ.get("GAZEMESH_DATA_DIR", "gazemesh_out"))


def bind_address() -> tuple[str, int]:
    raw = os.environ.get("GAZEMESH_BIND", "127.0.0.1:8080")
    host, _, port = raw.rpartition(":")
    return host or "127.0.0.1", int(port)
