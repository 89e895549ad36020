"""Command-line entry points: sim / record / stream / project / analyze / viz / serve.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import analysis, control, projection, scenesim, viz
from .config import ConfigError, bind_address, data_dir, load_config

log = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load(config_path: str | None, seed: int | None, out: str | None, mode: str | None = None) -> dict:
    overrides: dict = {"session": {}}
    if seed is not None:
        overrides["session"]["seed"] = seed
        overrides["scene"] = {"seed": seed}
    if out is not None:
        overrides["session"]["out_dir"] = out
    elif config_path is None:
        overrides["session"]["out_dir"] = str(data_dir())
    if mode is not None:
        overrides["session"]["mode"] = mode
    return load_config(config_path, overrides)


def _run(fn):
    try:
        fn()
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        log.exception("command failed")
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_RUNTIME)


common = [
    click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config document"),
    click.option("--seed", type=int, default=None, help="Session seed override"),
    click.option("--out", type=click.Path(), default=None, help="Output directory"),
]


def with_common(f):
    for opt in reversed(common):
        f = opt(f)
    return f


@click.group()
def main() -> None:
    """Multi-device synchronized gaze pipeline."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@with_common
def sim(config_path, seed, out) -> None:
    """Generate raw simulation logs (gaze, frames, ground truth) without a session."""
    def go():
        cfg = _load(config_path, seed, out)
        bundle = control.simulate_fleet(cfg)
        out_dir = Path(cfg["session"]["out_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "scene.json").write_text(bundle.scene.to_json() + "\n")
        with open(out_dir / "gaze.jsonl", "w", newline="\n") as f:
            for trace in bundle.traces.values():
                for s in trace.samples():
                    f.write(scenesim.gaze_to_jsonl(s) + "\n")
        with open(out_dir / "frames.jsonl", "w", newline="\n") as f:
            for frames in bundle.ego_frames.values():
                for fr in frames:
                    f.write(scenesim.frame_to_jsonl(fr) + "\n")
            for fr in bundle.central_frames:
                f.write(scenesim.frame_to_jsonl(fr) + "\n")
        scenesim.write_truth_jsonl(out_dir / "truth.jsonl", bundle.devices, list(bundle.traces.values()))
        for did, samples in bundle.sync_samples.items():
            control.timesync.write_offset_csv(samples, out_dir / "offsets" / f"{did}.csv")
        click.echo(f"simulated {len(bundle.devices)} devices -> {out_dir}")
    _run(go)


@main.command()
@with_common
def record(config_path, seed, out) -> None:
    """Run a record-mode session: persist all topics, then analyze post-hoc."""
    def go():
        cfg = _load(config_path, seed, out, mode="record")
        result = control.run_session(cfg)
        click.echo(f"session recorded -> {result.out_dir}")
    _run(go)


@main.command()
@with_common
def stream(config_path, seed, out) -> None:
    """Run a streaming-mode session with live metrics."""
    def go():
        cfg = _load(config_path, seed, out, mode="stream")
        result = control.run_session(cfg)
        n = result.supervisor.live.transformed_count if result.supervisor else 0
        click.echo(f"streamed session complete ({n} transformed samples) -> {result.out_dir}")
    _run(go)


@main.command()
@with_common
@click.option("--session-dir", type=click.Path(exists=True), default=None,
              help="Existing session directory (defaults to <out>/session)")
def project(config_path, seed, out, session_dir) -> None:
    """Re-run projection + analysis over a persisted session."""
    def go():
        cfg = _load(config_path, seed, out)
        out_dir = Path(cfg["session"]["out_dir"])
        sdir = Path(session_dir) if session_dir else out_dir / "session"
        if not sdir.exists():
            raise ConfigError(f"session directory not found: {sdir}")
        control.posthoc_pipeline(sdir, out_dir, cfg)
        click.echo(f"projection outputs -> {out_dir}")
    _run(go)


@main.command()
@with_common
def analyze(config_path, seed, out) -> None:
    """Recompute analysis CSVs and report figures from session outputs."""
    def go():
        cfg = _load(config_path, seed, out)
        out_dir = Path(cfg["session"]["out_dir"])
        sdir = out_dir / "session"
        if not sdir.exists():
            raise ConfigError(f"session directory not found: {sdir}")
        paths = control.posthoc_pipeline(sdir, out_dir, cfg)
        figs = [str(v) for k, v in paths.items() if k.startswith("fig_")]
        click.echo(f"analysis CSVs and {len(figs)} figures -> {out_dir}")
    _run(go)


@main.command("viz")
@with_common
@click.option("--frames", "n_frames", type=int, default=5, help="How many central frames to render")
def viz_cmd(config_path, seed, out, n_frames) -> None:
    """Render deterministic PPM frames and series CSVs from session outputs."""
    def go():
        cfg = _load(config_path, seed, out)
        out_dir = Path(cfg["session"]["out_dir"])
        tpath = out_dir / "transformed.jsonl"
        if not tpath.exists():
            raise ConfigError(f"no transformed gaze at {tpath}; run record/project first")
        samples = [projection.transformed_from_jsonl(line) for line in tpath.read_text().splitlines()]
        dims = (int(cfg["scene"]["central_width"]), int(cfg["scene"]["central_height"]))
        by_frame: dict[int, list] = {}
        for s in samples:
            by_frame.setdefault(s.t_ref_ns, []).append((s.device_id, s.x, s.y))
        device_order = sorted({s.device_id for s in samples})
        vdir = out_dir / "viz"
        for t in sorted(by_frame)[:n_frames]:
            img, _ = viz.render_gaze_on_view(dims, by_frame[t], device_order=device_order)
            viz.write_ppm(img, vdir / "central_gaze" / f"{t}.ppm")
        all_pts = np.array([[s.x, s.y] for s in samples]) if samples else np.zeros((0, 2))
        grid = analysis.heatmap(all_pts, dims, cell_size=4.0)
        overlay = viz.render_heatmap_overlay(grid, dims)
        t_last = max(by_frame) if by_frame else 0
        viz.write_ppm(overlay, vdir / "central_heatmap" / f"{t_last}.ppm")
        adir = out_dir / "analysis"
        for name in ("sd_x", "sd_y", "contour_area", "points_in_frame"):
            p = adir / f"collective_{name}.csv"
            if p.exists():
                t, v = analysis.read_series_csv(p)
                viz.export_series_csv(vdir / "series", name, t, v)
        click.echo(f"renders -> {vdir}")
    _run(go)


@main.command()
@with_common
@click.option("--bind", default=None, help="host:port (default env GAZEMESH_BIND or 127.0.0.1:8080)")
def serve(config_path, seed, out, bind) -> None:
    """Run a session and serve the operator API for the dashboard."""
    def go():
        from .api import serve as api_serve

        cfg = _load(config_path, seed, out, mode="both")
        result = control.run_session(cfg)
        if bind:
            host, _, port = bind.rpartition(":")
            host, port = host or "127.0.0.1", int(port)
        else:
            host, port = bind_address()
        click.echo(f"serving {len(result.device_ids)} devices on http://{host}:{port}")
        api_serve(result.supervisor, host, port)
    _run(go)


if __name__ == "__main__":
    main()
