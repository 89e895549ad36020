"""HTTP + WebSocket operator API over a running session supervisor.

The dashboard and CLI consume exactly this surface: device status, per-device
recording controls, session annotations, collective metric series, and
rate-limited live streams for gaze, the central heatmap, and alerts.
"""

from __future__ import annotations

import asyncio
import logging
import time
import numpy as np
from fastapi import FastAPI, Query, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse

from .control import ACTIONS, FleetSupervisor

log = logging.getLogger(__name__)

DEFAULT_STREAM_RATE_HZ = 1.0
MAX_STREAM_RATE_HZ = 30.0


class RateGate:
    """Minimum-interval gate: at most rate_hz events per second pass."""

    def __init__(self, rate_hz: float, clock=time.monotonic):
        if rate_hz <= 0:
            raise ValueError("rate must be > 0")
        self.interval = 1.0 / rate_hz
        self.clock = clock
        self._last: float | None = None

    def ready(self) -> bool:
        now = self.clock()
        if self._last is None or now - self._last >= self.interval:
            self._last = now
            return True
        return False

    def wait_s(self) -> float:
        if self._last is None:
            return 0.0
        return max(0.0, self._last + self.interval - self.clock())


def clamp_rate(rate: float | None) -> float:
    if rate is None or rate <= 0:
        return DEFAULT_STREAM_RATE_HZ
    return min(float(rate), MAX_STREAM_RATE_HZ)


def create_app(supervisor: FleetSupervisor) -> FastAPI:
    app = FastAPI(title="gazemesh control", version="0.1.0")
    # the dashboard is served from its own origin
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    @app.get("/devices")
    def devices():
        return [s.to_json() for s in supervisor.poll_status()]

    @app.post("/devices/{device_id}/{action}")
    def device_action(device_id: str, action: str):
        if action not in ACTIONS:
            return JSONResponse({"error": f"unknown action: {action}"}, status_code=404)
        result = supervisor.trigger(action, [device_id])[device_id]
        status = 200 if result.get("ok") else 409
        return JSONResponse({"device_id": device_id, "action": action, **result}, status_code=status)

    @app.post("/session/annotate")
    def annotate(body: dict):
        label = body.get("label", "")
        if not label:
            return JSONResponse({"error": "label must be non-empty"}, status_code=422)
        ann = supervisor.annotate(label)
        return {"label": ann.label, "t_ns": ann.t_ref_ns}

    @app.get("/metrics/collective")
    def collective(from_ns: int = Query(default=0), to_ns: int | None = Query(default=None)):
        out = {}
        with supervisor.live.lock:
            for name, series in supervisor.live.collective.items():
                out[name] = [[t, v] for t, v in series
                             if t >= from_ns and (to_ns is None or t <= to_ns)]
        return out

    @app.websocket("/streams/gaze")
    async def ws_gaze(ws: WebSocket, rate: float = Query(default=DEFAULT_STREAM_RATE_HZ)):
        await ws.accept()
        rate = clamp_rate(rate)
        cursor: dict[str, int] = {}
        try:
            while True:
                batches = {}
                with supervisor.live.lock:
                    for did, dq in supervisor.live.recent_gaze.items():
                        rows = list(dq)
                        new = [r for r in rows if r[0] > cursor.get(did, -1)]
                        if new:
                            cursor[did] = new[-1][0]
                            batches[did] = [[int(t), float(x), float(y)] for t, x, y in new]
                if batches:
                    await ws.send_json({"type": "gaze", "batches": batches})
                await asyncio.sleep(1.0 / rate)
        except (WebSocketDisconnect, RuntimeError):
            return

    @app.websocket("/streams/heatmap")
    async def ws_heatmap(ws: WebSocket, rate: float = Query(default=1.0)):
        await ws.accept()
        rate = min(clamp_rate(rate), 1.0)  # heatmap stream is capped at 1 Hz
        last_t = -1
        try:
            while True:
                payload = None
                with supervisor.live.lock:
                    grid = supervisor.live.heatmap
                    if grid is not None and supervisor.live.heatmap_t_ns != last_t:
                        last_t = supervisor.live.heatmap_t_ns
                        vmax = grid.values.max()
                        scaled = (grid.values / vmax * 255).astype(np.uint8) if vmax > 0 else \
                            np.zeros_like(grid.values, dtype=np.uint8)
                        payload = {
                            "type": "heatmap",
                            "t_ns": last_t,
                            "width": grid.width,
                            "height": grid.height,
                            "cell_size": grid.cell_size,
                            "values": scaled.ravel().tolist(),
                        }
                if payload is not None:
                    await ws.send_json(payload)
                await asyncio.sleep(1.0 / rate)
        except (WebSocketDisconnect, RuntimeError):
            return

    @app.websocket("/streams/alerts")
    async def ws_alerts(ws: WebSocket, rate: float = Query(default=2.0)):
        await ws.accept()
        rate = clamp_rate(rate)
        sent = 0
        try:
            while True:
                with supervisor.live.lock:
                    fresh = supervisor.live.alerts[sent:]
                    sent = len(supervisor.live.alerts)
                for event in fresh:
                    await ws.send_json(event)  # {"type": "alert"|"clear", "key": ...}
                await asyncio.sleep(1.0 / rate)
        except (WebSocketDisconnect, RuntimeError):
            return

    return app


def serve(supervisor: FleetSupervisor, host: str, port: int) -> None:
    """Blocking uvicorn server around the control app."""
    import uvicorn

    uvicorn.run(create_app(supervisor), host=host, port=port, log_level="warning")
