"""Ego-to-central gaze projection.

Matches feature frames between an egoview and the central view, estimates
the planar homography with a normalized DLT inside RANSAC, and transforms
time-paired gaze samples into the shared central coordinate space.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .scenesim import FeatureFrame, GazeTrace
from .timesync import TimeMap, map_timestamps

DEFAULT_RATIO = 0.8
DEFAULT_INLIER_PX = 3.0
DEFAULT_MAX_ITERS = 2000
DEFAULT_CONFIDENCE = 0.999
DEFAULT_PAIRING_TOLERANCE_MS = 25.0


@dataclass(frozen=True)
class Correspondence:
    ego_xy: tuple[float, float]
    central_xy: tuple[float, float]
    match_score: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (*self.ego_xy, *self.central_xy)):
            raise ValueError("correspondence coordinates must be finite")


@dataclass(frozen=True)
class Homography:
    """3x3 projective transform with inlier diagnostics from estimation."""

    m: np.ndarray
    inlier_count: int = 0
    mean_reprojection_error: float = 0.0

    def __post_init__(self) -> None:
        if abs(np.linalg.det(self.m)) <= 1e-12:
            raise ValueError("homography must be invertible")

    @classmethod
    def identity(cls) -> "Homography":
        return cls(m=np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(m=normalize_h(np.linalg.inv(self.m)),
                          inlier_count=self.inlier_count,
                          mean_reprojection_error=self.mean_reprojection_error)


@dataclass(frozen=True)
class TransformedGaze:
    device_id: str
    t_ref_ns: int
    x: float
    y: float
    in_frame: bool
    source_homography_t_ns: int


@dataclass(frozen=True)
class ProjectionGap:
    """Marker emitted when no ego frame is close enough to pair a central frame."""

    device_id: str
    t_ref_ns: int


def normalize_h(m: np.ndarray) -> np.ndarray:
    """Scale a homography so m[2,2] = 1, or to unit Frobenius norm if m22 ~ 0."""
    m = np.asarray(m, dtype=np.float64)
    fro = np.linalg.norm(m)
    if abs(m[2, 2]) > 1e-9 * fro:
        return m / m[2, 2]
    m = m / fro
    # fix the overall sign for determinism
    flat = m.ravel()
    lead = flat[np.argmax(np.abs(flat))]
    return m if lead >= 0 else -m


def apply_homography(m: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    ph = np.column_stack([pts, np.ones(len(pts))])
    q = ph @ m.T
    w = q[:, 2]
    if np.any(np.abs(w) < 1e-12):
        raise ValueError("projective singularity")
    return q[:, :2] / w[:, None]


def transform_gaze(h: Homography | np.ndarray, point: tuple[float, float]) -> tuple[float, float]:
    """Map one point through the homography (homogeneous multiply + divide)."""
    m = h.m if isinstance(h, Homography) else np.asarray(h, dtype=np.float64)
    out = apply_homography(m, np.array([point]))
    return float(out[0, 0]), float(out[0, 1])


def match_features(
    ego: FeatureFrame,
    central: FeatureFrame,
    ratio_threshold: float = DEFAULT_RATIO,
) -> list[Correspondence]:
    """Nearest-neighbor descriptor matching with ratio test and cross-check.

    A candidate survives only if its best distance is strictly below
    ratio * second-best (so duplicated descriptors are rejected as
    ambiguous) and the match is mutual. Output is sorted by match score,
    best first.
    """
    if len(ego.ids) == 0 or len(central.ids) == 0:
        raise ValueError("insufficient correspondences")
    de = ego.desc
    dc = central.desc
    # squared L2 distance matrix
    d2 = (de * de).sum(1)[:, None] + (dc * dc).sum(1)[None, :] - 2.0 * de @ dc.T
    np.maximum(d2, 0.0, out=d2)
    d = np.sqrt(d2)

    n_e = len(ego.ids)
    nn_c = np.argmin(d, axis=1)  # best central per ego
    nn_e = np.argmin(d, axis=0)  # best ego per central
    rows = np.arange(n_e)
    d1 = d[rows, nn_c]
    mutual = nn_e[nn_c] == rows
    if d.shape[1] > 1:
        masked = d.copy()
        masked[rows, nn_c] = np.inf
        d2 = masked.min(axis=1)
        ok = mutual & (d1 < ratio_threshold * d2)
        scores = 1.0 - np.divide(d1, d2, out=np.ones_like(d1), where=d2 > 0)
    else:
        ok = mutual
        scores = np.ones(n_e)
    corrs = [
        Correspondence(
            ego_xy=(float(ego.xy[i, 0]), float(ego.xy[i, 1])),
            central_xy=(float(central.xy[nn_c[i], 0]), float(central.xy[nn_c[i], 1])),
            match_score=float(scores[i]),
        )
        for i in np.flatnonzero(ok)
    ]
    if len(corrs) < 4:
        raise ValueError("insufficient correspondences")
    corrs.sort(key=lambda c: -c.match_score)
    return corrs


def _hartley_normalize(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate to centroid 0 and scale to RMS distance sqrt(2)."""
    c = pts.mean(axis=0)
    rms = math.sqrt(np.mean(np.sum((pts - c) ** 2, axis=1)))
    s = math.sqrt(2) / max(rms, 1e-12)
    t = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]], dtype=np.float64)
    return (pts - c) * s, t


def _dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    n = len(src)
    a = np.zeros((2 * n, 9), dtype=np.float64)
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    a[0::2] = np.column_stack([x, y, np.ones(n), np.zeros((n, 3)), -u * x, -u * y, -u])
    a[1::2] = np.column_stack([np.zeros((n, 3)), x, y, np.ones(n), -v * x, -v * y, -v])
    _, sv, vt = np.linalg.svd(a)
    if n > 4 and sv[7] < 1e-12:  # rank-deficient beyond the minimal case
        return None
    h = vt[-1].reshape(3, 3)
    if abs(np.linalg.det(h)) < 1e-15:
        return None
    return h


def _has_collinear_triple(pts: np.ndarray, eps: float = 1e-6) -> bool:
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            for c in range(b + 1, len(pts)):
                area = abs((pts[b, 0] - pts[a, 0]) * (pts[c, 1] - pts[a, 1])
                           - (pts[b, 1] - pts[a, 1]) * (pts[c, 0] - pts[a, 0]))
                if area < eps:
                    return True
    return False


def estimate_homography(
    corrs: Sequence[Correspondence],
    inlier_threshold: float = DEFAULT_INLIER_PX,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
    confidence: float = DEFAULT_CONFIDENCE,
) -> Homography:
    """RANSAC homography from correspondences.

    Four-point minimal samples are solved with a Hartley-normalized DLT;
    inliers are counted on forward reprojection error; the best consensus
    set is refitted with a DLT over all its members. The iteration budget
    adapts to the observed inlier ratio (standard confidence formula) and
    is capped at max_iters. Deterministic for a fixed seed.
    """
    if len(corrs) < 4:
        raise ValueError("need at least 4 correspondences")
    ego = np.array([c.ego_xy for c in corrs], dtype=np.float64)
    cen = np.array([c.central_xy for c in corrs], dtype=np.float64)
    n = len(corrs)
    ego_n, t_e = _hartley_normalize(ego)
    cen_n, t_c = _hartley_normalize(cen)
    t_c_inv = np.linalg.inv(t_c)

    rng = np.random.default_rng(seed)
    best_mask: np.ndarray | None = None
    best_count = 0
    best_err = np.inf
    needed = max_iters
    it = 0
    while it < min(max_iters, needed):
        it += 1
        idx = rng.choice(n, size=4, replace=False)
        if _has_collinear_triple(ego_n[idx]) or _has_collinear_triple(cen_n[idx]):
            continue
        hn = _dlt(ego_n[idx], cen_n[idx])
        if hn is None:
            continue
        h = t_c_inv @ hn @ t_e
        try:
            proj = apply_homography(h, ego)
        except ValueError:
            continue
        err = np.hypot(proj[:, 0] - cen[:, 0], proj[:, 1] - cen[:, 1])
        mask = err <= inlier_threshold
        count = int(mask.sum())
        mean_err = float(err[mask].mean()) if count else np.inf
        if count > best_count or (count == best_count and mean_err < best_err):
            best_count, best_mask, best_err = count, mask, mean_err
            w = count / n
            if 0 < w < 1:
                denom = math.log(max(1.0 - w ** 4, 1e-12))
                needed = min(max_iters, int(math.ceil(math.log(1.0 - confidence) / denom)))
            elif w >= 1:
                needed = it
    if best_mask is None or best_count < 4:
        raise ValueError("degenerate configuration")

    sel = np.flatnonzero(best_mask)
    hn = _dlt(ego_n[sel], cen_n[sel])
    if hn is None:
        raise ValueError("degenerate configuration")
    h = normalize_h(t_c_inv @ hn @ t_e)
    proj = apply_homography(h, ego[sel])
    err = np.hypot(proj[:, 0] - cen[sel, 0], proj[:, 1] - cen[sel, 1])
    return Homography(m=h, inlier_count=best_count, mean_reprojection_error=float(err.mean()))


@dataclass(frozen=True)
class ReprojectionReport:
    mean_px: float
    sd_px: float
    max_px: float
    inlier_fraction: float


def reprojection_report(
    h: Homography | np.ndarray,
    corrs: Sequence[Correspondence],
    inlier_threshold: float = DEFAULT_INLIER_PX,
) -> ReprojectionReport:
    """Euclidean residual statistics of the homography over correspondences."""
    if not corrs:
        raise ValueError("no correspondences")
    m = h.m if isinstance(h, Homography) else np.asarray(h, dtype=np.float64)
    ego = np.array([c.ego_xy for c in corrs], dtype=np.float64)
    cen = np.array([c.central_xy for c in corrs], dtype=np.float64)
    proj = apply_homography(m, ego)
    err = np.hypot(proj[:, 0] - cen[:, 0], proj[:, 1] - cen[:, 1])
    return ReprojectionReport(
        mean_px=float(err.mean()),
        sd_px=float(err.std()),
        max_px=float(err.max()),
        inlier_fraction=float(np.mean(err <= inlier_threshold)),
    )


@dataclass
class ProjectionDiagnostics:
    """Per-ego-frame estimation results plus pairing bookkeeping."""

    homography_rows: list[tuple[str, int, int, float]]  # device_id, t_ns, inliers, mean_err_px
    gaps: list[ProjectionGap]
    unpaired_gaze_slots: int = 0
    failed_estimations: int = 0


def project_batch(
    traces: Mapping[str, GazeTrace] | Mapping[str, tuple[np.ndarray, np.ndarray, np.ndarray]],
    ego_frames: Mapping[str, Sequence[FeatureFrame]],
    central_frames: Sequence[FeatureFrame],
    timemaps: Mapping[str, TimeMap],
    pairing_tolerance_ms: float = DEFAULT_PAIRING_TOLERANCE_MS,
    inlier_threshold: float = DEFAULT_INLIER_PX,
    ratio_threshold: float = DEFAULT_RATIO,
    central_dims: tuple[int, int] = (720, 480),
    seed: int = 0,
) -> tuple[list[TransformedGaze], ProjectionDiagnostics]:
    """Project every device's gaze onto the central frames.

    Device timestamps are first corrected onto the reference clock. For each
    central frame and device, the nearest non-blink gaze sample within the
    pairing tolerance is transformed with the homography of the device's
    nearest ego frame (estimated once per ego frame and cached). Devices
    whose nearest ego frame is farther than twice the ego frame interval
    yield a gap marker instead of a sample. Output cadence equals the
    central frame cadence, ordered by (t_ref, device_id).
    """
    tol_ns = pairing_tolerance_ms * 1e6
    central_t = np.array([f.t_ns for f in central_frames], dtype=np.int64)
    order = np.argsort(central_t, kind="stable")
    central_t = central_t[order]
    central_sorted = [central_frames[i] for i in order]

    out: list[TransformedGaze] = []
    diag = ProjectionDiagnostics(homography_rows=[], gaps=[])

    for device_id in sorted(ego_frames):
        tm = timemaps[device_id]
        trace = traces[device_id]
        if isinstance(trace, GazeTrace):
            g_tdev, g_xy, g_blink = trace.t_device_ns, trace.ego_xy, trace.blink
        else:
            g_tdev, g_xy, g_blink = trace
        keep = ~np.asarray(g_blink, dtype=bool)
        g_tref = map_timestamps(tm, np.asarray(g_tdev)[keep])
        g_xy = np.asarray(g_xy, dtype=np.float64)[keep]
        g_order = np.argsort(g_tref, kind="stable")
        g_tref = g_tref[g_order]
        g_xy = g_xy[g_order]

        frames = ego_frames[device_id]
        if not frames or len(g_tref) == 0:
            diag.gaps.extend(ProjectionGap(device_id, int(t)) for t in central_t)
            continue
        e_tref = map_timestamps(tm, np.array([f.t_ns for f in frames], dtype=np.int64))
        e_order = np.argsort(e_tref, kind="stable")
        e_tref = e_tref[e_order]
        frames = [frames[i] for i in e_order]
        intervals = np.diff(e_tref)
        ego_interval = float(np.median(intervals)) if len(intervals) else 1e9

        nearest_gaze = _nearest_index(g_tref, central_t)
        gaze_dt = np.abs(g_tref[nearest_gaze] - central_t)
        nearest_ego = _nearest_index(e_tref, central_t)
        ego_dt = np.abs(e_tref[nearest_ego] - central_t)

        h_cache: dict[int, Homography | None] = {}
        for ci in range(len(central_t)):
            t_c = int(central_t[ci])
            if ego_dt[ci] > 2 * ego_interval:
                diag.gaps.append(ProjectionGap(device_id, t_c))
                continue
            if gaze_dt[ci] > tol_ns:
                diag.unpaired_gaze_slots += 1
                continue
            ei = int(nearest_ego[ci])
            if ei not in h_cache:
                h_cache[ei] = _estimate_for_frame(
                    frames[ei], central_sorted, central_t, int(e_tref[ei]),
                    inlier_threshold, ratio_threshold, seed, diag, device_id,
                )
            h = h_cache[ei]
            if h is None:
                continue
            x, y = transform_gaze(h, (float(g_xy[nearest_gaze[ci], 0]), float(g_xy[nearest_gaze[ci], 1])))
            w, hgt = central_dims
            out.append(TransformedGaze(
                device_id=device_id,
                t_ref_ns=t_c,
                x=x,
                y=y,
                in_frame=bool(0 <= x <= w and 0 <= y <= hgt),
                source_homography_t_ns=int(e_tref[ei]),
            ))
    out.sort(key=lambda s: (s.t_ref_ns, s.device_id))
    return out, diag


def _nearest_index(sorted_times: np.ndarray, queries: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(sorted_times, queries)
    pos = np.clip(pos, 1, len(sorted_times) - 1) if len(sorted_times) > 1 else np.zeros(len(queries), dtype=int)
    left = sorted_times[np.maximum(pos - 1, 0)]
    right = sorted_times[np.minimum(pos, len(sorted_times) - 1)]
    choose_right = np.abs(right - queries) < np.abs(queries - left)
    return np.where(choose_right, np.minimum(pos, len(sorted_times) - 1), np.maximum(pos - 1, 0))


def _estimate_for_frame(
    ego_frame: FeatureFrame,
    central_sorted: Sequence[FeatureFrame],
    central_t: np.ndarray,
    t_ego_ref: int,
    inlier_threshold: float,
    ratio_threshold: float,
    seed: int,
    diag: ProjectionDiagnostics,
    device_id: str,
) -> Homography | None:
    ci = int(_nearest_index(central_t, np.array([t_ego_ref]))[0])
    try:
        corrs = match_features(ego_frame, central_sorted[ci], ratio_threshold)
        h = estimate_homography(corrs, inlier_threshold=inlier_threshold, seed=seed)
    except ValueError:
        diag.failed_estimations += 1
        return None
    diag.homography_rows.append((device_id, t_ego_ref, h.inlier_count, h.mean_reprojection_error))
    return h


# --- wire formats -------------------------------------------------------------

def transformed_to_jsonl(s: TransformedGaze) -> str:
    return json.dumps({
        "device_id": s.device_id,
        "t_ns": s.t_ref_ns,
        "x": round(s.x, 4),
        "y": round(s.y, 4),
        "in_frame": s.in_frame,
    }, sort_keys=True)


def transformed_from_jsonl(line: str) -> TransformedGaze:
    d = json.loads(line)
    return TransformedGaze(device_id=d["device_id"], t_ref_ns=int(d["t_ns"]), x=float(d["x"]),
                           y=float(d["y"]), in_frame=bool(d["in_frame"]), source_homography_t_ns=0)


def write_homography_diagnostics(path: Path | str, rows: Sequence[tuple[str, int, int, float]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["device_id", "t_ns", "inliers", "mean_err_px"])
        for device_id, t_ns, inliers, mean_err in rows:
            writer.writerow([device_id, t_ns, inliers, f"{mean_err:.6g}"])
