"""Individual and collective gaze metrics.

Everything here is a pure function of its inputs: velocity, density
heatmaps, heatmap similarity/correlation, spatial entropy, convex-hull
contour area, dispersion, blink rasters, pairwise matrices, and segment
cross-correlations.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import ndimage, stats

log = logging.getLogger(__name__)

DEFAULT_SIGMA_PX = 16.0  # one visual degree at egoview resolution
DEFAULT_BIN_PX = 16.0
DEFAULT_ROLLING_WINDOW = 150


@dataclass(frozen=True)
class GazeSeries:
    """Time-sorted gaze trace for one device; blink samples already removed."""

    device_id: str
    t_ns: np.ndarray
    xy: np.ndarray

    def __post_init__(self) -> None:
        if len(self.t_ns) != len(self.xy):
            raise ValueError("t_ns and xy lengths differ")
        if len(self.t_ns) > 1 and not np.all(np.diff(self.t_ns) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t_ns)


@dataclass
class HeatmapGrid:
    """Normalized gaze-density field; values sum to 1 unless the input was empty."""

    values: np.ndarray  # (rows, cols)
    cell_size: float = 1.0
    empty: bool = False

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def _as_points(series) -> np.ndarray:
    if isinstance(series, GazeSeries):
        return np.asarray(series.xy, dtype=np.float64)
    pts = np.asarray(series, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 2:
        pts = pts[None, :]
    return pts


def gaze_velocity(series) -> float:
    """Mean inter-sample Euclidean distance, in pixels per sample."""
    pts = _as_points(series)
    if len(pts) < 2:
        raise ValueError("need at least 2 samples for velocity")
    return float(np.mean(np.hypot(*np.diff(pts, axis=0).T)))


def heatmap(
    series,
    frame_dims: tuple[int, int],
    sigma_px: float = DEFAULT_SIGMA_PX,
    cell_size: float = 1.0,
) -> HeatmapGrid:
    """Gaussian-smoothed gaze density over the frame, normalized to sum 1.

    Point mass is accumulated per cell and convolved with an isotropic
    Gaussian (kernel radius 3 sigma). Kernel mass clipped at the frame
    border is compensated by dividing by the filtered all-ones mask, so
    border points keep their full weight. Out-of-frame points are dropped.
    """
    if sigma_px <= 0:
        raise ValueError("sigma must be > 0")
    w, h = frame_dims
    cols = int(math.ceil(w / cell_size))
    rows = int(math.ceil(h / cell_size))
    pts = _as_points(series)
    counts = np.zeros((rows, cols), dtype=np.float64)
    if len(pts):
        inside = (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
        pts = pts[inside]
    if len(pts) == 0:
        return HeatmapGrid(values=counts, cell_size=cell_size, empty=True)
    cx = np.minimum((pts[:, 0] / cell_size).astype(int), cols - 1)
    cy = np.minimum((pts[:, 1] / cell_size).astype(int), rows - 1)
    np.add.at(counts, (cy, cx), 1.0)

    sigma_cells = sigma_px / cell_size
    blurred = ndimage.gaussian_filter(counts, sigma_cells, mode="constant", truncate=3.0)
    support = ndimage.gaussian_filter(np.ones_like(counts), sigma_cells, mode="constant", truncate=3.0)
    values = blurred / support
    values /= values.sum()
    return HeatmapGrid(values=values, cell_size=cell_size, empty=False)


def heatmap_sim(a: HeatmapGrid, b: HeatmapGrid) -> float:
    """Histogram intersection of two same-shape heatmaps, in [0, 1]."""
    if a.values.shape != b.values.shape:
        raise ValueError("heatmap shape mismatch")
    return float(np.minimum(a.values, b.values).sum())


def heatmap_cc(a: HeatmapGrid, b: HeatmapGrid) -> float:
    """Pearson correlation between cell intensities of two heatmaps."""
    if a.values.shape != b.values.shape:
        raise ValueError("heatmap shape mismatch")
    x = a.values.ravel()
    y = b.values.ravel()
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("zero variance")
    xc = x - x.mean()
    yc = y - y.mean()
    return float(np.dot(xc, yc) / math.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))


def gaze_entropy(series, frame_dims: tuple[int, int], bin_px: float = DEFAULT_BIN_PX) -> float:
    """Normalized Shannon entropy of the binned gaze distribution, in [0, 1].

    Bins tile the full frame; the entropy is divided by log2(total bins) so
    a single occupied bin scores 0 and an exactly uniform distribution 1.
    """
    if bin_px <= 0:
        raise ValueError("bin size must be > 0")
    pts = _as_points(series)
    if len(pts) == 0:
        raise ValueError("empty gaze series")
    w, h = frame_dims
    nx = int(math.ceil(w / bin_px))
    ny = int(math.ceil(h / bin_px))
    inside = (pts[:, 0] >= 0) & (pts[:, 0] < w) & (pts[:, 1] >= 0) & (pts[:, 1] < h)
    pts = pts[inside]
    if len(pts) == 0:
        raise ValueError("empty gaze series")
    bx = np.minimum((pts[:, 0] / bin_px).astype(int), nx - 1)
    by = np.minimum((pts[:, 1] / bin_px).astype(int), ny - 1)
    counts = np.bincount(by * nx + bx, minlength=nx * ny).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    entropy = float(-(p * np.log2(p)).sum())
    total_bins = nx * ny
    if total_bins <= 1:
        return 0.0
    return entropy / math.log2(total_bins)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, counter-clockwise, collinear points dropped."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace area of a simple polygon given ordered vertices."""
    v = np.asarray(vertices, dtype=np.float64)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def contour_area(points, frame_dims: tuple[int, int]) -> float:
    """Convex-hull area of simultaneous gaze points, normalized by frame area."""
    pts = _as_points(points)
    if len(pts) == 0:
        raise ValueError("need at least 1 point")
    hull = convex_hull(pts)
    w, h = frame_dims
    return polygon_area(hull) / (w * h)


def dispersion_sd(points) -> tuple[float, float]:
    """Population standard deviation of point coordinates, per axis."""
    pts = _as_points(points)
    if len(pts) == 0:
        raise ValueError("need at least 1 point")
    return float(np.std(pts[:, 0])), float(np.std(pts[:, 1]))


def points_in_frame(points, bounds: tuple[int, int]) -> int:
    """Count points inside the frame, bounds inclusive."""
    pts = _as_points(points)
    if len(pts) == 0:
        return 0
    w, h = bounds
    inside = (pts[:, 0] >= 0) & (pts[:, 0] <= w) & (pts[:, 1] >= 0) & (pts[:, 1] <= h)
    return int(inside.sum())


def blink_raster(
    intervals_by_device: Mapping[str, Sequence[tuple[int, int]]],
    t_start_ns: int,
    t_end_ns: int,
    bin_ms: float = 100.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Aggregate blink occupancy over time.

    Returns (bin_start_times_ns, density) where density is the mean fraction
    of devices blinking within each bin (time-weighted occupancy).
    """
    if t_end_ns <= t_start_ns:
        raise ValueError("empty time range")
    bin_ns = int(bin_ms * 1e6)
    n_bins = int(math.ceil((t_end_ns - t_start_ns) / bin_ns))
    edges = t_start_ns + np.arange(n_bins + 1, dtype=np.int64) * bin_ns
    density = np.zeros(n_bins, dtype=np.float64)
    n_dev = len(intervals_by_device)
    if n_dev == 0:
        return edges[:-1], density
    for intervals in intervals_by_device.values():
        for start, end in intervals:
            if end <= start:
                raise ValueError("blink interval end must be after start")
            lo = np.maximum(edges[:-1], start)
            hi = np.minimum(edges[1:], end)
            density += np.maximum(hi - lo, 0) / bin_ns
    return edges[:-1], density / n_dev


def pairwise_matrix(metric: Callable, inputs: Mapping[str, object]) -> tuple[list[str], np.ndarray]:
    """Symmetric matrix of a pair metric over all unordered device pairs."""
    ids = sorted(inputs)
    n = len(ids)
    m = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i, n):
            v = metric(inputs[ids[i]], inputs[ids[j]])
            m[i, j] = m[j, i] = v
    return ids, m


def pairwise_heatmap_matrix(
    heatmaps: Mapping[str, HeatmapGrid], metric: Callable = heatmap_sim
) -> tuple[list[str], np.ndarray]:
    """pairwise_matrix over heatmaps, excluding empty-input grids."""
    usable = {k: v for k, v in heatmaps.items() if not v.empty}
    dropped = sorted(set(heatmaps) - set(usable))
    if dropped:
        log.warning("excluding %d empty heatmaps from pairwise matrix: %s", len(dropped), dropped)
    return pairwise_matrix(metric, usable)


def sim_distance_correlation(
    ids: Sequence[str], matrix: np.ndarray, seatmap: Mapping[str, tuple[int, int]]
) -> tuple[float, float]:
    """Pearson correlation between pair metric values and pair seat distances.

    Returns (r, p) with p from the t-distribution with n_pairs - 2 degrees
    of freedom.
    """
    if len(ids) < 3:
        raise ValueError("need at least 3 devices for correlation")
    vals, dists = [], []
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            ra, ca = seatmap[ids[i]]
            rb, cb = seatmap[ids[j]]
            vals.append(matrix[i, j])
            dists.append(math.hypot(ra - rb, ca - cb))
    v = np.asarray(vals)
    d = np.asarray(dists)
    if np.ptp(v) == 0 or np.ptp(d) == 0:
        raise ValueError("zero variance")
    vc, dc = v - v.mean(), d - d.mean()
    r = float(np.dot(vc, dc) / math.sqrt(np.dot(vc, vc) * np.dot(dc, dc)))
    n = len(v)
    r_cl = min(1.0 - 1e-15, max(-1.0 + 1e-15, r))
    t = r_cl * math.sqrt((n - 2) / (1.0 - r_cl * r_cl))
    p = float(2.0 * stats.t.sf(abs(t), df=n - 2))
    return r, p


def mean_offdiagonal(matrix: np.ndarray) -> float:
    n = matrix.shape[0]
    if n < 2:
        raise ValueError("need at least 2 devices")
    iu = np.triu_indices(n, k=1)
    return float(matrix[iu].mean())


def rolling_mean(values: Sequence[float], window: int = DEFAULT_ROLLING_WINDOW) -> np.ndarray:
    """Centered rolling mean, truncated (not padded) at the edges."""
    if window < 1:
        raise ValueError("window must be >= 1")
    v = np.asarray(values, dtype=np.float64)
    n = len(v)
    if n == 0:
        return v.copy()
    left = (window - 1) // 2
    right = window // 2
    csum = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(n)
    lo = np.maximum(idx - left, 0)
    hi = np.minimum(idx + right, n - 1)
    return (csum[hi + 1] - csum[lo]) / (hi - lo + 1)


def segment_cross_correlation(
    t_ns: np.ndarray,
    values: np.ndarray,
    segments: Sequence[tuple[int, int]],
) -> np.ndarray:
    """Pearson correlation matrix between time-series segments.

    Each pair of segments is compared after linearly resampling the shorter
    one to the length of the longer. Segments must be non-overlapping and
    time-sorted.
    """
    t = np.asarray(t_ns)
    v = np.asarray(values, dtype=np.float64)
    for k in range(1, len(segments)):
        if segments[k][0] < segments[k - 1][1]:
            raise ValueError("segments must be non-overlapping and time-sorted")
    chunks = []
    for lo, hi in segments:
        sel = v[(t >= lo) & (t < hi)]
        if len(sel) < 2:
            raise ValueError("segment shorter than 2 samples")
        chunks.append(sel)
    n = len(chunks)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = chunks[i], chunks[j]
            m = max(len(a), len(b))
            grid = np.linspace(0.0, 1.0, m)
            ar = np.interp(grid, np.linspace(0.0, 1.0, len(a)), a)
            br = np.interp(grid, np.linspace(0.0, 1.0, len(b)), b)
            if np.ptp(ar) == 0 or np.ptp(br) == 0:
                raise ValueError("zero variance")
            ac, bc = ar - ar.mean(), br - br.mean()
            out[i, j] = out[j, i] = float(np.dot(ac, bc) / math.sqrt(np.dot(ac, ac) * np.dot(bc, bc)))
    return out


# --- serialization ----------------------------------------------------------

def save_heatmap_raw(grid: HeatmapGrid, path: Path | str) -> None:
    """Raw little-endian float32 dump with an 8-byte width/height header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(struct.pack("<II", grid.width, grid.height))
        f.write(grid.values.astype("<f4").tobytes())


def load_heatmap_raw(path: Path | str) -> HeatmapGrid:
    with open(path, "rb") as f:
        w, h = struct.unpack("<II", f.read(8))
        values = np.frombuffer(f.read(), dtype="<f4").reshape(h, w).astype(np.float64)
    return HeatmapGrid(values=values, empty=bool(values.sum() == 0))


def write_series_csv(path: Path | str, t_ns: Sequence[int], values: Sequence[float]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as f:
        f.write("t_ns,value\n")
        for t, v in zip(t_ns, values):
            f.write(f"{int(t)},{v:.9g}\n")


def read_series_csv(path: Path | str) -> tuple[np.ndarray, np.ndarray]:
    t, v = [], []
    with open(path) as f:
        header = f.readline().strip()
        if header != "t_ns,value":
            raise ValueError(f"unexpected series header: {header}")
        for line in f:
            a, b = line.strip().split(",")
            t.append(int(a))
            v.append(float(b))
    return np.asarray(t, dtype=np.int64), np.asarray(v, dtype=np.float64)


def write_pairwise_csv(path: Path | str, ids: Sequence[str], matrix: np.ndarray, column: str = "sim") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as f:
        f.write(f"id_a,id_b,{column}\n")
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                f.write(f"{ids[i]},{ids[j]},{matrix[i, j]:.9g}\n")
