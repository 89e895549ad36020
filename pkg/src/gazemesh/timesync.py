"""Clock-offset measurement and device-to-reference time mapping.

Each device carries its own clock that may start offset from the reference
clock and drift slowly over time. Offsets are measured with a four-timestamp
probe exchange (client send / server receive / server send / client receive);
within a measurement epoch the probe with the minimal round-trip time is
kept, since it carries the least queueing asymmetry. Aggregated offset
samples are fitted with an outlier-robust (RANSAC) line so device timestamps
can be mapped onto the reference clock.

Sign conventions: the raw four-timestamp offset ((t2-t1)+(t3-t4))/2 is
reference-minus-device. The per-device sync log (what `fit_timemap`
consumes, and what the offset CSV holds) stores device-minus-reference so
the fitted line can be subtracted from a device timestamp directly;
`measure_epoch` performs the flip.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000

DEFAULT_THRESHOLD_NS = 2 * NS_PER_MS  # an order below typical drift, above jitter
DEFAULT_MAX_ITERS = 500
DEFAULT_PROBES_PER_EPOCH = 8


@dataclass(frozen=True)
class ClockModel:
    """Affine device clock: device_time(t) = t + initial_offset + drift_rate * t.

    initial_offset_ns is device-minus-reference at t=0; drift_rate is
    dimensionless (extra ns of offset per ns of reference time); jitter_sd_ns
    is Gaussian per-read noise applied only when an rng is supplied.
    """

    initial_offset_ns: int = 0
    drift_rate: float = 0.0
    jitter_sd_ns: float = 0.0

    def __post_init__(self) -> None:
        if self.jitter_sd_ns < 0:
            raise ValueError("jitter_sd must be >= 0")
        if abs(self.drift_rate) >= 1:
            raise ValueError("drift_rate must satisfy |drift| < 1")

    def offset_at(self, t_ref_ns: float) -> float:
        """True device-minus-reference offset at a reference time."""
        return self.initial_offset_ns + self.drift_rate * t_ref_ns

    def device_time(self, t_ref_ns: int, rng: np.random.Generator | None = None) -> int:
        t = t_ref_ns + self.offset_at(t_ref_ns)
        if rng is not None and self.jitter_sd_ns > 0:
            t += rng.normal(0.0, self.jitter_sd_ns)
        return round(t)

    def device_times(self, t_ref_ns: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        t = t_ref_ns + self.initial_offset_ns + self.drift_rate * t_ref_ns
        if rng is not None and self.jitter_sd_ns > 0:
            t = t + rng.normal(0.0, self.jitter_sd_ns, size=t.shape)
        return np.rint(t).astype(np.int64)

    def reference_time(self, t_device_ns: float) -> float:
        """Exact inverse of the noiseless device_time map."""
        return (t_device_ns - self.initial_offset_ns) / (1.0 + self.drift_rate)


@dataclass(frozen=True)
class OffsetProbe:
    """One probe exchange. t1/t4 are on the device clock, t2/t3 on the reference clock."""

    t1: int
    t2: int
    t3: int
    t4: int

    def __post_init__(self) -> None:
        if self.t4 < self.t1:
            raise ValueError("t4 must be >= t1")
        if self.t3 < self.t2:
            raise ValueError("t3 must be >= t2")

    @property
    def offset_ns(self) -> float:
        """Reference-minus-device offset estimate, RTT factored out."""
        return ((self.t2 - self.t1) + (self.t3 - self.t4)) / 2.0

    @property
    def rtt_ns(self) -> int:
        return (self.t4 - self.t1) - (self.t3 - self.t2)


@dataclass(frozen=True)
class OffsetSample:
    """One per-epoch offset measurement against the reference clock."""

    t_ref_ns: int
    offset_ns: int
    rtt_ns: int

    def __post_init__(self) -> None:
        if self.rtt_ns < 0:
            raise ValueError("rtt must be >= 0")


@dataclass(frozen=True)
class TimeMap:
    """Fitted offset line: offset(t) ~= intercept + slope * t (device - reference)."""

    slope: float
    intercept_ns: float
    inlier_mask: np.ndarray
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")
        if int(np.sum(self.inlier_mask)) < 2:
            raise ValueError("time map needs at least 2 inliers")


def probe_offset(probes: Sequence[OffsetProbe]) -> OffsetSample:
    """Reduce a probe burst to the single offset measurement with minimal RTT.

    Ties go to the earliest probe. t_ref of the measurement is t3 of the
    winning probe.
    """
    if not probes:
        raise ValueError("no probes")
    best = min(probes, key=lambda p: p.rtt_ns)  # min() is stable: first minimum wins
    return OffsetSample(t_ref_ns=best.t3, offset_ns=round(best.offset_ns), rtt_ns=best.rtt_ns)


def fit_timemap(
    samples: Sequence[OffsetSample],
    threshold_ns: float = DEFAULT_THRESHOLD_NS,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
) -> TimeMap:
    """RANSAC line fit over (t_ref, offset) pairs.

    Two-point hypotheses are enumerated exhaustively when the budget allows,
    otherwise sampled with the seeded generator; the largest consensus set is
    refitted by least squares and scored with R-squared over its inliers,
    clamped to [0, 1]. Among equally supported hypotheses the one implying
    the smallest |slope| wins: clock drift is physically tiny, so a steep
    offset line with no extra support is the less plausible explanation.
    """
    if len(samples) < 2:
        raise ValueError("need at least 2 offset samples")
    if threshold_ns <= 0:
        raise ValueError("threshold must be > 0")
    t = np.array([s.t_ref_ns for s in samples], dtype=np.float64)
    y = np.array([s.offset_ns for s in samples], dtype=np.float64)
    n = len(t)
    if np.ptp(t) == 0:
        raise ValueError("degenerate abscissa")

    if n * (n - 1) // 2 <= max_iters:
        ii, jj = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        ii = rng.integers(0, n, size=max_iters)
        jj = rng.integers(0, n - 1, size=max_iters)
        jj = np.where(jj >= ii, jj + 1, jj)

    dt = t[jj] - t[ii]
    valid = dt != 0
    safe_dt = np.where(valid, dt, 1.0)
    slopes = (y[jj] - y[ii]) / safe_dt
    intercepts = y[ii] - slopes * t[ii]
    resid = np.abs(y[None, :] - (slopes[:, None] * t[None, :] + intercepts[:, None]))
    counts = np.where(valid, (resid <= threshold_ns).sum(axis=1), 0)
    if counts.max() < 2:
        raise ValueError("degenerate abscissa")
    candidates = np.flatnonzero(counts == counts.max())
    best = candidates[np.argmin(np.abs(slopes[candidates]))]
    mask = resid[best] <= threshold_ns

    ti, yi = t[mask], y[mask]
    tm, ym = ti.mean(), yi.mean()
    sxx = float(np.sum((ti - tm) ** 2))
    slope = float(np.sum((ti - tm) * (yi - ym)) / sxx)
    intercept = float(ym - slope * tm)

    pred = slope * ti + intercept
    ss_res = float(np.sum((yi - pred) ** 2))
    ss_tot = float(np.sum((yi - ym) ** 2))
    if ss_tot > 0:
        score = 1.0 - ss_res / ss_tot
    else:
        score = 1.0  # flat inlier set fitted exactly by the flat line
    score = float(min(1.0, max(0.0, score)))
    return TimeMap(slope=slope, intercept_ns=intercept, inlier_mask=mask, score=score)


def map_timestamp(timemap: TimeMap, t_device_ns: int) -> int:
    """Correct a device timestamp onto the reference clock."""
    return round(t_device_ns - (timemap.intercept_ns + timemap.slope * t_device_ns))


def map_timestamps(timemap: TimeMap, t_device_ns: np.ndarray) -> np.ndarray:
    t = np.asarray(t_device_ns, dtype=np.float64)
    return np.rint(t - (timemap.intercept_ns + timemap.slope * t)).astype(np.int64)


def drift_series(samples: Sequence[OffsetSample]) -> list[tuple[int, int]]:
    """Accumulated drift: offset at each time point minus the initial offset."""
    if not samples:
        raise ValueError("no offset samples")
    base = samples[0].offset_ns
    return [(s.t_ref_ns, s.offset_ns - base) for s in samples]


# --- probe/epoch simulation -------------------------------------------------

@dataclass(frozen=True)
class NetworkLink:
    """Symmetric-by-default two-leg delay model for probe exchanges."""

    one_way_mean_ns: float = 250_000.0
    one_way_jitter_sd_ns: float = 140_000.0
    asymmetry_ns: float = 0.0  # constant extra delay on the uplink, biases offsets by half
    server_turnaround_ns: float = 10_000.0
    min_leg_ns: float = 5_000.0

    def leg_delays(self, rng: np.random.Generator) -> tuple[float, float]:
        up = self.one_way_mean_ns + self.asymmetry_ns / 2 + rng.normal(0.0, self.one_way_jitter_sd_ns)
        down = self.one_way_mean_ns - self.asymmetry_ns / 2 + rng.normal(0.0, self.one_way_jitter_sd_ns)
        return max(up, self.min_leg_ns), max(down, self.min_leg_ns)


def simulate_probe(clock: ClockModel, link: NetworkLink, t_ref_ns: int, rng: np.random.Generator) -> OffsetProbe:
    """Generate the four timestamps of one exchange against a simulated clock."""
    up, down = link.leg_delays(rng)
    t1 = clock.device_time(t_ref_ns, rng)
    t2 = round(t_ref_ns + up)
    t3 = round(t_ref_ns + up + link.server_turnaround_ns)
    t4 = clock.device_time(round(t_ref_ns + up + link.server_turnaround_ns + down), rng)
    return OffsetProbe(t1=t1, t2=t2, t3=t3, t4=max(t4, t1))


def measure_epoch(
    clock: ClockModel,
    link: NetworkLink,
    t_ref_ns: int,
    rng: np.random.Generator,
    probes_per_epoch: int = DEFAULT_PROBES_PER_EPOCH,
    probe_spacing_ns: int = 50 * NS_PER_MS,
    loss_probability: float = 0.0,
) -> OffsetSample | None:
    """Run one probe burst and log the min-RTT result as device-minus-reference.

    Lost probes are dropped silently; an epoch with no surviving probe yields
    None and the caller skips it.
    """
    probes = []
    for k in range(probes_per_epoch):
        lost = loss_probability > 0 and rng.random() < loss_probability
        probe = simulate_probe(clock, link, t_ref_ns + k * probe_spacing_ns, rng)
        # read jitter can yield a non-physical negative RTT; discard like a loss
        if not lost and probe.rtt_ns >= 0:
            probes.append(probe)
    if not probes:
        return None
    raw = probe_offset(probes)
    return OffsetSample(t_ref_ns=raw.t_ref_ns, offset_ns=-raw.offset_ns, rtt_ns=raw.rtt_ns)


def run_sync_session(
    clock: ClockModel,
    link: NetworkLink,
    duration_ns: int,
    rng: np.random.Generator,
    epoch_interval_ns: int = 10 * NS_PER_S,
    probes_per_epoch: int = DEFAULT_PROBES_PER_EPOCH,
    loss_probability: float = 0.0,
) -> list[OffsetSample]:
    """Periodic offset measurement over a whole session span."""
    samples = []
    t = 0
    while t < duration_ns:
        s = measure_epoch(clock, link, t, rng, probes_per_epoch, loss_probability=loss_probability)
        if s is not None:
            samples.append(s)
        t += epoch_interval_ns
    return samples


OFFSET_CSV_HEADER = ("t_ref_ns", "offset_ns", "rtt_ns")


def write_offset_csv(samples: Iterable[OffsetSample], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(OFFSET_CSV_HEADER)
        for s in samples:
            writer.writerow([s.t_ref_ns, s.offset_ns, s.rtt_ns])


def read_offset_csv(path: Path | str) -> list[OffsetSample]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != OFFSET_CSV_HEADER:
            raise ValueError(f"unexpected offset log header: {header}")
        return [OffsetSample(int(r[0]), int(r[1]), int(r[2])) for r in reader]
