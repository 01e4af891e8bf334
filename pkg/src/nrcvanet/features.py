"""Per-vehicle feature extraction for congestion-cause classification.

A feature vector has eight entries. Two are nominal observations of the
current segment (travel-time category, problematic spot), four summarize the
vehicle's recent trajectory (travel-time ratio, speed ratio, minimum gap,
demand), and two come from cooperation (impact region, stored event).

Continuous features may be missing (``None``); learners handle that
explicitly. Window choices:

* trajectory window: the last 5 completed segments, excluding the current one
* problematic-spot cells: 10 m, per lane
* demand: free-flowing upstream segments totaling at least 1500 m
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from statistics import median
from typing import Iterable, Sequence

import numpy as np

from .road_network import RoadNetwork, historical_tt, max_flow
from .traffic_sim import (INCIDENT, SPECIAL_EVENT, WEATHER, WORKZONE, TrajectoryEntry)

RECURRENT = "Recurrent"
CLASSES = ("Recurrent", "Incident", "Workzone", "Weather", "SpecialEvent")
EVENT_LABEL = {INCIDENT: "Incident", WORKZONE: "Workzone", WEATHER: "Weather", SPECIAL_EVENT: "SpecialEvent"}
STORED_VALUE = {"Incident": "incident", "Workzone": "workzone", "Weather": "weather", "SpecialEvent": "special_event"}

NOMINAL_VALUES = {
    "current_tt": ("normal", "excessive"),
    "pspot": ("none", "short", "long"),
    "impact_region": ("inside", "outside"),
    "stored_event": ("none", "incident", "workzone", "weather", "special_event"),
}
FEATURE_NAMES = (
    "current_tt",
    "pspot",
    "traj_tt_ratio",
    "traj_speed_ratio",
    "traj_min_gap_m",
    "traj_demand",
    "impact_region",
    "stored_event",
)
DATASET_COLUMNS = FEATURE_NAMES + ("label",)

DEFAULT_CONGESTION_FACTOR = 0.8
TRAJECTORY_WINDOW = 5
DEMAND_DISTANCE_M = 1500.0
DEMAND_CLAMP = 1.5
PSPOT_CELL_M = 10.0
PSPOT_LONG_S = 3600.0
PSPOT_SLOW_FRACTION = 0.5


@dataclass(frozen=True)
class FeatureVector:
    current_tt: str
    pspot: str
    traj_tt_ratio: float | None
    traj_speed_ratio: float | None
    traj_min_gap: float | None
    traj_demand: float | None
    impact_region: str
    stored_event: str

    def as_row(self) -> dict[str, object]:
        return {
            "current_tt": self.current_tt,
            "pspot": self.pspot,
            "traj_tt_ratio": self.traj_tt_ratio,
            "traj_speed_ratio": self.traj_speed_ratio,
            "traj_min_gap_m": self.traj_min_gap,
            "traj_demand": self.traj_demand,
            "impact_region": self.impact_region,
            "stored_event": self.stored_event,
        }

    @classmethod
    def from_row(cls, row: dict[str, object]) -> "FeatureVector":
        return cls(
            current_tt=str(row["current_tt"]),
            pspot=str(row["pspot"]),
            traj_tt_ratio=row.get("traj_tt_ratio"),
            traj_speed_ratio=row.get("traj_speed_ratio"),
            traj_min_gap=row.get("traj_min_gap_m"),
            traj_demand=row.get("traj_demand"),
            impact_region=str(row["impact_region"]),
            stored_event=str(row["stored_event"]),
        )


def current_tt_category(ott: float, tt_h: float, c: float = DEFAULT_CONGESTION_FACTOR) -> str:
    if not (ott > 0 and tt_h > 0):
        raise ValueError("travel times must be positive")
    if c < 0:
        raise ValueError("congestion factor must be >= 0")
    return "excessive" if ott > (1.0 + c) * tt_h else "normal"


# -- problematic spots ---------------------------------------------------------


@dataclass(frozen=True)
class PspotResult:
    kind: str
    lane: int | None = None
    start_m: float | None = None
    end_m: float | None = None


def footprint_gaps(
    counts: np.ndarray,
    speed_sums: np.ndarray,
    free_flow_speed: float,
    min_cells: int = 2,
    slow_fraction: float = PSPOT_SLOW_FRACTION,
) -> list[tuple[int, int, int]]:
    """Blank runs in a ``(lanes, cells)`` footprint grid that look like a blockage.

    Returns ``(lane, first_cell, last_cell)`` for each run of at least
    ``min_cells`` cells without footprints whose upstream neighbor cell holds
    slow traffic and which has footprints somewhere downstream on the lane.
    """
    out = []
    lanes, ncell = counts.shape
    for lane in range(lanes):
        row = counts[lane]
        c = 0
        while c < ncell:
            if row[c] > 0:
                c += 1
                continue
            start = c
            while c < ncell and row[c] == 0:
                c += 1
            end = c - 1
            if end - start + 1 < min_cells or start == 0 or c >= ncell:
                continue
            up = start - 1
            mean_v = speed_sums[lane, up] / row[up]
            if mean_v >= slow_fraction * free_flow_speed:
                continue
            if row[c:].sum() > 0:
                out.append((lane, start, end))
    return out


def footprint_grid(
    samples: Iterable[tuple[int, float, float]],
    segment_length: float,
    lanes: int,
    cell_m: float = PSPOT_CELL_M,
) -> tuple[np.ndarray, np.ndarray]:
    """Counts and speed sums per (lane, cell) from ``(lane, offset, speed)`` samples."""
    ncell = int(math.ceil(segment_length / cell_m))
    counts = np.zeros((lanes, ncell), dtype=np.int64)
    speeds = np.zeros((lanes, ncell))
    for lane, off, v in samples:
        cell = min(int(off // cell_m), ncell - 1)
        counts[lane, cell] += 1
        speeds[lane, cell] += v
    return counts, speeds


def detect_pspot(
    samples: Iterable[tuple[int, float, float]],
    segment_length: float,
    lanes: int,
    free_flow_speed: float,
    persisted_s: float = 0.0,
    cell_m: float = PSPOT_CELL_M,
    long_after_s: float = PSPOT_LONG_S,
) -> PspotResult:
    """Problematic spot from footprints gathered over one window.

    ``samples`` are ``(lane, offset_m, speed)`` positions heard on the
    segment. ``persisted_s`` is how long the same blank run has already been
    observed; beyond ``long_after_s`` the spot is long.
    """
    counts, speeds = footprint_grid(samples, segment_length, lanes, cell_m)
    gaps = footprint_gaps(counts, speeds, free_flow_speed)
    if not gaps:
        return PspotResult("none")
    lane, a, b = max(gaps, key=lambda g: (g[2] - g[1], -g[0]))
    kind = "long" if persisted_s > long_after_s else "short"
    return PspotResult(kind, lane, a * cell_m, (b + 1) * cell_m)


class PspotTracker:
    """Follows blank runs of one segment over time to tell short from long spots."""

    def __init__(self, window_s: float, long_after_s: float = PSPOT_LONG_S):
        self.window_s = window_s
        self.long_after_s = long_after_s
        self._since: dict[tuple[int, int], float] = {}
        self.current = PspotResult("none")

    def update(self, now: float, gaps: list[tuple[int, int, int]], cell_m: float) -> PspotResult:
        since = {}
        for lane, a, b in gaps:
            prev = [t for (l, c), t in self._since.items() if l == lane and a - 1 <= c <= b + 1]
            # the run has been blank for at least one window before first sight
            since[(lane, a)] = min(prev) if prev else now - self.window_s
        self._since = since
        if not gaps:
            self.current = PspotResult("none")
            return self.current
        lane, a, b = max(gaps, key=lambda g: (now - since[(g[0], g[1])], g[2] - g[1], -g[0]))
        age = now - since[(lane, a)]
        kind = "long" if age > self.long_after_s else "short"
        self.current = PspotResult(kind, lane, a * cell_m, (b + 1) * cell_m)
        return self.current


# -- trajectory features ---------------------------------------------------------


def _window(log: Sequence[TrajectoryEntry], n: int = TRAJECTORY_WINDOW) -> Sequence[TrajectoryEntry]:
    return log[-n:] if n > 0 else log


def _tt_h_at(net: RoadNetwork, e: TrajectoryEntry) -> float:
    t = e.entry_time
    if net.horizon_s is not None:
        t = min(max(t, 0.0), net.horizon_s - 1e-6)
    return historical_tt(net, e.segment_id, max(t, 0.0))


def trajectory_travel_time(log: Sequence[TrajectoryEntry], net: RoadNetwork, window: int = TRAJECTORY_WINDOW) -> float | None:
    """Mean ratio of observed to historical travel time over the window."""
    w = _window(log, window)
    if not w:
        return None
    return float(np.mean([e.travel_time / _tt_h_at(net, e) for e in w]))


def trajectory_speed(log: Sequence[TrajectoryEntry], net: RoadNetwork, window: int = TRAJECTORY_WINDOW) -> float | None:
    w = _window(log, window)
    if not w:
        return None
    return float(np.mean([e.mean_speed / net.segments[e.segment_id].free_flow_speed for e in w]))


def trajectory_gap(log: Sequence[TrajectoryEntry], window: int = TRAJECTORY_WINDOW) -> float | None:
    """Median of per-segment minimum following distances; None if never behind anyone."""
    gaps = [e.min_gap for e in _window(log, window) if math.isfinite(e.min_gap)]
    if not gaps:
        return None
    return float(median(gaps))


def _congested(e: TrajectoryEntry, net: RoadNetwork, c: float) -> bool:
    seg = net.segments[e.segment_id]
    return e.travel_time > (1.0 + c) * _tt_h_at(net, e) or e.mean_speed < 0.5 * seg.free_flow_speed


def trajectory_demand(
    log: Sequence[TrajectoryEntry],
    net: RoadNetwork,
    c: float = DEFAULT_CONGESTION_FACTOR,
    distance_m: float = DEMAND_DISTANCE_M,
) -> float | None:
    """Length-weighted mean of flow over capacity on free-flowing upstream segments.

    Walks the completed log backwards, skips the run of congested segments
    leading up to the current one, then accumulates segments until their
    total length reaches ``distance_m``.
    """
    i = len(log) - 1
    while i >= 0 and _congested(log[i], net, c):
        i -= 1
    num = den = 0.0
    while i >= 0 and den < distance_m:
        e = log[i]
        i -= 1
        if not math.isfinite(e.flow):
            continue
        seg = net.segments[e.segment_id]
        ratio = min(max(e.flow / max_flow(seg), 0.0), DEMAND_CLAMP)
        num += seg.length * ratio
        den += seg.length
    if den == 0:
        return None
    return num / den


def impact_region_label(segment_id: str, region: Iterable[str]) -> str:
    return "inside" if segment_id in set(region) else "outside"


def build_feature_vector(
    *,
    log: Sequence[TrajectoryEntry],
    net: RoadNetwork,
    current_tt: str,
    pspot: str,
    inside_region: bool,
    stored_event: str,
    c: float = DEFAULT_CONGESTION_FACTOR,
    window: int = TRAJECTORY_WINDOW,
) -> FeatureVector:
    """Assemble the eight features. ``log`` holds completed segments only."""
    if current_tt not in NOMINAL_VALUES["current_tt"]:
        raise ValueError(f"bad current_tt {current_tt!r}")
    if pspot not in NOMINAL_VALUES["pspot"]:
        raise ValueError(f"bad pspot {pspot!r}")
    if stored_event not in NOMINAL_VALUES["stored_event"]:
        raise ValueError(f"bad stored_event {stored_event!r}")
    return FeatureVector(
        current_tt=current_tt,
        pspot=pspot,
        traj_tt_ratio=trajectory_travel_time(log, net, window),
        traj_speed_ratio=trajectory_speed(log, net, window),
        traj_min_gap=trajectory_gap(log, window),
        traj_demand=trajectory_demand(log, net, c),
        impact_region="inside" if inside_region else "outside",
        stored_event=stored_event,
    )


# -- dataset CSV -----------------------------------------------------------------


def _fmt(v: object) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_dataset_rows(rows: Iterable[tuple[FeatureVector, str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DATASET_COLUMNS)
    for fv, label in rows:
        r = fv.as_row()
        w.writerow([_fmt(r[name]) for name in FEATURE_NAMES] + [label])
    return buf.getvalue()


def parse_dataset_rows(text: str) -> list[tuple[FeatureVector, str]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != DATASET_COLUMNS:
        raise ValueError(f"dataset header must be {','.join(DATASET_COLUMNS)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(DATASET_COLUMNS):
            raise ValueError(f"line {lineno}: expected {len(DATASET_COLUMNS)} fields")
        d: dict[str, object] = {}
        for name, raw in zip(FEATURE_NAMES, row):
            if name in NOMINAL_VALUES:
                if raw not in NOMINAL_VALUES[name]:
                    raise ValueError(f"line {lineno}: bad {name} value {raw!r}")
                d[name] = raw
            else:
                d[name] = float(raw) if raw != "" else None
        label = row[-1]
        if label not in CLASSES:
            raise ValueError(f"line {lineno}: unknown label {label!r}")
        out.append((FeatureVector.from_row(d), label))
    return out
