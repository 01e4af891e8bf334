"""Road network: segments, historical travel-time profiles and adjacency.

The network is a directed graph of straight road segments. Each segment
stores its geometry (start/end coordinates in meters), lane count, free-flow
speed and jam density. Historical travel times are piecewise constant over
half-open time bins ``[start, next_start)``; the last bin is open ended.

File formats
------------
Network file (``*.net``)::

    nrcvanet-network 1
    { "horizon_s": 7200,
      "impact_region_seed": ["a_1_1_1_2"],
      "profiles": "grid40_profiles.csv",          # optional, relative path
      "segments": [ { "id": ..., "length": ..., "lane_count": ...,
                      "free_flow_speed": ..., "jam_density": ...,
                      "speed_limit": ..., "facility_kind": "arterial",
                      "has_signal": true, "start_xy": [x, y],
                      "end_xy": [x, y], "downstream_ids": [...],
                      "upstream_ids": [...] }, ... ] }

Profile file (``*.csv``)::

    nrcvanet-profile 1
    segment_id,bin_start_s,tt_h_s
    a_0_0_0_1,0,21.6
    ...
"""

from __future__ import annotations

import csv
import io
import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import networkx as nx

NETWORK_HEADER = "nrcvanet-network 1"
PROFILE_HEADER = "nrcvanet-profile 1"
DEFAULT_BIN_WIDTH_S = 900.0
FACILITY_KINDS = ("arterial", "highway")


class NetworkError(ValueError):
    """Raised for malformed network or profile files and invariant violations."""


@dataclass(frozen=True)
class Segment:
    id: str
    length: float
    lane_count: int
    free_flow_speed: float
    jam_density: float
    speed_limit: float
    facility_kind: str = "arterial"
    has_signal: bool = False
    start_xy: tuple[float, float] = (0.0, 0.0)
    end_xy: tuple[float, float] = (0.0, 0.0)
    downstream_ids: tuple[str, ...] = ()
    upstream_ids: tuple[str, ...] = ()

    @property
    def free_flow_tt(self) -> float:
        return self.length / self.free_flow_speed

    def validate(self) -> None:
        if not self.length > 0:
            raise NetworkError(f"segment {self.id}: length must be > 0")
        if self.lane_count < 1:
            raise NetworkError(f"segment {self.id}: lane_count must be >= 1")
        if not self.jam_density > 0:
            raise NetworkError(f"segment {self.id}: jam_density must be > 0")
        if not 0 < self.free_flow_speed <= self.speed_limit:
            raise NetworkError(
                f"segment {self.id}: need 0 < free_flow_speed <= speed_limit"
            )
        if self.facility_kind not in FACILITY_KINDS:
            raise NetworkError(f"segment {self.id}: unknown facility_kind {self.facility_kind!r}")


@dataclass(frozen=True)
class HistoricalProfile:
    segment_id: str
    bins: tuple[tuple[float, float], ...]

    def lookup(self, sim_time: float) -> float:
        starts = [b[0] for b in self.bins]
        i = bisect_right(starts, sim_time) - 1
        if i < 0:
            raise NetworkError(
                f"time {sim_time} precedes the first profile bin of {self.segment_id}"
            )
        return self.bins[i][1]


@dataclass
class RoadNetwork:
    segments: dict[str, Segment]
    profiles: dict[str, HistoricalProfile] = field(default_factory=dict)
    impact_region_seed: frozenset[str] = frozenset()
    horizon_s: float | None = None

    def __post_init__(self) -> None:
        self._graph: nx.DiGraph | None = None

    @property
    def segment_ids(self) -> list[str]:
        return sorted(self.segments)

    def segment(self, segment_id: str) -> Segment:
        try:
            return self.segments[segment_id]
        except KeyError:
            raise KeyError(f"unknown segment {segment_id!r}") from None

    def validate(self) -> None:
        for seg in self.segments.values():
            seg.validate()
        for seg in self.segments.values():
            for d in seg.downstream_ids:
                if d not in self.segments:
                    raise NetworkError(f"segment {seg.id}: unknown downstream {d!r}")
                if seg.id not in self.segments[d].upstream_ids:
                    raise NetworkError(
                        f"segment {seg.id}: adjacency not symmetric with {d}"
                    )
            for u in seg.upstream_ids:
                if u not in self.segments:
                    raise NetworkError(f"segment {seg.id}: unknown upstream {u!r}")
                if seg.id not in self.segments[u].downstream_ids:
                    raise NetworkError(
                        f"segment {seg.id}: adjacency not symmetric with {u}"
                    )
        for sid in self.impact_region_seed:
            if sid not in self.segments:
                raise NetworkError(f"impact region seed {sid!r} is not a segment")
        for sid, prof in self.profiles.items():
            if sid not in self.segments:
                raise NetworkError(f"profile for unknown segment {sid!r}")
            seg = self.segments[sid]
            if not prof.bins:
                raise NetworkError(f"segment {sid}: empty profile")
            if prof.bins[0][0] > 0:
                raise NetworkError(f"segment {sid}: profile must start at time 0")
            for start, tt in prof.bins:
                if tt < seg.free_flow_tt - 1e-9:
                    raise NetworkError(
                        f"segment {sid}: TT_h {tt} at bin {start} is below the "
                        f"free-flow time {seg.free_flow_tt:.3f}"
                    )

    def graph(self) -> nx.DiGraph:
        """Line graph with one node per segment and edges along allowed turns."""
        if self._graph is None:
            g = nx.DiGraph()
            for sid in self.segment_ids:
                g.add_node(sid)
            for sid in self.segment_ids:
                for d in sorted(self.segments[sid].downstream_ids):
                    g.add_edge(sid, d)
            self._graph = g
        return self._graph

    def path_is_connected(self, route: Iterable[str]) -> bool:
        route = list(route)
        if not route or any(r not in self.segments for r in route):
            return False
        return all(b in self.segments[a].downstream_ids for a, b in zip(route, route[1:]))

    def fastest_route(
        self, origin: str, destination: str, weights: dict[str, float] | None = None
    ) -> list[str]:
        """Fastest segment sequence from ``origin`` to ``destination`` (both included).

        ``weights`` maps segment id to expected traversal time; defaults to
        free-flow times.
        """
        if weights is None:
            weights = {s: seg.free_flow_tt for s, seg in self.segments.items()}
        g = self.graph()
        # edge cost = traversal time of the segment being entered
        try:
            path = nx.dijkstra_path(
                g, origin, destination, weight=lambda u, v, d: weights[v]
            )
        except nx.NetworkXNoPath:
            raise NetworkError(f"{destination} is unreachable from {origin}") from None
        return list(path)


def historical_tt(net: RoadNetwork, segment_id: str, sim_time: float) -> float:
    seg = net.segment(segment_id)
    if sim_time < 0 or (net.horizon_s is not None and sim_time >= net.horizon_s):
        raise NetworkError(f"time {sim_time} outside horizon [0, {net.horizon_s})")
    prof = net.profiles.get(segment_id)
    if prof is None:
        return seg.free_flow_tt
    return prof.lookup(sim_time)


def max_flow(segment: Segment) -> float:
    """Capacity flow in veh/s: a quarter of free-flow speed times jam density."""
    return segment.free_flow_speed * segment.jam_density * segment.lane_count / 4.0


def adjacent_segments(net: RoadNetwork, segment_id: str, direction: str) -> list[str]:
    seg = net.segment(segment_id)
    if direction == "upstream":
        return sorted(seg.upstream_ids)
    if direction == "downstream":
        return sorted(seg.downstream_ids)
    if direction == "both":
        return sorted(set(seg.upstream_ids) | set(seg.downstream_ids))
    raise ValueError(f"direction must be upstream or downstream, got {direction!r}")


# -- serialization -----------------------------------------------------------


def _segment_from_dict(d: dict) -> Segment:
    try:
        return Segment(
            id=str(d["id"]),
            length=float(d["length"]),
            lane_count=int(d["lane_count"]),
            free_flow_speed=float(d["free_flow_speed"]),
            jam_density=float(d["jam_density"]),
            speed_limit=float(d.get("speed_limit", d["free_flow_speed"])),
            facility_kind=str(d.get("facility_kind", "arterial")),
            has_signal=bool(d.get("has_signal", False)),
            start_xy=tuple(map(float, d.get("start_xy", (0.0, 0.0)))),
            end_xy=tuple(map(float, d.get("end_xy", (0.0, 0.0)))),
            downstream_ids=tuple(sorted(d.get("downstream_ids", ()))),
            upstream_ids=tuple(sorted(d.get("upstream_ids", ()))),
        )
    except KeyError as exc:
        raise NetworkError(f"segment {d.get('id', '?')}: missing field {exc.args[0]}") from None


def _segment_to_dict(seg: Segment) -> dict:
    return {
        "id": seg.id,
        "length": seg.length,
        "lane_count": seg.lane_count,
        "free_flow_speed": seg.free_flow_speed,
        "jam_density": seg.jam_density,
        "speed_limit": seg.speed_limit,
        "facility_kind": seg.facility_kind,
        "has_signal": seg.has_signal,
        "start_xy": list(seg.start_xy),
        "end_xy": list(seg.end_xy),
        "downstream_ids": list(seg.downstream_ids),
        "upstream_ids": list(seg.upstream_ids),
    }


def parse_profiles(text: str, source: str = "<profiles>") -> dict[str, HistoricalProfile]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != PROFILE_HEADER:
        raise NetworkError(f"{source}:1: expected header {PROFILE_HEADER!r}")
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header != ["segment_id", "bin_start_s", "tt_h_s"]:
        raise NetworkError(f"{source}:2: expected columns segment_id,bin_start_s,tt_h_s")
    bins: dict[str, list[tuple[float, float]]] = {}
    for lineno, row in enumerate(reader, start=3):
        if not row:
            continue
        if len(row) != 3:
            raise NetworkError(f"{source}:{lineno}: expected 3 fields, got {len(row)}")
        try:
            start, tt = float(row[1]), float(row[2])
        except ValueError:
            raise NetworkError(f"{source}:{lineno}: non-numeric value in {row}") from None
        bins.setdefault(row[0], []).append((start, tt))
    profiles = {}
    for sid, b in bins.items():
        b.sort()
        if any(b[i][0] == b[i + 1][0] for i in range(len(b) - 1)):
            raise NetworkError(f"{source}: duplicate bin start for segment {sid}")
        profiles[sid] = HistoricalProfile(sid, tuple(b))
    return profiles


def format_profiles(profiles: dict[str, HistoricalProfile]) -> str:
    buf = io.StringIO()
    buf.write(PROFILE_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["segment_id", "bin_start_s", "tt_h_s"])
    for sid in sorted(profiles):
        for start, tt in profiles[sid].bins:
            w.writerow([sid, repr(float(start)), repr(float(tt))])
    return buf.getvalue()


def parse_network(text: str, source: str = "<network>", base_dir: Path | None = None) -> RoadNetwork:
    lines = text.split("\n", 1)
    if lines[0].strip() != NETWORK_HEADER:
        raise NetworkError(f"{source}:1: expected header {NETWORK_HEADER!r}")
    body = lines[1] if len(lines) > 1 else ""
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{source}:{exc.lineno + 1}: {exc.msg}") from None
    if not isinstance(doc, dict) or "segments" not in doc:
        raise NetworkError(f"{source}: body must be an object with a 'segments' list")
    segments: dict[str, Segment] = {}
    for d in doc["segments"]:
        seg = _segment_from_dict(d)
        if seg.id in segments:
            raise NetworkError(f"duplicate segment id {seg.id!r}")
        segments[seg.id] = seg
    profiles: dict[str, HistoricalProfile] = {}
    if doc.get("profiles"):
        ppath = Path(doc["profiles"])
        if not ppath.is_absolute() and base_dir is not None:
            ppath = base_dir / ppath
        profiles = parse_profiles(ppath.read_text(), str(ppath))
    net = RoadNetwork(
        segments=segments,
        profiles=profiles,
        impact_region_seed=frozenset(doc.get("impact_region_seed", ())),
        horizon_s=doc.get("horizon_s"),
    )
    net.validate()
    return net


def load_network(path: str | Path) -> RoadNetwork:
    path = Path(path)
    return parse_network(path.read_text(), str(path), base_dir=path.parent)


def format_network(net: RoadNetwork, profiles_ref: str | None = None) -> str:
    doc = {
        "horizon_s": net.horizon_s,
        "impact_region_seed": sorted(net.impact_region_seed),
        "profiles": profiles_ref,
        "segments": [_segment_to_dict(net.segments[s]) for s in net.segment_ids],
    }
    return NETWORK_HEADER + "\n" + json.dumps(doc, indent=1) + "\n"


def save_network(net: RoadNetwork, path: str | Path, profiles_path: str | Path | None = None) -> None:
    """Write the network (and its profiles, if ``profiles_path`` is given)."""
    path = Path(path)
    ref = None
    if profiles_path is not None:
        profiles_path = Path(profiles_path)
        profiles_path.write_text(format_profiles(net.profiles))
        try:
            ref = str(profiles_path.relative_to(path.parent))
        except ValueError:
            ref = str(profiles_path)
    path.write_text(format_network(net, ref))


# -- synthetic generator -----------------------------------------------------


def _link(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1])


def generate_grid_network(
    rows: int = 3,
    cols: int = 3,
    block_m: float = 300.0,
    spine_nodes: int = 6,
    spine_offset_m: float = 400.0,
    arterial_speed: float = 13.9,
    highway_speed: float = 25.0,
    arterial_lanes: int = 2,
    highway_lanes: int = 2,
    jam_density: float = 0.15,
    horizon_s: float | None = 7200.0,
) -> RoadNetwork:
    """Signalized arterial grid plus an urban-highway spine south of it.

    Grid node (r, c) sits at (c*block, r*block). Spine node k sits at
    ((k-1)*block, -spine_offset). Each bottom-row grid node c connects to
    spine node c+1 with an arterial ramp. With the defaults this yields 40
    directed segments: 24 grid arterials, 10 highway and 6 ramps.
    """
    nodes: dict[str, tuple[float, float]] = {}
    links: list[tuple[str, str, str]] = []  # (from, to, kind)
    for r in range(rows):
        for c in range(cols):
            nodes[f"g{r}{c}"] = (c * block_m, r * block_m)
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                links += [(f"g{r}{c}", f"g{r}{c+1}", "arterial"), (f"g{r}{c+1}", f"g{r}{c}", "arterial")]
            if r + 1 < rows:
                links += [(f"g{r}{c}", f"g{r+1}{c}", "arterial"), (f"g{r+1}{c}", f"g{r}{c}", "arterial")]
    for k in range(spine_nodes):
        nodes[f"h{k}"] = ((k - 1) * block_m, -spine_offset_m)
    for k in range(spine_nodes - 1):
        links += [(f"h{k}", f"h{k+1}", "highway"), (f"h{k+1}", f"h{k}", "highway")]
    for c in range(cols):
        if c + 1 < spine_nodes:
            links += [(f"g0{c}", f"h{c+1}", "ramp"), (f"h{c+1}", f"g0{c}", "ramp")]

    def sid(a: str, b: str, kind: str) -> str:
        prefix = {"arterial": "a", "highway": "h", "ramp": "r"}[kind]
        return f"{prefix}_{a}_{b}"

    out_of: dict[str, list[str]] = {}
    into: dict[str, list[str]] = {}
    for a, b, kind in links:
        out_of.setdefault(a, []).append(sid(a, b, kind))
        into.setdefault(b, []).append(sid(a, b, kind))
    segments = {}
    for a, b, kind in links:
        s = sid(a, b, kind)
        # no U-turns: the reverse link is excluded from downstream
        down = tuple(sorted(x for x in out_of.get(b, []) if not x.endswith(f"_{b}_{a}")))
        up = tuple(sorted(x for x in into.get(a, []) if not x.endswith(f"_{b}_{a}")))
        highway = kind == "highway"
        speed = highway_speed if highway else arterial_speed
        segments[s] = Segment(
            id=s,
            length=round(_link(nodes[a], nodes[b]), 6),
            lane_count=highway_lanes if highway else arterial_lanes,
            free_flow_speed=speed,
            jam_density=jam_density,
            speed_limit=speed,
            facility_kind="highway" if highway else "arterial",
            has_signal=kind == "arterial",
            start_xy=nodes[a],
            end_xy=nodes[b],
            downstream_ids=down,
            upstream_ids=up,
        )
    mid = f"g{rows // 2}{cols // 2}"
    venue = sid(mid, f"g{rows // 2}{cols // 2 + 1}" if cols > 1 else mid, "arterial")
    net = RoadNetwork(
        segments=segments,
        impact_region_seed=frozenset([venue]) if venue in segments else frozenset(),
        horizon_s=horizon_s,
    )
    net.validate()
    return net


def constant_profiles(net: RoadNetwork, factor: float = 1.0) -> dict[str, HistoricalProfile]:
    """Single-bin profiles at ``factor`` times free-flow travel time."""
    return {
        sid: HistoricalProfile(sid, ((0.0, seg.free_flow_tt * factor),))
        for sid, seg in net.segments.items()
    }


def with_profiles(net: RoadNetwork, profiles: dict[str, HistoricalProfile]) -> RoadNetwork:
    out = RoadNetwork(
        segments=dict(net.segments),
        profiles=dict(profiles),
        impact_region_seed=net.impact_region_seed,
        horizon_s=net.horizon_s,
    )
    out.validate()
    return out
