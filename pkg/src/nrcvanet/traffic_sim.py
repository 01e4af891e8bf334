"""Deterministic discrete-time microscopic traffic simulation.

Vehicles follow a Krauss-style safe-speed rule on single-lane queues per
lane. There is no free lane changing: a vehicle only leaves its home lane to
merge around a blockage and returns once it has passed it. Signalized
segments meter their exits with a fixed per-lane headway, which is the only
signal logic.

Scenario injectors reproduce the four non-recurrent causes: stopped blocker
vehicles (incident, workzone), degraded car-following parameters (weather)
and a Poisson demand surge toward a venue (special event).

The world is kept as a struct of numpy arrays indexed by vehicle slot. A tick
does, in order: scenario bookkeeping, departures, lane changes, leader
search, observers, speed update, movement and segment hand-off.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .road_network import NetworkError, RoadNetwork, historical_tt

VEHICLE_LENGTH = 5.0
MAX_LANES = 4
INCIDENT = "incident"
WORKZONE = "workzone"
WEATHER = "weather"
SPECIAL_EVENT = "special_event"
EVENT_KINDS = (INCIDENT, WORKZONE, WEATHER, SPECIAL_EVENT)
WORKZONE_MIN_DURATION_S = 3600.0
JUNCTION_ZONE_M = 40.0


@dataclass(frozen=True)
class CarFollowParams:
    max_accel: float = 2.6
    comfort_decel: float = 4.5
    reaction_time: float = 1.0
    min_gap: float = 2.5
    max_speed_factor: float = 1.0

    def validate(self) -> None:
        for name in ("max_accel", "comfort_decel", "reaction_time", "min_gap", "max_speed_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_speed_factor > 1:
            raise ValueError("max_speed_factor must be in (0, 1]")


@dataclass(frozen=True)
class ScenarioEvent:
    kind: str
    segment_id: str
    start: float
    duration: float
    lanes: tuple[int, ...] = (0,)
    position: float = 0.0
    n_blockers: int = 3
    weather: CarFollowParams | None = None
    rate: float = 0.0
    sources: tuple[str, ...] = ()
    pass_speed: float | None = None

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def blockage_span(self) -> float:
        return self.n_blockers * VEHICLE_LENGTH + (self.n_blockers - 1) * 2.5

    def validate(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not self.duration > 0:
            raise ValueError("event duration must be > 0")
        if self.kind == INCIDENT and self.duration >= WORKZONE_MIN_DURATION_S:
            raise ValueError("incident duration must be < 3600 s; use a workzone")
        if self.kind == WORKZONE and self.duration < WORKZONE_MIN_DURATION_S:
            raise ValueError("workzone duration must be >= 3600 s")
        if self.kind == WEATHER and self.weather is None:
            raise ValueError("weather event needs degraded parameters")
        if self.kind == SPECIAL_EVENT and not self.rate > 0:
            raise ValueError("special event needs a rate > 0")
        if self.pass_speed is not None and not self.pass_speed > 0:
            raise ValueError("pass_speed must be > 0")

    def slow_zone(self, merge_distance: float) -> tuple[float, float]:
        """Stretch where passing traffic in every lane keeps to ``pass_speed``."""
        return self.position - merge_distance, self.position + self.blockage_span + 2 * VEHICLE_LENGTH


def stoppage_kind(duration: float) -> str:
    """Incident below one hour, workzone otherwise."""
    return WORKZONE if duration >= WORKZONE_MIN_DURATION_S else INCIDENT


@dataclass(frozen=True)
class Departure:
    time: float
    route: tuple[str, ...]
    tag: str = "base"


@dataclass
class SimConfig:
    dt: float = 0.1
    horizon: float = 3600.0
    seed: int = 0
    demand_per_source_per_hour: float = 60.0
    demand_start: float = 0.0
    demand_end: float | None = None
    events: list[ScenarioEvent] = field(default_factory=list)
    params: CarFollowParams = field(default_factory=CarFollowParams)
    signal_headway_s: float = 3.0
    routing_interval_s: float = 300.0
    sources: tuple[str, ...] | None = None
    destinations: tuple[str, ...] | None = None
    merge_distance_m: float = 30.0

    def validate(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        n = self.horizon / self.dt
        if abs(n - round(n)) > 1e-9:
            raise ValueError("horizon must be a multiple of dt")
        if self.params.reaction_time < self.dt:
            raise ValueError("reaction_time must be >= dt for collision-free following")
        self.params.validate()
        for ev in self.events:
            ev.validate()

    @property
    def n_ticks(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class TrajectoryEntry:
    segment_id: str
    entry_time: float
    exit_time: float
    mean_speed: float
    min_gap: float
    flow: float

    @property
    def travel_time(self) -> float:
        return self.exit_time - self.entry_time


@dataclass
class VehicleState:
    id: int
    route: tuple[str, ...]
    route_index: int
    lane: int
    offset: float
    speed: float
    leader_gap: float
    departed_at: float
    arrived_at: float | None
    trajectory_log: list[TrajectoryEntry]

    @property
    def segment_id(self) -> str:
        return self.route[self.route_index]


def safe_speed(v, v_leader, gap, params: CarFollowParams):
    """Largest speed that still allows stopping behind a braking leader.

    ``v`` is unused by the closed form but kept for the call signature of
    car-following rules. Works elementwise on arrays; ``gap = inf`` gives inf.
    """
    b, tau = params.comfort_decel, params.reaction_time
    with np.errstate(invalid="ignore", over="ignore"):
        space = np.maximum(np.asarray(gap, dtype=float) - params.min_gap, 0.0)
        vs = -b * tau + np.sqrt(b * b * tau * tau + np.asarray(v_leader, dtype=float) ** 2 + 2 * b * space)
    vs = np.maximum(vs, 0.0)
    if np.ndim(vs) == 0:
        return float(vs)
    return vs


class Observer(Protocol):
    def on_start(self, world: "World") -> None: ...
    def on_tick(self, world: "World") -> None: ...
    def on_segment_exit(self, world: "World", slot: int, entry: TrajectoryEntry) -> None: ...
    def on_end(self, world: "World") -> None: ...


@dataclass
class _Stoppage:
    event: ScenarioEvent
    state: str = "pending"  # pending -> active -> done
    slots: list[int] = field(default_factory=list)


class World:
    """Mutable simulation state. Slots are reused only after compaction."""

    def __init__(self, net: RoadNetwork, config: SimConfig):
        config.validate()
        self.net = net
        self.config = config
        self.seg_ids = net.segment_ids
        self.seg_index = {s: i for i, s in enumerate(self.seg_ids)}
        segs = [net.segments[s] for s in self.seg_ids]
        self.seg_len = np.array([s.length for s in segs])
        self.seg_lanes = np.array([s.lane_count for s in segs], dtype=np.int64)
        self.seg_vmax = np.array([s.speed_limit for s in segs])
        self.seg_vf = np.array([s.free_flow_speed for s in segs])
        self.seg_signal = np.array([s.has_signal for s in segs])
        x0 = np.array([s.start_xy for s in segs], dtype=float).reshape(-1, 2)
        x1 = np.array([s.end_xy for s in segs], dtype=float).reshape(-1, 2)
        self.seg_x0 = x0
        self.seg_dir = (x1 - x0) / np.maximum(self.seg_len[:, None], 1e-9)
        self.t = 0.0
        self.tick = 0
        self.dt = config.dt

        cap = 256
        self._alloc(cap)
        self.n = 0  # slots in use (active or not)
        self.routes: list[tuple[str, ...]] = []
        self.logs: list[list[TrajectoryEntry]] = []
        self.max_route = 1
        self.route_arr = np.full((cap, 8), -1, dtype=np.int64)

        self.pending: list[tuple[float, int, tuple[str, ...], str]] = []
        self.next_vid = 0
        self.departed = 0
        self.arrived = 0
        self.arrivals: list[VehicleState] = []
        self.tags: dict[int, str] = {}
        self.stoppages: list[_Stoppage] = []
        self.weather: list[tuple[float, float, CarFollowParams]] = []
        self.next_exit = np.zeros((len(segs), MAX_LANES))
        self.observers: list[Observer] = []
        self.min_gap_seen = math.inf
        self.params = config.params
        # leader structure, valid after _compute_leaders()
        self.gap = np.full(cap, math.inf)
        self.leader = np.full(cap, -1, dtype=np.int64)
        self.v_leader = np.zeros(cap)
        self.v_allow = np.full(cap, math.inf)

    # -- storage -----------------------------------------------------------

    _FIELDS = {
        "vid": (np.int64, -1),
        "active": (bool, False),
        "blocker": (bool, False),
        "seg": (np.int64, 0),
        "lane": (np.int64, 0),
        "home": (np.int64, 0),
        "off": (float, 0.0),
        "v": (float, 0.0),
        "ridx": (np.int64, 0),
        "rlen": (np.int64, 0),
        "depart_t": (float, 0.0),
        "entry_t": (float, 0.0),
        "acc_v": (float, 0.0),
        "acc_n": (np.int64, 0),
        "acc_gap": (float, math.inf),
        "acc_flow": (float, 0.0),
        "acc_flow_n": (np.int64, 0),
    }

    def _alloc(self, cap: int) -> None:
        for name, (dtype, fill) in self._FIELDS.items():
            old = getattr(self, name, None)
            arr = np.full(cap, fill, dtype=dtype)
            if old is not None:
                arr[: len(old)] = old
            setattr(self, name, arr)
        for name, fill, dtype in (("gap", math.inf, float), ("leader", -1, np.int64),
                                  ("v_leader", 0.0, float), ("v_allow", math.inf, float)):
            old = getattr(self, name, None)
            arr = np.full(cap, fill, dtype=dtype)
            if old is not None:
                arr[: len(old)] = old
            setattr(self, name, arr)
        old = getattr(self, "route_arr", None)
        if old is not None:
            arr = np.full((cap, old.shape[1]), -1, dtype=np.int64)
            arr[: len(old)] = old
            self.route_arr = arr
        self.cap = cap

    def _new_slot(self, route: tuple[str, ...]) -> int:
        if self.n >= self.cap:
            self._alloc(self.cap * 2)
        if len(route) > self.route_arr.shape[1]:
            arr = np.full((self.cap, len(route) * 2), -1, dtype=np.int64)
            arr[:, : self.route_arr.shape[1]] = self.route_arr
            self.route_arr = arr
        slot = self.n
        self.n += 1
        for name, (dtype, fill) in self._FIELDS.items():
            getattr(self, name)[slot] = fill
        self.route_arr[slot, :] = -1
        self.route_arr[slot, : len(route)] = [self.seg_index[s] for s in route]
        self.routes.append(route)
        self.logs.append([])
        return slot

    # -- queries -------------------------------------------------------------

    def vehicle_slots(self) -> np.ndarray:
        """Active non-blocker slots, ordered by vehicle id."""
        return np.flatnonzero(self.active[: self.n] & ~self.blocker[: self.n])

    @property
    def in_network(self) -> int:
        return int(len(self.vehicle_slots()))

    def slot_of(self, vid: int) -> int:
        hits = np.flatnonzero((self.vid[: self.n] == vid) & self.active[: self.n])
        if not len(hits):
            raise KeyError(f"vehicle {vid} not in network")
        return int(hits[0])

    def vehicle_state(self, vid: int) -> VehicleState:
        s = self.slot_of(vid)
        return self._state(s, None)

    def _state(self, s: int, arrived_at: float | None) -> VehicleState:
        return VehicleState(
            id=int(self.vid[s]),
            route=self.routes[s],
            route_index=int(self.ridx[s]),
            lane=int(self.lane[s]),
            offset=float(self.off[s]),
            speed=float(self.v[s]),
            leader_gap=float(self.gap[s]),
            departed_at=float(self.depart_t[s]),
            arrived_at=arrived_at,
            trajectory_log=self.logs[s],
        )

    def positions_xy(self, slots: np.ndarray) -> np.ndarray:
        seg = self.seg[slots]
        return self.seg_x0[seg] + self.seg_dir[seg] * self.off[slots, None]

    def params_at(self, t: float) -> CarFollowParams:
        for start, end, p in self.weather:
            if start <= t < end:
                return p
        return self.config.params

    # -- scheduling ----------------------------------------------------------

    def schedule(self, departures: Iterable[Departure]) -> None:
        for d in departures:
            for s in d.route:
                if s not in self.seg_index:
                    raise NetworkError(f"route references unknown segment {s!r}")
            if not self.net.path_is_connected(d.route):
                raise NetworkError(f"route {d.route} is not a connected path")
            self.pending.append((d.time, self.next_vid, d.route, d.tag))
            self.next_vid += 1
        self.pending.sort(key=lambda p: (p[0], p[1]))

    # -- tick ------------------------------------------------------------------

    def _process_stoppages(self) -> None:
        for st in self.stoppages:
            ev = st.event
            if st.state == "pending" and self.t >= ev.start:
                if self.t >= ev.end:
                    st.state = "done"
                elif self._blockage_clear(ev):
                    self._place_blockers(st)
                    st.state = "active"
            elif st.state == "active" and self.t >= ev.end:
                for s in st.slots:
                    self.active[s] = False
                st.slots.clear()
                st.state = "done"

    def _blockage_clear(self, ev: ScenarioEvent) -> bool:
        si = self.seg_index[ev.segment_id]
        lo = ev.position - self.params.min_gap
        hi = ev.position + ev.blockage_span + VEHICLE_LENGTH
        m = self.active[: self.n] & (self.seg[: self.n] == si)
        for lane in ev.lanes:
            on = m & (self.lane[: self.n] == lane)
            o = self.off[: self.n][on]
            if np.any((o > lo) & (o < hi)):
                return False
        return True

    def _place_blockers(self, st: _Stoppage) -> None:
        ev = st.event
        si = self.seg_index[ev.segment_id]
        for lane in ev.lanes:
            for k in range(ev.n_blockers):
                s = self._new_slot((ev.segment_id,))
                self.vid[s] = -(len(st.slots) + 1 + 1000 * (self.stoppages.index(st) + 1))
                self.active[s] = True
                self.blocker[s] = True
                self.seg[s] = si
                self.lane[s] = lane
                self.home[s] = lane
                self.off[s] = ev.position + VEHICLE_LENGTH + k * (VEHICLE_LENGTH + 2.5)
                self.rlen[s] = 1
                st.slots.append(s)

    def _lane_tail(self, si: int, lane: int) -> tuple[float, float]:
        m = self.active[: self.n] & (self.seg[: self.n] == si) & (self.lane[: self.n] == lane)
        if not m.any():
            return math.inf, 0.0
        o = self.off[: self.n][m]
        k = int(np.argmin(o))
        return float(o[k]), float(self.v[: self.n][m][k])

    def _insert_departures(self) -> None:
        if not self.pending or self.pending[0][0] > self.t + 1e-9:
            return
        keep = []
        blocked_lanes: set[tuple[int, int]] = set()
        i = 0
        while i < len(self.pending) and self.pending[i][0] <= self.t + 1e-9:
            time, vid, route, tag = self.pending[i]
            i += 1
            si = self.seg_index[route[0]]
            home = vid % MAX_LANES
            lane = home % int(self.seg_lanes[si])
            if (si, lane) in blocked_lanes:
                keep.append((time, vid, route, tag))
                continue
            tail_off, tail_v = self._lane_tail(si, lane)
            if tail_off - VEHICLE_LENGTH < VEHICLE_LENGTH + self.params.min_gap:
                blocked_lanes.add((si, lane))
                keep.append((time, vid, route, tag))
                continue
            s = self._new_slot(route)
            self.vid[s] = vid
            self.active[s] = True
            self.seg[s] = si
            self.home[s] = home
            self.lane[s] = lane
            self.off[s] = VEHICLE_LENGTH
            cap = self.params.max_speed_factor * self.seg_vmax[si]
            gap = tail_off - VEHICLE_LENGTH - VEHICLE_LENGTH
            self.v[s] = min(cap, safe_speed(0.0, tail_v, gap, self.params))
            self.rlen[s] = len(route)
            self.depart_t[s] = self.t
            self.entry_t[s] = self.t
            self.tags[vid] = tag
            self.departed += 1
            blocked_lanes.add((si, lane))
        self.pending = keep + self.pending[i:]

    def _constrain(self, slots: np.ndarray, gap: np.ndarray, v_lead: np.ndarray) -> None:
        """Cap the allowed speed of ``slots`` by a leader at ``gap`` moving at ``v_lead``."""
        if not len(slots):
            return
        vs = safe_speed(self.v[slots], v_lead, gap, self.params)
        # leaders never move backwards, so this keeps every gap >= 0
        vs = np.minimum(vs, np.maximum(gap, 0.0) / self.dt)
        self.v_allow[slots] = np.minimum(self.v_allow[slots], vs)

    def _compute_leaders(self) -> None:
        n = self.n
        self.gap[:n] = math.inf
        self.v_allow[:n] = math.inf
        self.leader[:n] = -1
        self.v_leader[:n] = 0.0
        idx = np.flatnonzero(self.active[:n])
        if not len(idx):
            return
        key = self.seg[idx] * MAX_LANES + self.lane[idx]
        order = np.lexsort((self.off[idx], key))
        s_idx = idx[order]
        s_key = key[order]
        s_off = self.off[s_idx]
        same = s_key[1:] == s_key[:-1]
        fol = s_idx[:-1][same]
        lead = s_idx[1:][same]
        self.leader[fol] = lead
        self.gap[fol] = self.off[lead] - VEHICLE_LENGTH - self.off[fol]
        self.v_leader[fol] = self.v[lead]
        self._constrain(fol, self.gap[fol], self.v_leader[fol])

        nkeys = len(self.seg_ids) * MAX_LANES
        starts = np.ones(len(s_key), dtype=bool)
        starts[1:] = ~same
        tail_off = np.full(nkeys, math.inf)
        tail_v = np.zeros(nkeys)
        tail_off[s_key[starts]] = s_off[starts]
        tail_v[s_key[starts]] = self.v[s_idx[starts]]

        heads = s_idx[np.append(~same, True)]
        heads = heads[~self.blocker[heads]]
        if len(heads):
            nxt_pos = self.ridx[heads] + 1
            has_next = nxt_pos < self.rlen[heads]
            h = heads[has_next]
            nseg = self.route_arr[h, nxt_pos[has_next]]
            nkey = nseg * MAX_LANES + self.home[h] % self.seg_lanes[nseg]
            remaining = self.seg_len[self.seg[h]] - self.off[h]
            self.gap[h] = remaining + tail_off[nkey] - VEHICLE_LENGTH
            self.v_leader[h] = tail_v[nkey]
            self._constrain(h, self.gap[h], self.v_leader[h])
            # exit metering on signalized segments
            metered = heads[self.seg_signal[self.seg[heads]]]
            closed = self.next_exit[self.seg[metered], self.lane[metered]] > self.t + 1e-9
            m = metered[closed]
            self._constrain(m, self.seg_len[self.seg[m]] - self.off[m], np.zeros(len(m)))

        # passing traffic slows down around an active blockage
        for st in self.stoppages:
            ev = st.event
            if st.state != "active" or ev.pass_speed is None:
                continue
            lo, hi = ev.slow_zone(self.config.merge_distance_m)
            on = idx[(self.seg[idx] == self.seg_index[ev.segment_id]) & ~self.blocker[idx]]
            o = self.off[on]
            up = on[o < lo]
            # virtual leader placed so that the safe speed at the zone start is pass_speed
            lead = self.params.min_gap + ev.pass_speed * self.params.reaction_time
            self._constrain(up, lo - o[o < lo] + lead, np.full(len(up), ev.pass_speed))
            inside = on[(o >= lo) & (o <= hi)]
            self.v_allow[inside] = np.minimum(self.v_allow[inside], ev.pass_speed)

        # vehicles close to a junction that feed the same downstream lane
        # queue behind each other in order of their distance to the junction
        veh = idx[~self.blocker[idx] & (self.ridx[idx] + 1 < self.rlen[idx])]
        rem = self.seg_len[self.seg[veh]] - self.off[veh]
        near = rem <= JUNCTION_ZONE_M
        c, rem = veh[near], rem[near]
        if len(c):
            nseg = self.route_arr[c, self.ridx[c] + 1]
            vkey = nseg * MAX_LANES + self.home[c] % self.seg_lanes[nseg]
            o = np.lexsort((self.vid[c], rem, vkey))
            c, rem, vkey = c[o], rem[o], vkey[o]
            vs_same = vkey[1:] == vkey[:-1]
            self._constrain(c[1:][vs_same], (rem[1:] - rem[:-1] - VEHICLE_LENGTH)[vs_same], self.v[c[:-1][vs_same]])
            first = np.ones(len(c), dtype=bool)
            first[1:] = ~vs_same
            f = c[first]
            self._constrain(f, rem[first] + tail_off[vkey[first]] - VEHICLE_LENGTH, tail_v[vkey[first]])

    def _lane_changes(self) -> bool:
        """Merge around blockers and return home afterwards. Returns True if any moved."""
        n = self.n
        act = self.active[:n] & ~self.blocker[:n]
        lead = self.leader[:n]
        near_block = act & (lead >= 0)
        near_block &= self.blocker[np.maximum(lead, 0)] & (self.gap[:n] < self.config.merge_distance_m)
        displaced = act & (self.lane[:n] != self.home[:n] % self.seg_lanes[self.seg[:n]])
        cand = np.flatnonzero(near_block | displaced)
        if not len(cand):
            return False
        moved = False
        bl = np.flatnonzero(self.active[:n] & self.blocker[:n])
        # front vehicles first, then by id: zipper order
        cand = cand[np.lexsort((self.vid[cand], -self.off[cand]))]
        for s in cand:
            si = int(self.seg[s])
            lanes = int(self.seg_lanes[si])
            here = bl[self.seg[bl] == si]
            if near_block[s]:
                blocked = set(int(x) for x in self.lane[here])
                cur = int(self.lane[s])
                options = sorted((l for l in range(lanes) if l not in blocked), key=lambda l: (abs(l - cur), l))
                for target in options:
                    if self._lane_has_room(s, si, target):
                        self.lane[s] = target
                        moved = True
                        break
            else:
                target = int(self.home[s] % lanes)
                hb = here[self.lane[here] == target]
                if len(hb):
                    rear = self.off[hb] - VEHICLE_LENGTH
                    front = self.off[hb]
                    # still beside or shortly before a blocker on the home lane
                    if np.any((rear <= self.off[s] + self.config.merge_distance_m) & (front + 10.0 >= self.off[s] - VEHICLE_LENGTH)):
                        continue
                if self._lane_has_room(s, si, target):
                    self.lane[s] = target
                    moved = True
        return moved

    def _lane_has_room(self, s: int, si: int, lane: int) -> bool:
        n = self.n
        m = self.active[:n] & (self.seg[:n] == si) & (self.lane[:n] == lane)
        m[s] = False
        o = self.off[:n][m]
        me = self.off[s]
        g = self.params.min_gap
        ahead = o[o >= me]
        behind = o[o < me]
        if len(ahead) and ahead.min() - VEHICLE_LENGTH - me < g:
            return False
        if len(behind) and me - VEHICLE_LENGTH - behind.max() < g:
            return False
        return True

    def _move(self) -> None:
        n = self.n
        p = self.params
        idx = np.flatnonzero(self.active[:n] & ~self.blocker[:n])
        if not len(idx):
            return
        dt = self.dt
        v = self.v[idx]
        cap = p.max_speed_factor * self.seg_vmax[self.seg[idx]]
        v_new = np.minimum(np.minimum(v + p.max_accel * dt, cap), self.v_allow[idx])
        v_new = np.maximum(v_new, 0.0)
        self.v[idx] = v_new
        old = self.off[idx]
        self.off[idx] = old + v_new * dt
        crossed = idx[self.off[idx] >= self.seg_len[self.seg[idx]]]
        if len(crossed):
            crossed = crossed[np.lexsort((self.vid[crossed], -self.off[crossed]))]
            for s, prev in zip(crossed, old[np.searchsorted(idx, crossed)]):
                self._handoff(int(s), float(prev))

    def _handoff(self, s: int, prev_off: float) -> None:
        si = int(self.seg[s])
        length = self.seg_len[si]
        v = self.v[s]
        over = self.off[s] - length
        if self.ridx[s] + 1 < self.rlen[s]:
            ni = int(self.route_arr[s, self.ridx[s] + 1])
            tail, _ = self._lane_tail(ni, int(self.home[s] % self.seg_lanes[ni]))
            if over > tail - VEHICLE_LENGTH:
                # another vehicle entered that lane this tick: wait at the end
                self.off[s] = max(prev_off, length - 1e-6)
                self.v[s] = 0.0
                return
        t_cross = self.t + self.dt - (over / v if v > 0 else 0.0)
        n_acc = max(int(self.acc_n[s]), 1)
        entry = TrajectoryEntry(
            segment_id=self.seg_ids[si],
            entry_time=float(self.entry_t[s]),
            exit_time=float(t_cross),
            mean_speed=float(self.acc_v[s] / n_acc),
            min_gap=float(self.acc_gap[s]),
            flow=float(self.acc_flow[s] / self.acc_flow_n[s]) if self.acc_flow_n[s] else math.nan,
        )
        self.logs[s].append(entry)
        if self.seg_signal[si]:
            lane = int(self.lane[s])
            self.next_exit[si, lane] = max(self.next_exit[si, lane], t_cross) + self.config.signal_headway_s
        for ob in self.observers:
            ob.on_segment_exit(self, s, entry)
        if self.ridx[s] + 1 >= self.rlen[s]:
            self.active[s] = False
            self.arrived += 1
            self.arrivals.append(self._state(s, float(t_cross)))
            return
        self.ridx[s] += 1
        ni = int(self.route_arr[s, self.ridx[s]])
        self.seg[s] = ni
        self.lane[s] = self.home[s] % self.seg_lanes[ni]
        self.off[s] = over
        self.entry_t[s] = t_cross
        self.acc_v[s] = 0.0
        self.acc_n[s] = 0
        self.acc_gap[s] = math.inf
        self.acc_flow[s] = 0.0
        self.acc_flow_n[s] = 0

    def _accumulate(self) -> None:
        idx = self.vehicle_slots()
        if not len(idx):
            return
        self.acc_v[idx] += self.v[idx]
        self.acc_n[idx] += 1
        g = self.gap[idx]
        has = self.leader[idx] >= 0
        # a following distance only counts while the leader is close enough to
        # hold a vehicle below the posted limit
        follow = has & (safe_speed(self.v[idx], self.v_leader[idx], g, self.params) < self.seg_vmax[self.seg[idx]])
        self.acc_gap[idx[follow]] = np.minimum(self.acc_gap[idx[follow]], g[follow])
        if len(g):
            m = float(np.min(g))
            if m < self.min_gap_seen:
                self.min_gap_seen = m

    _DERIVED = {"gap": math.inf, "leader": -1, "v_leader": 0.0, "v_allow": math.inf}

    def _compact(self) -> None:
        keep = np.flatnonzero(self.active[: self.n])
        if len(keep) == self.n:
            return
        remap = {int(old): new for new, old in enumerate(keep)}
        k = len(keep)
        for name, (_, fill) in self._FIELDS.items():
            arr = getattr(self, name)
            arr[:k] = arr[keep]
            arr[k: self.n] = fill
        for name, fill in self._DERIVED.items():
            arr = getattr(self, name)
            arr[:k] = arr[keep]
            arr[k: self.n] = fill
        self.route_arr[:k] = self.route_arr[keep]
        self.routes = [self.routes[i] for i in keep]
        self.logs = [self.logs[i] for i in keep]
        for st in self.stoppages:
            st.slots = [remap[s] for s in st.slots if s in remap]
        for ob in self.observers:
            hook = getattr(ob, "on_compact", None)
            if hook is not None:
                hook(self, keep)
        self.n = k

    def begin_tick(self) -> None:
        """Bookkeeping up to and including leader search for the state at ``t``."""
        self.params = self.params_at(self.t)
        self._process_stoppages()
        self._insert_departures()
        self._compute_leaders()
        if self._lane_changes():
            self._compute_leaders()
        self._accumulate()

    def end_tick(self) -> None:
        self._move()
        self.tick += 1
        self.t = self.tick * self.dt
        if self.tick % 200 == 0:
            self._compact()

    def step(self, dt: float | None = None) -> "World":
        if dt is not None and abs(dt - self.dt) > 1e-12:
            raise ValueError("World.step uses the configured dt")
        self.begin_tick()
        for ob in self.observers:
            ob.on_tick(self)
        self.end_tick()
        return self


def step(world: World, dt: float | None = None) -> World:
    return world.step(dt)


def inject_stoppage(world: World, event: ScenarioEvent) -> World:
    if event.kind not in (INCIDENT, WORKZONE):
        raise ValueError("inject_stoppage serves incident and workzone events only")
    event.validate()
    seg = world.net.segment(event.segment_id)
    if event.position < 0 or event.position + event.blockage_span > seg.length:
        raise ValueError(
            f"blockage [{event.position}, {event.position + event.blockage_span}] "
            f"does not fit on segment {seg.id} of length {seg.length}"
        )
    if any(l < 0 or l >= seg.lane_count for l in event.lanes):
        raise ValueError(f"lanes {event.lanes} invalid for {seg.lane_count}-lane segment")
    world.stoppages.append(_Stoppage(event))
    return world


def apply_weather(world: World, degraded: CarFollowParams, start: float, duration: float) -> World:
    degraded.validate()
    normal = world.config.params
    if degraded.min_gap < normal.min_gap or degraded.max_speed_factor > normal.max_speed_factor:
        raise ValueError("degraded parameters must not be less cautious than normal ones")
    if degraded.reaction_time < world.dt:
        raise ValueError("degraded reaction_time must be >= dt")
    if start < 0 or duration <= 0 or start + duration > world.config.horizon:
        raise ValueError("weather window outside the simulated horizon")
    world.weather.append((start, start + duration, degraded))
    return world


# -- demand --------------------------------------------------------------------


def default_sources(net: RoadNetwork) -> tuple[str, ...]:
    return tuple(s for s in net.segment_ids if len(net.segments[s].upstream_ids) <= 2)


def default_destinations(net: RoadNetwork) -> tuple[str, ...]:
    return tuple(s for s in net.segment_ids if len(net.segments[s].downstream_ids) <= 2)


class _Router:
    def __init__(self, net: RoadNetwork, interval: float):
        self.net = net
        self.interval = interval
        self._cache: dict[tuple[str, str, int], tuple[str, ...]] = {}

    def route(self, origin: str, dest: str, t: float) -> tuple[str, ...]:
        k = int(t // self.interval)
        key = (origin, dest, k)
        if key not in self._cache:
            t0 = k * self.interval
            if self.net.horizon_s is not None:
                t0 = min(t0, self.net.horizon_s - 1e-6)
            w = {s: historical_tt(self.net, s, t0) for s in self.net.segment_ids}
            self._cache[key] = tuple(self.net.fastest_route(origin, dest, w))
        return self._cache[key]


def _poisson_times(rng: np.random.Generator, rate: float, t0: float, t1: float) -> list[float]:
    times = []
    t = t0
    while True:
        t += rng.exponential(1.0 / rate)
        if t >= t1:
            return times
        times.append(float(t))


def generate_baseline_demand(net: RoadNetwork, config: SimConfig, seed: int | None = None) -> list[Departure]:
    rng = np.random.default_rng([config.seed if seed is None else seed, 1])
    sources = config.sources or default_sources(net)
    dests = config.destinations or default_destinations(net)
    router = _Router(net, config.routing_interval_s)
    t1 = config.horizon if config.demand_end is None else config.demand_end
    rate = config.demand_per_source_per_hour / 3600.0
    out = []
    if rate <= 0:
        return out
    for src in sources:
        for t in _poisson_times(rng, rate, config.demand_start, t1):
            choices = [d for d in dests if d != src]
            for _ in range(10):
                dest = choices[int(rng.integers(len(choices)))]
                try:
                    route = router.route(src, dest, t)
                except NetworkError:
                    continue
                if len(route) >= 2:
                    out.append(Departure(t, route, "base"))
                    break
    out.sort(key=lambda d: (d.time, d.route))
    return out


def generate_special_event_demand(
    net: RoadNetwork,
    venue: str,
    rate: float,
    window: tuple[float, float],
    seed: int,
    sources: Sequence[str] | None = None,
    routing_interval_s: float = 300.0,
) -> list[Departure]:
    """Poisson departures toward ``venue``, each on its fastest route."""
    if not rate > 0:
        raise ValueError("rate must be > 0")
    net.segment(venue)
    t0, t1 = window
    if t1 <= t0:
        return []
    srcs = [s for s in (sources or default_sources(net)) if s != venue]
    g = net.graph()
    import networkx as nx

    srcs = [s for s in srcs if nx.has_path(g, s, venue)]
    if not srcs:
        raise NetworkError(f"venue {venue} is unreachable from every source")
    rng = np.random.default_rng([seed, 2])
    router = _Router(net, routing_interval_s)
    out = []
    for t in _poisson_times(rng, rate, t0, t1):
        src = srcs[int(rng.integers(len(srcs)))]
        out.append(Departure(t, router.route(src, venue, t), "special_event"))
    return out


# -- runs ------------------------------------------------------------------------


@dataclass
class TraceSet:
    digest: str
    n_ticks: int
    departed: int
    arrived: int
    arrivals: list[VehicleState]
    min_gap: float
    conservation_ok: bool
    trace_path: Path | None = None


TRACE_COLUMNS = ["time_s", "vehicle_id", "segment_id", "lane", "offset_m", "speed_mps", "leader_gap_m"]


class _TraceRecorder:
    def __init__(self, path: Path | None):
        self.h = hashlib.sha256()
        self.path = path
        self._fh = None
        self._w = None
        self.conservation_ok = True

    def on_start(self, world: World) -> None:
        if self.path is not None:
            self._fh = open(self.path, "w", newline="")
            self._w = csv.writer(self._fh, lineterminator="\n")
            self._w.writerow(TRACE_COLUMNS)

    def on_tick(self, world: World) -> None:
        idx = world.vehicle_slots()
        idx = idx[np.argsort(world.vid[idx], kind="stable")]
        self.h.update(np.float64(world.t).tobytes())
        for arr in (world.vid[idx], world.seg[idx], world.lane[idx], world.off[idx], world.v[idx], world.gap[idx]):
            self.h.update(np.ascontiguousarray(arr).tobytes())
        if world.departed != len(idx) + world.arrived:
            self.conservation_ok = False
        if self._w is not None:
            t = f"{world.t:.3f}"
            ids = world.seg_ids
            for s in idx:
                self._w.writerow([t, int(world.vid[s]), ids[world.seg[s]], int(world.lane[s]),
                                  f"{world.off[s]:.3f}", f"{world.v[s]:.3f}", f"{world.gap[s]:.3f}"])

    def on_segment_exit(self, world, slot, entry) -> None:
        pass

    def on_end(self, world: World) -> None:
        if self._fh is not None:
            self._fh.close()


def build_world(net: RoadNetwork, config: SimConfig, extra_departures: Iterable[Departure] = ()) -> World:
    """World with baseline demand, special-event demand and injectors scheduled."""
    world = World(net, config)
    deps = generate_baseline_demand(net, config)
    for ev in config.events:
        if ev.kind == SPECIAL_EVENT:
            deps += generate_special_event_demand(
                net, ev.segment_id, ev.rate, (ev.start, ev.end), config.seed,
                ev.sources or None, config.routing_interval_s,
            )
    deps += list(extra_departures)
    deps.sort(key=lambda d: (d.time, d.tag != "base", d.route))
    world.schedule(deps)
    for ev in config.events:
        if ev.kind in (INCIDENT, WORKZONE):
            inject_stoppage(world, ev)
        elif ev.kind == WEATHER:
            apply_weather(world, ev.weather, ev.start, min(ev.duration, config.horizon - ev.start))
    return world


def run_scenario(
    net: RoadNetwork,
    config: SimConfig,
    observers: Sequence[Observer] = (),
    trace_path: str | Path | None = None,
    world: World | None = None,
) -> TraceSet:
    if world is None:
        world = build_world(net, config)
    rec = _TraceRecorder(Path(trace_path) if trace_path is not None else None)
    world.observers = [rec, *observers]
    for ob in world.observers:
        ob.on_start(world)
    for _ in range(config.n_ticks):
        world.step()
    for ob in world.observers:
        ob.on_end(world)
    return TraceSet(
        digest=rec.h.hexdigest(),
        n_ticks=config.n_ticks,
        departed=world.departed,
        arrived=world.arrived,
        arrivals=world.arrivals,
        min_gap=world.min_gap_seen,
        conservation_ok=rec.conservation_ok,
        trace_path=rec.path,
    )


def with_events(config: SimConfig, events: Sequence[ScenarioEvent]) -> SimConfig:
    return replace(config, events=list(events))
