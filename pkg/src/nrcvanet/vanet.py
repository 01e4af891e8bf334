"""V2V message layer and the cooperative detection protocol run on each vehicle.

The radio is an idealized disk: every emission reaches every vehicle within
``radio_range_m`` in the same tick, without loss. Delivery is a barrier:
emissions are collected first, then applied in a deterministic order
(segment id, then vehicle id).

Protocol per vehicle, evaluated every ``protocol_period_s``:

1. if the time spent on the current segment exceeds ``(1 + c) * TT_h``,
   build the feature vector and classify it with the on-board model;
2. with no stored event on the segment, store one and broadcast an RQ to the
   vehicles of the segment;
3. with a stored event, keep it until it is confirmed (four successive
   excessive evaluation intervals) and either its hold duration has elapsed
   or it is an incident or workzone; then send one RP to the first-order
   adjacent segments. Received RPs are never forwarded.

The StoredEvent of a segment lives in a :class:`SegmentStore`. Vehicles that
hold it re-advertise it in their beacons, so new arrivals on the segment learn
it from any holder in range.
"""

from __future__ import annotations

import csv
import math
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .features import (
    CLASSES,
    RECURRENT,
    STORED_VALUE,
    FeatureVector,
    PspotTracker,
    build_feature_vector,
    footprint_gaps,
)
from .road_network import RoadNetwork, adjacent_segments, historical_tt, max_flow
from .traffic_sim import MAX_LANES, TrajectoryEntry, World

BYPASS_HOLD = ("Incident", "Workzone")
MSG_COLUMNS = ["time_s", "msg_type", "sender", "segment", "cause", "hop"]


class ConfigurationError(ValueError):
    pass


@dataclass
class ProtocolConfig:
    radio_range_m: float = 300.0
    beacon_period_s: float = 0.1
    protocol_period_s: float = 1.0
    eval_interval_s: float = 300.0
    hold_intervals: int = 4
    persistence_intervals: int = 4
    clear_intervals: int = 4
    congestion_factor: float = 0.8
    staleness_s: float = 1.0
    rp_direction: str = "upstream"
    pspot_cell_m: float = 10.0
    pspot_slice_s: float = 10.0
    pspot_long_s: float = 3600.0
    trajectory_window: int = 5

    def validate(self) -> None:
        if not self.radio_range_m > 0:
            raise ConfigurationError("radio_range_m must be > 0")
        for name in ("beacon_period_s", "protocol_period_s", "eval_interval_s", "pspot_slice_s", "staleness_s"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0")
        for name in ("hold_intervals", "persistence_intervals", "clear_intervals"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.congestion_factor < 0:
            raise ConfigurationError("congestion_factor must be >= 0")
        if self.rp_direction not in ("upstream", "downstream", "both"):
            raise ConfigurationError("rp_direction must be upstream, downstream or both")
        r = self.eval_interval_s / self.pspot_slice_s
        if abs(r - round(r)) > 1e-9:
            raise ConfigurationError("eval_interval_s must be a multiple of pspot_slice_s")

    @property
    def hold_s(self) -> float:
        return self.hold_intervals * self.eval_interval_s


# -- messages ---------------------------------------------------------------------


@dataclass(frozen=True)
class Beacon:
    sender_id: int
    timestamp: float
    segment_id: str
    offset: float
    lane: int
    direction: tuple[float, float]
    speed: float
    xy: tuple[float, float]


@dataclass
class EventRecord:
    cause: str
    segment_id: str
    first_detected_at: float
    confirm_count: int = 0
    held_since: float = 0.0
    origin_segment: str = ""
    hop: int = 0
    confirmed: bool = False

    def __post_init__(self) -> None:
        if self.cause == RECURRENT or self.cause not in CLASSES:
            raise ValueError(f"only non-recurrent causes are stored, got {self.cause!r}")
        if self.confirm_count < 0:
            raise ValueError("confirm_count must be >= 0")
        if not self.origin_segment:
            self.origin_segment = self.segment_id

    @property
    def event_id(self) -> tuple[str, float]:
        return (self.origin_segment, self.first_detected_at)


@dataclass(frozen=True)
class RQMessage:
    sender: int
    segment_id: str
    record: EventRecord
    time: float


@dataclass(frozen=True)
class RPMessage:
    sender: int
    origin: str
    target: str
    record: EventRecord
    time: float
    hop: int = 1


class NeighborTable:
    """Latest beacon per sender, heard within range, evicted after ``staleness_s``."""

    def __init__(self, owner: int, radio_range_m: float = 300.0, staleness_s: float = 1.0):
        self.owner = owner
        self.radio_range_m = radio_range_m
        self.staleness_s = staleness_s
        self.entries: dict[int, Beacon] = {}

    def receive(self, beacon: Beacon, own_xy: tuple[float, float]) -> bool:
        if beacon.sender_id == self.owner:
            return False
        if math.dist(beacon.xy, own_xy) > self.radio_range_m:
            return False
        self.entries[beacon.sender_id] = beacon
        return True

    def evict(self, now: float) -> None:
        self.entries = {k: b for k, b in self.entries.items() if now - b.timestamp <= self.staleness_s}

    def neighbors(self) -> list[Beacon]:
        return [self.entries[k] for k in sorted(self.entries)]


def deliver_messages(
    outbox: Sequence[tuple[int, object]],
    positions: Mapping[int, tuple[float, float]],
    radio_range: float = 300.0,
) -> dict[int, list[object]]:
    """Deliver ``(sender, message)`` emissions to every vehicle in range.

    ``positions`` maps vehicle id to xy. The sender never receives its own
    message. Inboxes list messages in emission order; receivers are sorted.
    """
    if not radio_range > 0:
        raise ValueError("radio_range must be > 0")
    ids = sorted(positions)
    inbox: dict[int, list[object]] = {i: [] for i in ids}
    if not ids or not outbox:
        return inbox
    xy = np.array([positions[i] for i in ids], dtype=float).reshape(-1, 2)
    for sender, msg in outbox:
        src = np.asarray(positions[sender], dtype=float)
        d = np.hypot(xy[:, 0] - src[0], xy[:, 1] - src[1])
        for k in np.flatnonzero(d <= radio_range):
            if ids[k] != sender:
                inbox[ids[k]].append(msg)
    return inbox


# -- segment store and state machine --------------------------------------------------


@dataclass
class SegmentStore:
    segment_id: str
    record: EventRecord | None = None
    flags: deque = field(default_factory=lambda: deque(maxlen=64))
    holders: set = field(default_factory=set)
    rp_sent: bool = False
    votes: Counter = field(default_factory=Counter)
    normal_run: int = 0

    @property
    def excessive_run(self) -> int:
        n = 0
        for f in reversed(self.flags):
            if not f:
                break
            n += 1
        return n


def confirm_persistence(flags: Iterable[bool], required: int = 4) -> bool:
    """True iff the ``required`` most recent interval flags are all excessive."""
    flags = list(flags)
    return len(flags) >= required and all(flags[-required:])


@dataclass(frozen=True)
class CycleContext:
    vehicle_id: int
    segment_id: str
    now: float
    ott: float
    tt_h: float
    adjacent: tuple[str, ...]


@dataclass
class CycleResult:
    cause: str | None
    messages: list


def cooperative_cycle(
    ctx: CycleContext,
    store: SegmentStore,
    config: ProtocolConfig,
    classify: Callable[[], str] | None,
) -> CycleResult:
    """One pass of the on-board detection and dissemination logic."""
    if not ctx.ott > (1.0 + config.congestion_factor) * ctx.tt_h:
        return CycleResult(None, [])
    if classify is None:
        raise ConfigurationError("no classification model on board")
    cause = classify()
    if cause == RECURRENT:
        return CycleResult(cause, [])
    rec = store.record
    if rec is None:
        rec = EventRecord(
            cause=cause,
            segment_id=ctx.segment_id,
            first_detected_at=ctx.now,
            confirm_count=store.excessive_run,
            held_since=ctx.now,
        )
        rec.confirmed = confirm_persistence(store.flags, config.persistence_intervals)
        store.record = rec
        store.rp_sent = False
        store.holders.add(ctx.vehicle_id)
        return CycleResult(cause, [RQMessage(ctx.vehicle_id, ctx.segment_id, rec, ctx.now)])
    store.holders.add(ctx.vehicle_id)
    if rec.hop > 0 or store.rp_sent or not rec.confirmed:
        return CycleResult(cause, [])
    if ctx.now - rec.held_since >= config.hold_s or rec.cause in BYPASS_HOLD:
        store.rp_sent = True
        msgs = [RPMessage(ctx.vehicle_id, ctx.segment_id, a, rec, ctx.now) for a in ctx.adjacent]
        return CycleResult(cause, msgs)
    return CycleResult(cause, [])


def handle_rp(stores: dict[str, SegmentStore], rp: RPMessage) -> dict[str, SegmentStore]:
    """Install an RP on its target segment. Never forwards; duplicates are no-ops."""
    if rp.hop != 1 or rp.record.hop != 0:
        return stores
    target = stores.get(rp.target)
    if target is None:
        return stores
    cur = target.record
    if cur is not None:
        if cur.event_id == rp.record.event_id:
            return stores
        if cur.hop == 0 and cur.confirmed:
            # the first confirmed record of a segment wins
            return stores
    target.record = replace(
        rp.record,
        segment_id=rp.target,
        hop=rp.hop,
        held_since=rp.time,
        confirmed=True,
    )
    target.holders = set()
    target.rp_sent = False
    return stores


def close_interval(store: SegmentStore, excessive: bool, config: ProtocolConfig) -> str | None:
    """Append one interval flag; returns ``"confirmed"``, ``"expired"`` or None."""
    store.flags.append(bool(excessive))
    store.normal_run = 0 if excessive else store.normal_run + 1
    rec = store.record
    if rec is None:
        return None
    if rec.hop == 0:
        rec.confirm_count = store.excessive_run
        if not rec.confirmed and confirm_persistence(store.flags, config.persistence_intervals):
            rec.confirmed = True
            return "confirmed"
        if store.normal_run >= config.clear_intervals:
            store.record = None
            store.holders = set()
            store.rp_sent = False
            return "expired"
    return None


# -- the on-board layer as a simulator observer --------------------------------------


Classifier = Callable[[FeatureVector, "VehicleContext"], str]


@dataclass(frozen=True)
class VehicleContext:
    vehicle_id: int
    segment_id: str
    time: float
    entry_time: float


def model_classifier(model) -> Classifier:
    """Adapt a trained model with ``predict_row(row: dict) -> label``."""

    def classify(fv: FeatureVector, ctx: VehicleContext) -> str:
        return model.predict_row(fv.as_row())

    return classify


@dataclass
class _Episode:
    seg: int
    triggered: bool = False
    cause: str | None = None
    key: tuple | None = None
    first_cause: str | None = None


class VanetLayer:
    """Runs beacons, footprints, interval flags and the protocol on a :class:`World`.

    Hooks: ``on_trigger(layer, world, slot, fv, ctx)`` is called for each fresh
    classification; ``on_classify`` likewise with the resulting cause;
    ``on_interval(layer, world, t)`` after each evaluation boundary;
    ``on_protocol(layer, world)`` after each protocol pass.
    """

    def __init__(
        self,
        net: RoadNetwork,
        classifier: Classifier | None,
        config: ProtocolConfig | None = None,
        region_seed: Iterable[str] | None = None,
        message_log: str | Path | None = None,
    ):
        self.net = net
        self.classifier = classifier
        self.config = config or ProtocolConfig()
        self.config.validate()
        seed = net.impact_region_seed if region_seed is None else region_seed
        self.region: set[str] = set(seed)
        self.region_history: list[tuple[float, str]] = []
        self.stores = {s: SegmentStore(s) for s in net.segment_ids}
        self.episodes: dict[int, _Episode] = {}
        self.message_log = Path(message_log) if message_log is not None else None
        self.messages: list[tuple] = []
        # (origin segment, cause) -> segments that ever stored that event
        self.stored_ever: dict[tuple[str, str], set[str]] = {}
        self.confirmations: list[tuple[float, str, str]] = []
        self.interval_flags: dict[str, list[bool]] = {s: [] for s in net.segment_ids}
        self.interval_confirmed: dict[str, list[bool]] = {s: [] for s in net.segment_ids}
        self.on_trigger: list[Callable] = []
        self.on_interval: list[Callable] = []
        self.on_protocol: list[Callable] = []
        self.adjacent = {
            s: tuple(adjacent_segments(net, s, self.config.rp_direction)) for s in net.segment_ids
        }

    # -- observer hooks -----------------------------------------------------------

    def on_start(self, world: World) -> None:
        dt = world.dt
        c = self.config
        self._beacon_every = max(1, int(round(c.beacon_period_s / dt)))
        self._proto_every = max(1, int(round(c.protocol_period_s / dt)))
        self._eval_every = int(round(c.eval_interval_s / dt))
        self._slice_every = max(1, int(round(c.pspot_slice_s / dt)))
        if abs(self._eval_every * dt - c.eval_interval_s) > 1e-9:
            raise ConfigurationError("eval_interval_s must be a multiple of dt")
        nseg = len(world.seg_ids)
        self._ncell = int(math.ceil(float(world.seg_len.max()) / c.pspot_cell_m))
        self._nslice = int(round(c.eval_interval_s / c.pspot_slice_s))
        self._fp_n = np.zeros((self._nslice, nseg, MAX_LANES, self._ncell), dtype=np.int64)
        self._fp_v = np.zeros((self._nslice, nseg, MAX_LANES, self._ncell))
        self._slice = 0
        self._slices_filled = 0
        self.trackers = [PspotTracker(c.eval_interval_s, c.pspot_long_s) for _ in range(nseg)]
        self._int_samples: list[list[float]] = [[] for _ in range(nseg)]
        self._ff = np.array([self.net.segments[s].free_flow_tt for s in world.seg_ids])
        self._qmax = np.array([max_flow(self.net.segments[s]) for s in world.seg_ids])
        self._log_fh = None
        if self.message_log is not None:
            self._log_fh = open(self.message_log, "w", newline="")
            self._log_w = csv.writer(self._log_fh, lineterminator="\n")
            self._log_w.writerow(MSG_COLUMNS)

    def on_end(self, world: World) -> None:
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None

    def on_compact(self, world: World, keep: np.ndarray) -> None:
        pass

    def on_segment_exit(self, world: World, slot: int, entry: TrajectoryEntry) -> None:
        si = world.seg_index[entry.segment_id]
        self._int_samples[si].append(entry.travel_time)
        vid = int(world.vid[slot])
        self.stores[entry.segment_id].holders.discard(vid)
        self.episodes.pop(vid, None)

    def on_tick(self, world: World) -> None:
        tick = world.tick
        if tick % self._beacon_every == 0:
            self._footprints(world)
        if tick > 0 and tick % self._slice_every == 0:
            self._roll_slice(world)
        if tick > 0 and tick % self._eval_every == 0:
            self._close_intervals(world)
        if tick % self._proto_every == 0:
            self._protocol(world)

    # -- helpers -------------------------------------------------------------------

    def tt_h(self, seg_id: str, t: float) -> float:
        h = self.net.horizon_s
        if h is not None:
            t = min(t, h - 1e-6)
        return historical_tt(self.net, seg_id, max(t, 0.0))

    def threshold(self, seg_id: str, entry_t: float) -> float:
        return (1.0 + self.config.congestion_factor) * self.tt_h(seg_id, entry_t)

    def pspot(self, seg_index: int) -> str:
        return self.trackers[seg_index].current.kind

    def stored_event_for(self, seg_id: str, vid: int) -> str:
        # a pending RQ is not yet a stored event: only confirmed or relayed records count
        st = self.stores[seg_id]
        if st.record is not None and st.record.confirmed and vid in st.holders:
            return STORED_VALUE[st.record.cause]
        return "none"

    def features_for(self, world: World, slot: int, current_tt: str, completed: Sequence[TrajectoryEntry] | None = None,
                     seg_id: str | None = None) -> FeatureVector:
        if seg_id is None:
            seg_id = world.seg_ids[world.seg[slot]]
        log = world.logs[slot] if completed is None else completed
        return build_feature_vector(
            log=log,
            net=self.net,
            current_tt=current_tt,
            pspot=self.pspot(world.seg_index[seg_id]),
            inside_region=seg_id in self.region,
            stored_event=self.stored_event_for(seg_id, int(world.vid[slot])),
            c=self.config.congestion_factor,
            window=self.config.trajectory_window,
        )

    def _log(self, t: float, kind: str, sender: int, seg: str, cause: str, hop: int) -> None:
        self.messages.append((t, kind, sender, seg, cause, hop))
        if self._log_fh is not None:
            self._log_w.writerow([f"{t:.3f}", kind, sender, seg, cause, hop])

    # -- beacons and footprints ------------------------------------------------------

    def _footprints(self, world: World) -> None:
        idx = world.vehicle_slots()
        if not len(idx):
            return
        seg = world.seg[idx]
        cell = np.minimum((world.off[idx] // self.config.pspot_cell_m).astype(np.int64), self._ncell - 1)
        cell = np.maximum(cell, 0)
        flat = (seg * MAX_LANES + world.lane[idx]) * self._ncell + cell
        size = len(world.seg_ids) * MAX_LANES * self._ncell
        n = np.bincount(flat, minlength=size).reshape(len(world.seg_ids), MAX_LANES, self._ncell)
        v = np.bincount(flat, weights=world.v[idx], minlength=size).reshape(n.shape)
        self._fp_n[self._slice] += n
        self._fp_v[self._slice] += v

        # segment-level density x speed census; every vehicle on the segment hears it
        nseg = len(world.seg_ids)
        cnt = np.bincount(seg, minlength=nseg)
        vs = np.bincount(seg, weights=world.v[idx], minlength=nseg)
        k = cnt / world.seg_len
        vbar = np.divide(vs, cnt, out=np.zeros(nseg), where=cnt > 0)
        q = k * vbar
        world.acc_flow[idx] += q[seg]
        world.acc_flow_n[idx] += 1

    def _roll_slice(self, world: World) -> None:
        self._slices_filled = min(self._slices_filled + 1, self._nslice)
        if self._slices_filled >= self._nslice:
            counts = self._fp_n.sum(axis=0)
            speeds = self._fp_v.sum(axis=0)
            for si in range(len(world.seg_ids)):
                lanes = int(world.seg_lanes[si])
                ncell = int(math.ceil(world.seg_len[si] / self.config.pspot_cell_m))
                gaps = footprint_gaps(counts[si, :lanes, :ncell], speeds[si, :lanes, :ncell], float(world.seg_vf[si]))
                self.trackers[si].update(world.t, gaps, self.config.pspot_cell_m)
        self._slice = (self._slice + 1) % self._nslice
        self._fp_n[self._slice] = 0
        self._fp_v[self._slice] = 0.0

    # -- evaluation intervals ----------------------------------------------------------

    def _close_intervals(self, world: World) -> None:
        t = world.t
        t0 = t - self.config.eval_interval_s
        idx = world.vehicle_slots()
        elapsed = t - world.entry_t[idx]
        seg = world.seg[idx]
        for si, sid in enumerate(world.seg_ids):
            thr = self.threshold(sid, t0)
            samples = list(self._int_samples[si])
            on = seg == si
            samples += [float(e) for e in elapsed[on] if e > thr]
            excessive = bool(samples) and float(np.mean(samples)) > thr
            st = self.stores[sid]
            outcome = close_interval(st, excessive, self.config)
            if outcome == "confirmed":
                self.confirmations.append((t, sid, st.record.cause))
            elif outcome == "expired":
                self._drop_relayed(sid)
            self.interval_flags[sid].append(excessive)
            rec = st.record
            self.interval_confirmed[sid].append(rec is not None and rec.confirmed)
            self._int_samples[si] = []
        for cb in self.on_interval:
            cb(self, world, t)

    def _drop_relayed(self, origin: str) -> None:
        for st in self.stores.values():
            r = st.record
            if r is not None and r.hop > 0 and r.origin_segment == origin:
                st.record = None
                st.holders = set()

    # -- protocol ----------------------------------------------------------------------

    def _protocol(self, world: World) -> None:
        t = world.t
        idx = world.vehicle_slots()
        if not len(idx):
            for cb in self.on_protocol:
                cb(self, world)
            return
        vids = world.vid[idx]
        segs = world.seg[idx]
        # order: segment id, then vehicle id
        order = np.lexsort((vids, segs))
        idx, vids, segs = idx[order], vids[order], segs[order]
        outbox: list[object] = []
        for s, vid, si in zip(idx, vids, segs):
            vid = int(vid)
            si = int(si)
            sid = world.seg_ids[si]
            ep = self.episodes.get(vid)
            if ep is None or ep.seg != si:
                ep = self.episodes[vid] = _Episode(si)
            entry_t = float(world.entry_t[s])
            ott = t - entry_t
            thr_tt = self.tt_h(sid, entry_t)
            if not ott > (1.0 + self.config.congestion_factor) * thr_tt:
                continue
            st = self.stores[sid]
            inside = sid in self.region
            key = (self.stored_event_for(sid, vid), inside, self.pspot(si))
            ctx = CycleContext(vid, sid, t, ott, thr_tt, self.adjacent[sid])
            fresh = key != ep.key
            if fresh:
                if self.classifier is None:
                    raise ConfigurationError("no classification model on board")
                fv = self.features_for(world, int(s), "excessive", seg_id=sid)
                vctx = VehicleContext(vid, sid, t, entry_t)
                cause = self.classifier(fv, vctx)
                for cb in self.on_trigger:
                    cb(self, world, int(s), fv, vctx, cause, ep.triggered)
                ep.triggered = True
                ep.key = key
                ep.cause = cause
                if ep.first_cause is None:
                    ep.first_cause = cause
                st.votes[cause] += 1
            res = cooperative_cycle(ctx, st, self.config, lambda c=ep.cause: c)
            for m in res.messages:
                outbox.append(m)
        self._apply(outbox, t)
        self._spread(world, idx, segs)
        for cb in self.on_protocol:
            cb(self, world)

    def _apply(self, outbox: list, t: float) -> None:
        for m in outbox:
            if isinstance(m, RQMessage):
                self._log(t, "RQ", m.sender, m.segment_id, m.record.cause, 0)
                self.stored_ever.setdefault((m.segment_id, m.record.cause), set()).add(m.segment_id)
            elif isinstance(m, RPMessage):
                self._log(t, "RP", m.sender, m.target, m.record.cause, m.hop)
                before = self.stores[m.target].record
                handle_rp(self.stores, m)
                after = self.stores[m.target].record
                if after is not None and after is not before:
                    self.stored_ever.setdefault((after.origin_segment, after.cause), set()).add(m.target)
                    if after.cause == "SpecialEvent" and m.target not in self.region:
                        self.region.add(m.target)
                        self.region_history.append((t, m.target))

    def _spread(self, world: World, idx: np.ndarray, segs: np.ndarray) -> None:
        """Holders re-advertise the stored event to same-segment vehicles in range."""
        r = self.config.radio_range_m
        xy = world.positions_xy(idx)
        vids = world.vid[idx]
        for sid, st in self.stores.items():
            if st.record is None:
                continue
            si = world.seg_index[sid]
            on = np.flatnonzero(segs == si)
            if not len(on):
                continue
            on_vids = vids[on]
            is_holder = np.array([int(v) in st.holders for v in on_vids])
            if not is_holder.any():
                # retained by the segment: the first vehicle to arrive picks it up
                st.holders.update(int(v) for v in on_vids)
                continue
            hxy = xy[on[is_holder]]
            pxy = xy[on[~is_holder]]
            if not len(pxy):
                continue
            d = np.hypot(pxy[:, None, 0] - hxy[None, :, 0], pxy[:, None, 1] - hxy[None, :, 1])
            hit = (d <= r).any(axis=1)
            st.holders.update(int(v) for v in on_vids[~is_holder][hit])

    # -- queries for experiments -----------------------------------------------------------

    def aware_confirmed(self, world: World, seg_id: str) -> tuple[int, int]:
        """(vehicles on segment that hold a confirmed record, vehicles on segment)."""
        idx = world.vehicle_slots()
        si = world.seg_index[seg_id]
        on = world.vid[idx][world.seg[idx] == si]
        st = self.stores[seg_id]
        if st.record is None or not st.record.confirmed:
            return 0, len(on)
        return sum(int(v) in st.holders for v in on), len(on)

    def assessment(self, vid: int, seg_id: str) -> str | None:
        """The cause a vehicle currently attributes its segment's congestion to."""
        ep = self.episodes.get(vid)
        if ep is not None and ep.cause is not None:
            return ep.cause
        st = self.stores[seg_id]
        if st.record is not None and vid in st.holders:
            return st.record.cause
        return None

    def confirmed_fraction(self) -> float:
        total = hit = 0
        for flags in self.interval_confirmed.values():
            total += len(flags)
            hit += sum(flags)
        return hit / total if total else 0.0
