"""Experiment orchestration: calibration, dataset generation and protocol metrics.

Everything here is a deterministic function of an :class:`ExperimentConfig`
and its seeds. Configs are JSON files; every key is optional and falls back
to the defaults below (see ``docs`` in the README for the schema).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .classifiers import (
    Dataset,
    cross_validate,
    load_dataset,
    load_model,
    sensitivity_analysis,
    train_adaboost_m1,
    train_c45,
    train_nb,
    train_random_forest,
)
from .features import CLASSES, EVENT_LABEL, RECURRENT, FeatureVector, format_dataset_rows
from .road_network import (
    HistoricalProfile,
    RoadNetwork,
    adjacent_segments,
    generate_grid_network,
    load_network,
)
from .traffic_sim import (
    INCIDENT,
    SPECIAL_EVENT,
    WEATHER,
    WORKZONE,
    CarFollowParams,
    ScenarioEvent,
    SimConfig,
    TraceSet,
    run_scenario,
)
from .vanet import ProtocolConfig, VanetLayer, VehicleContext, model_classifier

BASELINE = "baseline"
SCENARIO_KINDS = (BASELINE, INCIDENT, WORKZONE, WEATHER, SPECIAL_EVENT)
PROVENANCE_COLUMNS = ["row", "scenario", "seed", "vehicle_id", "time_s", "segment_id", "label"]


class ConfigError(ValueError):
    pass


class ShortfallError(RuntimeError):
    def __init__(self, counts: dict[str, int], target: dict[str, int]):
        self.counts = counts
        self.target = target
        short = {c: (counts.get(c, 0), n) for c, n in target.items() if counts.get(c, 0) < n}
        msg = ", ".join(f"{c}: {have}/{want}" for c, (have, want) in short.items())
        super().__init__(f"not enough episodes for the requested rows ({msg})")


# -- configuration -------------------------------------------------------------------


@dataclass
class ScenarioSpec:
    kind: str
    seed: int = 0
    horizon_s: float = 3600.0
    start_s: float = 600.0
    duration_s: float = 1800.0
    segment: str | None = None
    lanes: tuple[int, ...] = (0,)
    position_frac: float = 0.5
    n_blockers: int = 5
    pass_speed: float = 2.0
    speed_factor: float = 0.45
    min_gap: float = 5.0
    reaction_time: float = 1.5
    rate_per_hour: float = 1500.0
    name: str = ""

    def __post_init__(self) -> None:
        self.lanes = tuple(self.lanes)
        if not self.name:
            where = f"_{self.segment}" if self.segment else ""
            self.name = f"{self.kind}{where}_s{self.seed}"

    def validate(self, net: RoadNetwork) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.kind in (INCIDENT, WORKZONE, SPECIAL_EVENT):
            if self.segment is None:
                raise ConfigError(f"{self.kind} scenario needs a segment")
            net.segment(self.segment)
        if self.kind != BASELINE and self.start_s >= self.horizon_s:
            raise ConfigError(f"{self.name}: event starts after the horizon")

    def event(self, net: RoadNetwork) -> ScenarioEvent | None:
        if self.kind == BASELINE:
            return None
        if self.kind in (INCIDENT, WORKZONE):
            seg = net.segment(self.segment)
            ev = ScenarioEvent(self.kind, seg.id, self.start_s, self.duration_s, lanes=self.lanes,
                               position=self.position_frac * seg.length, n_blockers=self.n_blockers,
                               pass_speed=self.pass_speed)
        elif self.kind == WEATHER:
            p = CarFollowParams(min_gap=self.min_gap, reaction_time=self.reaction_time,
                                max_speed_factor=self.speed_factor)
            ev = ScenarioEvent(WEATHER, "", self.start_s, self.duration_s, weather=p)
        else:
            ev = ScenarioEvent(SPECIAL_EVENT, self.segment, self.start_s, self.duration_s,
                               rate=self.rate_per_hour / 3600.0)
        ev.validate()
        return ev


@dataclass
class DetectionSpec:
    segment: str = "a_g10_g11"
    onsets_s: tuple[float, ...] = (600.0, 1200.0, 1800.0, 2400.0)
    duration_s: float = 1500.0
    after_s: float = 300.0
    eval_interval_s: float = 120.0
    report_interval_s: float = 60.0
    window_s: float = 900.0
    seed: int = 11
    lanes: tuple[int, ...] = (0,)
    n_blockers: int = 5
    pass_speed: float = 2.0


@dataclass
class ImpactSpec:
    venue: str = "a_g11_g12"
    start_s: float = 300.0
    duration_s: float = 3600.0
    horizon_s: float = 4500.0
    rate_per_hour: float = 1500.0
    report_interval_s: float = 60.0
    eval_interval_s: float = 300.0
    population_hops: int = 2
    seed: int = 21


@dataclass
class ExperimentConfig:
    network: str = "grid40"
    dt: float = 0.5
    beacon_period_s: float = 0.5
    demand_per_source_per_hour: float = 200.0
    scenarios: list[ScenarioSpec] = field(default_factory=list)
    target_rows: int = 591
    class_shares: dict[str, float] | None = None
    recurrent_min_ratio: float = 1.3
    folds: int = 10
    cv_seed: int = 0
    rf_trees: int = 100
    rf_features: int = 4
    rf_seed: int = 0
    boost_rounds: int = 10
    prune_cf: float = 0.25
    min_leaf: float = 2.0
    nb_alpha: float = 1.0
    detection: DetectionSpec = field(default_factory=DetectionSpec)
    impact: ImpactSpec = field(default_factory=ImpactSpec)
    fp_seeds: tuple[int, ...] = tuple(range(10))
    fp_horizon_s: float = 3600.0
    calibration_seeds: tuple[int, ...] = tuple(range(1000, 1010))
    calibration_horizon_s: float = 7200.0
    dataset: str = "dataset591"
    model: str = "onboard_nb"
    output_dir: str = "out"
    seed: int = 0

    def run_seed(self, seed: int) -> int:
        """Simulation seed for a run: the run's own seed shifted by the master seed."""
        return seed + 1000 * self.seed

    def validate(self) -> None:
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.target_rows < len(CLASSES):
            raise ConfigError("target_rows must allow at least one row per class")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        kinds = {s.kind for s in self.scenarios}
        if self.scenarios and BASELINE not in kinds:
            raise ConfigError("the scenario matrix needs at least one baseline run for Recurrent rows")

    def protocol(self, eval_interval_s: float = 300.0) -> ProtocolConfig:
        return ProtocolConfig(beacon_period_s=self.beacon_period_s, eval_interval_s=eval_interval_s)

    def sim_config(self, spec: ScenarioSpec, net: RoadNetwork) -> SimConfig:
        ev = spec.event(net)
        return SimConfig(
            dt=self.dt,
            horizon=spec.horizon_s,
            seed=self.run_seed(spec.seed),
            demand_per_source_per_hour=self.demand_per_source_per_hour,
            events=[ev] if ev is not None else [],
        )


INCIDENT_SEGMENTS = ("a_g10_g11", "a_g01_g11", "a_g12_g11", "a_g21_g11", "a_g11_g01", "a_g02_g01")


def default_scenarios() -> list[ScenarioSpec]:
    """The matrix behind the shipped dataset."""
    out = []
    for k, seg in enumerate(INCIDENT_SEGMENTS[:3]):
        out.append(ScenarioSpec(INCIDENT, seed=100 + k, horizon_s=3000.0, start_s=600.0, duration_s=1800.0,
                                segment=seg, lanes=(k % 2,)))
    for k, seg in enumerate(INCIDENT_SEGMENTS[3:5]):
        out.append(ScenarioSpec(WORKZONE, seed=200 + k, horizon_s=5400.0, start_s=300.0, duration_s=4800.0,
                                segment=seg, lanes=(k % 2,)))
    for k in range(2):
        out.append(ScenarioSpec(WEATHER, seed=300 + k, horizon_s=3000.0, start_s=600.0, duration_s=2400.0))
    for k in range(2):
        out.append(ScenarioSpec(SPECIAL_EVENT, seed=400 + k, horizon_s=4500.0, start_s=300.0, duration_s=3600.0,
                                segment="a_g11_g12", rate_per_hour=2500.0))
    for k in range(2):
        out.append(ScenarioSpec(BASELINE, seed=500 + k, horizon_s=3600.0))
    return out


def _build(cls, d: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kw = {}
    for k, v in d.items():
        kw[k] = tuple(v) if isinstance(v, list) and k not in ("scenarios",) else v
    try:
        return cls(**kw)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    d = dict(d)
    scen = d.pop("scenarios", None)
    det = d.pop("detection", None)
    imp = d.pop("impact", None)
    cfg = _build(ExperimentConfig, d, "config")
    cfg.scenarios = [_build(ScenarioSpec, s, f"scenarios[{i}]") for i, s in enumerate(scen)] if scen is not None \
        else default_scenarios()
    if det is not None:
        cfg.detection = _build(DetectionSpec, det, "detection")
    if imp is not None:
        cfg.impact = _build(ImpactSpec, imp, "impact")
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return config_from_dict({})
    p = Path(path)
    if not p.exists():
        shipped = data_path(f"{path}.json")
        if shipped.exists():
            p = shipped
        else:
            raise ConfigError(f"config file {path} not found")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: line {e.lineno}: {e.msg}") from None
    return config_from_dict(d)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def data_path(name: str) -> Path:
    return Path(str(resources.files("nrcvanet") / "data" / name))


def _shipped_or_path(name: str, suffix: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    shipped = data_path(name + suffix)
    if shipped.exists():
        return shipped
    raise FileNotFoundError(f"{name} is neither a file nor a shipped {suffix} fixture")


def resolve_dataset(cfg: ExperimentConfig) -> Dataset:
    return load_dataset(_shipped_or_path(cfg.dataset, ".csv"))


def resolve_model(cfg: ExperimentConfig):
    return load_model(_shipped_or_path(cfg.model, ".json"))


def resolve_network(cfg: ExperimentConfig) -> RoadNetwork:
    if cfg.network == "grid40":
        return load_network(data_path("grid40.json"))
    if cfg.network == "grid40-uncalibrated":
        return generate_grid_network()
    return load_network(cfg.network)


# -- historical travel times ------------------------------------------------------------


def calibrate_profiles(
    net: RoadNetwork,
    seeds: Sequence[int],
    horizon_s: float,
    demand_per_source_per_hour: float,
    dt: float = 0.5,
    bin_width_s: float = 900.0,
) -> dict[str, HistoricalProfile]:
    """Per-bin mean travel time over baseline runs, never below free flow."""
    sums: dict[tuple[str, int], list[float]] = {}
    nbins = int(math.ceil(horizon_s / bin_width_s))
    for seed in seeds:
        cfg = SimConfig(dt=dt, horizon=horizon_s, seed=seed, demand_per_source_per_hour=demand_per_source_per_hour)
        ts = run_scenario(net, cfg)
        for a in ts.arrivals:
            for e in a.trajectory_log:
                k = min(int(e.entry_time // bin_width_s), nbins - 1)
                sums.setdefault((e.segment_id, k), []).append(e.travel_time)
    out = {}
    for sid in net.segment_ids:
        ff = net.segments[sid].free_flow_tt
        bins = []
        for k in range(nbins):
            v = sums.get((sid, k))
            bins.append((k * bin_width_s, max(ff, float(np.mean(v))) if v else ff))
        out[sid] = HistoricalProfile(sid, tuple(bins))
    return out


# -- ground truth and dataset -----------------------------------------------------------


class GroundTruthOracle:
    """Labels an excessive episode with the injected cause that explains it.

    Incidents and workzones explain their own segment and its first-order
    upstream neighbors, weather explains every segment, a special event
    explains the segments of the (current) impact region. Each window runs
    from the event start to ``linger_s`` after its end.
    """

    def __init__(self, net: RoadNetwork, events: Sequence[ScenarioEvent], linger_s: float = 600.0):
        self.net = net
        self.events = list(events)
        self.linger_s = linger_s
        self.layer: VanetLayer | None = None
        self._area = {}
        for ev in self.events:
            if ev.kind in (INCIDENT, WORKZONE):
                self._area[id(ev)] = {ev.segment_id, *adjacent_segments(net, ev.segment_id, "upstream")}

    def label(self, segment_id: str, t: float) -> str | None:
        for ev in self.events:
            if not ev.start <= t <= ev.end + self.linger_s:
                continue
            if ev.kind in (INCIDENT, WORKZONE):
                if segment_id in self._area[id(ev)]:
                    return EVENT_LABEL[ev.kind]
            elif ev.kind == WEATHER:
                return EVENT_LABEL[WEATHER]
            elif ev.kind == SPECIAL_EVENT:
                region = self.layer.region if self.layer is not None else {ev.segment_id}
                if segment_id in region:
                    return EVENT_LABEL[SPECIAL_EVENT]
        return None

    def __call__(self, fv: FeatureVector, ctx: VehicleContext) -> str:
        return self.label(ctx.segment_id, ctx.time) or RECURRENT


@dataclass
class LabeledRow:
    features: FeatureVector
    label: str
    scenario: str
    seed: int
    vehicle_id: int
    time_s: float
    segment_id: str


class _RowCollector:
    def __init__(self, oracle: GroundTruthOracle, spec: ScenarioSpec, recurrent_min_ratio: float, net: RoadNetwork):
        self.oracle = oracle
        self.spec = spec
        self.ratio = recurrent_min_ratio
        self.net = net
        self.rows: list[LabeledRow] = []
        self.layer: VanetLayer | None = None
        self.seed = spec.seed

    def on_trigger(self, layer, world, slot, fv, ctx, cause, was_triggered) -> None:
        if was_triggered or self.spec.kind == BASELINE:
            return
        lab = self.oracle.label(ctx.segment_id, ctx.time)
        if lab is None:
            return
        self.rows.append(LabeledRow(fv, lab, self.spec.name, self.seed, ctx.vehicle_id, ctx.time, ctx.segment_id))

    # observer interface: recurrent rows are normal-but-slow segment passages of baseline runs
    def on_start(self, world) -> None:
        pass

    def on_tick(self, world) -> None:
        pass

    def on_end(self, world) -> None:
        pass

    def on_segment_exit(self, world, slot, entry) -> None:
        if self.spec.kind != BASELINE:
            return
        seg = self.net.segments[entry.segment_id]
        tt = entry.travel_time
        if tt <= self.ratio * seg.free_flow_tt:
            return
        if tt > self.layer.threshold(entry.segment_id, entry.entry_time):
            return
        fv = self.layer.features_for(world, slot, "normal", completed=world.logs[slot][:-1], seg_id=entry.segment_id)
        self.rows.append(LabeledRow(fv, RECURRENT, self.spec.name, self.seed, int(world.vid[slot]),
                                    float(entry.exit_time), entry.segment_id))


def collect_rows(net: RoadNetwork, cfg: ExperimentConfig, spec: ScenarioSpec) -> list[LabeledRow]:
    """Run one scenario with the ground-truth oracle on board and return its rows."""
    spec.validate(net)
    sim = cfg.sim_config(spec, net)
    oracle = GroundTruthOracle(net, sim.events)
    layer = VanetLayer(net, oracle, cfg.protocol())
    oracle.layer = layer
    col = _RowCollector(oracle, spec, cfg.recurrent_min_ratio, net)
    col.layer = layer
    col.seed = sim.seed
    layer.on_trigger.append(col.on_trigger)
    run_scenario(net, sim, [layer, col])
    return col.rows


def class_targets(total: int, shares: dict[str, float] | None = None) -> dict[str, int]:
    shares = shares or {c: 1.0 for c in CLASSES}
    unknown = set(shares) - set(CLASSES)
    if unknown:
        raise ConfigError(f"unknown classes in class_shares: {sorted(unknown)}")
    s = sum(shares.values())
    raw = {c: total * shares.get(c, 0.0) / s for c in CLASSES}
    out = {c: int(math.floor(v)) for c, v in raw.items()}
    # hand out the remainder to the largest fractional parts, ties by class order
    rest = total - sum(out.values())
    for c in sorted(CLASSES, key=lambda c: (-(raw[c] - out[c]), CLASSES.index(c)))[:rest]:
        out[c] += 1
    return out


@dataclass
class DatasetResult:
    rows: list[LabeledRow]
    available: dict[str, int]

    @property
    def dataset(self) -> Dataset:
        return Dataset.from_feature_rows([(r.features, r.label) for r in self.rows])

    def csv_text(self) -> str:
        return format_dataset_rows([(r.features, r.label) for r in self.rows])

    def provenance_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PROVENANCE_COLUMNS)
        for i, r in enumerate(self.rows):
            w.writerow([i, r.scenario, r.seed, r.vehicle_id, f"{r.time_s:.3f}", r.segment_id, r.label])
        return buf.getvalue()


def generate_dataset(
    cfg: ExperimentConfig,
    net: RoadNetwork | None = None,
    allow_shortfall: bool = False,
    progress: Callable[[str], None] | None = None,
) -> DatasetResult:
    """Run the scenario matrix and draw a class-balanced labeled dataset.

    Rows per class follow ``class_shares`` (equal by default). Raises
    :class:`ShortfallError` when some class has too few episodes, unless
    ``allow_shortfall`` is set, in which case all available rows are kept.
    """
    net = net or resolve_network(cfg)
    pool: dict[str, list[LabeledRow]] = {c: [] for c in CLASSES}
    for spec in cfg.scenarios:
        rows = collect_rows(net, cfg, spec)
        if progress:
            progress(f"{spec.name}: {len(rows)} rows")
        for r in rows:
            pool[r.label].append(r)
    available = {c: len(v) for c, v in pool.items()}
    target = class_targets(cfg.target_rows, cfg.class_shares)
    if any(available[c] < n for c, n in target.items()) and not allow_shortfall:
        raise ShortfallError(available, target)
    rng = np.random.default_rng([cfg.seed, 7])
    picked: list[LabeledRow] = []
    for c in CLASSES:
        rows = pool[c]
        n = min(target[c], len(rows))
        idx = np.sort(rng.choice(len(rows), size=n, replace=False)) if n else []
        picked += [rows[i] for i in idx]
    return DatasetResult(picked, available)


def write_dataset(result: DatasetResult, path: str | Path, provenance_path: str | Path | None = None) -> None:
    path = Path(path)
    path.write_text(result.csv_text())
    prov = Path(provenance_path) if provenance_path else path.with_suffix(".provenance.csv")
    prov.write_text(result.provenance_text())


# -- classifier evaluation ----------------------------------------------------------------


def trainers(cfg: ExperimentConfig) -> dict[str, Callable[[Dataset], object]]:
    return {
        "CT": lambda ds: train_c45(ds, min_leaf=cfg.min_leaf, prune_cf=cfg.prune_cf),
        "NB": lambda ds: train_nb(ds, alpha=cfg.nb_alpha),
        "RF": lambda ds: train_random_forest(ds, n_trees=cfg.rf_trees, m_features=cfg.rf_features, seed=cfg.rf_seed),
        "Boost": lambda ds: train_adaboost_m1(
            ds, T=cfg.boost_rounds, base=lambda d: train_c45(d, min_leaf=cfg.min_leaf, prune_cf=cfg.prune_cf)),
    }


@dataclass
class MetricsReport:
    accuracy: dict[str, float] = field(default_factory=dict)
    confusion: dict[str, np.ndarray] = field(default_factory=dict)
    sensitivity: dict[str, dict[str, float]] = field(default_factory=dict)
    detection: list["DetectionRun"] = field(default_factory=list)
    impact: "ImpactRun | None" = None
    fp_fraction: float | None = None

    def validate(self) -> None:
        for v in self.accuracy.values():
            if not 0 <= v <= 1:
                raise ValueError("accuracy outside [0, 1]")
        for run in self.detection:
            ts = [p.time_s for p in run.series]
            if ts != sorted(ts) or any(not 0 <= p.rate <= 1 for p in run.series):
                raise ValueError("detection series must be time-ordered rates")
        if self.impact is not None:
            ts = [p.time_s for p in self.impact.series]
            if ts != sorted(ts):
                raise ValueError("impact series must be time-ordered")

    def accuracy_table(self) -> str:
        lines = ["classifier  accuracy"]
        for k, v in self.accuracy.items():
            lines.append(f"{k:<10}  {100 * v:.2f}%")
        return "\n".join(lines)

    def sensitivity_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = sorted({f for row in self.sensitivity.values() for f in row if f != "__full__"})
        w.writerow(["feature"] + list(self.sensitivity))
        w.writerow(["(all)"] + [f"{row['__full__']:.4f}" for row in self.sensitivity.values()])
        for f in names:
            w.writerow([f] + [f"{row[f]:.4f}" for row in self.sensitivity.values()])
        return buf.getvalue()

    def confusion_text(self) -> str:
        out = []
        for k, m in self.confusion.items():
            out.append(f"{k} (rows: true, columns: predicted; order {', '.join(CLASSES)})")
            out += ["  " + " ".join(f"{v:4d}" for v in row) for row in m]
        return "\n".join(out)


def evaluate_classifiers(cfg: ExperimentConfig, ds: Dataset, with_sensitivity: bool = True,
                         which: Sequence[str] = ("CT", "NB", "RF", "Boost")) -> MetricsReport:
    tr = trainers(cfg)
    rep = MetricsReport()
    for k in which:
        r = cross_validate(tr[k], ds, cfg.folds, cfg.cv_seed)
        rep.accuracy[k] = r.accuracy
        rep.confusion[k] = r.confusion
    if with_sensitivity:
        rep.sensitivity = sensitivity_analysis(ds, {"CT": tr["CT"], "NB": tr["NB"]}, cfg.folds, cfg.cv_seed)
    return rep


# -- detection-rate experiment (incident at several onset times) -------------------------


@dataclass
class DetectionPoint:
    time_s: float
    on_segment: int
    confirmed: int
    mean_tt_s: float | None

    @property
    def rate(self) -> float:
        return self.confirmed / self.on_segment if self.on_segment else 0.0


@dataclass
class DetectionRun:
    onset_s: float
    congestion_onset_s: float | None
    first_confirmation_s: float | None
    series: list[DetectionPoint]
    trace: TraceSet | None = None

    def rate_within(self, window_s: float) -> float:
        """Rate at the last report no later than ``window_s`` after congestion onset."""
        if self.congestion_onset_s is None:
            return 0.0
        end = self.congestion_onset_s + window_s
        rates = [p.rate for p in self.series if self.congestion_onset_s <= p.time_s <= end + 1e-9]
        return rates[-1] if rates else 0.0

    def monotone_after_confirmation(self) -> bool:
        if self.first_confirmation_s is None:
            return False
        r = [p.rate for p in self.series if p.time_s >= self.first_confirmation_s]
        return all(b >= a - 1e-12 for a, b in zip(r, r[1:]))

    @property
    def detected(self) -> bool:
        return self.first_confirmation_s is not None


class _Reporter:
    def __init__(self, every_s: float, fn: Callable):
        self.every = every_s
        self.fn = fn
        self.next_t = 0.0

    def __call__(self, layer, world) -> None:
        if world.t + 1e-9 >= self.next_t:
            self.fn(layer, world)
            self.next_t += self.every


def run_detection_experiment(
    cfg: ExperimentConfig,
    classifier,
    net: RoadNetwork | None = None,
) -> list[DetectionRun]:
    """One incident run per onset time on the same segment.

    The detection rate at a report time is the share of vehicles on the
    segment that hold a confirmed stored event. Congestion onset is the start
    of the first excessive evaluation interval at or after the incident
    start. Series cover the incident plus ``after_s``.
    """
    net = net or resolve_network(cfg)
    d = cfg.detection
    seg = net.segment(d.segment)
    runs = []
    for onset in d.onsets_s:
        horizon = onset + d.duration_s + d.after_s
        ev = ScenarioEvent(INCIDENT, seg.id, onset, d.duration_s, lanes=d.lanes, position=0.5 * seg.length,
                           n_blockers=d.n_blockers, pass_speed=d.pass_speed)
        sim = SimConfig(dt=cfg.dt, horizon=horizon, seed=cfg.run_seed(d.seed), demand_per_source_per_hour=cfg.demand_per_source_per_hour,
                        events=[ev])
        layer = VanetLayer(net, _as_classifier(classifier), cfg.protocol(d.eval_interval_s))
        series: list[DetectionPoint] = []
        exits: list[float] = []

        class _Exits:
            def on_start(self, w): pass
            def on_tick(self, w): pass
            def on_end(self, w): pass
            def on_segment_exit(self, w, slot, entry):
                if entry.segment_id == seg.id:
                    exits.append(entry.travel_time)

        def report(layer, world):
            a, n = layer.aware_confirmed(world, seg.id)
            tt = float(np.mean(exits)) if exits else None
            exits.clear()
            series.append(DetectionPoint(float(world.t), n, a, tt))

        layer.on_protocol.append(_Reporter(d.report_interval_s, report))
        trace = run_scenario(net, sim, [layer, _Exits()])
        flags = layer.interval_flags[seg.id]
        tc = None
        for k, f in enumerate(flags):
            start = k * d.eval_interval_s
            if f and start + d.eval_interval_s > onset:
                tc = max(start, onset)
                break
        conf = [t for t, s, _ in layer.confirmations if s == seg.id and t >= onset]
        series = [p for p in series if onset - d.eval_interval_s <= p.time_s <= onset + d.duration_s]
        runs.append(DetectionRun(onset, tc, conf[0] if conf else None, series, trace))
    return runs


def detection_csv(runs: Sequence[DetectionRun]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["onset_s", "time_s", "since_congestion_s", "on_segment", "confirmed", "rate", "mean_tt_s"])
    for r in runs:
        for p in r.series:
            since = "" if r.congestion_onset_s is None else f"{p.time_s - r.congestion_onset_s:.1f}"
            tt = "" if p.mean_tt_s is None else f"{p.mean_tt_s:.2f}"
            w.writerow([f"{r.onset_s:.1f}", f"{p.time_s:.1f}", since, p.on_segment, p.confirmed, f"{p.rate:.4f}", tt])
    return buf.getvalue()


# -- impact-region experiment (special event) ------------------------------------------------


@dataclass
class ImpactPoint:
    time_s: float
    inside_n: int
    inside_hit: int
    overall_n: int
    overall_hit: int
    region_size: int

    @property
    def inside_rate(self) -> float:
        return self.inside_hit / self.inside_n if self.inside_n else 0.0

    @property
    def overall_rate(self) -> float:
        return self.overall_hit / self.overall_n if self.overall_n else 0.0


@dataclass
class ImpactRun:
    venue: str
    series: list[ImpactPoint]
    region_history: list[tuple[float, str]]
    stored: set[str]
    first_order: set[str]
    event_end_s: float
    trace: TraceSet | None = None

    @property
    def second_order_stored(self) -> set[str]:
        return self.stored - self.first_order - {self.venue}

    @property
    def propagation_time(self) -> float | None:
        return self.region_history[0][0] if self.region_history else None

    def shape(self, min_change: float = 0.05, plateau_band: float = 0.1) -> dict[str, float | bool | None]:
        """Dip before propagation, rise after it, then a plateau while the event lasts.

        dip: the pre-propagation peak falls by at least ``min_change``.
        rise: after propagation the rate climbs at least ``min_change`` above the dip.
        plateau: over the second half of [propagation, event end] the rate
        stays within ``plateau_band`` and above the dip by ``min_change``.
        """
        s = [p for p in self.series if p.overall_n > 0]
        t_rp = self.propagation_time
        out: dict[str, float | bool | None] = {"propagation_s": t_rp}
        before = [p for p in s if t_rp is not None and p.time_s < t_rp]
        after = [p for p in s if t_rp is not None and t_rp <= p.time_s <= self.event_end_s]
        if not before or not after:
            out.update(dip=False, rise=False, plateau=False)
            return out
        k = int(np.argmax([p.overall_rate for p in before]))
        peak = before[k].overall_rate
        low = min(p.overall_rate for p in before[k:] + after[:1])
        high = max(p.overall_rate for p in after)
        mid = 0.5 * (t_rp + self.event_end_s)
        tail = [p.overall_rate for p in after if p.time_s >= mid]
        out.update(
            peak_before=peak,
            dip_rate=low,
            rise_rate=high,
            plateau_rate=float(np.mean(tail)) if tail else None,
            plateau_range=float(max(tail) - min(tail)) if tail else None,
            dip=peak - low >= min_change,
            rise=high - low >= min_change,
            plateau=bool(tail) and max(tail) - min(tail) <= plateau_band and min(tail) >= low + min_change,
        )
        return out


def upstream_area(net: RoadNetwork, segment_id: str, hops: int) -> set[str]:
    area = {segment_id}
    frontier = {segment_id}
    for _ in range(hops):
        frontier = {a for s in frontier for a in adjacent_segments(net, s, "upstream")} - area
        area |= frontier
    return area


def run_impact_region_experiment(cfg: ExperimentConfig, classifier, net: RoadNetwork | None = None) -> ImpactRun:
    """Special event at a one-segment impact region.

    The population is every triggered vehicle (time on its current segment
    above the excessive threshold) on the venue or on a segment within
    ``population_hops`` upstream hops of it. A vehicle detects the event when
    its current assessment is SpecialEvent.
    """
    net = net or resolve_network(cfg)
    d = cfg.impact
    ev = ScenarioEvent(SPECIAL_EVENT, d.venue, d.start_s, d.duration_s, rate=d.rate_per_hour / 3600.0)
    sim = SimConfig(dt=cfg.dt, horizon=d.horizon_s, seed=cfg.run_seed(d.seed), demand_per_source_per_hour=cfg.demand_per_source_per_hour,
                    events=[ev])
    layer = VanetLayer(net, _as_classifier(classifier), cfg.protocol(d.eval_interval_s), region_seed=[d.venue])
    area = upstream_area(net, d.venue, d.population_hops)
    series: list[ImpactPoint] = []

    def report(layer, world):
        idx = world.vehicle_slots()
        ins_n = ins_h = all_n = all_h = 0
        for s in idx:
            vid = int(world.vid[s])
            ep = layer.episodes.get(vid)
            if ep is None or not ep.triggered:
                continue
            sid = world.seg_ids[world.seg[s]]
            if sid not in area:
                continue
            hit = layer.assessment(vid, sid) == "SpecialEvent"
            all_n += 1
            all_h += hit
            if sid in layer.region:
                ins_n += 1
                ins_h += hit
        series.append(ImpactPoint(float(world.t), ins_n, ins_h, all_n, all_h, len(layer.region)))

    layer.on_protocol.append(_Reporter(d.report_interval_s, report))
    trace = run_scenario(net, sim, [layer])
    stored = set()
    for (origin, cause), segs in layer.stored_ever.items():
        if origin == d.venue:
            stored |= segs
    first = set(adjacent_segments(net, d.venue, layer.config.rp_direction))
    return ImpactRun(d.venue, series, list(layer.region_history), stored, first, ev.end, trace)


def impact_csv(run: ImpactRun) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s", "inside_n", "inside_rate", "overall_n", "overall_rate", "region_size"])
    for p in run.series:
        w.writerow([f"{p.time_s:.1f}", p.inside_n, f"{p.inside_rate:.4f}", p.overall_n, f"{p.overall_rate:.4f}",
                    p.region_size])
    return buf.getvalue()


# -- false-positive guard -------------------------------------------------------------------


@dataclass
class FalsePositiveResult:
    fraction: float
    confirmed_intervals: int
    total_intervals: int
    per_seed: list[float]


def run_false_positive_guard(cfg: ExperimentConfig, classifier, net: RoadNetwork | None = None) -> FalsePositiveResult:
    """Share of segment-intervals holding a confirmed NRC across event-free runs."""
    net = net or resolve_network(cfg)
    hit = total = 0
    per = []
    for seed in cfg.fp_seeds:
        sim = SimConfig(dt=cfg.dt, horizon=cfg.fp_horizon_s, seed=cfg.run_seed(seed),
                        demand_per_source_per_hour=cfg.demand_per_source_per_hour)
        layer = VanetLayer(net, _as_classifier(classifier), cfg.protocol())
        run_scenario(net, sim, [layer])
        h = sum(sum(f) for f in layer.interval_confirmed.values())
        n = sum(len(f) for f in layer.interval_confirmed.values())
        hit += h
        total += n
        per.append(h / n if n else 0.0)
    return FalsePositiveResult(hit / total if total else 0.0, hit, total, per)


def _as_classifier(c):
    if c is None or callable(c) and not hasattr(c, "predict_row"):
        return c
    return model_classifier(c)
