import functools
import json

import pytest

from nrcvanet import harness
from nrcvanet.features import CLASSES, parse_dataset_rows
from nrcvanet.road_network import adjacent_segments
from nrcvanet.traffic_sim import INCIDENT, SPECIAL_EVENT, WEATHER, CarFollowParams, ScenarioEvent, run_scenario
from nrcvanet.vanet import VanetLayer


@functools.lru_cache(maxsize=1)
def _net():
    return harness.resolve_network(harness.ExperimentConfig())


def _small_cfg(**kw):
    d = {"scenarios": [{"kind": "baseline", "seed": 1, "horizon_s": 900.0}], "target_rows": 5,
         "class_shares": {"Recurrent": 1.0}}
    d.update(kw)
    return harness.config_from_dict(d)


def test_config_rejects_unknown_keys_and_bad_values(tmp_path):
    with pytest.raises(harness.ConfigError):
        harness.config_from_dict({"folds": 10, "bogus": 1})
    with pytest.raises(harness.ConfigError):
        harness.config_from_dict({"scenarios": [{"kind": "incident", "speed": 3}]})
    with pytest.raises(harness.ConfigError):
        harness.config_from_dict({"folds": 1})
    with pytest.raises(harness.ConfigError):
        harness.config_from_dict({"scenarios": [{"kind": "weather"}]})
    with pytest.raises(harness.ConfigError):
        harness.load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{oops")
    with pytest.raises(harness.ConfigError, match="line 1"):
        harness.load_config(tmp_path / "bad.json")


def test_shipped_fixture_config_round_trips():
    cfg = harness.load_config("fixture")
    assert harness.config_from_dict(json.loads(json.dumps(harness.config_to_dict(cfg)))) == cfg
    assert cfg == harness.config_from_dict({})


def test_unknown_scenario_segment_is_rejected():
    spec = harness.ScenarioSpec(INCIDENT, segment="nowhere")
    with pytest.raises(KeyError):
        spec.validate(_net())
    with pytest.raises(harness.ConfigError):
        harness.ScenarioSpec("tornado").validate(_net())


def test_class_targets_split_by_largest_remainder():
    assert harness.class_targets(591) == {"Recurrent": 119, "Incident": 118, "Workzone": 118, "Weather": 118,
                                          "SpecialEvent": 118}
    t = harness.class_targets(10, {"Recurrent": 2, "Incident": 1})
    assert t["Recurrent"] == 7 and t["Incident"] == 3 and sum(t.values()) == 10
    with pytest.raises(harness.ConfigError):
        harness.class_targets(10, {"Fog": 1})


def test_master_seed_shifts_every_run():
    cfg = harness.ExperimentConfig(seed=2)
    spec = harness.ScenarioSpec("baseline", seed=5)
    assert cfg.sim_config(spec, _net()).seed == 2005


def test_oracle_windows():
    net = _net()
    inc = ScenarioEvent(INCIDENT, "a_g10_g11", 100.0, 200.0)
    o = harness.GroundTruthOracle(net, [inc], linger_s=600.0)
    up = adjacent_segments(net, "a_g10_g11", "upstream")[0]
    assert o.label("a_g10_g11", 150.0) == "Incident"
    assert o.label(up, 150.0) == "Incident"
    assert o.label("a_g22_g21", 150.0) is None
    assert o.label("a_g10_g11", 900.0) == "Incident"
    assert o.label("a_g10_g11", 901.0) is None
    assert o.label("a_g10_g11", 99.0) is None
    w = harness.GroundTruthOracle(net, [ScenarioEvent(WEATHER, "", 0.0, 100.0, weather=CarFollowParams(min_gap=5.0))])
    assert w.label("a_g22_g21", 50.0) == "Weather"
    se = harness.GroundTruthOracle(net, [ScenarioEvent(SPECIAL_EVENT, "a_g11_g12", 0.0, 100.0, rate=0.1)])
    assert se.label("a_g11_g12", 50.0) == "SpecialEvent"
    assert se.label("a_g10_g11", 50.0) is None


def test_baseline_only_config_yields_recurrent_rows_with_normal_current_tt():
    res = harness.generate_dataset(_small_cfg())
    assert len(res.rows) == 5
    assert {r.label for r in res.rows} == {"Recurrent"}
    assert all(r.features.current_tt == "normal" for r in res.rows)


def test_dataset_and_provenance_agree(tmp_path):
    res = harness.generate_dataset(_small_cfg())
    harness.write_dataset(res, tmp_path / "d.csv", tmp_path / "p.csv")
    rows = parse_dataset_rows((tmp_path / "d.csv").read_text())
    prov = (tmp_path / "p.csv").read_text().splitlines()
    assert prov[0].split(",") == harness.PROVENANCE_COLUMNS
    assert len(prov) - 1 == len(rows)
    assert [p.split(",")[-1] for p in prov[1:]] == [lab for _, lab in rows]


def test_dataset_generation_is_deterministic():
    a = harness.generate_dataset(_small_cfg())
    b = harness.generate_dataset(_small_cfg())
    assert a.csv_text() == b.csv_text()
    assert a.provenance_text() == b.provenance_text()


def test_shortfall_is_reported_or_tolerated():
    cfg = _small_cfg(class_shares={"Recurrent": 1.0, "Incident": 1.0}, target_rows=6)
    with pytest.raises(harness.ShortfallError) as e:
        harness.generate_dataset(cfg)
    assert e.value.counts["Incident"] == 0
    res = harness.generate_dataset(cfg, allow_shortfall=True)
    assert {r.label for r in res.rows} == {"Recurrent"} and len(res.rows) == 3


def test_shipped_dataset_is_balanced_and_matches_provenance():
    rows = parse_dataset_rows(harness.data_path("dataset591.csv").read_text())
    assert len(rows) == 591
    counts = {c: sum(lab == c for _, lab in rows) for c in CLASSES}
    assert counts == harness.class_targets(591)
    prov = harness.data_path("dataset591_provenance.csv").read_text().splitlines()[1:]
    assert [p.split(",")[-1] for p in prov] == [lab for _, lab in rows]
    # every recurrent row is below the excessive threshold, every other row above it
    for fv, lab in rows:
        assert (fv.current_tt == "normal") == (lab == "Recurrent")


def test_metrics_report_validation():
    rep = harness.MetricsReport(accuracy={"CT": 1.2})
    with pytest.raises(ValueError):
        rep.validate()
    pts = [harness.DetectionPoint(10.0, 2, 1, None), harness.DetectionPoint(5.0, 2, 2, None)]
    rep = harness.MetricsReport(detection=[harness.DetectionRun(0.0, 0.0, 5.0, pts)])
    with pytest.raises(ValueError):
        rep.validate()


def _detection_run(rates, tc=0.0, conf=60.0):
    pts = [harness.DetectionPoint(60.0 * i, 10, int(round(10 * r)), None) for i, r in enumerate(rates)]
    return harness.DetectionRun(0.0, tc, conf, pts)


def test_detection_run_summaries():
    run = _detection_run([0.0, 0.2, 0.5, 0.9, 1.0])
    assert run.rate_within(120.0) == pytest.approx(0.5)
    assert run.monotone_after_confirmation()
    assert not _detection_run([0.0, 0.5, 0.3]).monotone_after_confirmation()
    assert not harness.DetectionRun(0.0, None, None, []).detected
    assert harness.DetectionPoint(0.0, 0, 0, None).rate == 0.0


def _impact(rates, t_rp, end, inside=None):
    inside = inside or rates
    pts = [harness.ImpactPoint(60.0 * i, 10, int(round(10 * a)), 10, int(round(10 * r)), 1)
           for i, (a, r) in enumerate(zip(inside, rates))]
    hist = [(t_rp, "x")] if t_rp is not None else []
    return harness.ImpactRun("v", pts, hist, set(), set(), end)


def test_impact_shape_detects_dip_rise_plateau():
    rates = [0.2, 0.8, 0.6, 0.3, 0.2, 0.4, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6]
    s = _impact(rates, t_rp=240.0, end=660.0).shape()
    assert s["dip"] and s["rise"] and s["plateau"]
    assert s["dip_rate"] == pytest.approx(0.2)


def test_impact_shape_rejects_monotone_decay_and_missing_propagation():
    decay = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0]
    s = _impact(decay, t_rp=240.0, end=540.0).shape()
    assert not s["rise"]
    assert not _impact(decay, t_rp=None, end=540.0).shape()["dip"]


def test_upstream_area_grows_by_hops():
    net = _net()
    one = harness.upstream_area(net, "a_g11_g12", 1)
    two = harness.upstream_area(net, "a_g11_g12", 2)
    assert one == {"a_g11_g12", *adjacent_segments(net, "a_g11_g12", "upstream")}
    assert one < two


@pytest.mark.parametrize("kind", ["incident", "weather"])
def test_protocol_stays_within_one_hop_and_respects_the_hold(kind):
    cfg = harness.ExperimentConfig()
    net = _net()
    spec = next(s for s in harness.default_scenarios() if s.kind == kind)
    sim = cfg.sim_config(spec, net)
    oracle = harness.GroundTruthOracle(net, sim.events)
    layer = VanetLayer(net, oracle, cfg.protocol())
    oracle.layer = layer
    run_scenario(net, sim, [layer])
    for (origin, _), segs in layer.stored_ever.items():
        assert segs <= {origin, *layer.adjacent[origin]}
    first_rq = {}
    for t, typ, _, seg, cause, _ in layer.messages:
        if typ == "RQ":
            first_rq.setdefault(seg, t)
    rps = [m for m in layer.messages if m[1] == "RP"]
    if kind == "incident":
        assert rps
    confirmed_at = {}
    for t, sid, _ in layer.confirmations:
        confirmed_at.setdefault(sid, t)
    for t, _, _, target, cause, hop in rps:
        assert hop == 1
        origins = [o for o in first_rq if target in layer.adjacent[o]]
        assert origins
        if cause in ("Weather", "SpecialEvent"):
            assert any(t - first_rq[o] >= cfg.protocol().hold_s for o in origins)
        # persistence is never bypassed
        assert any(o in confirmed_at and confirmed_at[o] <= t for o in origins)
