"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``PASS``/``FAIL criterion N: ...`` line before asserting,
so ``pytest -v`` output doubles as the acceptance report.
"""

import functools
import time

import numpy as np
import pytest

import oracles
from nrcvanet import harness
from nrcvanet.classifiers import predict_nb, sensitivity_analysis, train_adaboost_m1, train_c45, train_nb
from nrcvanet.traffic_sim import run_scenario

SMALL = [p for p in oracles.corpus_files() if len(oracles.read_rows(p)[1]) <= 20]


def _report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")


@functools.lru_cache(maxsize=1)
def _cfg():
    return harness.load_config("fixture")


@functools.lru_cache(maxsize=1)
def _dataset():
    return harness.resolve_dataset(_cfg())


@functools.lru_cache(maxsize=1)
def _model():
    return harness.resolve_model(_cfg())


def test_criterion_1_classifier_oracle_equivalence(capsys):
    bad = []
    for path in SMALL:
        rows, labels = oracles.read_rows(path)
        ds = oracles.load_corpus_dataset(path)
        nb = train_nb(ds)
        for q in rows:
            _, post = predict_nb(nb, q)
            ref = oracles.nb_posterior(rows, labels, q)
            if max(abs(post[c] - ref[c]) for c in oracles.CLASSES) > 1e-9:
                bad.append(f"{path.stem}: NB posterior")
                break
        if train_c45(ds, prune_cf=None).root_feature() != oracles.root_feature(rows, labels):
            bad.append(f"{path.stem}: C4.5 root")
        boost = train_adaboost_m1(ds, T=10)
        preds = [[ds.classes[i] for i in r.model.predict(ds.X)] for r in boost.rounds]
        ref = oracles.adaboost_trace(preds, labels)
        if len(ref) != len(boost.rounds) or any(
                abs(r.error - e) > 1e-12 or abs(r.alpha - a) > 1e-12 or not np.allclose(r.weights, w, atol=1e-12, rtol=0)
                for r, (w, e, a) in zip(boost.rounds, ref)):
            bad.append(f"{path.stem}: AdaBoost trace")
    ok = len(SMALL) >= 5 and not bad
    _report(capsys, 1, ok, f"{len(SMALL)} corpus datasets checked, mismatches: {bad or 'none'}")
    assert ok


@functools.lru_cache(maxsize=1)
def _accuracy():
    t = time.perf_counter()
    rep = harness.evaluate_classifiers(_cfg(), _dataset(), with_sensitivity=False)
    return rep, time.perf_counter() - t


def test_criterion_2_accuracy_band(capsys):
    rep, secs = _accuracy()
    acc = rep.accuracy
    ok = (all(v >= 0.70 for v in acc.values()) and acc["RF"] >= acc["CT"] - 0.02
          and acc["Boost"] >= acc["CT"] - 0.02 and secs < 300)
    detail = ", ".join(f"{k} {100 * v:.2f}%" for k, v in acc.items())
    _report(capsys, 2, ok, f"{detail} ({secs:.0f} s)")
    assert ok


def _tree_structure(model):
    attrs = {a.name: (i, a) for i, a in enumerate(model.attributes)}
    ci, cur = attrs["current_tt"]
    pi, pspot = attrs["pspot"]
    classes = model.classes
    root = model.root
    if root.is_leaf or root.attr != ci:
        return False, False, "root is not current_tt"
    normal = root.children[cur.values.index("normal")]
    rec = classes.index("Recurrent")
    normal_ok = normal.is_leaf and normal.label == rec and normal.dist.sum() == normal.dist[rec]
    exc = root.children[cur.values.index("excessive")]
    allowed = {classes.index("Incident"), classes.index("Workzone")}
    present = [pspot.values.index("short"), pspot.values.index("long")]

    def pspot_nodes(n):
        if n.is_leaf:
            return []
        here = [n] if n.attr == pi else []
        return here + [m for c in n.children for m in pspot_nodes(c)]

    splits = pspot_nodes(exc)
    supported = strict = bool(splits)
    for n in splits:
        for b in present:
            for lf in n.children[b].leaves():
                if lf.label not in allowed:
                    strict = False
                    if lf.weight > 0:
                        supported = False
    return normal_ok, (supported, strict, len(splits)), None


def test_criterion_3_tree_structure(capsys):
    model = train_c45(_dataset(), min_leaf=_cfg().min_leaf, prune_cf=_cfg().prune_cf)
    normal_ok, pspot, err = _tree_structure(model)
    if err:
        _report(capsys, 3, False, err)
        pytest.fail(err)
    supported, strict, n_splits = pspot
    ok = normal_ok and supported
    _report(capsys, 3, ok, f"root current_tt, normal branch pure Recurrent leaf: {normal_ok}; "
                           f"{n_splits} pspot split(s) under excessive, pspot-present leaves with cases all "
                           f"Incident/Workzone: {supported} (counting empty leaves too: {strict})")
    assert ok


def test_criterion_4_stored_event_matters_most(capsys):
    cfg = _cfg()
    tr = harness.trainers(cfg)
    sens = sensitivity_analysis(_dataset(), {"CT": tr["CT"], "NB": tr["NB"]}, cfg.folds, cfg.cv_seed)
    worst = {}
    for k, row in sens.items():
        drops = {f: d for f, d in row.items() if f != "__full__"}
        worst[k] = min(drops, key=drops.get)
    ok = all(f == "stored_event" for f in worst.values())
    detail = "; ".join(f"{k}: largest drop {worst[k]} ({100 * sens[k][worst[k]]:+.2f} pp)" for k in sens)
    _report(capsys, 4, ok, detail)
    assert ok


def test_criterion_5_incident_detection(capsys):
    cfg = _cfg()
    runs = harness.run_detection_experiment(cfg, _model())
    window = cfg.detection.window_s
    rates = [r.rate_within(window) for r in runs]
    ok = (len(runs) == 4 and len({r.onset_s for r in runs}) == 4 and all(r.detected for r in runs)
          and all(x >= 0.8 for x in rates) and all(r.monotone_after_confirmation() for r in runs))
    detail = ", ".join(f"onset {r.onset_s:g}s: {100 * x:.0f}% in 15 min, monotone {r.monotone_after_confirmation()}"
                       for r, x in zip(runs, rates))
    _report(capsys, 5, ok, detail)
    assert ok
    for r in runs:
        assert r.trace.conservation_ok and r.trace.min_gap >= 0


def test_criterion_6_impact_region(capsys):
    run = harness.run_impact_region_experiment(_cfg(), _model())
    s = run.shape()
    ok = bool(s["dip"] and s["rise"] and s["plateau"]) and not run.second_order_stored
    detail = (f"dip {s.get('peak_before', 0):.2f}->{s.get('dip_rate', 0):.2f}, rise to {s.get('rise_rate', 0):.2f}, "
              f"plateau {s.get('plateau_rate') or 0:.2f} (range {s.get('plateau_range') or 0:.2f}); "
              f"second-order stores: {sorted(run.second_order_stored) or 'none'}")
    _report(capsys, 6, ok, detail)
    assert ok
    assert run.trace.conservation_ok and run.trace.min_gap >= 0


def test_criterion_7_false_positive_guard(capsys):
    cfg = _cfg()
    res = harness.run_false_positive_guard(cfg, _model())
    ok = len(cfg.fp_seeds) >= 10 and res.fraction < 0.05
    _report(capsys, 7, ok, f"{res.confirmed_intervals}/{res.total_intervals} confirmed segment-intervals "
                           f"({100 * res.fraction:.2f}%) over {len(cfg.fp_seeds)} baseline seeds")
    assert ok


def test_criterion_8_simulator_invariants(capsys):
    cfg = _cfg()
    net = harness.resolve_network(cfg)
    problems = []
    for spec in cfg.scenarios:
        sim = cfg.sim_config(spec, net)
        a = run_scenario(net, sim)
        b = run_scenario(net, sim)
        if a.min_gap < 0:
            problems.append(f"{spec.name}: negative gap")
        if not (a.conservation_ok and b.conservation_ok):
            problems.append(f"{spec.name}: conservation")
        if a.digest != b.digest:
            problems.append(f"{spec.name}: digest")
    ok = not problems
    _report(capsys, 8, ok, f"{len(cfg.scenarios)} shipped scenarios run twice, problems: {problems or 'none'}")
    assert ok
