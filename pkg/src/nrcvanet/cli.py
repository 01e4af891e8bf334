"""Command-line entry point: ``nrcvanet <command> [options]``.

Every command is a pure function of (config, seed). Failures other than
usage errors exit with status 1 and print ``{"error": <category>, "message": ...}``
on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .classifiers import save_model
from .classifiers.serialization import ModelFormatError
from .features import CLASSES
from .road_network import NetworkError, generate_grid_network, save_network, with_profiles

OUT_ENV = "NRCVANET_OUT"
MODEL_KINDS = ("ct", "nb", "rf", "boost")
_TRAINER_KEY = {"ct": "CT", "nb": "NB", "rf": "RF", "boost": "Boost"}


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the command from being reset by the subparser
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON config file, or the name of a shipped config (e.g. 'fixture')")
    common.add_argument("--seed", type=int, help="master seed (shifts every run seed, subsampling and CV folds)")
    common.add_argument("--out", help=f"output directory (default: config output_dir, or ${OUT_ENV})")

    p = argparse.ArgumentParser(prog="nrcvanet", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", metavar="command", required=True)

    g = sub.add_parser("gen-network", parents=[common], help="write the synthetic grid network")
    g.add_argument("--calibrate", action="store_true", help="fit historical travel times from baseline runs")

    d = sub.add_parser("gen-dataset", parents=[common], help="run the scenario matrix and write the labeled dataset")
    d.add_argument("--allow-shortfall", action="store_true", help="keep fewer rows than requested instead of failing")

    t = sub.add_parser("train", parents=[common], help="train one classifier on the dataset")
    t.add_argument("--model", choices=MODEL_KINDS, default="nb")
    t.add_argument("--dataset", help="dataset CSV (default: config dataset)")

    e = sub.add_parser("evaluate", parents=[common], help="10-fold CV accuracies, confusion matrices, sensitivity")
    e.add_argument("--dataset", help="dataset CSV (default: config dataset)")
    e.add_argument("--no-sensitivity", action="store_true")

    for name, text in (("detect", "incident detection-rate experiment"), ("impact", "special-event impact-region experiment")):
        x = sub.add_parser(name, parents=[common], help=text)
        x.add_argument("--model-file", help="on-board model JSON (default: config model)")

    r = sub.add_parser("report", parents=[common], help="evaluate + detect + impact + false-positive guard")
    r.add_argument("--model-file", help="on-board model JSON (default: config model)")
    return p


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.cv_seed = args.seed
        cfg.rf_seed = args.seed
    if getattr(args, "dataset", None):
        cfg.dataset = args.dataset
    if getattr(args, "model_file", None):
        cfg.model = args.model_file
    return cfg


def _out_dir(args, cfg) -> Path:
    out = Path(getattr(args, "out", None) or os.environ.get(OUT_ENV) or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_gen_network(args, cfg, out: Path) -> dict:
    net = generate_grid_network()
    if args.calibrate:
        profiles = harness.calibrate_profiles(
            net, cfg.calibration_seeds, cfg.calibration_horizon_s, cfg.demand_per_source_per_hour, cfg.dt)
        net = with_profiles(net, profiles)
    save_network(net, out / "network.json", out / "network_profiles.txt")
    return {"network": str(out / "network.json"), "segments": len(net.segments)}


def cmd_gen_dataset(args, cfg, out: Path) -> dict:
    res = harness.generate_dataset(cfg, allow_shortfall=args.allow_shortfall, progress=_say)
    harness.write_dataset(res, out / "dataset.csv", out / "dataset_provenance.csv")
    counts = {c: sum(r.label == c for r in res.rows) for c in CLASSES}
    return {"dataset": str(out / "dataset.csv"), "rows": len(res.rows), "per_class": counts, "available": res.available}


def cmd_train(args, cfg, out: Path) -> dict:
    ds = harness.resolve_dataset(cfg)
    model = harness.trainers(cfg)[_TRAINER_KEY[args.model]](ds)
    path = out / f"model_{args.model}.json"
    save_model(model, path)
    return {"model": str(path), "rows": len(ds.y)}


def _write_eval(rep: harness.MetricsReport, out: Path) -> None:
    with open(out / "accuracy.csv", "w") as fh:
        fh.write("classifier,accuracy\n")
        for k, v in rep.accuracy.items():
            fh.write(f"{k},{v:.4f}\n")
    (out / "accuracy.txt").write_text(rep.accuracy_table() + "\n\n" + rep.confusion_text() + "\n")
    if rep.sensitivity:
        (out / "sensitivity.csv").write_text(rep.sensitivity_csv())


def cmd_evaluate(args, cfg, out: Path) -> dict:
    ds = harness.resolve_dataset(cfg)
    rep = harness.evaluate_classifiers(cfg, ds, with_sensitivity=not args.no_sensitivity)
    rep.validate()
    _write_eval(rep, out)
    print(rep.accuracy_table())
    return {"accuracy": {k: round(v, 4) for k, v in rep.accuracy.items()}}


def _detect_summary(runs) -> dict:
    return {
        f"{r.onset_s:g}": {
            "congestion_onset_s": r.congestion_onset_s,
            "first_confirmation_s": r.first_confirmation_s,
            "rate_within_15min": round(r.rate_within(900.0), 4),
        }
        for r in runs
    }


def cmd_detect(args, cfg, out: Path) -> dict:
    runs = harness.run_detection_experiment(cfg, harness.resolve_model(cfg))
    (out / "detection.csv").write_text(harness.detection_csv(runs))
    return {"detection": _detect_summary(runs)}


def _impact_summary(run) -> dict:
    shape = run.shape()
    return {
        "propagated_to": sorted({s for _, s in run.region_history}),
        "second_order_stored": sorted(run.second_order_stored),
        **{k: (round(v, 4) if isinstance(v, float) else v) for k, v in shape.items()},
    }


def cmd_impact(args, cfg, out: Path) -> dict:
    run = harness.run_impact_region_experiment(cfg, harness.resolve_model(cfg))
    (out / "impact.csv").write_text(harness.impact_csv(run))
    return {"impact": _impact_summary(run)}


def cmd_report(args, cfg, out: Path) -> dict:
    ds = harness.resolve_dataset(cfg)
    model = harness.resolve_model(cfg)
    rep = harness.evaluate_classifiers(cfg, ds)
    rep.detection = harness.run_detection_experiment(cfg, model)
    rep.impact = harness.run_impact_region_experiment(cfg, model)
    fp = harness.run_false_positive_guard(cfg, model)
    rep.fp_fraction = fp.fraction
    rep.validate()
    _write_eval(rep, out)
    (out / "detection.csv").write_text(harness.detection_csv(rep.detection))
    (out / "impact.csv").write_text(harness.impact_csv(rep.impact))
    summary = {
        "accuracy": {k: round(v, 4) for k, v in rep.accuracy.items()},
        "detection": _detect_summary(rep.detection),
        "impact": _impact_summary(rep.impact),
        "false_positive_fraction": fp.fraction,
    }
    (out / "report.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(rep.accuracy_table())
    return summary


COMMANDS = {
    "gen-network": cmd_gen_network,
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "detect": cmd_detect,
    "impact": cmd_impact,
    "report": cmd_report,
}


def _category(e: Exception) -> str:
    if isinstance(e, harness.ShortfallError):
        return "shortfall"
    if isinstance(e, harness.ConfigError):
        return "config"
    if isinstance(e, ModelFormatError):
        return "model"
    if isinstance(e, (FileNotFoundError, NetworkError)):
        return "input"
    if isinstance(e, (ValueError, KeyError)):
        return "input"
    return "internal"


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        out = _out_dir(args, cfg)
        result = COMMANDS[args.command](args, cfg, out)
    except Exception as e:  # reported as a machine-readable category
        print(json.dumps({"error": _category(e), "message": str(e)}), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=_jsonable))
    return 0


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not serializable: {type(x).__name__}")


if __name__ == "__main__":
    sys.exit(main())
