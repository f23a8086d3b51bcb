"""Command-line entry point: ``abide {simulate,estimate,benchmark,truths}``.

Settings resolve as command-line flag, then ``--config`` JSON file, then
built-in default (``ABIDE_SEED`` sits just above the default for the seed).
Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from abide import __version__, dgp, reference
from abide.balancing import ABConfig
from abide.data import read_csv, write_csv
from abide.errors import AbideError, NumericalError, ValidationError
from abide.estimators import (
    DISPLAY_NAMES,
    EstimatorSettings,
    estimands,
    resolve_estimators,
    run_estimator,
)
from abide.montecarlo import BenchmarkConfig, format_table, run_benchmark

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

DEFAULTS = {
    "simulate": {"n": 10_000, "scenario": "true", "seed": 0, "out": "abide_out",
                 "assignment": "binomial"},
    "estimate": {"data": None, "estimand": "both", "estimators": None, "clip": "preset",
                 "ab_rounds": 50, "ab_eta": 0.5, "seed": 0, "out": "abide_out",
                 "preset": "consistent"},
    "benchmark": {"n": 10_000, "replicates": 500, "scenario": "true", "estimand": "both",
                  "estimators": None, "clip": "preset", "ab_rounds": 50, "ab_eta": 0.5, "seed": 0,
                  "parallelism": 1, "out": "abide_out", "preset": "study",
                  "assignment": "binomial"},
    "truths": {"scenario": "true", "seed": 0, "draws": 0},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _clip(text: str):
    if text.lower() in ("none", "off", "0"):
        return "none"
    return float(text)


def _estimator_list(text: str):
    return [s.strip().lower() for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="abide", description="Effect estimation under survey non-response.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, *names):
        # defaults are None so that unset flags fall through to the config file
        add = {
            "config": lambda: sp.add_argument("--config", help="JSON file of settings"),
            "n": lambda: sp.add_argument("--n", type=int, help="units per dataset"),
            "scenario": lambda: sp.add_argument("--scenario", choices=["true", "transformed"]),
            "seed": lambda: sp.add_argument("--seed", type=int),
            "out": lambda: sp.add_argument("--out", help="output directory"),
            "estimand": lambda: sp.add_argument("--estimand", choices=["ate", "atetr", "both"]),
            "estimators": lambda: sp.add_argument("--estimators", type=_estimator_list,
                                                  help="comma-separated names"),
            "clip": lambda: sp.add_argument("--clip", type=_clip,
                                            help="propensity clip, or 'none' (default: the preset's)"),
            "ab": lambda: (sp.add_argument("--ab-rounds", type=int),
                           sp.add_argument("--ab-eta", type=float)),
            "preset": lambda: sp.add_argument("--preset", choices=["consistent", "study"]),
            "assignment": lambda: sp.add_argument("--assignment", choices=["binomial", "exact"]),
        }
        for name in ("config",) + names:
            add[name]()

    sp = sub.add_parser("simulate", help="draw one dataset from the simulation law")
    common(sp, "n", "scenario", "seed", "out", "assignment")

    sp = sub.add_parser("estimate", help="run estimators on a CSV dataset")
    sp.add_argument("--data", help="dataset CSV")
    common(sp, "estimand", "estimators", "clip", "ab", "seed", "out", "preset")

    sp = sub.add_parser("benchmark", help="replicated simulation study")
    common(sp, "n", "scenario", "estimand", "estimators", "clip", "ab", "seed", "out",
           "preset", "assignment")
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--parallelism", type=int)

    sp = sub.add_parser("truths", help="population quantities of the simulation law")
    common(sp, "scenario", "seed")
    sp.add_argument("--draws", type=int, help="also run a Monte Carlo cross-check")
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags over the config file over defaults."""
    settings = dict(DEFAULTS[args.command])
    if os.environ.get("ABIDE_SEED"):
        try:
            settings["seed"] = int(os.environ["ABIDE_SEED"])
        except ValueError:
            raise ValidationError("ABIDE_SEED must be an integer") from None
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"config file: {exc}") from None
        if not isinstance(loaded, dict):
            raise ValidationError("config file must hold a JSON object")
        unknown = set(loaded) - set(settings)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        settings.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for key in settings:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if settings.get("clip") == "none":
        settings["clip"] = None
    if isinstance(settings.get("estimators"), str):
        settings["estimators"] = _estimator_list(settings["estimators"])
    return settings


def _estimator_settings(cfg: dict) -> EstimatorSettings:
    base = EstimatorSettings.preset(cfg["preset"])
    ab = ABConfig(eta=cfg["ab_eta"], max_rounds=cfg["ab_rounds"], seed=cfg["seed"])
    clip = base.clip if cfg["clip"] == "preset" else cfg["clip"]
    if clip is not None and not (isinstance(clip, (int, float)) and 0 < clip < 0.5):
        raise ValidationError("clip must lie in (0, 0.5) or be 'none'")
    return replace(base, ab=ab, clip=clip)


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_simulate(cfg: dict, out=None) -> int:
    config = dgp.DgpConfig(scenario=cfg["scenario"], seed=cfg["seed"],
                           assignment=cfg["assignment"])
    ds = dgp.generate_population(cfg["n"], config)
    target = Path(cfg["out"])
    target.mkdir(parents=True, exist_ok=True)
    write_csv(ds, target / "dataset.csv")
    meta = {
        "n": ds.n,
        "dgp": config.to_dict(),
        "settings": cfg,
        "resp_rate_treated": float(ds.responded[ds.treatment == 1].mean()),
        "resp_rate_control": float(ds.responded[ds.treatment == 0].mean()),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    _write_json(target / "dataset.meta.json", meta)
    print(f"wrote {ds.n} units to {target / 'dataset.csv'}", file=out)
    return EXIT_OK


def cmd_estimate(cfg: dict, out=None) -> int:
    if not cfg["data"]:
        raise ValidationError("--data is required")
    ds = read_csv(cfg["data"])
    settings = _estimator_settings(cfg)
    rows, n_ok = [], 0
    for estimand in estimands(cfg["estimand"]):
        for name in resolve_estimators(estimand, cfg["estimators"]):
            try:
                res = run_estimator(estimand, name, ds, settings)
            except AbideError as exc:
                rows.append({"estimand": estimand.value, "estimator": name, "estimate": None,
                             "error": f"{type(exc).__name__}: {exc}", "warnings": []})
                continue
            n_ok += 1
            rows.append({**res.to_dict(), "error": None})
    print(f"{'Estimand':<9}{'Estimator':<18}{'Estimate':>12}  Notes", file=out)
    for r in rows:
        est = "-" if r["estimate"] is None else f"{r['estimate']:.6g}"
        notes = r["error"] or "; ".join(r["warnings"])
        print(f"{r['estimand']:<9}{DISPLAY_NAMES[r['estimator']]:<18}{est:>12}  {notes}",
              file=out)
    _write_json(Path(cfg["out"]) / "estimates.json",
                {"settings": {**cfg, "estimators": cfg["estimators"]},
                 "estimator_settings": settings.to_dict(), "n_units": ds.n, "results": rows})
    if rows and n_ok == 0:
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_benchmark(cfg: dict, out=None) -> int:
    config = BenchmarkConfig(
        replicates=cfg["replicates"], n_per_replicate=cfg["n"], scenario=cfg["scenario"],
        estimand=cfg["estimand"],
        estimators=tuple(cfg["estimators"]) if cfg["estimators"] else None,
        master_seed=cfg["seed"], parallelism=cfg["parallelism"],
        settings=_estimator_settings(cfg), assignment=cfg["assignment"])
    report = run_benchmark(config)
    report.write(cfg["out"])
    for key in report.rows:
        print(f"{key} ({config.scenario}, {config.replicates} x {config.n_per_replicate})",
              file=out)
        print(format_table(report, key), file=out)
        comparisons = reference.compare(report, key)
        if comparisons:
            print("\nAgainst published values:", file=out)
            print(reference.format_comparison(comparisons), file=out)
        print(file=out)
    return EXIT_OK


def cmd_truths(cfg: dict, out=None) -> int:
    config = dgp.DgpConfig(scenario=cfg["scenario"], seed=cfg["seed"])
    stats = dgp.population_truths(config).to_dict()
    for k, v in stats.items():
        print(f"{k:<26}{v:.6f}", file=out)
    if cfg["draws"]:
        mc = dgp.monte_carlo_truths(config, draws=cfg["draws"]).to_dict()
        print(f"\nMonte Carlo ({cfg['draws']} draws)", file=out)
        for k, v in mc.items():
            print(f"{k:<26}{v:.6f}  (diff {v - stats[k]:+.1e})", file=out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate,
            "benchmark": cmd_benchmark, "truths": cmd_truths}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
