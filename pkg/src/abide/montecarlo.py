"""Replicated simulation study: bias, median absolute error and MSE per estimator.

Replicate ``r`` always draws its population from the counter-based stream
keyed by ``(master_seed, r)``, so results do not depend on how replicates are
spread over worker processes or in which order they finish.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from abide import dgp
from abide.errors import AbideError, EmptyVector, ValidationError
from abide.estimators import (
    DISPLAY_NAMES,
    Estimand,
    EstimatorSettings,
    estimands,
    resolve_estimators,
    run_estimator,
)

log = logging.getLogger(__name__)

FAILURE_FLAG_RATE = 0.01


class Summary(NamedTuple):
    bias: float  # truth - mean(estimates)
    mae: float  # median |truth - estimate|
    mse: float  # mean (truth - estimate)^2


def summarize(estimates, truth: float) -> Summary:
    """Bias, median absolute error and MSE of ``estimates`` around ``truth``.

    Bias is oriented as truth minus estimate, so an estimator that
    systematically over-shoots has negative bias.
    """
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise EmptyVector("no estimates to summarise")
    err = truth - est
    return Summary(float(err.mean()), float(np.median(np.abs(err))), float(np.mean(err * err)))


@dataclass(frozen=True)
class BenchmarkConfig:
    replicates: int = 500
    n_per_replicate: int = 10_000
    scenario: str = dgp.TRUE
    estimand: str = "both"
    estimators: tuple | None = None
    master_seed: int = 0
    parallelism: int = 1
    settings: EstimatorSettings = field(
        default_factory=lambda: EstimatorSettings.preset("study"))
    assignment: str = "binomial"

    def __post_init__(self):
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if self.n_per_replicate < 4:
            raise ValidationError("n_per_replicate must be >= 4")
        if self.parallelism < 1:
            raise ValidationError("parallelism must be >= 1")
        object.__setattr__(self, "scenario", dgp.scenario_name(self.scenario))
        estimands(self.estimand)
        if self.estimators is not None:
            object.__setattr__(self, "estimators", tuple(self.estimators))

    def dgp_config(self) -> dgp.DgpConfig:
        return dgp.DgpConfig(scenario=self.scenario, seed=self.master_seed,
                             assignment=self.assignment)

    def plan(self) -> list[tuple[Estimand, str]]:
        return [(e, name) for e in estimands(self.estimand)
                for name in resolve_estimators(e, self.estimators)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["settings"] = self.settings.to_dict()
        d["estimators"] = list(self.estimators) if self.estimators else None
        return d


@dataclass
class Row:
    estimator: str
    bias: float
    bias_est_minus_truth: float
    mae: float
    mse: float
    n_ok: int
    failures: int
    flagged: bool
    failure_kinds: dict = field(default_factory=dict)

    @property
    def display_name(self) -> str:
        return DISPLAY_NAMES.get(self.estimator, self.estimator)


@dataclass
class BenchmarkReport:
    config: dict
    truth: dict
    rows: dict  # estimand value -> {estimator: Row}
    raw: dict  # estimand value -> {estimator: [(replicate, estimate), ...]}

    def row(self, estimand, estimator) -> Row:
        return self.rows[Estimand(str(getattr(estimand, "value", estimand)).upper()).value][estimator]

    def estimates(self, estimand, estimator) -> np.ndarray:
        key = Estimand(str(getattr(estimand, "value", estimand)).upper()).value
        return np.array([v for _, v in self.raw[key][estimator]])

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "truth": self.truth,
            "rows": {k: {n: asdict(r) for n, r in v.items()} for k, v in self.rows.items()},
            "raw": {k: {n: [v for _, v in vals] for n, vals in est.items()}
                    for k, est in self.raw.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = [out / "report.json"]
        written[0].write_text(self.to_json() + "\n", encoding="utf-8")
        for key, rows in self.rows.items():
            table = out / f"table_{key.lower()}.csv"
            with open(table, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["Estimator", "Bias", "MAE", "MSE"])
                for r in sorted(rows.values(), key=lambda r: r.display_name):
                    w.writerow([r.display_name, repr(r.bias), repr(r.mae), repr(r.mse)])
            raw = out / f"raw_{key.lower()}.csv"
            with open(raw, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["replicate", "estimator", "estimate"])
                for name in sorted(self.raw[key]):
                    for rep, v in self.raw[key][name]:
                        w.writerow([rep, DISPLAY_NAMES.get(name, name), repr(v)])
            written += [table, raw]
        return written


def _run_replicate(config: BenchmarkConfig, replicate: int, plan) -> dict:
    try:
        ds = dgp.generate_population(config.n_per_replicate, config.dgp_config(), replicate)
    except AbideError as exc:
        # e.g. an arm without respondents: every estimator fails on this draw
        return {(estimand.value, name): type(exc).__name__ for estimand, name in plan}
    out = {}
    for estimand, name in plan:
        try:
            out[estimand.value, name] = run_estimator(estimand, name, ds, config.settings).estimate
        except AbideError as exc:
            out[estimand.value, name] = type(exc).__name__
    return out


def _run_chunk(config: BenchmarkConfig, replicates: list[int]) -> list[tuple[int, dict]]:
    plan = config.plan()
    return [(r, _run_replicate(config, r, plan)) for r in replicates]


def run_benchmark(config: BenchmarkConfig, truth: dgp.TruthStats | None = None) -> BenchmarkReport:
    """Simulate ``config.replicates`` populations and score every estimator."""
    if truth is None:
        truth = dgp.population_truths(config.dgp_config())
    plan = config.plan()
    if not plan:
        raise ValidationError("no estimators selected")
    reps = list(range(config.replicates))
    if config.parallelism == 1:
        results = _run_chunk(config, reps)
    else:
        n_chunks = min(len(reps), 4 * config.parallelism)
        chunks = [reps[i::n_chunks] for i in range(n_chunks)]
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            results = [item for part in pool.map(_run_chunk, [config] * len(chunks), chunks)
                       for item in part]
    results.sort(key=lambda item: item[0])

    truths = {Estimand.ATE.value: truth.ate, Estimand.ATETR.value: truth.atetr}
    rows: dict = {}
    raw: dict = {}
    for estimand, name in plan:
        key = estimand.value
        vals, kinds = [], Counter()
        for rep, res in results:
            v = res[key, name]
            if isinstance(v, str):
                kinds[v] += 1
            else:
                vals.append((rep, float(v)))
        failures = sum(kinds.values())
        if vals:
            s = summarize([v for _, v in vals], truths[key])
        else:
            s = Summary(math.nan, math.nan, math.nan)
        if failures:
            log.warning("%s/%s: %d of %d replicates failed (%s)", key, name, failures,
                        config.replicates, dict(kinds))
        rows.setdefault(key, {})[name] = Row(
            name, s.bias, -s.bias, s.mae, s.mse, len(vals), failures,
            failures > FAILURE_FLAG_RATE * config.replicates, dict(kinds))
        raw.setdefault(key, {})[name] = vals
    return BenchmarkReport(config.to_dict(), truth.to_dict(), rows, raw)


def with_overrides(config: BenchmarkConfig, **kw) -> BenchmarkConfig:
    return replace(config, **kw)


def format_table(report: BenchmarkReport, estimand) -> str:
    """Fixed-width table in the Estimator / Bias / MAE / MSE layout.

    An extra column shows mean(estimate) - truth, the opposite sign convention.
    """
    key = Estimand(str(getattr(estimand, "value", estimand)).upper()).value
    rows = sorted(report.rows[key].values(), key=lambda r: r.display_name)
    lines = [f"{'Estimator':<18}{'Bias':>11}{'MAE':>11}{'MSE':>11}{'Est-Truth':>11}  Failures"]
    for r in rows:
        flag = " !" if r.flagged else ""
        lines.append(f"{r.display_name:<18}{r.bias:>11.1e}{r.mae:>11.1e}{r.mse:>11.1e}"
                     f"{r.bias_est_minus_truth:>11.1e}  {r.failures}{flag}")
    return "\n".join(lines)
