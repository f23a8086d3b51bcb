"""Experiment data representation, validation and CSV round-tripping.

A dataset is stored column-wise: treatment and response flags for every unit,
a covariate matrix, and an outcome vector that holds entries for respondents
*only*. Non-respondent outcomes are structurally absent rather than encoded
with a sentinel, so they can never leak into a mean.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence, Union

import numpy as np

from abide.errors import (
    ArityMismatch,
    EmptyArm,
    MissingOutcome,
    NoRespondentsInArm,
    PhantomOutcome,
    ValidationError,
)

Selector = Union[None, Sequence[Union[str, int]]]

FIXED_COLUMNS = ("unit_id", "treatment", "responded", "outcome")


def _flag(value, name: str, line=None) -> int:
    if isinstance(value, str):
        value = value.strip()
        if value not in ("0", "1"):
            raise ValidationError(f"{name} must be 0 or 1, got {value!r}", line)
        return int(value)
    if isinstance(value, (int, float, np.integer, np.floating)) and value in (0, 1):
        return int(value)
    raise ValidationError(f"{name} must be 0 or 1, got {value!r}", line)


@dataclass(frozen=True)
class UnitRecord:
    """One experimental unit."""

    unit_id: str
    treatment: int
    responded: int
    outcome: float | None
    covariates: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "unit_id", str(self.unit_id))
        object.__setattr__(self, "treatment", _flag(self.treatment, "treatment"))
        object.__setattr__(self, "responded", _flag(self.responded, "responded"))
        object.__setattr__(self, "covariates", tuple(float(c) for c in self.covariates))
        if self.responded and self.outcome is None:
            raise MissingOutcome(f"unit {self.unit_id!r} responded but has no outcome")
        if not self.responded and self.outcome is not None:
            raise PhantomOutcome(f"unit {self.unit_id!r} did not respond but has an outcome")
        if self.outcome is not None:
            object.__setattr__(self, "outcome", float(self.outcome))


@dataclass(frozen=True)
class CovariateSchema:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise ValidationError("schema needs at least one covariate")
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate covariate names in {names}")
        clash = set(names) & set(FIXED_COLUMNS)
        if clash:
            raise ValidationError(f"covariate names collide with fixed columns: {sorted(clash)}")

    @property
    def arity(self) -> int:
        return len(self.names)

    def indices(self, selector: Selector = None) -> list[int]:
        """Resolve a selector (names or positions; ``None`` = all) to column positions."""
        if selector is None:
            return list(range(self.arity))
        out = []
        for item in selector:
            if isinstance(item, str):
                if item not in self.names:
                    raise ValidationError(f"unknown covariate {item!r}")
                out.append(self.names.index(item))
            else:
                idx = int(item)
                if not 0 <= idx < self.arity:
                    raise ValidationError(f"covariate index {idx} out of range")
                out.append(idx)
        return out


class ArmData(NamedTuple):
    """Units of one treatment arm, restricted to the selected covariates."""

    covariates: np.ndarray  # (n, k) for every unit in the arm
    responded: np.ndarray  # (n,) bool
    outcomes: np.ndarray  # (n_respondents,) in arm order

    @property
    def n(self) -> int:
        return len(self.responded)

    @property
    def n_respondents(self) -> int:
        return int(self.responded.sum())

    @property
    def respondent_covariates(self) -> np.ndarray:
        return self.covariates[self.responded]


class Strata(NamedTuple):
    treated_respondents: tuple[UnitRecord, ...]
    treated_nonrespondents: tuple[UnitRecord, ...]
    control_respondents: tuple[UnitRecord, ...]
    control_nonrespondents: tuple[UnitRecord, ...]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class ExperimentDataset:
    """Validated, immutable collection of units plus a covariate schema.

    Build instances with :func:`validate`, :func:`read_csv` or
    :meth:`from_arrays`; all three enforce the same invariants.
    """

    __slots__ = ("schema", "unit_ids", "treatment", "responded", "covariates",
                 "outcomes", "_records")

    def __init__(self, schema, unit_ids, treatment, responded, covariates, outcomes):
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "unit_ids", tuple(unit_ids))
        object.__setattr__(self, "treatment", _frozen(np.asarray(treatment, dtype=np.int8)))
        object.__setattr__(self, "responded", _frozen(np.asarray(responded, dtype=bool)))
        object.__setattr__(self, "covariates", _frozen(np.asarray(covariates, dtype=float)))
        object.__setattr__(self, "outcomes", _frozen(np.asarray(outcomes, dtype=float)))
        object.__setattr__(self, "_records", None)

    def __setattr__(self, name, value):
        raise AttributeError("ExperimentDataset is immutable")

    @classmethod
    def from_arrays(cls, schema: CovariateSchema, treatment, responded, covariates,
                    outcomes, unit_ids=None) -> "ExperimentDataset":
        """Vectorised constructor.

        ``outcomes`` may be either respondent-only (length = number of
        respondents) or full-length, in which case entries for non-respondents
        must be NaN and are discarded.
        """
        treatment = np.asarray(treatment)
        responded = np.asarray(responded)
        covariates = np.asarray(covariates, dtype=float)
        outcomes = np.asarray(outcomes, dtype=float)
        n = len(treatment)
        if n == 0:
            raise ValidationError("dataset is empty")
        if not (np.isin(treatment, (0, 1)).all() and np.isin(responded, (0, 1)).all()):
            raise ValidationError("treatment and responded must be 0/1")
        responded = responded.astype(bool)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        if covariates.shape != (n, schema.arity):
            raise ArityMismatch(f"covariates have shape {covariates.shape}, "
                                f"expected ({n}, {schema.arity})")
        if len(responded) != n:
            raise ValidationError("treatment and responded lengths differ")
        if len(outcomes) == n and n != responded.sum():
            missing = responded & np.isnan(outcomes)
            if missing.any():
                raise MissingOutcome(f"unit at position {int(np.argmax(missing))} responded "
                                     "but has no outcome")
            phantom = ~responded & ~np.isnan(outcomes)
            if phantom.any():
                raise PhantomOutcome(f"unit at position {int(np.argmax(phantom))} did not "
                                     "respond but has an outcome")
            outcomes = outcomes[responded]
        elif len(outcomes) != responded.sum():
            raise ValidationError("outcome vector matches neither n nor the respondent count")
        if np.isnan(outcomes).any():
            raise MissingOutcome("respondent outcome is NaN")
        if not np.isfinite(covariates).all():
            raise ValidationError("covariates must be finite")
        if unit_ids is None:
            unit_ids = [str(i) for i in range(n)]
        elif len(unit_ids) != n:
            raise ValidationError("unit_ids length differs from n")
        _check_arms(treatment, responded)
        return cls(schema, [str(u) for u in unit_ids], treatment, responded, covariates, outcomes)

    @property
    def n(self) -> int:
        return len(self.treatment)

    @property
    def records(self) -> tuple[UnitRecord, ...]:
        if self._records is None:
            out = []
            k = 0
            for i in range(self.n):
                if self.responded[i]:
                    y = float(self.outcomes[k])
                    k += 1
                else:
                    y = None
                out.append(UnitRecord(self.unit_ids[i], int(self.treatment[i]),
                                      int(self.responded[i]), y,
                                      tuple(self.covariates[i].tolist())))
            object.__setattr__(self, "_records", tuple(out))
        return self._records

    def full_outcomes(self) -> np.ndarray:
        """Length-n outcome vector with NaN for non-respondents (for export only)."""
        y = np.full(self.n, np.nan)
        y[self.responded] = self.outcomes
        return y

    def arm(self, treatment: int, selector: Selector = None) -> ArmData:
        cols = self.schema.indices(selector)
        mask = self.treatment == treatment
        resp_mask = mask[self.responded]
        return ArmData(self.covariates[mask][:, cols], self.responded[mask],
                       self.outcomes[resp_mask])

    def respondents(self, selector: Selector = None):
        """Pooled respondents: (covariates, treatment, outcomes)."""
        cols = self.schema.indices(selector)
        return (self.covariates[self.responded][:, cols],
                self.treatment[self.responded].astype(int), self.outcomes)

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, ExperimentDataset):
            return NotImplemented
        return (self.schema == other.schema and self.unit_ids == other.unit_ids
                and np.array_equal(self.treatment, other.treatment)
                and np.array_equal(self.responded, other.responded)
                and np.array_equal(self.covariates, other.covariates)
                and np.array_equal(self.outcomes, other.outcomes))

    __hash__ = None

    def __repr__(self):
        return (f"ExperimentDataset(n={self.n}, covariates={list(self.schema.names)}, "
                f"respondents={int(self.responded.sum())})")


def _check_arms(treatment, responded, lines=None):
    for arm, label in ((1, "treated"), (0, "control")):
        in_arm = treatment == arm
        if not in_arm.any():
            raise EmptyArm(f"no {label} units")
        if not (responded & in_arm).any():
            raise NoRespondentsInArm(f"no respondents in the {label} arm")


def validate(raw_records: Iterable[Union[UnitRecord, Mapping]], schema: CovariateSchema,
             line_numbers: Sequence[int] | None = None) -> ExperimentDataset:
    """Check raw records against the schema and build a dataset.

    Records may be :class:`UnitRecord` instances or mappings with keys
    ``unit_id, treatment, responded, outcome, covariates``. Nothing is dropped:
    the first violation raises, carrying the line number when supplied.
    """
    raw_records = list(raw_records)
    if not raw_records:
        raise ValidationError("no records")
    records = []
    for pos, raw in enumerate(raw_records):
        line = line_numbers[pos] if line_numbers is not None else None
        try:
            rec = raw if isinstance(raw, UnitRecord) else UnitRecord(
                raw["unit_id"], raw["treatment"], raw["responded"], raw.get("outcome"),
                tuple(raw["covariates"]))
        except ValidationError as exc:
            raise type(exc)(str(exc), line) from None
        except (TypeError, ValueError, KeyError) as exc:
            raise ValidationError(f"malformed record: {exc}", line) from None
        if len(rec.covariates) != schema.arity:
            raise ArityMismatch(f"expected {schema.arity} covariates, got {len(rec.covariates)}",
                                line)
        records.append(rec)
    ids = [r.unit_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate unit ids")
    treatment = np.array([r.treatment for r in records], dtype=np.int8)
    responded = np.array([r.responded for r in records], dtype=bool)
    covariates = np.array([r.covariates for r in records], dtype=float).reshape(len(records),
                                                                               schema.arity)
    if not np.isfinite(covariates).all():
        raise ValidationError("covariates must be finite")
    outcomes = np.array([r.outcome for r in records if r.responded], dtype=float)
    _check_arms(treatment, responded)
    ds = ExperimentDataset(schema, ids, treatment, responded, covariates, outcomes)
    object.__setattr__(ds, "_records", tuple(records))
    return ds


def partition(dataset: ExperimentDataset) -> Strata:
    buckets = {(1, 1): [], (1, 0): [], (0, 1): [], (0, 0): []}
    for rec in dataset.records:
        buckets[(rec.treatment, rec.responded)].append(rec)
    return Strata(tuple(buckets[1, 1]), tuple(buckets[1, 0]), tuple(buckets[0, 1]),
                  tuple(buckets[0, 0]))


def _fmt(x: float) -> str:
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def write_csv(dataset: ExperimentDataset, target) -> None:
    """Write ``dataset`` in the canonical CSV layout to a path or text stream."""
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="", encoding="utf-8") as fh:
            write_csv(dataset, fh)
        return
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(list(FIXED_COLUMNS) + list(dataset.schema.names))
    y = dataset.full_outcomes()
    cov = dataset.covariates.tolist()
    for i in range(dataset.n):
        writer.writerow([dataset.unit_ids[i], int(dataset.treatment[i]),
                         int(dataset.responded[i]), "" if math.isnan(y[i]) else _fmt(y[i])]
                        + [repr(c) for c in cov[i]])


def read_csv(source) -> ExperimentDataset:
    """Parse the canonical CSV layout; errors cite the offending line."""
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_csv(fh)
    reader = csv.reader(source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ValidationError("empty file", 1) from None
    if tuple(header[:4]) != FIXED_COLUMNS:
        raise ValidationError(f"header must start with {','.join(FIXED_COLUMNS)}", 1)
    schema = CovariateSchema(tuple(header[4:]))
    rows, lines = [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ArityMismatch(f"expected {len(header)} fields, got {len(row)}", line)
        uid, t, r, y, *cov = row
        try:
            covariates = tuple(float(c) for c in cov)
            outcome = float(y) if y.strip() else None
        except ValueError as exc:
            raise ValidationError(f"bad number: {exc}", line) from None
        rows.append({"unit_id": uid, "treatment": t, "responded": r, "outcome": outcome,
                     "covariates": covariates})
        lines.append(line)
    return validate(rows, schema, line_numbers=lines)


def to_csv_string(dataset: ExperimentDataset) -> str:
    buf = io.StringIO()
    write_csv(dataset, buf)
    return buf.getvalue()
