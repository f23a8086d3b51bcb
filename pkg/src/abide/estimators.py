"""ATE and ATETR estimators for survey outcomes in randomised experiments.

ATE estimators treat each arm as its own missing-data problem: an arm mean
is estimated from that arm's respondents (plus covariates of everyone in the
arm) and the effect is the difference of the two arm means.

ATETR estimators use respondents only. The treated-respondent mean is
observed directly; the counterfactual control mean for those same units is
rebuilt from control respondents by outcome modelling, weighting, balancing
or regression adjustment.

Every estimator is a pure function of the dataset and its settings.
"""

from __future__ import annotations

import enum
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from abide import balancing, glm
from abide.balancing import ABConfig, BalanceDiagnostics
from abide.data import ArmData, ExperimentDataset, Selector
from abide.errors import (
    DidNotConverge,
    EstimatorWarning,
    NoRespondentsInArm,
    ValidationError,
)


class Estimand(str, enum.Enum):
    ATE = "ATE"
    ATETR = "ATETR"


@dataclass(frozen=True)
class EstimateResult:
    estimand: Estimand
    estimator: str
    estimate: float
    arm_components: tuple[float, float] | None = None
    diagnostics: BalanceDiagnostics | None = None
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if not np.isfinite(self.estimate):
            raise ValidationError(f"{self.estimator}: non-finite estimate")

    def to_dict(self) -> dict:
        return {
            "estimand": self.estimand.value,
            "estimator": self.estimator,
            "estimate": self.estimate,
            "arm_components": list(self.arm_components) if self.arm_components else None,
            "diagnostics": self.diagnostics.to_dict() if self.diagnostics else None,
            "warnings": list(self.warnings),
        }


@contextmanager
def _captured():
    """Collect estimator-level warnings raised inside the block."""
    bag: list[str] = []
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always", EstimatorWarning)
        warnings.simplefilter("always", DidNotConverge)
        yield bag
    for w in rec:
        if issubclass(w.category, (EstimatorWarning, DidNotConverge)):
            bag.append(str(w.message))
        else:
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)


def _warn(msg: str):
    warnings.warn(msg, EstimatorWarning, stacklevel=3)


def _cols(x: np.ndarray, selector) -> np.ndarray:
    if selector is None:
        return x
    return x[:, list(selector)]


def _binary(y: np.ndarray, what: str):
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValidationError(f"{what} requires binary 0/1 outcomes")


def _require_respondents(arm: ArmData, label="arm"):
    if arm.n_respondents == 0:
        raise NoRespondentsInArm(f"no respondents in {label}")


PREDICTIONS = ("probability", "class")


def _outcome_model_predictions(x_fit, y_fit, x_pred, prediction="probability") -> np.ndarray:
    """Logistic outcome model fitted on (x_fit, y_fit), evaluated on x_pred.

    ``prediction="class"`` thresholds the fitted probability at 1/2 and
    returns 0/1 labels instead.
    """
    if prediction not in PREDICTIONS:
        raise ValidationError(f"prediction must be one of {PREDICTIONS}")
    _binary(y_fit, "a logistic outcome model")
    if y_fit.min() == y_fit.max():
        _warn("respondent outcomes are constant; outcome model degenerates to that constant")
        return np.full(len(x_pred), float(y_fit[0]))
    model = glm.fit_logistic(x_fit, y_fit)
    p = glm.predict_proba(model, x_pred)
    return (p > 0.5).astype(float) if prediction == "class" else p


# ---------------------------------------------------------------------------
# arm means (ATE building blocks)


def arm_mean_or(arm: ArmData, covariate_selector: Selector = None,
                prediction: str = "probability") -> float:
    """Outcome regression: fit on respondents, average predictions over the arm."""
    _require_respondents(arm)
    x = _cols(arm.covariates, covariate_selector)
    pred = _outcome_model_predictions(x[arm.responded], arm.outcomes, x, prediction)
    return float(pred.mean())


def _response_propensities(arm: ArmData, x: np.ndarray) -> np.ndarray:
    model = glm.fit_logistic(x, arm.responded.astype(float))
    return glm.predict_proba(model, x)


def arm_mean_ipw(arm: ArmData, covariate_selector: Selector = None,
                 clip: float | None = balancing.DEFAULT_CLIP, propensities=None) -> float:
    """Hajek-weighted respondent mean with weights 1/P(respond | X).

    ``propensities`` (one per arm unit) replaces the fitted response model.
    """
    _require_respondents(arm)
    if propensities is None:
        if arm.n_respondents == arm.n:
            _warn("every unit responded; IPW reduces to the respondent mean")
            return float(arm.outcomes.mean())
        propensities = _response_propensities(arm, _cols(arm.covariates, covariate_selector))
    pi = np.asarray(propensities, dtype=float)[arm.responded]
    frac = balancing.clipped_fraction(pi, clip)
    if frac > 0.05:
        _warn(f"{100 * frac:.1f}% of propensities were clipped")
    return balancing.ipw_weights(pi, "mean_recovery", clip).mean(arm.outcomes)


def arm_mean_dr(arm: ArmData, covariate_selector: Selector = None,
                clip: float | None = balancing.DEFAULT_CLIP, outcome_predictions=None,
                propensities=None) -> float:
    """Augmented IPW: (1/n) sum[f(X) + D (Y - f(X)) / pi(X)].

    Either nuisance can be supplied directly (one value per arm unit) instead
    of being fitted.
    """
    _require_respondents(arm)
    x = _cols(arm.covariates, covariate_selector)
    if outcome_predictions is None:
        f = _outcome_model_predictions(x[arm.responded], arm.outcomes, x)
    else:
        f = np.asarray(outcome_predictions, dtype=float)
    if propensities is None:
        if arm.n_respondents == arm.n:
            _warn("every unit responded; DR reduces to the respondent mean")
            return float(arm.outcomes.mean())
        pi = _response_propensities(arm, x)
    else:
        pi = np.asarray(propensities, dtype=float)
    if clip is not None:
        pi = np.clip(pi, clip, 1.0 - clip)
    resid = np.zeros(arm.n)
    resid[arm.responded] = (arm.outcomes - f[arm.responded]) / pi[arm.responded]
    return float(np.mean(f + resid))


def arm_mean_ab(arm: ArmData, covariate_selector: Selector = None,
                ab_config: ABConfig = ABConfig()) -> float:
    """Respondents adversarially reweighted to look like the whole arm."""
    _require_respondents(arm)
    x = _cols(arm.covariates, covariate_selector)
    w, _ = balancing.adversarial_balance(x[arm.responded], x, ab_config)
    return w.mean(arm.outcomes)


def ate_from_arm_means(theta1: float, theta0: float, estimator: str = "custom",
                       warnings: tuple[str, ...] = ()) -> EstimateResult:
    theta1, theta0 = float(theta1), float(theta0)
    return EstimateResult(Estimand.ATE, estimator, theta1 - theta0, (theta1, theta0),
                          warnings=tuple(warnings))


def _ate(dataset: ExperimentDataset, name: str, arm_fn: Callable[[ArmData], float],
         selector: Selector) -> EstimateResult:
    with _captured() as bag:
        cols = dataset.schema.indices(selector)
        theta1 = arm_fn(dataset.arm(1, cols))
        theta0 = arm_fn(dataset.arm(0, cols))
    return ate_from_arm_means(theta1, theta0, name, tuple(bag))


# ---------------------------------------------------------------------------
# ATE


def _respondent_mean(arm: ArmData) -> float:
    _require_respondents(arm)
    return float(arm.outcomes.mean())


def ate_naive(dataset: ExperimentDataset) -> EstimateResult:
    return _ate(dataset, "naive", _respondent_mean, None)


def ate_or(dataset: ExperimentDataset, covariate_selector: Selector = None,
           prediction: str = "probability") -> EstimateResult:
    return _ate(dataset, "or", lambda arm: arm_mean_or(arm, None, prediction),
                covariate_selector)


def ate_ipw(dataset: ExperimentDataset, covariate_selector: Selector = None,
            clip: float | None = balancing.DEFAULT_CLIP,
            propensity_scope: str = "arm") -> EstimateResult:
    """IPW arm-mean difference.

    ``propensity_scope="arm"`` fits a response model inside each arm, which is
    consistent under missing-at-random. ``"pooled"`` fits a single response
    model on all units without the treatment indicator; it cannot represent a
    treatment-dependent response law and is kept to reproduce published
    simulation results that used it.
    """
    if propensity_scope == "arm":
        return _ate(dataset, "ipw",
                    lambda arm: arm_mean_ipw(arm, None, clip), covariate_selector)
    if propensity_scope != "pooled":
        raise ValidationError(f"unknown propensity scope {propensity_scope!r}")
    cols = dataset.schema.indices(covariate_selector)
    x = dataset.covariates[:, cols]
    with _captured() as bag:
        model = glm.fit_logistic(x, dataset.responded.astype(float))
        pi = glm.predict_proba(model, x)
        thetas = [arm_mean_ipw(dataset.arm(t, cols), None, clip,
                               propensities=pi[dataset.treatment == t]) for t in (1, 0)]
    return ate_from_arm_means(thetas[0], thetas[1], "ipw", tuple(bag))


def ate_dr(dataset: ExperimentDataset, covariate_selector: Selector = None,
           clip: float | None = balancing.DEFAULT_CLIP) -> EstimateResult:
    return _ate(dataset, "dr", lambda arm: arm_mean_dr(arm, None, clip), covariate_selector)


def ate_ab(dataset: ExperimentDataset, covariate_selector: Selector = None,
           ab_config: ABConfig = ABConfig()) -> EstimateResult:
    return _ate(dataset, "ab", lambda arm: arm_mean_ab(arm, None, ab_config),
                covariate_selector)


# ---------------------------------------------------------------------------
# ATETR


def _respondent_split(dataset: ExperimentDataset, selector: Selector):
    x, t, y = dataset.respondents(selector)
    treated = t == 1
    if not treated.any():
        raise NoRespondentsInArm("no treated respondents")
    if treated.all():
        raise NoRespondentsInArm("no control respondents")
    return x, t, y, treated


def _atetr(name, treated_mean, control_mean, diagnostics=None, bag=()) -> EstimateResult:
    return EstimateResult(Estimand.ATETR, name, float(treated_mean - control_mean),
                          diagnostics=diagnostics, warnings=tuple(bag))


def atetr_naive(dataset: ExperimentDataset) -> EstimateResult:
    """Same arithmetic as :func:`ate_naive`; only the label differs."""
    naive = ate_naive(dataset)
    return EstimateResult(Estimand.ATETR, "naive", naive.estimate, warnings=naive.warnings)


def atetr_or(dataset: ExperimentDataset, covariate_selector: Selector = None,
             prediction: str = "probability") -> EstimateResult:
    """Counterfactual control outcomes for treated respondents from a model
    fitted on control respondents."""
    x, _, y, treated = _respondent_split(dataset, covariate_selector)
    with _captured() as bag:
        g = _outcome_model_predictions(x[~treated], y[~treated], x[treated], prediction)
    return _atetr("or", y[treated].mean(), g.mean(), bag=bag)


def atetr_ipw(dataset: ExperimentDataset, covariate_selector: Selector = None,
              clip: float | None = balancing.DEFAULT_CLIP,
              normalize: bool = True) -> EstimateResult:
    """Control respondents weighted by the odds e/(1-e) of being treated,
    with e fitted on pooled respondents.

    With ``normalize=False`` the weighted control sum is divided by the number
    of treated respondents rather than by the sum of the weights
    (Horvitz-Thompson form); it is unbiased only when the odds model is right
    and is unbounded otherwise.
    """
    x, t, y, treated = _respondent_split(dataset, covariate_selector)
    with _captured() as bag:
        e = glm.predict_proba(glm.fit_logistic(x, t.astype(float)), x)[~treated]
        frac = balancing.clipped_fraction(e, clip)
        if frac > 0.05:
            _warn(f"{100 * frac:.1f}% of propensities were clipped")
        w = balancing.ipw_weights(e, "att_odds", clip)
        ess = w.effective_sample_size
        if ess < 0.1 * len(w):
            _warn(f"ExtremeWeights: effective sample size {ess:.1f} of {len(w)} "
                  "control respondents")
        if normalize:
            control_mean = w.mean(y[~treated])
        else:
            if clip is not None:
                e = np.clip(e, clip, 1.0 - clip)
            control_mean = float(np.sum(e / (1.0 - e) * y[~treated]) / treated.sum())
    diag = BalanceDiagnostics(float(np.max(np.abs(w.weights @ x[~treated]
                                                  - x[treated].mean(axis=0)))), ess, 0)
    return _atetr("ipw", y[treated].mean(), control_mean, diag, bag)


def atetr_cc(dataset: ExperimentDataset, covariate_selector: Selector = None) -> EstimateResult:
    """Treatment coefficient of OLS of Y on (1, T, X) over pooled respondents."""
    x, t, y, _ = _respondent_split(dataset, covariate_selector)
    model = glm.fit_ols(np.column_stack([t, x]), y)
    return EstimateResult(Estimand.ATETR, "cc", float(model.coefficients[1]))


def atetr_eb(dataset: ExperimentDataset, covariate_selector: Selector = None,
             moments: int = 1) -> EstimateResult:
    """Entropy-balance control respondents to the treated-respondent covariate
    moments (first moments by default)."""
    x, _, y, treated = _respondent_split(dataset, covariate_selector)
    feats = balancing.moment_features(x, moments)
    w, diag = balancing.entropy_balance(feats[~treated], feats[treated].mean(axis=0))
    return _atetr("eb", y[treated].mean(), w.mean(y[~treated]), diag)


def atetr_ab(dataset: ExperimentDataset, covariate_selector: Selector = None,
             ab_config: ABConfig = ABConfig()) -> EstimateResult:
    x, _, y, treated = _respondent_split(dataset, covariate_selector)
    w, diag = balancing.adversarial_balance(x[~treated], x[treated], ab_config)
    return _atetr("ab", y[treated].mean(), w.mean(y[~treated]), diag)


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class EstimatorSettings:
    """Knobs shared by the estimator registry (CLI and benchmark).

    The defaults give the consistent form of every estimator. :meth:`preset`
    also knows ``"study"``, which swaps in the implementation choices that
    reproduce the published simulation tables: a single response model across
    arms for ATE-IPW, class-label outcome predictions for OR, and unclipped
    Horvitz-Thompson odds weights for ATETR-IPW.
    """

    covariates: tuple | None = None
    clip: float | None = balancing.DEFAULT_CLIP
    ab: ABConfig = field(default_factory=ABConfig)
    ipw_propensity: str = "arm"
    or_prediction: str = "probability"
    atetr_ipw_normalize: bool = True
    eb_moments: int = 1
    name: str = "consistent"

    @classmethod
    def preset(cls, name: str, **overrides) -> "EstimatorSettings":
        if name == "consistent":
            base = {}
        elif name == "study":
            base = dict(clip=None, ipw_propensity="pooled", or_prediction="class",
                        atetr_ipw_normalize=False)
        else:
            raise ValidationError(f"unknown preset {name!r}; use 'consistent' or 'study'")
        base.update(overrides)
        return cls(name=name, **base)

    def to_dict(self) -> dict:
        return {"preset": self.name,
                "covariates": list(self.covariates) if self.covariates else None,
                "clip": self.clip, "ab": self.ab.to_dict(),
                "ipw_propensity": self.ipw_propensity, "or_prediction": self.or_prediction,
                "atetr_ipw_normalize": self.atetr_ipw_normalize,
                "eb_moments": self.eb_moments}


ATE_ESTIMATORS: dict[str, Callable[[ExperimentDataset, EstimatorSettings], EstimateResult]] = {
    "naive": lambda ds, s: ate_naive(ds),
    "or": lambda ds, s: ate_or(ds, s.covariates, s.or_prediction),
    "ipw": lambda ds, s: ate_ipw(ds, s.covariates, s.clip, s.ipw_propensity),
    "dr": lambda ds, s: ate_dr(ds, s.covariates, s.clip),
    "ab": lambda ds, s: ate_ab(ds, s.covariates, s.ab),
}

ATETR_ESTIMATORS: dict[str, Callable[[ExperimentDataset, EstimatorSettings], EstimateResult]] = {
    "naive": lambda ds, s: atetr_naive(ds),
    "or": lambda ds, s: atetr_or(ds, s.covariates, s.or_prediction),
    "ipw": lambda ds, s: atetr_ipw(ds, s.covariates, s.clip, s.atetr_ipw_normalize),
    "cc": lambda ds, s: atetr_cc(ds, s.covariates),
    "eb": lambda ds, s: atetr_eb(ds, s.covariates, s.eb_moments),
    "ab": lambda ds, s: atetr_ab(ds, s.covariates, s.ab),
}

REGISTRY = {Estimand.ATE: ATE_ESTIMATORS, Estimand.ATETR: ATETR_ESTIMATORS}

DISPLAY_NAMES = {"ab": "AB", "cc": "CC", "dr": "DR", "eb": "EB", "ipw": "IPW",
                 "naive": "Naive comparison", "or": "OR"}


def estimands(value) -> list[Estimand]:
    """Parse ``ate`` / ``atetr`` / ``both``."""
    v = str(getattr(value, "value", value)).lower()
    if v == "both":
        return [Estimand.ATE, Estimand.ATETR]
    try:
        return [Estimand(v.upper())]
    except ValueError:
        raise ValidationError(f"unknown estimand {value!r}") from None


def resolve_estimators(estimand: Estimand, names=None) -> list[str]:
    """Registry names for ``estimand``; unknown names raise, names that only
    exist for the other estimand are skipped."""
    table = REGISTRY[estimand]
    if names is None:
        return sorted(table)
    every = set(ATE_ESTIMATORS) | set(ATETR_ESTIMATORS)
    unknown = [n for n in names if n not in every]
    if unknown:
        raise ValidationError(f"unknown estimators: {unknown}")
    return [n for n in names if n in table]


def run_estimator(estimand: Estimand, name: str, dataset: ExperimentDataset,
                  settings: EstimatorSettings = EstimatorSettings()) -> EstimateResult:
    return REGISTRY[estimand][name](dataset, settings)
