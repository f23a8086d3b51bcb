"""Reweighting a source sample toward a target.

Three routes are provided:

* inverse propensity (or propensity-odds) weights from fitted probabilities,
* entropy balancing, i.e. the minimum-KL reweighting of a base distribution
  that matches target covariate moments exactly, solved by Newton's method on
  the convex dual ``log sum_i b_i exp(lam . (x_i - m))``,
* adversarial balancing, a multiplicative-weights game against a logistic
  discriminator that tries to tell weighted source rows from target rows.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from abide import glm
from abide.errors import (
    DegenerateWeights,
    DiscriminatorFailure,
    Infeasible,
    NumericalError,
    OutOfRangePropensity,
    Separation,
    SingularHessian,
    SingularSystem,
    ValidationError,
)

DEFAULT_CLIP = 0.01


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or not np.isfinite(w).all() or (w < 0).any():
            raise ValidationError("weights must be a finite nonnegative vector")
        if self.normalized and abs(w.sum() - 1.0) > 1e-10:
            raise ValidationError(f"normalized weights sum to {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)

    @property
    def effective_sample_size(self) -> float:
        return effective_sample_size(self.weights)

    def mean(self, values) -> float:
        """Weighted (Hajek) mean of ``values``."""
        v = np.asarray(values, dtype=float)
        return float(self.weights @ v / self.weights.sum())


@dataclass(frozen=True)
class BalanceDiagnostics:
    max_abs_moment_gap: float
    effective_sample_size: float
    iterations: int
    dual: tuple | None = None  # EB multipliers in the caller's covariate units

    def to_dict(self) -> dict:
        return asdict(self)


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / np.sum(w * w))


def _normalize(w: np.ndarray) -> np.ndarray:
    w = w / w.sum()
    # one more pass so the sum lands within a few ulps of 1
    return w / w.sum()


def ipw_weights(propensities, mode: Literal["mean_recovery", "att_odds"] = "mean_recovery",
                clip: float | None = DEFAULT_CLIP) -> WeightVector:
    """Normalised weights from probabilities.

    ``mean_recovery`` gives ``w ~ 1/p`` (respondents standing in for a whole
    arm); ``att_odds`` gives ``w ~ p/(1-p)`` (controls standing in for the
    treated). Probabilities are clipped into ``[clip, 1-clip]`` first;
    ``clip=None`` disables clipping.
    """
    p = np.asarray(propensities, dtype=float)
    if p.ndim != 1 or len(p) == 0:
        raise ValidationError("propensities must be a nonempty vector")
    if not np.isfinite(p).all() or (p <= 0).any() or (p >= 1).any():
        raise OutOfRangePropensity("propensities must lie strictly inside (0, 1)")
    if clip is not None:
        if not 0 < clip < 0.5:
            raise ValidationError("clip must lie in (0, 0.5)")
        p = np.clip(p, clip, 1.0 - clip)
    if mode == "mean_recovery":
        raw = 1.0 / p
    elif mode == "att_odds":
        raw = p / (1.0 - p)
    else:
        raise ValidationError(f"unknown mode {mode!r}")
    return WeightVector(_normalize(raw))


def clipped_fraction(propensities, clip: float | None) -> float:
    if clip is None:
        return 0.0
    p = np.asarray(propensities, dtype=float)
    return float(np.mean((p < clip) | (p > 1.0 - clip)))


def moment_features(x, order: int = 1) -> np.ndarray:
    """Stack powers 1..order of each column, for higher-moment balancing."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if order < 1:
        raise ValidationError("order must be >= 1")
    return np.column_stack([x ** k for k in range(1, order + 1)])


def entropy_balance(source_covariates, target_moments, base_weights=None, *,
                    tol: float = 1e-8, max_iter: int = 200,
                    max_halvings: int = 40) -> tuple[WeightVector, BalanceDiagnostics]:
    """Minimum-KL weights (relative to ``base_weights``) hitting ``target_moments``.

    Raises :class:`Infeasible` when the target lies outside the convex hull of
    the source rows (the dual is then unbounded and Newton cannot close the
    gap) and :class:`SingularHessian` for collinear covariates.
    """
    x = np.asarray(source_covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    m = np.atleast_1d(np.asarray(target_moments, dtype=float))
    n, k = x.shape
    if m.shape != (k,):
        raise ValidationError(f"{len(m)} target moments for {k} covariates")
    if n == 0:
        raise ValidationError("empty source")
    if base_weights is None:
        log_b = np.full(n, -np.log(n))
    else:
        b = np.asarray(base_weights, dtype=float)
        if b.shape != (n,) or (b < 0).any() or b.sum() <= 0:
            raise ValidationError("base weights must be nonnegative with positive sum")
        with np.errstate(divide="ignore"):
            log_b = np.log(b / b.sum())

    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.maximum(hi - lo, 1e-300)
    slack = 1e-12 * np.maximum(np.abs(m), 1.0)
    if ((m < lo - slack) | (m > hi + slack)).any():
        raise Infeasible("target moments fall outside the range of the source covariates")

    # centre on the target and rescale; the optimal weights are invariant to this
    scale = np.where(hi > lo, span, 1.0)
    z = (x - m) / scale
    const = hi == lo
    if const.any():
        if (np.abs(x[0, const] - m[const]) > tol).any():
            raise Infeasible("constant covariate cannot reach its target moment")
        z = z[:, ~const]

    def dual(lam):
        s = log_b + z @ lam
        top = s.max()
        e = np.exp(s - top)
        total = e.sum()
        return top + np.log(total), e / total

    lam = np.zeros(z.shape[1])
    obj, w = dual(lam)
    it = 0
    gap = np.inf
    for it in range(1, max_iter + 1):
        grad = w @ z
        gap = float(np.max(np.abs(grad * scale[~const]))) if z.shape[1] else 0.0
        if gap <= tol:
            break
        zc = z - grad
        hess = (zc * w[:, None]).T @ zc
        try:
            eig = np.linalg.eigvalsh(hess)
        except np.linalg.LinAlgError:
            raise SingularHessian("dual Hessian eigen-decomposition failed") from None
        if eig[-1] <= 0 or eig[0] <= 1e-14 * eig[-1]:
            if np.linalg.norm(lam) > 50:
                raise Infeasible("dual diverging; target on or beyond the convex hull")
            raise SingularHessian("dual Hessian singular; covariates are collinear")
        step = -np.linalg.solve(hess, grad)
        t = 1.0
        for _ in range(max_halvings):
            new_obj, new_w = dual(lam + t * step)
            if new_obj <= obj + 1e-4 * t * float(grad @ step):
                break
            t *= 0.5
        else:
            raise Infeasible("line search failed to decrease the dual")
        lam = lam + t * step
        obj, w = new_obj, new_w
        if np.linalg.norm(lam) > 1e6:
            raise Infeasible("dual multipliers diverged")
    else:
        grad = w @ z
        gap = float(np.max(np.abs(grad * scale[~const]))) if z.shape[1] else 0.0
    if gap > tol:
        raise Infeasible(f"moment gap stalled at {gap:.3g}")

    w = _normalize(w)
    gap = float(np.max(np.abs(w @ x - m)))
    full = np.zeros(k)
    full[~const] = lam / scale[~const]
    diag = BalanceDiagnostics(gap, effective_sample_size(w), it, tuple(full.tolist()))
    return WeightVector(w), diag


@dataclass(frozen=True)
class ABConfig:
    """Adversarial balancing settings.

    ``eta`` is the multiplicative learning rate, ``epsilon`` the margin over
    chance (0.5 balanced accuracy) below which the discriminator counts as
    defeated. ``ridge`` is only used when an unpenalised discriminator fit hits
    separation. ``max_target_rows`` (with ``seed``) subsamples the target side
    of each discriminator fit.
    """

    eta: float = 0.5
    max_rounds: int = 50
    epsilon: float = 0.02
    ridge: float = 1e-6
    min_effective_size: float = 2.0
    max_target_rows: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.eta <= 0 or self.max_rounds < 1 or not 0 <= self.epsilon < 0.5:
            raise ValidationError("invalid AB configuration")

    def to_dict(self) -> dict:
        return asdict(self)


def _standardize(source, target):
    both = np.vstack([source, target])
    mu = both.mean(axis=0)
    sd = both.std(axis=0)
    sd[sd == 0] = 1.0
    return (source - mu) / sd, (target - mu) / sd


def _fit_discriminator(features, labels, weights, ridge, init):
    # a singular Hessian here is almost always separation caught early, so both
    # fall back to the ridge fit
    try:
        return glm.fit_logistic(features, labels, weights, init=init)
    except (Separation, SingularSystem):
        pass
    except NumericalError as exc:
        raise DiscriminatorFailure(str(exc)) from exc
    try:
        return glm.fit_logistic(features, labels, weights, ridge=ridge)
    except NumericalError as exc:
        raise DiscriminatorFailure(str(exc)) from exc


def adversarial_balance(source_covariates, target_covariates,
                        config: ABConfig = ABConfig()) -> tuple[WeightVector, BalanceDiagnostics]:
    """Reweight source rows until a logistic discriminator can no longer
    separate them from the (uniformly weighted) target rows.

    Each round the discriminator is refit with both classes carrying equal
    total mass, its balanced accuracy is measured, and if it still beats
    ``0.5 + epsilon`` every source weight is multiplied by
    ``exp(eta * p_i)``, where ``p_i`` is the predicted target probability.
    """
    src = np.asarray(source_covariates, dtype=float)
    tgt = np.asarray(target_covariates, dtype=float)
    if src.ndim == 1:
        src = src[:, None]
    if tgt.ndim == 1:
        tgt = tgt[:, None]
    if len(src) == 0 or len(tgt) == 0 or src.shape[1] != tgt.shape[1]:
        raise ValidationError("source and target must be nonempty with equal arity")
    n_s = len(src)
    w = np.full(n_s, 1.0 / n_s)
    if n_s == 1:
        return WeightVector(w), BalanceDiagnostics(
            float(np.max(np.abs(src[0] - tgt.mean(axis=0)))), 1.0, 0)

    src_z, tgt_z = _standardize(src, tgt)
    rng = np.random.Generator(np.random.Philox(config.seed))
    coef = None
    rounds = 0
    for rounds in range(1, config.max_rounds + 1):
        tz = tgt_z
        if config.max_target_rows is not None and len(tgt_z) > config.max_target_rows:
            tz = tgt_z[rng.choice(len(tgt_z), config.max_target_rows, replace=False)]
        n_t = len(tz)
        mass = 0.5 * (n_s + n_t)
        feats = np.vstack([tz, src_z])
        labels = np.concatenate([np.ones(n_t), np.zeros(n_s)])
        sw = np.concatenate([np.full(n_t, mass / n_t), mass * w])
        model = _fit_discriminator(feats, labels, sw, config.ridge, coef)
        coef = model.coefficients
        p_src = glm.predict_proba(model, src_z)
        p_tgt = glm.predict_proba(model, tz)
        tpr = float(np.mean(p_tgt > 0.5))
        tnr = float(w @ (p_src <= 0.5))
        if 0.5 * (tpr + tnr) <= 0.5 + config.epsilon:
            break
        logw = np.log(w) + config.eta * p_src
        w = np.exp(logw - logw.max())
        w = _normalize(w)

    ess = effective_sample_size(w)
    if ess < config.min_effective_size:
        raise DegenerateWeights(f"effective sample size {ess:.2f} below "
                                f"{config.min_effective_size}")
    gap = float(np.max(np.abs(w @ src - tgt.mean(axis=0))))
    return WeightVector(w), BalanceDiagnostics(gap, ess, rounds)
