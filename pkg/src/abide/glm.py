"""Weighted logistic regression (IRLS) and ordinary least squares.

Both fitters prepend an intercept column, so ``coefficients[0]`` is always
the intercept and ``coefficients[1:]`` line up with the feature columns.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from abide.errors import (
    ArityMismatch,
    DidNotConverge,
    RankDeficient,
    Separation,
    SingularSystem,
    ValidationError,
)

MAX_ITER = 100
TOL = 1e-8
NORM_CAP = 30.0
MAX_HALVINGS = 30


def _design(features, n=None) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if n is None or len(x) == n else x.reshape(n, -1)
    return np.column_stack([np.ones(len(x)), x])


@dataclass(frozen=True)
class LogisticModel:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    final_deviance: float
    loglik_path: tuple = field(default=(), repr=False)

    @property
    def arity(self) -> int:
        return len(self.coefficients) - 1


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray

    def predict(self, features) -> np.ndarray:
        x = _design(features)
        if x.shape[1] != len(self.coefficients):
            raise ArityMismatch(f"model expects {len(self.coefficients) - 1} features, "
                                f"got {x.shape[1] - 1}")
        return x @ self.coefficients


def _loglik(x, y, w, beta, penalty):
    eta = x @ beta
    ll = float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))
    return ll - 0.5 * float(np.sum(penalty * beta * beta)), ll


def fit_logistic(features, labels, sample_weights=None, *, ridge: float = 0.0,
                 max_iter: int = MAX_ITER, tol: float = TOL, norm_cap: float = NORM_CAP,
                 init=None) -> LogisticModel:
    """Maximise the (weighted) Bernoulli log-likelihood with a logit link.

    Newton/IRLS steps are halved until the penalised log-likelihood stops
    decreasing, so the objective is monotone across iterations. ``ridge``
    adds an L2 penalty on the slopes (never the intercept); it is the escape
    hatch when :class:`~abide.errors.Separation` is raised. ``init`` warm-starts
    the coefficients.
    """
    y = np.asarray(labels, dtype=float)
    n = len(y)
    x = _design(features, n)
    if x.shape[0] != n:
        raise ArityMismatch(f"{x.shape[0]} feature rows but {n} labels")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValidationError("labels must be 0/1")
    if sample_weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(sample_weights, dtype=float)
        if w.shape != (n,) or (w < 0).any() or not np.isfinite(w).all() or w.sum() <= 0:
            raise ValidationError("sample weights must be nonnegative, finite, positive sum")
    live = w > 0
    if not (y[live] == 1).any() or not (y[live] == 0).any():
        raise ValidationError("labels need at least one 0 and one 1")

    p_dim = x.shape[1]
    penalty = np.full(p_dim, float(ridge))
    penalty[0] = 0.0
    beta = np.zeros(p_dim) if init is None else np.array(init, dtype=float)
    if beta.shape != (p_dim,):
        raise ArityMismatch("init has the wrong length")

    obj, ll = _loglik(x, y, w, beta, penalty)
    path = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        prob = expit(x @ beta)
        grad = x.T @ (w * (y - prob)) - penalty * beta
        hess = (x.T * (w * prob * (1.0 - prob))) @ x + np.diag(penalty)
        scale = np.sqrt(np.clip(np.diag(hess), 1e-300, None))
        scaled = hess / np.outer(scale, scale)
        eig = np.linalg.eigvalsh(scaled)
        if not np.isfinite(eig).all() or eig[0] <= 1e-12 * max(eig[-1], 1e-300) \
                or (np.diag(hess) <= 1e-300).any():
            if ridge == 0 and np.linalg.norm(beta) > norm_cap / 3:
                raise Separation("Hessian degenerate while coefficients diverge "
                                 f"(norm {np.linalg.norm(beta):.1f})")
            raise SingularSystem("IRLS Hessian is singular; check for constant or "
                                 "collinear features")
        step = np.linalg.solve(scaled, grad / scale) / scale

        t = 1.0
        for _ in range(MAX_HALVINGS):
            new_obj, new_ll = _loglik(x, y, w, beta + t * step, penalty)
            if new_obj >= obj - 1e-12 * max(1.0, abs(obj)):
                break
            t *= 0.5
        else:
            # no ascent direction left; treat as a stationary point
            converged = True
            break
        improved = new_obj - obj
        beta = beta + t * step
        obj, ll = new_obj, new_ll
        path.append(ll)
        if np.max(np.abs(t * step)) < tol:
            converged = True
            break
        # with a ridge the maximiser is finite, however large, so the cap only
        # guards the unpenalised fit
        if ridge == 0 and np.linalg.norm(beta) > norm_cap and improved > 0:
            raise Separation(f"coefficient norm {np.linalg.norm(beta):.1f} exceeds {norm_cap} "
                             "while the deviance keeps falling (quasi-complete separation)")
    if not converged:
        warnings.warn(f"IRLS hit the {max_iter}-iteration cap", DidNotConverge, stacklevel=2)
    if not np.isfinite(beta).all():
        raise SingularSystem("non-finite coefficients")
    beta.setflags(write=False)
    return LogisticModel(beta, converged, it, -2.0 * ll, tuple(path))


def _check_arity(model: LogisticModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if model.arity == 1 else x[None, :]
    if x.shape[1] != model.arity:
        raise ArityMismatch(f"model expects {model.arity} features, got {x.shape[1]}")
    return np.column_stack([np.ones(len(x)), x])


def predict_proba(model: LogisticModel, features) -> np.ndarray:
    x = _check_arity(model, features)
    return expit(x @ model.coefficients)


def predict_proba_jacobian(model: LogisticModel, features) -> np.ndarray:
    """d p_i / d coefficients, shape (n_rows, n_coefficients)."""
    x = _check_arity(model, features)
    p = expit(x @ model.coefficients)
    return (p * (1.0 - p))[:, None] * x


def fit_ols(features, response) -> LinearModel:
    """Least squares via a thin QR decomposition of the intercept-augmented design."""
    y = np.asarray(response, dtype=float)
    x = _design(features, len(y))
    n, p = x.shape
    if n != len(y):
        raise ArityMismatch(f"{n} feature rows but {len(y)} responses")
    if n < p:
        raise RankDeficient(f"{n} rows cannot identify {p} coefficients")
    q, r = np.linalg.qr(x)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1.0) * max(n, p):
        raise RankDeficient("design matrix is rank deficient")
    coef = np.linalg.solve(r, q.T @ y)
    coef.setflags(write=False)
    return LinearModel(coef)
