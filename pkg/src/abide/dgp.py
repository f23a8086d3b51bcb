"""Simulation law for survey non-response in a randomised experiment.

Two latent confounders drive both sentiment and the propensity to answer the
survey, and treatment shifts response behaviour but not sentiment:

    X1 ~ Exp(rate 2),  X2 ~ Exp(rate 3)
    S  = 2 X1 - 1.5 X2,                 Y ~ Bernoulli(sigmoid(S))
    T  ~ Bernoulli(1/2)
    R  = X1 T - X2 T - X2 (1 - T) - 2,  D ~ Bernoulli(sigmoid(R))

Y is recorded only when D = 1. The analyst sees either (X1, X2) or the proxy
pair Z1 = exp(X1 / 2), Z2 = X2^2 - X2 + X1 X2.

Randomness is drawn from a Philox counter-based stream keyed by
``(seed, replicate)``; unit ``i`` owns counter blocks ``2i`` and ``2i + 1``
(eight 64-bit words, five of which are used), so any unit can be regenerated
in isolation and chunks can be produced independently.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from abide.data import CovariateSchema, ExperimentDataset
from abide.errors import QuadratureNotConverged, ValidationError

TRUE = "true_confounders"
TRANSFORMED = "transformed_confounders"
_SCENARIO_ALIASES = {"true": TRUE, "1": TRUE, TRUE: TRUE,
                     "transformed": TRANSFORMED, "2": TRANSFORMED, TRANSFORMED: TRANSFORMED}

_WORDS_PER_UNIT = 8
_U_X1, _U_X2, _U_Y, _U_T, _U_D = range(5)


def scenario_name(value) -> str:
    try:
        return _SCENARIO_ALIASES[str(value)]
    except KeyError:
        raise ValidationError(f"unknown scenario {value!r}") from None


@dataclass(frozen=True)
class DgpConfig:
    rate_x1: float = 2.0
    rate_x2: float = 3.0
    sentiment_coeffs: tuple = (2.0, -1.5)
    response_intercept: float = -2.0
    scenario: str = TRUE
    seed: int = 0
    assignment: str = "binomial"  # or "exact": floor(n/2) treated units

    def __post_init__(self):
        if self.rate_x1 <= 0 or self.rate_x2 <= 0:
            raise ValidationError("exponential rates must be positive")
        object.__setattr__(self, "scenario", scenario_name(self.scenario))
        object.__setattr__(self, "sentiment_coeffs", tuple(float(c) for c in self.sentiment_coeffs))
        if len(self.sentiment_coeffs) != 2:
            raise ValidationError("sentiment_coeffs needs two entries")
        if self.assignment not in ("binomial", "exact"):
            raise ValidationError("assignment must be 'binomial' or 'exact'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sentiment_coeffs"] = list(self.sentiment_coeffs)
        return d

    def sentiment_index(self, x1, x2):
        a, b = self.sentiment_coeffs
        return a * x1 + b * x2

    def response_index(self, x1, x2, t):
        return x1 * t - x2 * t - x2 * (1 - t) + self.response_intercept


class Population(NamedTuple):
    """Full latent draw, including outcomes nobody reported."""

    x1: np.ndarray
    x2: np.ndarray
    treatment: np.ndarray
    responded: np.ndarray
    outcome: np.ndarray  # every unit's Y, observed or not


def stream_key(seed: int, replicate: int = 0) -> np.ndarray:
    """128-bit Philox key for one replicate."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(replicate)])
    return ss.generate_state(2, np.uint64)


def unit_uniforms(seed: int, replicate: int, start: int, count: int) -> np.ndarray:
    """Uniforms on [0, 1) for units ``start .. start+count-1``, shape (count, 8)."""
    bitgen = np.random.Philox(key=stream_key(seed, replicate), counter=2 * int(start))
    raw = bitgen.random_raw(_WORDS_PER_UNIT * count).reshape(count, _WORDS_PER_UNIT)
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def simulate_latent(n: int, config: DgpConfig, replicate: int = 0, start: int = 0) -> Population:
    if n < 1:
        raise ValidationError("n must be positive")
    u = unit_uniforms(config.seed, replicate, start, n)
    x1 = -np.log1p(-u[:, _U_X1]) / config.rate_x1
    x2 = -np.log1p(-u[:, _U_X2]) / config.rate_x2
    y = (u[:, _U_Y] < expit(config.sentiment_index(x1, x2))).astype(float)
    if config.assignment == "exact":
        t = np.zeros(n, dtype=np.int8)
        t[np.argsort(u[:, _U_T], kind="stable")[: n // 2]] = 1
    else:
        t = (u[:, _U_T] < 0.5).astype(np.int8)
    d = u[:, _U_D] < expit(config.response_index(x1, x2, t))
    return Population(x1, x2, t, d, y)


def observed_covariates(x1, x2, scenario: str):
    if scenario_name(scenario) == TRUE:
        return ("x1", "x2"), np.column_stack([x1, x2])
    return ("z1", "z2"), np.column_stack([np.exp(x1 / 2.0), x2 * x2 - x2 + x1 * x2])


def generate_population(n: int, config: DgpConfig, replicate: int = 0) -> ExperimentDataset:
    """Draw ``n`` units and return what an analyst would observe."""
    if n < 2:
        raise ValidationError("n must be at least 2")
    pop = simulate_latent(n, config, replicate)
    names, cov = observed_covariates(pop.x1, pop.x2, config.scenario)
    return ExperimentDataset.from_arrays(
        CovariateSchema(names), pop.treatment, pop.responded, cov,
        pop.outcome[pop.responded], unit_ids=[str(i) for i in range(n)])


@dataclass(frozen=True)
class TruthStats:
    ate: float
    atetr: float
    resp_rate_treated: float
    resp_rate_control: float
    observed_gap: float
    mean_outcome: float = float("nan")
    treated_respondent_mean: float = float("nan")
    control_respondent_mean: float = float("nan")

    def __post_init__(self):
        for r in (self.resp_rate_treated, self.resp_rate_control):
            if not 0 < r < 1:
                raise ValidationError("response rates must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def _gl_nodes(upper: float, panels: int, order: int = 12):
    g, gw = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, upper, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    weights = (half[:, None] * gw[None, :]).ravel()
    return nodes, weights


def _moments(config: DgpConfig, panels: int) -> np.ndarray:
    q1 = -np.log(1e-8) / config.rate_x1
    q2 = -np.log(1e-8) / config.rate_x2
    a, wa = _gl_nodes(q1, panels)
    b, wb = _gl_nodes(q2, panels)
    dens = ((wa * config.rate_x1 * np.exp(-config.rate_x1 * a))[:, None]
            * (wb * config.rate_x2 * np.exp(-config.rate_x2 * b))[None, :])
    x1, x2 = a[:, None], b[None, :]
    py = expit(config.sentiment_index(x1, x2))
    d1 = expit(config.response_index(x1, x2, 1))
    d0 = expit(config.response_index(x1, x2, 0))
    mass = dens.sum()
    return np.array([np.sum(dens * f) for f in (d1, d0, py, py * d1, py * d0)]) / mass


def population_truths(config: DgpConfig = DgpConfig(), tol: float = 1e-5,
                      max_panels: int = 1024) -> TruthStats:
    """Population quantities by tensor Gauss-Legendre quadrature.

    The domain is truncated at the 1 - 1e-8 quantile of each exponential and
    the panel count doubles until successive estimates agree to ``tol / 10``.
    Sentiment does not depend on treatment, so the ATE and the effect on
    treated respondents are exactly zero.
    """
    panels, prev = 4, None
    while panels <= max_panels:
        cur = _moments(config, panels)
        if prev is not None and np.max(np.abs(cur - prev)) < tol / 10:
            break
        prev, panels = cur, panels * 2
    else:
        raise QuadratureNotConverged(f"no agreement to {tol} within {max_panels} panels")
    e_d1, e_d0, e_y, e_yd1, e_yd0 = cur
    m1, m0 = e_yd1 / e_d1, e_yd0 / e_d0
    return TruthStats(ate=0.0, atetr=0.0, resp_rate_treated=float(e_d1),
                      resp_rate_control=float(e_d0), observed_gap=float(m1 - m0),
                      mean_outcome=float(e_y), treated_respondent_mean=float(m1),
                      control_respondent_mean=float(m0))


def monte_carlo_truths(config: DgpConfig, draws: int = 10_000_000,
                       chunk: int = 1_000_000) -> TruthStats:
    """Sampling estimate of the same quantities, from the full latent draw.

    Each unit is evaluated under both arms with its own uniforms; potential
    outcomes share the unit's sentiment draw, which is what makes the effects
    vanish.
    """
    s_d1 = s_d0 = s_y = s_yd1 = s_yd0 = 0.0
    s_eff_ate = s_eff_atetr = 0.0
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        u = unit_uniforms(config.seed, 0, done, m)
        x1 = -np.log1p(-u[:, _U_X1]) / config.rate_x1
        x2 = -np.log1p(-u[:, _U_X2]) / config.rate_x2
        p_y = expit(config.sentiment_index(x1, x2))
        y = (u[:, _U_Y] < p_y).astype(float)
        y1 = y0 = y
        d1 = u[:, _U_D] < expit(config.response_index(x1, x2, 1))
        d0 = u[:, _U_D] < expit(config.response_index(x1, x2, 0))
        s_d1 += d1.sum()
        s_d0 += d0.sum()
        s_y += y.sum()
        s_yd1 += y[d1].sum()
        s_yd0 += y[d0].sum()
        s_eff_ate += np.sum(y1 - y0)
        s_eff_atetr += np.sum((y1 - y0)[d1])
        done += m
    return TruthStats(ate=float(s_eff_ate / draws), atetr=float(s_eff_atetr / s_d1),
                      resp_rate_treated=float(s_d1 / draws),
                      resp_rate_control=float(s_d0 / draws),
                      observed_gap=float(s_yd1 / s_d1 - s_yd0 / s_d0),
                      mean_outcome=float(s_y / draws),
                      treated_respondent_mean=float(s_yd1 / s_d1),
                      control_respondent_mean=float(s_yd0 / s_d0))
