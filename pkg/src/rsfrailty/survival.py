"""Parametric baselines, survival identities and the frailty log-likelihood.

Censoring classes are stored as small integer codes (:data:`EVENT`,
:data:`RIGHT`, :data:`LEFT`, :data:`INTERVAL`). For interval records the
``time`` array holds the lower bound and ``time_upper`` the upper bound.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

log = logging.getLogger(__name__)

EVENT, RIGHT, LEFT, INTERVAL = 0, 1, 2, 3
CENSOR_CODES = {"event": EVENT, "right": RIGHT, "left": LEFT, "interval": INTERVAL}
CENSOR_NAMES = {v: k for k, v in CENSOR_CODES.items()}

LINPRED_CLAMP = 700.0

# parameter names, the shape-type parameters sampled by default, and the
# scale/location parameter that an intercept would absorb (with its neutral value)
FAMILIES = {
    "exponential": (("lambda",), (), ("lambda", 1.0)),
    "weibull": (("alpha", "lambda"), ("alpha",), ("lambda", 1.0)),
    "lognormal": (("mu", "sigma"), ("sigma",), ("mu", 0.0)),
    "gamma": (("alpha", "lambda"), ("alpha",), ("lambda", 1.0)),
}
POSITIVE = {"lambda", "alpha", "sigma"}


@dataclass(frozen=True)
class BaselineFamily:
    """A baseline distribution with concrete parameter values.

    >>> BaselineFamily.make("weibull", alpha=1.2, lambda_=1.0).params
    {'alpha': 1.2, 'lambda': 1.0}
    """

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in FAMILIES:
            raise ValueError(f"unknown family {self.name!r}; choose from {sorted(FAMILIES)}")
        names = FAMILIES[self.name][0]
        missing = [p for p in names if p not in self.params]
        if missing:
            raise ValueError(f"{self.name} needs parameters {missing}")
        for p in names:
            v = self.params[p]
            if not np.isfinite(v):
                raise ValueError(f"{self.name} parameter {p} must be finite, got {v}")
            if p in POSITIVE and not v > 0:
                raise ValueError(f"{self.name} parameter {p} must be positive, got {v}")

    @classmethod
    def make(cls, name: str, **params) -> "BaselineFamily":
        # ``lambda`` is a keyword, so ``lambda_`` is accepted too
        clean = {k.rstrip("_"): float(v) for k, v in params.items()}
        return cls(name, clean)

    @property
    def param_names(self) -> tuple[str, ...]:
        return FAMILIES[self.name][0]

    def with_params(self, **updates) -> "BaselineFamily":
        return BaselineFamily(self.name, {**self.params, **updates})

    # -- vectorised primitives (t > 0 assumed) ---------------------------------

    def log_hazard(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.name == "exponential":
            return np.full_like(t, math.log(p["lambda"]))
        if self.name == "weibull":
            a, lam = p["alpha"], p["lambda"]
            return math.log(a * lam) + (a - 1.0) * np.log(t)
        return self.log_pdf(t) - self.log_survival(t)

    def cumhazard(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.name == "exponential":
            return p["lambda"] * t
        if self.name == "weibull":
            return p["lambda"] * t ** p["alpha"]
        return -self.log_survival(t)

    def log_survival(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.name in ("exponential", "weibull"):
            return -self.cumhazard(t)
        if self.name == "lognormal":
            z = (np.log(t) - p["mu"]) / p["sigma"]
            return special.log_ndtr(-z)
        return _log_gammaincc(p["alpha"], p["lambda"] * t)

    def log_pdf(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.name in ("exponential", "weibull"):
            return self.log_hazard(t) - self.cumhazard(t)
        if self.name == "lognormal":
            mu, s = p["mu"], p["sigma"]
            z = (np.log(t) - mu) / s
            return -0.5 * z * z - 0.5 * math.log(2 * math.pi) - np.log(s * t)
        a, lam = p["alpha"], p["lambda"]
        return a * math.log(lam) - special.gammaln(a) + (a - 1.0) * np.log(t) - lam * t

    def hazard(self, t):
        return np.exp(self.log_hazard(t))

    def survival(self, t):
        return np.exp(self.log_survival(t))

    def pdf(self, t):
        return np.exp(self.log_pdf(t))


def _log_gammaincc(a: float, x):
    """log of the upper regularised incomplete gamma, stable in the far tail."""
    x = np.asarray(x, dtype=float)
    q = special.gammaincc(a, x)
    with np.errstate(divide="ignore"):
        out = np.log(q)
    tiny = q < 1e-300
    if np.any(tiny):
        # asymptotic expansion of Gamma(a, x) for large x
        xt = x[tiny] if x.ndim else x
        series = 1.0 + (a - 1.0) / xt + (a - 1.0) * (a - 2.0) / xt**2
        val = (a - 1.0) * np.log(xt) - xt + np.log(np.abs(series)) - special.gammaln(a)
        if x.ndim:
            out[tiny] = val
        else:
            out = val
    return out


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(~(t > 0)):
        raise ValueError("survival times must be strictly positive")
    return t


def baseline_hazard(fam: BaselineFamily, t):
    return fam.hazard(_check_time(t))


def baseline_cumhazard(fam: BaselineFamily, t):
    return fam.cumhazard(_check_time(t))


def clamp_linpred(eta):
    eta = np.asarray(eta, dtype=float)
    if np.any(np.abs(eta) > LINPRED_CLAMP):
        log.info("linear predictor clamped to +/-%g", LINPRED_CLAMP)
        eta = np.clip(eta, -LINPRED_CLAMP, LINPRED_CLAMP)
    return eta


def survival_fn(fam: BaselineFamily, t, linpred=0.0):
    """Proportional-hazards survival ``exp(-H0(t) * exp(linpred))``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("survival times must be non-negative")
    eta = clamp_linpred(linpred)
    H = np.where(t > 0, fam.cumhazard(np.where(t > 0, t, 1.0)), 0.0)
    return np.exp(-H * np.exp(eta))


def cure_survival(c: float, s_star):
    """Mixture cure survival ``c + (1 - c) * s_star``."""
    if not 0.0 <= c < 1.0:
        raise ValueError(f"cure fraction must lie in [0, 1), got {c}")
    s_star = np.asarray(s_star, dtype=float)
    if np.any((s_star < 0) | (s_star > 1)):
        raise ValueError("s_star must be a probability")
    return c + (1.0 - c) * s_star


# -----------------------------------------------------------------------------
# data
# -----------------------------------------------------------------------------


@dataclass
class SurvivalDataset:
    """Individual records grouped into areas.

    ``area`` is 1-indexed, ``censor`` holds integer class codes, and
    ``time_upper`` is NaN except on interval-censored rows.
    """

    time: np.ndarray
    censor: np.ndarray
    X: np.ndarray
    area: np.ndarray
    n_areas: int
    time_upper: np.ndarray | None = None
    covariates: tuple[str, ...] = ()
    check_rank: bool = True

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.censor = np.asarray(self.censor, dtype=int)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.X.shape[0] != self.time.size and self.X.shape[1] == self.time.size:
            self.X = self.X.T
        self.area = np.asarray(self.area, dtype=int)
        N = self.time.size
        if self.time_upper is None:
            self.time_upper = np.full(N, np.nan)
        self.time_upper = np.asarray(self.time_upper, dtype=float)
        if not (self.censor.size == self.area.size == self.X.shape[0] == self.time_upper.size == N):
            raise ValueError("time, censor, X, area and time_upper must have one entry per record")
        if not self.covariates:
            self.covariates = tuple(f"x{k + 1}" for k in range(self.p))
        if len(self.covariates) != self.p:
            raise ValueError("one covariate name per design column is required")
        bad = (self.area < 1) | (self.area > self.n_areas)
        if np.any(bad):
            raise ValueError(f"record {int(np.argmax(bad))}: area index outside 1..{self.n_areas}")
        if np.any(~np.isin(self.censor, list(CENSOR_NAMES))):
            raise ValueError("unknown censoring code")
        if np.any(~(self.time > 0)):
            raise ValueError(f"record {int(np.argmax(~(self.time > 0)))}: time must be positive")
        iv = self.censor == INTERVAL
        if np.any(iv & ~(self.time_upper > self.time)):
            k = int(np.argmax(iv & ~(self.time_upper > self.time)))
            raise ValueError(f"record {k}: interval bounds must satisfy lower < upper")
        if self.check_rank and self.p and np.linalg.matrix_rank(self.X) < self.p:
            raise ValueError("design matrix X is not of full column rank")

    @property
    def N(self) -> int:
        return self.time.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.area - 1, minlength=self.n_areas)

    def scaled(self) -> "SurvivalDataset":
        """Copy with every time divided by the largest observed time."""
        tmax = np.nanmax(np.concatenate([self.time, self.time_upper]))
        return SurvivalDataset(
            self.time / tmax, self.censor, self.X, self.area, self.n_areas,
            self.time_upper / tmax, self.covariates, check_rank=False,
        )

    def with_intercept(self) -> "SurvivalDataset":
        X = np.column_stack([np.ones(self.N), self.X])
        return SurvivalDataset(
            self.time, self.censor, X, self.area, self.n_areas,
            self.time_upper, ("intercept",) + tuple(self.covariates),
        )

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.asarray(idx)
        return SurvivalDataset(
            self.time[idx], self.censor[idx], self.X[idx], self.area[idx], self.n_areas,
            self.time_upper[idx], self.covariates, check_rank=False,
        )


# -----------------------------------------------------------------------------
# likelihood
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class BaselineTerms:
    """Baseline quantities at each record's time(s) for fixed family parameters."""

    log_h0: np.ndarray
    H0: np.ndarray
    H0_upper: np.ndarray


def baseline_terms(fam: BaselineFamily, data: SurvivalDataset) -> BaselineTerms:
    t = data.time
    log_h0 = np.zeros_like(t)
    ev = data.censor == EVENT
    if np.any(ev):
        log_h0[ev] = fam.log_hazard(t[ev])
    H0 = fam.cumhazard(t)
    H0_upper = np.zeros_like(t)
    iv = data.censor == INTERVAL
    if np.any(iv):
        H0_upper[iv] = fam.cumhazard(data.time_upper[iv])
    return BaselineTerms(log_h0, H0, H0_upper)


def record_loglik(censor: np.ndarray, terms: BaselineTerms, eta: np.ndarray) -> np.ndarray:
    """Per-record log-likelihood contributions for linear predictor ``eta``."""
    eta = clamp_linpred(eta)
    risk = np.exp(eta)
    cum = terms.H0 * risk
    out = -cum  # right-censored: log S
    ev = censor == EVENT
    out[ev] += terms.log_h0[ev] + eta[ev]
    left = censor == LEFT
    if np.any(left):
        with np.errstate(divide="ignore"):
            out[left] = np.log(-np.expm1(-cum[left]))
    iv = censor == INTERVAL
    if np.any(iv):
        gap = (terms.H0_upper[iv] - terms.H0[iv]) * risk[iv]
        with np.errstate(divide="ignore", invalid="ignore"):
            val = -cum[iv] + np.log(-np.expm1(-gap))
        degenerate = ~(gap > 0)
        if np.any(degenerate):
            log.warning("%d interval record(s) with S(t1) <= S(t2); likelihood is -inf", degenerate.sum())
            val[degenerate] = -np.inf
        out[iv] = val
    return out


def linear_predictor(data: SurvivalDataset, beta, psi=None, eps=None) -> np.ndarray:
    eta = data.X @ np.asarray(beta, dtype=float)
    if psi is not None:
        eta = eta + np.asarray(psi, dtype=float)[data.area - 1]
    if eps is not None:
        eta = eta + np.asarray(eps, dtype=float)
    return eta


def log_likelihood(data: SurvivalDataset, fam: BaselineFamily, beta, psi=None, eps=None) -> float:
    """Frailty log-likelihood summed over the four censoring classes."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.p,):
        raise ValueError(f"beta must have length {data.p}")
    if psi is not None and np.shape(psi) != (data.n_areas,):
        raise ValueError(f"psi must have length {data.n_areas}")
    if eps is not None and np.shape(eps) != (data.N,):
        raise ValueError(f"eps must have length {data.N}")
    eta = linear_predictor(data, beta, psi, eps)
    # correctly rounded sum: independent of record order
    return math.fsum(record_loglik(data.censor, baseline_terms(fam, data), eta))
