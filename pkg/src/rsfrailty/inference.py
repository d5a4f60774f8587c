"""Posterior sampling for the unrestricted spatial frailty model.

The sampler is an adaptive random-walk Metropolis-within-Gibbs scheme:

* baseline shape parameters, jointly on the log scale;
* regression coefficients, jointly, with a proposal covariance learned
  during burn-in;
* a joint (beta, psi) move that shifts coefficients and offsets the
  area effects by the area means of the implied change in ``X beta``,
  which keeps spatially confounded coefficients mixing;
* area effects, one colour class of a proper graph colouring at a time
  (areas in a class are conditionally independent, so every area in the
  class gets its own accept/reject from one vectorised evaluation);
* the ICAR precision from its Gamma full conditional (or by random walk);
* optional individual frailties and their precision.

Proposal scales are tuned in batches of 50 iterations during burn-in
only, so the stored chain is a fixed-kernel Markov chain.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, special

from .graph import AreaGraph, greedy_coloring, require_icar_ready
from .survival import (
    FAMILIES,
    BaselineFamily,
    SurvivalDataset,
    baseline_terms,
    record_loglik,
)

log = logging.getLogger(__name__)

ADAPT_BATCH = 50
ACCEPT_LOW, ACCEPT_HIGH = 0.25, 0.45
SCALE_BOUNDS = (1e-10, 1e8)


def log_gamma_pdf(x, shape: float, rate: float):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = shape * math.log(rate) - special.gammaln(shape) + (shape - 1.0) * np.log(x) - rate * x
    return np.where(x > 0, out, -np.inf)


def log_normal_pdf(x, mean: float, precision: float):
    x = np.asarray(x, dtype=float)
    return 0.5 * math.log(precision / (2 * math.pi)) - 0.5 * precision * (x - mean) ** 2


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters; Gamma priors use shape/rate."""

    shape_a: float = 0.001
    shape_b: float = 0.001
    beta_mean: float = 0.0
    beta_prec: float = 0.001
    tau_psi_a: float = 0.5
    tau_psi_b: float = 0.0005
    tau_eps_a: float = 1.0
    tau_eps_b: float = 0.01
    loc_mean: float = 0.0
    loc_prec: float = 0.001

    def __post_init__(self):
        for name in ("shape_a", "shape_b", "beta_prec", "tau_psi_a", "tau_psi_b",
                     "tau_eps_a", "tau_eps_b", "loc_prec"):
            if not getattr(self, name) > 0:
                raise ValueError(f"prior hyperparameter {name} must be positive")


@dataclass(frozen=True)
class ModelSpec:
    """Which unrestricted model to fit.

    The family's scale (or, for the lognormal, location) parameter is held
    at its neutral value unless ``free_scale`` is set; with an intercept
    the linear predictor carries it anyway.
    """

    family: str = "weibull"
    intercept: bool = False
    spatial: bool = True
    eps: bool = False
    free_scale: bool = False
    fixed: dict = field(default_factory=dict)
    priors: PriorSpec = field(default_factory=PriorSpec)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")

    @property
    def sampled_params(self) -> tuple[str, ...]:
        names, shapes, (scale, _) = FAMILIES[self.family]
        free = [p for p in names if p in shapes or (self.free_scale and p == scale)]
        return tuple(p for p in free if p not in self.fixed)

    def fixed_params(self) -> dict:
        names, _, (scale, neutral) = FAMILIES[self.family]
        out = {scale: neutral} if scale not in self.sampled_params else {}
        out.update(self.fixed)
        return {k: float(v) for k, v in out.items() if k in names and k not in self.sampled_params}

    def family_at(self, theta: dict) -> BaselineFamily:
        return BaselineFamily(self.family, {**self.fixed_params(), **theta})


@dataclass(frozen=True)
class MCMCConfig:
    iterations: int = 15000
    burn_in: int = 5000
    thin: int = 2
    seed: int | None = None
    tau_gibbs: bool = True

    def __post_init__(self):
        if self.iterations <= self.burn_in:
            raise ValueError("iterations must exceed burn_in")
        if self.burn_in < 0 or self.thin < 1:
            raise ValueError("burn_in must be >= 0 and thin >= 1")

    @property
    def n_draws(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))


@dataclass
class State:
    theta: dict
    beta: np.ndarray
    psi: np.ndarray | None = None
    tau_psi: float | None = None
    eps: np.ndarray | None = None
    tau_eps: float | None = None


def design_for(data: SurvivalDataset, spec: ModelSpec) -> SurvivalDataset:
    return data.with_intercept() if spec.intercept else data


def beta_names(data: SurvivalDataset, spec: ModelSpec) -> list[str]:
    start = 0 if spec.intercept else 1
    return [f"beta_{k}" for k in range(start, start + data.p + int(spec.intercept))]


def _log_prior_theta(theta: dict, spec: ModelSpec) -> float:
    pr = spec.priors
    total = 0.0
    for name, v in theta.items():
        if name == "mu":
            total += float(log_normal_pdf(v, pr.loc_mean, pr.loc_prec))
        else:
            total += float(log_gamma_pdf(v, pr.shape_a, pr.shape_b))
    return total


def log_posterior(state: State, data: SurvivalDataset, graph: AreaGraph | None, spec: ModelSpec) -> float:
    """Unnormalised log posterior of the unrestricted model.

    ``data`` is the raw dataset; the intercept column is added here when
    ``spec.intercept`` is set. Invalid parameter values give ``-inf``.
    """
    pr = spec.priors
    X = design_for(data, spec)
    try:
        fam = spec.family_at(state.theta)
    except ValueError:
        return -math.inf
    beta = np.asarray(state.beta, dtype=float)
    eta = X.X @ beta
    lp = _log_prior_theta(state.theta, spec)
    lp += float(np.sum(log_normal_pdf(beta, pr.beta_mean, pr.beta_prec)))
    if spec.spatial:
        tau = state.tau_psi
        if tau is None or not tau > 0:
            return -math.inf
        psi = np.asarray(state.psi, dtype=float)
        eta = eta + psi[data.area - 1]
        lp += 0.5 * (graph.n - 1) * math.log(tau) - 0.5 * tau * float(graph.pairwise_sq_diff(psi))
        lp += float(log_gamma_pdf(tau, pr.tau_psi_a, pr.tau_psi_b))
    if spec.eps:
        te = state.tau_eps
        if te is None or not te > 0:
            return -math.inf
        eps = np.asarray(state.eps, dtype=float)
        eta = eta + eps
        lp += 0.5 * data.N * math.log(te) - 0.5 * te * float(eps @ eps)
        lp += float(log_gamma_pdf(te, pr.tau_eps_a, pr.tau_eps_b))
    ll = float(np.sum(record_loglik(X.censor, baseline_terms(fam, X), eta)))
    out = ll + lp
    return out if np.isfinite(out) else -math.inf


# -----------------------------------------------------------------------------
# draws container
# -----------------------------------------------------------------------------


@dataclass
class PosteriorDraws:
    """Stored draws, one row per retained iteration."""

    theta: dict
    beta: np.ndarray
    beta_names: list
    tau_psi: np.ndarray | None = None
    psi: np.ndarray | None = None
    eps: np.ndarray | None = None
    tau_eps: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        if self.beta.shape[0] == 0:
            raise ValueError("posterior draws must contain at least one draw")
        self.theta = {k: np.asarray(v, dtype=float) for k, v in self.theta.items()}
        for name in ("tau_psi", "tau_eps"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float))
        for name in ("psi", "eps"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.atleast_2d(np.asarray(v, dtype=float)))
        S = self.n_draws
        pieces = [self.tau_psi, self.psi, self.eps, self.tau_eps, *self.theta.values()]
        if any(v is not None and v.shape[0] != S for v in pieces):
            raise ValueError("every parameter needs the same number of draws")
        if len(self.beta_names) != self.beta.shape[1]:
            raise ValueError("one name per coefficient column is required")

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    @property
    def has_intercept(self) -> bool:
        return bool(self.beta_names) and self.beta_names[0] == "beta_0"

    def hyper_columns(self) -> dict:
        out = dict(self.theta)
        if self.tau_psi is not None:
            out["tau_psi"] = self.tau_psi
        if self.tau_eps is not None:
            out["tau_eps"] = self.tau_eps
        return out

    def columns(self) -> dict:
        """Ordered column name -> 1-D array mapping (the draws file layout)."""
        cols = dict(self.theta)
        cols.update({name: self.beta[:, k] for k, name in enumerate(self.beta_names)})
        if self.tau_psi is not None:
            cols["tau_psi"] = self.tau_psi
        if self.psi is not None:
            cols.update({f"psi_{i + 1}": self.psi[:, i] for i in range(self.psi.shape[1])})
        if self.tau_eps is not None:
            cols["tau_eps"] = self.tau_eps
        if self.eps is not None:
            cols.update({f"eps_{j + 1}": self.eps[:, j] for j in range(self.eps.shape[1])})
        return cols

    def state(self, s: int) -> State:
        return State(
            theta={k: float(v[s]) for k, v in self.theta.items()},
            beta=self.beta[s],
            psi=None if self.psi is None else self.psi[s],
            tau_psi=None if self.tau_psi is None else float(self.tau_psi[s]),
            eps=None if self.eps is None else self.eps[s],
            tau_eps=None if self.tau_eps is None else float(self.tau_eps[s]),
        )


# -----------------------------------------------------------------------------
# sampler
# -----------------------------------------------------------------------------


class _Adapter:
    """Batch acceptance bookkeeping and scale tuning for one block."""

    def __init__(self, scale):
        self.log_scale = np.log(np.asarray(scale, dtype=float))
        self.acc = np.zeros_like(self.log_scale)
        self.tries = 0
        self.total_acc = np.zeros_like(self.log_scale)
        self.total_tries = 0
        self.batches = 0

    @property
    def scale(self):
        return np.exp(self.log_scale)

    def record(self, accepted):
        self.acc += accepted
        self.tries += 1
        self.total_acc += accepted
        self.total_tries += 1

    def tune(self, name: str):
        if self.tries == 0:
            return
        self.batches += 1
        rate = self.acc / self.tries
        step = min(0.5, 2.0 / math.sqrt(self.batches))
        self.log_scale = np.where(rate < ACCEPT_LOW, self.log_scale - step, self.log_scale)
        self.log_scale = np.where(rate > ACCEPT_HIGH, self.log_scale + step, self.log_scale)
        self.acc[...] = 0
        self.tries = 0
        sc = self.scale
        if not np.all(np.isfinite(sc)) or np.any(sc < SCALE_BOUNDS[0]) or np.any(sc > SCALE_BOUNDS[1]):
            raise RuntimeError(
                f"divergent adaptation in block {name!r}: proposal scale left "
                f"[{SCALE_BOUNDS[0]:g}, {SCALE_BOUNDS[1]:g}] (last batch acceptance {np.mean(rate):.3f})"
            )

    def reset_totals(self):
        self.total_acc[...] = 0
        self.total_tries = 0

    def rate(self) -> float:
        return float(np.mean(self.total_acc) / self.total_tries) if self.total_tries else float("nan")


class _Chain:
    def __init__(self, data: SurvivalDataset, graph: AreaGraph | None, spec: ModelSpec, rng):
        self.raw = data
        self.data = design_for(data, spec)
        self.graph = graph
        self.spec = spec
        self.rng = rng
        self.pr = spec.priors
        self.area0 = data.area - 1
        self.n = data.n_areas
        self.X = self.data.X
        self.p = self.X.shape[1]
        self.names = spec.sampled_params
        if spec.spatial:
            if graph is None:
                raise ValueError("a spatial model needs an area graph")
            if graph.n != data.n_areas:
                raise ValueError(f"graph has {graph.n} areas but the dataset declares {data.n_areas}")
            require_icar_ready(graph)
            self.edges = graph.edge_index()
            self.W = graph.W
            self.w = graph.D_w
            self.classes = greedy_coloring(graph)
            counts = np.bincount(self.area0, minlength=self.n)
            means = np.zeros((self.n, self.p))
            np.add.at(means, self.area0, self.X)
            means = np.divide(means, counts[:, None], out=np.zeros_like(means), where=counts[:, None] > 0)
            self.shift_map = means - means.mean(axis=0)

    # -- parameter transforms ---------------------------------------------------

    def _theta_from(self, u) -> dict:
        return {k: (float(v) if k == "mu" else math.exp(v)) for k, v in zip(self.names, u)}

    def _u_from(self, theta: dict) -> np.ndarray:
        return np.array([theta[k] if k == "mu" else math.log(theta[k]) for k in self.names])

    def _log_prior_u(self, u) -> float:
        theta = self._theta_from(u)
        jac = sum(v for k, v in zip(self.names, u) if k != "mu")
        return _log_prior_theta(theta, self.spec) + jac

    def _beta_prior(self, beta) -> float:
        return float(np.sum(log_normal_pdf(beta, self.pr.beta_mean, self.pr.beta_prec)))

    def _icar(self, psi, tau) -> float:
        i, j = self.edges
        d = psi[i] - psi[j]
        return -0.5 * tau * float(d @ d)

    # -- state -------------------------------------------------------------------

    def _eta(self):
        eta = self.X @ self.beta
        if self.spec.spatial:
            eta = eta + self.psi[self.area0]
        if self.spec.eps:
            eta = eta + self.eps
        return eta

    def _refresh(self):
        self.eta = self._eta()
        self.ll = record_loglik(self.data.censor, self.terms, self.eta)

    def initialise(self):
        spec = self.spec
        u0 = np.zeros(len(self.names))
        beta0 = np.zeros(self.p)

        def neg(z):
            u, b = z[: u0.size], z[u0.size:]
            try:
                terms = baseline_terms(spec.family_at(self._theta_from(u)), self.data)
            except (ValueError, OverflowError):
                return 1e300
            val = np.sum(record_loglik(self.data.censor, terms, self.X @ b))
            val += self._log_prior_u(u) + self._beta_prior(b)
            return -val if np.isfinite(val) else 1e300

        z0 = np.concatenate([u0, beta0])
        if z0.size:
            with warnings.catch_warnings(), np.errstate(all="ignore"):
                warnings.simplefilter("ignore")
                res = optimize.minimize(neg, z0, method="L-BFGS-B")
            if np.isfinite(res.fun) and res.fun < neg(z0):
                z0 = res.x
        self.u = z0[: u0.size].copy()
        self.beta = z0[u0.size:].copy()
        self.theta = self._theta_from(self.u)
        self.terms = baseline_terms(spec.family_at(self.theta), self.data)
        if spec.spatial:
            self.psi = np.zeros(self.n)
            self.tau_psi = 1.0
        if spec.eps:
            self.eps = np.zeros(self.data.N)
            self.tau_eps = 1.0
        self._refresh()
        if not np.isfinite(self.ll.sum()):
            raise RuntimeError("log posterior is not finite at the initial state; check the data")

        cum = self.terms.H0 * np.exp(self.eta)
        info = self.X.T @ (self.X * cum[:, None]) + self.pr.beta_prec * np.eye(self.p)
        try:
            cov = np.linalg.inv(info)
            self.beta_chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            self.beta_chol = np.eye(self.p) * 0.1
        self.ad_theta = _Adapter(0.1)
        self.ad_beta = _Adapter(2.38 / math.sqrt(max(self.p, 1)))
        self.ad_shift = _Adapter(1.0)
        if spec.spatial:
            area_info = np.bincount(self.area0, cum, minlength=self.n)
            self.ad_psi = _Adapter(2.4 / np.sqrt(area_info + self.tau_psi * self.w))
            self.ad_tau = _Adapter(0.3)
        if spec.eps:
            self.ad_eps = _Adapter(np.full(self.data.N, 1.0))

    def state(self) -> State:
        return State(
            theta=dict(self.theta), beta=self.beta.copy(),
            psi=self.psi.copy() if self.spec.spatial else None,
            tau_psi=self.tau_psi if self.spec.spatial else None,
            eps=self.eps.copy() if self.spec.eps else None,
            tau_eps=self.tau_eps if self.spec.eps else None,
        )

    # -- blocks --------------------------------------------------------------------

    def step_theta(self):
        if not self.names:
            return
        u_new = self.u + self.ad_theta.scale * self.rng.standard_normal(self.u.size)
        theta_new = self._theta_from(u_new)
        try:
            with np.errstate(all="ignore"):
                terms = baseline_terms(self.spec.family_at(theta_new), self.data)
                ll_new = record_loglik(self.data.censor, terms, self.eta)
        except (ValueError, OverflowError):
            self.rng.random()
            self.ad_theta.record(0.0)
            return
        logr = np.sum(ll_new) - np.sum(self.ll) + self._log_prior_u(u_new) - self._log_prior_u(self.u)
        ok = math.log(self.rng.random()) < logr
        if ok:
            self.u, self.theta, self.terms, self.ll = u_new, theta_new, terms, ll_new
        self.ad_theta.record(float(ok))

    def step_beta(self):
        if self.p == 0:
            return
        delta = self.ad_beta.scale * (self.beta_chol @ self.rng.standard_normal(self.p))
        eta_new = self.eta + self.X @ delta
        ll_new = record_loglik(self.data.censor, self.terms, eta_new)
        beta_new = self.beta + delta
        logr = np.sum(ll_new) - np.sum(self.ll) + self._beta_prior(beta_new) - self._beta_prior(self.beta)
        ok = math.log(self.rng.random()) < logr
        if ok:
            self.beta, self.eta, self.ll = beta_new, eta_new, ll_new
        self.ad_beta.record(float(ok))

    def step_shift(self):
        if self.p == 0 or not self.spec.spatial:
            return
        delta = self.ad_shift.scale * (self.beta_chol @ self.rng.standard_normal(self.p))
        dpsi = -(self.shift_map @ delta)
        psi_new = self.psi + dpsi
        beta_new = self.beta + delta
        eta_new = self.eta + self.X @ delta + dpsi[self.area0]
        ll_new = record_loglik(self.data.censor, self.terms, eta_new)
        logr = (
            np.sum(ll_new) - np.sum(self.ll)
            + self._beta_prior(beta_new) - self._beta_prior(self.beta)
            + self._icar(psi_new, self.tau_psi) - self._icar(self.psi, self.tau_psi)
        )
        ok = math.log(self.rng.random()) < logr
        if ok:
            self.beta, self.psi, self.eta, self.ll = beta_new, psi_new, eta_new, ll_new
        self.ad_shift.record(float(ok))

    def step_psi(self):
        scale = self.ad_psi.scale
        accepted = np.zeros(self.n)
        for cls in self.classes:
            d_c = scale[cls] * self.rng.standard_normal(cls.size)
            d = np.zeros(self.n)
            d[cls] = d_c
            eta_new = self.eta + d[self.area0]
            ll_new = record_loglik(self.data.censor, self.terms, eta_new)
            with np.errstate(invalid="ignore"):
                dll = np.bincount(self.area0, ll_new - self.ll, minlength=self.n)[cls]
            psi_c = self.psi[cls]
            nb = self.W[cls] @ self.psi
            dprior = -0.5 * self.tau_psi * (self.w[cls] * (2.0 * psi_c * d_c + d_c * d_c) - 2.0 * d_c * nb)
            logr = dll + dprior
            ok = np.log(self.rng.random(cls.size)) < logr
            if np.any(ok):
                self.psi[cls[ok]] += d_c[ok]
                take = np.zeros(self.n, dtype=bool)
                take[cls[ok]] = True
                rec = take[self.area0]
                self.eta[rec] = eta_new[rec]
                self.ll[rec] = ll_new[rec]
            accepted[cls] = ok
        self.ad_psi.record(accepted)
        # sum-to-zero: the level goes to the intercept when there is one
        m = self.psi.mean()
        self.psi -= m
        if self.spec.intercept:
            self.beta[0] += m
        self._refresh()

    def step_tau_psi(self, gibbs: bool):
        q = float(self.graph.pairwise_sq_diff(self.psi))
        shape = self.pr.tau_psi_a + 0.5 * (self.n - 1)
        rate = self.pr.tau_psi_b + 0.5 * q
        if gibbs:
            self.tau_psi = float(self.rng.gamma(shape, 1.0 / rate))
            return
        # random walk on log(tau) targeting the same full conditional
        lt = math.log(self.tau_psi)
        lt_new = lt + float(self.ad_tau.scale) * self.rng.standard_normal()

        def target(x):
            return shape * x - rate * math.exp(x)

        ok = math.log(self.rng.random()) < target(lt_new) - target(lt)
        if ok:
            self.tau_psi = math.exp(lt_new)
        self.ad_tau.record(float(ok))

    def step_eps(self):
        scale = self.ad_eps.scale
        d = scale * self.rng.standard_normal(self.data.N)
        eps_new = self.eps + d
        eta_new = self.eta + d
        ll_new = record_loglik(self.data.censor, self.terms, eta_new)
        logr = ll_new - self.ll - 0.5 * self.tau_eps * (eps_new**2 - self.eps**2)
        ok = np.log(self.rng.random(self.data.N)) < logr
        self.eps[ok] = eps_new[ok]
        self.eta[ok] = eta_new[ok]
        self.ll[ok] = ll_new[ok]
        self.ad_eps.record(ok.astype(float))
        shape = self.pr.tau_eps_a + 0.5 * self.data.N
        rate = self.pr.tau_eps_b + 0.5 * float(self.eps @ self.eps)
        self.tau_eps = float(self.rng.gamma(shape, 1.0 / rate))

    def adapters(self) -> dict:
        out = {"theta": self.ad_theta, "beta": self.ad_beta}
        if self.spec.spatial:
            out.update(shift=self.ad_shift, psi=self.ad_psi, tau_psi=self.ad_tau)
        if self.spec.eps:
            out["eps"] = self.ad_eps
        return out


def fit_unrestricted(
    data: SurvivalDataset,
    graph: AreaGraph | None,
    spec: ModelSpec | None = None,
    mcmc: MCMCConfig | None = None,
) -> PosteriorDraws:
    """Sample the unrestricted (spatial) frailty model.

    With ``spec.spatial`` false this fits the non-spatial model and
    ``graph`` may be ``None``.
    """
    spec = spec or ModelSpec()
    mcmc = mcmc or MCMCConfig()
    rng = np.random.default_rng(mcmc.seed)
    chain = _Chain(data, graph, spec, rng)
    chain.initialise()

    S = mcmc.n_draws
    names = spec.sampled_params
    theta_out = {k: np.empty(S) for k in names}
    beta_out = np.empty((S, chain.p))
    psi_out = np.empty((S, chain.n)) if spec.spatial else None
    tau_out = np.empty(S) if spec.spatial else None
    eps_out = np.empty((S, data.N)) if spec.eps else None
    tau_eps_out = np.empty(S) if spec.eps else None
    beta_hist = []
    adapters = chain.adapters()

    k = 0
    for it in range(mcmc.iterations):
        chain.step_theta()
        chain.step_beta()
        if spec.spatial:
            chain.step_shift()
            chain.step_psi()
            chain.step_tau_psi(mcmc.tau_gibbs)
        if spec.eps:
            chain.step_eps()

        if it < mcmc.burn_in:
            beta_hist.append(chain.beta.copy())
            if (it + 1) % ADAPT_BATCH == 0:
                for name, ad in adapters.items():
                    ad.tune(name)
            if chain.p and (it + 1) % 500 == 0 and it + 1 >= 500:
                recent = np.asarray(beta_hist[len(beta_hist) // 2:])
                cov = np.cov(recent, rowvar=False).reshape(chain.p, chain.p)
                cov += 1e-10 * np.eye(chain.p)
                try:
                    chain.beta_chol = np.linalg.cholesky(cov)
                except np.linalg.LinAlgError:
                    pass
            if it + 1 == mcmc.burn_in:
                for ad in adapters.values():
                    ad.reset_totals()
            continue

        if (it - mcmc.burn_in) % mcmc.thin:
            continue
        for name in names:
            theta_out[name][k] = chain.theta[name]
        beta_out[k] = chain.beta
        if spec.spatial:
            psi_out[k] = chain.psi
            tau_out[k] = chain.tau_psi
        if spec.eps:
            eps_out[k] = chain.eps
            tau_eps_out[k] = chain.tau_eps
        k += 1

    meta = {
        "model": "SFM" if spec.spatial else "NS",
        "family": spec.family,
        "fixed_params": spec.fixed_params(),
        "intercept": spec.intercept,
        "spatial": spec.spatial,
        "eps": spec.eps,
        "covariates": list(data.covariates),
        "n_areas": data.n_areas,
        "n_records": data.N,
        "seed": mcmc.seed,
        "iterations": mcmc.iterations,
        "burn_in": mcmc.burn_in,
        "thin": mcmc.thin,
        "tau_gibbs": mcmc.tau_gibbs,
        "acceptance": {
            name: ad.rate() for name, ad in adapters.items()
            if not (name == "tau_psi" and mcmc.tau_gibbs)
        },
    }
    return PosteriorDraws(
        theta=theta_out,
        beta=beta_out,
        beta_names=beta_names(data, spec),
        tau_psi=tau_out,
        psi=psi_out,
        eps=eps_out,
        tau_eps=tau_eps_out,
        meta=meta,
    )


def fit_chains(data, graph, spec=None, mcmc=None, chains: int = 4) -> list[PosteriorDraws]:
    """Independent chains with seeds spawned from ``mcmc.seed``."""
    mcmc = mcmc or MCMCConfig()
    seqs = np.random.SeedSequence(mcmc.seed).spawn(chains)
    return [
        fit_unrestricted(data, graph, spec, replace(mcmc, seed=int(s.generate_state(1)[0])))
        for s in seqs
    ]


# -----------------------------------------------------------------------------
# convergence diagnostics
# -----------------------------------------------------------------------------


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n]
    return acov / n


def effective_sample_size(chains) -> float:
    """ESS with Geyer's initial monotone sequence over one or more chains.

    Returns NaN for a chain with zero variance.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = chains.shape
    if n < 4:
        return float("nan")
    acov = np.array([_autocov(c) for c in chains])
    chain_var = acov[:, 0] * n / (n - 1.0)
    W = chain_var.mean()
    if not W > 0:
        return float("nan")
    B_over_n = chains.mean(axis=1).var(ddof=1) if m > 1 else 0.0
    var_plus = W * (n - 1.0) / n + B_over_n
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums, truncated at the first negative and made monotone
    total = 0.0
    prev = math.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
        t += 2
    tau = -1.0 + 2.0 * total
    return float(m * n / max(tau, 1.0 / math.log10(max(m * n, 10))))


def split_rhat(chains) -> float:
    """Split-chain potential scale reduction factor."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    half = chains.shape[1] // 2
    if half < 2:
        return float("nan")
    parts = np.concatenate([chains[:, :half], chains[:, -half:]], axis=0)
    n = parts.shape[1]
    W = parts.var(axis=1, ddof=1).mean()
    B = n * parts.mean(axis=1).var(ddof=1)
    if not W > 0:
        return float("nan")
    var_plus = (n - 1.0) / n * W + B / n
    return float(math.sqrt(var_plus / W))


def mcmc_diagnostics(draws, min_ess: float = 100.0) -> dict:
    """ESS, split-R-hat and acceptance rates for every scalar parameter.

    ``draws`` is a :class:`PosteriorDraws` or a list of them (chains).
    Degenerate (constant) parameters are listed under ``"degenerate"``.
    """
    chains = draws if isinstance(draws, (list, tuple)) else [draws]
    if chains[0].n_draws < 100:
        raise ValueError("diagnostics need at least 100 draws per chain")
    cols = [c.columns() for c in chains]
    report = {"ess": {}, "rhat": {}, "degenerate": [], "acceptance": chains[0].meta.get("acceptance", {})}
    for name in cols[0]:
        if name.startswith("eps_"):
            continue
        arr = np.array([c[name] for c in cols])
        ess = effective_sample_size(arr)
        report["ess"][name] = ess
        report["rhat"][name] = split_rhat(arr)
        if not np.isfinite(ess):
            report["degenerate"].append(name)
    low = [n for n in chains[0].beta_names if not report["ess"][n] >= min_ess]
    if low:
        warnings.warn(f"effective sample size below {min_ess:g} for {low}", stacklevel=2)
    report["low_ess"] = low
    return report
