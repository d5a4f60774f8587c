"""Turn unrestricted posterior draws into restricted-model draws.

Each draw is mapped through the reduced projector:

* ``beta_rsf = beta_sf + (X^T X)^{-1} reduce(X)^T psi_sf``
* ``psi_rsf`` = area means of the part of the expanded effect orthogonal
  to the design
* ``eps_rsf = eps_sf + psi_tilde`` (within-area deviations)

so the linear predictor of every draw is unchanged. Hyperparameters are
shared with the source draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .inference import PosteriorDraws
from .reduction import ReducedProjector, expand
from .survival import SurvivalDataset


@dataclass
class RestrictedDraws:
    beta: np.ndarray
    beta_names: list
    psi: np.ndarray
    hyper: dict
    source: PosteriorDraws = field(repr=False)
    eps: np.ndarray | None = None
    psi_tilde: np.ndarray | None = None
    psi_tilde_sd: np.ndarray | None = None

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    def columns(self) -> dict:
        """Hyperparameters unchanged, corrected columns suffixed ``_rsf``."""
        cols = dict(self.hyper)
        cols.update({f"{name}_rsf": self.beta[:, k] for k, name in enumerate(self.beta_names)})
        cols.update({f"psi_{i + 1}_rsf": self.psi[:, i] for i in range(self.psi.shape[1])})
        if self.eps is not None:
            cols.update({f"eps_{j + 1}_rsf": self.eps[:, j] for j in range(self.eps.shape[1])})
        return cols

    def as_posterior(self) -> PosteriorDraws:
        """The restricted draws in the unrestricted container (for summaries)."""
        src = self.source
        return PosteriorDraws(
            theta=dict(src.theta), beta=self.beta, beta_names=list(self.beta_names),
            tau_psi=src.tau_psi, psi=self.psi, eps=self.eps, tau_eps=src.tau_eps,
            meta={**src.meta, "model": "RSFM"},
        )


def design_matrix(data: SurvivalDataset, draws: PosteriorDraws) -> np.ndarray:
    """Design matrix matching the coefficient layout of ``draws``."""
    X = data.X
    if draws.has_intercept:
        X = np.column_stack([np.ones(data.N), X])
    if X.shape[1] != draws.beta.shape[1]:
        raise ValueError(
            f"draws carry {draws.beta.shape[1]} coefficients but the data give {X.shape[1]} design columns"
        )
    return X


def restrict_draws(
    draws: PosteriorDraws,
    X,
    G,
    emit_tilde: bool = False,
    projector: ReducedProjector | None = None,
    chunk: int = 1000,
) -> RestrictedDraws:
    """Restricted draws from unrestricted ones, sample by sample.

    ``emit_tilde`` keeps the N-per-draw deviations (and ``eps_rsf``);
    otherwise only their per-area root-mean-square is kept, and the
    deviations are formed ``chunk`` draws at a time.
    """
    X = np.asarray(X, dtype=float)
    G = np.asarray(G)
    if draws.psi is None:
        raise ValueError("draws have no spatial effect to restrict")
    if X.shape[0] != G.size:
        raise ValueError(f"X has {X.shape[0]} rows but G has {G.size} entries")
    if X.shape[1] != draws.beta.shape[1]:
        raise ValueError(f"X has {X.shape[1]} columns but draws carry {draws.beta.shape[1]} coefficients")
    n = draws.psi.shape[1]
    if G.max() > n:
        raise ValueError(f"area label {int(G.max())} exceeds the {n} areas in the draws")
    if draws.eps is not None and draws.eps.shape[1] != X.shape[0]:
        raise ValueError("eps draws do not match the number of records")
    proj = projector or ReducedProjector(X, G, n)

    beta_rsf = proj.beta(draws.beta, draws.psi)
    psi_rsf = proj.psi(draws.psi)
    S = draws.n_draws
    tilde_all = np.empty((S, X.shape[0])) if emit_tilde else None
    sq = np.zeros(n)
    for lo in range(0, S, chunk):
        sl = slice(lo, min(lo + chunk, S))
        tilde = proj.psi_tilde(draws.psi[sl], psi_rsf[sl])
        sq += np.bincount(proj.G - 1, weights=np.sum(tilde * tilde, axis=0), minlength=n)
        if emit_tilde:
            tilde_all[sl] = tilde
    counts = np.where(proj.counts > 0, proj.counts, 1)
    tilde_sd = np.sqrt(sq / (counts * S))

    eps_rsf = None
    if emit_tilde:
        eps_rsf = tilde_all if draws.eps is None else draws.eps + tilde_all
    return RestrictedDraws(
        beta=beta_rsf,
        beta_names=list(draws.beta_names),
        psi=psi_rsf,
        hyper=draws.hyper_columns(),
        source=draws,
        eps=eps_rsf,
        psi_tilde=tilde_all,
        psi_tilde_sd=tilde_sd,
    )


def linear_predictor_gap(draws: PosteriorDraws, restricted: RestrictedDraws, X, G) -> float:
    """Max-abs difference between unrestricted and restricted linear predictors."""
    if restricted.eps is None:
        raise ValueError("restricted draws were built without eps_rsf")
    before = draws.beta @ X.T + expand(draws.psi, G)
    if draws.eps is not None:
        before = before + draws.eps
    after = restricted.beta @ X.T + expand(restricted.psi, G) + restricted.eps
    return float(np.max(np.abs(before - after)))
