"""Group-sum reduction of individual-level matrices to area level.

``reduce(X, G)`` sums the rows of an ``N x p`` matrix that share an area
label, giving an ``n x p`` matrix. Because an area effect expanded to
individuals is constant within areas, every product of the form
``X^T Psi`` or ``P Psi`` can be written with the reduced matrix instead,
so restricted-model quantities are computed with ``n``-sized algebra.

Area labels are 1-indexed throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse

GRAM_COND_LIMIT = 1e12


class SingularDesignError(ValueError):
    """The design matrix is (numerically) rank deficient."""


def _labels(G, N: int | None = None) -> np.ndarray:
    G = np.asarray(G)
    if G.ndim != 1:
        raise ValueError("membership vector must be one-dimensional")
    if N is not None and G.size != N:
        raise ValueError(f"membership vector has {G.size} entries but X has {N} rows")
    if G.size and G.min() < 1:
        raise ValueError("area labels are 1-indexed")
    return G.astype(int)


def area_counts(G, n: int | None = None) -> np.ndarray:
    G = _labels(G)
    n = int(G.max()) if n is None else n
    return np.bincount(G - 1, minlength=n)


def reduce(X, G, n: int | None = None) -> np.ndarray:
    """Row reduction: ``out[i] = sum of X[l] over rows l with G[l] == i + 1``.

    ``X`` may be a vector (treated as one column) or a matrix; rows need
    not be sorted by area.
    """
    X = np.asarray(X, dtype=float)
    G = _labels(G, X.shape[0])
    n = int(G.max()) if n is None else int(n)
    if G.size and G.max() > n:
        raise ValueError(f"area label {int(G.max())} exceeds n = {n}")
    return np.asarray(indicator(G, n) @ X.reshape(X.shape[0], -1)).reshape((n,) + X.shape[1:])


def indicator(G, n: int) -> sparse.csr_matrix:
    """Sparse ``n x N`` area-membership matrix."""
    G = _labels(G)
    return sparse.csr_matrix(
        (np.ones(G.size), (G - 1, np.arange(G.size))), shape=(n, G.size)
    )


def reduce_columns(A, G, n: int | None = None) -> np.ndarray:
    """Column reduction (the transposed orientation): ``reduce(A.T, G).T``."""
    return reduce(np.asarray(A, dtype=float).T, G, n).T


def expand(psi, G) -> np.ndarray:
    """Repeat area effects to individual level: ``Psi[l] = psi[G[l] - 1]``.

    A leading batch axis on ``psi`` (draws x areas) is kept.
    """
    psi = np.asarray(psi, dtype=float)
    G = _labels(G)
    if G.size and G.max() > psi.shape[-1]:
        raise ValueError(f"area label {int(G.max())} exceeds psi length {psi.shape[-1]}")
    return np.take(psi, G - 1, axis=-1)


@dataclass(frozen=True)
class GramSolver:
    """Factorisation of ``X^T X`` reused for every solve.

    Cholesky is tried first; a symmetric-indefinite (Bunch-Kaufman) solve
    is the fallback. Matrices whose condition number exceeds
    :data:`GRAM_COND_LIMIT` are rejected outright.
    """

    gram: np.ndarray
    cho: tuple | None = field(default=None, repr=False)

    @classmethod
    def from_design(cls, X) -> "GramSolver":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] == 0:
            raise SingularDesignError("design matrix needs at least one column")
        gram = X.T @ X
        eig = np.linalg.eigvalsh(gram)
        if eig[0] <= 0 or eig[-1] / eig[0] > GRAM_COND_LIMIT:
            cond = np.inf if eig[0] <= 0 else eig[-1] / eig[0]
            raise SingularDesignError(
                f"X^T X is singular or ill-conditioned (condition number {cond:.3g} > {GRAM_COND_LIMIT:g}); "
                "check for collinear or constant covariates"
            )
        try:
            cho = linalg.cho_factor(gram, lower=True, check_finite=False)
        except linalg.LinAlgError:
            cho = None
        return cls(gram=gram, cho=cho)

    def solve(self, B) -> np.ndarray:
        if self.cho is not None:
            return linalg.cho_solve(self.cho, B, check_finite=False)
        return linalg.solve(self.gram, B, assume_a="sym", check_finite=False)


def project_full(X, Psi) -> tuple[np.ndarray, np.ndarray]:
    """Split ``Psi`` into its projection on col(X) and the orthogonal remainder.

    Works at full individual dimension; used as the reference path.
    """
    X = np.asarray(X, dtype=float)
    Psi = np.asarray(Psi, dtype=float)
    solver = GramSolver.from_design(X)
    P_psi = X @ solver.solve(X.T @ Psi)
    return P_psi, Psi - P_psi


class ReducedProjector:
    """Precomputed area-level operators for restricting posterior draws.

    Holds ``x = reduce(X, G)``, ``K = (X^T X)^{-1} x^T`` (p x n) and
    ``M = I_n - diag(counts)^{-1} x K`` (n x n). After construction each
    draw costs ``O(n p + n^2)`` regardless of ``N``.
    """

    def __init__(self, X, G, n: int | None = None):
        X = np.asarray(X, dtype=float)
        self.G = _labels(G, X.shape[0])
        self.n = int(self.G.max()) if n is None else int(n)
        self.X = X
        self.counts = area_counts(self.G, self.n)
        self.solver = GramSolver.from_design(X)
        self.xr = reduce(X, self.G, self.n)
        self.K = self.solver.solve(self.xr.T)
        inv_counts = np.divide(1.0, self.counts, out=np.zeros(self.n), where=self.counts > 0)
        self.M = np.eye(self.n) - (inv_counts[:, None] * self.xr) @ self.K

    def beta(self, beta_sf, psi_sf) -> np.ndarray:
        """``beta_sf + (X^T X)^{-1} x^T psi_sf``; rows of a 2-D input are draws."""
        return np.asarray(beta_sf, dtype=float) + np.asarray(psi_sf, dtype=float) @ self.K.T

    def psi(self, psi_sf) -> np.ndarray:
        """Area means of the orthogonal part of the expanded effect."""
        return np.asarray(psi_sf, dtype=float) @ self.M.T

    def psi_tilde(self, psi_sf, psi_rsf=None) -> np.ndarray:
        """Within-area deviations of the orthogonal part (N per draw)."""
        psi_sf = np.asarray(psi_sf, dtype=float)
        if psi_rsf is None:
            psi_rsf = self.psi(psi_sf)
        coef = psi_sf @ self.K.T
        orth = expand(psi_sf, self.G) - coef @ self.X.T
        return orth - expand(psi_rsf, self.G)


class FullProjector:
    """Reference path with the explicit ``N x N`` orthogonal projector."""

    def __init__(self, X, G, n: int | None = None):
        X = np.asarray(X, dtype=float)
        self.G = _labels(G, X.shape[0])
        self.n = int(self.G.max()) if n is None else int(n)
        self.X = X
        self.counts = area_counts(self.G, self.n)
        self.solver = GramSolver.from_design(X)
        self.H = self.solver.solve(X.T)  # (X^T X)^{-1} X^T, p x N
        self.P_perp = np.eye(X.shape[0]) - X @ self.H

    def apply(self, beta_sf, psi_sf, chunk: int = 500, keep_orth: bool = False):
        """Return ``(beta_rsf, psi_rsf, orth)`` for each draw.

        Draws are pushed through the projector ``chunk`` at a time;
        ``orth`` (S x N) is only materialised when ``keep_orth`` is set.
        """
        beta_sf = np.atleast_2d(np.asarray(beta_sf, dtype=float))
        psi_sf = np.atleast_2d(np.asarray(psi_sf, dtype=float))
        S = psi_sf.shape[0]
        beta_rsf = np.empty_like(beta_sf)
        psi_rsf = np.empty_like(psi_sf)
        orth_all = np.empty((S, self.X.shape[0])) if keep_orth else None
        Z = indicator(self.G, self.n)
        safe = np.where(self.counts > 0, self.counts, 1)
        for lo in range(0, S, chunk):
            sl = slice(lo, min(lo + chunk, S))
            Psi = expand(psi_sf[sl], self.G)
            beta_rsf[sl] = beta_sf[sl] + Psi @ self.H.T
            orth = Psi @ self.P_perp.T
            psi_rsf[sl] = np.asarray(Z @ orth.T).T / safe
            if keep_orth:
                orth_all[sl] = orth
        empty = self.counts == 0
        if np.any(empty):
            psi_rsf[:, empty] = psi_sf[:, empty]
        return beta_rsf, psi_rsf, orth_all


def beta_restricted(beta_sf, psi_sf, X, G, n: int | None = None) -> np.ndarray:
    """Restricted coefficients from area-level effects via the reduced design."""
    return ReducedProjector(X, G, n).beta(beta_sf, psi_sf)


def psi_restricted(psi_sf, X, G, n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(psi_rsf, psi_tilde)``: area means and within-area deviations of ``P_perp Psi``."""
    proj = ReducedProjector(X, G, n)
    psi_rsf = proj.psi(psi_sf)
    return psi_rsf, proj.psi_tilde(psi_sf, psi_rsf)


def operator_properties_check(X, X2, Q, P, r, c, G, n: int | None = None) -> dict[int, float]:
    """Evaluate both sides of the seven reduction identities.

    Returns the max-abs discrepancy per property number. ``Q`` is any
    ``m x p`` matrix, ``P`` any ``p x p`` matrix, ``r`` an area vector
    and ``c`` a scalar.
    """
    X = np.asarray(X, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    Q = np.asarray(Q, dtype=float)
    P = np.asarray(P, dtype=float)
    r = np.asarray(r, dtype=float)
    n = int(np.max(G)) if n is None else n
    R = expand(r, G)
    xr = reduce(X, G, n)
    XPXt = X @ P @ X.T
    sides = {
        1: (reduce(X + X2, G, n), xr + reduce(X2, G, n)),
        2: (reduce(c * X, G, n), c * xr),
        3: (X.T @ R, xr.T @ r),
        4: (reduce_columns(Q @ X.T, G, n), Q @ xr.T),
        5: (reduce(XPXt, G, n), xr @ P @ X.T),
        6: (reduce_columns(reduce(XPXt, G, n), G, n), xr @ P @ xr.T),
        7: (reduce(XPXt @ R, G, n), xr @ P @ xr.T @ r),
    }
    return {k: float(np.max(np.abs(a - b), initial=0.0)) for k, (a, b) in sides.items()}
