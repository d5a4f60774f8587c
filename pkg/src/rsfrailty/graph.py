"""Areal neighbourhood graphs and (intrinsic) CAR precision matrices."""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EIGEN_CUTOFF = 1e-10


class GraphError(ValueError):
    """Invalid adjacency structure."""


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class AreaGraph:
    """Undirected adjacency structure over ``n`` areas (1-indexed edges)."""

    n: int
    edges: tuple[tuple[int, int], ...]
    W: np.ndarray = field(repr=False, compare=False)
    D_w: np.ndarray = field(repr=False, compare=False)

    @property
    def isolated(self) -> np.ndarray:
        """1-indexed areas without neighbours."""
        return np.flatnonzero(self.D_w == 0) + 1

    def edge_index(self) -> tuple[np.ndarray, np.ndarray]:
        """0-indexed endpoint arrays, one entry per undirected edge."""
        if not self.edges:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        e = np.asarray(self.edges, dtype=int) - 1
        return e[:, 0], e[:, 1]

    def pairwise_sq_diff(self, psi: np.ndarray) -> float | np.ndarray:
        """Sum over neighbouring pairs of (psi_i - psi_j)^2 (last axis is areas)."""
        i, j = self.edge_index()
        d = np.take(psi, i, axis=-1) - np.take(psi, j, axis=-1)
        return np.sum(d * d, axis=-1)

    def neighbours(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.W[i]) for i in range(self.n)]


def build_graph(n: int, edges) -> AreaGraph:
    """Build an :class:`AreaGraph` from 1-indexed area pairs.

    Duplicate and reversed pairs collapse into one undirected edge. Areas
    with no neighbours only trigger a warning here; ICAR routines reject
    them later.
    """
    n = int(n)
    if n < 1:
        raise GraphError(f"number of areas must be positive, got {n}")
    pairs = set()
    for k, pair in enumerate(edges):
        a, b = (int(v) for v in pair)
        if not (1 <= a <= n and 1 <= b <= n):
            raise GraphError(f"edge {k} ({a}, {b}) references an area outside 1..{n}")
        if a == b:
            raise GraphError(f"edge {k} is a self-loop on area {a}")
        pairs.add((min(a, b), max(a, b)))
    ordered = tuple(sorted(pairs))
    W = np.zeros((n, n))
    for a, b in ordered:
        W[a - 1, b - 1] = W[b - 1, a - 1] = 1.0
    D_w = W.sum(axis=1)
    W.setflags(write=False)
    D_w.setflags(write=False)
    graph = AreaGraph(n=n, edges=ordered, W=W, D_w=D_w)
    if np.any(D_w == 0):
        warnings.warn(
            f"areas without neighbours: {graph.isolated.tolist()}", stacklevel=2
        )
    return graph


def lattice_graph(rows: int, cols: int) -> AreaGraph:
    """Rook-adjacency lattice; area ``r * cols + c + 1`` sits at row r, column c."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c + 1
            if c + 1 < cols:
                edges.append((k, k + 1))
            if r + 1 < rows:
                edges.append((k, k + cols))
    return build_graph(rows * cols, edges)


def read_adjacency(path, n: int | None = None) -> AreaGraph:
    """Read an edge list file: one ``i j`` pair per line, ``#`` comments.

    When ``n`` is omitted the largest index seen is used.
    """
    edges = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"{path}:{lineno}: expected 'i j', got {raw!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise GraphError(f"{path}:{lineno}: non-integer area index in {raw!r}") from None
    if n is None:
        if not edges:
            raise GraphError(f"{path}: no edges found")
        n = max(max(e) for e in edges)
    return build_graph(n, edges)


def write_adjacency(graph: AreaGraph, path) -> None:
    lines = [f"# {graph.n} areas, {len(graph.edges)} edges"]
    lines += [f"{a} {b}" for a, b in graph.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def connected_components(graph: AreaGraph) -> int:
    seen = np.zeros(graph.n, dtype=bool)
    nbrs = graph.neighbours()
    count = 0
    for start in range(graph.n):
        if seen[start]:
            continue
        count += 1
        seen[start] = True
        queue = deque([start])
        while queue:
            i = queue.popleft()
            for j in nbrs[i]:
                if not seen[j]:
                    seen[j] = True
                    queue.append(j)
    return count


def require_icar_ready(graph: AreaGraph) -> None:
    """Raise unless the graph has no isolated areas and a single component."""
    if graph.isolated.size:
        raise GraphError(
            f"ICAR needs every area to have a neighbour; isolated: {graph.isolated.tolist()}"
        )
    k = connected_components(graph)
    if k != 1:
        raise GraphError(f"ICAR sum-to-zero constraint needs a connected graph, found {k} components")


@dataclass(frozen=True)
class PrecisionMatrix:
    Q: np.ndarray
    tau: float
    rho: float


def car_precision(graph: AreaGraph, rho: float, tau: float) -> PrecisionMatrix:
    """``Q = tau * (diag(D_w) - rho * W)``."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    Q = tau * (np.diag(graph.D_w) - rho * graph.W)
    return PrecisionMatrix(Q=Q, tau=float(tau), rho=float(rho))


def icar_precision(graph: AreaGraph, tau: float) -> PrecisionMatrix:
    return car_precision(graph, rho=1.0, tau=tau)


def icar_eigen(graph: AreaGraph) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of the unit-precision ICAR structure with the null space dropped."""
    lam, V = np.linalg.eigh(np.diag(graph.D_w) - graph.W)
    keep = lam > EIGEN_CUTOFF
    return lam[keep], V[:, keep]


def sample_icar(graph: AreaGraph, tau: float, seed=None, size: int | None = None) -> np.ndarray:
    """Draw from the ICAR(tau) distribution on the sum-to-zero subspace.

    Independent Normal(0, 1/lambda_k) coordinates are placed on the
    eigenvectors of ``Q`` with non-negligible eigenvalue. With ``size`` the
    result has shape ``(size, n)``.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    require_icar_ready(graph)
    rng = _rng(seed)
    lam, V = icar_eigen(graph)
    shape = (lam.size,) if size is None else (size, lam.size)
    coords = rng.standard_normal(shape) / np.sqrt(tau * lam)
    psi = coords @ V.T
    # remove the O(1e-16) constant component left by floating point
    return psi - psi.mean(axis=-1, keepdims=True)


def greedy_coloring(graph: AreaGraph) -> list[np.ndarray]:
    """Partition areas into classes with no two neighbours in the same class.

    Used by the sampler to update a whole class of conditionally
    independent areas at once.
    """
    nbrs = graph.neighbours()
    color = np.full(graph.n, -1)
    for i in np.argsort(-graph.D_w, kind="stable"):
        used = {color[j] for j in nbrs[i]}
        c = 0
        while c in used:
            c += 1
        color[i] = c
    return [np.flatnonzero(color == c) for c in range(color.max() + 1)]
