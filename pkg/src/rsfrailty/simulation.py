"""Synthetic spatial frailty data, the recovery study and the reduction benchmark."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics
from .correction import restrict_draws
from .graph import AreaGraph, lattice_graph, require_icar_ready, sample_icar
from .inference import MCMCConfig, ModelSpec, fit_unrestricted
from .reduction import FullProjector, GramSolver, ReducedProjector, expand
from .survival import EVENT, RIGHT, SurvivalDataset

log = logging.getLogger(__name__)

LATTICE_SHAPE = (23, 4)  # rows run north to south


def default_map() -> tuple[AreaGraph, np.ndarray]:
    """92-area rook lattice and its row index as a latitude proxy."""
    rows, cols = LATTICE_SHAPE
    graph = lattice_graph(rows, cols)
    latitude = np.repeat(np.arange(rows, 0, -1, dtype=float), cols)
    return graph, latitude


def _standardize(v: np.ndarray) -> np.ndarray:
    sd = v.std()
    if not sd > 0:
        raise ValueError("covariate has zero variance and cannot be standardised")
    return (v - v.mean()) / sd


@dataclass(frozen=True)
class ScenarioConfig:
    graph: AreaGraph | None = None
    latitude: np.ndarray | None = field(default=None, compare=False)
    units_per_area: int = 10
    alpha: float = 1.2
    beta: tuple[float, float] = (-0.3, 0.3)
    tau_psi: float = 0.75
    confounded: bool = False
    intercept: bool = False
    censoring: tuple[float, ...] = (0.0,)
    replicates: int = 100
    seed: int = 2024
    mcmc: MCMCConfig = field(default_factory=lambda: MCMCConfig(iterations=6000, burn_in=2000, thin=1))
    threads: int = 1

    def __post_init__(self):
        for c in self.censoring:
            if not 0.0 <= c < 1.0:
                raise ValueError(f"censoring level must lie in [0, 1), got {c}")
        if self.replicates < 1:
            raise ValueError("at least one replicate is required")
        if self.units_per_area < 1:
            raise ValueError("units_per_area must be positive")

    def resolved_map(self) -> tuple[AreaGraph, np.ndarray]:
        if self.graph is None:
            return default_map()
        lat = self.latitude
        if lat is None:
            raise ValueError("a custom graph needs a per-area latitude (centroid) vector")
        return self.graph, np.asarray(lat, dtype=float)

    @property
    def scenario(self) -> str:
        return "confounded" if self.confounded else "independent"


def weibull_event_times(linpred, alpha: float, rng) -> np.ndarray:
    """Invert ``S(t) = exp(-t^alpha e^linpred)`` at Exponential(1) draws."""
    E = rng.exponential(1.0, size=np.shape(linpred))
    return (E / np.exp(linpred)) ** (1.0 / alpha)


def apply_censoring(times: np.ndarray, level: float):
    """Type I cut-off at the ``1 - level`` quantile of the event times."""
    if level == 0:
        return times.copy(), np.full(times.size, EVENT)
    cutoff = np.quantile(times, 1.0 - level)
    cens = times > cutoff
    return np.where(cens, cutoff, times), np.where(cens, RIGHT, EVENT)


@dataclass
class Truth:
    alpha: float
    beta: np.ndarray
    tau_psi: float
    psi: np.ndarray
    beta_star: np.ndarray
    censoring: float

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha, "beta": self.beta.tolist(), "tau_psi": self.tau_psi,
            "psi": self.psi.tolist(), "beta_star": self.beta_star.tolist(),
            "censoring": self.censoring,
        }


def _latent(cfg: ScenarioConfig, rng):
    graph, lat = cfg.resolved_map()
    require_icar_ready(graph)
    n, m = graph.n, cfg.units_per_area
    area = np.repeat(np.arange(1, n + 1), m)
    psi = sample_icar(graph, cfg.tau_psi, rng)
    x1 = _standardize(rng.standard_normal(n * m))
    if cfg.confounded:
        x2 = _standardize(expand(lat, area))
    else:
        x2 = _standardize(rng.standard_normal(n * m))
    X = np.column_stack([x1, x2])
    eta = X @ np.asarray(cfg.beta) + psi[area - 1]
    times = weibull_event_times(eta, cfg.alpha, rng)
    return graph, area, psi, X, times


def _dataset_at(cfg, graph, area, psi, X, times, level) -> tuple[SurvivalDataset, Truth]:
    t_obs, censor = apply_censoring(times, level)
    data = SurvivalDataset(t_obs, censor, X, area, graph.n, covariates=("x1", "x2"))
    beta = np.asarray(cfg.beta, dtype=float)
    design = np.column_stack([np.ones(X.shape[0]), X]) if cfg.intercept else X
    shift = GramSolver.from_design(design).solve(design.T @ psi[area - 1])
    beta_star = beta + shift[-X.shape[1]:]  # covariate coefficients only
    truth = Truth(cfg.alpha, beta, cfg.tau_psi, psi, beta_star, level)
    return data, truth


def generate_dataset(cfg: ScenarioConfig, rep_seed, censoring: float | None = None):
    """One synthetic dataset and its truth record.

    ``censoring`` defaults to the first level in ``cfg.censoring``.
    """
    rng = np.random.default_rng(rep_seed)
    level = cfg.censoring[0] if censoring is None else censoring
    if not 0.0 <= level < 1.0:
        raise ValueError(f"censoring level must lie in [0, 1), got {level}")
    graph, area, psi, X, times = _latent(cfg, rng)
    return _dataset_at(cfg, graph, area, psi, X, times, level)


# ---------------------------------------------------------------- recovery study

STUDY_COLUMNS = ("scenario", "censoring", "model", "parameter", "mean", "sd", "coverage", "mse")
STUDY_PARAMS = ("alpha", "beta_1", "beta_2")


@dataclass
class StudyResult:
    table: list[dict]
    deltas: list[dict]
    svif: list[dict]
    failed: list[dict]
    replicates: int

    def rows(self, model: str | None = None, censoring: float | None = None, parameter: str | None = None):
        out = self.table
        if model is not None:
            out = [r for r in out if r["model"] == model]
        if censoring is not None:
            out = [r for r in out if r["censoring"] == censoring]
        if parameter is not None:
            out = [r for r in out if r["parameter"] == parameter]
        return out

    def metric(self, model: str, censoring: float, parameter: str, key: str) -> float:
        (row,) = self.rows(model, censoring, parameter)
        return row[key]


def _replicate_seeds(cfg: ScenarioConfig) -> list[int]:
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.replicates)
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in seqs]


def _summaries(columns: dict) -> dict:
    return {k: diagnostics.summarize_draws(v) for k, v in columns.items() if k in STUDY_PARAMS}


def _run_replicate(cfg: ScenarioConfig, rep: int, seed: int) -> list[dict]:
    """Fit SFM and NS at every censoring level of one replicate.

    The latent field, covariates and event times are shared across
    censoring levels so level-to-level differences are not sampling noise.
    """
    rng = np.random.default_rng(seed)
    graph, area, psi, X, times = _latent(cfg, rng)
    out = []
    for j, level in enumerate(cfg.censoring):
        data, truth = _dataset_at(cfg, graph, area, psi, X, times, level)
        mseed = seed + 7919 * (j + 1)
        spec = ModelSpec(intercept=cfg.intercept)
        sfm = fit_unrestricted(data, graph, spec, replace(cfg.mcmc, seed=mseed))
        ns = fit_unrestricted(data, None, replace(spec, spatial=False), replace(cfg.mcmc, seed=mseed + 1))
        design = np.column_stack([np.ones(data.N), X]) if cfg.intercept else X
        rsfm = restrict_draws(sfm, design, area)
        sf_cols, rs_cols, ns_cols = sfm.columns(), rsfm.as_posterior().columns(), ns.columns()
        svifs = {}
        for k in ("beta_1", "beta_2"):
            try:
                svifs[k] = diagnostics.svif(sf_cols[k], ns_cols[k])
            except ValueError:
                svifs[k] = math.nan
        out.append({
            "replicate": rep,
            "censoring": level,
            "truth": truth,
            "summaries": {"SFM": _summaries(sf_cols), "RSFM": _summaries(rs_cols), "NS": _summaries(ns_cols)},
            "svif": svifs,
        })
    return out


def _target(model: str, parameter: str, truth: Truth) -> float:
    """Estimand for a model: the restricted fit targets the projected coefficient."""
    if parameter == "alpha":
        return truth.alpha
    k = int(parameter.split("_")[1]) - 1
    return float(truth.beta_star[k] if model == "RSFM" else truth.beta[k])


def _safe_replicate(args):
    cfg, rep, seed = args
    try:
        return rep, _run_replicate(cfg, rep, seed), None
    except (RuntimeError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"


def run_recovery_study(cfg: ScenarioConfig) -> StudyResult:
    """Replicated SFM / RSFM / NS fits with mean, SD, coverage and MSE per parameter.

    Replicates whose fit raises are excluded and listed in ``failed``.
    """
    jobs = [(cfg, r, s) for r, s in enumerate(_replicate_seeds(cfg))]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_safe_replicate, jobs))
    else:
        results = [_safe_replicate(j) for j in jobs]

    failed, per_level = [], {c: [] for c in cfg.censoring}
    for rep, recs, err in sorted(results, key=lambda x: x[0]):
        if err is not None:
            log.warning("replicate %d failed: %s", rep, err)
            failed.append({"replicate": rep, "error": err})
            continue
        for rec in recs:
            per_level[rec["censoring"]].append(rec)

    table, deltas, svifs = [], [], []
    for level, recs in per_level.items():
        if not recs:
            continue
        for model in ("SFM", "RSFM", "NS"):
            for param in STUDY_PARAMS:
                sums = [r["summaries"][model][param] for r in recs]
                targets = [_target(model, param, r["truth"]) for r in recs]
                m = diagnostics.study_metrics(sums, targets)
                table.append({
                    "scenario": cfg.scenario, "censoring": level, "model": model, "parameter": param,
                    "mean": m["mean"], "sd": m["sd"], "coverage": m["coverage"], "mse": m["mse"],
                })
                for r, s, t in zip(recs, sums, targets):
                    deltas.append({
                        "scenario": cfg.scenario, "censoring": level, "replicate": r["replicate"],
                        "model": model, "parameter": param, "delta": s["mean"] - t,
                    })
        for r in recs:
            for param, v in r["svif"].items():
                svifs.append({
                    "scenario": cfg.scenario, "censoring": level, "replicate": r["replicate"],
                    "parameter": param, "svif": v,
                })
    if failed:
        log.warning("%d of %d replicates failed and were excluded", len(failed), cfg.replicates)
    return StudyResult(table=table, deltas=deltas, svif=svifs, failed=failed, replicates=cfg.replicates)


# ---------------------------------------------------------------- reduction benchmark

TIMING_COLUMNS = ("N", "n", "path", "phase", "seconds", "log10_seconds", "repetition")


@dataclass(frozen=True)
class BenchConfig:
    n_areas: int = 92
    grid: tuple[int, ...] = (2, 4, 8, 16, 32, 64, 128)
    draws: int = 5000
    repetitions: int = 10
    n_covariates: int = 2
    max_full_n: int = 12000
    equivalence_tol: float = 1e-8
    seed: int = 2024

    def __post_init__(self):
        if not self.grid or any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("units-per-area grid must be non-empty and strictly ascending")
        if self.grid[0] < 1:
            raise ValueError("units per area must be positive")
        if self.draws < 1 or self.repetitions < 1:
            raise ValueError("draws and repetitions must be at least 1")


@dataclass
class BenchResult:
    rows: list[dict]
    equivalence: dict  # N -> max-abs gap between the two paths
    skipped: list[int]
    tolerance: float = 1e-8

    @property
    def equivalent(self) -> bool:
        return all(v <= self.tolerance for v in self.equivalence.values())

    def median(self, N: int, path: str, phase: str) -> float:
        vals = [r["seconds"] for r in self.rows if r["N"] == N and r["path"] == path and r["phase"] == phase]
        return float(np.median(vals)) if vals else math.nan


def _bench_inputs(cfg: BenchConfig, m: int, rng):
    n = cfg.n_areas
    N = n * m
    G = np.repeat(np.arange(1, n + 1), m)
    X = np.column_stack([np.ones(N), rng.standard_normal((N, cfg.n_covariates))])
    beta = rng.normal(0.0, 0.3, size=(cfg.draws, X.shape[1]))
    psi = rng.standard_normal((cfg.draws, n))
    psi -= psi.mean(axis=1, keepdims=True)
    return X, G, beta, psi


def _row(N, n, path, phase, seconds, rep):
    return {
        "N": N, "n": n, "path": path, "phase": phase, "seconds": seconds,
        "log10_seconds": math.log10(seconds) if seconds > 0 else math.nan, "repetition": rep,
    }


def run_reduction_bench(cfg: BenchConfig) -> BenchResult:
    """Wall time of the full ``N x N`` projector path versus the reduced path.

    Both paths correct the same ``cfg.draws`` synthetic posterior draws.
    Before any timing is reported the two outputs are compared; a gap
    above ``cfg.equivalence_tol`` raises. Sizes above ``cfg.max_full_n``
    skip the full path and are listed in ``skipped``.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_areas
    rows, equivalence, skipped = [], {}, []
    for m in cfg.grid:
        X, G, beta, psi = _bench_inputs(cfg, m, rng)
        N = X.shape[0]
        run_full = N <= cfg.max_full_n
        if not run_full:
            skipped.append(N)
            log.warning("full-dimension path skipped at N = %d (limit %d)", N, cfg.max_full_n)
            rows.append({**_row(N, n, "full", "skipped", math.nan, 0), "log10_seconds": math.nan})
        for rep in range(cfg.repetitions):
            t0 = time.perf_counter()
            red = ReducedProjector(X, G, n)
            t1 = time.perf_counter()
            b_red = red.beta(beta, psi)
            p_red = red.psi(psi)
            t2 = time.perf_counter()
            rows += [
                _row(N, n, "reduced", "precompute", t1 - t0, rep),
                _row(N, n, "reduced", "per_draw", t2 - t1, rep),
                _row(N, n, "reduced", "total", t2 - t0, rep),
            ]
            if not run_full:
                continue
            t0 = time.perf_counter()
            full = FullProjector(X, G, n)
            t1 = time.perf_counter()
            b_full, p_full, _ = full.apply(beta, psi)
            t2 = time.perf_counter()
            del full
            if rep == 0:
                gap = max(float(np.max(np.abs(b_full - b_red))), float(np.max(np.abs(p_full - p_red))))
                equivalence[N] = gap
                if gap > cfg.equivalence_tol:
                    raise RuntimeError(f"reduced and full corrections differ by {gap:.3g} at N = {N}")
            rows += [
                _row(N, n, "full", "precompute", t1 - t0, rep),
                _row(N, n, "full", "per_draw", t2 - t1, rep),
                _row(N, n, "full", "total", t2 - t0, rep),
            ]
        log.info("bench N = %d done", N)
    return BenchResult(rows=rows, equivalence=equivalence, skipped=skipped, tolerance=cfg.equivalence_tol)
