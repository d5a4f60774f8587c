"""Confounding and study-quality metrics.

Variances are sample variances (denominator ``S - 1``) of posterior
draws; quantiles use linear interpolation between order statistics
(numpy's default, "type 7").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

QUANTILE_METHOD = "linear"


@dataclass(frozen=True)
class CoefSample:
    """Posterior draws of a single coefficient."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 2:
            raise ValueError(f"{self.label or 'sample'}: at least two draws are needed")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{self.label or 'sample'}: draws must be finite")
        object.__setattr__(self, "values", v)

    @property
    def var(self) -> float:
        return float(np.var(self.values, ddof=1))


def _sample(x, label: str = "") -> CoefSample:
    return x if isinstance(x, CoefSample) else CoefSample(x, label)


def svif(spatial, nonspatial) -> float:
    """Spatial variance inflation factor ``Var(spatial) / Var(nonspatial)``."""
    a, b = _sample(spatial, "spatial"), _sample(nonspatial, "nonspatial")
    vb = b.var
    if not vb > 0:
        raise ValueError("non-spatial sample has zero variance; SVIF is undefined")
    return a.var / vb


def svrf(unrestricted, restricted) -> float:
    """Spatial variance retraction factor ``(Var_u - Var_r) / Var_u``."""
    u, r = _sample(unrestricted, "unrestricted"), _sample(restricted, "restricted")
    vu = u.var
    if not vu > 0:
        raise ValueError("unrestricted sample has zero variance; SVRF is undefined")
    return (vu - r.var) / vu


def type_s_rate(intervals, true_beta: float = 0.0) -> float:
    """Fraction of credible intervals that exclude ``true_beta``."""
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if iv.shape[0] == 0:
        raise ValueError("no intervals given")
    if np.any(iv[:, 0] > iv[:, 1]):
        raise ValueError("interval lower bound exceeds upper bound")
    excl = (iv[:, 0] > true_beta) | (iv[:, 1] < true_beta)
    return float(np.mean(excl))


def summarize_draws(draws) -> dict:
    """Mean, SD and the central 95% interval of one coefficient's draws."""
    v = _sample(draws).values
    lo, hi = np.quantile(v, [0.025, 0.975], method=QUANTILE_METHOD)
    return {"mean": float(v.mean()), "sd": float(v.std(ddof=1)), "q2.5": float(lo), "q97.5": float(hi)}


def summarize_columns(columns: dict) -> list[dict]:
    """One summary row per column of a draws table."""
    return [{"parameter": name, **summarize_draws(v)} for name, v in columns.items()]


def study_metrics(replicates, truth) -> dict:
    """Aggregate per-replicate posterior summaries against the truth.

    ``replicates`` is a sequence of mappings with ``mean``, ``sd``,
    ``q2.5`` and ``q97.5``. ``truth`` is a scalar or one value per
    replicate. Returns mean of means, mean SD, coverage and MSE.
    """
    reps = list(replicates)
    if not reps:
        raise ValueError("at least one replicate is required")
    means = np.array([r["mean"] for r in reps], dtype=float)
    sds = np.array([r["sd"] for r in reps], dtype=float)
    lo = np.array([r["q2.5"] for r in reps], dtype=float)
    hi = np.array([r["q97.5"] for r in reps], dtype=float)
    t = np.broadcast_to(np.asarray(truth, dtype=float), means.shape)
    return {
        "mean": float(means.mean()),
        "sd": float(sds.mean()),
        "coverage": float(np.mean((lo <= t) & (t <= hi))),
        "mse": float(np.mean((means - t) ** 2)),
        "replicates": len(reps),
    }


def format_study_row(metrics: dict) -> str:
    """``Mean (SD)  COV  MSE`` as printed in recovery tables."""
    return f"{metrics['mean']:.2f} ({metrics['sd']:.2f})  {100 * metrics['coverage']:.1f}  {metrics['mse']:.4f}"


def comparison_table(sfm: dict, rsfm: dict, ns: dict | None = None) -> list[dict]:
    """Side-by-side NS / SFM / RSFM summaries with SVIF and SVRF.

    Each argument maps a parameter name to its draws. RSFM columns are
    matched to SFM by name. SVIF is reported for parameters that also
    appear in ``ns``; SVRF for every parameter with nonzero SFM variance.
    """
    rows = []
    for name, sf_draws in sfm.items():
        row = {"parameter": name}
        models = [("SFM", sf_draws), ("RSFM", rsfm.get(name))]
        if ns is not None:
            models.insert(0, ("NS", ns.get(name)))
        for model, d in models:
            if d is None:
                continue
            for key, val in summarize_draws(d).items():
                row[f"{model}_{key}"] = val
        if ns is not None and name in ns:
            try:
                row["svif"] = svif(sf_draws, ns[name])
            except ValueError:
                row["svif"] = float("nan")
        if name in rsfm:
            try:
                row["svrf"] = svrf(sf_draws, rsfm[name])
            except ValueError:
                row["svrf"] = float("nan")
        rows.append(row)
    return rows
