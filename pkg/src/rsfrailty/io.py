"""CSV and JSON readers/writers for datasets, draws and result tables.

Every table has a header row. Floats are written with ``repr`` so a
write/read cycle is lossless.

Dataset CSV
    ``time`` (or ``time_lower`` and ``time_upper``), ``censor`` in
    {event, right, left, interval}, ``area`` (1-indexed), then one column
    per covariate in design order.

Draws CSV
    One row per draw: family parameters, ``beta_*``, ``tau_psi``,
    ``psi_1..psi_n`` and optionally ``tau_eps``, ``eps_1..eps_N``. A JSON
    sidecar (same stem, ``.json``) carries sampler metadata; it is
    optional so draws from other software can be read.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
from pathlib import Path

import numpy as np

from .correction import design_matrix, restrict_draws
from .diagnostics import comparison_table, summarize_columns
from .graph import read_adjacency
from .inference import PosteriorDraws
from .survival import CENSOR_CODES, CENSOR_NAMES, FAMILIES, INTERVAL, SurvivalDataset


class SchemaError(ValueError):
    """A file does not match the expected table layout."""


# ---------------------------------------------------------------- generic tables


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def write_table(rows, path, columns=None) -> Path:
    """Write a list of dicts; ``columns`` fixes the order (default: first row's keys)."""
    rows = list(rows)
    path = Path(path)
    if columns is None:
        columns = list(rows[0]) if rows else []
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])
    os.replace(tmp, path)
    return path


def read_table(path) -> list[dict]:
    """Read a table written by :func:`write_table`, converting numeric cells."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: file is empty (no header row)")
        return [{k: _parse(v) for k, v in row.items()} for row in reader]


def _write_columns(cols: dict, path) -> Path:
    path = Path(path)
    names = list(cols)
    mat = np.column_stack([np.asarray(cols[k], dtype=float) for k in names]) if names else np.empty((0, 0))
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in mat:
            w.writerow([repr(float(x)) for x in row])
    os.replace(tmp, path)
    return path


def _read_columns(path) -> dict:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: file is empty (no header row)")
        if len(set(header)) != len(header):
            raise SchemaError(f"{path}: duplicate column names in header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}, line {lineno}: expected {len(header)} fields, found {len(row)}")
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                col = next(h for h, x in zip(header, row) if not _is_float(x))
                raise SchemaError(f"{path}, line {lineno}, column {col!r}: not a number") from None
    if not rows:
        raise SchemaError(f"{path}: no draws (header only)")
    mat = np.asarray(rows)
    return {h: mat[:, k] for k, h in enumerate(header)}


def _is_float(x: str) -> bool:
    try:
        float(x)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------- datasets


def read_dataset(path, scale_time: bool = False, n_areas: int | None = None) -> SurvivalDataset:
    """Parse a dataset CSV; errors name the offending line and column."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise SchemaError(f"{path}: file is empty (no header row)")
        interval = "time_lower" in header or "time_upper" in header
        time_cols = ("time_lower", "time_upper") if interval else ("time",)
        for col in time_cols + ("censor", "area"):
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        reserved = set(time_cols) | {"censor", "area", "time"}
        covs = [h for h in header if h not in reserved]
        t_lo, t_hi, censor, area, X = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            def num(col, conv=float, allow_empty=False):
                raw = (row.get(col) or "").strip()
                if raw == "" and allow_empty:
                    return math.nan
                try:
                    return conv(raw)
                except ValueError:
                    raise SchemaError(f"{path}, line {lineno}, column {col!r}: cannot parse {raw!r}") from None

            c = (row.get("censor") or "").strip().lower()
            if c not in CENSOR_CODES:
                raise SchemaError(
                    f"{path}, line {lineno}, column 'censor': {c!r} is not one of {sorted(CENSOR_CODES)}"
                )
            censor.append(CENSOR_CODES[c])
            if interval:
                t_lo.append(num("time_lower"))
                t_hi.append(num("time_upper", allow_empty=c != "interval"))
            else:
                t_lo.append(num("time"))
                t_hi.append(math.nan)
            area.append(num("area", int))
            X.append([num(k) for k in covs])
    if not censor:
        raise SchemaError(f"{path}: no records")
    area = np.asarray(area)
    n = int(area.max()) if n_areas is None else n_areas
    t_hi = np.asarray(t_hi)
    censor = np.asarray(censor)
    t_hi[censor != INTERVAL] = math.nan
    try:
        data = SurvivalDataset(
            np.asarray(t_lo), censor, np.asarray(X, dtype=float).reshape(len(censor), len(covs)),
            area, n, time_upper=t_hi, covariates=tuple(covs),
        )
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    return data.scaled() if scale_time else data


def write_dataset(data: SurvivalDataset, path) -> Path:
    interval = bool(np.any(data.censor == INTERVAL))
    time_cols = ["time_lower", "time_upper"] if interval else ["time"]
    columns = time_cols + ["censor", "area"] + list(data.covariates)
    rows = []
    for i in range(data.N):
        r = {"censor": CENSOR_NAMES[int(data.censor[i])], "area": int(data.area[i])}
        if interval:
            r["time_lower"] = float(data.time[i])
            r["time_upper"] = float(data.time_upper[i]) if data.censor[i] == INTERVAL else ""
        else:
            r["time"] = float(data.time[i])
        r.update({k: float(data.X[i, j]) for j, k in enumerate(data.covariates)})
        rows.append(r)
    return write_table(rows, path, columns)


def write_json(obj, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------- draws

_INDEXED = re.compile(r"^(beta|psi|eps)_(\d+)$")
_THETA = {p for names, _, _ in FAMILIES.values() for p in names}


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_draws(draws: PosteriorDraws, path) -> Path:
    """Draws CSV plus the metadata sidecar."""
    path = Path(path)
    _write_columns(draws.columns(), path)
    write_json({**draws.meta, "beta_names": draws.beta_names, "theta": list(draws.theta)}, sidecar_path(path))
    return path


def _indexed(cols: dict, prefix: str, path) -> list[str]:
    names = [k for k in cols if (m := _INDEXED.match(k)) and m.group(1) == prefix]
    idx = sorted(int(_INDEXED.match(k).group(2)) for k in names)
    start = 0 if prefix == "beta" and idx and idx[0] == 0 else 1
    if idx != list(range(start, start + len(idx))):
        raise SchemaError(f"{path}: {prefix}_* columns are not numbered consecutively from {start}")
    return [f"{prefix}_{k}" for k in idx]


def read_draws(path) -> PosteriorDraws:
    """Parse a draws CSV (and its sidecar when present)."""
    path = Path(path)
    cols = _read_columns(path)
    meta = read_json(sidecar_path(path)) if sidecar_path(path).exists() else {"model": "external"}
    beta_names = _indexed(cols, "beta", path)
    psi_names = _indexed(cols, "psi", path)
    eps_names = _indexed(cols, "eps", path)
    theta_names = [k for k in cols if k in _THETA]
    known = set(beta_names) | set(psi_names) | set(eps_names) | set(theta_names) | {"tau_psi", "tau_eps"}
    unknown = [k for k in cols if k not in known]
    if unknown:
        raise SchemaError(f"{path}: unrecognised column {unknown[0]!r}")
    if not beta_names:
        raise SchemaError(f"{path}: no beta_* columns")
    if psi_names and "tau_psi" not in cols:
        raise SchemaError(f"{path}: psi_* columns present but column 'tau_psi' is missing")
    if eps_names and "tau_eps" not in cols:
        raise SchemaError(f"{path}: eps_* columns present but column 'tau_eps' is missing")
    meta.pop("beta_names", None)
    meta.pop("theta", None)
    try:
        return PosteriorDraws(
            theta={k: cols[k] for k in theta_names},
            beta=np.column_stack([cols[k] for k in beta_names]),
            beta_names=beta_names,
            tau_psi=cols.get("tau_psi") if psi_names else None,
            psi=np.column_stack([cols[k] for k in psi_names]) if psi_names else None,
            eps=np.column_stack([cols[k] for k in eps_names]) if eps_names else None,
            tau_eps=cols.get("tau_eps") if eps_names else None,
            meta=meta,
        )
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def write_restricted(restricted, path) -> Path:
    return _write_columns(restricted.columns(), path)


def read_restricted(path) -> dict:
    """Restricted draws as a column mapping."""
    return _read_columns(path)


# ---------------------------------------------------------------- two-step pipeline

SUMMARY_STATS = ("mean", "sd", "q2.5", "q97.5")


def _summary_parameters(draws: PosteriorDraws) -> dict:
    cols = draws.columns()
    return {k: v for k, v in cols.items() if not k.startswith("eps_")}


def restrict_from_file(
    draws_path,
    data_path,
    graph_path,
    out_path,
    ns_draws_path=None,
    emit_tilde: bool = False,
    summary_path=None,
) -> list[dict]:
    """Restrict draws read from disk and write the corrected draws and a summary.

    The summary (NS / SFM / RSFM side by side, with SVIF and SVRF when
    available) goes to ``summary_path``, by default next to ``out_path``
    with a ``_summary`` suffix. Returns the summary rows.
    """
    draws = read_draws(draws_path)
    data = read_dataset(data_path)
    graph = read_adjacency(graph_path)
    if draws.psi is None:
        raise SchemaError(f"{draws_path}: no psi_* columns to restrict")
    if draws.n_draws < 2:
        raise SchemaError(f"{draws_path}: at least two draws are needed for the summary table")
    if draws.psi.shape[1] != graph.n:
        raise SchemaError(f"{draws_path}: {draws.psi.shape[1]} psi columns but the graph has {graph.n} areas")
    if data.area.max() > graph.n:
        raise SchemaError(f"{data_path}: area label {int(data.area.max())} exceeds the {graph.n} graph areas")
    if draws.eps is not None and draws.eps.shape[1] != data.N:
        raise SchemaError(f"{draws_path}: {draws.eps.shape[1]} eps columns but the data have {data.N} records")
    try:
        X = design_matrix(data, draws)
    except ValueError as exc:
        raise SchemaError(f"{draws_path}: {exc}") from None
    restricted = restrict_draws(draws, X, data.area, emit_tilde=emit_tilde)
    out_path = Path(out_path)
    write_restricted(restricted, out_path)

    sfm = _summary_parameters(draws)
    rs = restricted.as_posterior()
    rsfm = {k: v for k, v in _summary_parameters(rs).items()}
    ns = _summary_parameters(read_draws(ns_draws_path)) if ns_draws_path else None
    rows = comparison_table(sfm, rsfm, ns)
    if summary_path is None:
        summary_path = out_path.with_name(out_path.stem + "_summary.csv")
    columns = ["parameter"]
    for model in (("NS",) if ns is not None else ()) + ("SFM", "RSFM"):
        columns += [f"{model}_{s}" for s in SUMMARY_STATS]
    if ns is not None:
        columns.append("svif")
    columns.append("svrf")
    write_table(rows, summary_path, columns)
    return rows


def summary_rows(draws: PosteriorDraws) -> list[dict]:
    return summarize_columns(_summary_parameters(draws))
