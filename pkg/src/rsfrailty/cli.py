"""Command-line interface: simulate, fit, restrict, diagnose, study, bench.

Every subcommand accepts ``--config FILE``, a JSON object whose keys are
the long option names (dashes or underscores). Options given on the
command line override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .diagnostics import svif
from .graph import GraphError, read_adjacency, require_icar_ready, write_adjacency
from .inference import MCMCConfig, ModelSpec, fit_unrestricted, mcmc_diagnostics
from .simulation import (
    STUDY_COLUMNS, TIMING_COLUMNS, BenchConfig, ScenarioConfig, generate_dataset,
    run_recovery_study, run_reduction_bench,
)
from .survival import FAMILIES, RIGHT, SurvivalDataset

log = logging.getLogger("rsfrailty")


class _Outputs:
    """Tracks files written by a command so a failure can remove them."""

    def __init__(self, out_dir: Path):
        self.dir = out_dir
        self.paths: list[Path] = []

    def __call__(self, name: str) -> Path:
        p = self.dir / name
        self.paths.append(p)
        return p

    def remove(self):
        for p in self.paths:
            for q in (p, p.with_name(p.name + ".tmp")):
                if q.exists():
                    q.unlink()


def _prepare_out(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_probe"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from None
    return out


def _require_seed(args):
    if args.seed is None:
        raise ValueError(f"--seed is required for {args.command}")


def _mcmc(args) -> MCMCConfig:
    return MCMCConfig(iterations=args.iterations, burn_in=args.burn_in, thin=args.thin, seed=args.seed)


# ---------------------------------------------------------------- commands


def cmd_simulate(args, outputs: _Outputs) -> int:
    _require_seed(args)
    graph, latitude = None, None
    if args.graph:
        graph = read_adjacency(args.graph)
        if not args.latitude:
            raise ValueError("--latitude is required with --graph (one value per area)")
        latitude = np.loadtxt(args.latitude, ndmin=1, dtype=float)
        if latitude.size != graph.n:
            raise ValueError(f"--latitude has {latitude.size} values but the graph has {graph.n} areas")
    level = args.censoring[0]
    cfg = ScenarioConfig(
        graph=graph, latitude=latitude, units_per_area=args.units_per_area,
        confounded=args.confounded, censoring=(level,), seed=args.seed,
    )
    data, truth = generate_dataset(cfg, args.seed)
    io.write_dataset(data, outputs("dataset.csv"))
    io.write_json({**truth.as_dict(), "seed": args.seed, "scenario": cfg.scenario,
                   "units_per_area": cfg.units_per_area}, outputs("truth.json"))
    write_adjacency(cfg.resolved_map()[0], outputs("graph.adj"))
    print(f"wrote {data.N} records ({np.mean(data.censor == RIGHT):.2%} right-censored) to {outputs.dir}")
    return 0


def cmd_fit(args, outputs: _Outputs) -> int:
    _require_seed(args)
    if not args.data:
        raise ValueError("--data is required")
    data = io.read_dataset(args.data, scale_time=args.scale_time)
    graph = None
    if not args.no_spatial:
        if not args.graph:
            raise ValueError("--graph is required unless --no-spatial is given")
        graph = read_adjacency(args.graph)
        require_icar_ready(graph)
        if data.area.max() > graph.n:
            raise ValueError(f"area label {int(data.area.max())} exceeds the {graph.n} graph areas")
        data = SurvivalDataset(
            data.time, data.censor, data.X, data.area, graph.n, data.time_upper, data.covariates
        )
    spec = ModelSpec(family=args.family, intercept=args.intercept, spatial=not args.no_spatial, eps=args.eps)
    draws = fit_unrestricted(data, graph, spec, _mcmc(args))
    io.write_draws(draws, outputs("draws.csv"))
    outputs.paths.append(io.sidecar_path(outputs.dir / "draws.csv"))
    diag = mcmc_diagnostics(draws) if draws.n_draws >= 100 else None
    rows = io.summary_rows(draws)
    if diag is not None:
        for r in rows:
            r["ess"] = diag["ess"].get(r["parameter"], float("nan"))
            r["rhat"] = diag["rhat"].get(r["parameter"], float("nan"))
    io.write_table(rows, outputs("diagnostics.csv"))
    print(f"{draws.n_draws} draws written; acceptance {json.dumps(draws.meta['acceptance'])}")
    return 0


def cmd_restrict(args, outputs: _Outputs) -> int:
    for flag in ("draws", "data", "graph"):
        if not getattr(args, flag):
            raise ValueError(f"--{flag} is required for restrict")
    rows = io.restrict_from_file(
        args.draws, args.data, args.graph, outputs("restricted_draws.csv"),
        ns_draws_path=args.ns_draws, emit_tilde=args.emit_tilde,
        summary_path=outputs("summary.csv"),
    )
    for r in rows:
        if r["parameter"].startswith("psi_"):
            continue
        extra = "".join(f"  {k}={r[k]:.3f}" for k in ("svif", "svrf") if k in r)
        print(f"{r['parameter']:>10}  SFM {r['SFM_mean']:.4f} ({r['SFM_sd']:.4f})"
              f"  RSFM {r['RSFM_mean']:.4f} ({r['RSFM_sd']:.4f}){extra}")
    return 0


def cmd_diagnose(args, outputs: _Outputs) -> int:
    if not args.draws:
        raise ValueError("--draws is required for diagnose")
    draws = io.read_draws(args.draws)
    diag = mcmc_diagnostics(draws)
    rows = []
    model = draws.meta.get("model", "external")
    for stat in ("ess", "rhat"):
        for name, v in diag[stat].items():
            rows.append({"model": model, "parameter": name, "metric": stat, "value": v})
    for r in io.summary_rows(draws):
        for key in ("mean", "sd", "q2.5", "q97.5"):
            rows.append({"model": model, "parameter": r["parameter"], "metric": key, "value": r[key]})
    if args.ns_draws:
        ns = io.read_draws(args.ns_draws)
        ns_beta = dict(zip(ns.beta_names, ns.beta.T))
        for k, name in enumerate(draws.beta_names):
            if name in ns_beta:
                rows.append({"model": model, "parameter": name, "metric": "svif",
                             "value": svif(draws.beta[:, k], ns_beta[name])})
    io.write_table(rows, outputs("diagnostics.csv"), ["model", "parameter", "metric", "value"])
    if diag["low_ess"]:
        print("low effective sample size: " + ", ".join(diag["low_ess"]))
    print(f"wrote {len(rows)} diagnostic rows")
    return 0


def cmd_study(args, outputs: _Outputs) -> int:
    _require_seed(args)
    cfg = ScenarioConfig(
        units_per_area=args.units_per_area, confounded=args.confounded, intercept=args.intercept,
        censoring=tuple(args.censoring), replicates=args.replicates, seed=args.seed,
        mcmc=MCMCConfig(args.iterations, args.burn_in, args.thin), threads=args.threads,
    )
    res = run_recovery_study(cfg)
    io.write_table(res.table, outputs("study.csv"), STUDY_COLUMNS)
    io.write_table(res.deltas, outputs("deltas.csv"),
                   ["scenario", "censoring", "replicate", "model", "parameter", "delta"])
    io.write_table(res.svif, outputs("svif.csv"), ["scenario", "censoring", "replicate", "parameter", "svif"])
    io.write_json({"replicates": res.replicates, "failed": res.failed}, outputs("failed.json"))
    for r in res.table:
        print(f"{r['censoring']:.2f} {r['model']:>4} {r['parameter']:>6}  "
              f"{r['mean']:.3f} ({r['sd']:.3f})  cov {r['coverage']:.3f}  mse {r['mse']:.4f}")
    if res.failed:
        print(f"{len(res.failed)} replicates failed and were excluded")
    return 0


def cmd_bench(args, outputs: _Outputs) -> int:
    cfg = BenchConfig(
        n_areas=args.n_areas, grid=tuple(args.grid), draws=args.draws_per_fit,
        repetitions=args.repetitions, max_full_n=args.max_full_n,
        seed=2024 if args.seed is None else args.seed,
    )
    res = run_reduction_bench(cfg)
    io.write_table(res.rows, outputs("timing.csv"), TIMING_COLUMNS)
    status = "passed" if res.equivalent else "FAILED"
    gaps = ", ".join(f"N={N}: {g:.1e}" for N, g in res.equivalence.items())
    print(f"equivalence check {status} ({gaps})")
    for N in sorted({r["N"] for r in res.rows}):
        print(f"N={N:>6}  full {res.median(N, 'full', 'total'):.4f}s  "
              f"reduced {res.median(N, 'reduced', 'total'):.4f}s")
    return 0 if res.equivalent else 1


COMMANDS = {
    "simulate": cmd_simulate, "fit": cmd_fit, "restrict": cmd_restrict,
    "diagnose": cmd_diagnose, "study": cmd_study, "bench": cmd_bench,
}


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsfrailty", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON file of option values")
        p.add_argument("--out", default=".", help="output directory")
        if seed:
            p.add_argument("--seed", type=int)

    def mcmc(p, iterations=15000, burn_in=5000, thin=2):
        p.add_argument("--iterations", type=int, default=iterations)
        p.add_argument("--burn-in", type=int, default=burn_in)
        p.add_argument("--thin", type=int, default=thin)

    p = sub.add_parser("simulate", help="generate one synthetic dataset")
    common(p)
    p.add_argument("--censoring", type=float, nargs="+", default=[0.0])
    p.add_argument("--confounded", action="store_true")
    p.add_argument("--units-per-area", type=int, default=10)
    p.add_argument("--graph", help="adjacency file (default: 92-area lattice)")
    p.add_argument("--latitude", help="one centroid latitude per area, whitespace separated")

    p = sub.add_parser("fit", help="sample the unrestricted model")
    common(p)
    p.add_argument("--data")
    p.add_argument("--graph")
    p.add_argument("--family", choices=sorted(FAMILIES), default="weibull")
    p.add_argument("--intercept", action="store_true")
    p.add_argument("--eps", action="store_true", help="add an unstructured individual frailty")
    p.add_argument("--no-spatial", action="store_true", help="fit the non-spatial model")
    p.add_argument("--scale-time", action="store_true", help="divide times by their maximum")
    mcmc(p)

    p = sub.add_parser("restrict", help="correct unrestricted draws for spatial confounding")
    common(p, seed=False)
    p.add_argument("--draws")
    p.add_argument("--data")
    p.add_argument("--graph")
    p.add_argument("--ns-draws", help="non-spatial draws for SVIF columns")
    p.add_argument("--emit-tilde", action="store_true", help="write the N-per-draw eps_rsf columns")

    p = sub.add_parser("diagnose", help="convergence diagnostics and summaries of a draws file")
    common(p, seed=False)
    p.add_argument("--draws")
    p.add_argument("--ns-draws")

    p = sub.add_parser("study", help="replicated recovery study")
    common(p)
    p.add_argument("--censoring", type=float, nargs="+", default=[0.0, 0.5])
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--confounded", action="store_true")
    p.add_argument("--intercept", action="store_true")
    p.add_argument("--units-per-area", type=int, default=10)
    p.add_argument("--threads", type=int, default=1, help="worker processes for replicates")
    mcmc(p, 6000, 2000, 1)

    p = sub.add_parser("bench", help="full versus reduced correction timing")
    common(p)
    p.add_argument("--grid", type=int, nargs="+", default=[2, 4, 8, 16, 32, 64, 128])
    p.add_argument("--n-areas", type=int, default=92)
    p.add_argument("--draws-per-fit", type=int, default=5000)
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--max-full-n", type=int, default=12000)
    return parser


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            parser.error(f"{args.config}: expected a JSON object")
        sp = _subparser(parser, args.command)
        known = {a.dest for a in sp._actions}
        values = {}
        for k, v in cfg.items():
            dest = k.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                parser.error(f"{args.config}: unknown option {k!r} for {args.command}")
            values[dest] = v
        sp.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    outputs = None
    try:
        outputs = _Outputs(_prepare_out(args.out))
        return COMMANDS[args.command](args, outputs)
    except (ValueError, OSError, GraphError, RuntimeError, KeyError) as exc:
        if outputs is not None:
            outputs.remove()
        print(f"rsfrailty {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
