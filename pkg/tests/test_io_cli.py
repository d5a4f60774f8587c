import json
import time

import numpy as np
import pytest

from rsfrailty import io
from rsfrailty.cli import main, parse_args
from rsfrailty.graph import build_graph, write_adjacency
from rsfrailty.inference import MCMCConfig, ModelSpec, fit_unrestricted
from rsfrailty.survival import INTERVAL, SurvivalDataset

FAST = ["--iterations", "400", "--burn-in", "200", "--thin", "1"]


def toy_dataset(rng, N=40, n=4, censor=None):
    censor = rng.integers(0, 3, N) if censor is None else censor
    return SurvivalDataset(rng.uniform(0.1, 2, N), censor, rng.standard_normal((N, 2)),
                           np.tile(np.arange(1, n + 1), N // n), n, covariates=("age", "stage"))


def test_dataset_round_trip(tmp_path, rng):
    data = toy_dataset(rng)
    io.write_dataset(data, tmp_path / "d.csv")
    back = io.read_dataset(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.time, data.time)
    np.testing.assert_array_equal(back.X, data.X)
    np.testing.assert_array_equal(back.censor, data.censor)
    assert back.covariates == ("age", "stage")


def test_interval_dataset_round_trip(tmp_path, rng):
    censor = np.array([0, 1, 2, 3, 3, 0, 1, 2])
    t = rng.uniform(0.1, 2, 8)
    data = SurvivalDataset(t, censor, rng.standard_normal((8, 1)), np.tile([1, 2], 4), 2,
                           time_upper=np.where(censor == INTERVAL, t + 1.0, np.nan))
    io.write_dataset(data, tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0].startswith("time_lower,time_upper,censor")
    back = io.read_dataset(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.censor, data.censor)
    np.testing.assert_array_equal(back.time_upper[back.censor == INTERVAL], data.time_upper[data.censor == INTERVAL])


def test_scale_time_flag(tmp_path, rng):
    data = toy_dataset(rng)
    io.write_dataset(data, tmp_path / "d.csv")
    scaled = io.read_dataset(tmp_path / "d.csv", scale_time=True)
    assert scaled.time.max() == pytest.approx(1.0)


def test_missing_area_column_is_named(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("time,censor,x1\n1.0,event,0.2\n")
    with pytest.raises(io.SchemaError, match="'area'"):
        io.read_dataset(p)


def test_bad_cell_reports_line_and_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("time,censor,area,x1\n1.0,event,1,0.2\n2.0,event,1,oops\n")
    with pytest.raises(io.SchemaError, match="line 3, column 'x1'"):
        io.read_dataset(p)
    p.write_text("time,censor,area\n1.0,died,1\n")
    with pytest.raises(io.SchemaError, match="'censor'"):
        io.read_dataset(p)


def small_fit(rng):
    graph = build_graph(4, [(1, 2), (2, 3), (3, 4)])
    data = toy_dataset(rng, censor=np.zeros(40, int))
    draws = fit_unrestricted(data, graph, ModelSpec(intercept=True), MCMCConfig(300, 100, 1, seed=1))
    return data, graph, draws


def test_draws_round_trip(tmp_path, rng):
    _, _, draws = small_fit(rng)
    io.write_draws(draws, tmp_path / "draws.csv")
    assert io.sidecar_path(tmp_path / "draws.csv").exists()
    back = io.read_draws(tmp_path / "draws.csv")
    assert back.beta_names == draws.beta_names
    np.testing.assert_array_equal(back.beta, draws.beta)
    np.testing.assert_array_equal(back.psi, draws.psi)
    np.testing.assert_array_equal(back.theta["alpha"], draws.theta["alpha"])
    assert back.meta["seed"] == 1


def test_external_draws_without_sidecar(tmp_path):
    p = tmp_path / "ext.csv"
    p.write_text("alpha,beta_1,tau_psi,psi_1,psi_2\n1.2,0.3,1.0,0.1,-0.1\n1.1,0.2,0.9,0.2,-0.2\n")
    d = io.read_draws(p)
    assert d.n_draws == 2 and d.psi.shape == (2, 2) and d.meta["model"] == "external"


@pytest.mark.parametrize("content,match", [
    ("", "empty"),
    ("alpha,beta_1,tau_psi,psi_1\n", "no draws"),
    ("alpha,beta_1,psi_1\n1,2,3\n", "tau_psi"),
    ("alpha,beta_1,beta_3\n1,2,3\n", "consecutively"),
    ("alpha,beta_1,gamma\n1,2,3\n", "unrecognised"),
    ("alpha,beta_1\n1,2\n1\n", "line 3"),
])
def test_draws_schema_errors(tmp_path, content, match):
    p = tmp_path / "bad.csv"
    p.write_text(content)
    with pytest.raises(io.SchemaError, match=match):
        io.read_draws(p)


def test_restrict_from_file_outputs(tmp_path, rng):
    data, graph, draws = small_fit(rng)
    io.write_dataset(data, tmp_path / "d.csv")
    write_adjacency(graph, tmp_path / "g.adj")
    io.write_draws(draws, tmp_path / "draws.csv")
    rows = io.restrict_from_file(tmp_path / "draws.csv", tmp_path / "d.csv", tmp_path / "g.adj", tmp_path / "r.csv")
    restricted = io.read_restricted(tmp_path / "r.csv")
    np.testing.assert_array_equal(restricted["alpha"], draws.theta["alpha"])
    np.testing.assert_array_equal(restricted["tau_psi"], draws.tau_psi)
    assert sum(k.startswith("psi_") for k in restricted) == 4
    summary = io.read_table(tmp_path / "r_summary.csv")
    params = {r["parameter"] for r in summary}
    assert {"beta_0", "beta_1", "beta_2", "tau_psi"} <= params
    assert all(np.isfinite(r["RSFM_sd"]) for r in summary)
    assert len(rows) == len(summary)


def test_restrict_intercept_only_two_areas(tmp_path):
    # X has only the intercept: beta_0 absorbs the count-weighted psi mean
    (tmp_path / "d.csv").write_text("time,censor,area\n1.0,event,1\n2.0,event,2\n1.5,right,2\n0.5,event,2\n")
    (tmp_path / "g.adj").write_text("1 2\n")
    (tmp_path / "draws.csv").write_text(
        "alpha,beta_0,tau_psi,psi_1,psi_2\n1.0,0.5,1.0,0.8,-0.4\n1.0,0.0,1.0,-0.2,0.6\n"
    )
    io.restrict_from_file(tmp_path / "draws.csv", tmp_path / "d.csv", tmp_path / "g.adj", tmp_path / "r.csv")
    out = io.read_restricted(tmp_path / "r.csv")
    np.testing.assert_allclose(out["beta_0_rsf"], [0.5 + (0.8 - 3 * 0.4) / 4, (-0.2 + 3 * 0.6) / 4])


def test_restrict_rejects_empty_draws(tmp_path, rng):
    data, graph, _ = small_fit(rng)
    io.write_dataset(data, tmp_path / "d.csv")
    write_adjacency(graph, tmp_path / "g.adj")
    (tmp_path / "draws.csv").write_text("alpha,beta_0,beta_1,beta_2,tau_psi,psi_1,psi_2,psi_3,psi_4\n")
    with pytest.raises(io.SchemaError):
        io.restrict_from_file(tmp_path / "draws.csv", tmp_path / "d.csv", tmp_path / "g.adj", tmp_path / "r.csv")
    assert not (tmp_path / "r.csv").exists()


def test_table_round_trip(tmp_path):
    rows = [{"N": 184, "path": "full", "seconds": 0.1 + 0.2}, {"N": 368, "path": "reduced", "seconds": 1e-7}]
    io.write_table(rows, tmp_path / "t.csv")
    assert io.read_table(tmp_path / "t.csv") == rows


# ---------------------------------------------------------------- command line


def test_simulate_default(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path), "--seed", "4"]) == 0
    data = io.read_dataset(tmp_path / "dataset.csv")
    assert data.N == 92 * 10
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert truth["alpha"] == 1.2 and len(truth["psi"]) == 92
    assert (tmp_path / "graph.adj").exists()


def test_simulate_is_byte_identical(tmp_path):
    main(["simulate", "--out", str(tmp_path / "a"), "--seed", "4"])
    main(["simulate", "--out", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a/dataset.csv").read_bytes() == (tmp_path / "b/dataset.csv").read_bytes()


def test_simulate_heavy_censoring(tmp_path):
    main(["simulate", "--out", str(tmp_path), "--seed", "4", "--censoring", "0.75", "--units-per-area", "12"])
    censor = [line.split(",")[1] for line in (tmp_path / "dataset.csv").read_text().splitlines()[1:]]
    assert np.mean([c == "right" for c in censor]) == pytest.approx(0.75, abs=0.02)


def test_simulate_requires_seed(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path)]) != 0
    assert "--seed" in capsys.readouterr().err


def test_invalid_censoring_exits_nonzero(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path), "--seed", "1", "--censoring", "1.5"]) != 0
    assert not (tmp_path / "dataset.csv").exists()


@pytest.mark.filterwarnings("ignore:effective sample size")
def test_fit_restrict_diagnose_workflow(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--out", str(sim), "--seed", "2", "--confounded", "--units-per-area", "3"]) == 0
    data_args = ["--data", str(sim / "dataset.csv"), "--graph", str(sim / "graph.adj")]
    assert main(["fit", *data_args, "--out", str(tmp_path / "fit"), "--seed", "1", *FAST]) == 0
    assert main(["fit", "--data", str(sim / "dataset.csv"), "--no-spatial", "--out", str(tmp_path / "ns"),
                 "--seed", "1", *FAST]) == 0
    header = (tmp_path / "fit/draws.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 1 + 2 + 1 + 92  # alpha, two betas, tau_psi, psi
    assert main(["restrict", *data_args, "--draws", str(tmp_path / "fit/draws.csv"),
                 "--ns-draws", str(tmp_path / "ns/draws.csv"), "--out", str(tmp_path / "rs")]) == 0
    summary = io.read_table(tmp_path / "rs/summary.csv")
    assert {"svif", "svrf", "NS_mean"} <= set(summary[0])
    assert {"beta_1", "beta_2", "tau_psi"} <= {r["parameter"] for r in summary}
    before = io.read_draws(tmp_path / "fit/draws.csv")
    after = io.read_restricted(tmp_path / "rs/restricted_draws.csv")
    np.testing.assert_array_equal(after["tau_psi"], before.tau_psi)
    np.testing.assert_array_equal(after["alpha"], before.theta["alpha"])
    assert main(["diagnose", "--draws", str(tmp_path / "fit/draws.csv"), "--ns-draws",
                 str(tmp_path / "ns/draws.csv"), "--out", str(tmp_path / "dg")]) == 0
    rows = io.read_table(tmp_path / "dg/diagnostics.csv")
    assert {r["metric"] for r in rows} >= {"ess", "rhat", "mean", "svif"}


@pytest.mark.filterwarnings("ignore:effective sample size")
def test_fit_eps_column_count(tmp_path, rng):
    data = toy_dataset(rng, N=16, censor=np.zeros(16, int))
    io.write_dataset(data, tmp_path / "d.csv")
    write_adjacency(build_graph(4, [(1, 2), (2, 3), (3, 4)]), tmp_path / "g.adj")
    assert main(["fit", "--data", str(tmp_path / "d.csv"), "--graph", str(tmp_path / "g.adj"), "--eps",
                 "--out", str(tmp_path), "--seed", "3", *FAST]) == 0
    header = (tmp_path / "draws.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 1 + 2 + 1 + 4 + 1 + 16


def test_fit_toy_with_default_iterations_is_fast(tmp_path, rng):
    data = toy_dataset(rng, N=40, censor=np.zeros(40, int))
    io.write_dataset(data, tmp_path / "d.csv")
    write_adjacency(build_graph(4, [(1, 2), (2, 3), (3, 4)]), tmp_path / "g.adj")
    t0 = time.perf_counter()
    assert main(["fit", "--data", str(tmp_path / "d.csv"), "--graph", str(tmp_path / "g.adj"),
                 "--out", str(tmp_path), "--seed", "3"]) == 0
    assert time.perf_counter() - t0 < 60
    assert io.read_draws(tmp_path / "draws.csv").n_draws == 5000


def test_fit_missing_area_column(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("time,censor,x1\n1.0,event,0.3\n")
    assert main(["fit", "--data", str(tmp_path / "d.csv"), "--no-spatial", "--out", str(tmp_path / "o"),
                 "--seed", "1"]) != 0
    assert "'area'" in capsys.readouterr().err
    assert not (tmp_path / "o" / "draws.csv").exists()


def test_config_file_with_override(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"seed": 5, "units-per-area": 2, "censoring": [0.5]}))
    args = parse_args(["simulate", "--config", str(cfg), "--units-per-area", "3"])
    assert args.seed == 5 and args.units_per_area == 3 and args.censoring == [0.5]


def test_config_file_unknown_key(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"sed": 5}))
    with pytest.raises(SystemExit):
        parse_args(["simulate", "--config", str(cfg)])


def test_study_smoke(tmp_path):
    assert main(["study", "--out", str(tmp_path), "--seed", "1", "--replicates", "2", "--iterations", "200",
                 "--burn-in", "100", "--units-per-area", "3"]) == 0
    rows = io.read_table(tmp_path / "study.csv")
    assert list(rows[0]) == ["scenario", "censoring", "model", "parameter", "mean", "sd", "coverage", "mse"]
    assert len(rows) == 2 * 3 * 3
    assert io.read_table(tmp_path / "svif.csv")
    assert json.loads((tmp_path / "failed.json").read_text())["failed"] == []


def test_bench_small_grid(tmp_path, capsys):
    assert main(["bench", "--out", str(tmp_path), "--grid", "2", "4", "--draws-per-fit", "100",
                 "--repetitions", "2"]) == 0
    assert "equivalence check passed" in capsys.readouterr().out
    rows = io.read_table(tmp_path / "timing.csv")
    assert {r["N"] for r in rows} == {184, 368}
    assert {r["path"] for r in rows} == {"full", "reduced"}
    assert list(rows[0])[:5] == ["N", "n", "path", "phase", "seconds"]
