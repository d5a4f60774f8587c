import numpy as np
import pytest

from rsfrailty.graph import (
    GraphError, build_graph, car_precision, connected_components, greedy_coloring, icar_eigen,
    icar_precision, lattice_graph, read_adjacency, require_icar_ready, sample_icar, write_adjacency,
)


def test_build_graph_symmetric_and_deduplicated():
    g = build_graph(3, [(1, 2), (2, 1), (2, 3)])
    assert g.edges == ((1, 2), (2, 3))
    np.testing.assert_array_equal(g.W, g.W.T)
    np.testing.assert_array_equal(g.D_w, [1, 2, 1])


@pytest.mark.parametrize("edges", [[(1, 1)], [(0, 2)], [(1, 5)]])
def test_build_graph_rejects_bad_edges(edges):
    with pytest.raises(GraphError):
        build_graph(4, edges)


def test_isolated_area_warns_and_blocks_icar():
    with pytest.warns(UserWarning):
        g = build_graph(3, [(1, 2)])
    assert g.isolated.tolist() == [3]
    with pytest.raises(GraphError):
        require_icar_ready(g)


def test_disconnected_graph_rejected():
    g = build_graph(4, [(1, 2), (3, 4)])
    assert connected_components(g) == 2
    with pytest.raises(GraphError, match="component"):
        require_icar_ready(g)


def test_lattice_rook_structure():
    g = lattice_graph(23, 4)
    assert g.n == 92
    # 23 rows x 3 horizontal edges + 22 x 4 vertical edges
    assert len(g.edges) == 23 * 3 + 22 * 4
    assert set(np.unique(g.D_w)) == {2, 3, 4}
    assert connected_components(g) == 1


def test_icar_precision_rows_sum_to_zero(lattice):
    Q = icar_precision(lattice, tau=2.5).Q
    assert np.max(np.abs(Q.sum(axis=1))) <= 1e-12
    np.testing.assert_allclose(Q, Q.T)


def test_precision_on_path_graph(path4):
    Q = icar_precision(path4, 1.0).Q
    expected = np.array([[1, -1, 0, 0], [-1, 2, -1, 0], [0, -1, 2, -1], [0, 0, -1, 1]], float)
    np.testing.assert_array_equal(Q, expected)


def test_icar_rank_deficiency_is_one(lattice):
    Q = icar_precision(lattice, 1.0).Q
    assert np.linalg.matrix_rank(Q) == lattice.n - 1
    vals, vecs = icar_eigen(lattice)
    assert vals.size == lattice.n - 1
    # eigenvectors are orthogonal to the constant vector
    assert np.max(np.abs(vecs.sum(axis=0))) < 1e-10


def test_proper_car_is_positive_definite(lattice):
    Q = car_precision(lattice, rho=0.9, tau=1.0).Q
    assert np.linalg.eigvalsh(Q)[0] > 0


@pytest.mark.parametrize("rho,tau", [(1.2, 1.0), (-0.1, 1.0), (0.5, 0.0)])
def test_car_parameter_validation(lattice, rho, tau):
    with pytest.raises(ValueError):
        car_precision(lattice, rho=rho, tau=tau)


def test_sample_icar_sums_to_zero_and_is_reproducible(lattice):
    a = sample_icar(lattice, 0.75, seed=7, size=50)
    b = sample_icar(lattice, 0.75, seed=7, size=50)
    np.testing.assert_array_equal(a, b)
    assert np.max(np.abs(a.sum(axis=1))) <= 1e-10


def test_sample_icar_covariance_matches_pseudo_inverse(path4):
    draws = sample_icar(path4, 2.0, seed=3, size=40000)
    target = np.linalg.pinv(icar_precision(path4, 2.0).Q)
    emp = np.cov(draws, rowvar=False)
    assert np.linalg.norm(emp - target) / np.linalg.norm(target) < 0.05


def test_greedy_coloring_is_proper(lattice):
    colours = greedy_coloring(lattice)
    seen = np.concatenate(colours)
    assert sorted(seen.tolist()) == list(range(lattice.n))
    for cls in colours:
        assert lattice.W[np.ix_(cls, cls)].sum() == 0


def test_adjacency_round_trip(tmp_path, lattice):
    p = tmp_path / "g.adj"
    write_adjacency(lattice, p)
    g = read_adjacency(p)
    assert g.n == lattice.n and g.edges == lattice.edges


def test_read_adjacency_reports_line(tmp_path):
    p = tmp_path / "bad.adj"
    p.write_text("1 2\n2 x\n")
    with pytest.raises(GraphError, match=":2:"):
        read_adjacency(p)


def test_pairwise_sq_diff_constant_is_zero(lattice):
    assert lattice.pairwise_sq_diff(np.full(lattice.n, 3.3)) == 0.0


def test_pairwise_sq_diff_matches_quadratic_form(lattice, rng):
    psi = rng.standard_normal(lattice.n)
    Q = icar_precision(lattice, 1.0).Q
    assert lattice.pairwise_sq_diff(psi) == pytest.approx(psi @ Q @ psi, rel=1e-12)


def test_small_precision_examples():
    path3 = build_graph(3, [(1, 2), (2, 3)])
    np.testing.assert_array_equal(path3.D_w, [1, 2, 1])
    np.testing.assert_array_equal(
        car_precision(path3, rho=1.0, tau=2.0).Q, 2 * np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    )
    np.testing.assert_array_equal(car_precision(path3, rho=0.0, tau=1.0).Q, np.diag([1.0, 2.0, 1.0]))
    pair = build_graph(2, [(1, 2), (2, 1)])
    np.testing.assert_array_equal(pair.D_w, [1, 1])
    np.testing.assert_array_equal(icar_precision(pair, 1.0).Q, [[1, -1], [-1, 1]])
    complete = build_graph(3, [(1, 2), (1, 3), (2, 3)])
    np.testing.assert_array_equal(icar_precision(complete, 1.0).Q, [[2, -1, -1], [-1, 2, -1], [-1, -1, 2]])
    assert connected_components(complete) == 1


def test_component_count_with_isolated_areas():
    with pytest.warns(UserWarning):
        g = build_graph(4, [(1, 2)])
    assert connected_components(g) == 3


def test_icar_variance_scales_inversely_with_tau(lattice):
    v1 = sample_icar(lattice, 1.0, seed=11, size=1000).var(axis=0).mean()
    v10 = sample_icar(lattice, 10.0, seed=12, size=1000).var(axis=0).mean()
    assert v1 / v10 == pytest.approx(10.0, rel=0.15)
