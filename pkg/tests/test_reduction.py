import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsfrailty.reduction import (
    FullProjector, GramSolver, ReducedProjector, SingularDesignError, beta_restricted, expand,
    operator_properties_check, project_full, psi_restricted, reduce, reduce_columns,
)


def random_instance(rng, N=40, n=5, p=3):
    G = np.concatenate([np.arange(1, n + 1), rng.integers(1, n + 1, N - n)])
    rng.shuffle(G)
    X = rng.standard_normal((N, p))
    return X, G


def test_reduce_definition():
    np.testing.assert_array_equal(reduce([[1], [2], [3], [4]], [1, 1, 2, 2]), [[3], [7]])


def test_reduce_identity_grouping(rng):
    X = rng.standard_normal((7, 3))
    np.testing.assert_allclose(reduce(X, np.arange(1, 8)), X, rtol=0, atol=0)


def test_reduce_row_order_invariant(rng):
    X, G = random_instance(rng)
    perm = rng.permutation(len(G))
    np.testing.assert_allclose(reduce(X[perm], G[perm]), reduce(X, G), atol=1e-13)


def test_reduce_preserves_column_sums(rng):
    X, G = random_instance(rng)
    np.testing.assert_allclose(reduce(X, G).sum(axis=0), X.sum(axis=0), atol=1e-12)


def test_reduce_length_mismatch():
    with pytest.raises(ValueError):
        reduce(np.ones((3, 2)), [1, 2])


def test_reduce_is_linear(rng):
    X, G = random_instance(rng)
    Y = rng.standard_normal(X.shape)
    a, b = 1.7, -0.4
    np.testing.assert_allclose(reduce(a * X + b * Y, G), a * reduce(X, G) + b * reduce(Y, G), atol=1e-12)


def test_column_reduction_is_transposed_row_reduction(rng):
    X, G = random_instance(rng)
    A = rng.standard_normal((4, len(G)))
    np.testing.assert_array_equal(reduce_columns(A, G), reduce(A.T, G).T)


def test_expand_examples():
    np.testing.assert_array_equal(expand([10.0, 20.0], [1, 1, 2]), [10.0, 10.0, 20.0])
    np.testing.assert_array_equal(expand(np.zeros(3), [1, 3, 2, 2]), np.zeros(4))


def test_reduce_of_expand_is_count_weighted(rng):
    _, G = random_instance(rng)
    psi = rng.standard_normal(5)
    counts = np.bincount(G - 1)
    np.testing.assert_allclose(reduce(expand(psi, G), G), counts * psi, atol=1e-12)


def test_project_full_decomposition(rng):
    X, _ = random_instance(rng)
    Psi = rng.standard_normal(X.shape[0])
    P_psi, perp = project_full(X, Psi)
    np.testing.assert_allclose(P_psi + perp, Psi, rtol=0, atol=1e-14)
    assert np.max(np.abs(X.T @ perp)) < 1e-9
    # idempotent: projecting the projection changes nothing
    again, _ = project_full(X, P_psi)
    np.testing.assert_allclose(again, P_psi, atol=1e-10)


def test_project_full_extremes(rng):
    X, _ = random_instance(rng)
    _, perp = project_full(X, X @ np.array([0.3, -1.0, 2.0]))
    assert np.max(np.abs(perp)) < 1e-10
    Q, _ = np.linalg.qr(np.column_stack([X, rng.standard_normal(X.shape[0])]))
    orth = Q[:, -1]
    P_psi, _ = project_full(X, orth)
    assert np.max(np.abs(P_psi)) < 1e-10


def test_singular_design_rejected():
    X = np.column_stack([np.ones(10), 2 * np.ones(10)])
    with pytest.raises(SingularDesignError, match="condition"):
        GramSolver.from_design(X)


def test_beta_restricted_matches_full_oracle(rng):
    X, G = random_instance(rng, N=40, n=5, p=3)
    beta, psi = rng.standard_normal(3), rng.standard_normal(5)
    full = beta + np.linalg.solve(X.T @ X, X.T @ expand(psi, G))
    np.testing.assert_allclose(beta_restricted(beta, psi, X, G), full, atol=1e-10)


def test_beta_restricted_trivial_cases(rng):
    X, G = random_instance(rng)
    beta = rng.standard_normal(3)
    np.testing.assert_array_equal(beta_restricted(beta, np.zeros(5), X, G), beta)


def orthogonal_setup():
    """Design orthogonal to every area indicator: within-area contrasts only."""
    G = np.repeat([1, 2, 3], 4)
    base = np.array([1.0, -1.0, 2.0, -2.0])
    X = np.column_stack([np.tile(base, 3), np.tile([1.0, 1.0, -1.0, -1.0], 3)])
    return X, G


def test_orthogonal_design_leaves_effects_alone():
    X, G = orthogonal_setup()
    psi = np.array([0.5, -1.0, 0.5])
    beta = np.array([0.2, 0.4])
    np.testing.assert_allclose(beta_restricted(beta, psi, X, G), beta, atol=1e-10)
    psi_rsf, tilde = psi_restricted(psi, X, G)
    np.testing.assert_allclose(psi_rsf, psi, atol=1e-12)
    np.testing.assert_allclose(tilde, 0.0, atol=1e-12)


def test_psi_restricted_matches_full_oracle(rng):
    X, G = random_instance(rng, N=60, n=6, p=3)
    psi = rng.standard_normal(6)
    psi_rsf, tilde = psi_restricted(psi, X, G)
    _, perp = project_full(X, expand(psi, G))
    np.testing.assert_allclose(expand(psi_rsf, G) + tilde, perp, atol=1e-9)
    area_means = reduce(tilde, G) / np.bincount(G - 1)
    assert np.max(np.abs(area_means)) < 1e-10


def test_reduced_and_full_projectors_agree(rng):
    X, G = random_instance(rng, N=150, n=12, p=4)
    S = 25
    beta, psi = rng.standard_normal((S, 4)), rng.standard_normal((S, 12))
    red = ReducedProjector(X, G, 12)
    b_full, p_full, orth = FullProjector(X, G, 12).apply(beta, psi, chunk=7, keep_orth=True)
    np.testing.assert_allclose(red.beta(beta, psi), b_full, atol=1e-10)
    np.testing.assert_allclose(red.psi(psi), p_full, atol=1e-10)
    np.testing.assert_allclose(red.psi_tilde(psi) + expand(red.psi(psi), G), orth, atol=1e-10)


def test_empty_area_keeps_effect(rng):
    X = rng.standard_normal((20, 2))
    G = rng.integers(1, 4, 20)  # area 4 has no units
    psi = rng.standard_normal(4)
    red = ReducedProjector(X, G, 4)
    _, p_full, _ = FullProjector(X, G, 4).apply(np.zeros(2), psi)
    assert red.psi(psi)[3] == pytest.approx(psi[3])
    assert p_full[0, 3] == pytest.approx(psi[3])


def test_property_two_with_zero_scalar(rng):
    X, G = random_instance(rng)
    report = operator_properties_check(X, X, np.ones((2, 3)), np.eye(3), np.ones(5), 0.0, G)
    assert report[2] == 0.0


def test_properties_hold_with_identity_grouping(rng):
    X = rng.standard_normal((8, 3))
    G = np.arange(1, 9)
    report = operator_properties_check(
        X, rng.standard_normal((8, 3)), rng.standard_normal((2, 3)), rng.standard_normal((3, 3)),
        rng.standard_normal(8), 1.3, G,
    )
    assert max(report.values()) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 20), extra=st.integers(0, 180), p=st.integers(1, 6))
def test_operator_properties_random(seed, n, extra, p):
    rng = np.random.default_rng(seed)
    N = n + extra
    G = np.concatenate([np.arange(1, n + 1), rng.integers(1, n + 1, extra)])
    rng.shuffle(G)
    report = operator_properties_check(
        rng.standard_normal((N, p)), rng.standard_normal((N, p)), rng.standard_normal((3, p)),
        rng.standard_normal((p, p)), rng.standard_normal(n), rng.normal(), G, n,
    )
    assert set(report) == set(range(1, 8))
    assert max(report.values()) <= 1e-9
