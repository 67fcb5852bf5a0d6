import numpy as np
import pytest

from dimts.eigen import (DegenerateSpectrumError, SingularDegreeError, generalized_eig_smallest,
                         jacobi_eigh)


def random_psd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T


def test_jacobi_matches_reference(rng):
    a = random_psd(rng, 7)
    w, v = jacobi_eigh(a)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a), atol=1e-10)
    np.testing.assert_allclose(a @ v, v * w, atol=1e-10)
    np.testing.assert_allclose(v.T @ v, np.eye(7), atol=1e-12)


def test_two_node_graph_closed_form():
    L = np.array([[1.0, -1.0], [-1.0, 1.0]])
    lam, v = generalized_eig_smallest(L, np.eye(2))
    assert lam == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(v, np.array([1.0, -1.0]) / np.sqrt(2), atol=1e-12)


@pytest.mark.parametrize("n", [3, 5, 9])
def test_residual_and_normalisation(n, rng):
    L = random_psd(rng, n)
    d = rng.uniform(0.5, 2.0, n)
    D = np.diag(d)
    lam, v = generalized_eig_smallest(L, D)
    assert np.max(np.abs(L @ v - lam * D @ v)) < 1e-8
    assert v @ D @ v == pytest.approx(1.0, abs=1e-10)
    assert lam > 1e-8
    first = v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
    assert first > 0
    ref = np.sort(np.real(np.linalg.eigvals(np.linalg.solve(D, L))))
    assert lam == pytest.approx(ref[ref > 1e-8][0], rel=1e-9)


def test_skips_zero_eigenvalue_of_laplacian(rng):
    G = rng.uniform(0, 1, (4, 4))
    G = (G + G.T) / 2
    np.fill_diagonal(G, 0)
    D = np.diag(G.sum(1))
    lam, v = generalized_eig_smallest(D - G, D)
    assert lam > 1e-8
    # the constant vector (eigenvalue 0) is D-orthogonal to the Fiedler vector
    assert abs(np.ones(4) @ D @ v) < 1e-10


def test_zero_matrix_is_degenerate():
    with pytest.raises(DegenerateSpectrumError):
        generalized_eig_smallest(np.zeros((3, 3)), np.eye(3))


def test_singular_degree():
    with pytest.raises(SingularDegreeError):
        generalized_eig_smallest(np.eye(2), np.diag([1.0, 0.0]))


def test_dimension_cap():
    with pytest.raises(ValueError):
        generalized_eig_smallest(np.eye(4), np.eye(4), max_dim=3)
