import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from msrsb.factorization import FactorizationError, incomplete_factorize
from msrsb.sparselinalg import canonical_csr


def tridiag(n, lo=-1.0, d=2.0, hi=-1.0):
    return canonical_csr(sp.diags([lo * np.ones(n - 1), d * np.ones(n),
                                   hi * np.ones(n - 1)], [-1, 0, 1], format="csr"))


def test_ilu0_exact_on_tridiagonal():
    # tridiagonal patterns admit no fill, so ILU(0) equals the exact LU
    A = tridiag(8)
    fact = incomplete_factorize(A, "ilu0")
    dense = (fact.lower @ fact.upper).toarray()
    assert np.allclose(dense, A.toarray(), rtol=0, atol=1e-14)


def test_ic0_exact_on_tridiagonal():
    A = tridiag(8)
    fact = incomplete_factorize(A, "ic0")
    L_ref = np.linalg.cholesky(A.toarray())
    assert np.allclose(fact.lower.toarray(), L_ref, rtol=1e-13, atol=1e-14)


def test_identity_factors_to_identity():
    I = canonical_csr(sp.eye(5, format="csr"))
    for kind in ("ilu0", "ic0"):
        fact = incomplete_factorize(I, kind)
        assert (fact.lower != I).nnz == 0
        assert (fact.upper != I).nnz == 0


@pytest.mark.parametrize("kind", ["ilu0", "ic0"])
def test_apply_inverts_fill_free_system(kind):
    A = tridiag(40)
    x = np.sin(np.arange(40))
    fact = incomplete_factorize(A, kind)
    out = fact.apply(A @ x)
    assert np.abs(out - x).max() <= 1e-12 * np.abs(x).max()


def test_ilu0_pattern_is_preserved():
    rng = np.random.default_rng(2)
    M = rng.normal(size=(10, 10)) * (rng.random((10, 10)) < 0.3)
    np.fill_diagonal(M, 5.0)
    A = canonical_csr(sp.csr_matrix(M))
    fact = incomplete_factorize(A, "ilu0")
    combined = canonical_csr(
        (fact.lower - sp.eye(10, format="csr")) + fact.upper
    )
    pattern_in = set(zip(*A.nonzero()))
    pattern_out = set(zip(*combined.nonzero()))
    assert pattern_out <= pattern_in


def test_ilu0_zero_pivot_reports_row():
    # elimination produces an exact zero pivot in row 1
    A = canonical_csr(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]])))
    with pytest.raises(FactorizationError) as err:
        incomplete_factorize(A, "ilu0")
    assert err.value.row == 1


def test_ic0_negative_pivot_reports_row():
    A = canonical_csr(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])))
    with pytest.raises(FactorizationError) as err:
        incomplete_factorize(A, "ic0")
    assert err.value.row == 1


def test_ic0_pivot_shift_rescues_zero_pivot():
    A = canonical_csr(sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]])))
    with pytest.raises(FactorizationError):
        incomplete_factorize(A, "ic0")
    fact = incomplete_factorize(A, "ic0", pivot_shift=True)
    assert np.isfinite(fact.lower.data).all()


def test_ic0_rejects_nonsymmetric():
    A = canonical_csr(sp.csr_matrix(np.array([[2.0, 1.0], [0.5, 2.0]])))
    with pytest.raises(ValueError, match="symmetric"):
        incomplete_factorize(A, "ic0")


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        incomplete_factorize(tridiag(3), "ilut")


def test_missing_diagonal_reported():
    A = sp.csr_matrix((np.array([1.0]), (np.array([0]), np.array([1]))),
                      shape=(2, 2))
    with pytest.raises(FactorizationError):
        incomplete_factorize(canonical_csr(A), "ilu0")


def test_ic0_preconditions_random_spd():
    rng = np.random.default_rng(9)
    n = 60
    M = sp.random(n, n, density=0.08, random_state=4).toarray()
    A = canonical_csr(sp.csr_matrix(M @ M.T + n * np.eye(n)))
    fact = incomplete_factorize(A, "ic0")
    b = rng.normal(size=n)
    x = fact.apply(b)
    assert np.linalg.norm(b - A @ x) < np.linalg.norm(b)
