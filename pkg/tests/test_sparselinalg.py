import numpy as np
import pytest
import scipy.sparse as sp

from msrsb.sparselinalg import (canonical_csr, filter_to_m, filter_zero_rowsum,
                                read_matrix_market, spmv, triple_product,
                                write_matrix_market)


def csr(dense):
    return canonical_csr(sp.csr_matrix(np.asarray(dense, dtype=float)))


def test_spmv_identity():
    A = csr(np.eye(3))
    assert np.array_equal(spmv(A, np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])


def test_spmv_hand_value():
    A = csr([[2.0, -1.0], [-1.0, 2.0]])
    assert np.array_equal(spmv(A, np.array([1.0, 1.0])), [1.0, 1.0])


def test_spmv_zero_vector():
    A = csr([[2.0, -1.0], [-1.0, 2.0]])
    assert np.array_equal(spmv(A, np.zeros(2)), np.zeros(2))


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        spmv(csr(np.eye(3)), np.zeros(4))


def test_triple_product_identity():
    A = csr([[4.0, 1.0], [1.0, 3.0]])
    I = csr(np.eye(2))
    assert (triple_product(I, A, I) - A).nnz == 0


def test_triple_product_ones_column():
    A = csr([[4.0, 1.0], [1.0, 3.0]])
    P = csr([[1.0], [1.0]])
    out = triple_product(canonical_csr(P.T), A, P)
    assert out.shape == (1, 1)
    assert out[0, 0] == pytest.approx(9.0)


def test_triple_product_galerkin_spd():
    rng = np.random.default_rng(5)
    M = rng.normal(size=(8, 8))
    A = csr(M @ M.T + 8 * np.eye(8))
    P = csr(rng.normal(size=(8, 3)))
    Ac = triple_product(canonical_csr(P.T), A, P)
    np.linalg.cholesky(Ac.toarray())  # SPD iff this succeeds


def test_triple_product_dimension_mismatch():
    A = csr(np.eye(3))
    P = csr(np.ones((2, 1)))
    with pytest.raises(ValueError):
        triple_product(canonical_csr(P.T), A, P)


def test_triple_product_drops_numerical_zeros():
    # P columns orthogonal to a row of A produce exact zeros in the product
    A = csr([[1.0, -1.0], [-1.0, 1.0]])
    P = csr([[1.0, 1.0], [1.0, -1.0]])
    out = triple_product(canonical_csr(P.T), A, P)
    assert out.nnz == 1  # only the (1,1) entry survives
    assert out[1, 1] == pytest.approx(4.0)


def test_canonical_keeps_tiny_values():
    A = sp.csr_matrix((np.array([1e-200]), (np.array([0]), np.array([0]))),
                      shape=(1, 1))
    assert canonical_csr(A).nnz == 1


def test_filter_to_m_already_m_matrix():
    A = csr([[2.0, -1.0], [-1.0, 2.0]])
    out = filter_to_m(A)
    assert out[0, 1] == -1.0 and out[1, 0] == -1.0
    assert np.all(out.diagonal() == 0.0)


def test_filter_to_m_mixed_signs():
    A = csr([[4.0, 1.0], [-2.0, 3.0]])
    out = filter_to_m(A)
    assert out.nnz == 1
    assert out[1, 0] == -2.0


def test_filter_to_m_diagonal_matrix():
    assert filter_to_m(csr(np.diag([1.0, 2.0, 3.0]))).nnz == 0


def test_filter_to_m_rejects_nonpositive_diagonal():
    with pytest.raises(ValueError, match="row 1"):
        filter_to_m(csr([[1.0, 0.5], [0.5, -2.0]]))


def test_filter_to_m_idempotent():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(6, 6))
    np.fill_diagonal(M, 2.0)
    A = csr(M)
    once = filter_to_m(A)
    again = filter_to_m(canonical_csr(once + sp.diags(A.diagonal())))
    assert (once != again).nnz == 0


def test_filter_zero_rowsum_single_entry():
    off = sp.csr_matrix((np.array([-2.0]), (np.array([1]), np.array([0]))),
                        shape=(2, 2))
    G, isolated = filter_zero_rowsum(off)
    assert np.allclose(G.toarray(), [[0.0, 0.0], [-2.0, 2.0]])
    assert list(isolated) == [True, False]


def test_filter_zero_rowsum_empty():
    G, isolated = filter_zero_rowsum(sp.csr_matrix((3, 3)))
    assert G.nnz == 0
    assert isolated.all()


def test_filter_zero_rowsum_symmetric_pair():
    off = csr([[0.0, -1.0], [-1.0, 0.0]])
    G, isolated = filter_zero_rowsum(off)
    assert np.allclose(G.toarray(), [[1.0, -1.0], [-1.0, 1.0]])
    assert not isolated.any()


def test_filter_zero_rowsum_rows_sum_to_zero():
    rng = np.random.default_rng(7)
    n = 30
    off = sp.random(n, n, density=0.2, random_state=3, format="csr")
    off.setdiag(0)
    G, _ = filter_zero_rowsum(canonical_csr(off))
    rowsum = np.asarray(G.sum(axis=1)).ravel()
    scale = np.maximum(np.asarray(abs(G).sum(axis=1)).ravel(), 1e-30)
    assert np.all(np.abs(rowsum) <= 1e-13 * scale)


def test_filter_zero_rowsum_rejects_diagonal():
    with pytest.raises(ValueError):
        filter_zero_rowsum(csr(np.eye(2)))


def test_m_matrix_filter_roundtrip_exact():
    # an M-matrix with zero row sums passes through both filters unchanged
    A = csr([[1.0, -0.25, -0.75], [-0.5, 1.5, -1.0], [-0.25, -0.75, 1.0]])
    G, _ = filter_zero_rowsum(filter_to_m(A))
    assert (G != A).nnz == 0


def test_matrix_market_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    A = canonical_csr(sp.random(12, 12, density=0.3, random_state=1, format="csr"))
    path = tmp_path / "a.mtx"
    write_matrix_market(path, A)
    B = read_matrix_market(path)
    assert (A != B).nnz == 0
