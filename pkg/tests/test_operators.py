import numpy as np
import pytest
import scipy.sparse

from dissipnet.operators import (AvgPoolOperator, Conv2dOperator, DenseOperator, IdentityOperator,
                                 SparseOperator, ZeroOperator, gaussian_kernel, materialize,
                                 operator_norm_sq, read_matrix_market)
from dissipnet.tensor import ShapeError


def pooling_matrix(h, w, k):
    """Block-averaging matrix written down entry by entry."""
    M = np.zeros(((h // k) * (w // k), h * w))
    for r in range(h):
        for c in range(w):
            M[(r // k) * (w // k) + c // k, r * w + c] = 1.0 / k ** 2
    return M


def operators():
    rng = np.random.default_rng(0)
    S = scipy.sparse.random(7, 9, density=0.3, random_state=1, format="csr")
    return [
        DenseOperator(rng.standard_normal((5, 8))),
        DenseOperator(rng.standard_normal((6, 4)), input_shape=(2, 2), output_shape=(3, 2)),
        SparseOperator(S),
        AvgPoolOperator((8, 12), 4),
        AvgPoolOperator((6, 6), 2),
        Conv2dOperator((7, 9), gaussian_kernel(1.2)),
        Conv2dOperator((6, 5), rng.standard_normal((3, 5))),
        Conv2dOperator((6, 6), [1.0, 2.0, 1.0], separable=True),
        IdentityOperator((3, 4)),
        ZeroOperator((4,), (2,)),
    ]


def test_dense_apply_example():
    assert DenseOperator([[1.0, 1.0]]).apply(np.array([2.0, 3.0])) == pytest.approx([5.0])


def test_avgpool_ones_block():
    np.testing.assert_allclose(AvgPoolOperator((4, 4), 4).apply(np.ones((4, 4))), [[1.0]])


def test_zero_operator():
    assert not ZeroOperator((3,), (2,)).apply(np.arange(3.0)).any()


def test_avgpool_adjoint_example():
    np.testing.assert_allclose(AvgPoolOperator((4, 4), 4).adjoint(np.ones((1, 1))),
                               np.full((4, 4), 1 / 16))


def test_dense_adjoint_example():
    np.testing.assert_array_equal(DenseOperator([[1.0, 1.0]]).adjoint(np.array([1.0])), [1.0, 1.0])


@pytest.mark.parametrize("op", operators(), ids=lambda o: o.kind)
def test_dot_product_identity(op):
    rng = np.random.default_rng(7)
    for _ in range(100):
        u = rng.standard_normal(op.input_shape)
        v = rng.standard_normal(op.output_shape)
        lhs = np.vdot(op.apply(u), v)
        rhs = np.vdot(u, op.adjoint(v))
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(u) * np.linalg.norm(v)


@pytest.mark.parametrize("op", operators(), ids=lambda o: o.kind)
def test_shapes_checked(op):
    assert op.apply(np.zeros(op.input_shape)).shape == op.output_shape
    assert op.adjoint(np.zeros(op.output_shape)).shape == op.input_shape
    with pytest.raises(ShapeError):
        op.apply(np.zeros(np.prod(op.input_shape) + 1))
    with pytest.raises(ShapeError):
        op.adjoint(np.zeros(np.prod(op.output_shape) + 1))


@pytest.mark.parametrize("h, w, k", [(4, 4, 2), (8, 8, 4), (6, 9, 3)])
def test_avgpool_matches_brute_force_matrix(h, w, k):
    op = AvgPoolOperator((h, w), k)
    M = pooling_matrix(h, w, k)
    u = np.random.default_rng(h * w).standard_normal((h, w))
    np.testing.assert_allclose(op.apply(u).ravel(), M @ u.ravel(), atol=1e-14)
    np.testing.assert_allclose(materialize(op), M, atol=1e-15)


def test_avgpool_rejects_indivisible():
    with pytest.raises(ShapeError):
        AvgPoolOperator((6, 6), 4)


def test_conv_zero_padding():
    # unit impulse in the corner: the kernel is cut off at the border
    op = Conv2dOperator((3, 3), np.ones((3, 3)))
    u = np.zeros((3, 3))
    u[0, 0] = 1.0
    np.testing.assert_array_equal(op.apply(u), [[1, 1, 0], [1, 1, 0], [0, 0, 0]])


def test_norm_examples():
    est, _ = operator_norm_sq(DenseOperator([[1.0, 1.0]]))
    assert est == pytest.approx(2.0, rel=1e-12)
    est, _ = operator_norm_sq(IdentityOperator((3, 5)))
    assert est == pytest.approx(1.0, rel=1e-12)
    est, _ = operator_norm_sq(AvgPoolOperator((8, 8), 4))
    brute = np.linalg.eigvalsh(pooling_matrix(8, 8, 4).T @ pooling_matrix(8, 8, 4)).max()
    assert brute == pytest.approx(1 / 16, rel=1e-12)
    assert est == pytest.approx(1 / 16, rel=1e-10)
    assert operator_norm_sq(ZeroOperator((3,), (3,)))[0] == 0.0


@pytest.mark.parametrize("m, n", [(10, 10), (30, 20), (64, 64), (5, 40)])
def test_norm_against_eigendecomposition(m, n):
    A = np.random.default_rng(m + n).standard_normal((m, n))
    est, change = operator_norm_sq(DenseOperator(A), iters=5000)
    exact = np.linalg.eigvalsh(A.T @ A).max()
    assert est == pytest.approx(exact, rel=1e-6)
    assert change >= 0


def test_norm_estimates_nondecreasing():
    A = np.random.default_rng(3).standard_normal((20, 20))
    ests = [operator_norm_sq(DenseOperator(A), iters=k)[0] for k in range(1, 30)]
    assert all(b >= a for a, b in zip(ests, ests[1:]))


def test_matrix_market_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    S = scipy.sparse.random(6, 4, density=0.5, random_state=2, format="coo")
    path = tmp_path / "a.mtx"
    scipy.io.mmwrite(str(path), S)
    M = read_matrix_market(path)
    np.testing.assert_array_equal(M.toarray(), S.toarray())
    op = SparseOperator.from_matrix_market(path)
    u = rng.standard_normal(4)
    np.testing.assert_allclose(op.apply(u), S.toarray() @ u)
    with pytest.raises(ShapeError):
        SparseOperator.from_matrix_market(path, input_shape=(5,))


def test_matrix_market_rejects_other_formats(tmp_path):
    p = tmp_path / "dense.mtx"
    scipy.io.mmwrite(str(p), np.eye(2))
    with pytest.raises(ValueError):
        read_matrix_market(p)
    q = tmp_path / "junk.mtx"
    q.write_text("hello\n")
    with pytest.raises(ValueError):
        read_matrix_market(q)
