"""Linear forward operators with exact adjoints.

Every operator maps arrays of ``input_shape`` to arrays of ``output_shape``
and implements ``apply`` (A u) and ``adjoint`` (A^T v). Operators are
immutable after construction.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import scipy.io
import scipy.ndimage
import scipy.sparse

from .tensor import ShapeError

__all__ = [
    "LinearOperator",
    "DenseOperator",
    "SparseOperator",
    "AvgPoolOperator",
    "Conv2dOperator",
    "IdentityOperator",
    "ZeroOperator",
    "gaussian_kernel",
    "operator_norm_sq",
    "materialize",
    "read_matrix_market",
]


class LinearOperator:
    kind = "abstract"

    def __init__(self, input_shape, output_shape):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.output_shape = tuple(int(s) for s in output_shape)

    def apply(self, u) -> np.ndarray:
        u = self._check(u, self.input_shape, "apply")
        return self._apply(u)

    def adjoint(self, v) -> np.ndarray:
        v = self._check(v, self.output_shape, "adjoint")
        return self._adjoint(v)

    def __call__(self, u) -> np.ndarray:
        return self.apply(u)

    def _check(self, x, shape, what):
        x = np.asarray(getattr(x, "data", x), dtype=np.float64)
        if x.shape != shape:
            raise ShapeError(f"{self.kind}.{what}: expected shape {shape}, got {x.shape}")
        return x

    def _apply(self, u):
        raise NotImplementedError

    def _adjoint(self, v):
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.input_shape} -> {self.output_shape})"


class DenseOperator(LinearOperator):
    """Explicit matrix acting on flattened inputs."""

    kind = "dense"

    def __init__(self, matrix, input_shape=None, output_shape=None):
        M = np.array(matrix, dtype=np.float64, ndmin=2)
        input_shape = (M.shape[1],) if input_shape is None else input_shape
        output_shape = (M.shape[0],) if output_shape is None else output_shape
        super().__init__(input_shape, output_shape)
        if math.prod(self.input_shape) != M.shape[1] or math.prod(self.output_shape) != M.shape[0]:
            raise ShapeError(f"dense: matrix {M.shape} incompatible with shapes "
                             f"{self.input_shape} -> {self.output_shape}")
        M.flags.writeable = False
        self.matrix = M

    def _apply(self, u):
        return (self.matrix @ u.ravel()).reshape(self.output_shape)

    def _adjoint(self, v):
        return (self.matrix.T @ v.ravel()).reshape(self.input_shape)


class SparseOperator(LinearOperator):
    """Compressed-row sparse matrix acting on flattened inputs."""

    kind = "sparse_csr"

    def __init__(self, matrix, input_shape=None, output_shape=None):
        M = scipy.sparse.csr_matrix(matrix, dtype=np.float64)
        input_shape = (M.shape[1],) if input_shape is None else input_shape
        output_shape = (M.shape[0],) if output_shape is None else output_shape
        super().__init__(input_shape, output_shape)
        if math.prod(self.input_shape) != M.shape[1] or math.prod(self.output_shape) != M.shape[0]:
            raise ShapeError(f"sparse_csr: matrix {M.shape} incompatible with shapes "
                             f"{self.input_shape} -> {self.output_shape}")
        self.matrix = M
        self._mt = M.T.tocsr()

    def _apply(self, u):
        return (self.matrix @ u.ravel()).reshape(self.output_shape)

    def _adjoint(self, v):
        return (self._mt @ v.ravel()).reshape(self.input_shape)

    @classmethod
    def from_matrix_market(cls, path, input_shape=None, output_shape=None) -> "SparseOperator":
        return cls(read_matrix_market(path), input_shape, output_shape)


def read_matrix_market(path) -> scipy.sparse.csr_matrix:
    """Read a ``%%MatrixMarket matrix coordinate real general`` file as CSR."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().lower().split()
    if header[:2] != ["%%matrixmarket", "matrix"] or "coordinate" not in header:
        raise ValueError(f"{path}: not a Matrix Market coordinate file")
    if "complex" in header or "pattern" in header:
        raise ValueError(f"{path}: only real-valued coordinate matrices are supported")
    return scipy.sparse.csr_matrix(scipy.io.mmread(str(path)), dtype=np.float64)


class AvgPoolOperator(LinearOperator):
    """Non-overlapping k x k average pooling on a 2-D image."""

    kind = "avgpool"

    def __init__(self, input_shape, factor: int = 4):
        h, w = input_shape
        k = int(factor)
        if k < 1 or h % k or w % k:
            raise ShapeError(f"avgpool_{k}: image shape {(h, w)} not divisible by {k}")
        super().__init__((h, w), (h // k, w // k))
        self.factor = k

    def _apply(self, u):
        k = self.factor
        h, w = self.output_shape
        return u.reshape(h, k, w, k).mean(axis=(1, 3))

    def _adjoint(self, v):
        k = self.factor
        return np.kron(v, np.ones((k, k))) / (k * k)


def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    radius = int(math.ceil(3 * sigma)) if radius is None else int(radius)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


class Conv2dOperator(LinearOperator):
    """Zero-padded 'same' 2-D correlation with an odd-sized kernel.

    Pass either a full 2-D ``kernel`` or a 1-D kernel with ``separable=True``
    (used along both axes).
    """

    kind = "conv2d"

    def __init__(self, input_shape, kernel, separable: bool = False):
        super().__init__(input_shape, input_shape)
        k = np.array(kernel, dtype=np.float64)
        if separable:
            if k.ndim != 1:
                raise ShapeError(f"conv2d: separable kernel must be 1-D, got {k.shape}")
            k = np.outer(k, k)
        if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
            raise ShapeError(f"conv2d: kernel must be 2-D with odd sizes, got {k.shape}")
        if len(self.input_shape) != 2:
            raise ShapeError(f"conv2d: input must be 2-D, got {self.input_shape}")
        k.flags.writeable = False
        self.kernel = k

    def _apply(self, u):
        return scipy.ndimage.correlate(u, self.kernel, mode="constant", cval=0.0)

    def _adjoint(self, v):
        return scipy.ndimage.correlate(v, self.kernel[::-1, ::-1], mode="constant", cval=0.0)


class IdentityOperator(LinearOperator):
    kind = "identity"

    def __init__(self, shape):
        super().__init__(shape, shape)

    def _apply(self, u):
        return u.copy()

    def _adjoint(self, v):
        return v.copy()


class ZeroOperator(LinearOperator):
    kind = "zero"

    def _apply(self, u):
        return np.zeros(self.output_shape)

    def _adjoint(self, v):
        return np.zeros(self.input_shape)


def materialize(op: LinearOperator) -> np.ndarray:
    """Dense matrix of ``op`` built column by column (small operators only)."""
    n = math.prod(op.input_shape)
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        cols.append(op.apply(e.reshape(op.input_shape)).ravel())
    return np.stack(cols, axis=1)


def operator_norm_sq(op: LinearOperator, iters: int = 500, tol: float = 1e-12,
                     seed: int = 0) -> tuple[float, float]:
    """Power iteration for the largest eigenvalue of A^T A.

    Returns ``(estimate, last_relative_change)``. The Rayleigh quotient of a
    positive semidefinite matrix under power iteration is nondecreasing, so
    successive estimates only grow.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.input_shape)
    x /= np.linalg.norm(x)
    est, change = 0.0, math.inf
    for _ in range(iters):
        y = op.adjoint(op.apply(x))
        new = float(np.vdot(x, y))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0, 0.0
        change = abs(new - est) / max(abs(new), 1e-300)
        est = max(est, new)
        x = y / ny
        if change <= tol:
            break
    return est, change
