"""Differentiable energies with value, gradient and smoothness certificates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import DenseOperator, LinearOperator, materialize, operator_norm_sq
from .tensor import ShapeError

__all__ = [
    "Smoothness",
    "Energy",
    "LeastSquares",
    "CharbonnierTV",
    "Composite",
    "charbonnier_tv_problem",
    "energy_value",
    "energy_grad",
    "smoothness_certificate",
    "forward_diff",
    "forward_diff_adjoint",
]

# largest problem for which certificates are computed by eigendecomposition
_EIG_LIMIT = 2048


@dataclass(frozen=True)
class Smoothness:
    """Lipschitz constant ``L`` of the gradient and PL modulus ``mu``.

    ``None`` means unknown; nothing is ever guessed.
    """

    L: float | None = None
    mu: float | None = None

    @property
    def known(self) -> bool:
        return self.L is not None


class Energy:
    """Base class. Subclasses implement ``_value`` and ``_grad``."""

    kind = "abstract"

    def __init__(self, shape, smoothness: Smoothness | None = None):
        self.shape = tuple(shape)
        self._user_smoothness = smoothness

    def _arg(self, u) -> np.ndarray:
        u = np.asarray(getattr(u, "data", u), dtype=np.float64)
        if u.shape != self.shape:
            raise ShapeError(f"{self.kind}: expected shape {self.shape}, got {u.shape}")
        if not np.all(np.isfinite(u)):
            raise ValueError(f"{self.kind}: non-finite entries in input")
        return u

    def value(self, u) -> float:
        return float(self._value(self._arg(u)))

    def grad(self, u) -> np.ndarray:
        return np.array(self._grad(self._arg(u)), dtype=np.float64)

    def __call__(self, u) -> float:
        return self.value(u)

    def smoothness(self) -> Smoothness:
        if self._user_smoothness is not None:
            return self._user_smoothness
        return self._certificate()

    def _certificate(self) -> Smoothness:
        return Smoothness()

    # data term hooks used by the optimizer and the direction models
    @property
    def data(self):
        return None

    def residual_norm(self, u) -> float | None:
        return None


class LeastSquares(Energy):
    """``E(u) = 1/2 ||A u - f||^2``."""

    kind = "least_squares"

    def __init__(self, A, f, smoothness: Smoothness | None = None):
        if not isinstance(A, LinearOperator):
            A = DenseOperator(A)
        f = np.array(f, dtype=np.float64).reshape(A.output_shape)
        super().__init__(A.input_shape, smoothness)
        self.A = A
        self.f = f
        self.f.flags.writeable = False

    @property
    def data(self):
        return self.f

    def residual(self, u) -> np.ndarray:
        return self.A.apply(u) - self.f

    def residual_norm(self, u) -> float:
        return float(np.linalg.norm(self.residual(self._arg(u))))

    def _value(self, u):
        r = self.residual(u)
        return 0.5 * np.vdot(r, r)

    def _grad(self, u):
        return self.A.adjoint(self.residual(u))

    def _certificate(self) -> Smoothness:
        if isinstance(self.A, DenseOperator):
            M = self.A.matrix
        elif int(np.prod(self.shape)) <= _EIG_LIMIT:
            M = materialize(self.A)
        else:
            # too large for an eigendecomposition: L only
            return Smoothness(operator_norm_sq(self.A)[0], None)
        eig = np.linalg.svd(M, compute_uv=False) ** 2
        L = float(eig.max()) if eig.size else 0.0
        nonzero = eig[eig > L * 1e-12] if L > 0 else eig[:0]
        return Smoothness(L, float(nonzero.min()) if nonzero.size else None)


def forward_diff(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences with replicate boundary (last difference is zero)."""
    dx = np.zeros_like(u)
    dy = np.zeros_like(u)
    dx[:, :-1] = u[:, 1:] - u[:, :-1]
    dy[:-1, :] = u[1:, :] - u[:-1, :]
    return dx, dy


def forward_diff_adjoint(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    out = np.zeros_like(px)
    out[:, :-1] -= px[:, :-1]
    out[:, 1:] += px[:, :-1]
    out[:-1, :] -= py[:-1, :]
    out[1:, :] += py[:-1, :]
    return out


class CharbonnierTV(Energy):
    """Smoothed total variation ``sum_ij sqrt((D_x u)^2 + (D_y u)^2 + eps^2)``.

    Forward differences with replicate (Neumann) boundary. The gradient is
    Lipschitz with constant at most ``||D||^2 / eps <= 8 / eps``.
    """

    kind = "charbonnier_tv"

    def __init__(self, shape, eps: float = 0.01, smoothness: Smoothness | None = None):
        if len(shape) != 2:
            raise ShapeError(f"charbonnier_tv: image must be 2-D, got {shape}")
        if eps <= 0:
            raise ValueError("eps must be positive")
        super().__init__(shape, smoothness)
        self.eps = float(eps)

    def _value(self, u):
        dx, dy = forward_diff(u)
        return np.sum(np.sqrt(dx * dx + dy * dy + self.eps ** 2))

    def _grad(self, u):
        dx, dy = forward_diff(u)
        w = 1.0 / np.sqrt(dx * dx + dy * dy + self.eps ** 2)
        return forward_diff_adjoint(w * dx, w * dy)

    def _certificate(self) -> Smoothness:
        return Smoothness(8.0 / self.eps, None)


class Composite(Energy):
    """Weighted sum ``sum_i w_i E_i``."""

    kind = "composite"

    def __init__(self, terms, smoothness: Smoothness | None = None):
        terms = [(float(w), e) for w, e in terms]
        if not terms:
            raise ValueError("composite energy needs at least one term")
        shape = terms[0][1].shape
        for _, e in terms:
            if e.shape != shape:
                raise ShapeError(f"composite: term shapes differ ({e.shape} vs {shape})")
        super().__init__(shape, smoothness)
        self.terms = terms

    def _fidelity(self):
        for w, e in self.terms:
            if isinstance(e, LeastSquares) and w != 0:
                return e
        return None

    @property
    def data(self):
        fid = self._fidelity()
        return None if fid is None else fid.data

    def residual_norm(self, u):
        fid = self._fidelity()
        return None if fid is None else fid.residual_norm(u)

    def _value(self, u):
        return sum(w * e._value(u) for w, e in self.terms if w != 0)

    def _grad(self, u):
        g = np.zeros(self.shape)
        for w, e in self.terms:
            if w != 0:
                g += w * e._grad(u)
        return g

    def _certificate(self) -> Smoothness:
        total = 0.0
        for w, e in self.terms:
            if w == 0:
                continue
            L = e.smoothness().L
            if L is None:
                return Smoothness()
            total += abs(w) * L
        return Smoothness(total, None)


def charbonnier_tv_problem(A, f, alpha: float = 0.8, eps: float = 0.01) -> Composite:
    """``1/2 ||A u - f||^2 + alpha * TV_eps(u)``."""
    fid = A if isinstance(A, LeastSquares) else LeastSquares(A, f)
    return Composite([(1.0, fid), (alpha, CharbonnierTV(fid.shape, eps))])


def energy_value(E: Energy, u) -> float:
    return E.value(u)


def energy_grad(E: Energy, u) -> np.ndarray:
    return E.grad(u)


def smoothness_certificate(E: Energy) -> Smoothness:
    return E.smoothness()
