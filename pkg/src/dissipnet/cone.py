"""Descent-cone constraint sets and the layers that enforce them.

Three admissible sets for a direction ``d`` relative to a gradient ``g``:

``half_space_absolute``
    ``<d, g> >= zeta * ||g||``, enforced by Euclidean projection.
``half_space_relative``
    ``<d, g> >= zeta * ||g||^2``, same projection with threshold ``zeta*||g||``.
``bounded``
    ``<d, g> >= zeta1 * ||g||^2`` and ``||d|| <= zeta2 * ||g||``, enforced by a
    surjective parametrization (not a projection) that fixes every member.

The update is ``u <- u - tau * d``, so members of any set are descent
directions. Every division by ``||g||`` uses ``max(||g||, grad_floor)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .tensor import Tensor, record

__all__ = [
    "MODES",
    "ConeSpec",
    "enforce",
    "enforce_batch",
    "enforce_backward",
    "enforce_backward_batch",
    "cone_layer",
    "violation",
    "is_member",
]

MODES = ("half_space_absolute", "half_space_relative", "bounded")


@dataclass(frozen=True)
class ConeSpec:
    mode: str = "half_space_absolute"
    zeta: float | None = None
    zeta1: float | None = None
    zeta2: float | None = None
    grad_floor: float = 1e-6

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown cone mode {self.mode!r}; expected one of {MODES}")
        if self.grad_floor <= 0:
            raise ValueError("grad_floor must be positive")
        if self.mode == "bounded":
            if self.zeta1 is None or self.zeta2 is None:
                raise ValueError("bounded cone needs zeta1 and zeta2")
            if not 0 < self.zeta1 <= self.zeta2:
                # zeta1 > zeta2 would make the set empty; never swap silently
                raise ValueError(f"bounded cone needs 0 < zeta1 <= zeta2, got "
                                 f"zeta1={self.zeta1}, zeta2={self.zeta2}")
        else:
            if self.zeta is None or not self.zeta > 0:
                raise ValueError(f"{self.mode} cone needs zeta > 0, got {self.zeta}")

    @classmethod
    def half_space(cls, zeta: float, relative: bool = False, grad_floor: float = 1e-6):
        mode = "half_space_relative" if relative else "half_space_absolute"
        return cls(mode, zeta=zeta, grad_floor=grad_floor)

    @classmethod
    def bounded(cls, zeta1: float, zeta2: float, grad_floor: float = 1e-6):
        return cls("bounded", zeta1=zeta1, zeta2=zeta2, grad_floor=grad_floor)

    @property
    def lower(self) -> float:
        """Lower bound on the descent quality used by the optimizer."""
        return self.zeta1 if self.mode == "bounded" else self.zeta

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "ConeSpec":
        return cls(**d)


def _rows(z, g):
    z = np.asarray(getattr(z, "data", z), dtype=np.float64)
    g = np.asarray(getattr(g, "data", g), dtype=np.float64)
    if z.shape != g.shape:
        raise ValueError(f"cone: z shape {z.shape} != g shape {g.shape}")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(g))):
        raise ValueError("cone: non-finite input")
    return z, g


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def _forward(spec: ConeSpec, Z: np.ndarray, G: np.ndarray):
    """Row-wise map on (batch, dim) arrays; returns output and a cache."""
    gn = np.maximum(np.linalg.norm(G, axis=1), spec.grad_floor)[:, None]
    zg = np.sum(Z * G, axis=1, keepdims=True)
    if spec.mode != "bounded":
        n = G / gn
        thresh = spec.zeta * gn if spec.mode == "half_space_relative" else spec.zeta
        gap = thresh - zg / gn
        active = gap >= 0
        D = Z + np.where(active, gap, 0.0) * n
        return D, (n, active)
    eta = zg / gn ** 2
    eta_hat = np.clip(eta, spec.zeta1, spec.zeta2)
    W = Z - eta * G
    radius = np.sqrt(np.maximum(spec.zeta2 ** 2 - eta_hat ** 2, 0.0)) * gn
    wn = np.linalg.norm(W, axis=1, keepdims=True)
    outside = wn >= radius
    shrink = np.where(outside & (wn > 0), radius / np.where(wn > 0, wn, 1.0), 1.0)
    D = eta_hat * G + shrink * W
    return D, (gn, eta, eta_hat, W, wn, radius, outside)


def _backward(spec: ConeSpec, G: np.ndarray, cache, S: np.ndarray) -> np.ndarray:
    if spec.mode != "bounded":
        n, active = cache
        # active branch: (I - n n^T) s
        return S - np.where(active, np.sum(S * n, axis=1, keepdims=True), 0.0) * n
    gn, eta, eta_hat, W, wn, radius, outside = cache
    safe_wn = np.where(wn > 0, wn, 1.0)
    w_hat = W / safe_wn
    sw_proj = S - np.sum(S * w_hat, axis=1, keepdims=True) * w_hat
    S_w = np.where(outside, (radius / safe_wn) * sw_proj, S)
    S_r = np.where(outside, np.sum(S * w_hat, axis=1, keepdims=True), 0.0)
    interior = (eta > spec.zeta1) & (eta < spec.zeta2)
    root = np.sqrt(np.maximum(spec.zeta2 ** 2 - eta_hat ** 2, 0.0))
    dr_deta = np.where(interior & (root > 0), -eta_hat * gn / np.where(root > 0, root, 1.0), 0.0)
    d_eta = np.where(interior, np.sum(S * G, axis=1, keepdims=True) + S_r * dr_deta, 0.0)
    # d eta / d z = g / gn^2; W = z - eta g
    return S_w + (d_eta - np.sum(G * S_w, axis=1, keepdims=True)) * G / gn ** 2


def enforce(spec: ConeSpec, z, g) -> np.ndarray:
    """Map ``z`` into the admissible set of ``spec`` around gradient ``g``.

    Arrays of any shape are treated as flat vectors.
    """
    z, g = _rows(z, g)
    D, _ = _forward(spec, z.reshape(1, -1), g.reshape(1, -1))
    return D.reshape(z.shape)


def enforce_batch(spec: ConeSpec, Z, G) -> np.ndarray:
    """Row-wise :func:`enforce` for arrays with a leading batch axis."""
    Z, G = _rows(Z, G)
    D, _ = _forward(spec, _flat(Z), _flat(G))
    return D.reshape(Z.shape)


def enforce_backward(spec: ConeSpec, z, g, seed) -> np.ndarray:
    """Jacobian-transpose product of :func:`enforce` with respect to ``z``.

    At kinks the projected (active) branch is used.
    """
    z, g = _rows(z, g)
    seed = np.asarray(seed, dtype=np.float64).reshape(1, -1)
    G = g.reshape(1, -1)
    _, cache = _forward(spec, z.reshape(1, -1), G)
    return _backward(spec, G, cache, seed).reshape(z.shape)


def enforce_backward_batch(spec: ConeSpec, Z, G, seed) -> np.ndarray:
    Z, G = _rows(Z, G)
    Gf = _flat(G)
    _, cache = _forward(spec, _flat(Z), Gf)
    return _backward(spec, Gf, cache, _flat(np.asarray(seed, dtype=np.float64))).reshape(Z.shape)


def cone_layer(spec: ConeSpec, z: Tensor, g) -> Tensor:
    """Differentiable enforcement layer on the tape.

    ``z`` carries a leading batch axis; ``g`` is data and receives no gradient.
    """
    Z, G = _rows(z, g)
    Gf = _flat(G)
    D, cache = _forward(spec, _flat(Z), Gf)

    def vjp(s):
        return (_backward(spec, Gf, cache, _flat(s)).reshape(Z.shape),)

    return record("cone_" + spec.mode, (z,), D.reshape(Z.shape), vjp)


def violation(spec: ConeSpec, d, g) -> float:
    """Largest scaled violation of the set's defining inequalities.

    Zero (or negative) means membership. Gradients with
    ``||g|| < grad_floor`` carry no constraint and report ``-inf``.
    """
    d, g = _rows(d, g)
    d, g = d.ravel(), g.ravel()
    gn = np.linalg.norm(g)
    if gn < spec.grad_floor:
        return -np.inf
    dg = float(np.dot(d, g))
    if spec.mode == "half_space_absolute":
        return (spec.zeta * gn - dg) / max(1.0, gn * np.linalg.norm(d))
    if spec.mode == "half_space_relative":
        return (spec.zeta * gn ** 2 - dg) / max(1.0, gn * np.linalg.norm(d))
    lower = (spec.zeta1 * gn ** 2 - dg) / max(1.0, spec.zeta2 * gn ** 2)
    upper = (np.linalg.norm(d) - spec.zeta2 * gn) / max(1.0, spec.zeta2 * gn)
    return max(lower, upper)


def is_member(spec: ConeSpec, d, g, tol: float = 1e-9) -> bool:
    return violation(spec, d, g) <= tol
