"""Energy-dissipating descent with backtracking line search.

Each outer iteration asks a direction model for ``d`` (a member of its
descent cone), starts from ``tau = 1`` and halves (``tau <- rho * tau``) until
the Armijo test

    E(u - tau d) <= E(u) - c * tau * <d, grad E(u)>

passes. Because ``<d, grad E(u)> >= 0`` for every cone member, accepted steps
never increase the energy.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cone import ConeSpec, violation
from .energies import Energy
from .models import CallableDirection, DirectionModel
from .problems import psnr

__all__ = [
    "LineSearchError",
    "GradNorm",
    "Discrepancy",
    "MaxIters",
    "AnyOf",
    "DescentConfig",
    "IterRecord",
    "IterateHistory",
    "descend",
    "constant_step_tau",
    "worst_case_direction",
    "RateReport",
    "verify_linear_rate",
    "iterations_to_tolerance",
]


class LineSearchError(RuntimeError):
    """Backtracking exceeded ``max_backtracks``; carries the failing geometry."""

    def __init__(self, k: int, dg: float, d_norm: float, g_norm: float, backtracks: int):
        self.k, self.dg, self.d_norm, self.g_norm = k, dg, d_norm, g_norm
        super().__init__(
            f"line search failed at iteration {k} after {backtracks} backtracks: "
            f"<d,g>={dg:.6e}, ||d||={d_norm:.6e}, ||g||={g_norm:.6e}")


# ----------------------------------------------------------------- stopping


@dataclass(frozen=True)
class GradNorm:
    tol: float

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("GradNorm tol must be positive")

    def check(self, k, u, g_norm):
        return "grad_norm" if g_norm <= self.tol else None


@dataclass(frozen=True)
class Discrepancy:
    """Stop at the first iterate with ``||A u - f|| <= factor * delta``."""

    A: object
    f: np.ndarray
    delta: float
    factor: float = 1.0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("discrepancy delta must be >= 0")

    def residual(self, u) -> float:
        return float(np.linalg.norm(self.A.apply(u) - self.f))

    def check(self, k, u, g_norm):
        return "discrepancy" if self.residual(u) <= self.factor * self.delta else None


@dataclass(frozen=True)
class MaxIters:
    n: int

    def check(self, k, u, g_norm):
        return "max_iters" if k >= self.n else None


@dataclass(frozen=True)
class AnyOf:
    rules: tuple

    def __init__(self, *rules):
        object.__setattr__(self, "rules", tuple(rules))

    def check(self, k, u, g_norm):
        for r in self.rules:
            why = r.check(k, u, g_norm)
            if why:
                return why
        return None


@dataclass
class DescentConfig:
    c: float = 0.1
    rho: float = 0.5
    max_outer_iters: int = 1000
    max_backtracks: int = 60
    # None -> line search; a float -> constant step size tau
    constant_tau: float | None = None
    stop: object = field(default_factory=lambda: GradNorm(1e-8))

    def __post_init__(self):
        if not 0 < self.c < 0.5:
            raise ValueError(f"c must lie in (0, 0.5), got {self.c}")
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.max_outer_iters < 0 or self.max_backtracks < 0:
            raise ValueError("iteration limits must be non-negative")
        if self.constant_tau is not None and not self.constant_tau > 0:
            raise ValueError("constant step size must be positive")

    @property
    def step_mode(self) -> str:
        return "line_search" if self.constant_tau is None else "constant"


# ------------------------------------------------------------------ history

CSV_HEADER = ("iter", "energy", "grad_norm", "residual_norm", "tau", "backtracks", "psnr")


@dataclass
class IterRecord:
    iter: int
    energy: float
    grad_norm: float
    residual_norm: float | None = None
    tau: float | None = None
    backtracks: int | None = None
    psnr: float | None = None
    cone_violation: float | None = None


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


@dataclass
class IterateHistory:
    records: list[IterRecord] = field(default_factory=list)
    stop_reason: str | None = None

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for r in self.records], dtype=np.float64)

    @property
    def energies(self) -> np.ndarray:
        return self.column("energy")

    def is_monotone(self) -> bool:
        e = self.energies
        return bool(np.all(e[1:] <= e[:-1]))

    def max_cone_violation(self) -> float:
        v = [r.cone_violation for r in self.records if r.cone_violation is not None]
        return max(v) if v else -math.inf

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.records:
            w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "IterateHistory":
        hist = cls()
        with open(path) as fh:
            for row in csv.DictReader(fh):
                def num(key, conv=float):
                    return None if row[key] in ("", None) else conv(float(row[key]))
                hist.records.append(IterRecord(
                    iter=int(row["iter"]), energy=float(row["energy"]),
                    grad_norm=float(row["grad_norm"]), residual_norm=num("residual_norm"),
                    tau=num("tau"), backtracks=num("backtracks", int), psnr=num("psnr")))
        return hist


# ------------------------------------------------------------------ descent


def descend(energy: Energy, model: DirectionModel, u0, config: DescentConfig | None = None,
            *, f=None, reference=None, callback: Callable | None = None):
    """Energy-dissipating descent with backtracking line search from ``u0``.

    Parameters
    ----------
    energy : Energy
        Objective with ``value`` and ``grad``.
    model : DirectionModel
        Direction oracle; its outputs must lie in ``model.cone``.
    u0 : array_like
        Starting point.
    config : DescentConfig, optional
        Constants, limits, step mode and stopping rule.
    f : array_like, optional
        Data passed to the model; defaults to ``energy.data``.
    reference : array_like, optional
        Ground truth for the PSNR column.
    callback : callable, optional
        Called as ``callback(k, u, d, tau)`` after every accepted step.

    Returns
    -------
    u : ndarray
        Final iterate.
    history : IterateHistory
        One record for the start and one per accepted step.
    """
    cfg = config or DescentConfig()
    f = energy.data if f is None else f
    ref = None if reference is None else np.asarray(reference, dtype=np.float64)
    u = np.array(u0, dtype=np.float64)
    E = energy.value(u)
    hist = IterateHistory()

    def log(k, E, g_norm, tau, bt, viol):
        hist.records.append(IterRecord(
            k, E, g_norm, energy.residual_norm(u), tau, bt,
            None if ref is None else psnr(u, ref), viol))

    k = 0
    g = energy.grad(u)
    g_norm = float(np.linalg.norm(g))
    log(0, E, g_norm, None, None, None)
    while True:
        why = cfg.stop.check(k, u, g_norm)
        if why is None and k >= cfg.max_outer_iters:
            why = "max_outer_iters"
        if why is None and g_norm < model.cone.grad_floor:
            # directions are undefined below the floor; stationary for all practical purposes
            why = "grad_floor"
        if why:
            hist.stop_reason = why
            return u, hist

        d = np.asarray(model.predict(u, f, g), dtype=np.float64)
        viol = violation(model.cone, d, g)
        dg = float(np.vdot(d, g))
        tau, bt = 1.0, 0
        if cfg.constant_tau is not None:
            tau = cfg.constant_tau
            u_new = u - tau * d
            E_new = energy.value(u_new)
        else:
            u_new = u - tau * d
            E_new = energy.value(u_new)
            while E_new > E - cfg.c * tau * dg:
                if bt >= cfg.max_backtracks:
                    raise LineSearchError(k, dg, float(np.linalg.norm(d)), g_norm, bt)
                tau *= cfg.rho
                bt += 1
                u_new = u - tau * d
                E_new = energy.value(u_new)
        if not math.isfinite(E_new):
            raise FloatingPointError(f"non-finite energy at iteration {k + 1}")
        u, E = u_new, E_new
        k += 1
        g = energy.grad(u)
        g_norm = float(np.linalg.norm(g))
        log(k, E, g_norm, tau, bt, viol)
        if callback is not None:
            callback(k, u, d, tau)


# --------------------------------------------------------- rate verification


def constant_step_tau(cone: ConeSpec, L: float) -> float:
    """Conservative constant step ``zeta1 / (zeta2^2 L)`` for the bounded cone."""
    if cone.mode != "bounded":
        raise ValueError(f"constant step size needs a bounded cone, got {cone.mode!r}")
    if not L > 0:
        raise ValueError("L must be positive")
    return cone.zeta1 / (cone.zeta2 ** 2 * L)


def worst_case_direction(cone: ConeSpec, reference: np.ndarray) -> Callable:
    """Adversarial in-cone oracle maximizing the angle to the gradient.

    Returns ``fn(u, f, g) = zeta1 g + sqrt(zeta2^2 - zeta1^2) ||g|| e`` where
    ``e`` is the unit vector orthogonal to ``g`` in span{g, reference}.
    """
    ref = np.asarray(reference, dtype=np.float64)

    def fn(u, f, g):
        g = np.asarray(g, dtype=np.float64)
        gg = float(np.vdot(g, g))
        if gg == 0.0:
            return np.zeros_like(g)
        perp = ref.reshape(g.shape) - (np.vdot(ref, g) / gg) * g
        pn = np.linalg.norm(perp)
        side = math.sqrt(max(cone.zeta2 ** 2 - cone.zeta1 ** 2, 0.0))
        e = perp / pn if pn > 0 else np.zeros_like(g)
        return cone.zeta1 * g + side * math.sqrt(gg) * e

    return fn


@dataclass
class RateReport:
    gamma: float
    factor: float
    tau: float
    gaps: np.ndarray
    bounds: np.ndarray
    holds: bool
    history: IterateHistory


def verify_linear_rate(energy: Energy, cone: ConeSpec, u0, k: int, *, e_star: float,
                       adversary: DirectionModel | None = None, seed: int = 0,
                       slack: float = 1e-12) -> RateReport:
    """Check ``E(u^k) - E* <= (1 - gamma^2 mu/L)^k (E(u^0) - E*)`` along a run.

    Uses the constant step ``zeta1 / (zeta2^2 L)`` and, unless given, the
    worst-case in-cone adversary. ``e_star`` must come from an exact solve.
    """
    cert = energy.smoothness()
    if cert.L is None or cert.mu is None:
        raise ValueError("linear-rate check needs certified L and mu")
    if cone.mode != "bounded":
        raise ValueError("linear-rate check needs a bounded cone")
    gamma = cone.zeta1 / cone.zeta2
    factor = 1.0 - gamma ** 2 * cert.mu / cert.L
    tau = constant_step_tau(cone, cert.L)
    if adversary is None:
        rng = np.random.default_rng(seed)
        adversary = CallableDirection(cone, worst_case_direction(cone, rng.standard_normal(np.shape(u0))))
    cfg = DescentConfig(max_outer_iters=k, constant_tau=tau, stop=MaxIters(k))
    _, hist = descend(energy, adversary, u0, cfg)
    gaps = hist.energies - e_star
    ks = np.arange(len(gaps))
    bounds = max(factor, 0.0) ** ks * gaps[0]
    return RateReport(gamma, factor, tau, gaps, bounds,
                      bool(np.all(gaps <= bounds + slack)), hist)


def iterations_to_tolerance(gaps: Sequence[float], tol: float) -> int | None:
    """First index where ``gaps[k] <= tol * gaps[0]``, or None."""
    gaps = np.asarray(gaps)
    hit = np.nonzero(gaps <= tol * gaps[0])[0]
    return int(hit[0]) if hit.size else None
