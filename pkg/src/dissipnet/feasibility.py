"""Convex feasibility energies and the 9x9 Sudoku relaxation.

The energy of sets C_1..C_N is the mean halved squared distance

    E(u) = 1/(2N) sum_i ||u - P_i(u)||^2,    grad E(u) = 1/N sum_i (u - P_i(u)),

so a unit gradient step lands on the average of the projections.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .energies import Energy, Smoothness
from .tensor import ShapeError

__all__ = [
    "project_simplex",
    "ConvexSet",
    "SimplexSlices",
    "Box",
    "Givens",
    "Ball",
    "HalfSpace",
    "AffineDense",
    "project",
    "FeasibilityEnergy",
    "feasibility_energy",
    "feasibility_grad",
    "averaged_projections_equivalence",
    "SudokuRelaxation",
    "parse_puzzle",
    "format_grid",
    "sudoku_encode",
    "sudoku_round",
    "is_valid_grid",
    "solve_sudoku",
    "read_puzzles",
]


def project_simplex(v, axis: int = -1) -> np.ndarray:
    """Euclidean projection onto the probability simplex along ``axis``.

    Sort-and-threshold: find ``theta`` with ``sum(max(v - theta, 0)) = 1``.
    """
    v = np.moveaxis(np.asarray(v, dtype=np.float64), axis, -1)
    n = v.shape[-1]
    s = -np.sort(-v, axis=-1)
    css = np.cumsum(s, axis=-1) - 1.0
    k = np.arange(1, n + 1)
    support = (s - css / k > 0).sum(axis=-1, keepdims=True)
    theta = np.take_along_axis(css, support - 1, axis=-1) / support
    return np.moveaxis(np.maximum(v - theta, 0.0), -1, axis)


class ConvexSet:
    kind = "abstract"

    def __init__(self, shape):
        self.shape = tuple(shape)

    def project(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != self.shape:
            raise ShapeError(f"{self.kind}: expected shape {self.shape}, got {u.shape}")
        return self._project(u)

    def _project(self, u):
        raise NotImplementedError

    def distance(self, u) -> float:
        return float(np.linalg.norm(np.asarray(u) - self.project(u)))


class SimplexSlices(ConvexSet):
    """Disjoint index groups, each constrained to the probability simplex.

    ``groups`` is an (m, k) integer array of flat indices. Coordinates outside
    every group are unconstrained.
    """

    kind = "simplex_slices"

    def __init__(self, shape, groups):
        super().__init__(shape)
        groups = np.asarray(groups, dtype=np.intp)
        if groups.ndim != 2:
            raise ValueError("groups must be a 2-D array of flat indices")
        flat = groups.ravel()
        if np.unique(flat).size != flat.size:
            raise ValueError("simplex groups must be disjoint")
        if flat.size and (flat.min() < 0 or flat.max() >= int(np.prod(self.shape))):
            raise ValueError("group index out of range")
        self.groups = groups

    @classmethod
    def along_axis(cls, shape, axis: int) -> "SimplexSlices":
        idx = np.moveaxis(np.arange(int(np.prod(shape))).reshape(shape), axis, -1)
        return cls(shape, idx.reshape(-1, idx.shape[-1]))

    def _project(self, u):
        out = u.ravel().copy()
        out[self.groups] = project_simplex(out[self.groups], axis=-1)
        return out.reshape(self.shape)


class Box(ConvexSet):
    kind = "box"

    def __init__(self, shape, lo=0.0, hi=1.0):
        super().__init__(shape)
        self.lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), self.shape)
        self.hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), self.shape)
        if np.any(self.lo > self.hi):
            raise ValueError("box needs lo <= hi")

    def _project(self, u):
        return np.clip(u, self.lo, self.hi)


class Givens(ConvexSet):
    """Fixed values at selected flat indices; other coordinates are free."""

    kind = "givens"

    def __init__(self, shape, indices, values):
        super().__init__(shape)
        self.indices = np.asarray(indices, dtype=np.intp).ravel()
        self.values = np.asarray(values, dtype=np.float64).ravel()
        if self.indices.shape != self.values.shape:
            raise ValueError("givens: indices and values differ in length")

    def _project(self, u):
        out = u.ravel().copy()
        out[self.indices] = self.values
        return out.reshape(self.shape)


class Ball(ConvexSet):
    kind = "ball"

    def __init__(self, center, radius: float):
        center = np.asarray(center, dtype=np.float64)
        super().__init__(center.shape)
        if radius < 0:
            raise ValueError("ball radius must be >= 0")
        self.center = center
        self.radius = float(radius)

    def _project(self, u):
        r = u - self.center
        n = np.linalg.norm(r)
        return u.copy() if n <= self.radius else self.center + r * (self.radius / n)


class HalfSpace(ConvexSet):
    """``{x : <a, x> <= b}``."""

    kind = "halfspace"

    def __init__(self, a, b: float):
        a = np.asarray(a, dtype=np.float64)
        super().__init__(a.shape)
        if not np.any(a):
            raise ValueError("halfspace normal must be nonzero")
        self.a, self.b = a, float(b)

    def _project(self, u):
        excess = np.vdot(self.a, u) - self.b
        return u.copy() if excess <= 0 else u - excess / np.vdot(self.a, self.a) * self.a


class AffineDense(ConvexSet):
    """``{x : A x = b}`` for a small dense ``A`` acting on flattened inputs."""

    kind = "affine_dense"

    def __init__(self, A, b, shape=None):
        A = np.array(A, dtype=np.float64, ndmin=2)
        super().__init__((A.shape[1],) if shape is None else shape)
        self.A = A
        self.b = np.asarray(b, dtype=np.float64).ravel()
        self._pinv = np.linalg.pinv(A)
        if not np.allclose(A @ (self._pinv @ self.b), self.b):
            raise ValueError("affine set is empty (b not in range of A)")

    def _project(self, u):
        x = u.ravel()
        return (x - self._pinv @ (self.A @ x - self.b)).reshape(self.shape)


def project(cset: ConvexSet, u) -> np.ndarray:
    return cset.project(u)


class FeasibilityEnergy(Energy):
    """Mean halved squared distance to a list of convex sets (1-smooth)."""

    kind = "feasibility"

    def __init__(self, sets, smoothness: Smoothness | None = None):
        sets = list(sets)
        if not sets:
            raise ValueError("feasibility energy needs at least one set")
        shape = sets[0].shape
        for s in sets:
            if s.shape != shape:
                raise ShapeError(f"feasibility: set shapes differ ({s.shape} vs {shape})")
        super().__init__(shape, smoothness)
        self.sets = sets

    def _value(self, u):
        return sum(np.sum((u - s._project(u)) ** 2) for s in self.sets) / (2 * len(self.sets))

    def _grad(self, u):
        return sum(u - s._project(u) for s in self.sets) / len(self.sets)

    def _certificate(self):
        return Smoothness(1.0, None)

    def average_projection(self, u) -> np.ndarray:
        u = self._arg(u)
        return sum(s._project(u) for s in self.sets) / len(self.sets)


def feasibility_energy(sets, u) -> float:
    return FeasibilityEnergy(sets).value(u)


def feasibility_grad(sets, u) -> np.ndarray:
    return FeasibilityEnergy(sets).grad(u)


def averaged_projections_equivalence(sets, u, rtol: float = 1e-12) -> np.ndarray:
    """Unit gradient step on the feasibility energy; checked against the mean projection."""
    E = sets if isinstance(sets, FeasibilityEnergy) else FeasibilityEnergy(sets)
    u = np.asarray(u, dtype=np.float64)
    step = u - E.grad(u)
    mean = E.average_projection(u)
    scale = max(1.0, float(np.max(np.abs(u))))
    err = float(np.max(np.abs(step - mean))) if u.size else 0.0
    if err > rtol * scale:
        raise AssertionError(f"gradient step and averaged projections differ by {err:.3e}")
    return step


# -------------------------------------------------------------------- sudoku

DIGITS = 9
SHAPE = (9, 9, 9)  # row, column, digit


@dataclass
class SudokuRelaxation:
    puzzle: np.ndarray  # 81 ints, 0 = blank
    sets: list
    energy: FeasibilityEnergy

    @property
    def given_mask(self) -> np.ndarray:
        return self.puzzle.reshape(9, 9) > 0


def parse_puzzle(text) -> np.ndarray:
    """81 symbols from ``0-9`` or ``.`` (blank) -> int array of length 81."""
    if not isinstance(text, str):
        arr = np.asarray(text, dtype=int).ravel()
        if arr.size != 81 or arr.min() < 0 or arr.max() > 9:
            raise ValueError("puzzle must have 81 entries in 0..9")
        return arr
    s = text.strip()
    if len(s) != 81:
        raise ValueError(f"puzzle must have exactly 81 symbols, got {len(s)}")
    bad = set(s) - set("0123456789.")
    if bad:
        raise ValueError(f"malformed puzzle: unexpected symbols {sorted(bad)}")
    return np.array([0 if c == "." else int(c) for c in s], dtype=int)


def format_grid(digits) -> str:
    return "".join(str(int(d)) for d in np.ravel(digits))


def _units():
    rows = [[(r, c) for c in range(9)] for r in range(9)]
    cols = [[(r, c) for r in range(9)] for c in range(9)]
    boxes = [[(3 * br + i, 3 * bc + j) for i in range(3) for j in range(3)]
             for br in range(3) for bc in range(3)]
    return rows + cols + boxes


def _conflicts(grid: np.ndarray) -> bool:
    for unit in _units():
        vals = [grid[r, c] for r, c in unit if grid[r, c] > 0]
        if len(vals) != len(set(vals)):
            return True
    return False


def _block_groups() -> np.ndarray:
    idx = np.arange(729).reshape(SHAPE)
    groups = []
    for br in range(3):
        for bc in range(3):
            block = idx[3 * br:3 * br + 3, 3 * bc:3 * bc + 3, :]
            for d in range(DIGITS):
                groups.append(block[:, :, d].ravel())
    return np.array(groups)


def sudoku_encode(puzzle, noise: float = 1e-3, seed: int = 0):
    """Build the five constraint sets and a starting tensor.

    Returns ``(relaxation, u0)``. ``u0`` is one-hot on givens and ``1/9`` plus
    seeded noise of amplitude ``noise`` elsewhere; the noise breaks the
    symmetry of the uniform tensor, which already satisfies the four
    sum-to-one constraint families.
    """
    p = parse_puzzle(puzzle)
    grid = p.reshape(9, 9)
    if _conflicts(grid):
        raise ValueError("contradictory givens")
    sets = [SimplexSlices.along_axis(SHAPE, 2),   # one digit per cell
            SimplexSlices.along_axis(SHAPE, 1),   # each digit once per row
            SimplexSlices.along_axis(SHAPE, 0),   # each digit once per column
            SimplexSlices(SHAPE, _block_groups())]  # each digit once per block
    rows, cols = np.nonzero(grid)
    idx = np.ravel_multi_index((np.repeat(rows, 9), np.repeat(cols, 9),
                                np.tile(np.arange(9), rows.size)), SHAPE)
    vals = (np.tile(np.arange(9), rows.size) == np.repeat(grid[rows, cols] - 1, 9)).astype(float)
    sets.append(Givens(SHAPE, idx, vals))

    u0 = np.full(SHAPE, 1.0 / 9)
    if noise:
        u0 += noise * np.random.default_rng(seed).uniform(-1.0, 1.0, SHAPE)
    u0.reshape(-1)[idx] = vals
    return SudokuRelaxation(p, sets, FeasibilityEnergy(sets)), u0


def is_valid_grid(digits) -> bool:
    g = np.asarray(digits, dtype=int).reshape(9, 9)
    target = set(range(1, 10))
    return all({int(g[r, c]) for r, c in unit} == target for unit in _units())


def sudoku_round(u, puzzle=None) -> tuple[np.ndarray, bool]:
    """Per-cell argmax over digits (lowest digit wins ties) plus a validity flag.

    With ``puzzle`` given, validity also requires agreement with its givens.
    """
    u = np.asarray(u, dtype=np.float64).reshape(SHAPE)
    digits = (np.argmax(u, axis=2) + 1).ravel()
    valid = is_valid_grid(digits)
    if valid and puzzle is not None:
        p = parse_puzzle(puzzle)
        valid = bool(np.all((p == 0) | (p == digits)))
    return digits, valid


def solve_sudoku(puzzle, limit: int = 1) -> list[np.ndarray]:
    """Exact backtracking search; returns up to ``limit`` solutions."""
    grid = parse_puzzle(puzzle).reshape(9, 9).copy()
    if _conflicts(grid):
        return []
    rows = [set(grid[r]) - {0} for r in range(9)]
    cols = [set(grid[:, c]) - {0} for c in range(9)]
    boxes = [set(grid[3 * (b // 3):3 * (b // 3) + 3, 3 * (b % 3):3 * (b % 3) + 3].ravel()) - {0}
             for b in range(9)]
    found: list[np.ndarray] = []

    def search():
        best, best_opts = None, None
        for r in range(9):
            for c in range(9):
                if grid[r, c] == 0:
                    opts = set(range(1, 10)) - rows[r] - cols[c] - boxes[3 * (r // 3) + c // 3]
                    if best_opts is None or len(opts) < len(best_opts):
                        best, best_opts = (r, c), opts
        if best is None:
            found.append(grid.ravel().copy())
            return len(found) >= limit
        r, c = best
        b = 3 * (r // 3) + c // 3
        for v in sorted(best_opts):
            grid[r, c] = v
            rows[r].add(v), cols[c].add(v), boxes[b].add(v)
            if search():
                return True
            rows[r].discard(v), cols[c].discard(v), boxes[b].discard(v)
        grid[r, c] = 0
        return False

    search()
    return found


def read_puzzles(path) -> list[np.ndarray]:
    """One 81-symbol puzzle per non-empty line; ``#`` starts a comment line."""
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(parse_puzzle(line))
    return out
