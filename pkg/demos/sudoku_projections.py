"""
Sudoku as a feasibility problem
===============================

A puzzle becomes a 9x9x9 array of digit probabilities that should lie in
several convex sets at once: one-hot per cell, row, column and block, plus
the givens. Gradient descent with unit step on the mean squared distance to
those sets is the same as averaging the projections, and rounding the result
often recovers most of the grid.

Run with ``python demos/sudoku_projections.py``.
"""

from importlib import resources

import numpy as np

from dissipnet.cone import ConeSpec
from dissipnet.feasibility import format_grid, read_puzzles, sudoku_encode, sudoku_round
from dissipnet.models import RawGradient
from dissipnet.optimizer import DescentConfig, MaxIters, descend

data = resources.files("dissipnet").joinpath("data")
puzzles = read_puzzles(data.joinpath("sudoku_easy.txt"))
solutions = read_puzzles(data.joinpath("sudoku_easy_solutions.txt"))

relax, u0 = sudoku_encode(puzzles[0])
print(f"{len(relax.sets)} constraint sets, energy at the start {relax.energy.value(u0):.4f}")

# The unit gradient step and the averaged projections agree to rounding error.
step = u0 - relax.energy.grad(u0)
print(f"max |step - mean projection| = {np.max(np.abs(step - relax.energy.average_projection(u0))):.1e}")

gd = RawGradient(ConeSpec.bounded(1.0, 1.0))
accs, solved = [], 0
for p, s in zip(puzzles, solutions):
    relax, u0 = sudoku_encode(p)
    u, hist = descend(relax.energy, gd, u0, DescentConfig(max_outer_iters=100, stop=MaxIters(100)))
    digits, valid = sudoku_round(u, p)
    accs.append(np.mean(digits == s))
    solved += bool(valid and np.array_equal(digits, s))
print(f"cell accuracy {100 * np.mean(accs):.1f}%, solved {solved} of {len(puzzles)}")

best = int(np.argmax(accs))
relax, u0 = sudoku_encode(puzzles[best])
u, _ = descend(relax.energy, gd, u0, DescentConfig(max_outer_iters=100, stop=MaxIters(100)))
digits, _ = sudoku_round(u, puzzles[best])
print("puzzle ", format_grid(puzzles[best]))
print("rounded", format_grid(digits))
