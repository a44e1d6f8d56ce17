"""Generate the shipped easy Sudoku set and its reference solutions.

Grids are random symmetry transforms of a canonical solution. Clues are
removed in random order while the puzzle stays uniquely solvable and
solvable by naked singles alone (the "easy" criterion), down to a clue
count drawn uniformly per puzzle from [clues-min, clues-max].

    python tools/make_sudoku_set.py --n 50 --clues-min 32 --clues-max 46 --seed 2020
"""

import argparse
from pathlib import Path

import numpy as np

from dissipnet.feasibility import format_grid, solve_sudoku

BASE = np.array([[(3 * (r % 3) + r // 3 + c) % 9 + 1 for c in range(9)] for r in range(9)])


def random_grid(rng):
    g = BASE.copy()
    g = rng.permutation(np.arange(1, 10))[g - 1]
    bands = rng.permutation(3)
    rows = np.concatenate([3 * b + rng.permutation(3) for b in bands])
    stacks = rng.permutation(3)
    cols = np.concatenate([3 * s + rng.permutation(3) for s in stacks])
    g = g[rows][:, cols]
    return g.T if rng.random() < 0.5 else g


def singles_solvable(p):
    g = p.reshape(9, 9).copy()
    while True:
        progress = False
        for r in range(9):
            for c in range(9):
                if g[r, c]:
                    continue
                box = g[3 * (r // 3):3 * (r // 3) + 3, 3 * (c // 3):3 * (c // 3) + 3]
                opts = set(range(1, 10)) - set(g[r]) - set(g[:, c]) - set(box.ravel())
                if len(opts) == 1:
                    g[r, c] = opts.pop()
                    progress = True
        if not progress:
            return bool(np.all(g))


def make_puzzle(rng, clues):
    sol = random_grid(rng).ravel()
    p = sol.copy()
    for i in rng.permutation(81):
        if np.count_nonzero(p) <= clues:
            break
        keep = p[i]
        p[i] = 0
        if len(solve_sudoku(p, limit=2)) != 1 or not singles_solvable(p):
            p[i] = keep
    return p, sol


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=50)
    ap.add_argument("--clues-min", type=int, default=32)
    ap.add_argument("--clues-max", type=int, default=46)
    ap.add_argument("--seed", type=int, default=2020)
    ap.add_argument("--out", default="src/dissipnet/data")
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    puzzles, sols = [], []
    for _ in range(args.n):
        p, s = make_puzzle(rng, int(rng.integers(args.clues_min, args.clues_max + 1)))
        puzzles.append(format_grid(p))
        sols.append(format_grid(s))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sudoku_easy.txt").write_text("\n".join(puzzles) + "\n")
    (out / "sudoku_easy_solutions.txt").write_text("\n".join(sols) + "\n")


if __name__ == "__main__":
    main()
