"""Command-line interface: ``dissipnet solve|train|sudoku|report``.

``solve`` and ``train`` take a JSON run configuration. Missing keys take the
defaults in :data:`DEFAULTS`, unknown keys are rejected, and the resolved
configuration is written next to the outputs as ``config.json``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .cone import ConeSpec
from .energies import CharbonnierTV, Composite, LeastSquares
from .feasibility import read_puzzles, solve_sudoku, sudoku_encode, sudoku_round
from .models import ConvDirection, MLPDirection, ModelFormatError, RawGradient, load_model, save_model
from .operators import SparseOperator
from .optimizer import AnyOf, DescentConfig, Discrepancy, GradNorm, MaxIters, descend
from .problems import ProblemInstance, make_phantom_inverse, make_superres, make_toy2d, write_pgm
from .trainer import TrainConfig, bootstrap_pool, train

PROBLEM_KEYS = {
    "toy2d": {"name", "n_starts", "index", "low", "high", "grid", "start"},
    "superres": {"name", "patch_size", "factor", "sigma", "n_patches", "index"},
    "phantom": {"name", "size", "blur", "sigma", "factor"},
    "matrix_market": {"name", "matrix", "rhs", "truth"},
}

DEFAULTS = {
    "problem": {"name": "toy2d"},
    "energy": {"alpha": 0.0, "eps": 0.01},
    "cone": {"mode": "half_space_relative", "zeta": 0.1, "zeta1": None, "zeta2": None,
             "grad_floor": 1e-6},
    "model": {"kind": "raw_gradient", "widths": [64, 64, 64], "blocks": 6, "channels": 16,
              "path": None},
    "descent": {"c": 0.1, "rho": 0.5, "max_outer_iters": 1000, "max_backtracks": 60,
                "constant_tau": None,
                "stop": {"rule": "grad_norm", "tol": 1e-8, "delta": "noise", "factor": 1.0}},
    "train": {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "batch_size": 32,
              "regen_period": 100, "k_max": 10, "epochs": 10, "samples_per_problem": 1,
              "online": False, "checkpoint_every": 0},
    "seed": 0,
    "output": "run",
}

PROBLEM_DEFAULTS = {
    "toy2d": {"n_starts": 100, "index": 0, "low": -6.0, "high": 6.0, "grid": False, "start": None},
    "superres": {"patch_size": 24, "factor": 4, "sigma": 0.0, "n_patches": 16, "index": 0},
    "phantom": {"size": 48, "blur": 1.5, "sigma": 0.1, "factor": 2},
    "matrix_market": {"matrix": None, "rhs": None, "truth": None},
}

INVARIANT_TOL = 1e-9


class ConfigError(ValueError):
    pass


def _merge(defaults: dict, given: dict, where: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown key {where}{key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where}{key!r} must be an object")
            out[key] = _merge(defaults[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


def resolve_config(doc: dict) -> dict:
    """Expand defaults and validate keys; raises :class:`ConfigError`."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = copy.deepcopy(doc)
    problem = doc.pop("problem", {})
    if not isinstance(problem, dict):
        raise ConfigError("'problem' must be an object")
    name = problem.get("name", "toy2d")
    if name not in PROBLEM_KEYS:
        raise ConfigError(f"unknown problem {name!r}; expected one of {sorted(PROBLEM_KEYS)}")
    for key in problem:
        if key not in PROBLEM_KEYS[name]:
            raise ConfigError(f"unknown key problem.{key!r} for problem {name!r}")
    cfg = _merge(DEFAULTS, doc, "")
    cfg["problem"] = {"name": name, **PROBLEM_DEFAULTS[name], **problem}
    if name == "matrix_market" and not (cfg["problem"]["matrix"] and cfg["problem"]["rhs"]):
        raise ConfigError("matrix_market problem needs 'matrix' and 'rhs' paths")
    if cfg["model"]["kind"] not in ("raw_gradient", "mlp", "convnet"):
        raise ConfigError(f"unknown model kind {cfg['model']['kind']!r}")
    if cfg["descent"]["stop"]["rule"] not in ("grad_norm", "discrepancy", "max_iters"):
        raise ConfigError(f"unknown stop rule {cfg['descent']['stop']['rule']!r}")
    return cfg


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return resolve_config(doc)


# ------------------------------------------------------------------ builders


def _read_vector(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=1, dtype=np.float64)


def build_problems(cfg: dict) -> list[ProblemInstance]:
    p, seed, en = cfg["problem"], cfg["seed"], cfg["energy"]
    if p["name"] == "toy2d":
        insts = make_toy2d(p["n_starts"], seed, p["low"], p["high"], p["grid"])
        if p["start"] is not None:
            insts[0].u0 = np.asarray(p["start"], dtype=np.float64).reshape(2)
        return insts
    if p["name"] == "superres":
        insts = make_superres(p["patch_size"], p["factor"], p["sigma"], p["n_patches"], seed)
        if en["alpha"]:
            for inst in insts:
                inst.energy = Composite([(1.0, inst.energy),
                                         (en["alpha"], CharbonnierTV(inst.u_star.shape, en["eps"]))])
        return insts
    if p["name"] == "phantom":
        return [make_phantom_inverse(p["size"], p["blur"], p["sigma"], en["alpha"], en["eps"],
                                     seed, p["factor"])]
    A = SparseOperator.from_matrix_market(p["matrix"])
    f = _read_vector(p["rhs"]).reshape(A.output_shape)
    truth = None if p["truth"] is None else _read_vector(p["truth"]).reshape(A.input_shape)
    return [ProblemInstance("matrix_market", A, LeastSquares(A, f), truth, f,
                            np.zeros(A.input_shape), seed=seed)]


def build_cone(cfg: dict) -> ConeSpec:
    c = {k: v for k, v in cfg["cone"].items() if v is not None}
    return ConeSpec(**c)


def build_model(cfg: dict, inst: ProblemInstance):
    m, cone = cfg["model"], build_cone(cfg)
    back_project = getattr(inst.operator, "adjoint", None)
    if m["path"]:
        return load_model(m["path"], back_project=back_project)
    if m["kind"] == "raw_gradient":
        return RawGradient(cone)
    if m["kind"] == "mlp":
        return MLPDirection(cone, inst.u0.size, np.size(inst.f), m["widths"], cfg["seed"])
    return ConvDirection(cone, m["blocks"], m["channels"], cfg["seed"], back_project)


def build_descent(cfg: dict, inst: ProblemInstance, iters: int | None = None) -> DescentConfig:
    d = cfg["descent"]
    n = d["max_outer_iters"] if iters is None else iters
    s = d["stop"]
    if s["rule"] == "grad_norm":
        rule = GradNorm(s["tol"])
    elif s["rule"] == "max_iters":
        rule = MaxIters(n)
    else:
        delta = inst.noise_norm if s["delta"] == "noise" else float(s["delta"])
        rule = Discrepancy(inst.operator, inst.f, delta, s["factor"])
    return DescentConfig(c=d["c"], rho=d["rho"], max_outer_iters=n,
                         max_backtracks=d["max_backtracks"], constant_tau=d["constant_tau"],
                         stop=AnyOf(rule, MaxIters(n)))


def build_train_config(cfg: dict, checkpoint_dir=None) -> TrainConfig:
    return TrainConfig(**cfg["train"], seed=cfg["seed"], checkpoint_dir=checkpoint_dir)


# ------------------------------------------------------------------- outputs


class Outputs:
    """Tracks written files so a failed run leaves nothing half-written behind."""

    def __init__(self, root):
        self.root = Path(root)
        self.created_root = not self.root.exists()
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.root / name
        self.files.append(p)
        return p

    def cleanup(self):
        for p in self.files:
            if p.is_dir():
                for q in p.iterdir():
                    q.unlink()
                p.rmdir()
            elif p.exists():
                p.unlink()
        if self.created_root and self.root.exists() and not any(self.root.iterdir()):
            self.root.rmdir()


def write_state(out: Outputs, u: np.ndarray) -> None:
    with open(out.path("final.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(u) if u.ndim <= 2 else u.reshape(u.shape[0], -1):
            w.writerow([repr(float(x)) for x in row])
    if u.ndim == 2 and min(u.shape) > 1:
        write_pgm(out.path("final.pgm"), u)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DISSIPNET_THREADS", "0")) or (os.cpu_count() or 1))
    except ValueError:
        return 1


def _fmt(x) -> str:
    return "nan" if x is None else f"{x:.6g}"


# ------------------------------------------------------------------ commands


def _apply_overrides(cfg, args):
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "iters", None) is not None:
        cfg["descent"]["max_outer_iters"] = args.iters
    if getattr(args, "out", None):
        cfg["output"] = args.out
    return cfg


def cmd_solve(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = Outputs(cfg["output"])
    try:
        insts = build_problems(cfg)
        idx = cfg["problem"].get("index", 0)
        if not 0 <= idx < len(insts):
            raise ConfigError(f"problem.index {idx} out of range for {len(insts)} instances")
        inst = insts[idx]
        model = build_model(cfg, inst)
        dcfg = build_descent(cfg, inst)
        u, hist = descend(inst.energy, model, inst.u0, dcfg, f=inst.f,
                          reference=inst.u_star if "psnr" in inst.metrics else None)
        out.path("config.json").write_text(json.dumps(cfg, indent=2))
        hist.to_csv(out.path("history.csv"))
        write_state(out, u)
        last = hist.records[-1]
        ok_cone = hist.max_cone_violation() <= INVARIANT_TOL
        ok_mono = hist.is_monotone()
        summary = (f"energy={last.energy:.6e} residual={_fmt(last.residual_norm)} "
                   f"psnr={_fmt(last.psnr)} iterations={last.iter} stop={hist.stop_reason} "
                   f"cone_ok={ok_cone} monotone={ok_mono}")
        out.path("summary.txt").write_text(summary + "\n")
        print(summary)
    except Exception:
        out.cleanup()
        raise
    return 0 if ok_cone and ok_mono else 1


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = Outputs(cfg["output"])
    try:
        if cfg["model"]["kind"] == "raw_gradient" and not cfg["model"]["path"]:
            raise ConfigError("train needs a trainable model kind (mlp or convnet)")
        insts = build_problems(cfg)
        model = build_model(cfg, insts[0])
        tcfg = build_train_config(cfg, str(out.path("checkpoints"))
                                  if cfg["train"]["checkpoint_every"] else None)
        out.path("config.json").write_text(json.dumps(cfg, indent=2))
        pool = bootstrap_pool(None, insts, tcfg.k_max, tcfg.seed, tcfg.samples_per_problem)
        model, losses, pool = train(model, pool, tcfg, problems=insts,
                                    loss_csv=out.path("loss.csv"))
        save_model(model, out.path("model.json"))
        print(f"batches={len(losses)} loss_first={losses[0]:.6e} loss_last={losses[-1]:.6e} "
              f"regenerations={pool.generation}")
    except Exception:
        out.cleanup()
        raise
    return 0


def _sudoku_one(puzzle, solution, model, iters, seed):
    relax, u0 = sudoku_encode(puzzle, seed=seed)
    if model is None:
        model = RawGradient(ConeSpec.bounded(1.0, 1.0))
    dcfg = DescentConfig(max_outer_iters=iters, stop=MaxIters(iters))
    u, hist = descend(relax.energy, model, u0, dcfg, f=u0)
    digits, valid = sudoku_round(u, puzzle)
    acc = float(np.mean(digits == solution))
    ok = hist.is_monotone() and hist.max_cone_violation() <= INVARIANT_TOL
    return acc, bool(valid and np.array_equal(digits, solution)), ok


def cmd_sudoku(args) -> int:
    puzzles = read_puzzles(args.puzzles)
    if args.solutions:
        solutions = read_puzzles(args.solutions)
        if len(solutions) != len(puzzles):
            raise ConfigError(f"{len(puzzles)} puzzles but {len(solutions)} solutions")
    else:
        solutions = []
        for p in puzzles:
            sols = solve_sudoku(p, limit=1)
            if not sols:
                raise ConfigError("puzzle without solution in input")
            solutions.append(sols[0])
    model = None if args.model == "gd" else load_model(args.model)
    with ThreadPoolExecutor(max_workers=_threads()) as ex:
        results = list(ex.map(lambda ps: _sudoku_one(ps[0], ps[1], model, args.iters, args.seed),
                              zip(puzzles, solutions)))
    out = Outputs(args.out) if args.out else None
    try:
        rows = [(i, acc, int(solved)) for i, (acc, solved, _) in enumerate(results)]
        if out is not None:
            with open(out.path("sudoku.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["puzzle", "accuracy", "solved"])
                w.writerows(rows)
    except Exception:
        if out is not None:
            out.cleanup()
        raise
    if args.verbose:
        for i, acc, solved in rows:
            print(f"puzzle {i}: accuracy {100 * acc:.1f}% solved {bool(solved)}")
    acc = 100 * float(np.mean([r[1] for r in rows]))
    solve = 100 * float(np.mean([r[2] for r in rows]))
    print(f"{'method':<10}{'Acc.':>8}{'Solve':>8}")
    print(f"{args.model if args.model == 'gd' else 'model':<10}{acc:>7.1f}%{solve:>7.1f}%")
    return 0 if all(r[2] for r in results) else 1


def _read_history(run_dir) -> list[dict]:
    with open(Path(run_dir) / "history.csv") as fh:
        return list(csv.DictReader(fh))


def cmd_report(args) -> int:
    with ThreadPoolExecutor(max_workers=_threads()) as ex:
        hists = list(ex.map(_read_history, args.runs))
    names = [Path(r).name or str(r) for r in args.runs]
    n = max(len(h) for h in hists)
    out = Outputs(args.out)
    try:
        for fname, key, sq in (("psnr.csv", "psnr", False), ("residual_sq.csv", "residual_norm", True)):
            with open(out.path(fname), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["iter", *names])
                for k in range(n):
                    row = [k]
                    for h in hists:
                        v = h[k][key] if k < len(h) else ""
                        row.append(repr(float(v) ** 2) if (sq and v != "") else v)
                    w.writerow(row)
    except Exception:
        out.cleanup()
        raise
    print(f"merged {len(hists)} runs into {out.root}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dissipnet", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run the descent on a configured problem")
    s.add_argument("config")
    s.add_argument("--seed", type=int)
    s.add_argument("--iters", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_solve)

    t = sub.add_parser("train", help="train a direction model and save it")
    t.add_argument("config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    q = sub.add_parser("sudoku", help="relaxed Sudoku solving with rounding")
    q.add_argument("puzzles")
    q.add_argument("--model", default="gd", help="'gd' or a saved model file")
    q.add_argument("--iters", type=int, default=100)
    q.add_argument("--solutions")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out")
    q.set_defaults(func=cmd_sudoku)

    r = sub.add_parser("report", help="merge run histories into comparison tables")
    r.add_argument("runs", nargs="+")
    r.add_argument("--out", default="report")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ModelFormatError, OSError, ValueError, FloatingPointError,
            RuntimeError) as exc:
        print(f"dissipnet {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
