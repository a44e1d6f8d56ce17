"""Training direction models on one-step targets with a lagged input pool.

The loss for a pool entry ``(u, f, u*)`` is ``||(u - G(u, f, grad E(u))) - u*||^2``
averaged over a mini-batch and minimized with Adam. Training inputs start as
iterates of plain gradient descent; every ``regen_period`` mini-batches they
are regenerated from descent paths of the current model, and entries from
older generations are discarded.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .cone import ConeSpec
from .energies import Energy
from .models import DirectionModel, RawGradient, _Trainable, model_from_dict, model_to_dict, save_model
from .optimizer import AnyOf, DescentConfig, GradNorm, MaxIters, descend

__all__ = [
    "Adam",
    "PoolEntry",
    "TrainingPool",
    "TrainConfig",
    "Problem",
    "as_problems",
    "bootstrap_pool",
    "regenerate_pool",
    "generate_entries",
    "one_step_loss",
    "train",
    "write_loss_csv",
]

log = logging.getLogger(__name__)


class Adam:
    """Adam on a flat parameter vector (updated in place)."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if not (lr > 0 and 0 <= beta1 < 1 and 0 <= beta2 < 1 and eps > 0):
            raise ValueError("invalid Adam hyperparameters")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class Problem:
    energy: Energy
    u0: np.ndarray
    f: np.ndarray
    u_star: np.ndarray


def as_problems(problems, energy=None) -> list[Problem]:
    """Normalize problem descriptions.

    Accepts :class:`Problem` objects, problem instances (anything with
    ``energy, u0, f, u_star`` attributes), or ``(u0, f, u_star)`` tuples
    together with ``energy`` given either as an Energy or as a callable
    ``f -> Energy``.
    """
    out = []
    for p in problems:
        if isinstance(p, Problem):
            out.append(p)
        elif hasattr(p, "u_star") and hasattr(p, "energy"):
            out.append(Problem(p.energy, np.asarray(p.u0, float), np.asarray(p.f, float),
                               np.asarray(p.u_star, float)))
        else:
            u0, f, u_star = p
            if energy is None:
                raise ValueError("tuple problems need an energy")
            E = energy if isinstance(energy, Energy) else energy(f)
            out.append(Problem(E, np.asarray(u0, float), np.asarray(f, float),
                               np.asarray(u_star, float)))
    return out


@dataclass(frozen=True)
class PoolEntry:
    u: np.ndarray
    f: np.ndarray
    u_star: np.ndarray
    g: np.ndarray
    tag: str


@dataclass
class TrainingPool:
    entries: list[PoolEntry] = field(default_factory=list)
    generation: int = 0

    def __len__(self):
        return len(self.entries)

    @property
    def tags(self) -> set[str]:
        return {e.tag for e in self.entries}

    def arrays(self, idx):
        es = [self.entries[i] for i in idx]
        return (np.stack([e.u for e in es]), np.stack([e.f for e in es]),
                np.stack([e.g for e in es]), np.stack([e.u_star for e in es]))


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    regen_period: int = 100
    k_max: int = 10
    epochs: int = 10
    samples_per_problem: int = 1
    max_regenerations: int | None = None
    online: bool = False
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    seed: int = 0
    gen_max_backtracks: int = 60

    def __post_init__(self):
        if self.regen_period < 1:
            raise ValueError("regen_period must be >= 1")
        if self.k_max < 0:
            raise ValueError("k_max must be >= 0")
        if self.batch_size < 1 or self.epochs < 0 or self.samples_per_problem < 1:
            raise ValueError("batch_size, epochs and samples_per_problem must be positive")


def _generation_config(k: int, max_backtracks: int) -> DescentConfig:
    return DescentConfig(max_outer_iters=k, max_backtracks=max_backtracks,
                         stop=AnyOf(MaxIters(k), GradNorm(1e-300)))


def generate_entries(model: DirectionModel, problems: list[Problem], k_max: int, rng,
                     tag: str, samples_per_problem: int = 1, max_backtracks: int = 60):
    """Run ``k ~ Uniform{0..k_max}`` descent steps per sample; keep the last iterate."""
    entries = []
    for p in problems:
        for _ in range(samples_per_problem):
            k = int(rng.integers(0, k_max + 1))
            u, _ = descend(p.energy, model, p.u0, _generation_config(k, max_backtracks), f=p.f)
            if not np.all(np.isfinite(u)):
                raise FloatingPointError("non-finite iterate during pool generation")
            entries.append(PoolEntry(u, p.f, p.u_star, p.energy.grad(u), tag))
    return entries


def bootstrap_pool(energy, problems, k_max: int, seed: int = 0,
                   samples_per_problem: int = 1, max_backtracks: int = 60) -> TrainingPool:
    """Pool of plain gradient-descent iterates."""
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    probs = as_problems(problems, energy)
    gd = RawGradient(ConeSpec.bounded(1.0, 1.0))
    rng = np.random.default_rng([seed, 0])
    return TrainingPool(generate_entries(gd, probs, k_max, rng, "gd_bootstrap",
                                         samples_per_problem, max_backtracks), 0)


def regenerate_pool(pool: TrainingPool | None, model: DirectionModel, energy, problems,
                    k_max: int, seed: int = 0, samples_per_problem: int = 1,
                    max_backtracks: int = 60) -> TrainingPool:
    """Fresh pool from descent paths of ``model``; old entries are dropped."""
    generation = (pool.generation if pool is not None else 0) + 1
    probs = as_problems(problems, energy)
    rng = np.random.default_rng([seed, 0] if isinstance(model, RawGradient) else [seed, generation])
    entries = generate_entries(model, probs, k_max, rng, f"model_generation({generation})",
                               samples_per_problem, max_backtracks)
    return TrainingPool(entries, generation)


def one_step_loss(model: _Trainable, params, U, F, G, U_star):
    """Mean one-step square loss on the tape; returns (loss tensor, directions tensor)."""
    D = model.forward(params, U, F, G)
    pred = T.add(T.Tensor(U), T.scale(D, -1.0))
    loss = T.scale(T.square_loss(pred, T.Tensor(U_star)), 1.0 / len(U))
    return loss, D


def _loss_and_grad(model: _Trainable, U, F, G, U_star):
    params = model.leaves()
    with T.Tape() as tape:
        loss, _ = one_step_loss(model, params, U, F, G, U_star)
    grads = T.backward(tape, loss)
    flat = np.concatenate([grads[params[name]].ravel() for name, _ in model.manifest])
    return float(loss.data), flat


def _snapshot(model: _Trainable) -> _Trainable:
    snap = model_from_dict(model_to_dict(model))
    if hasattr(model, "back_project"):
        snap.back_project = model.back_project
    return snap


def train(model: _Trainable, pool: TrainingPool, cfg: TrainConfig, energy=None, problems=None,
          loss_csv=None):
    """Adam on the one-step loss with lagged pool regeneration.

    Regeneration needs ``problems`` (and ``energy`` for tuple problems); without
    them the pool stays fixed. Returns ``(model, losses, pool)``; ``model`` is
    updated in place.
    """
    if not len(pool) and not cfg.online:
        raise ValueError("training pool is empty")
    probs = as_problems(problems, energy) if problems is not None else None
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng([cfg.seed, 7])
    n = max(len(pool), 1)
    per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total = cfg.epochs * per_epoch
    losses: list[float] = []
    lagged = None
    regens = 0
    order = np.empty(0, dtype=int)
    for b in range(total):
        if probs is not None and b > 0 and b % cfg.regen_period == 0 and (
                cfg.max_regenerations is None or regens < cfg.max_regenerations):
            regens += 1
            if cfg.online:
                lagged = _snapshot(model)
            else:
                pool = regenerate_pool(pool, model, None, probs, cfg.k_max, cfg.seed,
                                       cfg.samples_per_problem, cfg.gen_max_backtracks)
                order = np.empty(0, dtype=int)
            log.info("batch %d: regenerated training inputs (generation %d)", b, regens)

        if cfg.online and lagged is not None:
            picks = [probs[i] for i in rng.integers(0, len(probs), cfg.batch_size)]
            batch = TrainingPool(generate_entries(lagged, picks, cfg.k_max, rng,
                                                  f"model_generation({regens})"))
            U, F, G, Us = batch.arrays(range(len(batch)))
        else:
            if order.size < cfg.batch_size:
                order = np.concatenate([order, rng.permutation(len(pool))])
            idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
            U, F, G, Us = pool.arrays(idx)

        loss, grad = _loss_and_grad(model, U, F, G, Us)
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss at batch {b}")
        losses.append(loss)
        opt.step(model.theta, grad)
        if cfg.checkpoint_every and cfg.checkpoint_dir and (b + 1) % cfg.checkpoint_every == 0:
            Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_model(model, Path(cfg.checkpoint_dir) / f"checkpoint_{b + 1:06d}.json")
    if loss_csv is not None:
        write_loss_csv(loss_csv, losses)
    return model, losses, pool


def write_loss_csv(path, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["batch", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])
