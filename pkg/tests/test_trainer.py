import csv

import numpy as np
import pytest

from dissipnet.cone import ConeSpec
from dissipnet.energies import LeastSquares
from dissipnet.models import CallableDirection, MLPDirection, RawGradient, load_model
from dissipnet.operators import DenseOperator
from dissipnet.optimizer import AnyOf, DescentConfig, GradNorm, MaxIters, descend
from dissipnet.problems import make_toy2d
from dissipnet.trainer import (Adam, Problem, TrainConfig, TrainingPool, _loss_and_grad,
                               as_problems, bootstrap_pool, one_step_loss, regenerate_pool, train,
                               write_loss_csv)

from _oracles import fd_grad, rel_err

CONE = ConeSpec.half_space(0.1, relative=True)
GD = RawGradient(ConeSpec.bounded(1.0, 1.0))


def toy(n=16, seed=1):
    return make_toy2d(n, seed=seed)


def gd_iterates(p, k_max):
    """Every iterate of k_max plain gradient steps (index 0 is the start)."""
    its = [p.u0.copy()]
    cfg = DescentConfig(max_outer_iters=k_max, stop=AnyOf(MaxIters(k_max), GradNorm(1e-300)))
    descend(p.energy, GD, p.u0, cfg, f=p.f, callback=lambda k, u, d, tau: its.append(u.copy()))
    return its


def test_adam_first_step_is_lr_sized():
    opt = Adam(lr=0.01)
    theta = np.zeros(4)
    opt.step(theta, np.array([1e-3, -5.0, 2.0, 1e4]))
    np.testing.assert_allclose(theta, [-0.01, 0.01, -0.01, -0.01], rtol=1e-4)
    before = theta.copy()
    Adam(lr=0.01).step(theta, np.zeros(4))
    np.testing.assert_array_equal(theta, before)
    with pytest.raises(ValueError):
        Adam(lr=0.0)


def test_adam_minimizes_quadratic():
    opt = Adam(lr=0.05)
    x = np.array([3.0, -2.0])
    for _ in range(2000):
        opt.step(x, 2 * x)
    np.testing.assert_allclose(x, 0.0, atol=1e-3)


def test_loss_gradient_matches_finite_differences():
    model = MLPDirection(CONE, 2, 1, widths=(8, 8), seed=3)
    pool = bootstrap_pool(None, toy(6), 5, seed=0)
    U, F, G, Us = pool.arrays(range(len(pool)))
    _, grad = _loss_and_grad(model, U, F, G, Us)

    def loss_at(theta):
        old = model.theta.copy()
        model.theta[:] = theta
        val, _ = _loss_and_grad(model, U, F, G, Us)
        model.theta[:] = old
        return val

    coords = np.random.default_rng(0).choice(model.num_params, 30, replace=False)
    assert rel_err(grad[coords], fd_grad(loss_at, model.theta.copy(), coords=coords)) <= 1e-5


def test_one_step_loss_value():
    model = MLPDirection(CONE, 2, 1, widths=(4,), seed=0)
    pool = bootstrap_pool(None, toy(5), 3, seed=2)
    U, F, G, Us = pool.arrays(range(len(pool)))
    loss, D = one_step_loss(model, model.leaves(), U, F, G, Us)
    expected = np.mean([np.sum((U[i] - model.predict(U[i], F[i], G[i]) - Us[i]) ** 2)
                        for i in range(len(U))])
    assert float(loss.data) == pytest.approx(expected, rel=1e-12)
    assert D.data.shape == U.shape


def test_bootstrap_k_max_zero_is_start():
    probs = toy(8)
    pool = bootstrap_pool(None, probs, 0)
    assert len(pool) == 8 and pool.tags == {"gd_bootstrap"} and pool.generation == 0
    for e, p in zip(pool.entries, probs):
        np.testing.assert_array_equal(e.u, p.u0)
        np.testing.assert_array_equal(e.g, p.energy.grad(p.u0))


def test_bootstrap_entries_replay_gd():
    probs = toy(10)
    pool = bootstrap_pool(None, probs, 6, seed=4, samples_per_problem=3)
    assert len(pool) == 30
    for i, e in enumerate(pool.entries):
        its = gd_iterates(probs[i // 3], 6)
        assert any(np.array_equal(e.u, x) for x in its)
        np.testing.assert_array_equal(e.u_star, probs[i // 3].u_star)


def test_regeneration_with_gd_reproduces_bootstrap():
    probs = toy(12)
    boot = bootstrap_pool(None, probs, 8, seed=5)
    regen = regenerate_pool(boot, GD, None, probs, 8, seed=5)
    assert regen.generation == 1 and regen.tags == {"model_generation(1)"}
    for a, b in zip(boot.entries, regen.entries):
        np.testing.assert_array_equal(a.u, b.u)


def test_regeneration_uses_model_paths():
    probs = toy(6)
    shrink = CallableDirection(CONE, lambda u, f, g: 0.5 * g)
    pool = regenerate_pool(None, shrink, None, probs, 4, seed=1)
    assert pool.generation == 1
    for e, p in zip(pool.entries, probs):
        its = [p.u0.copy()]
        cfg = DescentConfig(max_outer_iters=4, stop=AnyOf(MaxIters(4), GradNorm(1e-300)))
        descend(p.energy, shrink, p.u0, cfg, f=p.f,
                callback=lambda k, u, d, tau: its.append(u.copy()))
        assert any(np.array_equal(e.u, x) for x in its)


def test_as_problems_forms():
    A = DenseOperator([[1.0, 1.0]])
    tup = [(np.zeros(2), np.array([5.0]), np.array([0.0, 5.0]))]
    (p,) = as_problems(tup, lambda f: LeastSquares(A, f))
    assert isinstance(p, Problem) and p.energy.value(p.u_star) == 0.0
    (q,) = as_problems(tup, LeastSquares(A, [5.0]))
    assert q.energy.value([5.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        as_problems(tup)
    assert as_problems([p]) == [p]


def test_config_validation():
    for bad in ({"regen_period": 0}, {"k_max": -1}, {"batch_size": 0}, {"epochs": -1},
                {"samples_per_problem": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_training_reduces_toy_loss():
    probs = toy(64)
    model = MLPDirection(CONE, 2, 1, widths=(32, 32), seed=0)
    pool = bootstrap_pool(None, probs, 10, seed=0)
    cfg = TrainConfig(lr=1e-3, batch_size=16, regen_period=50, epochs=60, seed=0)
    model, losses, pool = train(model, pool, cfg, problems=probs)
    assert len(losses) == 60 * 4
    assert np.mean(losses[-10:]) <= np.mean(losses[:10]) / 10
    assert pool.generation == (len(losses) - 1) // 50
    assert pool.tags == {f"model_generation({pool.generation})"}


def test_training_is_deterministic():
    def run():
        probs = toy(16)
        model = MLPDirection(CONE, 2, 1, widths=(8,), seed=2)
        pool = bootstrap_pool(None, probs, 5, seed=3)
        cfg = TrainConfig(batch_size=8, regen_period=5, epochs=6, seed=3)
        return train(model, pool, cfg, problems=probs)

    m1, l1, p1 = run()
    m2, l2, p2 = run()
    assert l1 == l2
    np.testing.assert_array_equal(m1.theta, m2.theta)
    for a, b in zip(p1.entries, p2.entries):
        np.testing.assert_array_equal(a.u, b.u)


def test_pool_fixed_between_regenerations():
    probs = toy(16)
    pool = bootstrap_pool(None, probs, 5)
    snapshot = [e.u.copy() for e in pool.entries]
    model = MLPDirection(CONE, 2, 1, widths=(8,), seed=0)
    # without problems the pool is never regenerated
    _, _, out = train(model, pool, TrainConfig(batch_size=4, regen_period=2, epochs=3))
    assert out is pool and out.generation == 0
    for e, u in zip(out.entries, snapshot):
        np.testing.assert_array_equal(e.u, u)


def test_max_regenerations_caps_generations():
    probs = toy(8)
    model = MLPDirection(CONE, 2, 1, widths=(8,), seed=0)
    pool = bootstrap_pool(None, probs, 3)
    cfg = TrainConfig(batch_size=4, regen_period=2, epochs=10, max_regenerations=2)
    _, _, out = train(model, pool, cfg, problems=probs)
    assert out.generation == 2


def test_non_finite_loss_is_reported():
    probs = toy(4)
    model = MLPDirection(CONE, 2, 1, widths=(4,), seed=0)
    pool = bootstrap_pool(None, probs, 2)
    pool.entries[1] = type(pool.entries[1])(pool.entries[1].u, pool.entries[1].f,
                                            np.array([np.inf, 0.0]), pool.entries[1].g, "bad")
    with np.errstate(invalid="ignore", over="ignore"), \
            pytest.raises(FloatingPointError, match="batch 0"):
        train(model, pool, TrainConfig(batch_size=4, epochs=1))


def test_empty_pool_rejected():
    model = MLPDirection(CONE, 2, 1, widths=(4,), seed=0)
    with pytest.raises(ValueError, match="empty"):
        train(model, TrainingPool(), TrainConfig())


def test_loss_csv_and_checkpoints(tmp_path):
    probs = toy(8)
    model = MLPDirection(CONE, 2, 1, widths=(4,), seed=0)
    pool = bootstrap_pool(None, probs, 2)
    cfg = TrainConfig(batch_size=4, epochs=3, checkpoint_every=2, checkpoint_dir=str(tmp_path / "ck"))
    _, losses, _ = train(model, pool, cfg, loss_csv=tmp_path / "loss.csv")
    with open(tmp_path / "loss.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["batch", "loss"]
    assert [float(r[1]) for r in rows[1:]] == losses
    names = sorted(p.name for p in (tmp_path / "ck").iterdir())
    assert names == ["checkpoint_000002.json", "checkpoint_000004.json", "checkpoint_000006.json"]
    np.testing.assert_array_equal(load_model(tmp_path / "ck" / names[-1]).theta, model.theta)
    write_loss_csv(tmp_path / "empty.csv", [])
    assert (tmp_path / "empty.csv").read_text() == "batch,loss\n"


def test_online_mode_runs():
    probs = toy(8)
    model = MLPDirection(CONE, 2, 1, widths=(8,), seed=0)
    pool = bootstrap_pool(None, probs, 3)
    cfg = TrainConfig(batch_size=4, regen_period=3, epochs=4, online=True)
    _, losses, out = train(model, pool, cfg, problems=probs)
    assert len(losses) == 8 and all(np.isfinite(losses))
    assert out is pool
