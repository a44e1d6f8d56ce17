import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dissipnet import tensor as T
from dissipnet.tensor import ShapeError, Tape, Tensor, backward

from _oracles import fd_grad, rel_err


def grad_of(fn, *arrays_):
    leaves = [Tensor(a, requires_grad=True) for a in arrays_]
    with Tape() as tape:
        out = fn(*leaves)
    g = backward(tape, out)
    return [g[leaf] for leaf in leaves]


def test_relu_example():
    np.testing.assert_array_equal(T.relu([-1.0, 0.0, 2.0]).data, [0.0, 0.0, 2.0])


def test_affine_identity():
    x = np.random.default_rng(0).standard_normal(5)
    np.testing.assert_array_equal(T.affine(x, np.eye(5), np.zeros(5)).data, x)


def test_conv_zero_kernel_keeps_shape():
    x = np.random.default_rng(1).standard_normal((2, 3, 7, 5))
    y = T.conv2d_3x3(x, np.zeros((4, 3, 3, 3)), np.zeros(4))
    assert y.shape == (2, 4, 7, 5)
    assert not y.data.any()


def test_square_loss_example():
    assert float(T.square_loss([1.0, 2.0], [0.0, 2.0]).data) == 1.0


def test_backward_scale():
    (dx,) = grad_of(lambda x: T.scale(x, 3.0), np.array(2.0))
    assert dx == 3.0


def test_square_loss_gradient_zero_at_minimum():
    t = np.array([0.3, -1.2, 4.0])
    (dy,) = grad_of(lambda y: T.square_loss(y, Tensor(t)), t)
    assert not dy.any()


def _mlp(rng, sizes):
    return [(rng.uniform(-1, 1, (b, a)), rng.uniform(-1, 1, b)) for a, b in zip(sizes[:-1], sizes[1:])]


def _mlp_forward(x, layers):
    h = x
    for i, (W, b) in enumerate(layers):
        h = T.affine(h, W, b)
        if i < len(layers) - 1:
            h = T.relu(h)
    return h


@pytest.mark.parametrize("seed", range(5))
def test_three_layer_net_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    sizes = [4, 7, 6, 3]
    layers = _mlp(rng, sizes)
    x = rng.uniform(-1, 1, (5, 4))
    t = rng.uniform(-1, 1, (5, 3))
    flat = [a for W, b in layers for a in (W, b)]

    def loss_np(*ps):
        ls = [(ps[2 * i], ps[2 * i + 1]) for i in range(len(layers))]
        return float(T.square_loss(_mlp_forward(Tensor(x), ls), Tensor(t)).data)

    grads = grad_of(lambda *ps: T.square_loss(
        _mlp_forward(Tensor(x), [(ps[2 * i], ps[2 * i + 1]) for i in range(len(layers))]),
        Tensor(t)), *flat)
    for k, (p, g) in enumerate(zip(flat, grads)):
        def f(v, k=k):
            ps = list(flat)
            ps[k] = v
            return loss_np(*ps)
        assert rel_err(g, fd_grad(f, p)) <= 1e-5


def _fd_check(build, *inputs, tol=1e-5):
    """Gradient of <w, build(inputs)> for a random w against finite differences."""
    rng = np.random.default_rng(42)
    out = build(*[Tensor(a) for a in inputs])
    w = rng.uniform(-1, 1, out.shape)
    grads = grad_of(lambda *ts: T.square_loss(T.add(build(*ts), Tensor(w)), Tensor(np.zeros(out.shape))),
                    *inputs)
    for k, (a, g) in enumerate(zip(inputs, grads)):
        def f(v, k=k):
            args = list(inputs)
            args[k] = v
            r = build(*[Tensor(x) for x in args]).data + w
            return float(np.sum(r * r))
        assert rel_err(g, fd_grad(f, a)) <= tol


def test_primitive_gradients():
    rng = np.random.default_rng(3)
    u = lambda *s: rng.uniform(-1, 1, s)
    _fd_check(T.affine, u(3), u(4, 3), u(4))
    _fd_check(T.affine, u(2, 3), u(4, 3), u(4))
    _fd_check(T.conv2d_3x3, u(2, 2, 5, 4), u(3, 2, 3, 3), u(3))
    _fd_check(T.conv2d_3x3, u(2, 4, 4), u(1, 2, 3, 3), u(1))
    x = u(10)
    x[np.abs(x) < 1e-3] = 0.5  # stay off the kink
    _fd_check(T.relu, x)
    _fd_check(T.add, u(2, 3), u(2, 3))
    _fd_check(lambda a: T.scale(a, -2.5), u(4))
    _fd_check(lambda a, b: T.concat([a, b], axis=1), u(2, 3), u(2, 2))
    _fd_check(lambda a, b: T.square_loss(a, b), u(3), u(3))


def test_affine_backward_is_transpose():
    rng = np.random.default_rng(5)
    W = rng.standard_normal((4, 6))
    x = Tensor(rng.standard_normal(6), requires_grad=True)
    y = rng.standard_normal(4)
    with Tape() as tape:
        out = T.affine(x, W, np.zeros(4))
    g = backward(tape, out, y)[x]
    assert np.vdot(out.data, y) == pytest.approx(np.vdot(x.data, g), rel=1e-12)
    np.testing.assert_allclose(g, W.T @ y, rtol=1e-12)


def test_conv_backward_is_transpose():
    rng = np.random.default_rng(6)
    W = rng.standard_normal((3, 2, 3, 3))
    for _ in range(20):
        x = Tensor(rng.standard_normal((1, 2, 6, 5)), requires_grad=True)
        y = rng.standard_normal((1, 3, 6, 5))
        with Tape() as tape:
            out = T.conv2d_3x3(x, W, np.zeros(3))
        g = backward(tape, out, y)[x]
        assert np.vdot(out.data, y) == pytest.approx(np.vdot(x.data, g), rel=1e-10)


@pytest.mark.parametrize("call, name", [
    (lambda: T.add(np.zeros(2), np.zeros(3)), "add"),
    (lambda: T.affine(np.zeros(3), np.zeros((2, 4)), np.zeros(2)), "affine"),
    (lambda: T.conv2d_3x3(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1)), "conv2d_3x3"),
    (lambda: T.concat([np.zeros((2, 2)), np.zeros((3, 3))], axis=0), "concat"),
    (lambda: T.square_loss(np.zeros(2), np.zeros(3)), "square_loss"),
])
def test_shape_errors_name_the_primitive(call, name):
    with pytest.raises(ShapeError, match=name):
        call()


def test_backward_before_forward():
    with pytest.raises(RuntimeError):
        backward(Tape(), Tensor(1.0))


def test_seed_shape_checked():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = T.scale(x, 2.0)
    with pytest.raises(ShapeError):
        backward(tape, y, np.ones(2))


def test_nontrainable_leaves_get_no_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    c = Tensor(np.ones(3))
    unused = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        y = T.square_loss(T.add(x, c), Tensor(np.zeros(3)))
        T.scale(unused, 1.0)
    g = backward(tape, y)
    assert c not in g
    np.testing.assert_array_equal(g[x], 4.0 * np.ones(3))
    np.testing.assert_array_equal(g[unused], 0.0)


def test_topological_order_and_single_visit():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    calls = []
    with Tape() as tape:
        h = T.add(x, x)
        h2 = T.relu(h)
        out = T.square_loss(T.add(h, h2), Tensor(np.zeros(3)))
    for node in tape.nodes:
        vjp = node.vjp
        node.vjp = lambda s, vjp=vjp, op=node.op: (calls.append(op), vjp(s))[1]
    seen = set()
    for node in tape.nodes:
        for inp in node.inputs:
            assert inp.requires_grad or inp.data.ndim >= 0
            produced_later = any(n.output is inp for n in tape.nodes if id(n.output) not in seen)
            assert not produced_later
        seen.add(id(node.output))
    backward(tape, out)
    assert sorted(calls) == sorted(n.op for n in tape.nodes)


def test_recording_does_not_change_values():
    rng = np.random.default_rng(9)
    layers = _mlp(rng, [3, 5, 2])
    x = rng.standard_normal((4, 3))
    plain = _mlp_forward(Tensor(x), layers).data
    with Tape():
        taped = _mlp_forward(Tensor(x), layers).data
    np.testing.assert_array_equal(plain, taped)


def test_determinism():
    rng = np.random.default_rng(11)
    W, b = rng.standard_normal((3, 4)), rng.standard_normal(3)
    x = rng.standard_normal((2, 4))
    runs = [grad_of(lambda W_, b_: T.square_loss(T.relu(T.affine(Tensor(x), W_, b_)),
                                                  Tensor(np.ones((2, 3)))), W, b) for _ in range(2)]
    for a, c in zip(*runs):
        assert np.array_equal(a, c)


def test_tensor_is_immutable_copy():
    src = np.ones(3)
    t = Tensor(src)
    src[0] = 5.0
    assert t.data[0] == 1.0
    with pytest.raises(ValueError):
        t.data[0] = 2.0
    assert t.size == np.prod(t.shape)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-1e3, 1e3)),
       st.floats(-10, 10))
def test_scale_is_linear(x, c):
    (g,) = grad_of(lambda t: T.scale(t, c), x)
    np.testing.assert_array_equal(g, np.full(x.shape, c))
