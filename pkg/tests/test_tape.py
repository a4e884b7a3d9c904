import numpy as np
import pytest

from beamdn.toynet import tape as T
from beamdn.toynet.train import scalar_gradient_check


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f(x)
        flat[i] = orig - eps
        down = f(x)
        flat[i] = orig
        g.reshape(-1)[i] = (up - down) / (2 * eps)
    return g


def check(build, *shapes, seed=0, positive=False, atol=1e-7):
    """Compare tape gradients of sum(w * build(*inputs)) with central differences."""
    rng = np.random.default_rng(seed)
    xs = [rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s) for s in shapes]
    tape = T.Tape()
    leaves = [tape.leaf(x) for x in xs]
    out = build(*leaves)
    w = rng.normal(size=out.shape)
    tape.backward(T.sum_(T.mul(out, w)))
    for k, leaf in enumerate(leaves):

        def f(v, k=k):
            t = T.Tape()
            args = [t.leaf(xs[j] if j != k else v) for j in range(len(xs))]
            return float((build(*args).value * w).sum())

        np.testing.assert_allclose(leaf.grad, numeric_grad(f, xs[k].copy()), atol=atol, rtol=1e-6)


def test_scalar_probe():
    ana, num = scalar_gradient_check(lambda x: T.mul(x, x), 3.0)
    assert ana == pytest.approx(6.0, abs=1e-12)
    assert num == pytest.approx(6.0, abs=1e-6)


@pytest.mark.parametrize(
    "build,shapes",
    [
        (lambda a, b: a + b, [(3, 4), (4,)]),
        (lambda a, b: a - b, [(3, 1), (3, 4)]),
        (lambda a, b: a * b, [(2, 3), (2, 3)]),
        (lambda a, b: a @ b, [(3, 4), (4, 2)]),
        (lambda a, b: a @ b, [(2, 3, 4), (2, 4, 5)]),
        (lambda a: T.permute(a, (1, 0, 2)), [(2, 3, 4)]),
        (lambda a: T.reshape(a, (6, 2)), [(3, 4)]),
        (lambda a: a[:, 1:3], [(3, 4)]),
        (lambda a: T.take(a, np.array([2, 0, 2])), [(3, 4)]),
        (lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 2)]),
        (lambda a: T.sum_(a, axis=0, keepdims=True), [(3, 4)]),
        (lambda a: T.sum_(a, axis=1), [(3, 4)]),
        (lambda a: T.exp(a), [(3, 4)]),
        (lambda a: T.sin(a), [(3, 4)]),
        (lambda a: T.cos(a), [(3, 4)]),
        (lambda a: T.sigmoid(a), [(3, 4)]),
        (lambda a: T.log_sigmoid(a), [(3, 4)]),
        (lambda a: T.silu(a), [(3, 4)]),
        (lambda a: T.swap_last(a), [(2, 3, 4)]),
        (lambda a: T.masked_softmax(a), [(3, 5)]),
        (lambda a, g, b: T.layer_norm(a, g, b), [(3, 6), (6,), (6,)]),
    ],
)
def test_op_gradients(build, shapes):
    check(build, *shapes)


@pytest.mark.parametrize(
    "build",
    [lambda a: T.log(a), lambda a: T.power(a, 2.0), lambda a: T.power(a, -0.5), lambda a: T.power(a, 0.5), lambda a: T.abs_(a)],
)
def test_positive_domain_ops(build):
    check(build, (3, 4), positive=True)


def test_masked_softmax_gradient_with_mask():
    blocked = np.array([[False, True, False], [True, True, False]])
    check(lambda a: T.masked_softmax(a, blocked), (2, 3))


def test_masked_softmax_rows():
    rng = np.random.default_rng(0)
    x = T.Tape().leaf(rng.normal(size=(4, 6)) * 30)
    blocked = rng.uniform(size=(4, 6)) < 0.4
    blocked[3] = True
    out = T.masked_softmax(x, blocked).value
    np.testing.assert_allclose(out[:3].sum(axis=1), 1.0, atol=1e-12)
    assert np.all(out[blocked] == 0.0)
    np.testing.assert_array_equal(out[3], 0.0)


def test_masked_softmax_ignores_blocked_values():
    t = T.Tape()
    blocked = np.array([[False, True, False]])
    a = T.masked_softmax(t.leaf([[0.3, 1e300, -0.2]]), blocked).value
    b = T.masked_softmax(t.leaf([[0.3, -5.0, -0.2]]), blocked).value
    assert a.tobytes() == b.tobytes()


def test_backward_visits_each_node_once():
    t = T.Tape()
    x = t.leaf(np.array(2.0))
    y = x * x
    z = y + y  # y used twice: gradient must accumulate, not double-visit
    t.backward(z)
    assert float(x.grad) == pytest.approx(8.0)
    t.backward(z)  # a second pass resets grads first
    assert float(x.grad) == pytest.approx(8.0)


def test_backward_needs_scalar_or_seed():
    t = T.Tape()
    x = t.leaf(np.ones(3))
    with pytest.raises(ValueError):
        t.backward(x * 2.0)
    t.backward(x * 2.0, seed=np.ones(3))
    np.testing.assert_array_equal(x.grad, 2.0)


def test_constants_get_no_gradient():
    t = T.Tape()
    c = t.const(np.ones(2))
    x = t.leaf(np.ones(2))
    t.backward(T.sum_(c * x))
    assert c.grad is None or not c.requires_grad
    np.testing.assert_array_equal(x.grad, 1.0)
