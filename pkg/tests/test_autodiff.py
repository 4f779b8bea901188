import numpy as np
import pytest

from stride import autodiff as ad
from stride.errors import ContractError, DimensionError, NumericError


def test_sin_of_zeros_is_zeros():
    g = ad.Graph()
    out = ad.sin(g.tensor(np.zeros(5)))
    assert np.array_equal(out.value, np.zeros(5))


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 3))
    g = ad.Graph()
    out = ad.matmul(g.tensor(np.eye(3)), g.tensor(a))
    np.testing.assert_array_equal(out.value, a)


def test_sum_square_hand_value():
    g = ad.Graph()
    out = ad.tsum(ad.square(g.tensor([3.0, 4.0])))
    assert float(out.value) == 25.0


def test_backward_sum_gives_ones():
    g = ad.Graph()
    x = g.tensor(np.arange(4.0), requires_grad=True)
    grads = g.backward(ad.tsum(x))
    np.testing.assert_array_equal(grads[x.node_id], np.ones(4))


def test_backward_sum_square_hand_gradient():
    g = ad.Graph()
    x = g.tensor([1.0, 2.0], requires_grad=True)
    grads = g.backward(ad.tsum(ad.square(x)))
    np.testing.assert_array_equal(grads[x.node_id], [2.0, 4.0])


def test_grad_check_sum_sin():
    assert ad.grad_check(lambda t: ad.tsum(ad.sin(t)), np.linspace(-1, 1, 7)) <= 1e-6


def _composed_net(t):
    # small dense net mixing most primitives
    g = t.graph
    w1 = g.tensor(np.linspace(-0.5, 0.5, 12).reshape(4, 3))
    b1 = g.tensor([0.1, -0.2, 0.3])
    w2 = g.tensor(np.linspace(0.3, -0.3, 6).reshape(3, 2))
    h = ad.tanh(ad.add_bias(ad.matmul(t, w1), b1))
    h = ad.sigmoid(ad.matmul(h, w2))
    h = ad.concat_last([h, ad.cos(h)])
    return ad.tmean(ad.square(h))


def test_grad_check_composed_net():
    rng = np.random.default_rng(3)
    err = ad.grad_check(_composed_net, rng.normal(size=(5, 4)))
    assert err <= 1e-5


UNARY_OPS = {
    "sin": ad.sin,
    "cos": ad.cos,
    "tanh": ad.tanh,
    "sigmoid": ad.sigmoid,
    "gelu": ad.gelu,
    "square": ad.square,
    "sum": ad.tsum,
    "mean": ad.tmean,
    "scale": lambda t: ad.scale(t, 1.7),
    "slice": lambda t: ad.slice_last(t, 1, 3),
    "reshape": lambda t: ad.reshape(t, (4, 3)),
    "repeat": lambda t: ad.repeat_rows(t, 3),
}

BINARY_OPS = {
    "add": ad.add,
    "sub": ad.sub,
    "mul": ad.mul,
}


def _bounded_away_from_zero(rng, size):
    # keeps finite differences well conditioned for odd-powered ops
    return rng.uniform(0.3, 1.5, size=size) * rng.choice([-1.0, 1.0], size=size)


@pytest.mark.parametrize("name", sorted(UNARY_OPS))
def test_unary_primitive_gradients_100_seeds(name):
    op = UNARY_OPS[name]
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = _bounded_away_from_zero(rng, (3, 4))
        out_shape = op(ad.Graph().tensor(x)).value.shape
        w = rng.uniform(0.5, 1.5, size=out_shape)

        def fn(t):
            return ad.tsum(ad.mul(op(t), t.graph.tensor(w)))

        err = ad.grad_check(fn, x)
        assert err <= 1e-5, f"{name} seed {seed}: {err}"


@pytest.mark.parametrize("name", sorted(BINARY_OPS))
def test_binary_primitive_gradients_100_seeds(name):
    op = BINARY_OPS[name]
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = _bounded_away_from_zero(rng, (3, 4))
        other = _bounded_away_from_zero(rng, (3, 4))
        w = rng.uniform(0.5, 1.5, size=(3, 4))

        def fn(t):
            g = t.graph
            return ad.tsum(ad.mul(op(t, g.tensor(other)), g.tensor(w)))

        err = ad.grad_check(fn, x)
        assert err <= 1e-5, f"{name} seed {seed}: {err}"


def test_matmul_and_bias_gradients_100_seeds():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        w = rng.normal(size=(4, 3))
        b = rng.normal(size=3)

        def fn(t):
            g = t.graph
            return ad.tsum(ad.square(ad.add_bias(ad.matmul(t, g.tensor(w)), g.tensor(b))))

        assert ad.grad_check(fn, rng.normal(size=(2, 4))) <= 1e-5


def test_matmul_rank_one_inner_dim_matches_general_path():
    # k == 1 takes the broadcast shortcut; value and gradient must agree
    rng = np.random.default_rng(7)
    a = rng.normal(size=(5, 1))
    b = rng.normal(size=(1, 4))
    g = ad.Graph()
    ta, tb = g.tensor(a, requires_grad=True), g.tensor(b, requires_grad=True)
    out = ad.matmul(ta, tb)
    np.testing.assert_allclose(out.value, a @ b, rtol=0, atol=0)
    grads = g.backward(ad.tsum(out))
    np.testing.assert_allclose(grads[ta.node_id], np.full((5, 1), b.sum()))
    np.testing.assert_allclose(grads[tb.node_id], np.full((1, 4), a.sum()))


def test_lstm_gates_fused_matches_unfused_composition():
    rng = np.random.default_rng(0)
    G = rng.normal(size=(3, 8))
    c = rng.normal(size=(3, 2))
    g = ad.Graph()
    out = ad.lstm_gates(g.tensor(G), g.tensor(c)).value
    i = 1 / (1 + np.exp(-G[:, 0:2]))
    f = 1 / (1 + np.exp(-G[:, 2:4]))
    gg = np.tanh(G[:, 4:6])
    o = 1 / (1 + np.exp(-G[:, 6:8]))
    c2 = f * c + i * gg
    np.testing.assert_allclose(out[:, :2], o * np.tanh(c2), atol=1e-12)
    np.testing.assert_allclose(out[:, 2:], c2, atol=1e-12)


def test_lstm_gates_gradients_100_seeds():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        G = rng.normal(size=(2, 8))
        c = rng.normal(size=(2, 2))
        w = rng.uniform(0.5, 1.5, size=(2, 4))

        def wrt_gates(t):
            g = t.graph
            return ad.tsum(ad.mul(ad.lstm_gates(t, g.tensor(c)), g.tensor(w)))

        def wrt_cell(t):
            g = t.graph
            return ad.tsum(ad.mul(ad.lstm_gates(g.tensor(G), t), g.tensor(w)))

        assert ad.grad_check(wrt_gates, G) <= 1e-5
        assert ad.grad_check(wrt_cell, c) <= 1e-5


def test_row_ops_round_trip_gradients():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 3))
    w = rng.uniform(0.5, 1.5, size=(3, 3))

    def fn(t):
        g = t.graph
        joined = ad.concat_rows([t, g.tensor(b)])
        return ad.tsum(ad.mul(ad.slice_rows(joined, 1, 4), g.tensor(w)))

    assert ad.grad_check(fn, a) <= 1e-5


def test_backward_identical_graphs_bitwise_identical():
    def run():
        g = ad.Graph()
        rng = np.random.default_rng(11)
        x = g.tensor(rng.normal(size=(3, 3)), requires_grad=True)
        w = g.tensor(rng.normal(size=(3, 3)), requires_grad=True)
        loss = ad.tmean(ad.square(ad.tanh(ad.matmul(x, w))))
        grads = g.backward(loss)
        return grads[x.node_id], grads[w.node_id]

    g1, g2 = run(), run()
    assert g1[0].tobytes() == g2[0].tobytes()
    assert g1[1].tobytes() == g2[1].tobytes()


def test_forward_ops_do_not_mutate_inputs():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    a0, b0 = a.copy(), b.copy()
    g = ad.Graph()
    ta, tb = g.tensor(a), g.tensor(b)
    ad.mul(ta, tb)
    ad.add(ta, tb)
    ad.tanh(ta)
    ad.slice_last(ta, 0, 2)
    np.testing.assert_array_equal(a, a0)
    np.testing.assert_array_equal(b, b0)


def test_shape_mismatch_names_both_shapes():
    g = ad.Graph()
    a, b = g.tensor(np.zeros((2, 3))), g.tensor(np.zeros((3, 3)))
    with pytest.raises(DimensionError, match=r"\(2, 3\)") as exc:
        ad.add(a, b)
    assert "(3, 3)" in str(exc.value)
    with pytest.raises(DimensionError):
        ad.matmul(a, g.tensor(np.zeros((2, 2))))


def test_non_finite_input_raises_numeric_error():
    g = ad.Graph()
    with pytest.raises(NumericError):
        g.tensor([1.0, np.inf])
    with pytest.raises(NumericError):
        g.tensor([np.nan])


def test_non_scalar_loss_rejected():
    g = ad.Graph()
    x = g.tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        g.backward(x)


def test_graph_consumed_after_backward():
    g = ad.Graph()
    x = g.tensor(np.ones(3), requires_grad=True)
    g.backward(ad.tsum(x))
    with pytest.raises(ContractError):
        g.tensor(np.ones(2))
    g.reset()
    assert len(g) == 0
    g.tensor(np.ones(2))  # usable again


def test_gradient_through_shared_input_accumulates():
    # y = x*x + x: dy/dx = 2x + 1
    g = ad.Graph()
    x = g.tensor([1.5, -0.5], requires_grad=True)
    loss = ad.tsum(ad.add(ad.mul(x, x), x))
    grads = g.backward(loss)
    np.testing.assert_allclose(grads[x.node_id], [4.0, 0.0])


def test_constant_subtree_gets_no_gradient_entry():
    g = ad.Graph()
    x = g.tensor(np.ones(3), requires_grad=True)
    c = g.tensor(np.ones(3))
    grads = g.backward(ad.tsum(ad.mul(x, c)))
    assert set(grads) == {x.node_id}
