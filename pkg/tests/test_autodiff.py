import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ganlab import autodiff as ad
from ganlab.nn import MlpConfig, init_mlp

from conftest import central_diff, rel_err


class TestForwardOps:
    def test_sigmoid_at_zero(self):
        assert float(ad.sigmoid(ad.leaf(0.0)).value) == 0.5

    def test_log_of_one(self):
        assert float(ad.log(ad.leaf(1.0)).value) == 0.0

    def test_leaky_relu_negative(self):
        assert float(ad.leaky_relu(ad.leaf(-2.0), slope=0.2).value) == pytest.approx(-0.4, abs=1e-15)

    def test_sigmoid_extremes_stay_finite(self):
        v = ad.sigmoid(ad.leaf([-800.0, 800.0])).value
        assert np.all(np.isfinite(v))
        assert v[0] == 0.0 and v[1] == 1.0

    def test_log_and_sqrt_are_floored(self):
        assert float(ad.log(ad.leaf(0.0)).value) == pytest.approx(math.log(1e-12))
        assert float(ad.sqrt(ad.leaf(0.0)).value) == pytest.approx(1e-6)

    def test_division_by_zero_is_guarded(self):
        out = ad.div(ad.leaf(1.0), ad.leaf(0.0))
        assert float(out.value) == pytest.approx(1e12)

    def test_non_finite_input_names_op_and_node(self):
        y = ad.leaf(2.0)
        y.value = np.array(np.nan)
        with pytest.raises(ad.NonFiniteError) as info:
            ad.add(y, 1.0)
        assert info.value.op == "add"
        assert info.value.node_id == y.id

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_overflow_is_reported_as_produced(self):
        with pytest.raises(ad.NonFiniteError) as info:
            ad.exp(ad.leaf(1000.0))
        assert info.value.op == "exp"
        assert "produced" in str(info.value)

    def test_leaf_rejects_nan(self):
        with pytest.raises(ad.NonFiniteError):
            ad.leaf(float("nan"))

    def test_ids_increase_in_creation_order(self, graph):
        x = ad.leaf(1.0)
        a = ad.mul(x, 2.0)
        b = ad.add(a, 1.0)
        c = ad.tanh(b)
        assert x.id < a.id < b.id < c.id
        assert [n.id for n in graph.nodes] == sorted(n.id for n in graph.nodes)


class TestBackward:
    def test_square(self, graph):
        x = ad.leaf(3.0)
        ad.backward(ad.mul(x, x))
        assert float(x.grad) == 6.0

    def test_sigmoid_slope_at_zero(self, graph):
        x = ad.leaf(0.0)
        ad.backward(ad.sigmoid(x))
        assert float(x.grad) == 0.25

    def test_unreachable_node_has_zero_grad(self, graph):
        x = ad.leaf(1.0)
        z = ad.leaf(5.0)
        ad.mul(z, 2.0)
        ad.backward(ad.mul(x, 4.0))
        assert float(z.grad) == 0.0

    def test_shared_subexpression_accumulates(self, graph):
        x = ad.leaf(2.0)
        y = ad.mul(x, 3.0)
        ad.backward(ad.add(ad.mul(y, y), y))  # 9x^2 + 3x
        assert float(x.grad) == 9 * 2 * 2 + 3

    def test_backward_needs_scalar(self, graph):
        with pytest.raises(ValueError):
            ad.backward(ad.mul(ad.leaf([1.0, 2.0]), 2.0))

    @pytest.mark.parametrize(
        "op",
        ["exp", "log", "sqrt", "pow2", "relu", "leaky_relu", "sigmoid", "tanh", "abs", "neg", "div", "sub"],
    )
    def test_elementwise_ops_match_finite_differences(self, op, rng):
        x0 = rng.uniform(0.3, 2.0, size=5) * rng.choice([-1, 1], size=5)
        if op in ("log", "sqrt"):
            x0 = np.abs(x0)
        fns = {
            "exp": ad.exp,
            "log": ad.log,
            "sqrt": ad.sqrt,
            "pow2": ad.pow2,
            "relu": ad.relu,
            "leaky_relu": lambda a: ad.leaky_relu(a, 0.2),
            "sigmoid": ad.sigmoid,
            "tanh": ad.tanh,
            "abs": ad.absolute,
            "neg": ad.neg,
            "div": lambda a: ad.div(1.5, a),
            "sub": lambda a: ad.sub(a, ad.mul(a, a)),
        }
        fn = fns[op]

        def value(arrs):
            return float(np.sum(ad.value_of(fn(arrs[0]))))

        with ad.Graph():
            x = ad.leaf(x0)
            (g,) = ad.grad(ad.sum(fn(x)), [x])
        (fd,) = central_diff(value, [x0])
        assert np.max(rel_err(g, fd)) < 1e-6

    def test_broadcast_gradients(self, graph, rng):
        a0 = rng.normal(size=(4, 3))
        b0 = rng.normal(size=(3,))

        def f(arrs):
            return float(np.sum(np.tanh(arrs[0] * arrs[1] + arrs[1])))

        a, b = ad.leaf(a0), ad.leaf(b0)
        ga, gb = ad.grad(ad.sum(ad.tanh(ad.add(ad.mul(a, b), b))), [a, b])
        fa, fb = central_diff(f, [a0, b0])
        assert np.max(rel_err(ga, fa)) < 1e-6
        assert np.max(rel_err(gb, fb)) < 1e-6


def _mlp_scalar(net, x):
    return ad.sum(net(x))


class TestMlpGradients:
    @pytest.mark.parametrize("activation", ["relu", "leaky_relu", "tanh", "sigmoid"])
    def test_two_layer_mlp_matches_finite_differences(self, activation):
        rng = np.random.default_rng(7)
        cfg = MlpConfig(3, (8,), 1, hidden_activation=activation, output_activation="sigmoid")
        net = init_mlp(cfg, rng)
        for p in net.params:
            p.value = p.value + rng.normal(scale=0.3, size=p.value.shape)
        x = rng.normal(size=(5, 3))
        values = [p.value.copy() for p in net.params]

        def f(arrs):
            for p, a in zip(net.params, arrs):
                p.value = a
            return float(np.sum(net(x, track=False)))

        with ad.Graph():
            grads = ad.grad(_mlp_scalar(net, x), net.params)
        fds = central_diff(f, values)
        for g, fd in zip(grads, fds):
            assert np.max(rel_err(g, fd)) < 1e-4


class TestGradOfInputs:
    def test_linear_map_gradient(self, graph):
        w = ad.leaf([1.0, 2.0])
        x = ad.leaf([0.0, 0.0])
        (g,) = ad.grad_of_inputs(ad.sum(ad.mul(w, x)), [x])
        np.testing.assert_array_equal(g, [1.0, 2.0])
        assert float(np.sum(np.square(g))) == 5.0

    def test_double_backward_matches_finite_differences(self, rng):
        # |grad_x D(x)|^2 for a small tanh net, differentiated w.r.t. the weights
        cfg = MlpConfig(2, (6,), 1, hidden_activation="tanh", output_activation="sigmoid")
        net = init_mlp(cfg, 3)
        x0 = rng.normal(size=(4, 2))
        values = [p.value.copy() for p in net.params]

        def penalty(arrs=None):
            if arrs is not None:
                for p, a in zip(net.params, arrs):
                    p.value = a
            with ad.Graph():
                x = ad.leaf(x0)
                (gx,) = ad.grad(ad.sum(net(x)), [x], create_graph=True)
                return ad.sum(ad.square(gx))

        with ad.Graph():
            x = ad.leaf(x0)
            (gx,) = ad.grad(ad.sum(net(x)), [x], create_graph=True)
            pen = ad.sum(ad.square(gx))
            grads = ad.grad(pen, net.params)
        fds = central_diff(lambda arrs: float(penalty(arrs).value), values)
        for g, fd in zip(grads, fds):
            assert np.max(rel_err(g, fd)) < 1e-4

    def test_input_not_in_graph(self, graph):
        x = ad.leaf(1.0)
        stranger = ad.leaf(2.0)
        with pytest.raises(ad.GraphError):
            ad.grad(ad.mul(x, 3.0), [stranger])

    def test_grad_leaves_dot_grad_untouched(self, graph):
        x = ad.leaf(2.0)
        ad.grad(ad.mul(x, x), [x])
        assert x._grad is None

    def test_both_arguments_of_one_node(self, graph):
        a = ad.leaf([[1.0, 2.0]])
        b = ad.leaf([[3.0], [4.0]])
        ga, gb = ad.grad(ad.sum(ad.matmul(a, b)), [a, b])
        np.testing.assert_array_equal(ga, [[3.0, 4.0]])
        np.testing.assert_array_equal(gb, [[1.0], [2.0]])


class TestGraphCheckpoints:
    def test_truncate_invalidates_only_later_nodes(self):
        g = ad.Graph()
        with g:
            x = ad.leaf(1.0)
            keep = ad.mul(x, 2.0)
            mark = g.mark()
            gone = ad.add(keep, 1.0)
            g.truncate(mark)
            assert len(g) == mark
            ad.backward(ad.mul(keep, 3.0))  # earlier node still usable
            assert float(x.grad) == 6.0
            with pytest.raises(ad.GraphError):
                ad.add(gone, 1.0)

    def test_arena_stays_bounded_over_steps(self):
        g = ad.Graph()
        w = ad.leaf(np.ones(3))
        with g:
            for _ in range(100):
                m = g.mark()
                ad.grad(ad.sum(ad.square(w)), [w])
                g.truncate(m)
        assert len(g) == 0

    def test_identical_construction_gives_identical_bits(self, rng):
        cfg = MlpConfig(4, (16, 16), 1, hidden_activation="leaky_relu")
        x = rng.normal(size=(8, 4))
        out = []
        for _ in range(2):
            net = init_mlp(cfg, 11)
            with ad.Graph():
                out.append([g.tobytes() for g in ad.grad(ad.mean(net(x)), net.params)])
        assert out[0] == out[1]


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-3, 3, allow_nan=False), min_size=2, max_size=6),
    st.floats(0.05, 0.9),
)
def test_composite_expression_gradient_property(values, slope):
    x0 = np.array(values)

    def build(x):
        h = ad.leaky_relu(ad.mul(x, 1.3), slope)
        return ad.sum(ad.add(ad.tanh(h), ad.mul(0.5, ad.square(ad.sigmoid(x)))))

    with ad.Graph():
        x = ad.leaf(x0)
        (g,) = ad.grad(build(x), [x])
    # kinks of leaky_relu are avoided by finite differences only away from 0
    (fd,) = central_diff(lambda a: float(build(a[0])), [x0], h=1e-6)
    mask = np.abs(x0) > 1e-4
    assert np.all(rel_err(g[mask], fd[mask]) < 1e-5)
