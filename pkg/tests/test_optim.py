import numpy as np
import pytest

from ganlab import optim
from ganlab.optim import NonFiniteGradient, OptimState


def run(kind, grads, theta0=0.0, **kw):
    theta = np.array([theta0], dtype=float)
    state = OptimState(kind, **kw)
    for g in grads:
        optim.step([theta], [np.array([g], dtype=float)], state)
    return theta, state


class TestState:
    @pytest.mark.parametrize("kw", [{"kind": "rmsprop"}, {"lr": 0.0}, {"momentum": 1.0}, {"beta2": -0.1}])
    def test_rejects_bad_settings(self, kw):
        with pytest.raises(ValueError):
            OptimState(**kw)

    def test_counter_and_buffer_shapes(self):
        params = [np.zeros((3, 2)), np.zeros(4)]
        state = OptimState("adam", lr=0.1)
        for _ in range(3):
            optim.step(params, [np.ones((3, 2)), np.ones(4)], state)
        assert state.t == 3
        assert [b.shape for b in state.buffers] == [(3, 2), (4,)]
        assert [b.shape for b in state.second] == [(3, 2), (4,)]


class TestSgd:
    def test_single_step(self):
        theta, _ = run("sgd", [2.0], theta0=1.0, lr=0.1)
        assert theta[0] == pytest.approx(0.8)

    def test_zero_gradient(self):
        theta, _ = run("sgd", [0.0] * 5, theta0=1.5, lr=0.1)
        assert theta[0] == 1.5

    def test_two_half_steps_equal_one_step(self):
        a, _ = run("sgd", [3.0, 3.0], lr=0.05)
        b, _ = run("sgd", [3.0], lr=0.1)
        assert a[0] == pytest.approx(b[0], rel=1e-15)

    def test_non_finite_gradient_aborts_untouched(self):
        params = [np.ones(2), np.ones(3)]
        state = OptimState("sgd", lr=0.1)
        with pytest.raises(NonFiniteGradient) as info:
            optim.step(params, [np.ones(2), np.array([1.0, np.inf, 0.0])], state)
        assert info.value.index == 1
        np.testing.assert_array_equal(params[0], np.ones(2))
        assert state.t == 0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            optim.step([np.ones(2)], [np.ones(3)], OptimState())


class TestMomentum:
    def test_zero_coefficient_equals_sgd_bit_for_bit(self):
        grads = np.random.default_rng(0).normal(size=50)
        a, _ = run("sgd", grads, theta0=0.3, lr=0.07)
        b, _ = run("sgd_momentum", grads, theta0=0.3, lr=0.07, momentum=0.0)
        assert a.tobytes() == b.tobytes()

    def test_two_steps_of_the_stated_rule(self):
        theta, state = run("sgd_momentum", [1.0, 1.0], lr=0.1, momentum=0.9)
        assert state.buffers[0][0] == pytest.approx(0.19)
        assert theta[0] == pytest.approx(-0.29)

    @pytest.mark.parametrize("t", [1, 5, 40])
    def test_buffer_is_a_geometric_series(self, t):
        lr, mom = 0.1, 0.9
        _, state = run("sgd_momentum", [1.0] * t, lr=lr, momentum=mom)
        assert state.buffers[0][0] == pytest.approx(lr * (1 - mom**t) / (1 - mom), rel=1e-12)


class TestAdam:
    @pytest.mark.parametrize("g", [1e-4, 0.5, 3.0, -250.0])
    def test_first_step_moves_by_lr(self, g):
        theta, _ = run("adam", [g], lr=0.01)
        assert abs(theta[0]) == pytest.approx(0.01, rel=1e-4)
        assert np.sign(theta[0]) == -np.sign(g)

    def test_first_step_is_invariant_to_gradient_scale(self):
        a, _ = run("adam", [2.0], lr=0.01)
        b, _ = run("adam", [200.0], lr=0.01)
        assert a[0] == pytest.approx(b[0], rel=1e-8)

    def test_zero_gradient_leaves_theta(self):
        theta, _ = run("adam", [0.0] * 10, theta0=0.7, lr=0.1)
        assert theta[0] == 0.7

    def test_matches_a_direct_scalar_recurrence(self):
        rng = np.random.default_rng(3)
        grads = rng.normal(size=20)
        theta, _ = run("adam", grads, theta0=0.1, lr=0.05)
        m = v = 0.0
        x = 0.1
        for t, g in enumerate(grads, start=1):
            m = 0.5 * m + 0.5 * g
            v = 0.99 * v + 0.01 * g * g
            x -= 0.05 * (m / (1 - 0.5**t)) / (np.sqrt(v / (1 - 0.99**t)) + 1e-8)
        assert theta[0] == pytest.approx(x, rel=1e-12)

    def test_minimises_a_parabola(self):
        theta = np.array([1.0])
        state = OptimState("adam", lr=0.1)
        path = []
        for _ in range(100):
            optim.step([theta], [2 * theta], state)
            path.append(abs(theta[0]))
        assert path[-1] < 1e-2
        assert path[-1] < path[20]


def test_identical_inputs_give_identical_bits():
    grads = np.random.default_rng(9).normal(size=(30, 4))
    out = []
    for _ in range(2):
        theta = np.zeros(4)
        state = OptimState("adam", lr=0.01)
        for g in grads:
            optim.step([theta], [g], state)
        out.append(theta.tobytes())
    assert out[0] == out[1]
