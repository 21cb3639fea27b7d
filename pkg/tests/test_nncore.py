import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowmap_ensemble import nncore
from flowmap_ensemble.errors import InvalidArgumentError
from flowmap_ensemble.nncore import Architecture, backward, forward, param_count, residual_step
from flowmap_ensemble.optim import init_params


@pytest.mark.parametrize("arch, expected", [
    (Architecture(2, 0, (40, 40)), 1842),
    (Architecture(3, 60, (30, 30, 30)), 7473),
    (Architecture(1, 0, (1,)), 4),
])
def test_param_count(arch, expected):
    assert param_count(arch) == expected


class TestArchitecture:
    def test_widths(self):
        a = Architecture(3, 2, (7,))
        assert a.input_dim == 9
        assert a.widths == (9, 7, 3)

    @pytest.mark.parametrize("kw", [
        dict(state_dim=0), dict(memory_len=-1), dict(hidden=()), dict(hidden=(0,)),
        dict(activation="relu"),
    ])
    def test_rejects_invalid(self, kw):
        base = dict(state_dim=2, memory_len=0, hidden=(3,))
        base.update(kw)
        with pytest.raises(InvalidArgumentError):
            Architecture(**base)

    def test_dict_round_trip(self):
        a = Architecture(3, 60, (30, 30, 30))
        assert Architecture.from_dict(a.to_dict()) == a


class TestForward:
    def test_zero_params_give_zero(self, small_arch, rng):
        x = rng.standard_normal(small_arch.input_dim)
        assert np.all(forward(small_arch, np.zeros(param_count(small_arch)), x) == 0)

    @pytest.mark.parametrize("x, expected", [(0.0, 0.0), (1.0, 0.761594)])
    def test_unit_net(self, x, expected):
        arch = Architecture(1, 0, (1,))
        p = np.array([1.0, 0.0, 1.0, 0.0])  # W1, b1, W2, b2
        assert forward(arch, p, [x])[0] == pytest.approx(expected, abs=1e-6)

    def test_matches_hand_composition(self, small_arch, small_params, rng):
        x = rng.standard_normal(small_arch.input_dim)
        h = x
        layers = nncore.unpack(small_arch, small_params)
        for k, (W, b) in enumerate(layers):
            h = h @ W + b
            if k < len(layers) - 1:
                h = np.tanh(h)
        np.testing.assert_allclose(forward(small_arch, small_params, x), h, rtol=1e-14)

    def test_deterministic(self, small_arch, small_params, rng):
        x = rng.standard_normal(small_arch.input_dim)
        a = forward(small_arch, small_params, x)
        b = forward(small_arch, small_params, x.copy())
        assert a.tobytes() == b.tobytes()

    def test_batch_rows_match_single(self, small_arch, small_params, rng):
        X = rng.standard_normal((6, small_arch.input_dim))
        out = nncore.forward_batch(small_arch, small_params, X)
        for i in range(6):
            np.testing.assert_allclose(out[i], forward(small_arch, small_params, X[i]), rtol=1e-13)

    def test_dimension_mismatch(self, small_arch, small_params):
        with pytest.raises(InvalidArgumentError):
            forward(small_arch, small_params, np.zeros(3))

    def test_wrong_param_length(self, small_arch):
        with pytest.raises(InvalidArgumentError):
            forward(small_arch, np.zeros(5), np.zeros(small_arch.input_dim))

    def test_non_finite_params_rejected(self, small_arch, small_params):
        p = small_params.copy()
        p[0] = np.nan
        with pytest.raises(InvalidArgumentError):
            forward(small_arch, p, np.zeros(small_arch.input_dim))


def _central_fd(f, theta, h=1e-6):
    g = np.empty_like(theta)
    for k in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        g[k] = (f(tp) - f(tm)) / (2 * h)
    return g


def _assert_grad_close(analytic, numeric, tol=1e-6):
    scale = np.maximum(np.abs(numeric), 1e-3)
    rel = np.abs(analytic - numeric) / scale
    assert rel.max() < tol, rel.max()


class TestBackward:
    def test_zero_cotangent(self, small_arch, small_params, rng):
        g, dx = backward(small_arch, small_params, rng.standard_normal(small_arch.input_dim),
                         np.zeros(2))
        assert not g.any() and not dx.any()

    def test_hand_differentiated_unit_net(self):
        arch = Architecture(1, 0, (1,))
        g, _ = backward(arch, np.zeros(4), [0.37], [1.0])
        np.testing.assert_array_equal(g, [0.0, 0.0, 0.0, 1.0])

    def test_param_gradient_matches_fd(self, small_arch, small_params, rng):
        x = rng.standard_normal(small_arch.input_dim)
        c = rng.standard_normal(2)
        g, _ = backward(small_arch, small_params, x, c)
        fd = _central_fd(lambda t: float(c @ forward(small_arch, t, x)), small_params)
        _assert_grad_close(g, fd)

    def test_input_gradient_matches_fd(self, small_arch, small_params, rng):
        x = rng.standard_normal(small_arch.input_dim)
        c = rng.standard_normal(2)
        _, dx = backward(small_arch, small_params, x, c)
        fd = _central_fd(lambda z: float(c @ forward(small_arch, small_params, z)), x)
        _assert_grad_close(dx, fd)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 3), st.integers(0, 2), st.lists(st.integers(1, 6), min_size=1, max_size=3),
           st.integers(0, 2**32 - 1))
    def test_fd_property(self, d, n_m, hidden, seed):
        arch = Architecture(d, n_m, tuple(hidden))
        if param_count(arch) > 200:
            return
        r = np.random.default_rng(seed)
        p = init_params(arch, r) + 0.1 * r.standard_normal(param_count(arch))
        x = r.standard_normal(arch.input_dim)
        c = r.standard_normal(d)
        g, _ = backward(arch, p, x, c)
        _assert_grad_close(g, _central_fd(lambda t: float(c @ forward(arch, t, x)), p))


class TestResidualStep:
    @given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
    def test_zero_params_is_identity(self, values):
        arch = Architecture(2, 1, (3,))
        w = np.array(values).reshape(2, 2)
        out = residual_step(arch, np.zeros(param_count(arch)), w)
        np.testing.assert_array_equal(out, w[0])

    def test_definition_without_memory(self, rng):
        arch = Architecture(2, 0, (6,))
        p = init_params(arch, rng)
        v = rng.standard_normal(2)
        np.testing.assert_array_equal(residual_step(arch, p, v), v + forward(arch, p, v))

    def test_window_concatenated_newest_first(self, small_arch, small_params, rng):
        w = rng.standard_normal((2, 2))
        expected = w[0] + forward(small_arch, small_params, w.reshape(-1))
        np.testing.assert_array_equal(residual_step(small_arch, small_params, w), expected)

    def test_window_shape_checked(self, small_arch, small_params):
        with pytest.raises(InvalidArgumentError):
            residual_step(small_arch, small_params, np.zeros((3, 2)))

