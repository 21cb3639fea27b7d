import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowmap_ensemble.errors import IntegrationError, InvalidArgumentError
from flowmap_ensemble.systems import (CHAOTIC_BOX, PENDULUM_BOX, DomainBox, SystemModel, chaotic4d,
                                      get_system, integrate, integrate_many, pendulum, rhs_eval,
                                      rk4_step, sample_initial_conditions, write_trajectory_csv)

decay = SystemModel("custom", 1, 1, lambda x: -x)
frozen = SystemModel("custom", 3, 3, lambda x: np.zeros_like(x))


class TestRhs:
    def test_pendulum_equilibrium(self):
        np.testing.assert_array_equal(rhs_eval(pendulum(), [0.0, 0.0]), [0.0, 0.0])

    def test_pendulum_quarter_turn(self):
        np.testing.assert_allclose(rhs_eval(pendulum(), [math.pi / 2, 0.0]), [0.0, -8.91], atol=1e-15)

    def test_chaotic(self):
        np.testing.assert_allclose(rhs_eval(chaotic4d(), [1.0, 1.0, 0.0, 0.0]),
                                   [-1.0, 1.2, 0.2, 100.0], rtol=1e-14)

    def test_batch_matches_single(self, rng):
        s = chaotic4d()
        X = rng.standard_normal((5, 4))
        for i in range(5):
            np.testing.assert_array_equal(s.rhs(X)[i], rhs_eval(s, X[i]))

    def test_params_and_dims(self):
        p, c = pendulum(), chaotic4d()
        assert (p.full_dim, p.observed_dim) == (2, 2)
        assert p.params == {"alpha": 0.05, "beta": 8.91}
        assert (c.full_dim, c.observed_dim) == (4, 3)
        assert c.params == {"eps": 0.01}

    def test_observed_projection(self):
        np.testing.assert_array_equal(chaotic4d().observe(np.array([1.0, 2.0, 3.0, 4.0])), [1, 2, 3])

    def test_unknown_system(self):
        with pytest.raises(InvalidArgumentError):
            get_system("lorenz")

    def test_wrong_length(self):
        with pytest.raises(InvalidArgumentError):
            rhs_eval(pendulum(), [1.0])


class TestRk4:
    def test_exponential_single_step(self):
        # one step on x' = -x reproduces the degree-4 Taylor polynomial of exp(-dt)
        dt = 0.1
        y = rk4_step(decay, [1.0], dt)[0]
        taylor = sum((-dt) ** k / math.factorial(k) for k in range(5))
        assert y == pytest.approx(taylor, rel=1e-15)
        assert abs(y - math.exp(-dt)) < dt ** 5 / 120

    def test_exponential_substepped(self):
        y = integrate(decay, [1.0], 0.1, 1, substeps=10)[-1, 0]
        assert abs(y - math.exp(-0.1)) < 1e-8

    @pytest.mark.parametrize("dt", [1e-3, 3e-3, 1e-2, 3e-2, 1e-1])
    def test_local_error_fifth_order(self, dt):
        err = abs(rk4_step(decay, [1.0], dt)[0] - math.exp(-dt))
        # leading term of the local error is dt^5/120
        assert err <= dt ** 5 / 100 + 1e-16

    def test_halving_local_error(self):
        e1 = abs(rk4_step(decay, [1.0], 0.2)[0] - math.exp(-0.2))
        e2 = abs(rk4_step(decay, [1.0], 0.1)[0] - math.exp(-0.1))
        assert 28 < e1 / e2 < 36

    def test_halving_global_error(self):
        def err(n):
            return abs(integrate(decay, [1.0], 1.0, 1, substeps=n)[-1, 0] - math.exp(-1.0))
        assert 14 < err(10) / err(20) < 18

    def test_zero_rhs(self, rng):
        x = rng.standard_normal(3)
        np.testing.assert_array_equal(rk4_step(frozen, x, 0.5), x)

    def test_non_finite_raises(self):
        with pytest.raises(IntegrationError):
            rk4_step(decay, [np.nan], 0.1)
        with pytest.raises(IntegrationError):
            rk4_step(SystemModel("custom", 1, 1, lambda x: x ** 3), [1e200], 1.0)

    def test_dt_positive(self):
        with pytest.raises(InvalidArgumentError):
            rk4_step(decay, [1.0], 0.0)


class TestIntegrate:
    def test_zero_steps(self):
        np.testing.assert_array_equal(integrate(pendulum(), [0.3, 0.1], 0.02, 0), [[0.3, 0.1]])

    def test_semigroup(self):
        s = pendulum()
        x0 = np.array([1.0, -2.0])
        two = integrate(s, x0, 0.02, 2)
        one = integrate(s, integrate(s, x0, 0.02, 1)[-1], 0.02, 1)
        np.testing.assert_array_equal(two[-1], one[-1])

    def test_pendulum_energy_decays(self):
        s = pendulum()
        rng = np.random.default_rng(5)
        traj, ok = integrate_many(s, sample_initial_conditions(PENDULUM_BOX, 20, rng), 0.02, 200, 10)
        assert ok.all()
        energy = 0.5 * traj[..., 1] ** 2 + 8.91 * (1 - np.cos(traj[..., 0]))
        assert np.all(np.diff(energy, axis=1) <= 1e-10)

    def test_chaotic_substep_self_consistency(self):
        # observed components at the default 40 substeps vs 80
        s = chaotic4d()
        x0 = np.array([-3.7634, 7.1463, 13.1806, -3.7634 * 7.1463])
        a = integrate(s, x0, 0.02, 1, substeps=40)[-1]
        b = integrate(s, x0, 0.02, 1, substeps=80)[-1]
        assert np.max(np.abs(a[:3] - b[:3])) < 1e-9

    def test_many_matches_single(self, rng):
        s = chaotic4d()
        X = sample_initial_conditions(CHAOTIC_BOX, 3, rng)
        traj, ok = integrate_many(s, X, 0.02, 3, 20)
        for i in range(3):
            if ok[i]:
                np.testing.assert_allclose(traj[i], integrate(s, X[i], 0.02, 3, 20), rtol=1e-13)

    def test_blowup(self):
        explode = SystemModel("custom", 1, 1, lambda x: x ** 2)
        with pytest.raises(IntegrationError):
            integrate(explode, [1.0], 0.5, 10, substeps=4)
        traj, ok = integrate_many(explode, [[1.0], [-1.0]], 0.5, 10, 4)
        assert ok.tolist() == [False, True]
        assert np.all(np.isfinite(traj))

    @pytest.mark.parametrize("kw", [dict(substeps=0), dict(n_steps=-1), dict(dt_macro=0.0)])
    def test_argument_checks(self, kw):
        args = dict(dt_macro=0.02, n_steps=1, substeps=1)
        args.update(kw)
        with pytest.raises(InvalidArgumentError):
            integrate(pendulum(), [0.0, 0.0], **args)


class TestSampling:
    def test_inside_box(self, rng):
        X = sample_initial_conditions(CHAOTIC_BOX, 1000, rng)
        assert np.all(X >= np.array(CHAOTIC_BOX.lower)) and np.all(X <= np.array(CHAOTIC_BOX.upper))

    def test_deterministic(self):
        a = sample_initial_conditions(PENDULUM_BOX, 10, np.random.default_rng(1))
        b = sample_initial_conditions(PENDULUM_BOX, 10, np.random.default_rng(1))
        assert a.tobytes() == b.tobytes()

    def test_mean_near_midpoint(self):
        n = 100_000
        X = sample_initial_conditions(CHAOTIC_BOX, n, np.random.default_rng(2))
        width = np.array(CHAOTIC_BOX.upper) - np.array(CHAOTIC_BOX.lower)
        se = width / np.sqrt(12 * n)
        assert np.all(np.abs(X.mean(axis=0) - CHAOTIC_BOX.midpoint) < 3 * se)

    def test_box_values(self):
        np.testing.assert_allclose(PENDULUM_BOX.lower, [-math.pi, -2 * math.pi])
        np.testing.assert_allclose(CHAOTIC_BOX.upper, [10, 7.5, 18, 100])

    def test_box_validation(self):
        with pytest.raises(InvalidArgumentError):
            DomainBox((0.0, 1.0), (1.0, 1.0))

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=4))
    def test_box_round_trip(self, lower):
        box = DomainBox(tuple(lower), tuple(v + 1.0 for v in lower))
        assert DomainBox.from_dict(box.to_dict()) == box


def test_trajectory_csv(tmp_path):
    traj = integrate(pendulum(), [0.1, 0.2], 0.02, 3)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, traj, 0.02)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x1", "x2"]
    assert len(rows) == 5
    assert float(rows[2][0]) == 0.02
    np.testing.assert_array_equal([float(v) for v in rows[4][1:]], traj[3])
