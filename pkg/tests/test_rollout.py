"""Index bookkeeping, batch generation, and scenario rollout tests."""

import numpy as np
import pytest

from dsml.gp import KernelParams, MultiGP
from dsml.rollout import build_index_map, generate_batch, rollout_one
from dsml.tasks import (
    AdditiveInput,
    ConfigurationError,
    ConstantConstraint,
    CoordinateBoundConstraint,
    SystemSpec,
    TaskSpec,
    ZeroInput,
)


class TestIndexMap:
    def test_no_measurements_single_task(self):
        im = build_index_map(0, 1, 2)
        assert im.total == 3
        assert [im.entry(n) for n in range(3)] == [
            ("trajectory", 1, 0),
            ("trajectory", 1, 1),
            ("trajectory", 1, 2),
        ]

    def test_demo_scale_arithmetic(self):
        im = build_index_map(2, 3, 100)
        assert im.total == 2 + 3 * 101
        assert im.entry(2) == ("trajectory", 1, 0)

    def test_hand_enumeration(self):
        im = build_index_map(1, 2, 1)
        expected = [
            ("measurement", 1),
            ("trajectory", 1, 0),
            ("trajectory", 1, 1),
            ("trajectory", 2, 0),
            ("trajectory", 2, 1),
        ]
        assert [im.entry(n) for n in range(im.total)] == expected

    def test_every_pair_exactly_once(self):
        im = build_index_map(3, 4, 7)
        pairs = [im.entry(n)[1:] for n in range(im.total) if im.entry(n)[0] == "trajectory"]
        assert len(pairs) == len(set(pairs)) == 4 * 8
        assert set(pairs) == {(j, t) for j in range(1, 5) for t in range(8)}

    def test_invalid_configs(self):
        with pytest.raises(ConfigurationError):
            build_index_map(0, 0, 5)
        with pytest.raises(ConfigurationError):
            build_index_map(0, 1, 0)
        with pytest.raises(ConfigurationError):
            build_index_map(-1, 1, 5)


class TestSampleBatch:
    def test_deterministic_given_seed(self):
        im = build_index_map(2, 1, 3)
        a = generate_batch(123, 10, im, 2)
        b = generate_batch(123, 10, im, 2)
        assert np.array_equal(a.draws, b.draws)

    def test_neighbouring_seeds_differ(self):
        im = build_index_map(0, 1, 10)
        a = generate_batch(7, 50, im, 2).draws
        b = generate_batch(8, 50, im, 2).draws
        assert np.mean(a != b) > 0.99

    def test_shape(self):
        im = build_index_map(2, 3, 100)
        assert im.total == 305
        batch = generate_batch(0, 100, im, 2)
        assert batch.draws.shape == (100, 305, 4)

    def test_moments(self):
        im = build_index_map(0, 1, 24)  # 25 * 2 * 2 = 100 values per sample
        batch = generate_batch(3, 200, im, 2)
        flat = batch.draws.ravel()
        se = 1.0 / np.sqrt(flat.size)
        assert abs(flat.mean()) < 4 * se
        assert abs(flat.var() - 1.0) < 4 * np.sqrt(2.0 / flat.size)


def _scalar_linear_system(signal_variance=1e-18, q=1.0):
    """dx = du = 1, known x' = x + u, negligible unknown, noise scale q."""
    return SystemSpec(
        dx=1,
        du=1,
        known_dynamics=AdditiveInput(1, 1),
        noise_scale=np.array([[q]]),
        true_unknown=None,
        gp_input_projection=(0,),
    ), KernelParams(signal_variance, (1.0,), 0.0, input_projection=(0,))


class TestRolloutOne:
    def test_fixed_point_with_zero_noise(self):
        # zero zetas, zero-mean prior, zero noise scale, identity-on-state
        # dynamics and zero input leave every trajectory at its start
        system = SystemSpec(
            dx=1, du=1,
            known_dynamics=lambda aug: aug[:1],
            noise_scale=np.array([[0.0]]),
            gp_input_projection=(0,),
        )
        params = KernelParams(1.0, (1.0,), 0.0, input_projection=(0,))
        prior = MultiGP.empty(params, dx=1)
        task = TaskSpec(1, ZeroInput(1), (ConstantConstraint(-1.0),), horizon=5,
                        initial_state=np.array([0.7]))
        zetas = np.zeros((6, 2))
        res = rollout_one(np.zeros((0, 2)), system, [task], prior, zetas)
        assert res.diverged is None
        np.testing.assert_allclose(res.trajectories[0][:, 0], 0.7)

    def test_degenerate_kernel_matches_linear_gaussian_recursion(self):
        # with the GP contribution driven to zero the rollout is x' = x + q*z''
        system, params = _scalar_linear_system(signal_variance=1e-24, q=0.8)
        prior = MultiGP.empty(params, dx=1)
        task = TaskSpec(1, ZeroInput(1), (ConstantConstraint(-1.0),), horizon=4,
                        initial_state=np.array([0.0]))
        rng = np.random.default_rng(4)
        zetas = rng.normal(size=(5, 2))
        res = rollout_one(np.zeros((0, 2)), system, [task], prior, zetas)
        x = 0.0
        for t in range(4):
            x = x + 0.8 * zetas[t, 1]
            assert res.trajectories[0][t + 1, 0] == pytest.approx(x, abs=1e-10)

    def test_depends_only_on_inputs(self):
        system, params = _scalar_linear_system()
        prior = MultiGP.empty(params, dx=1)
        task = TaskSpec(1, ZeroInput(1), (ConstantConstraint(-1.0),), horizon=3,
                        initial_state=np.array([0.0]))
        zetas = np.random.default_rng(0).normal(size=(4, 2))
        a = rollout_one(np.zeros((0, 2)), system, [task], prior, zetas)
        b = rollout_one(np.zeros((0, 2)), system, [task], prior, zetas)
        assert np.array_equal(a.trajectories[0], b.trajectories[0])

    def test_shared_function_draw_across_tasks(self):
        # two identical tasks with identical zeta blocks revisit the same
        # augmented states; the shared sampler must reproduce the same path
        params = KernelParams(1.0, (1.0,), 0.0, input_projection=(0,))
        system = SystemSpec(
            dx=1, du=1,
            known_dynamics=AdditiveInput(1, 1),
            noise_scale=np.array([[0.0]]),
            gp_input_projection=(0,),
        )
        prior = MultiGP.empty(params, dx=1)
        tasks = [
            TaskSpec(1, ZeroInput(1), (ConstantConstraint(-1.0),), horizon=3,
                     initial_state=np.array([0.3])),
            TaskSpec(2, ZeroInput(1), (ConstantConstraint(-1.0),), horizon=3,
                     initial_state=np.array([0.3])),
        ]
        rng = np.random.default_rng(11)
        block = rng.normal(size=(4, 2))
        block[:, 1] = 0.0  # no process noise, so revisits hit identical points
        zetas = np.vstack([block, block])
        res = rollout_one(np.zeros((0, 2)), system, tasks, prior, zetas)
        assert res.diverged is None
        np.testing.assert_allclose(res.trajectories[1], res.trajectories[0], atol=1e-8)

    def test_measurement_phase_conditions_controller(self):
        # a noise-free measurement at the start state makes the controller
        # mean reproduce the sampled residual there
        params = KernelParams(1.0, (1.0,), 1e-12, input_projection=(0,))
        system, _ = _scalar_linear_system(q=0.0)
        prior = MultiGP.empty(params, dx=1)
        task = TaskSpec(1, ZeroInput(1), (ConstantConstraint(-1.0),), horizon=1,
                        initial_state=np.array([0.0]))
        loc = np.array([[0.4, 0.0]])
        rng = np.random.default_rng(2)
        zetas = rng.normal(size=(3, 2))
        res = rollout_one(loc, system, [task], prior, zetas)
        got = res.controller_gp.posterior_mean(np.array([0.4, 0.0]))[0]
        assert got == pytest.approx(res.measurement_residuals[0, 0], rel=1e-6)
        # measurement value = known + residual
        assert res.measurement_values[0, 0] == pytest.approx(
            0.4 + 0.0 + res.measurement_residuals[0, 0])

    def test_divergence_guard_marks_and_stops(self):
        class Doubler:
            def __call__(self, aug):
                return aug[:1] * 3.0

        system = SystemSpec(dx=1, du=1, known_dynamics=Doubler(),
                            noise_scale=np.array([[0.0]]), gp_input_projection=(0,))
        params = KernelParams(1e-18, (1.0,), 0.0, input_projection=(0,))
        prior = MultiGP.empty(params, dx=1)
        task = TaskSpec(1, ZeroInput(1), (ConstantConstraint(-1.0),), horizon=40,
                        initial_state=np.array([10.0]))
        zetas = np.zeros((41, 2))
        res = rollout_one(np.zeros((0, 2)), system, [task], prior, zetas)
        assert res.diverged is not None
        j, t = res.diverged
        assert j == 0 and 1 <= t <= 40
        assert res.valid_steps[0] < 41

    def test_second_task_consumes_its_own_zeta_block(self):
        # zeroing all rows except task 2's block moves only task 2
        system, params = _scalar_linear_system(signal_variance=1e-24, q=1.0)
        prior = MultiGP.empty(params, dx=1)
        tasks = [
            TaskSpec(1, ZeroInput(1), (ConstantConstraint(-1.0),), horizon=2,
                     initial_state=np.array([0.0])),
            TaskSpec(2, ZeroInput(1), (ConstantConstraint(-1.0),), horizon=2,
                     initial_state=np.array([0.0])),
        ]
        zetas = np.zeros((6, 2))
        zetas[3:, 1] = [1.0, -2.0, 0.5]  # task 2 rows only
        res = rollout_one(np.zeros((0, 2)), system, tasks, prior, zetas)
        np.testing.assert_allclose(res.trajectories[0][:, 0], 0.0, atol=1e-10)
        np.testing.assert_allclose(res.trajectories[1][:, 0], [0.0, 1.0, -1.0],
                                   atol=1e-10)

    def test_terminal_state_expectation_matches_analytic(self):
        # linear random walk: E[x_H] = 0, Var[x_H] = H q^2; the Monte-Carlo
        # mean over many rollouts must sit within 3 standard errors
        system, params = _scalar_linear_system(signal_variance=1e-24, q=0.5)
        prior = MultiGP.empty(params, dx=1)
        H = 3
        task = TaskSpec(1, ZeroInput(1), (ConstantConstraint(-1.0),), horizon=H,
                        initial_state=np.array([0.0]))
        m = 10_000
        im = build_index_map(0, 1, H)
        batch = generate_batch(99, m, im, 1)
        terminal = np.empty(m)
        for i in range(m):
            res = rollout_one(np.zeros((0, 2)), system, [task], prior,
                              batch.draws[i])
            terminal[i] = res.trajectories[0][H, 0]
        se = 0.5 * np.sqrt(H) / np.sqrt(m)
        assert abs(terminal.mean()) < 3 * se
        assert abs(terminal.std(ddof=1) - 0.5 * np.sqrt(H)) < 4 * se

    def test_zeta_shape_mismatch_raises(self):
        system, params = _scalar_linear_system()
        prior = MultiGP.empty(params, dx=1)
        task = TaskSpec(1, ZeroInput(1), (ConstantConstraint(-1.0),), horizon=3,
                        initial_state=np.array([0.0]))
        with pytest.raises(ConfigurationError):
            rollout_one(np.zeros((0, 2)), system, [task], prior, np.zeros((3, 2)))
