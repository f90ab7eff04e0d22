import random
from unittest import TestCase

import numpy as np
from tqdm import trange

from immgrad.autodiff import DiffMatrix, TangentSpace
from immgrad.errors import DataError, DegenerateWeightError, FilterDivergenceError
from immgrad.filters import FilterOptions, GaussianState, imm_combine, imm_mix, ImmBelief, ImmFilter, init_belief, \
    kf_predict, kf_update
from immgrad.models import build_F, build_H, build_Q, build_R, build_transition_matrix, ImmModel, ModelConfig, \
    ParamVector

from .oracles import naive_imm_reference, naive_kf_reference, NAIVE_IMM_TOLERANCE, scalar_kf_steady_state, \
    two_point_init


def maneuvering_measurements(length: int, rng: np.random.Generator, sigma_r: float = 5.0) -> np.ndarray:
    """A target that coasts, turns hard half way through, and is observed with white position noise."""
    velocity = np.array([10.0, 0.0])
    position = np.zeros(2)
    positions = []
    for t in range(length):
        if t == length // 2:
            velocity = np.array([0.0, 15.0])
        position = position + velocity + rng.standard_normal(2)
        positions.append(position)
    return np.array(positions) + sigma_r * rng.standard_normal((length, 2))


def random_params(modes: int) -> ParamVector:
    return ParamVector(
        sorted(random.uniform(0.01, 40.0) for _ in range(modes)),
        [random.uniform(0.8, 0.99) for _ in range(modes)] if modes > 1 else None,
        random.uniform(1.0, 20.0)
    )


class TestImmFilter(TestCase):
    def test_matches_naive_recursion(self):
        rng = np.random.default_rng(0)
        for _ in trange(20):
            modes = random.randint(2, 3)
            theta = random_params(modes)
            tau = random.choice((0.5, 1.0, 2.0))
            z = maneuvering_measurements(25, rng)
            reference = naive_imm_reference(z, theta.sigma_v, theta.p_stay, theta.sigma_r, tau)
            records = ImmFilter(ImmModel.build(theta, ModelConfig(tau=tau, modes=modes))).run(z)
            self.assertEqual(len(records), len(reference))
            for record, expected in zip(records, reference):
                tol = NAIVE_IMM_TOLERANCE
                self.assertTrue(tol.close(record.predicted.weight_values(), expected.predicted_weights))
                self.assertTrue(tol.close(record.posterior.weight_values(), expected.posterior_weights))
                self.assertTrue(tol.close(imm_combine(record.predicted).x.value[:, 0], expected.predicted_mean))
                combined = imm_combine(record.posterior)
                self.assertTrue(tol.close(combined.x.value[:, 0], expected.posterior_mean))
                self.assertTrue(tol.close(combined.P.value, expected.posterior_cov))
                self.assertTrue(tol.close(record.meas_prediction.z_hat.value[:, 0], expected.z_hat))
                self.assertTrue(tol.close(record.meas_prediction.S_hat.value, expected.S_hat))
                self.assertTrue(tol.close(-float(record.meas_prediction.log_likelihood(z[expected.t])), expected.nll))
                for state, mean in zip(record.posterior.modes, expected.mode_means):
                    self.assertTrue(tol.close(state.x.value[:, 0], mean))

    def test_single_mode_matches_naive_kalman_filter(self):
        rng = np.random.default_rng(1)
        for _ in trange(20):
            theta = random_params(1)
            z = maneuvering_measurements(30, rng)
            reference = naive_kf_reference(z, theta.sigma_v[0], theta.sigma_r)
            records = ImmFilter(ImmModel.build(theta, ModelConfig(modes=1))).run(z)
            for record, expected in zip(records, reference):
                self.assertTrue(NAIVE_IMM_TOLERANCE.close(record.posterior.modes[0].x.value[:, 0],
                                                          expected.posterior_mean))
                self.assertTrue(NAIVE_IMM_TOLERANCE.close(record.posterior.modes[0].P.value, expected.posterior_cov))
                self.assertTrue(NAIVE_IMM_TOLERANCE.close(-float(record.meas_prediction.log_likelihood(z[expected.t])),
                                                          expected.nll))

    def test_single_mode_is_a_kalman_filter(self):
        rng = np.random.default_rng(2)
        theta = ParamVector([3.0], None, 7.0)
        config = ModelConfig(modes=1)
        z = maneuvering_measurements(60, rng)
        records = ImmFilter(ImmModel.build(theta, config)).run(z)

        space = TangentSpace(0)
        F = build_F(config)
        H = build_H(config)
        Q = build_Q(space.lift_constant(3.0), config)
        R = build_R(space.lift_constant(7.0))
        x0, P0 = two_point_init(z[0], z[1], 7.0)
        state = GaussianState(space.matrix(x0[:, None]), space.matrix(P0))
        for t, record in zip(range(2, len(z)), records):
            state, loglik = kf_update(kf_predict(state, F, Q), z[t], H, R)
            np.testing.assert_allclose(record.posterior.modes[0].x.value, state.x.value, rtol=1e-12, atol=1e-9)
            np.testing.assert_allclose(record.posterior.modes[0].P.value, state.P.value, rtol=1e-12, atol=1e-12)
            self.assertAlmostEqual(float(record.meas_prediction.log_likelihood(z[t])), float(loglik), places=9)
            np.testing.assert_array_equal(record.posterior.weight_values(), [1.0])

    def test_weights_and_covariances_stay_valid(self):
        rng = np.random.default_rng(3)
        for _ in trange(20):
            theta = random_params(random.randint(2, 4))
            z = maneuvering_measurements(80, rng, sigma_r=random.uniform(0.5, 30.0))
            for record in ImmFilter(ImmModel.build(theta, ModelConfig(modes=theta.m))).run(z):
                for belief in (record.predicted, record.posterior):
                    weights = belief.weight_values()
                    self.assertAlmostEqual(float(np.sum(weights)), 1.0, delta=1e-9)
                    self.assertTrue(np.all(weights >= 0.0))
                    for state in belief.modes:
                        self.assertTrue(state.P.is_symmetric())
                        self.assertGreater(np.min(np.linalg.eigvalsh(state.P.value)), 0.0)

    def test_batches_match_single_trajectories(self):
        rng = np.random.default_rng(4)
        theta = ParamVector([0.5, 20.0], [0.95, 0.9], 5.0)
        model = ImmModel.build(theta, ModelConfig())
        batch = np.stack([maneuvering_measurements(40, rng) for _ in range(3)])
        batched = ImmFilter(model).run(batch)
        for b in range(3):
            single = ImmFilter(model).run(batch[b])
            for together, alone in zip(batched, single):
                np.testing.assert_allclose(together.posterior.weight_values()[b], alone.posterior.weight_values(),
                                           rtol=1e-9, atol=1e-12)
                np.testing.assert_allclose(float(together.normalizer_log[b]), float(alone.normalizer_log),
                                           rtol=1e-9)

    def test_too_few_measurements(self):
        model = ImmModel.build(ParamVector([1.0, 10.0], [0.9, 0.9], 1.0), ModelConfig())
        with self.assertRaises(DataError):
            list(ImmFilter(model).steps(np.zeros((1, 2))))
        with self.assertRaises(DataError):
            list(ImmFilter(model).steps(np.zeros((5, 3))))
        self.assertEqual(ImmFilter(model).run(np.zeros((2, 2))), [])

    def test_divergence_reports_the_step(self):
        model = ImmModel.build(ParamVector([0.0], None, 0.0), ModelConfig(modes=1))
        with self.assertRaises(FilterDivergenceError) as context:
            ImmFilter(model).run(np.zeros((5, 2)))
        self.assertEqual(context.exception.step, 2)


class TestMixing(TestCase):
    def setUp(self):
        space = TangentSpace(0)
        self.space = space
        states = [
            GaussianState(space.matrix(np.zeros((4, 1))), space.identity(4)),
            GaussianState(space.matrix(np.ones((4, 1))), space.identity(4).scale(2.0))
        ]
        self.belief = ImmBelief(states, [space.lift_constant(1.0), space.lift_constant(0.0)])
        self.absorbing = build_transition_matrix([space.lift_constant(1.0), space.lift_constant(0.5)], 2)

    def test_weight_floor_clamps_and_renormalizes(self):
        mixed = imm_mix(self.belief, self.absorbing, FilterOptions(weight_floor=1e-12))
        self.assertTrue(mixed.clamped)
        weights = [float(w) for w in mixed.predicted_weights]
        self.assertAlmostEqual(sum(weights), 1.0, places=15)
        self.assertAlmostEqual(weights[1], 1e-12, delta=1e-15)
        # the starved mode keeps its own state
        np.testing.assert_array_equal(mixed.states[1].x.value, np.ones((4, 1)))

    def test_disabled_floor_raises(self):
        with self.assertRaises(DegenerateWeightError):
            imm_mix(self.belief, self.absorbing, FilterOptions(weight_floor=0.0))

    def test_mixing_moments(self):
        even = build_transition_matrix([self.space.lift_constant(0.5), self.space.lift_constant(0.5)], 2)
        belief = ImmBelief(self.belief.modes, [self.space.lift_constant(0.5)] * 2)
        mixed = imm_mix(belief, even)
        self.assertFalse(mixed.clamped)
        for state in mixed.states:
            np.testing.assert_allclose(state.x.value, np.full((4, 1), 0.5))
            # 0.5·I + 0.5·2I plus the spread of the means
            np.testing.assert_allclose(state.P.value, 1.5 * np.eye(4) + 0.25 * np.ones((4, 4)))

    def test_initial_belief(self):
        theta = ParamVector([1.0, 10.0], [0.9, 0.9], 2.0)
        belief = init_belief(np.array([0.0, 0.0]), np.array([3.0, 4.0]), theta, ModelConfig(tau=0.5))
        np.testing.assert_array_equal(belief.weight_values(), [0.5, 0.5])
        x, P = two_point_init(np.array([0.0, 0.0]), np.array([3.0, 4.0]), 2.0, 0.5)
        for state in belief.modes:
            np.testing.assert_allclose(state.x.value[:, 0], x)
            np.testing.assert_allclose(state.P.value, P)


class TestScalarKalmanFilter(TestCase):
    def test_steady_state(self):
        for q, r in ((1.0, 1.0), (0.01, 4.0), (9.0, 0.25)):
            space = TangentSpace(0)
            one = space.identity(1)
            Q = space.matrix([[q]])
            R = space.matrix([[r]])
            state = GaussianState(space.matrix([[0.0]]), space.matrix([[100.0]]))
            for _ in range(500):
                predicted = kf_predict(state, one, Q)
                state, _ = kf_update(predicted, np.zeros(1), one, R)
            expected_predicted, expected_posterior, _ = scalar_kf_steady_state(q, r)
            self.assertAlmostEqual(float(predicted.P.value[0, 0]), expected_predicted, places=10)
            self.assertAlmostEqual(float(state.P.value[0, 0]), expected_posterior, places=10)

    def test_joseph_form_equals_plain_update(self):
        space = TangentSpace(0)
        P = DiffMatrix.constant(np.array([[4.0, 1.0], [1.0, 3.0]]), 0)
        H = space.identity(2)
        R = space.matrix(np.diag([1.0, 2.0]))
        state, _ = kf_update(GaussianState(space.matrix(np.zeros((2, 1))), P), np.ones(2), H, R)
        K = P.value @ np.linalg.inv(P.value + R.value)
        np.testing.assert_allclose(state.P.value, (np.eye(2) - K) @ P.value, rtol=1e-12)
