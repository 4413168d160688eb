"""Recursive least squares, mixing schedule, and the training loop."""

import math

import numpy as np
import pytest

from spikegait.force_learning import (
    MixSchedule,
    RlsLearner,
    TrainingDiverged,
    mix_motor_command,
    load_weights,
    rls_update,
    save_weights,
    train_gait,
)


class TestRlsLearner:
    def test_zero_error_leaves_weights_updates_p(self):
        learner = RlsLearner(n_features=3, n_readouts=2, alpha=2.0)
        p_before = learner.P.copy()
        learner.update(np.array([1.0, 2.0, 0.5]), np.zeros(2))
        assert np.all(learner.w == 0.0)
        assert not np.array_equal(learner.P, p_before)

    def test_first_update_hand_computed(self):
        # alpha=1, x=(1,0): P I -> [[0.5,0],[0,1]], k=(0.5,0)
        learner = RlsLearner(n_features=2, n_readouts=1, alpha=1.0)
        learner.update(np.array([1.0, 0.0]), np.array([2.0]))
        assert np.allclose(learner.P, [[0.5, 0.0], [0.0, 1.0]])
        assert np.allclose(learner.w, [[-1.0, 0.0]])  # w -= e * k = 2 * (0.5, 0)

    def test_single_pass_equals_ridge_solution(self):
        # after one pass over a batch, w = (X'X + alpha I)^-1 X'Y exactly
        rng = np.random.default_rng(0)
        n, d = 120, 15
        alpha = 3.0
        x = rng.normal(size=(n, d))
        y = rng.normal(size=(n, 2))
        learner = RlsLearner(n_features=d, n_readouts=2, alpha=alpha)
        for i in range(n):
            readout = learner.w @ x[i]
            learner.update(x[i], readout - y[i])
        ridge = np.linalg.solve(x.T @ x + alpha * np.eye(d), x.T @ y).T
        assert np.max(np.abs(learner.w - ridge)) < 1e-6

    def test_update_reduces_instantaneous_error(self):
        rng = np.random.default_rng(1)
        learner = RlsLearner(n_features=10, n_readouts=4, alpha=50.0)
        for _ in range(200):
            x = rng.normal(size=10)
            target = rng.normal(size=4)
            before = learner.w @ x - target
            learner.update(x, before)
            after = learner.w @ x - target
            mask = np.abs(before) > 1e-12
            assert np.all(np.abs(after[mask]) < np.abs(before[mask]))

    def test_p_stays_symmetric_positive_definite(self):
        rng = np.random.default_rng(2)
        learner = RlsLearner(n_features=12, n_readouts=1, alpha=5.0)
        for k in range(10_000):
            x = rng.normal(size=12) * rng.uniform(0.5, 2.0)
            learner.update(x, np.array([rng.normal()]))
            if k % 500 == 0:
                assert np.max(np.abs(learner.P - learner.P.T)) < 1e-10
                assert np.linalg.eigvalsh(learner.P).min() > 0.0
        assert np.max(np.abs(learner.P - learner.P.T)) < 1e-10
        assert np.linalg.eigvalsh(learner.P).min() > 0.0

    def test_nonfinite_input_skipped_and_logged(self, caplog):
        learner = RlsLearner(n_features=2, n_readouts=1)
        w = learner.w.copy()
        with caplog.at_level("WARNING"):
            learner.update(np.array([math.nan, 0.0]), np.array([1.0]))
        assert np.array_equal(learner.w, w)
        assert learner.n_skipped == 1
        assert "non-finite" in caplog.text

    def test_functional_alias(self):
        learner = RlsLearner(n_features=2, n_readouts=1, alpha=1.0)
        out = rls_update(learner, np.array([1.0, 0.0]), np.array([0.0]))
        assert out is learner

    def test_validation(self):
        with pytest.raises(ValueError):
            RlsLearner(n_features=2, alpha=0.0)
        with pytest.raises(ValueError):
            RlsLearner(n_features=2, update_period=0)
        learner = RlsLearner(n_features=2, n_readouts=1)
        with pytest.raises(ValueError):
            learner.update(np.zeros(3), np.zeros(1))


class TestMixSchedule:
    def test_phase_values(self):
        s = MixSchedule(open_s=10.0, mix_s=5.0, closed_s=10.0)
        assert s.beta(0.0) == 0.0
        assert s.beta(9.999) == 0.0
        assert s.beta(10.0) == 0.0
        assert s.beta(12.5) == pytest.approx(0.5)
        assert s.beta(15.0) == 1.0
        assert s.beta(24.0) == 1.0
        assert s.phase(3.0) == "open-loop"
        assert s.phase(12.0) == "mixing"
        assert s.phase(16.0) == "closed-loop"

    def test_beta_monotone_and_continuous(self):
        for ramp in ("linear", "smoothstep"):
            s = MixSchedule(open_s=2.0, mix_s=3.0, closed_s=2.0, ramp=ramp)
            t = np.linspace(0.0, s.total_s, 2001)
            beta = np.array([s.beta(v) for v in t])
            assert np.all(np.diff(beta) >= 0.0)
            assert np.max(np.abs(np.diff(beta))) < 0.01
            assert beta[0] == 0.0 and beta[-1] == 1.0

    def test_mix_motor_command(self):
        s = MixSchedule(open_s=1.0, mix_s=2.0, closed_s=1.0)
        assert mix_motor_command(10.0, -10.0, s, 0.5) == 10.0
        assert mix_motor_command(10.0, -10.0, s, 2.0) == pytest.approx(0.0)
        assert mix_motor_command(10.0, -10.0, s, 3.5) == -10.0

    def test_validation(self):
        with pytest.raises(ValueError):
            MixSchedule(open_s=-1.0)
        with pytest.raises(ValueError):
            MixSchedule(ramp="bezier")


def tiny_system(seed=0):
    from spikegait.experiments import default_config, build_system

    cfg = default_config("gait-generation", "ci", seed=seed)
    cfg.reservoir.n_populations = 12
    cfg.reservoir.neurons_per_population = 10
    system, _ = build_system(cfg)
    return cfg, system


class TestTrainGait:
    def test_zero_duration_schedule(self):
        cfg, system = tiny_system()
        schedule = MixSchedule(open_s=0.0, mix_s=0.0, closed_s=0.0)
        weights, trace = train_gait(system, np.zeros((1, 4)), schedule)
        assert np.all(weights == 0.0)
        assert trace.n_rows == 0

    def test_short_training_runs_and_returns_trace(self):
        from spikegait.cpg import target_trajectories

        cfg, system = tiny_system(seed=3)
        gait = cfg.gaits[0]
        schedule = MixSchedule(open_s=2.0, mix_s=1.0, closed_s=1.0)
        targets = target_trajectories(gait, schedule.total_s, 1.0).angles
        weights, trace = train_gait(system, targets, schedule, alpha=50.0)
        assert weights.shape == (4, 12)
        assert np.any(weights != 0.0)
        assert trace.n_rows == 4001
        assert trace.t[-1] == pytest.approx(4.0)
        beta = trace.column("beta")
        assert beta[0] == 0.0 and beta[-1] == 1.0

    def test_targets_must_cover_schedule(self):
        cfg, system = tiny_system()
        schedule = MixSchedule(open_s=5.0, mix_s=0.0, closed_s=0.0)
        with pytest.raises(ValueError):
            train_gait(system, np.zeros((100, 4)), schedule)

    def test_divergence_detected(self):
        from spikegait.force_learning import Program, simulate

        cfg, system = tiny_system(seed=4)
        system.divergence_limit = 1e-6  # anything nonzero diverges
        n = 500
        program = Program(
            targets=np.zeros((n + 1, 4)),
            control=None,
            beta=np.zeros(n + 1),
            learn=np.zeros(n + 1, dtype=bool),
            dt_ms=1.0,
        )
        weights = np.full((4, 12), 1.0)
        with pytest.raises(TrainingDiverged) as exc_info:
            simulate(system, program, weights=weights)
        assert exc_info.value.trace is not None
        assert exc_info.value.tick >= 0


class TestWeightsIo:
    def test_roundtrip(self, tmp_path):
        w = np.arange(12.0).reshape(4, 3)
        path = tmp_path / "weights.json"
        save_weights(path, w, alpha=50.0, schedule=MixSchedule(1.0, 2.0, 3.0))
        again, meta = load_weights(path)
        assert np.array_equal(again, w)
        assert meta["alpha"] == 50.0
        assert meta["n_populations"] == 3
        assert meta["schedule"]["mix_s"] == 2.0
        assert meta["schema_version"] == 1
