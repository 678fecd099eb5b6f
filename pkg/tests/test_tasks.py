"""
Tests for the N-body generator, the Broken Snake task and evaluation metrics.
"""

import numpy as np
import pytest

from config.settings import NBodyConfig
from core.errors import UndefinedDriftError
from tasks.metrics import mcc, rollout_mse, teacher_forcing_mse
from tasks.nbody import (
    Trajectory, accelerations, circular_two_body, energy_drift, frames_from_features,
    generate_dataset, integrate_frames, potential_energy, rk4_integrate, total_energy,
    total_momentum, trajectory_features,
)
from tasks.snake import (
    SnakeLabel, SnakeSample, gen_snake, generate_snake_dataset, max_norm_steps,
    snake_connectivity_algebraic,
)


@pytest.fixture
def small_config():
    return NBodyConfig(n_bodies=3, dims=2, steps=30, n_trajectories=3)


class TestNBody:
    """Test the softened-gravity simulator."""

    def test_energy_drift_within_one_percent(self, small_config):
        """Accepted trajectories conserve energy to 1%."""
        for traj in generate_dataset(small_config, seed=0):
            assert traj.frames.shape == (30, 3, 4)
            assert energy_drift(traj) <= 1.0

    def test_seed_determinism(self, small_config):
        """The same seed reproduces the same frames."""
        a = generate_dataset(small_config, seed=4)
        b = generate_dataset(small_config, seed=4)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.frames, y.frames)
        assert a[0].meta["seed"] == 4 and a[2].meta["index"] == 2

    def test_zero_momentum(self, small_config):
        """Initial conditions are centred and momentum stays near zero."""
        traj = rk4_integrate(small_config, seed=1)
        np.testing.assert_allclose(total_momentum(traj.frames[0], traj.masses), 0.0, atol=1e-12)
        np.testing.assert_allclose(total_momentum(traj.frames[-1], traj.masses), 0.0, atol=1e-9)

    def test_three_dimensional(self):
        """dims=3 gives six features per body."""
        traj = rk4_integrate(NBodyConfig(n_bodies=2, dims=3, steps=5), seed=0)
        assert traj.dims == 3 and traj.frames.shape == (5, 2, 6)

    def test_circular_orbit(self):
        """A circular binary returns to its start after one period with constant separation."""
        frame0, masses, period = circular_two_body()
        steps = 201
        frames = integrate_frames(frame0, masses, 1.0, 1e-3, period / (steps - 1), steps, substeps=10)
        separation = np.linalg.norm(frames[:, 0, :2] - frames[:, 1, :2], axis=-1)
        np.testing.assert_allclose(separation, 1.0, atol=1e-6)
        np.testing.assert_allclose(frames[-1], frame0, atol=1e-5)

    def test_newton_third_law(self, rng):
        """Mass-weighted accelerations sum to zero."""
        masses = np.array([1.0, 2.0, 3.0])
        acc = accelerations(rng.standard_normal((3, 2)), masses, 1.0, 1e-3)
        np.testing.assert_allclose(np.sum(masses[:, None] * acc, axis=0), 0.0, atol=1e-10)

    def test_softened_potential(self):
        """Two unit masses one apart have V = -1 / sqrt(1 + eps²)."""
        q = np.array([[0.0, 0.0], [1.0, 0.0]])
        assert potential_energy(q, [1.0, 1.0], 1.0, 0.1) == pytest.approx(-1.0 / np.sqrt(1.01))
        assert potential_energy(q[:1], [1.0], 1.0, 0.1) == 0.0

    def test_undefined_drift(self):
        """A body at rest has zero energy and no relative drift."""
        traj = Trajectory(masses=[1.0], frames=np.zeros((3, 1, 4)))
        assert total_energy(traj.frames[0], traj.masses, 1.0, 1e-3) == 0.0
        with pytest.raises(UndefinedDriftError):
            energy_drift(traj)

    def test_trajectory_validation(self):
        """Frames must match the masses, which must be positive."""
        with pytest.raises(ValueError):
            Trajectory(masses=[1.0, 1.0], frames=np.zeros((3, 1, 4)))
        with pytest.raises(ValueError):
            Trajectory(masses=[-1.0], frames=np.zeros((3, 1, 4)))

    def test_record_round_trip(self, small_config):
        """Records keep the physical constants."""
        traj = rk4_integrate(small_config, seed=2)
        restored = Trajectory.from_record(traj.to_record())
        np.testing.assert_array_equal(restored.frames, traj.frames)
        assert restored.dt == traj.dt and restored.meta["substeps"] == small_config.substeps

    def test_feature_layout(self, small_config):
        """Features flatten bodies; frames_from_features undoes it."""
        traj = rk4_integrate(small_config, seed=0)
        features = trajectory_features(traj)
        assert features.shape == (30, 12)
        np.testing.assert_array_equal(frames_from_features(features, 3), traj.frames)


class TestSnake:
    """Test snake generation and the algebraic connectivity detector."""

    def test_grid_too_small(self):
        """Grids below 8 are rejected."""
        with pytest.raises(ValueError):
            gen_snake(7, broken=False)

    def test_connected_snake(self):
        """Connected snakes only take king-move steps."""
        sample = gen_snake(16, broken=False, seed=3)
        assert sample.label is SnakeLabel.CONNECTED
        assert len(sample.path) > 16
        assert np.all(max_norm_steps(sample.path) == 1)
        assert np.all((sample.path >= 0) & (sample.path < 16))
        assert len({tuple(p) for p in sample.path}) == len(sample.path)

    def test_broken_snake(self):
        """A broken snake has exactly one gap at gap_index."""
        sample = gen_snake(16, broken=True, seed=3)
        steps = max_norm_steps(sample.path)
        assert sample.label is SnakeLabel.BROKEN
        assert np.flatnonzero(steps > 1).tolist() == [sample.gap_index - 1]

    def test_detector_on_examples(self):
        """Diagonal neighbours are connected; a two-pixel jump is broken."""
        connected = SnakeSample(8, [[0, 0], [1, 1], [1, 2]], SnakeLabel.CONNECTED)
        broken = SnakeSample(8, [[0, 0], [1, 1], [1, 3]], SnakeLabel.BROKEN, gap_index=2)
        assert snake_connectivity_algebraic(connected) is SnakeLabel.CONNECTED
        assert snake_connectivity_algebraic(broken) is SnakeLabel.BROKEN

    def test_single_pixel(self):
        """A single pixel is trivially connected."""
        assert snake_connectivity_algebraic(SnakeSample(8, [[2, 2]], "connected")) is SnakeLabel.CONNECTED

    def test_label_mismatch(self):
        """Labels and gap indices are validated against the path."""
        with pytest.raises(ValueError):
            SnakeSample(8, [[0, 0], [0, 3]], SnakeLabel.CONNECTED)
        with pytest.raises(ValueError):
            SnakeSample(8, [[0, 0], [0, 3]], SnakeLabel.BROKEN, gap_index=0)

    def test_record_round_trip(self):
        """Snake records restore the label and gap."""
        sample = gen_snake(8, broken=True, seed=5)
        restored = SnakeSample.from_record(sample.to_record())
        assert restored.label is SnakeLabel.BROKEN and restored.gap_index == sample.gap_index

    def test_detector_small_dataset(self):
        """The detector is exact on a quick mixed batch."""
        samples = generate_snake_dataset([16], 50, seed=0)
        predictions = [snake_connectivity_algebraic(s) is SnakeLabel.BROKEN for s in samples]
        labels = [s.label is SnakeLabel.BROKEN for s in samples]
        assert predictions == labels

    @pytest.mark.slow
    @pytest.mark.parametrize("grid", [16, 32])
    def test_detector_mcc(self, grid):
        """MCC is 1.0 over 1000 snakes per grid size."""
        samples = generate_snake_dataset([grid], 1000, seed=0)
        predictions = [snake_connectivity_algebraic(s) is SnakeLabel.BROKEN for s in samples]
        labels = [s.label is SnakeLabel.BROKEN for s in samples]
        assert 300 < sum(labels) < 700
        assert mcc(predictions, labels) == 1.0


class TestMetrics:
    """Test MCC and the MSE helpers."""

    def test_mcc_perfect_and_inverted(self):
        """Perfect agreement scores 1, perfect disagreement -1."""
        labels = [True, False, True, False]
        assert mcc(labels, labels) == 1.0
        assert mcc([not v for v in labels], labels) == -1.0

    def test_mcc_degenerate(self):
        """A constant predictor scores 0."""
        assert mcc([True, True, True], [True, False, True]) == 0.0

    def test_mcc_length_mismatch(self):
        """Predictions and labels must align."""
        with pytest.raises(ValueError):
            mcc([True], [True, False])

    def test_mcc_rejects_non_binary(self):
        """Scores and multi-class labels are refused; 0/1 integers are accepted."""
        with pytest.raises(ValueError):
            mcc([0.2, 0.9, 0.4], [0, 1, 0])
        with pytest.raises(ValueError):
            mcc([0, 1, 2], [0, 1, 1])
        assert mcc([0, 1, 1, 0], [False, True, True, False]) == 1.0

    def test_rollout_mse_overlap(self):
        """Truncated rollouts are scored on the frames they produced."""
        truth = np.zeros((5, 2))
        assert rollout_mse(np.ones((3, 2)), truth) == 1.0
        assert np.isnan(rollout_mse(np.zeros((0, 2)), truth))

    def test_teacher_forcing_mse(self):
        """Plain mean squared error."""
        assert teacher_forcing_mse(np.array([1.0, 3.0]), np.array([0.0, 0.0])) == 5.0
