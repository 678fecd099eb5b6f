"""
Experiment Manager
Dataset generation, training and evaluation runs for the N-body and Broken
Snake tasks, wired to the settings, data manager and model layers.
"""

import logging
import os
from typing import Any, Dict, List, Optional, Union

import numpy as np

from config.settings import SCHEMA_VERSION, TaskName, VersorSettings
from core.data_manager import data_manager
from core.errors import DatasetError
from models.versor_model import VersorModel, rollout, train
from tasks.metrics import mcc, rollout_mse
from tasks.nbody import Trajectory, energy_drift, frames_from_features, generate_dataset, trajectory_features
from tasks.snake import SnakeLabel, SnakeSample, generate_snake_dataset, snake_connectivity_algebraic

logger = logging.getLogger(__name__)

DEFAULT_DATA_DIR = "data"
EVAL_FRACTION = 0.2

Dataset = Union[List[Trajectory], List[SnakeSample]]


class ExperimentManager:
    """Runs gen / train / eval against one resolved configuration."""

    def __init__(self, settings: VersorSettings):
        self.settings = settings

    @property
    def task(self) -> TaskName:
        return self.settings.run.task

    @property
    def seed(self) -> int:
        return self.settings.run.seed

    def dataset_path(self) -> str:
        return self.settings.run.dataset or os.path.join(
            DEFAULT_DATA_DIR, f"{self.task.value}_seed{self.seed}.jsonl")

    def _stamp(self) -> Dict[str, Any]:
        return {"seed": self.seed, "config_hash": self.settings.config_hash(), "schema_version": SCHEMA_VERSION}

    # ------------------------------------------------------------------
    # Datasets
    # ------------------------------------------------------------------

    def generate(self) -> Dataset:
        if self.task is TaskName.NBODY:
            return generate_dataset(self.settings.nbody, self.seed)
        snake = self.settings.snake
        return generate_snake_dataset(snake.grids, snake.samples_per_grid, self.seed,
                                      snake.broken_fraction, snake.max_retries)

    def cmd_gen(self) -> str:
        """Generate the configured dataset and write it as JSON Lines."""
        path = self.dataset_path()
        logger.info(f"📦 Generating {self.task.value} dataset (seed {self.seed})")
        stamp = self._stamp()
        records = [{**item.to_record(), **stamp} for item in self.generate()]
        data_manager.save_dataset(path, records)
        return path

    def load_dataset(self, path: Optional[str] = None) -> Dataset:
        records = data_manager.load_dataset(path or self.dataset_path())
        try:
            if self.task is TaskName.NBODY:
                return [Trajectory.from_record(r) for r in records]
            return [SnakeSample.from_record(r) for r in records]
        except (KeyError, ValueError) as e:
            raise DatasetError(f"Dataset does not hold {self.task.value} records: {e}") from e

    def _dataset_or_generate(self) -> Dataset:
        path = self.dataset_path()
        if not os.path.exists(path):
            if self.settings.run.dataset:
                raise DatasetError(f"Dataset not found: {path}")
            self.cmd_gen()
        return self.load_dataset(path)

    # ------------------------------------------------------------------
    # Runs
    # ------------------------------------------------------------------

    def cmd_train(self) -> Dict[str, Any]:
        """Generate if absent, train, checkpoint and evaluate."""
        dataset = self._dataset_or_generate()
        if self.task is TaskName.SNAKE:
            metrics = self.evaluate_snake(dataset)
        else:
            train_set, eval_set = split_dataset(dataset)
            model = VersorModel(len(trajectory_features(train_set[0])[0]), config=self.settings.model,
                                seed=self.seed)
            result = train(model, train_set, self.settings.train, self.seed)
            if self.settings.run.checkpoint:
                model.save(self.settings.run.checkpoint, self.seed, self.settings.config_hash())
            metrics = self.evaluate_nbody(model, eval_set)
            metrics.update({
                "initial_loss": result.initial_loss,
                "final_loss": result.final_loss,
                "epochs": len(result.history),
                "parameter_count": model.parameter_count(),
            })
        return self._finish(metrics)

    def cmd_eval(self) -> Dict[str, Any]:
        """Evaluate an existing checkpoint (or the algebraic detector for snake)."""
        dataset = self.load_dataset()
        if self.task is TaskName.SNAKE:
            return self._finish(self.evaluate_snake(dataset))
        if not self.settings.run.checkpoint:
            raise DatasetError("Evaluating an N-body model needs a checkpoint path")
        model = VersorModel.load(self.settings.run.checkpoint)
        _, eval_set = split_dataset(dataset)
        metrics = self.evaluate_nbody(model, eval_set)
        metrics["parameter_count"] = model.parameter_count()
        return self._finish(metrics)

    def _finish(self, metrics: Dict[str, Any]) -> Dict[str, Any]:
        report = {"task": self.task.value, **self._stamp(),
                  "dataset_digest": data_manager.file_digest(self.dataset_path()), **metrics}
        if self.settings.run.out:
            data_manager.save_report(self.settings.run.out, report)
        return report

    # ------------------------------------------------------------------
    # Metrics
    # ------------------------------------------------------------------

    def evaluate_snake(self, samples: List[SnakeSample]) -> Dict[str, Any]:
        predictions = [snake_connectivity_algebraic(s) is SnakeLabel.BROKEN for s in samples]
        labels = [s.label is SnakeLabel.BROKEN for s in samples]
        score = mcc(predictions, labels)
        logger.info(f"🐍 Algebraic detector MCC {score:.4f} over {len(samples)} snakes")
        return {"mcc": score, "samples": len(samples)}

    def evaluate_nbody(self, model: VersorModel, trajectories: List[Trajectory]) -> Dict[str, Any]:
        window = self.settings.model.window
        horizon = self.settings.train.horizon
        sequences = np.stack([trajectory_features(t) for t in trajectories])
        standardized = model.standardize(sequences)
        with np.errstate(over="ignore", invalid="ignore"):
            tf_mse = model.teacher_forcing_mse(standardized[:, :-1], standardized[:, 1:])

        rollout_errors, drifts, truncated = [], [], 0
        for traj, features in zip(trajectories, sequences):
            truth = features[window:window + horizon]
            result = rollout(model, features[:window], min(horizon, len(truth)))
            truncated += int(result.truncated)
            rollout_errors.append(rollout_mse(result.frames, truth))
            drifts.append(rollout_energy_drift(traj, features[window - 1], result.frames))

        metrics = {
            "teacher_forcing_mse": tf_mse,
            "rollout_mse": float(np.mean(rollout_errors)),
            "energy_drift_pct": float(np.mean(drifts)),
            "truncated_rollouts": truncated,
            "eval_trajectories": len(trajectories),
        }
        logger.info(f"📊 teacher-forcing MSE {tf_mse:.6g}, rollout MSE {metrics['rollout_mse']:.6g}, "
                    f"energy drift {metrics['energy_drift_pct']:.3g}%")
        return metrics


def split_dataset(trajectories: List[Trajectory]):
    """Hold out the trailing fifth for evaluation; a single trajectory serves both roles."""
    if not trajectories:
        raise DatasetError("Dataset is empty")
    if len(trajectories) == 1:
        return trajectories, trajectories
    n_eval = max(1, int(round(len(trajectories) * EVAL_FRACTION)))
    return trajectories[:-n_eval], trajectories[-n_eval:]


def rollout_energy_drift(traj: Trajectory, last_observed: np.ndarray, predicted: np.ndarray) -> float:
    """Energy drift of the predicted frames measured from the last observed frame."""
    if len(predicted) == 0:
        return float("nan")
    n_bodies = len(traj.masses)
    frames = frames_from_features(np.vstack([last_observed[None, :], predicted]), n_bodies)
    return energy_drift(Trajectory(traj.masses, frames, traj.G, traj.epsilon, traj.dt))
