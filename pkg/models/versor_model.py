"""
Versor Model
Lifting, optional Geometric Product Attention, the Rotor Accumulator and a readout
(linear, or through one SiLU layer), plus the training loop and autoregressive rollout.

The model predicts the next standardized frame as the current frame plus a
readout of Psi_t u_t ~Psi_t, where u_t is the lifted input.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Union

import numpy as np

from config.settings import Architecture, ModelConfig, TrainConfig
from core.autodiff import Tape, Variable, backward
from core.data_manager import data_manager
from core.errors import TrainingDivergedError, VersorError
from models.accumulator import (
    RraParams, VersorState, rra_forward_tape, rra_param_names, rra_readout, rra_readout_tape, rra_states,
    rra_step,
)
from models.attention import GPA_PARAM_NAMES, GpaParams, gpa_forward, gpa_forward_tape
from models.optimizer import AdamW
from tasks.nbody import Trajectory, trajectory_features

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8


class Forecaster(Protocol):
    def start(self, window: np.ndarray) -> np.ndarray: ...

    def advance(self, frame: np.ndarray) -> np.ndarray: ...


@dataclass
class TrainResult:
    initial_loss: float
    history: List[float]
    final_loss: float
    epoch_seconds: List[float] = field(default_factory=list)


@dataclass
class RolloutResult:
    frames: np.ndarray
    truncated: bool = False
    error: Optional[str] = None


class VersorModel:
    """Versor network with feature standardization buffers."""

    def __init__(self, d_in: int, d_out: Optional[int] = None, config: Optional[ModelConfig] = None,
                 seed: int = 0):
        self.config = config or ModelConfig()
        d_out = d_out or d_in
        rng = np.random.default_rng(seed)
        rra = RraParams.init(d_in, d_out, rng, hidden=self.config.readout_hidden)
        self.params: Dict[str, np.ndarray] = rra.as_dict()
        if self.config.architecture is Architecture.HYBRID:
            self.params.update(GpaParams.init(d_in, rng, gamma=self.config.gamma_init).as_dict())
        self.feature_mean = np.zeros(d_in)
        self.feature_std = np.ones(d_in)
        self._state: Optional[VersorState] = None
        self._history: List[np.ndarray] = []

    @property
    def d_in(self) -> int:
        return self.params["lift"].shape[0]

    @property
    def d_out(self) -> int:
        return self.params["readout"].shape[1]

    @property
    def hybrid(self) -> bool:
        return self.config.architecture is Architecture.HYBRID

    def parameter_count(self) -> int:
        return int(sum(np.size(p) for p in self.params.values()))

    def rra_params(self) -> RraParams:
        return RraParams.from_dict(self.params)

    def gpa_params(self) -> GpaParams:
        return GpaParams.from_dict(self.params)

    # ------------------------------------------------------------------
    # Standardization
    # ------------------------------------------------------------------

    def fit_normalizer(self, sequences: np.ndarray):
        flat = np.asarray(sequences).reshape(-1, self.d_in)
        self.feature_mean = flat.mean(axis=0)
        self.feature_std = np.maximum(flat.std(axis=0), STD_FLOOR)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.feature_mean) / self.feature_std

    def destandardize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) * self.feature_std + self.feature_mean

    # ------------------------------------------------------------------
    # Forward passes
    # ------------------------------------------------------------------

    def lifted_inputs(self, X: np.ndarray) -> np.ndarray:
        """u_t for a standardized (L, d_in) sequence."""
        U = X @ self.params["lift"]
        if self.hybrid:
            U = U + gpa_forward(X, self.gpa_params(), causal=self.config.causal).outputs
        return U

    def predict_sequence(self, X: np.ndarray) -> np.ndarray:
        """Teacher-forced next-frame predictions (standardized) for a standardized sequence."""
        U = self.lifted_inputs(X)
        states = rra_states(U, self.params["W_B"], self.config.manifold_norm)
        return X + rra_readout(states, U, self.rra_params(), self.config.manifold_norm)

    def teacher_forcing_mse(self, inputs: np.ndarray, targets: np.ndarray) -> float:
        errors = [np.mean((self.predict_sequence(x) - y) ** 2) for x, y in zip(inputs, targets)]
        return float(np.mean(errors))

    def loss_on_tape(self, tape: Tape, params: Dict[str, Union[Variable, np.ndarray]],
                     inputs: np.ndarray, targets: np.ndarray) -> Variable:
        """MSE of teacher-forced predictions for a (batch, L, d_in) block."""
        X = tape.constant(inputs)
        U = tape.matmul(X, params["lift"])
        if self.hybrid:
            attended = [gpa_forward_tape(tape, tape.constant(x), params, causal=self.config.causal)
                        for x in inputs]
            U = tape.add(U, tape.stack(attended, axis=0))
        states = rra_forward_tape(tape, U, params, self.config.manifold_norm)
        readout = rra_readout_tape(tape, states, U, params, self.config.manifold_norm)
        return tape.mse(tape.add(X, readout), targets)

    # ------------------------------------------------------------------
    # Incremental forecasting
    # ------------------------------------------------------------------

    def _consume(self, frame: np.ndarray) -> np.ndarray:
        x = self.standardize(np.asarray(frame, dtype=np.float64).reshape(-1))
        self._history.append(x)
        u = x @ self.params["lift"]
        if self.hybrid:
            u = u + gpa_forward(np.stack(self._history), self.gpa_params(), causal=True).outputs[-1]
        self._state = rra_step(self._state, u, self.rra_params(), self.config.manifold_norm)
        y = rra_readout(self._state.psi.mv.coeffs[None], u[None], self.rra_params(), self.config.manifold_norm)
        return self.destandardize(x + y[0])

    def start(self, window: np.ndarray) -> np.ndarray:
        """Reset, consume a raw window of frames and return the predicted next raw frame."""
        self._state = VersorState.initial()
        self._history = []
        prediction = None
        for frame in np.asarray(window):
            prediction = self._consume(frame)
        if prediction is None:
            raise ValueError("Window must contain at least one frame")
        return prediction

    def advance(self, frame: np.ndarray) -> np.ndarray:
        if self._state is None:
            raise RuntimeError("Call start() before advance()")
        return self._consume(frame)

    # ------------------------------------------------------------------
    # Persistence
    # ------------------------------------------------------------------

    def save(self, path: str, seed: int, config_hash: str):
        arrays = dict(self.params)
        arrays["feature_mean"] = self.feature_mean
        arrays["feature_std"] = self.feature_std
        data_manager.save_checkpoint(path, arrays, {
            "seed": seed,
            "config_hash": config_hash,
            "architecture": self.config.architecture.value,
            "manifold_norm": self.config.manifold_norm,
            "causal": self.config.causal,
            "readout_hidden": self.config.readout_hidden,
        })

    @classmethod
    def load(cls, path: str) -> "VersorModel":
        checkpoint = data_manager.load_checkpoint(path)
        arrays, manifest = checkpoint.arrays, checkpoint.manifest
        config = ModelConfig(architecture=Architecture(manifest["architecture"]),
                             manifold_norm=bool(manifest["manifold_norm"]),
                             causal=bool(manifest["causal"]),
                             readout_hidden=int(manifest.get("readout_hidden", 0)))
        model = cls(arrays["lift"].shape[0], arrays["readout"].shape[1], config)
        names = rra_param_names(model.config.readout_hidden > 0) + (GPA_PARAM_NAMES if model.hybrid else ())
        model.params = {name: np.array(arrays[name]) for name in names}
        model.feature_mean = arrays["feature_mean"]
        model.feature_std = arrays["feature_std"]
        return model


def _as_sequences(dataset: Union[Sequence[Trajectory], np.ndarray]) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        return dataset
    return np.stack([trajectory_features(t) for t in dataset])


def train(model: VersorModel, dataset: Union[Sequence[Trajectory], np.ndarray],
          config: Optional[TrainConfig] = None, seed: int = 0) -> TrainResult:
    """Mini-batch AdamW on teacher-forced next-frame MSE."""
    config = config or TrainConfig()
    sequences = _as_sequences(dataset)
    if len(sequences) == 0:
        raise ValueError("Training set is empty")
    model.fit_normalizer(sequences)
    standardized = model.standardize(sequences)
    inputs, targets = standardized[:, :-1], standardized[:, 1:]

    n = len(inputs)
    steps_per_epoch = math.ceil(n / config.batch_size)
    optimizer = AdamW(model.params, lr=config.learning_rate, weight_decay=config.weight_decay,
                      beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps,
                      total_steps=config.epochs * steps_per_epoch, min_lr_ratio=config.min_lr_ratio)
    rng = np.random.default_rng(seed)

    with np.errstate(over="ignore", invalid="ignore"):
        initial = model.teacher_forcing_mse(inputs, targets)
    logger.info(f"🚀 Training {model.config.architecture.value} model "
                f"({model.parameter_count()} parameters), initial MSE {initial:.6g}")

    history: List[float] = []
    epoch_seconds: List[float] = []
    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            tape = Tape()
            with np.errstate(over="ignore", invalid="ignore"):
                variables = {name: tape.parameter(name, p) for name, p in model.params.items()}
                loss = model.loss_on_tape(tape, variables, inputs[idx], targets[idx])
                value = float(loss.value)
                if not math.isfinite(value) or value > config.divergence_loss:
                    logger.error(f"❌ Training diverged at epoch {epoch}: loss {value:.3g}")
                    raise TrainingDivergedError(epoch, history, value)
                grads = backward(tape, loss)
            optimizer.step(grads)
            total += value * len(idx)
        history.append(total / n)
        epoch_seconds.append(time.perf_counter() - started)
        if config.log_every and (epoch + 1) % config.log_every == 0:
            logger.info(f"Epoch {epoch + 1}/{config.epochs}: loss {history[-1]:.6g}, lr {optimizer.lr:.3g}")

    final = model.teacher_forcing_mse(inputs, targets)
    logger.info(f"✅ Training finished, teacher-forcing MSE {final:.6g}")
    return TrainResult(initial_loss=initial, history=history, final_loss=final, epoch_seconds=epoch_seconds)


def rollout(model: Forecaster, initial_window: np.ndarray, horizon: int) -> RolloutResult:
    """Autoregressive prediction of ``horizon`` frames, feeding predictions back."""
    if horizon < 1:
        raise ValueError(f"Horizon must be at least 1, got {horizon}")
    frames: List[np.ndarray] = []
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            prediction = model.start(initial_window)
            for step in range(horizon):
                if not np.all(np.isfinite(prediction)):
                    return RolloutResult(np.array(frames), True, f"non-finite prediction at step {step}")
                frames.append(np.asarray(prediction))
                if step + 1 < horizon:
                    prediction = model.advance(prediction)
    except (VersorError, FloatingPointError) as e:
        logger.warning(f"Rollout truncated after {len(frames)} frames: {e}")
        return RolloutResult(np.array(frames), True, str(e))
    return RolloutResult(np.array(frames))
