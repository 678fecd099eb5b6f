"""
N-Body Task
Softened-gravity simulation with RK4 ground truth and energy metrics.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from config.settings import SCHEMA_VERSION, NBodyConfig
from core.errors import TrajectoryGenerationError, UndefinedDriftError

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence]


@dataclass
class Trajectory:
    """Masses plus frames of shape (T, N, 2*dims): positions then velocities."""
    masses: np.ndarray
    frames: np.ndarray
    G: float = 1.0
    epsilon: float = 1e-3
    dt: float = 0.01
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=np.float64)
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1] != self.masses.shape[0]:
            raise ValueError(f"Frames {self.frames.shape} do not match {self.masses.shape[0]} bodies")
        if np.any(self.masses <= 0):
            raise ValueError("Masses must be positive")

    @property
    def dims(self) -> int:
        return self.frames.shape[2] // 2

    @property
    def steps(self) -> int:
        return self.frames.shape[0]

    def energies(self) -> np.ndarray:
        return np.array([total_energy(f, self.masses, self.G, self.epsilon) for f in self.frames])

    def to_record(self) -> Dict[str, Any]:
        return {
            "masses": self.masses,
            "frames": self.frames,
            "config": {"G": self.G, "epsilon": self.epsilon, "dt": self.dt, **self.meta},
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "Trajectory":
        config = dict(record.get("config", {}))
        G = float(config.pop("G", 1.0))
        epsilon = float(config.pop("epsilon", 1e-3))
        dt = float(config.pop("dt", 0.01))
        return cls(masses=record["masses"], frames=record["frames"], G=G, epsilon=epsilon, dt=dt, meta=config)


def _split(frame: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    d = frame.shape[-1] // 2
    return frame[..., :d], frame[..., d:]


def potential_energy(q: np.ndarray, masses: np.ndarray, G: float, epsilon: float) -> float:
    """V = -sum_{i<j} G m_i m_j / sqrt(|q_i - q_j|² + eps²)."""
    q = np.asarray(q, dtype=np.float64)
    masses = np.asarray(masses, dtype=np.float64)
    if len(masses) < 2:
        return 0.0
    i, j = np.triu_indices(len(masses), k=1)
    r2 = np.sum((q[i] - q[j]) ** 2, axis=-1)
    return float(-np.sum(G * masses[i] * masses[j] / np.sqrt(r2 + epsilon ** 2)))


def kinetic_energy(v: np.ndarray, masses: np.ndarray) -> float:
    return float(0.5 * np.sum(np.asarray(masses) * np.sum(np.asarray(v) ** 2, axis=-1)))


def total_energy(frame: np.ndarray, masses: np.ndarray, G: float, epsilon: float) -> float:
    q, v = _split(np.asarray(frame, dtype=np.float64))
    return kinetic_energy(v, masses) + potential_energy(q, masses, G, epsilon)


def total_momentum(frame: np.ndarray, masses: np.ndarray) -> np.ndarray:
    _, v = _split(np.asarray(frame, dtype=np.float64))
    return np.sum(np.asarray(masses)[:, None] * v, axis=0)


def accelerations(q: np.ndarray, masses: np.ndarray, G: float, epsilon: float) -> np.ndarray:
    """Negative gradient of the softened potential divided by mass."""
    diff = q[None, :, :] - q[:, None, :]
    inv_r3 = (np.sum(diff ** 2, axis=-1) + epsilon ** 2) ** -1.5
    np.fill_diagonal(inv_r3, 0.0)
    return G * np.einsum("ij,j,ijk->ik", inv_r3, masses, diff)


def _derivative(state: np.ndarray, masses: np.ndarray, G: float, epsilon: float) -> np.ndarray:
    q, v = _split(state)
    return np.concatenate([v, accelerations(q, masses, G, epsilon)], axis=-1)


def rk4_step(state: np.ndarray, masses: np.ndarray, G: float, epsilon: float, h: float) -> np.ndarray:
    k1 = _derivative(state, masses, G, epsilon)
    k2 = _derivative(state + 0.5 * h * k1, masses, G, epsilon)
    k3 = _derivative(state + 0.5 * h * k2, masses, G, epsilon)
    k4 = _derivative(state + h * k3, masses, G, epsilon)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_frames(frame0: np.ndarray, masses: np.ndarray, G: float, epsilon: float,
                     dt: float, steps: int, substeps: int = 10) -> np.ndarray:
    """Record ``steps`` frames spaced ``dt`` apart, taking ``substeps`` RK4 steps between frames."""
    masses = np.asarray(masses, dtype=np.float64)
    state = np.array(frame0, dtype=np.float64)
    frames = np.empty((steps,) + state.shape)
    frames[0] = state
    h = dt / substeps
    for t in range(1, steps):
        for _ in range(substeps):
            state = rk4_step(state, masses, G, epsilon, h)
        frames[t] = state
        if not np.all(np.isfinite(state)):
            frames[t:] = np.nan
            break
    return frames


def circular_two_body(m1: float = 1.0, m2: float = 1.0, separation: float = 1.0,
                      G: float = 1.0, epsilon: float = 1e-3) -> Tuple[np.ndarray, np.ndarray, float]:
    """Initial frame, masses and period of a softened circular binary about the origin."""
    M = m1 + m2
    v_rel = np.sqrt(G * M * separation ** 2 / (separation ** 2 + epsilon ** 2) ** 1.5)
    frame = np.array([
        [-m2 / M * separation, 0.0, 0.0, -m2 / M * v_rel],
        [m1 / M * separation, 0.0, 0.0, m1 / M * v_rel],
    ])
    period = 2.0 * np.pi * separation / v_rel
    return frame, np.array([m1, m2]), float(period)


def sample_initial_conditions(rng: np.random.Generator, config: NBodyConfig) -> Tuple[np.ndarray, np.ndarray]:
    """One heavy body near the origin and light bodies on near-circular orbits; zero momentum."""
    n, d = config.n_bodies, config.dims
    masses = np.full(n, config.light_mass)
    masses[0] = config.heavy_mass
    q = np.zeros((n, d))
    v = np.zeros((n, d))
    for k in range(1, n):
        r = rng.uniform(1.0, 3.0)
        direction = rng.normal(size=d)
        if d == 3:
            direction[2] *= 0.1
        direction /= np.linalg.norm(direction)
        q[k] = r * direction
        tangent = np.zeros(d)
        tangent[0], tangent[1] = -direction[1], direction[0]
        tangent /= max(np.linalg.norm(tangent), 1e-12)
        speed = np.sqrt(config.G * config.heavy_mass / r) * rng.uniform(0.9, 1.1)
        v[k] = speed * tangent
    q -= np.sum(masses[:, None] * q, axis=0) / masses.sum()
    v -= np.sum(masses[:, None] * v, axis=0) / masses.sum()
    return np.concatenate([q, v], axis=-1), masses


def energy_drift(traj: Trajectory) -> float:
    """100 * max_t |H_t - H_0| / |H_0|."""
    if traj.steps < 2:
        raise ValueError("Energy drift needs at least two frames")
    H = traj.energies()
    if H[0] == 0.0:
        raise UndefinedDriftError("Initial energy is zero; relative drift is undefined")
    return float(100.0 * np.max(np.abs(H - H[0])) / abs(H[0]))


def _as_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))


def rk4_integrate(config: NBodyConfig, seed: SeedLike = 0) -> Trajectory:
    """Generate one accepted trajectory, resampling on blow-ups or excessive drift."""
    root = _as_seed_sequence(seed)
    for attempt, child in enumerate(root.spawn(config.max_attempts)):
        rng = np.random.default_rng(child)
        frame0, masses = sample_initial_conditions(rng, config)
        frames = integrate_frames(frame0, masses, config.G, config.epsilon,
                                  config.dt, config.steps, config.substeps)
        if not np.all(np.isfinite(frames)):
            logger.warning(f"Rejected trajectory (seed {root.entropy}, attempt {attempt}): non-finite state")
            continue
        traj = Trajectory(masses, frames, config.G, config.epsilon, config.dt,
                          meta={"attempt": attempt, "substeps": config.substeps})
        drift = energy_drift(traj)
        if drift > config.max_drift_pct:
            logger.warning(f"Rejected trajectory (seed {root.entropy}, attempt {attempt}): "
                           f"energy drift {drift:.3f}%")
            continue
        return traj
    raise TrajectoryGenerationError(
        f"No acceptable trajectory after {config.max_attempts} attempts (seed {root.entropy})"
    )


def generate_dataset(config: NBodyConfig, seed: int = 0) -> List[Trajectory]:
    trajectories = []
    for index, child in enumerate(np.random.SeedSequence(seed).spawn(config.n_trajectories)):
        traj = rk4_integrate(config, child)
        traj.meta.update({"seed": seed, "index": index, "schema_version": SCHEMA_VERSION})
        trajectories.append(traj)
    logger.info(f"Generated {len(trajectories)} N-body trajectories")
    return trajectories


def trajectory_features(traj: Trajectory) -> np.ndarray:
    """(T, N * 2 * dims) flattened frames."""
    return traj.frames.reshape(traj.steps, -1)


def frames_from_features(features: np.ndarray, n_bodies: int) -> np.ndarray:
    return np.asarray(features).reshape(features.shape[0], n_bodies, -1)
