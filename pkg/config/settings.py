"""
Versor Configuration System
Settings for the algebra engines, task generators, models, training and benchmarks.
"""

import os
import json
import hashlib
import logging
from typing import Dict, List, Any, Optional, Tuple
from dataclasses import dataclass, asdict, fields
from enum import Enum

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"

THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def pin_threads(threads: int = 1) -> Dict[str, str]:
    """Pin BLAS thread pools unless the caller already set them; must run before numpy loads BLAS."""
    for name in THREAD_ENV_VARS:
        os.environ.setdefault(name, str(threads))
    return {name: os.environ[name] for name in THREAD_ENV_VARS}


class EngineKind(Enum):
    NAIVE = "naive"
    BITMASK = "bitmask"
    MATRIX_ISO = "matrix-iso"


class TaskName(Enum):
    NBODY = "nbody"
    SNAKE = "snake"


class Architecture(Enum):
    RRA = "rra"
    HYBRID = "hybrid"


@dataclass
class NBodyConfig:
    """Softened-gravity N-body generator configuration."""
    n_bodies: int = 5
    dims: int = 2
    G: float = 1.0
    epsilon: float = 1e-3
    dt: float = 0.01
    steps: int = 100
    n_trajectories: int = 50
    heavy_mass: float = 10.0
    light_mass: float = 1.0
    substeps: int = 10
    max_drift_pct: float = 1.0
    max_attempts: int = 20


@dataclass
class SnakeConfig:
    """Broken Snake generator configuration."""
    grids: List[int] = None
    samples_per_grid: int = 1000
    broken_fraction: float = 0.5
    max_retries: int = 200

    def __post_init__(self):
        if self.grids is None:
            self.grids = [16, 32]


@dataclass
class ModelConfig:
    """Versor network configuration."""
    architecture: Architecture = Architecture.RRA
    manifold_norm: bool = True
    causal: bool = True
    gamma_init: float = 0.5
    window: int = 10
    readout_hidden: int = 112  # SiLU layer width before the readout; 0 reads out linearly


@dataclass
class TrainConfig:
    """Optimizer and schedule configuration."""
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 3e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    min_lr_ratio: float = 0.1
    log_every: int = 20
    horizon: int = 50
    divergence_loss: float = 1e8  # standardized MSE above which training stops


@dataclass
class BenchConfig:
    """Micro-benchmark configuration."""
    reps: int = 30
    warmup: int = 5
    batch: int = 1
    lengths: List[int] = None

    def __post_init__(self):
        if self.lengths is None:
            self.lengths = [128, 256, 512, 1024, 2048, 4096, 8192]


@dataclass
class RunConfig:
    """Parameters shared by every CLI subcommand."""
    seed: int = 0
    engine: EngineKind = EngineKind.BITMASK
    task: TaskName = TaskName.NBODY
    out: Optional[str] = None
    dataset: Optional[str] = None
    checkpoint: Optional[str] = None


_SECTIONS = {
    "nbody": NBodyConfig,
    "snake": SnakeConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "bench": BenchConfig,
    "run": RunConfig,
}

_ENUM_FIELDS = {
    ("model", "architecture"): Architecture,
    ("run", "engine"): EngineKind,
    ("run", "task"): TaskName,
}


def _coerce(section: str, name: str, current: Any, raw: Any) -> Any:
    """Convert a raw (usually string) value to the type of the field it replaces."""
    enum_type = _ENUM_FIELDS.get((section, name))
    if enum_type is not None:
        return raw if isinstance(raw, enum_type) else enum_type(str(raw))
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"Invalid boolean for {section}.{name}: {raw!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, list):
        return [int(v) for v in text.replace(",", " ").split()]
    if text.lower() in ("", "none", "null"):
        return None
    return text


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


class VersorSettings:
    """Main settings manager for the Versor toolkit."""

    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file
        self.reset_to_defaults()
        if config_file:
            self.load_config(config_file)

    def reset_to_defaults(self):
        """Reset all sections to their defaults."""
        self.nbody = NBodyConfig()
        self.snake = SnakeConfig()
        self.model = ModelConfig()
        self.train = TrainConfig()
        self.bench = BenchConfig()
        self.run = RunConfig()

    def _split(self, key: str) -> Tuple[Any, str, str]:
        parts = key.split(".")
        if len(parts) != 2 or parts[0] not in _SECTIONS:
            raise KeyError(f"Unknown setting '{key}'")
        section, name = parts
        target = getattr(self, section)
        if name not in {f.name for f in fields(target)}:
            raise KeyError(f"Unknown setting '{key}'")
        return target, section, name

    def get_setting(self, key: str, default: Any = None) -> Any:
        """Get a setting by dotted key, e.g. ``nbody.dt``."""
        try:
            target, _, name = self._split(key)
        except KeyError:
            return default
        return getattr(target, name)

    def update_setting(self, key: str, value: Any):
        """Update a setting by dotted key, coercing to the field's type."""
        target, section, name = self._split(key)
        setattr(target, name, _coerce(section, name, getattr(target, name), value))

    def apply_overrides(self, overrides: Dict[str, Any]):
        """Apply flag-level overrides; ``None`` values are ignored."""
        for key, value in overrides.items():
            if value is not None:
                self.update_setting(key, value)

    def load_config(self, path: str):
        """Load a key=value file (``section.key=value`` lines, ``#`` comments)."""
        if not os.path.exists(path):
            raise FileNotFoundError(f"Config file not found: {path}")

        with open(path, "r") as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = line.split("=", 1)
                self.update_setting(key.strip(), value.strip())
        self.config_file = path
        logger.info(f"Loaded configuration from {path}")

    def to_dict(self) -> Dict[str, Any]:
        return {name: _plain(asdict(getattr(self, name))) for name in _SECTIONS}

    def save_config(self, path: str):
        """Save the resolved configuration as JSON."""
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    def config_hash(self) -> str:
        """Stable short hash of the full resolved configuration."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def validate_config(self) -> List[str]:
        """Validate configuration and return list of issues."""
        issues = []

        if self.nbody.n_bodies < 1:
            issues.append("nbody.n_bodies must be at least 1")
        if self.nbody.dims not in (2, 3):
            issues.append("nbody.dims must be 2 or 3")
        if self.nbody.epsilon <= 0:
            issues.append("nbody.epsilon must be positive")
        if self.nbody.dt <= 0:
            issues.append("nbody.dt must be positive")
        if self.nbody.steps < 2:
            issues.append("nbody.steps must be at least 2")
        if self.nbody.heavy_mass <= 0 or self.nbody.light_mass <= 0:
            issues.append("nbody masses must be positive")
        if self.nbody.substeps < 1:
            issues.append("nbody.substeps must be at least 1")

        if any(g < 8 for g in self.snake.grids):
            issues.append("snake.grids entries must be at least 8")
        if not 0.0 <= self.snake.broken_fraction <= 1.0:
            issues.append("snake.broken_fraction must lie in [0, 1]")

        if self.model.window < 1:
            issues.append("model.window must be at least 1")
        if self.model.window >= self.nbody.steps:
            issues.append("model.window must be shorter than nbody.steps")
        if self.model.readout_hidden < 0:
            issues.append("model.readout_hidden must be non-negative")

        if self.train.epochs < 0:
            issues.append("train.epochs must be non-negative")
        if self.train.batch_size < 1:
            issues.append("train.batch_size must be at least 1")
        if self.train.learning_rate < 0:
            issues.append("train.learning_rate must be non-negative")
        if self.train.horizon < 1:
            issues.append("train.horizon must be at least 1")
        if not self.train.divergence_loss > 0:
            issues.append("train.divergence_loss must be positive")

        if self.bench.reps < 30:
            issues.append("bench.reps must be at least 30")
        if len(self.bench.lengths) < 2:
            issues.append("bench.lengths needs at least two values")

        return issues


# Global settings instance
settings = VersorSettings()
