"""
Geometric Product Attention
Scores mix the scalar (proximity) and bivector (torque) parts of Q_i ~K_j.
"""

import logging
from dataclasses import dataclass
from typing import Dict, NamedTuple

import numpy as np

from core.algebra import CL41, DEFAULT_DTYPE, op_counter, product_kernel, reverse_array, scalar_weights
from core.autodiff import Tape, Variable
from core.conformal import BIVECTOR_MASKS
from core.errors import NonFiniteError
from models.initialization import SeedLike, _rng, versor_init

logger = logging.getLogger(__name__)

GPA_PARAM_NAMES = ("W_Q", "W_K", "W_V", "gamma")


@dataclass
class GpaParams:
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    gamma: float = 0.5

    @classmethod
    def init(cls, d_in: int, rng_seed: SeedLike = None, gamma: float = 0.5) -> "GpaParams":
        rng = _rng(rng_seed)
        return cls(versor_init(d_in, rng), versor_init(d_in, rng), versor_init(d_in, rng), gamma)

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {"W_Q": self.W_Q, "W_K": self.W_K, "W_V": self.W_V,
                "gamma": np.asarray(self.gamma, dtype=DEFAULT_DTYPE)}

    @classmethod
    def from_dict(cls, arrays: Dict[str, np.ndarray]) -> "GpaParams":
        return cls(arrays["W_Q"], arrays["W_K"], arrays["W_V"], float(arrays["gamma"]))


class GpaResult(NamedTuple):
    outputs: np.ndarray
    attention: np.ndarray
    scalar_map: np.ndarray
    bivector_map: np.ndarray


def causal_mask(length: int) -> np.ndarray:
    """True where key j lies in the future of query i."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


def pairwise_bivector(Q: np.ndarray, K: np.ndarray) -> np.ndarray:
    """(L, L, 10) grade-2 coefficients of Q_i ~K_j, computing only the bivector lanes."""
    kernel = product_kernel(CL41)
    lanes = list(BIVECTOR_MASKS)
    Kw = reverse_array(K, CL41)[:, kernel.perm[:, lanes]] * kernel.forward_signs[:, lanes]
    return np.einsum("im,jmk->ijk", Q, Kw)


def gpa_forward(features: np.ndarray, params: GpaParams, causal: bool = False) -> GpaResult:
    """Attention rows softmax((<Q_i ~K_j>_0 + gamma |<Q_i ~K_j>_2|) / sqrt(d_in))."""
    X = np.asarray(features, dtype=DEFAULT_DTYPE)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"Expected (L, d_in) features with L >= 1, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("GPA features must be finite")
    L, d_in = X.shape
    Q, K, V = X @ params.W_Q, X @ params.W_K, X @ params.W_V

    scalar_map = (Q * scalar_weights(CL41)) @ K.T
    op_counter.record("scalar_fast", CL41.dim * L * L)
    bivector_map = np.sqrt(np.sum(pairwise_bivector(Q, K) ** 2, axis=-1))

    scores = (scalar_map + params.gamma * bivector_map) / np.sqrt(d_in)
    if causal:
        scores = np.where(causal_mask(L), -np.inf, scores)
    scores = scores - np.max(scores, axis=-1, keepdims=True)
    weights = np.exp(scores)
    attention = weights / np.sum(weights, axis=-1, keepdims=True)
    return GpaResult(attention @ V, attention, scalar_map, bivector_map)


def gpa_forward_tape(tape: Tape, X: Variable, params: Dict[str, Variable], causal: bool = False) -> Variable:
    """Differentiable GPA outputs (L, 32) for one sequence."""
    L, d_in = X.shape
    Q = tape.matmul(X, params["W_Q"])
    K = tape.matmul(X, params["W_K"])
    V = tape.matmul(X, params["W_V"])

    Qi = tape.reshape(Q, (L, 1, CL41.dim))
    Kj = tape.reshape(K, (1, L, CL41.dim))
    scalar_map = tape.scalar_product(Qi, Kj)
    pair = tape.gp(Qi, tape.reverse(Kj))
    bivector_map = tape.euclidean_norm(tape.take(pair, list(BIVECTOR_MASKS), axis=-1))

    scores = tape.scale(tape.add(scalar_map, tape.mul(bivector_map, params["gamma"])), 1.0 / np.sqrt(d_in))
    if causal:
        scores = tape.mask_fill(scores, causal_mask(L), -np.inf)
    attention = tape.softmax(scores, axis=-1)
    return tape.matmul(attention, V)
