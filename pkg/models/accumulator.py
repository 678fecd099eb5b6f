"""
Recursive Rotor Accumulator
Psi_{t+1} = Normalize(dR_t Psi_t) with dR_t the Cayley map of a learned bivector.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from core.algebra import CL41, DEFAULT_DTYPE, Multivector, product_kernel, scalar_product_array
from core.autodiff import Tape, Variable
from core.conformal import (
    Rotor, cayley_rotor_array, embed_bivector_array, hypersphere_array, normalize_array, sandwich_array,
)
from core.errors import NonFiniteError
from models.initialization import SeedLike, _rng, versor_init

logger = logging.getLogger(__name__)

N_BIVECTORS = 10
RRA_PARAM_NAMES = ("lift", "W_B", "readout")
HIDDEN_PARAM_NAMES = ("readout_hidden", "readout_bias")

# rotors per vectorized Cayley batch; bounds scratch memory independently of L
CHUNK = 256


def rra_param_names(hidden: bool) -> Tuple[str, ...]:
    return RRA_PARAM_NAMES + (HIDDEN_PARAM_NAMES if hidden else ())


def silu(x: np.ndarray) -> np.ndarray:
    # sigmoid written through tanh so huge inputs do not overflow exp
    return x * 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class RraParams:
    lift: np.ndarray     # (d_in, 32)
    W_B: np.ndarray      # (32, 10)
    readout: np.ndarray  # (32, d_out), or (hidden, d_out) behind the SiLU layer
    readout_hidden: Optional[np.ndarray] = None  # (32, hidden)
    readout_bias: Optional[np.ndarray] = None    # (hidden,)

    @classmethod
    def init(cls, d_in: int, d_out: int, rng_seed: SeedLike = None, hidden: int = 0) -> "RraParams":
        rng = _rng(rng_seed)
        lift = versor_init(d_in, rng)
        W_B = versor_init(CL41.dim, rng, fan_out=N_BIVECTORS)
        if hidden <= 0:
            return cls(lift, W_B, versor_init(CL41.dim, rng, fan_out=d_out))
        readout_hidden = versor_init(CL41.dim, rng, fan_out=hidden)
        return cls(lift, W_B, versor_init(hidden, rng, fan_out=d_out), readout_hidden, np.zeros(hidden))

    @classmethod
    def zeros(cls, d_in: int, d_out: int) -> "RraParams":
        return cls(np.zeros((d_in, CL41.dim)), np.zeros((CL41.dim, N_BIVECTORS)), np.zeros((CL41.dim, d_out)))

    @property
    def hidden(self) -> int:
        return 0 if self.readout_hidden is None else self.readout_hidden.shape[1]

    def as_dict(self) -> Dict[str, np.ndarray]:
        arrays = {"lift": self.lift, "W_B": self.W_B, "readout": self.readout}
        if self.readout_hidden is not None:
            arrays.update(readout_hidden=self.readout_hidden, readout_bias=self.readout_bias)
        return arrays

    @classmethod
    def from_dict(cls, arrays: Dict[str, np.ndarray]) -> "RraParams":
        return cls(arrays["lift"], arrays["W_B"], arrays["readout"],
                   arrays.get("readout_hidden"), arrays.get("readout_bias"))


@dataclass
class VersorState:
    psi: Rotor
    step: int = 0

    @classmethod
    def initial(cls) -> "VersorState":
        return cls(Rotor.identity(), 0)


def identity_states(shape=()) -> np.ndarray:
    psi = np.zeros(tuple(shape) + (CL41.dim,), dtype=DEFAULT_DTYPE)
    psi[..., 0] = 1.0
    return psi


def step_operators(B: np.ndarray, manifold_norm: bool = True, step_offset: int = 0) -> np.ndarray:
    """Per-step rotors from (..., 10) bivectors.

    Without the manifold projection the inverse (2 + B)^-1 = (2 - B)(4 - B²)^-1
    loses its normalizing factor and the update is (2 - B)², whose norm grows
    about fourfold per step.
    """
    if manifold_norm:
        return cayley_rotor_array(B, step_offset=step_offset)
    numerator = -embed_bivector_array(B)
    numerator[..., 0] += 2.0
    return product_kernel(CL41).product(numerator, numerator)


def accumulate(delta: np.ndarray, psi0: Optional[np.ndarray] = None, normalize: bool = True,
               step_offset: int = 0) -> np.ndarray:
    """Left-multiply a (L, ..., 32) sequence of rotors into the state; returns every state."""
    kernel = product_kernel(CL41)
    psi = identity_states(delta.shape[1:-1]) if psi0 is None else np.asarray(psi0, dtype=DEFAULT_DTYPE)
    states = np.empty_like(delta)
    for t in range(delta.shape[0]):
        psi = kernel.product(delta[t], psi)
        if normalize:
            psi = normalize_array(psi, step_offset=step_offset + t)
        states[t] = psi
    return states


def rra_states(U: np.ndarray, W_B: np.ndarray, manifold_norm: bool = True,
               psi0: Optional[np.ndarray] = None) -> np.ndarray:
    """States for already lifted inputs U of shape (L, ..., 32)."""
    L = U.shape[0]
    states = np.empty(U.shape, dtype=DEFAULT_DTYPE)
    psi = psi0
    for start in range(0, L, CHUNK):
        delta = step_operators(U[start:start + CHUNK] @ W_B, manifold_norm, step_offset=start)
        chunk_states = accumulate(delta, psi, normalize=manifold_norm, step_offset=start)
        states[start:start + CHUNK] = chunk_states
        psi = chunk_states[-1]
    return states


def rra_forward(features: np.ndarray, params: RraParams, manifold_norm: bool = True,
                psi0: Optional[np.ndarray] = None) -> np.ndarray:
    """States Psi_1..Psi_L for (L, d_in) features, or (L, batch, d_in)."""
    X = np.asarray(features, dtype=DEFAULT_DTYPE)
    if X.ndim < 2 or X.shape[0] < 1:
        raise ValueError(f"Expected (L, d_in) features with L >= 1, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("RRA features must be finite")
    return rra_states(X @ params.lift, params.W_B, manifold_norm, psi0)


def rra_readout(states: np.ndarray, inputs: np.ndarray, params: RraParams,
                manifold_norm: bool = True) -> np.ndarray:
    """Readout of Psi u ~Psi for each step.

    The state enters on the Euclidean unit hypersphere, so boost components
    cannot inflate the features; the ablation reads the raw state.
    """
    psi = hypersphere_array(states) if manifold_norm else np.asarray(states)
    y = sandwich_array(psi, inputs)
    if params.readout_hidden is not None:
        y = silu(y @ params.readout_hidden + params.readout_bias)
    return y @ params.readout


def rra_step(state: VersorState, u: np.ndarray, params: RraParams, manifold_norm: bool = True) -> VersorState:
    """Advance one step from an already lifted input u (32,)."""
    delta = step_operators(np.asarray(u) @ params.W_B, manifold_norm, step_offset=state.step)
    psi = product_kernel(CL41).product(delta, state.psi.mv.coeffs)
    if manifold_norm:
        psi = normalize_array(psi, step_offset=state.step)
    return VersorState(Rotor(Multivector(psi, CL41)), state.step + 1)


def state_norm_deviation(states: np.ndarray) -> float:
    return float(np.max(np.abs(scalar_product_array(states, states, CL41) - 1.0)))


def rra_forward_tape(tape: Tape, U: Variable, params: Dict[str, Variable],
                     manifold_norm: bool = True) -> Variable:
    """Differentiable states for lifted inputs U of shape (batch, L, 32); returns (batch, L, 32)."""
    batch, L, _ = U.shape
    B = tape.matmul(U, params["W_B"])
    if manifold_norm:
        delta = tape.cayley(B)
    else:
        numerator = tape.sub(2.0 * identity_states(), tape.embed_bivector(B))
        delta = tape.gp(numerator, numerator)
    psi = tape.constant(identity_states((batch,)))
    states = []
    for t in range(L):
        psi = tape.gp(tape.index(delta, (slice(None), t)), psi)
        if manifold_norm:
            psi = tape.normalize(psi, step=t)
        states.append(psi)
    return tape.stack(states, axis=1)


def rra_readout_tape(tape: Tape, states: Variable, U: Variable, params: Dict[str, Variable],
                     manifold_norm: bool = True) -> Variable:
    """Differentiable ``rra_readout``."""
    psi = tape.hypersphere(states) if manifold_norm else states
    y = tape.sandwich(psi, U)
    if "readout_hidden" in params:
        y = tape.silu(tape.add(tape.matmul(y, params["readout_hidden"]), params["readout_bias"]))
    return tape.matmul(y, params["readout"])
