"""
Conformal Geometry
Lifting Euclidean points onto the null cone of Cl(4,1), rotor actions, the Cayley
map onto Spin(4,1), multivector inversion and manifold normalization.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Dict, Sequence, Tuple

import numpy as np

from core.algebra import (
    CL41, DEFAULT_DTYPE, BladeIndex, Multivector, Signature, blade_name, inner_scalar, popcount,
    product_kernel, reverse_array, scalar_product_array, scalar_product_fast,
)
from core.errors import (
    CayleySingularityError, DegenerateStateError, NonFiniteError, NonInvertibleError,
    NotARotorError, SignatureError, UnnormalizedRotorError,
)
from core.matrix_iso import complex_gemm, inverse_array, mat_inverse, rho_array, rho_inverse_array

logger = logging.getLogger(__name__)

E1, E2, E3, E_PLUS, E_MINUS = 1, 2, 4, 8, 16
SPATIAL_MASKS = (E1, E2, E3)

NORMALIZE_EPS = 1e-12
ROTOR_TOLERANCE = 1e-6
ODD_MASS_TOLERANCE = 1e-9
NULL_TOLERANCE = 1e-9

BIVECTOR_MASKS: Tuple[BladeIndex, ...] = tuple(
    BladeIndex(m) for m in range(CL41.dim) if popcount(m) == 2
)


class GeneratorKind(Enum):
    ROTATION = "rotation"
    TRANSLATION_LIKE = "translation-like"
    SPECIAL_CONFORMAL = "special-conformal"
    DILATION = "dilation"


@dataclass(frozen=True)
class BivectorGenerator:
    mask: BladeIndex
    name: str
    kind: GeneratorKind


def _require_cl41(sig: Signature):
    if sig != CL41:
        raise SignatureError(f"Conformal operations need Cl(4,1), got {sig}")


def _odd_selector() -> np.ndarray:
    return (popcount(np.arange(CL41.dim)) & 1) == 1


# ----------------------------------------------------------------------------
# Value types
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConformalPoint:
    """Grade-1 null vector representing a Euclidean point."""
    mv: Multivector

    def __post_init__(self):
        _require_cl41(self.mv.sig)
        vector_masks = [1 << k for k in range(CL41.n)]
        scale = float(np.sum(self.mv.coeffs ** 2))
        rest = np.delete(self.mv.coeffs, vector_masks)
        if np.any(np.abs(rest) > NULL_TOLERANCE * (1.0 + scale)):
            raise ValueError("Conformal point must be a pure grade-1 multivector")
        if abs(scalar_product_fast(self.mv, self.mv)) > NULL_TOLERANCE * (1.0 + scale):
            raise ValueError("Conformal point is not null")

    @property
    def euclidean(self) -> np.ndarray:
        return project_down(self)


@dataclass(frozen=True, eq=False)
class Rotor:
    """Even-grade multivector; the recurrent state type."""
    mv: Multivector

    def __post_init__(self):
        _require_cl41(self.mv.sig)
        coeffs = self.mv.coeffs
        total = float(np.sum(coeffs ** 2))
        odd = float(np.sum(coeffs[_odd_selector()] ** 2))
        if odd > ODD_MASS_TOLERANCE * max(total, np.finfo(float).tiny):
            raise NotARotorError(f"Odd-grade mass {odd:.3e} of total {total:.3e}")

    @classmethod
    def identity(cls) -> "Rotor":
        return cls(Multivector.scalar(1.0))

    def norm(self) -> float:
        return scalar_product_fast(self.mv, self.mv)

    def is_normalized(self, tol: float = NULL_TOLERANCE) -> bool:
        return abs(self.norm() - 1.0) <= tol

    def reverse(self) -> "Rotor":
        return Rotor(~self.mv)

    def compose(self, other: "Rotor") -> "Rotor":
        """self applied after other."""
        return Rotor(self.mv * other.mv)

    def __mul__(self, other):
        if isinstance(other, Rotor):
            return self.compose(other)
        return self.mv * other


@dataclass(frozen=True, eq=False)
class Bivector:
    """Ten grade-2 coefficients in ascending mask order."""
    b: np.ndarray

    def __post_init__(self):
        arr = np.array(self.b, dtype=DEFAULT_DTYPE).reshape(-1)
        if arr.shape != (len(BIVECTOR_MASKS),):
            raise ValueError(f"Bivector needs {len(BIVECTOR_MASKS)} coefficients, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("Bivector coefficients must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "b", arr)

    @classmethod
    def from_multivector(cls, mv: Multivector) -> "Bivector":
        _require_cl41(mv.sig)
        others = np.delete(mv.coeffs, list(BIVECTOR_MASKS))
        if np.any(others != 0.0):
            raise ValueError("Multivector has content outside grade 2")
        return cls(mv.coeffs[list(BIVECTOR_MASKS)])

    @classmethod
    def from_blades(cls, values: Dict[int, float]) -> "Bivector":
        b = np.zeros(len(BIVECTOR_MASKS))
        for mask, value in values.items():
            b[BIVECTOR_MASKS.index(mask)] = value
        return cls(b)

    def to_multivector(self) -> Multivector:
        return Multivector(embed_bivector_array(self.b), CL41)


def embed_bivector_array(b: np.ndarray) -> np.ndarray:
    """(..., 10) bivector coefficients -> (..., 32) multivector coefficients."""
    b = np.asarray(b, dtype=DEFAULT_DTYPE)
    out = np.zeros(b.shape[:-1] + (CL41.dim,), dtype=DEFAULT_DTYPE)
    out[..., list(BIVECTOR_MASKS)] = b
    return out


# ----------------------------------------------------------------------------
# Null basis and lifting
# ----------------------------------------------------------------------------

def null_basis(sig: Signature = CL41) -> Tuple[Multivector, Multivector]:
    """(e_o, e_inf) with e_o = (e- - e+)/2 and e_inf = e- + e+."""
    _require_cl41(sig)
    e_o = np.zeros(sig.dim)
    e_o[E_MINUS], e_o[E_PLUS] = 0.5, -0.5
    e_inf = np.zeros(sig.dim)
    e_inf[E_MINUS], e_inf[E_PLUS] = 1.0, 1.0
    return Multivector(e_o, sig), Multivector(e_inf, sig)


def _pad3(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] > 3:
        raise ValueError(f"Euclidean inputs have at most 3 coordinates, got {x.shape[-1]}")
    if x.shape[-1] < 3:
        pad = [(0, 0)] * (x.ndim - 1) + [(0, 3 - x.shape[-1])]
        x = np.pad(x, pad)
    return x


def lift_array(x: np.ndarray) -> np.ndarray:
    """Batched lift: (..., d<=3) coordinates -> (..., 32) null vectors."""
    x = _pad3(np.asarray(x, dtype=DEFAULT_DTYPE))
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("Cannot lift non-finite coordinates")
    half_sq = 0.5 * np.sum(x * x, axis=-1)
    out = np.zeros(x.shape[:-1] + (CL41.dim,), dtype=DEFAULT_DTYPE)
    out[..., list(SPATIAL_MASKS)] = x
    # X = x + |x|²/2 e_inf + e_o
    out[..., E_PLUS] = half_sq - 0.5
    out[..., E_MINUS] = half_sq + 0.5
    return out


def lift(x: Sequence[float]) -> ConformalPoint:
    return ConformalPoint(Multivector(lift_array(np.asarray(x, dtype=DEFAULT_DTYPE)), CL41))


def conformal_inner(X1: ConformalPoint, X2: ConformalPoint) -> float:
    """X1 . X2 = -|x1 - x2|² / 2 for normalized points."""
    return inner_scalar(X1.mv, X2.mv)


def project_down(X) -> np.ndarray:
    """Euclidean coordinates of a conformal point, normalizing the e_o weight."""
    mv = X.mv if isinstance(X, ConformalPoint) else X
    _, e_inf = null_basis()
    weight = -scalar_product_fast(mv, e_inf)
    if abs(weight) <= NORMALIZE_EPS:
        raise DegenerateStateError("Point at infinity has no Euclidean projection")
    return mv.coeffs[list(SPATIAL_MASKS)] / weight


# ----------------------------------------------------------------------------
# Rotor actions
# ----------------------------------------------------------------------------

def sandwich(R: Rotor, X: Multivector) -> Multivector:
    """R X ~R; R must be normalized."""
    deviation = abs(R.norm() - 1.0)
    if deviation > ROTOR_TOLERANCE:
        raise UnnormalizedRotorError(f"Rotor norm deviates from 1 by {deviation:.3e}")
    return R.mv * X * ~R.mv


def sandwich_array(R: np.ndarray, X: np.ndarray) -> np.ndarray:
    kernel = product_kernel(CL41)
    return kernel.product(kernel.product(R, X), reverse_array(R, CL41))


def translator(t: Sequence[float]) -> Rotor:
    """T = 1 - t e_inf / 2, summed over the translation generators e_k ^ e_inf."""
    t = _pad3(np.asarray(t, dtype=DEFAULT_DTYPE))
    if not np.all(np.isfinite(t)):
        raise NonFiniteError("Translation must be finite")
    coeffs = np.zeros(CL41.dim)
    coeffs[0] = 1.0
    for k in range(3):
        coeffs -= 0.5 * t[k] * null_generator(k, GeneratorKind.TRANSLATION_LIKE).to_multivector().coeffs
    return Rotor(Multivector(coeffs, CL41))


def mv_inverse(a: Multivector) -> Multivector:
    _require_cl41(a.sig)
    return Multivector(inverse_array(a.coeffs), CL41)


def cayley_rotor_array(B: np.ndarray, step_offset: int = 0) -> np.ndarray:
    """Batched Cayley map (2 - B)(2 + B)^-1 over (..., 10) bivector coefficients."""
    Bmv = embed_bivector_array(B)
    two = np.zeros(CL41.dim, dtype=DEFAULT_DTYPE)
    two[0] = 2.0
    numerator = rho_array(two - Bmv)
    try:
        denominator_inv = mat_inverse(rho_array(two + Bmv))
    except NonInvertibleError as e:
        step = getattr(e, "index", 0) + step_offset
        raise CayleySingularityError(
            "2 + B is not invertible (B has eigenvalue -2 in its matrix representation)",
            step=step,
        ) from e
    return rho_inverse_array(complex_gemm(numerator, denominator_inv))


def cayley_rotor(B) -> Rotor:
    b = B.b if isinstance(B, Bivector) else Bivector.from_multivector(B).b
    return Rotor(Multivector(cayley_rotor_array(b), CL41))


def normalize_array(psi: np.ndarray, eps: float = NORMALIZE_EPS, step_offset: int = 0) -> np.ndarray:
    """Batched psi / sqrt(<psi ~psi>_0)."""
    psi = np.asarray(psi, dtype=DEFAULT_DTYPE)
    q = scalar_product_array(psi, psi, CL41)
    bad = ~(q > eps)
    if np.any(bad):
        first = int(np.flatnonzero(np.ravel(bad))[0])
        raise DegenerateStateError(
            f"State norm {float(np.ravel(q)[first]):.3e} is null or negative",
            step=first + step_offset,
        )
    return psi / np.sqrt(q)[..., None]


def hypersphere_array(psi: np.ndarray, eps: float = NORMALIZE_EPS) -> np.ndarray:
    """Batched psi / |psi| with the Euclidean coefficient norm.

    Agrees with ``normalize_array`` on rotors of the compact rotation group and
    stays bounded for boosts, whose coefficients grow while <psi ~psi>_0 stays 1.
    """
    psi = np.asarray(psi, dtype=DEFAULT_DTYPE)
    norm = np.sqrt(np.sum(psi * psi, axis=-1))
    if np.any(~(norm > eps)):
        raise DegenerateStateError("State has zero Euclidean norm")
    return psi / norm[..., None]


def manifold_normalize(psi: Multivector) -> Rotor:
    _require_cl41(psi.sig)
    return Rotor(Multivector(normalize_array(psi.coeffs), CL41))


# ----------------------------------------------------------------------------
# Bivector generators
# ----------------------------------------------------------------------------

def _classify(mask: int) -> GeneratorKind:
    if mask == E_PLUS | E_MINUS:
        return GeneratorKind.DILATION
    if mask & E_MINUS:
        return GeneratorKind.SPECIAL_CONFORMAL
    if mask & E_PLUS:
        return GeneratorKind.TRANSLATION_LIKE
    return GeneratorKind.ROTATION


@lru_cache(maxsize=None)
def bivector_generators() -> Tuple[BivectorGenerator, ...]:
    return tuple(BivectorGenerator(m, blade_name(m, CL41), _classify(m)) for m in BIVECTOR_MASKS)


def bivector_basis() -> Tuple[BladeIndex, ...]:
    """The ten grade-2 masks in ascending order."""
    return BIVECTOR_MASKS


def null_generator(axis: int, kind: GeneratorKind) -> Bivector:
    """Exact e_i ^ e_inf (translation), e_i ^ e_o (transversion) or e_inf ^ e_o (dilation)."""
    if kind is GeneratorKind.DILATION:
        return Bivector.from_blades({E_PLUS | E_MINUS: 1.0})
    if not 0 <= axis < 3:
        raise ValueError(f"Spatial axis must be 0, 1 or 2, got {axis}")
    mask = SPATIAL_MASKS[axis]
    if kind is GeneratorKind.TRANSLATION_LIKE:
        return Bivector.from_blades({mask | E_PLUS: 1.0, mask | E_MINUS: 1.0})
    if kind is GeneratorKind.SPECIAL_CONFORMAL:
        return Bivector.from_blades({mask | E_PLUS: -0.5, mask | E_MINUS: 0.5})
    raise ValueError("Rotations are spanned by the e12, e13, e23 blades directly")


def euclidean_norm_of_grade2(A: np.ndarray) -> np.ndarray:
    """Euclidean length of the ten bivector coefficients."""
    return np.sqrt(np.sum(np.asarray(A)[..., list(BIVECTOR_MASKS)] ** 2, axis=-1))