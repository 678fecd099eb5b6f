"""
Matrix Isomorphism Engine
Cl(4,1) represented as 4x4 complex matrices; geometric products become small GEMMs.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from core.algebra import CL41, DEFAULT_DTYPE, Multivector, Signature, op_counter
from core.errors import NonFiniteError, NonInvertibleError, SignatureError

logger = logging.getLogger(__name__)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)

# 64 complex multiply-adds, four real multiply-adds each
GEMM_REAL_FLOPS = 4 * 4 ** 3

DET_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class Mat4C:
    """4x4 complex matrix (optionally batched) held as separate real and imaginary planes."""
    re: np.ndarray
    im: np.ndarray

    @classmethod
    def from_complex(cls, M: np.ndarray) -> "Mat4C":
        M = np.asarray(M)
        return cls(np.ascontiguousarray(M.real, dtype=DEFAULT_DTYPE),
                   np.ascontiguousarray(M.imag, dtype=DEFAULT_DTYPE))

    @classmethod
    def identity(cls) -> "Mat4C":
        return cls.from_complex(np.eye(4, dtype=complex))

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    def __matmul__(self, other: "Mat4C") -> "Mat4C":
        return complex_gemm(self, other)

    def allclose(self, other: "Mat4C", atol: float = 1e-10) -> bool:
        return bool(np.allclose(self.re, other.re, rtol=0.0, atol=atol)
                    and np.allclose(self.im, other.im, rtol=0.0, atol=atol))


@dataclass(frozen=True, eq=False)
class IsoBasis:
    rho_blades: np.ndarray      # (32, 4, 4) complex
    inverse_coeffs: np.ndarray  # (32, 32) real dual frame


def build_generators() -> Tuple[np.ndarray, ...]:
    """Images of e1, e2, e3, e+, e- as complex 4x4 matrices."""
    return (
        np.kron(SIGMA_X, I2),
        np.kron(SIGMA_Y, I2),
        np.kron(SIGMA_Z, SIGMA_X),
        np.kron(SIGMA_Z, SIGMA_Y),
        1j * np.kron(SIGMA_Z, SIGMA_Z),
    )


@lru_cache(maxsize=None)
def iso_basis() -> IsoBasis:
    """Blade images and the real 32x32 dual frame, factored once."""
    gens = build_generators()
    blades = np.zeros((CL41.dim, 4, 4), dtype=complex)
    for mask in range(CL41.dim):
        M = np.eye(4, dtype=complex)
        for bit in range(CL41.n):
            if mask >> bit & 1:
                M = M @ gens[bit]
        blades[mask] = M

    frame = np.concatenate([blades.real.reshape(CL41.dim, 16),
                            blades.imag.reshape(CL41.dim, 16)], axis=1).T
    if np.linalg.matrix_rank(frame) != CL41.dim:
        raise SignatureError("Blade images are not linearly independent")
    inverse = np.linalg.inv(frame)
    blades.setflags(write=False)
    inverse.setflags(write=False)
    logger.debug("Built Cl(4,1) matrix basis")
    return IsoBasis(rho_blades=blades, inverse_coeffs=inverse)


def _require_cl41(sig: Signature):
    if sig != CL41:
        raise SignatureError(f"Matrix isomorphism is defined for Cl(4,1) only, got {sig}")


def rho_array(A: np.ndarray) -> Mat4C:
    """Batched rho over coefficient arrays of shape (..., 32)."""
    A = np.asarray(A, dtype=DEFAULT_DTYPE)
    if A.shape[-1:] != (CL41.dim,):
        raise SignatureError(f"Expected 32 coefficients, got shape {A.shape}")
    blades = iso_basis().rho_blades
    return Mat4C(np.tensordot(A, blades.real, axes=([-1], [0])),
                 np.tensordot(A, blades.imag, axes=([-1], [0])))


def rho_inverse_array(M: Mat4C) -> np.ndarray:
    lead = M.re.shape[:-2]
    flat = np.concatenate([M.re.reshape(lead + (16,)), M.im.reshape(lead + (16,))], axis=-1)
    return flat @ iso_basis().inverse_coeffs.T


def rho(a: Multivector) -> Mat4C:
    _require_cl41(a.sig)
    return rho_array(a.coeffs)


def rho_inverse(M: Mat4C) -> Multivector:
    return Multivector(rho_inverse_array(M), CL41)


def complex_gemm(X: Mat4C, Y: Mat4C) -> Mat4C:
    """Complex 4x4 product as four real GEMMs on the re/im planes."""
    re = X.re @ Y.re - X.im @ Y.im
    im = X.re @ Y.im + X.im @ Y.re
    batch = int(np.prod(re.shape[:-2], dtype=np.int64))
    op_counter.record("iso_gemm", GEMM_REAL_FLOPS * batch)
    return Mat4C(re, im)


def singular_mask(M: Mat4C) -> np.ndarray:
    """True where |det| is negligible relative to the matrix scale."""
    Mc = M.to_complex()
    det = np.abs(np.linalg.det(Mc))
    scale = np.linalg.norm(Mc, axis=(-2, -1)) / 2.0
    return ~np.isfinite(det) | (det <= DET_TOLERANCE * np.maximum(1.0, scale ** 4))


def mat_inverse(M: Mat4C) -> Mat4C:
    """Batched inverse with a determinant guard."""
    if not (np.all(np.isfinite(M.re)) and np.all(np.isfinite(M.im))):
        raise NonFiniteError("Cannot invert a non-finite matrix")
    bad = singular_mask(M)
    if np.any(bad):
        first = int(np.flatnonzero(np.ravel(bad))[0])
        error = NonInvertibleError(f"Matrix representation is singular (batch index {first})")
        error.index = first
        raise error
    return Mat4C.from_complex(np.linalg.inv(M.to_complex()))


def product_via_iso_array(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return rho_inverse_array(complex_gemm(rho_array(A), rho_array(B)))


def product_via_iso(a: Multivector, b: Multivector) -> Multivector:
    _require_cl41(a.sig)
    _require_cl41(b.sig)
    return Multivector(product_via_iso_array(a.coeffs, b.coeffs), CL41)


def inverse_array(A: np.ndarray) -> np.ndarray:
    """Multivector inverse through the matrix representation, batched."""
    return rho_inverse_array(mat_inverse(rho_array(A)))
