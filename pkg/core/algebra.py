"""
Clifford Algebra Core
Signatures, blade bitmask arithmetic, Cayley tables and the geometric-product engines.

Blades are indexed by integer bitmasks: bit k set means generator e_{k+1} is a
factor. Coefficient arrays are dense and ordered by ascending mask. Array-level
functions accept any leading batch shape ``(..., dim)``; the ``Multivector``
class wraps a single coefficient vector.
"""

import os
import logging
import threading
from contextlib import contextmanager
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterator, List, NewType, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import GradeError, NonFiniteError, SignatureError, SignatureMismatchError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32 if os.getenv("VERSOR_FLOAT32") == "1" else np.float64

MAX_GENERATORS = 8

BladeIndex = NewType("BladeIndex", int)


def popcount(x):
    """Set-bit count of 8-bit masks; works on ints and integer arrays."""
    x = x - ((x >> 1) & 0x55)
    x = (x & 0x33) + ((x >> 2) & 0x33)
    return (x + (x >> 4)) & 0x0F


grade_of = popcount


@dataclass(frozen=True)
class Signature:
    """Metric diagonal of the algebra; entry k is e_{k+1}²."""
    diag: Tuple[int, ...]
    labels: Optional[Tuple[str, ...]] = field(default=None, compare=False)

    def __post_init__(self):
        diag = tuple(int(d) for d in self.diag)
        if not 1 <= len(diag) <= MAX_GENERATORS:
            raise SignatureError(f"Signature needs 1..{MAX_GENERATORS} generators, got {len(diag)}")
        if any(d not in (1, -1) for d in diag):
            raise SignatureError(f"Signature entries must be +1 or -1, got {diag}")
        object.__setattr__(self, "diag", diag)
        labels = self.labels or tuple(str(k + 1) for k in range(len(diag)))
        if len(labels) != len(diag):
            raise SignatureError("One label per generator is required")
        object.__setattr__(self, "labels", tuple(labels))

    @property
    def n(self) -> int:
        return len(self.diag)

    @property
    def dim(self) -> int:
        return 1 << self.n

    @classmethod
    def from_pq(cls, p: int, q: int) -> "Signature":
        return cls((1,) * p + (-1,) * q)

    @classmethod
    def cl41(cls) -> "Signature":
        """Conformal algebra over 3D space: e1, e2, e3, e+ square to +1, e- to -1."""
        return cls((1, 1, 1, 1, -1), labels=("1", "2", "3", "+", "-"))

    def __repr__(self) -> str:
        p = sum(1 for d in self.diag if d > 0)
        return f"Signature(Cl({p},{self.n - p}))"


CL41 = Signature.cl41()


def blade_name(mask: int, sig: Signature = CL41) -> str:
    if mask == 0:
        return "1"
    return "e" + "".join(sig.labels[b] for b in range(sig.n) if mask >> b & 1)


def blade_masks_of_grade(grade: int, sig: Signature = CL41) -> List[int]:
    return [m for m in range(sig.dim) if popcount(m) == grade]


def basis_product(i: int, j: int, sig: Signature) -> Tuple[int, int]:
    """Product of basis blades i and j: returns (i XOR j, sign times metric)."""
    if not (0 <= i < sig.dim and 0 <= j < sig.dim):
        raise SignatureError(f"Blade masks {i}, {j} out of range for {sig}")
    k = i ^ j
    swaps = 0
    for bit in range(sig.n):
        if j >> bit & 1:
            swaps += popcount(i >> (bit + 1))
    w = -1 if swaps & 1 else 1
    common = i & j
    for bit in range(sig.n):
        if common >> bit & 1:
            w *= sig.diag[bit]
    return k, w


def _sign_grid(left: np.ndarray, right: np.ndarray, sig: Signature) -> np.ndarray:
    """Broadcast version of the sign rule in basis_product, pure bit logic."""
    swaps = np.zeros(np.broadcast(left, right).shape, dtype=np.int64)
    for bit in range(sig.n):
        swaps += ((right >> bit) & 1) * popcount(left >> (bit + 1))
    signs = 1 - 2 * (swaps & 1)
    common = left & right
    for bit, d in enumerate(sig.diag):
        if d < 0:
            signs = np.where((common >> bit) & 1, -signs, signs)
    return signs


@lru_cache(maxsize=None)
def blade_signs(sig: Signature) -> np.ndarray:
    """dim x dim weights w[i, j] computed from bit logic."""
    idx = np.arange(sig.dim, dtype=np.int64)
    signs = _sign_grid(idx[:, None], idx[None, :], sig).astype(np.int8)
    signs.setflags(write=False)
    return signs


@lru_cache(maxsize=None)
def reversion_signs(sig: Signature) -> np.ndarray:
    g = popcount(np.arange(sig.dim, dtype=np.int64))
    signs = np.where((g * (g - 1) // 2) & 1, -1.0, 1.0).astype(DEFAULT_DTYPE)
    signs.setflags(write=False)
    return signs


@lru_cache(maxsize=None)
def scalar_weights(sig: Signature) -> np.ndarray:
    """eta_i with <a ~b>_0 = sum_i eta_i a_i b_i; equals the product of diag over bits of i."""
    eta = reversion_signs(sig) * np.diagonal(blade_signs(sig)).astype(DEFAULT_DTYPE)
    eta = np.ascontiguousarray(eta)
    eta.setflags(write=False)
    return eta


@lru_cache(maxsize=None)
def grade_masks(sig: Signature) -> np.ndarray:
    """(n+1) x dim boolean selector; row g keeps blades of grade g."""
    g = popcount(np.arange(sig.dim, dtype=np.int64))
    masks = np.stack([g == k for k in range(sig.n + 1)])
    masks.setflags(write=False)
    return masks


# ----------------------------------------------------------------------------
# Operation counters
# ----------------------------------------------------------------------------

class OpCounter:
    """Modeled operation counts per engine. Disabled unless switched on."""

    def __init__(self):
        self.enabled = os.getenv("VERSOR_COUNT_OPS") == "1"
        self.counts: Dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()

    def record(self, key: str, ops: int):
        if not self.enabled:
            return
        with self._lock:
            self.counts[key] += int(ops)

    def get(self, key: str) -> int:
        return self.counts.get(key, 0)

    def reset(self):
        with self._lock:
            self.counts.clear()

    @contextmanager
    def counting(self) -> Iterator["OpCounter"]:
        """Enable counting with fresh totals for the duration of the block."""
        previous = self.enabled
        self.enabled = True
        self.reset()
        try:
            yield self
        finally:
            self.enabled = previous


op_counter = OpCounter()


def _batch_size(shape: Tuple[int, ...]) -> int:
    return int(np.prod(shape[:-1], dtype=np.int64)) if len(shape) > 1 else 1


# ----------------------------------------------------------------------------
# Cayley table (naive engine storage)
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CayleyTable:
    sig: Signature
    target: np.ndarray
    weight: np.ndarray
    by_target: Tuple[Tuple[np.ndarray, np.ndarray], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        groups = []
        for k in range(self.sig.dim):
            rows, cols = np.nonzero(self.target == k)
            groups.append((rows, cols))
        object.__setattr__(self, "by_target", tuple(groups))
        for arr in (self.target, self.weight):
            arr.setflags(write=False)

    def lookup(self, i: int, j: int) -> Tuple[int, int]:
        return int(self.target[i, j]), int(self.weight[i, j])


@lru_cache(maxsize=None)
def build_cayley_table(sig: Signature) -> CayleyTable:
    """Materialize basis_product for every blade pair."""
    dim = sig.dim
    target = np.zeros((dim, dim), dtype=np.int64)
    weight = np.zeros((dim, dim), dtype=np.int8)
    for i in range(dim):
        for j in range(dim):
            target[i, j], weight[i, j] = basis_product(i, j, sig)
    logger.debug(f"Built Cayley table for {sig}")
    return CayleyTable(sig=sig, target=target, weight=weight)


def corrupt_cayley(table: CayleyTable, i: int = 3, j: int = 5) -> CayleyTable:
    """Copy of ``table`` with one weight flipped; negative control for the self-test."""
    weight = table.weight.copy()
    weight[i, j] = -weight[i, j]
    return CayleyTable(sig=table.sig, target=table.target.copy(), weight=weight)


# ----------------------------------------------------------------------------
# Array-level engines
# ----------------------------------------------------------------------------

def _check_last_axis(arr: np.ndarray, sig: Signature, name: str = "operand"):
    if arr.shape[-1:] != (sig.dim,):
        raise SignatureMismatchError(f"{name} has {arr.shape[-1:]} coefficients, {sig} needs {sig.dim}")


def gp_naive_array(A: np.ndarray, B: np.ndarray, sig: Signature,
                   table: Optional[CayleyTable] = None) -> np.ndarray:
    """Table-driven product: every output lane gathers its (i, j) pairs from the table."""
    A = np.asarray(A, dtype=DEFAULT_DTYPE)
    B = np.asarray(B, dtype=DEFAULT_DTYPE)
    _check_last_axis(A, sig, "left")
    _check_last_axis(B, sig, "right")
    table = table or build_cayley_table(sig)
    shape = np.broadcast_shapes(A.shape, B.shape)
    out = np.zeros(shape, dtype=DEFAULT_DTYPE)
    for k, (rows, cols) in enumerate(table.by_target):
        out[..., k] = np.sum(A[..., rows] * B[..., cols] * table.weight[rows, cols], axis=-1)
    op_counter.record("naive", sig.dim ** 3 * _batch_size(shape))
    return out


def gp_bitmask_array(A: np.ndarray, B: np.ndarray, sig: Signature) -> np.ndarray:
    """Product with signs derived in-call from XOR/AND/popcount; no table reads."""
    A = np.asarray(A, dtype=DEFAULT_DTYPE)
    B = np.asarray(B, dtype=DEFAULT_DTYPE)
    _check_last_axis(A, sig, "left")
    _check_last_axis(B, sig, "right")
    idx = np.arange(sig.dim, dtype=np.int64)
    left = idx[:, None]
    partner = left ^ idx[None, :]
    signs = _sign_grid(left, partner, sig)
    # out_k = sum_i A_i * B_{i^k} * w(i, i^k)
    Bw = B[..., partner] * signs
    out = (A[..., None, :] @ Bw)[..., 0, :]
    op_counter.record("bitmask", sig.n * sig.dim ** 2 * _batch_size(out.shape))
    return out


@dataclass(frozen=True, eq=False)
class ProductKernel:
    """Sign layout derived once from bit logic for the batched hot paths."""
    sig: Signature
    perm: np.ndarray
    forward_signs: np.ndarray
    table_signs: np.ndarray

    def product(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        Bw = B[..., self.perm] * self.forward_signs
        return (A[..., None, :] @ Bw)[..., 0, :]

    def adjoint_left(self, G: np.ndarray, B: np.ndarray) -> np.ndarray:
        """dL/dA for out = A B given G = dL/dout."""
        Bw = B[..., self.perm] * self.forward_signs
        return (Bw @ G[..., :, None])[..., 0]

    def adjoint_right(self, G: np.ndarray, A: np.ndarray) -> np.ndarray:
        """dL/dB for out = A B given G = dL/dout."""
        Gw = G[..., self.perm] * self.table_signs
        return (A[..., None, :] @ Gw)[..., 0, :]


@lru_cache(maxsize=None)
def product_kernel(sig: Signature) -> ProductKernel:
    idx = np.arange(sig.dim, dtype=np.int64)
    perm = idx[:, None] ^ idx[None, :]
    table_signs = blade_signs(sig).astype(DEFAULT_DTYPE)
    forward_signs = np.take_along_axis(table_signs, perm, axis=1)
    for arr in (perm, forward_signs, table_signs):
        arr.setflags(write=False)
    return ProductKernel(sig=sig, perm=perm, forward_signs=forward_signs, table_signs=table_signs)


def reverse_array(A: np.ndarray, sig: Signature) -> np.ndarray:
    return np.asarray(A, dtype=DEFAULT_DTYPE) * reversion_signs(sig)


def grade_project_array(A: np.ndarray, grade: int, sig: Signature) -> np.ndarray:
    if not 0 <= grade <= sig.n:
        raise GradeError(f"Grade {grade} outside 0..{sig.n}")
    return np.where(grade_masks(sig)[grade], np.asarray(A, dtype=DEFAULT_DTYPE), 0.0)


def scalar_product_array(A: np.ndarray, B: np.ndarray, sig: Signature) -> np.ndarray:
    """<A ~B>_0 with exactly dim multiply-adds per pair."""
    A = np.asarray(A, dtype=DEFAULT_DTYPE)
    B = np.asarray(B, dtype=DEFAULT_DTYPE)
    _check_last_axis(A, sig, "left")
    _check_last_axis(B, sig, "right")
    out = np.sum(A * B * scalar_weights(sig), axis=-1)
    op_counter.record("scalar_fast", sig.dim * _batch_size(np.broadcast_shapes(A.shape, B.shape)))
    return out


def outer_product_array(A: np.ndarray, B: np.ndarray, sig: Signature) -> np.ndarray:
    """Wedge product: the product restricted to blade pairs with no shared generator."""
    kernel = product_kernel(sig)
    idx = np.arange(sig.dim, dtype=np.int64)
    disjoint = ((idx[:, None] & kernel.perm) == 0).astype(DEFAULT_DTYPE)
    Bw = np.asarray(B, dtype=DEFAULT_DTYPE)[..., kernel.perm] * kernel.forward_signs * disjoint
    return (np.asarray(A, dtype=DEFAULT_DTYPE)[..., None, :] @ Bw)[..., 0, :]


# ----------------------------------------------------------------------------
# Multivector value type
# ----------------------------------------------------------------------------

Scalar = Union[int, float, np.floating]


class Multivector:
    """Dense coefficient vector over the 2^n basis blades of a signature."""

    __slots__ = ("coeffs", "sig")

    def __init__(self, coeffs: Sequence[float], sig: Signature = CL41):
        arr = np.array(coeffs, dtype=DEFAULT_DTYPE)
        if arr.shape != (sig.dim,):
            raise SignatureMismatchError(f"{sig} needs {sig.dim} coefficients, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("Multivector coefficients must be finite")
        arr.setflags(write=False)
        self.coeffs = arr
        self.sig = sig

    @classmethod
    def zero(cls, sig: Signature = CL41) -> "Multivector":
        return cls(np.zeros(sig.dim), sig)

    @classmethod
    def scalar(cls, value: float, sig: Signature = CL41) -> "Multivector":
        coeffs = np.zeros(sig.dim)
        coeffs[0] = value
        return cls(coeffs, sig)

    @classmethod
    def basis(cls, mask: int, sig: Signature = CL41, value: float = 1.0) -> "Multivector":
        if not 0 <= mask < sig.dim:
            raise SignatureError(f"Blade mask {mask} out of range for {sig}")
        coeffs = np.zeros(sig.dim)
        coeffs[mask] = value
        return cls(coeffs, sig)

    @classmethod
    def vector(cls, values: Sequence[float], sig: Signature = CL41) -> "Multivector":
        if len(values) > sig.n:
            raise SignatureError(f"{len(values)} components exceed {sig.n} generators")
        coeffs = np.zeros(sig.dim)
        for k, v in enumerate(values):
            coeffs[1 << k] = v
        return cls(coeffs, sig)

    @classmethod
    def random(cls, rng: np.random.Generator, sig: Signature = CL41,
               low: float = -1.0, high: float = 1.0) -> "Multivector":
        return cls(rng.uniform(low, high, sig.dim), sig)

    def _coerce(self, other) -> "Multivector":
        if isinstance(other, Multivector):
            if other.sig != self.sig:
                raise SignatureMismatchError(f"{self.sig} vs {other.sig}")
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Multivector.scalar(float(other), self.sig)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return Multivector(self.coeffs + other.coeffs, self.sig)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return Multivector(self.coeffs - other.coeffs, self.sig)

    def __rsub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return Multivector(other.coeffs - self.coeffs, self.sig)

    def __neg__(self):
        return Multivector(-self.coeffs, self.sig)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Multivector(self.coeffs * float(other), self.sig)
        if isinstance(other, Multivector):
            return geometric_product_bitmask(self, other)
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Multivector(self.coeffs * float(other), self.sig)
        return NotImplemented

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Multivector(self.coeffs / float(other), self.sig)
        return NotImplemented

    def __invert__(self):
        return reverse(self)

    def __getitem__(self, mask: int) -> float:
        return float(self.coeffs[mask])

    def grade(self, g: int) -> "Multivector":
        return grade_project(self, g)

    def even(self) -> "Multivector":
        keep = (popcount(np.arange(self.sig.dim)) & 1) == 0
        return Multivector(np.where(keep, self.coeffs, 0.0), self.sig)

    def odd(self) -> "Multivector":
        keep = (popcount(np.arange(self.sig.dim)) & 1) == 1
        return Multivector(np.where(keep, self.coeffs, 0.0), self.sig)

    def allclose(self, other: "Multivector", atol: float = 1e-10) -> bool:
        other = self._coerce(other)
        return bool(np.allclose(self.coeffs, other.coeffs, rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        terms = [f"{c:+.6g}{'' if m == 0 else '*' + blade_name(m, self.sig)}"
                 for m, c in enumerate(self.coeffs) if c != 0.0]
        return "Multivector(" + (" ".join(terms) if terms else "0") + ")"


def _check_pair(a: Multivector, b: Multivector):
    if a.sig != b.sig:
        raise SignatureMismatchError(f"Operands have different signatures: {a.sig} vs {b.sig}")


def geometric_product_naive(a: Multivector, b: Multivector,
                            table: Optional[CayleyTable] = None) -> Multivector:
    _check_pair(a, b)
    return Multivector(gp_naive_array(a.coeffs, b.coeffs, a.sig, table), a.sig)


def geometric_product_bitmask(a: Multivector, b: Multivector) -> Multivector:
    _check_pair(a, b)
    return Multivector(gp_bitmask_array(a.coeffs, b.coeffs, a.sig), a.sig)


def geometric_product(a: Multivector, b: Multivector, engine=None) -> Multivector:
    """Dispatch to the engine named by ``engine`` (EngineKind or its string value)."""
    from config.settings import EngineKind

    kind = EngineKind(engine) if isinstance(engine, str) else (engine or EngineKind.BITMASK)
    if kind is EngineKind.NAIVE:
        return geometric_product_naive(a, b)
    if kind is EngineKind.MATRIX_ISO:
        from core.matrix_iso import product_via_iso
        return product_via_iso(a, b)
    return geometric_product_bitmask(a, b)


def reverse(a: Multivector) -> Multivector:
    return Multivector(reverse_array(a.coeffs, a.sig), a.sig)


def grade_project(a: Multivector, g: int) -> Multivector:
    return Multivector(grade_project_array(a.coeffs, g, a.sig), a.sig)


def scalar_product_fast(a: Multivector, b: Multivector) -> float:
    _check_pair(a, b)
    return float(scalar_product_array(a.coeffs, b.coeffs, a.sig))


def scalar_norm(a: Multivector) -> float:
    """<a ~a>_0; may be zero or negative for non-Euclidean signatures."""
    return scalar_product_fast(a, a)


def outer_product(a: Multivector, b: Multivector) -> Multivector:
    _check_pair(a, b)
    return Multivector(outer_product_array(a.coeffs, b.coeffs, a.sig), a.sig)


def inner_scalar(a: Multivector, b: Multivector) -> float:
    """<a b>_0 without reversion."""
    _check_pair(a, b)
    w = np.diagonal(blade_signs(a.sig))
    return float(np.sum(a.coeffs * b.coeffs * w))
