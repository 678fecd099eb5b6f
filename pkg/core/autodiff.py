"""
Reverse-Mode Differentiation Tape
Records the operations used by the Versor models and replays them backwards.

A Tape is single-use: build the forward pass with the ``Tape`` methods, then call
``backward(tape, loss)`` once. Leaves created with ``Tape.parameter`` are named and
their gradients are returned by name.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.algebra import (
    CL41, DEFAULT_DTYPE, Signature, grade_masks, product_kernel, reversion_signs, scalar_weights,
)
from core.conformal import BIVECTOR_MASKS, NORMALIZE_EPS
from core.errors import (
    CayleySingularityError, DegenerateStateError, EmptyTapeError, GradeError, NonFiniteError,
    NonInvertibleError,
)
from core.matrix_iso import inverse_array

logger = logging.getLogger(__name__)


class OpKind(Enum):
    LEAF = "leaf"
    CONST = "const"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    SCALE = "scale"
    MATMUL = "matmul"
    GP = "gp"
    REVERSE = "reverse"
    GRADE = "grade"
    EMBED = "embed"
    TAKE = "take"
    INDEX = "index"
    STACK = "stack"
    RESHAPE = "reshape"
    SCALAR_PRODUCT = "scalar_product"
    EUCLIDEAN_NORM = "euclidean_norm"
    NORMALIZE = "normalize"
    HYPERSPHERE = "hypersphere"
    SILU = "silu"
    INVERSE = "inverse"
    SOFTMAX = "softmax"
    MASK_FILL = "mask_fill"
    MSE = "mse"
    SUM = "sum"


@dataclass
class TapeNode:
    kind: OpKind
    parents: Tuple[int, ...]
    value: np.ndarray
    ctx: Dict[str, Any] = field(default_factory=dict)
    name: Optional[str] = None


class Variable:
    """Handle to a tape node; ``value`` is the cached forward result."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __add__(self, other):
        return self.tape.add(self, other)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __getitem__(self, idx):
        return self.tape.index(self, idx)

    def __repr__(self) -> str:
        node = self.tape.nodes[self.index]
        return f"Variable(#{self.index} {node.kind.value} shape={self.shape})"


DiffMultivector = Variable


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def gp_backward(adjoint_Z: np.ndarray, X: np.ndarray, Y: np.ndarray,
                sig: Signature = CL41) -> Tuple[np.ndarray, np.ndarray]:
    """Adjoints of Z = X Y: dX_i = sum_j w(i,j) dZ_(i^j) Y_j, and symmetrically for Y."""
    kernel = product_kernel(sig)
    adj_X = kernel.adjoint_left(adjoint_Z, Y)
    adj_Y = kernel.adjoint_right(adjoint_Z, X)
    return unbroadcast(adj_X, np.shape(X)), unbroadcast(adj_Y, np.shape(Y))


class Tape:
    """Append-only record of forward operations."""

    def __init__(self, sig: Signature = CL41):
        self.sig = sig
        self.nodes: List[TapeNode] = []
        self.kernel = product_kernel(sig)
        self._grads: Dict[int, np.ndarray] = {}
        self._backward_rules: Dict[OpKind, Callable[[TapeNode, np.ndarray], Tuple[np.ndarray, ...]]] = {
            OpKind.ADD: self._add_backward,
            OpKind.SUB: self._sub_backward,
            OpKind.MUL: self._mul_backward,
            OpKind.SCALE: self._scale_backward,
            OpKind.MATMUL: self._matmul_backward,
            OpKind.GP: self._gp_backward,
            OpKind.REVERSE: self._reverse_backward,
            OpKind.GRADE: self._grade_backward,
            OpKind.EMBED: self._embed_backward,
            OpKind.TAKE: self._take_backward,
            OpKind.INDEX: self._index_backward,
            OpKind.STACK: self._stack_backward,
            OpKind.RESHAPE: self._reshape_backward,
            OpKind.SCALAR_PRODUCT: self._scalar_product_backward,
            OpKind.EUCLIDEAN_NORM: self._euclidean_norm_backward,
            OpKind.NORMALIZE: self._normalize_backward,
            OpKind.HYPERSPHERE: self._hypersphere_backward,
            OpKind.SILU: self._silu_backward,
            OpKind.INVERSE: self._inverse_backward,
            OpKind.SOFTMAX: self._softmax_backward,
            OpKind.MASK_FILL: self._mask_fill_backward,
            OpKind.MSE: self._mse_backward,
            OpKind.SUM: self._sum_backward,
        }

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, kind: OpKind, parents: Sequence[int], value: np.ndarray,
              name: Optional[str] = None, **ctx) -> Variable:
        self.nodes.append(TapeNode(kind, tuple(parents), value, ctx, name))
        return Variable(self, len(self.nodes) - 1)

    def _lift(self, x) -> Variable:
        if isinstance(x, Variable):
            if x.tape is not self:
                raise ValueError("Variable belongs to a different tape")
            return x
        return self.constant(x)

    # ------------------------------------------------------------------
    # Leaves
    # ------------------------------------------------------------------

    def parameter(self, name: str, value) -> Variable:
        arr = np.array(value, dtype=DEFAULT_DTYPE)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"Parameter '{name}' is not finite")
        return self._push(OpKind.LEAF, (), arr, name=name)

    def constant(self, value) -> Variable:
        return self._push(OpKind.CONST, (), np.asarray(value, dtype=DEFAULT_DTYPE))

    # ------------------------------------------------------------------
    # Elementwise and linear
    # ------------------------------------------------------------------

    def add(self, a, b) -> Variable:
        a, b = self._lift(a), self._lift(b)
        return self._push(OpKind.ADD, (a.index, b.index), a.value + b.value)

    def sub(self, a, b) -> Variable:
        a, b = self._lift(a), self._lift(b)
        return self._push(OpKind.SUB, (a.index, b.index), a.value - b.value)

    def mul(self, a, b) -> Variable:
        a, b = self._lift(a), self._lift(b)
        return self._push(OpKind.MUL, (a.index, b.index), a.value * b.value)

    def scale(self, a, c: float) -> Variable:
        a = self._lift(a)
        return self._push(OpKind.SCALE, (a.index,), a.value * c, c=float(c))

    def matmul(self, a, b) -> Variable:
        a, b = self._lift(a), self._lift(b)
        return self._push(OpKind.MATMUL, (a.index, b.index), a.value @ b.value)

    def sum(self, a) -> Variable:
        a = self._lift(a)
        return self._push(OpKind.SUM, (a.index,), np.asarray(a.value.sum()))

    def mse(self, pred, target) -> Variable:
        pred, target = self._lift(pred), self._lift(target)
        diff = pred.value - target.value
        return self._push(OpKind.MSE, (pred.index, target.index), np.asarray(np.mean(diff ** 2)), diff=diff)

    # ------------------------------------------------------------------
    # Shape
    # ------------------------------------------------------------------

    def take(self, a, indices: Sequence[int], axis: int = -1) -> Variable:
        a = self._lift(a)
        indices = np.asarray(indices)
        return self._push(OpKind.TAKE, (a.index,), np.take(a.value, indices, axis=axis),
                          indices=indices, axis=axis)

    def index(self, a, idx) -> Variable:
        a = self._lift(a)
        return self._push(OpKind.INDEX, (a.index,), np.asarray(a.value[idx]), idx=idx)

    def stack(self, items: Sequence, axis: int = 0) -> Variable:
        items = [self._lift(x) for x in items]
        value = np.stack([x.value for x in items], axis=axis)
        return self._push(OpKind.STACK, tuple(x.index for x in items), value, axis=axis)

    def reshape(self, a, shape: Tuple[int, ...]) -> Variable:
        a = self._lift(a)
        return self._push(OpKind.RESHAPE, (a.index,), a.value.reshape(shape))

    # ------------------------------------------------------------------
    # Algebra
    # ------------------------------------------------------------------

    def gp(self, a, b) -> Variable:
        """Geometric product over the last axis, broadcasting leading axes."""
        a, b = self._lift(a), self._lift(b)
        return self._push(OpKind.GP, (a.index, b.index), self.kernel.product(a.value, b.value))

    def reverse(self, a) -> Variable:
        a = self._lift(a)
        return self._push(OpKind.REVERSE, (a.index,), a.value * reversion_signs(self.sig))

    def grade_project(self, a, grade: int) -> Variable:
        a = self._lift(a)
        if not 0 <= grade <= self.sig.n:
            raise GradeError(f"Grade {grade} outside 0..{self.sig.n}")
        keep = grade_masks(self.sig)[grade]
        return self._push(OpKind.GRADE, (a.index,), np.where(keep, a.value, 0.0), keep=keep)

    def embed_bivector(self, b) -> Variable:
        """(..., 10) bivector coefficients into (..., 32)."""
        b = self._lift(b)
        out = np.zeros(b.value.shape[:-1] + (self.sig.dim,), dtype=DEFAULT_DTYPE)
        out[..., list(BIVECTOR_MASKS)] = b.value
        return self._push(OpKind.EMBED, (b.index,), out)

    def scalar_product(self, a, b) -> Variable:
        """<a ~b>_0 over the last axis."""
        a, b = self._lift(a), self._lift(b)
        eta = scalar_weights(self.sig)
        return self._push(OpKind.SCALAR_PRODUCT, (a.index, b.index),
                          np.sum(a.value * b.value * eta, axis=-1), eta=eta)

    def euclidean_norm(self, a, eps: float = NORMALIZE_EPS) -> Variable:
        a = self._lift(a)
        norm = np.sqrt(np.sum(a.value ** 2, axis=-1))
        return self._push(OpKind.EUCLIDEAN_NORM, (a.index,), norm, eps=eps)

    def normalize(self, a, eps: float = NORMALIZE_EPS, step: Optional[int] = None) -> Variable:
        """a / sqrt(<a ~a>_0); raises on null or negative norm."""
        a = self._lift(a)
        eta = scalar_weights(self.sig)
        q = np.sum(a.value * a.value * eta, axis=-1)
        bad = ~(q > eps)
        if np.any(bad):
            first = int(np.flatnonzero(np.ravel(bad))[0])
            raise DegenerateStateError(f"State norm {float(np.ravel(q)[first]):.3e} is null or negative",
                                       step=step)
        s = np.sqrt(q)[..., None]
        return self._push(OpKind.NORMALIZE, (a.index,), a.value / s, s=s, eta=eta)

    def hypersphere(self, a, eps: float = NORMALIZE_EPS) -> Variable:
        """a / |a| with the Euclidean coefficient norm."""
        a = self._lift(a)
        n = np.sqrt(np.sum(a.value ** 2, axis=-1))[..., None]
        if np.any(~(n > eps)):
            raise DegenerateStateError("State has zero Euclidean norm")
        return self._push(OpKind.HYPERSPHERE, (a.index,), a.value / n, n=n)

    def silu(self, a) -> Variable:
        """x * sigmoid(x), elementwise."""
        a = self._lift(a)
        sig = 0.5 * (1.0 + np.tanh(0.5 * a.value))
        return self._push(OpKind.SILU, (a.index,), a.value * sig, sig=sig)

    def inverse(self, a, step: Optional[int] = None) -> Variable:
        a = self._lift(a)
        try:
            value = inverse_array(a.value)
        except NonInvertibleError as e:
            raise CayleySingularityError(
                "2 + B is not invertible (B has eigenvalue -2 in its matrix representation)",
                step=step if step is not None else getattr(e, "index", None),
            ) from e
        return self._push(OpKind.INVERSE, (a.index,), value)

    def cayley(self, b, step: Optional[int] = None) -> Variable:
        """(2 - B)(2 + B)^-1 for (..., 10) bivector coefficients."""
        B = self.embed_bivector(b)
        two = np.zeros(self.sig.dim, dtype=DEFAULT_DTYPE)
        two[0] = 2.0
        numerator = self.sub(two, B)
        denominator = self.add(two, B)
        return self.gp(numerator, self.inverse(denominator, step=step))

    def sandwich(self, r, x) -> Variable:
        r = self._lift(r)
        return self.gp(self.gp(r, x), self.reverse(r))

    # ------------------------------------------------------------------
    # Attention helpers
    # ------------------------------------------------------------------

    def softmax(self, a, axis: int = -1) -> Variable:
        a = self._lift(a)
        shifted = a.value - np.max(a.value, axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / np.sum(e, axis=axis, keepdims=True)
        return self._push(OpKind.SOFTMAX, (a.index,), y, axis=axis)

    def mask_fill(self, a, mask: np.ndarray, fill: float) -> Variable:
        a = self._lift(a)
        mask = np.asarray(mask, dtype=bool)
        return self._push(OpKind.MASK_FILL, (a.index,), np.where(mask, fill, a.value), mask=mask)

    # ------------------------------------------------------------------
    # Backward rules: each returns one gradient per parent
    # ------------------------------------------------------------------

    def _parent_values(self, node: TapeNode) -> List[np.ndarray]:
        return [self.nodes[p].value for p in node.parents]

    def _add_backward(self, node, g):
        a, b = self._parent_values(node)
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    def _sub_backward(self, node, g):
        a, b = self._parent_values(node)
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    def _mul_backward(self, node, g):
        a, b = self._parent_values(node)
        return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)

    def _scale_backward(self, node, g):
        return (g * node.ctx["c"],)

    def _matmul_backward(self, node, g):
        a, b = self._parent_values(node)
        a2 = a[None, :] if a.ndim == 1 else a
        b2 = b[:, None] if b.ndim == 1 else b
        if a.ndim == 1:
            g = np.expand_dims(g, -2)
        if b.ndim == 1:
            g = np.expand_dims(g, -1)
        ga = g @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g
        return unbroadcast(ga, a2.shape).reshape(a.shape), unbroadcast(gb, b2.shape).reshape(b.shape)

    def _gp_backward(self, node, g):
        a, b = self._parent_values(node)
        return gp_backward(g, a, b, self.sig)

    def _reverse_backward(self, node, g):
        return (g * reversion_signs(self.sig),)

    def _grade_backward(self, node, g):
        return (np.where(node.ctx["keep"], g, 0.0),)

    def _embed_backward(self, node, g):
        return (g[..., list(BIVECTOR_MASKS)],)

    def _take_backward(self, node, g):
        (a,) = self._parent_values(node)
        axis = node.ctx["axis"] % a.ndim
        out = np.zeros_like(a)
        moved_out = np.moveaxis(out, axis, 0)
        np.add.at(moved_out, node.ctx["indices"], np.moveaxis(g, axis, 0))
        return (out,)

    def _index_backward(self, node, g):
        (a,) = self._parent_values(node)
        out = np.zeros_like(a)
        np.add.at(out, node.ctx["idx"], g)
        return (out,)

    def _stack_backward(self, node, g):
        axis = node.ctx["axis"]
        return tuple(np.take(g, k, axis=axis) for k in range(len(node.parents)))

    def _reshape_backward(self, node, g):
        (a,) = self._parent_values(node)
        return (g.reshape(a.shape),)

    def _scalar_product_backward(self, node, g):
        a, b = self._parent_values(node)
        eta = node.ctx["eta"]
        g = g[..., None]
        return unbroadcast(g * b * eta, a.shape), unbroadcast(g * a * eta, b.shape)

    def _euclidean_norm_backward(self, node, g):
        (a,) = self._parent_values(node)
        denom = np.maximum(node.value, node.ctx["eps"])[..., None]
        return (g[..., None] * a / denom,)

    def _normalize_backward(self, node, g):
        (a,) = self._parent_values(node)
        s, eta = node.ctx["s"], node.ctx["eta"]
        radial = np.sum(g * a, axis=-1, keepdims=True)
        return (g / s - radial * eta * a / s ** 3,)

    def _hypersphere_backward(self, node, g):
        y, n = node.value, node.ctx["n"]
        return ((g - y * np.sum(g * y, axis=-1, keepdims=True)) / n,)

    def _silu_backward(self, node, g):
        (a,) = self._parent_values(node)
        sig = node.ctx["sig"]
        return (g * sig * (1.0 + a * (1.0 - sig)),)

    def _inverse_backward(self, node, g):
        # d(X^-1) = -X^-1 dX X^-1
        Y = node.value
        through_left = self.kernel.adjoint_right(g, Y)
        return (-self.kernel.adjoint_left(through_left, Y),)

    def _softmax_backward(self, node, g):
        y = node.value
        axis = node.ctx["axis"]
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    def _mask_fill_backward(self, node, g):
        return (np.where(node.ctx["mask"], 0.0, g),)

    def _mse_backward(self, node, g):
        diff = node.ctx["diff"]
        gd = g * 2.0 * diff / diff.size
        pred, target = self._parent_values(node)
        return unbroadcast(gd, pred.shape), unbroadcast(-gd, target.shape)

    def _sum_backward(self, node, g):
        (a,) = self._parent_values(node)
        return (np.broadcast_to(g, a.shape).copy(),)

    def grad_of(self, var: Variable) -> Optional[np.ndarray]:
        return self._grads.get(var.index)


def backward(tape: Tape, loss: Variable) -> Dict[str, np.ndarray]:
    """Propagate adjoints from a scalar loss; returns gradients of named parameters."""
    if len(tape) == 0:
        raise EmptyTapeError("Backward called on an empty tape")
    if loss.tape is not tape:
        raise ValueError("Loss does not belong to this tape")
    if loss.value.size != 1:
        raise ValueError(f"Loss must be scalar, got shape {loss.value.shape}")

    grads: Dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
    for index in range(loss.index, -1, -1):
        g = grads.get(index)
        node = tape.nodes[index]
        if g is None or not node.parents:
            continue
        rule = tape._backward_rules[node.kind]
        for parent, pg in zip(node.parents, rule(node, g)):
            if tape.nodes[parent].kind is OpKind.CONST:
                continue
            if parent in grads:
                grads[parent] = grads[parent] + pg
            else:
                grads[parent] = np.array(pg, dtype=DEFAULT_DTYPE)

    tape._grads = grads
    result = {}
    for index, node in enumerate(tape.nodes):
        if node.kind is OpKind.LEAF:
            result[node.name] = grads.get(index, np.zeros_like(node.value))
    return result


def grad_check(f: Callable[[Tape, Variable], Variable], x: np.ndarray,
               sig: Signature = CL41, floor: float = 1e-3) -> float:
    """Worst relative error between tape gradients and central differences.

    ``f(tape, x_var)`` must build a scalar loss on ``tape``. Step size is
    ``1e-6 * (1 + |x_i|)``; relative errors use ``max(|analytic|, |numeric|, floor)``.
    """
    x = np.array(x, dtype=np.float64)

    def evaluate(point: np.ndarray) -> float:
        tape = Tape(sig)
        value = float(f(tape, tape.constant(point)).value)
        if not np.isfinite(value):
            raise NonFiniteError("Function value is not finite")
        return value

    tape = Tape(sig)
    loss = f(tape, tape.parameter("x", x))
    if not np.isfinite(loss.value).all():
        raise NonFiniteError("Function value is not finite")
    analytic = backward(tape, loss)["x"]

    numeric = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_n = numeric.reshape(-1)
    for i in range(flat_x.size):
        h = 1e-6 * (1.0 + abs(flat_x[i]))
        orig = flat_x[i]
        flat_x[i] = orig + h
        plus = evaluate(x)
        flat_x[i] = orig - h
        minus = evaluate(x)
        flat_x[i] = orig
        flat_n[i] = (plus - minus) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
