"""
Tests for the reverse-mode tape: per-operation gradient checks and chain stability.
"""

import numpy as np
import pytest

from core.algebra import CL41
from core.autodiff import Tape, backward, gp_backward, grad_check, unbroadcast
from core.conformal import cayley_rotor_array
from core.errors import CayleySingularityError, DegenerateStateError, EmptyTapeError

GRAD_TOL = 1e-4


def _weights(rng, shape):
    return rng.standard_normal(shape)


def _compact_rotors(rng, n):
    """Rotors generated by e12, e13, e23, e1+, e2+, e3+ only."""
    b = np.zeros((n, 10))
    b[:, :6] = rng.uniform(-0.5, 0.5, size=(n, 6))
    return cayley_rotor_array(b)


class TestGradientChecks:
    """Compare tape gradients with central differences for each operation."""

    def test_geometric_product_both_sides(self, rng):
        """Left and right adjoints of the geometric product."""
        other, W = rng.standard_normal(32), _weights(rng, 32)
        assert grad_check(lambda t, x: t.sum(t.mul(t.gp(x, other), W)), rng.standard_normal(32)) < GRAD_TOL
        assert grad_check(lambda t, x: t.sum(t.mul(t.gp(other, x), W)), rng.standard_normal(32)) < GRAD_TOL

    def test_broadcast_product(self, rng):
        """A single multivector broadcast against a batch."""
        batch, W = rng.standard_normal((4, 32)), _weights(rng, (4, 32))
        assert grad_check(lambda t, x: t.sum(t.mul(t.gp(x, batch), W)), rng.standard_normal(32)) < GRAD_TOL

    def test_reverse_and_grade(self, rng):
        """Reversion and grade projection."""
        W = _weights(rng, 32)
        f = lambda t, x: t.sum(t.mul(t.grade_project(t.reverse(x), 2), W))
        assert grad_check(f, rng.standard_normal(32)) < GRAD_TOL

    def test_scalar_product(self, rng):
        """<a ~a>_0 has gradient 2 eta a."""
        assert grad_check(lambda t, x: t.sum(t.scalar_product(x, x)), rng.standard_normal(32)) < GRAD_TOL

    def test_normalize(self, rng):
        """Manifold normalization of a scaled rotor."""
        psi = 1.3 * _compact_rotors(rng, 1)[0] + 0.01 * rng.standard_normal(32)
        W = _weights(rng, 32)
        assert grad_check(lambda t, x: t.sum(t.mul(t.normalize(x), W)), psi) < GRAD_TOL

    def test_inverse(self, rng):
        """Adjoint of the multivector inverse."""
        a = 0.2 * rng.standard_normal(32)
        a[0] += 2.0
        W = _weights(rng, 32)
        assert grad_check(lambda t, x: t.sum(t.mul(t.inverse(x), W)), a) < GRAD_TOL

    def test_cayley(self, rng):
        """Gradient through the Cayley map to the ten bivector coefficients."""
        W = _weights(rng, 32)
        f = lambda t, b: t.sum(t.mul(t.cayley(b), W))
        assert grad_check(f, rng.uniform(-0.5, 0.5, size=10)) < GRAD_TOL

    def test_sandwich(self, rng):
        """R X ~R with respect to the rotor coefficients."""
        X, W = rng.standard_normal(32), _weights(rng, 32)
        R = _compact_rotors(rng, 1)[0]
        assert grad_check(lambda t, r: t.sum(t.mul(t.sandwich(r, X), W)), R) < GRAD_TOL

    def test_matmul_and_mse(self, rng):
        """Matrix products feeding a mean squared error."""
        A, target = rng.standard_normal((5, 3)), rng.standard_normal((5, 4))
        assert grad_check(lambda t, w: t.mse(t.matmul(A, w), target), rng.standard_normal((3, 4))) < GRAD_TOL

    def test_softmax_with_mask(self, rng):
        """Masked softmax rows."""
        mask = np.triu(np.ones((4, 4), dtype=bool), k=1)
        W = _weights(rng, (4, 4))
        f = lambda t, x: t.sum(t.mul(t.softmax(t.mask_fill(x, mask, -np.inf)), W))
        assert grad_check(f, rng.standard_normal((4, 4))) < GRAD_TOL

    def test_shape_operations(self, rng):
        """take, index, stack and reshape route gradients back."""
        W = _weights(rng, (3, 10))

        def f(t, x):
            picked = t.take(t.reshape(x, (2, 3, 32)), [0, 3, 5, 9, 24], axis=-1)
            rows = t.stack([t.index(picked, 1), t.index(picked, 0)], axis=-1)
            return t.sum(t.mul(t.reshape(rows, (3, 10)), W))

        assert grad_check(f, rng.standard_normal(192)) < GRAD_TOL

    def test_euclidean_norm(self, rng):
        """Length of bivector lanes."""
        assert grad_check(lambda t, x: t.sum(t.euclidean_norm(x)), rng.standard_normal((3, 10))) < GRAD_TOL

    def test_hypersphere(self, rng):
        """Projection onto the Euclidean unit sphere, boosted states included."""
        b = np.zeros(10)
        b[9] = 0.8
        psi = cayley_rotor_array(b) + 0.1 * rng.standard_normal(32)
        W = _weights(rng, (2, 32))
        f = lambda t, x: t.sum(t.mul(t.hypersphere(x), W))
        assert grad_check(f, np.stack([psi, 3.0 * psi])) < GRAD_TOL

    def test_silu(self, rng):
        """x * sigmoid(x) over both signs."""
        W = _weights(rng, (3, 5))
        assert grad_check(lambda t, x: t.sum(t.mul(t.silu(x), W)), 3.0 * rng.standard_normal((3, 5))) < GRAD_TOL

    def test_scale_and_sub(self, rng):
        """Scaling and subtraction are linear."""
        W = _weights(rng, 32)
        f = lambda t, x: t.sum(t.mul(t.sub(t.scale(x, 3.0), W), W))
        assert grad_check(f, rng.standard_normal(32)) < GRAD_TOL


class TestChainStability:
    """Gradient norms through long chains of compact rotors."""

    @pytest.mark.parametrize("length", [10, 100, 1000])
    def test_gradient_norm_preserved(self, rng, length):
        """Back-propagating through left multiplication by unit rotors keeps the norm."""
        rotors = _compact_rotors(rng, length)
        g = rng.standard_normal(32)
        start = np.linalg.norm(g)
        for R in rotors[::-1]:
            g = gp_backward(g, R, g)[1]
        assert np.linalg.norm(g) == pytest.approx(start, rel=1e-8)

    def test_normalized_chain_gradients(self, rng):
        """A short normalized recurrence passes a finite-difference check."""
        X = rng.standard_normal(32)
        W = _weights(rng, 32)

        def f(t, b):
            psi = np.zeros(32)
            psi[0] = 1.0
            state = t.constant(psi)
            for step in range(3):
                state = t.normalize(t.gp(t.cayley(t.index(b, step)), state), step=step)
            return t.sum(t.mul(t.sandwich(state, X), W))

        assert grad_check(f, rng.uniform(-0.4, 0.4, size=(3, 10))) < GRAD_TOL


class TestTape:
    """Test tape bookkeeping and error reporting."""

    def test_parameters_by_name(self):
        """Gradients come back keyed by parameter name; constants get none."""
        tape = Tape()
        w = tape.parameter("w", np.array([1.0, 2.0]))
        c = tape.constant(np.array([3.0, 4.0]))
        grads = backward(tape, tape.sum(tape.mul(w, c)))
        assert set(grads) == {"w"}
        np.testing.assert_array_equal(grads["w"], [3.0, 4.0])
        assert tape.grad_of(c) is None

    def test_unused_parameter_gets_zeros(self):
        """Parameters not reaching the loss have zero gradient."""
        tape = Tape()
        tape.parameter("unused", np.ones(3))
        w = tape.parameter("w", 2.0)
        grads = backward(tape, tape.scale(w, 5.0))
        np.testing.assert_array_equal(grads["unused"], np.zeros(3))
        assert float(grads["w"]) == 5.0

    def test_operator_overloads(self):
        """+, - and @ record on the owning tape."""
        tape = Tape()
        a = tape.parameter("a", np.eye(2))
        out = tape.sum((a @ np.ones((2, 2))) + a - np.eye(2))
        grads = backward(tape, out)
        np.testing.assert_array_equal(grads["a"], np.full((2, 2), 3.0))

    def test_empty_tape(self):
        """Backward on an empty tape raises."""
        other = Tape()
        with pytest.raises(EmptyTapeError):
            backward(Tape(), other.constant(1.0))

    def test_non_scalar_loss(self):
        """The loss must be a single value."""
        tape = Tape()
        x = tape.parameter("x", np.ones(3))
        with pytest.raises(ValueError):
            backward(tape, x)

    def test_foreign_variable(self):
        """Variables cannot cross tapes."""
        first, second = Tape(), Tape()
        x = first.parameter("x", 1.0)
        with pytest.raises(ValueError):
            second.add(x, 1.0)

    def test_cayley_singularity_on_tape(self):
        """B = 2 e+- fails with the step index attached."""
        b = np.zeros(10)
        b[9] = 2.0
        tape = Tape()
        with pytest.raises(CayleySingularityError) as excinfo:
            tape.cayley(tape.parameter("b", b), step=4)
        assert excinfo.value.step == 4

    def test_degenerate_normalize_on_tape(self):
        """A null state cannot be normalized."""
        tape = Tape()
        with pytest.raises(DegenerateStateError):
            tape.normalize(np.zeros(32), step=2)

    def test_unbroadcast(self):
        """Broadcast gradients are summed back to the operand shape."""
        g = np.ones((4, 3, 32))
        assert unbroadcast(g, (32,)).shape == (32,)
        np.testing.assert_array_equal(unbroadcast(g, (3, 1)), np.full((3, 1), 128.0))
        assert len(Tape(CL41)) == 0
