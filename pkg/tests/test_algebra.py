"""
Tests for signatures, blade arithmetic and the geometric-product engines.
"""

import numpy as np
import pytest

from config.settings import EngineKind
from core.algebra import (
    CL41, Multivector, Signature, basis_product, blade_masks_of_grade, blade_name,
    build_cayley_table, corrupt_cayley, geometric_product, geometric_product_naive,
    gp_bitmask_array, gp_naive_array, grade_of, inner_scalar, op_counter, outer_product,
    popcount, product_kernel, scalar_norm, scalar_product_fast,
)
from core.errors import GradeError, NonFiniteError, SignatureError, SignatureMismatchError
from core.matrix_iso import product_via_iso_array


class TestSignature:
    """Test signature construction and validation."""

    def test_cl41_layout(self):
        """Cl(4,1) has five generators and 32 blades."""
        assert CL41.n == 5
        assert CL41.dim == 32
        assert CL41.diag == (1, 1, 1, 1, -1)
        assert repr(CL41) == "Signature(Cl(4,1))"

    def test_from_pq(self):
        """from_pq lists positive entries first."""
        assert Signature.from_pq(2, 1).diag == (1, 1, -1)

    def test_single_generator_allowed(self):
        """Cl(0,1) is the smallest supported algebra."""
        sig = Signature.from_pq(0, 1)
        assert sig.dim == 2
        assert basis_product(1, 1, sig) == (0, -1)

    @pytest.mark.parametrize("diag", [(), (1,) * 9, (1, 2)])
    def test_invalid_signatures(self, diag):
        """Too many generators or non-unit entries are rejected."""
        with pytest.raises(SignatureError):
            Signature(diag)

    def test_signature_error_is_value_error(self):
        """Signature errors can be caught as ValueError."""
        with pytest.raises(ValueError):
            Signature((3,))


class TestBladeArithmetic:
    """Test bitmask helpers and the basis product rule."""

    def test_popcount(self):
        """SWAR popcount matches bin().count for every 8-bit mask."""
        masks = np.arange(256)
        assert all(popcount(int(m)) == bin(int(m)).count("1") for m in masks)
        np.testing.assert_array_equal(popcount(masks), [bin(int(m)).count("1") for m in masks])

    def test_grade_of(self):
        """Grade is the number of set bits."""
        assert grade_of(0b11011) == 4

    def test_blade_names(self):
        """Blade names use the signature labels."""
        assert blade_name(0) == "1"
        assert blade_name(3) == "e12"
        assert blade_name(24) == "e+-"

    def test_grade_counts(self):
        """Grade sizes follow the binomial coefficients."""
        assert [len(blade_masks_of_grade(g)) for g in range(6)] == [1, 5, 10, 10, 5, 1]

    def test_generator_squares(self):
        """Generators square to the signature diagonal."""
        for k, d in enumerate(CL41.diag):
            assert basis_product(1 << k, 1 << k, CL41) == (0, d)

    def test_anticommutation(self):
        """Distinct generators anticommute."""
        assert basis_product(1, 2, CL41) == (3, 1)
        assert basis_product(2, 1, CL41) == (3, -1)

    def test_bivector_square(self):
        """e12² = -1 while e+- squares to +1."""
        assert basis_product(3, 3, CL41) == (0, -1)
        assert basis_product(24, 24, CL41) == (0, 1)

    def test_out_of_range(self):
        """Masks beyond the algebra are rejected."""
        with pytest.raises(SignatureError):
            basis_product(32, 1, CL41)


class TestEngines:
    """Test that the three product engines agree."""

    def test_engine_equivalence(self, rng):
        """Naive, bitmask and matrix engines agree on random pairs."""
        A = rng.standard_normal((1000, 32))
        B = rng.standard_normal((1000, 32))
        bitmask = gp_bitmask_array(A, B, CL41)
        np.testing.assert_allclose(gp_naive_array(A, B, CL41), bitmask, rtol=0, atol=1e-10)
        np.testing.assert_allclose(product_via_iso_array(A, B), bitmask, rtol=0, atol=1e-10)

    def test_cayley_table_blocks(self):
        """Every basis pair matches basis_product in all engines."""
        eye = np.eye(32)
        table = build_cayley_table(CL41)
        for i in range(32):
            out = gp_bitmask_array(eye[i], eye, CL41)
            for j in range(32):
                k, w = basis_product(i, j, CL41)
                expected = np.zeros(32)
                expected[k] = w
                np.testing.assert_array_equal(out[j], expected)
                assert table.lookup(i, j) == (k, w)

    def test_kernel_matches_bitmask(self, rng):
        """The cached kernel reproduces the bitmask engine."""
        A, B = rng.standard_normal((2, 20, 32))
        np.testing.assert_allclose(product_kernel(CL41).product(A, B), gp_bitmask_array(A, B, CL41), atol=1e-12)

    def test_corrupted_table_breaks_equivalence(self, rng):
        """A single flipped sign is visible in random products."""
        A, B = rng.standard_normal((2, 100, 32))
        bad = gp_naive_array(A, B, CL41, corrupt_cayley(build_cayley_table(CL41)))
        assert np.max(np.abs(bad - gp_bitmask_array(A, B, CL41))) > 1e-3

    def test_other_signatures(self, rng):
        """Bitmask and naive engines agree beyond Cl(4,1)."""
        sig = Signature.from_pq(3, 0)
        A, B = rng.standard_normal((2, 10, 8))
        np.testing.assert_allclose(gp_naive_array(A, B, sig), gp_bitmask_array(A, B, sig), atol=1e-12)

    def test_associativity(self, rng):
        """(ab)c = a(bc)."""
        a, b, c = (Multivector.random(rng) for _ in range(3))
        assert ((a * b) * c).allclose(a * (b * c), atol=1e-9)

    def test_dispatcher(self, rng):
        """geometric_product routes to every engine with identical results."""
        a, b = Multivector.random(rng), Multivector.random(rng)
        results = [geometric_product(a, b, kind) for kind in EngineKind]
        assert results[0].allclose(results[1]) and results[1].allclose(results[2])
        assert geometric_product(a, b, "naive").allclose(results[0])

    def test_signature_mismatch(self):
        """Mixing algebras is rejected."""
        a = Multivector.scalar(1.0)
        b = Multivector.scalar(1.0, Signature.from_pq(3, 0))
        with pytest.raises(SignatureMismatchError):
            geometric_product_naive(a, b)
        with pytest.raises(SignatureMismatchError):
            a + b


class TestOperationCounts:
    """Test the modeled operation counters."""

    def test_bitmask_count(self):
        """A bitmask product is n * dim² = 5120 MADs."""
        with op_counter.counting() as counter:
            gp_bitmask_array(np.ones(32), np.ones(32), CL41)
            assert counter.get("bitmask") == 5120

    def test_naive_count_and_ratio(self):
        """The naive product is dim³ = 32768, 6.4 times the bitmask count."""
        with op_counter.counting() as counter:
            gp_naive_array(np.ones((2, 32)), np.ones((2, 32)), CL41)
            gp_bitmask_array(np.ones((2, 32)), np.ones((2, 32)), CL41)
            assert counter.get("naive") == 2 * 32768
            assert counter.get("naive") / counter.get("bitmask") == pytest.approx(6.4)

    def test_scalar_fast_path(self, rng):
        """<a ~b>_0 costs 32 MADs and matches the full product."""
        a, b = Multivector.random(rng), Multivector.random(rng)
        with op_counter.counting() as counter:
            fast = scalar_product_fast(a, b)
            assert counter.get("scalar_fast") == 32
        assert fast == pytest.approx((a * ~b)[0], abs=1e-12)

    def test_counter_restores_state(self):
        """counting() switches the counter back off afterwards."""
        previous = op_counter.enabled
        with op_counter.counting():
            assert op_counter.enabled
        assert op_counter.enabled == previous


class TestMultivector:
    """Test the Multivector value type."""

    def test_constructors(self):
        """Basis, scalar and vector constructors place coefficients by mask."""
        assert Multivector.basis(5)[5] == 1.0
        assert Multivector.scalar(2.5)[0] == 2.5
        v = Multivector.vector([1.0, 2.0, 3.0])
        assert (v[1], v[2], v[4]) == (1.0, 2.0, 3.0)

    def test_invalid_coefficients(self):
        """Wrong length or non-finite coefficients are rejected."""
        with pytest.raises(SignatureMismatchError):
            Multivector(np.zeros(8))
        with pytest.raises(NonFiniteError):
            Multivector(np.full(32, np.nan))

    def test_immutable(self):
        """Coefficient arrays are read-only."""
        mv = Multivector.scalar(1.0)
        with pytest.raises(ValueError):
            mv.coeffs[0] = 2.0

    def test_arithmetic(self):
        """Scalars mix with multivectors on both sides."""
        e1 = Multivector.basis(1)
        assert (2 * e1 - e1).allclose(e1)
        assert (1 + e1)[0] == 1.0
        assert (1 - e1)[1] == -1.0
        assert (e1 / 2)[1] == 0.5
        assert (-e1)[1] == -1.0

    def test_reverse_signs(self):
        """Reversion flips grades 2 and 3 only."""
        mv = Multivector(np.ones(32))
        rev = ~mv
        for mask in range(32):
            g = popcount(mask)
            assert rev[mask] == (-1.0 if g in (2, 3) else 1.0)

    def test_reverse_of_product(self, rng):
        """~(ab) = ~b ~a."""
        a, b = Multivector.random(rng), Multivector.random(rng)
        assert (~(a * b)).allclose(~b * ~a, atol=1e-10)

    def test_grade_parts(self, rng):
        """Grade parts sum back to the multivector; even and odd split it."""
        a = Multivector.random(rng)
        total = Multivector.zero()
        for g in range(6):
            total = total + a.grade(g)
        assert total.allclose(a)
        assert (a.even() + a.odd()).allclose(a)

    def test_invalid_grade(self):
        """Grades outside 0..n raise GradeError."""
        with pytest.raises(GradeError):
            Multivector.scalar(1.0).grade(6)

    def test_outer_product(self):
        """Wedge of distinct vectors is the blade; of equal vectors zero."""
        e1, e2 = Multivector.basis(1), Multivector.basis(2)
        assert outer_product(e1, e2).allclose(Multivector.basis(3))
        assert outer_product(e2, e1).allclose(-Multivector.basis(3))
        assert outer_product(e1, e1).allclose(Multivector.zero())

    def test_inner_and_norm(self):
        """<e- e->_0 = -1, and the reversed norm of e- is -1 too."""
        e_minus = Multivector.basis(16)
        assert inner_scalar(e_minus, e_minus) == -1.0
        assert scalar_norm(e_minus) == -1.0
        assert scalar_norm(Multivector.basis(3)) == 1.0

    def test_repr(self):
        """repr names the blades."""
        assert repr(Multivector.basis(24, value=2.0)) == "Multivector(+2*e+-)"
        assert repr(Multivector.zero()) == "Multivector(0)"
