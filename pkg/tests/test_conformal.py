"""
Tests for conformal lifting, rotors and the Cayley map.
"""

import numpy as np
import pytest

from core.algebra import CL41, Multivector, scalar_product_array
from core.conformal import (
    BIVECTOR_MASKS, E_MINUS, E_PLUS, Bivector, ConformalPoint, GeneratorKind, Rotor,
    bivector_basis, bivector_generators, cayley_rotor, cayley_rotor_array, conformal_inner,
    embed_bivector_array, euclidean_norm_of_grade2, hypersphere_array, lift, lift_array, manifold_normalize,
    mv_inverse, normalize_array, null_basis, null_generator, project_down, sandwich,
    sandwich_array, translator,
)
from core.errors import (
    CayleySingularityError, DegenerateStateError, NonFiniteError, NotARotorError,
    UnnormalizedRotorError,
)


class TestLifting:
    """Test the null-cone embedding."""

    def test_null_basis(self):
        """e_o and e_inf are null with e_o . e_inf = -1."""
        e_o, e_inf = null_basis()
        assert conformal_inner(ConformalPoint(e_o), ConformalPoint(e_o)) == 0.0
        assert (e_o * e_o)[0] == 0.0 and (e_inf * e_inf)[0] == 0.0
        assert (e_o * e_inf + e_inf * e_o)[0] / 2 == -1.0

    def test_lift_coefficients(self):
        """lift puts |x|²/2 -/+ 1/2 on e+ and e-."""
        X = lift([1.0, 2.0, 2.0]).mv
        assert (X[1], X[2], X[4]) == (1.0, 2.0, 2.0)
        assert X[E_PLUS] == 4.0
        assert X[E_MINUS] == 5.0

    def test_origin_is_e_o(self):
        """The origin lifts to e_o."""
        e_o, _ = null_basis()
        assert lift([0.0, 0.0, 0.0]).mv.allclose(e_o)

    def test_isometric_embedding(self, rng):
        """X_i . X_j = -|x_i - x_j|²/2 on 1000 pairs."""
        x, y = rng.uniform(-10, 10, size=(2, 1000, 3))
        inner = scalar_product_array(lift_array(x), lift_array(y), CL41)
        np.testing.assert_allclose(inner, -0.5 * np.sum((x - y) ** 2, axis=-1), rtol=0, atol=1e-10)

    def test_planar_points_padded(self):
        """Two-dimensional inputs lift with z = 0."""
        np.testing.assert_array_equal(lift_array([[1.0, 2.0]]), lift_array([[1.0, 2.0, 0.0]]))

    def test_too_many_coordinates(self):
        """Four coordinates cannot be lifted."""
        with pytest.raises(ValueError):
            lift_array(np.zeros(4))

    def test_non_finite(self):
        """NaN coordinates are rejected."""
        with pytest.raises(NonFiniteError):
            lift([np.nan, 0.0, 0.0])

    def test_project_down(self, rng):
        """project_down recovers the point, also after rescaling."""
        x = rng.uniform(-5, 5, size=3)
        np.testing.assert_allclose(project_down(lift(x)), x, atol=1e-12)
        np.testing.assert_allclose(project_down(lift(x).mv * 3.0), x, atol=1e-12)

    def test_non_null_point_rejected(self):
        """A unit vector along e1 is not a conformal point."""
        with pytest.raises(ValueError):
            ConformalPoint(Multivector.basis(1))
        with pytest.raises(ValueError):
            ConformalPoint(Multivector.basis(3))


class TestRotors:
    """Test rotor validation and sandwich actions."""

    def test_identity(self):
        """The identity rotor has unit norm."""
        R = Rotor.identity()
        assert R.norm() == 1.0 and R.is_normalized()

    def test_odd_rejected(self):
        """Odd-grade content is not a rotor."""
        with pytest.raises(NotARotorError):
            Rotor(Multivector.basis(1))

    def test_rotation_in_plane(self):
        """B = theta e12 rotates e1 by the Cayley angle."""
        theta = 0.4
        b = np.zeros(10)
        b[0] = theta
        R = cayley_rotor(Bivector(b))
        a = (4 - theta ** 2) / (4 + theta ** 2)
        s = 4 * theta / (4 + theta ** 2)
        assert R.mv[0] == pytest.approx(a)
        assert R.mv[3] == pytest.approx(-s)
        rotated = sandwich(R, Multivector.basis(1))
        assert rotated[1] == pytest.approx(a * a - s * s)
        assert rotated[2] == pytest.approx(2 * a * s)

    def test_rotor_isometry(self, rng):
        """Sandwiches preserve <X ~X>_0."""
        R = cayley_rotor_array(rng.uniform(-0.5, 0.5, size=(1000, 10)))
        X = rng.standard_normal((1000, 32))
        Y = sandwich_array(R, X)
        before = scalar_product_array(X, X, CL41)
        np.testing.assert_allclose(scalar_product_array(Y, Y, CL41), before, rtol=0,
                                   atol=1e-9 * (1 + np.max(np.abs(before))))

    def test_sandwich_requires_unit_rotor(self):
        """An unnormalized rotor cannot act by sandwich."""
        with pytest.raises(UnnormalizedRotorError):
            sandwich(Rotor(Multivector.scalar(2.0)), Multivector.basis(1))

    def test_translator(self, rng):
        """T X ~T lifts the translated point."""
        x, t = rng.uniform(-3, 3, size=(2, 3))
        moved = sandwich(translator(t), lift(x).mv)
        assert moved.allclose(lift(x + t).mv, atol=1e-10)

    def test_compose(self):
        """Composing translators adds translations."""
        T = translator([1.0, 0.0, 0.0]).compose(translator([0.0, 2.0, 0.0]))
        assert T.mv.allclose(translator([1.0, 2.0, 0.0]).mv, atol=1e-12)
        assert (T * T.reverse()).mv.allclose(Multivector.scalar(1.0), atol=1e-12)

    def test_mv_inverse(self, rng):
        """a a^-1 = 1."""
        a = Multivector.random(rng)
        assert (a * mv_inverse(a)).allclose(Multivector.scalar(1.0), atol=1e-9)


class TestCayley:
    """Test the Cayley map and manifold normalization."""

    def test_unit_norm(self, rng):
        """Cayley rotors satisfy <R ~R>_0 = 1."""
        R = cayley_rotor_array(rng.uniform(-0.5, 0.5, size=(1000, 10)))
        np.testing.assert_allclose(scalar_product_array(R, R, CL41), 1.0, atol=1e-9)

    def test_zero_bivector(self):
        """The Cayley map sends 0 to the identity."""
        assert cayley_rotor(Bivector(np.zeros(10))).mv.allclose(Multivector.scalar(1.0))

    def test_first_order(self):
        """For small B the rotor is close to 1 - B."""
        b = np.full(10, 1e-4)
        R = cayley_rotor_array(b)
        expected = -embed_bivector_array(b)
        expected[0] += 1.0
        np.testing.assert_allclose(R, expected, atol=1e-7)

    def test_singularity_reports_step(self):
        """B = 2 e+- makes 2 + B singular; the step index is reported."""
        B = np.zeros((3, 10))
        B[1, 9] = 2.0
        with pytest.raises(CayleySingularityError) as excinfo:
            cayley_rotor_array(B, step_offset=5)
        assert excinfo.value.step == 6
        assert "step 6" in str(excinfo.value)

    def test_from_multivector(self):
        """Grade-2 multivectors convert to Bivector; others do not."""
        b = Bivector.from_multivector(Multivector.basis(24, value=0.5))
        assert b.b[9] == 0.5
        with pytest.raises(ValueError):
            Bivector.from_multivector(Multivector.basis(1))

    def test_normalize(self, rng):
        """Normalization rescales positive states to unit norm."""
        psi = 3.0 * cayley_rotor_array(rng.uniform(-0.3, 0.3, size=(5, 10)))
        out = normalize_array(psi)
        np.testing.assert_allclose(scalar_product_array(out, out, CL41), 1.0, atol=1e-12)
        assert manifold_normalize(Multivector(psi[0])).is_normalized()

    def test_hypersphere(self, rng):
        """Euclidean projection matches manifold normalization on rotations and stays bounded on boosts."""
        b = np.zeros((5, 10))
        b[:, :6] = rng.uniform(-0.5, 0.5, size=(5, 6))
        psi = 2.0 * cayley_rotor_array(b)
        np.testing.assert_allclose(hypersphere_array(psi), normalize_array(psi), atol=1e-12)
        boost = np.zeros(10)
        boost[9] = 1.5
        R = cayley_rotor_array(boost)
        assert np.linalg.norm(R) > 1.5
        out = hypersphere_array(np.stack([R, 1e6 * R]))
        np.testing.assert_allclose(np.linalg.norm(out, axis=-1), 1.0, atol=1e-12)
        with pytest.raises(DegenerateStateError):
            hypersphere_array(np.zeros(32))

    def test_normalize_degenerate(self):
        """Null or negative states raise with their step index."""
        psi = np.zeros((2, 32))
        psi[0, 0] = 1.0
        with pytest.raises(DegenerateStateError) as excinfo:
            normalize_array(psi, step_offset=10)
        assert excinfo.value.step == 11


class TestGenerators:
    """Test the bivector basis and its labels."""

    def test_ten_generators(self):
        """Ten grade-2 masks in ascending order."""
        assert bivector_basis() == BIVECTOR_MASKS
        assert len(BIVECTOR_MASKS) == 10
        assert list(BIVECTOR_MASKS) == sorted(BIVECTOR_MASKS)

    def test_kinds(self):
        """Three rotations, three each of the e+ and e- families, one dilation."""
        kinds = [g.kind for g in bivector_generators()]
        assert kinds.count(GeneratorKind.ROTATION) == 3
        assert kinds.count(GeneratorKind.TRANSLATION_LIKE) == 3
        assert kinds.count(GeneratorKind.SPECIAL_CONFORMAL) == 3
        assert kinds.count(GeneratorKind.DILATION) == 1
        assert bivector_generators()[9].name == "e+-"

    def test_translation_generator(self):
        """exp of the exact translation generator is a translator."""
        n = null_generator(0, GeneratorKind.TRANSLATION_LIKE).to_multivector()
        # translator for t = e1 is 1 - n/2 since e1 e_inf = e1+ + e1-
        assert (1.0 - n * 0.5).allclose(translator([1.0, 0.0, 0.0]).mv)

    def test_rotation_generator_rejected(self):
        """Rotations have no null generator."""
        with pytest.raises(ValueError):
            null_generator(0, GeneratorKind.ROTATION)

    def test_euclidean_norm_of_grade2(self):
        """Only grade-2 lanes contribute."""
        A = np.zeros(32)
        A[0] = 10.0
        A[3], A[24] = 3.0, 4.0
        assert euclidean_norm_of_grade2(A) == 5.0
