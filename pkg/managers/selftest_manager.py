"""
Self-Test Manager
Runs the algebraic, geometric, model and task invariants as named checks and
summarizes them as a machine-readable report.
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from config.settings import SCHEMA_VERSION, NBodyConfig
from core.algebra import (
    CL41, Multivector, Signature, basis_product, build_cayley_table, corrupt_cayley,
    gp_bitmask_array, gp_naive_array, grade_project_array, op_counter, outer_product,
    reverse_array, scalar_product_array, scalar_product_fast,
)
from core.autodiff import gp_backward, grad_check
from core.conformal import (
    Bivector, cayley_rotor, cayley_rotor_array, lift, lift_array, project_down, sandwich,
    sandwich_array, translator,
)
from core.errors import CayleySingularityError, SignatureMismatchError
from core.matrix_iso import product_via_iso_array, rho_array, rho_inverse_array
from models.accumulator import RraParams, rra_forward, state_norm_deviation
from models.attention import GpaParams, gpa_forward
from models.initialization import product_variance_ratio
from tasks.metrics import mcc
from tasks.nbody import circular_two_body, energy_drift, integrate_frames, rk4_integrate, Trajectory
from tasks.snake import SnakeLabel, generate_snake_dataset, snake_connectivity_algebraic

logger = logging.getLogger(__name__)

N_PAIRS = 1000
EQUIVALENCE_ATOL = 1e-10
# bivector slots of e12, e13, e23, e1+, e2+, e3+: left multiplication by their rotors is orthogonal
COMPACT_SLOTS = 6

CheckFn = Callable[[], Tuple[bool, str]]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


@dataclass
class SelfTestReport:
    seed: int
    config_hash: str
    checks: List[CheckResult] = field(default_factory=list)
    schema_version: str = SCHEMA_VERSION

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def first_failure(self) -> Optional[str]:
        return next((c.name for c in self.checks if not c.passed), None)

    def to_dict(self) -> Dict[str, object]:
        return {
            "schema_version": self.schema_version,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "passed": self.passed,
            "first_failure": self.first_failure,
            "checks": [asdict(c) for c in self.checks],
        }


class SelfTestManager:
    """Named invariant checks over every layer of the toolkit."""

    def __init__(self, seed: int = 0, corrupt_table: bool = False, snake_samples: int = 200):
        self.seed = seed
        self.snake_samples = snake_samples
        table = build_cayley_table(CL41)
        self.table = corrupt_cayley(table) if corrupt_table else table
        self.checks: List[Tuple[str, CheckFn]] = [
            ("engine equivalence", self.check_engine_equivalence),
            ("cayley table blocks", self.check_cayley_table),
            ("basis vector squares", self.check_basis_squares),
            ("associativity", self.check_associativity),
            ("reversion anti-automorphism", self.check_reversion),
            ("grade decomposition", self.check_grade_decomposition),
            ("signature mismatch rejected", self.check_signature_mismatch),
            ("outer product", self.check_outer_product),
            ("scalar fast path", self.check_scalar_fast_path),
            ("bitmask op count", self.check_bitmask_ops),
            ("naive op count", self.check_naive_ops),
            ("matrix-iso flop count", self.check_iso_flops),
            ("matrix isomorphism round trip", self.check_iso_round_trip),
            ("isometric embedding", self.check_isometric_embedding),
            ("null cone", self.check_null_cone),
            ("projection round trip", self.check_projection),
            ("translator action", self.check_translator),
            ("cayley adherence", self.check_cayley_adherence),
            ("cayley singularity detected", self.check_cayley_singularity),
            ("rotor isometry", self.check_rotor_isometry),
            ("gradient norm preservation", self.check_gradient_norm),
            ("finite-difference gradients", self.check_grad_check),
            ("state stability", self.check_state_stability),
            ("ablation leaves manifold", self.check_ablation_drift),
            ("initialization variance", self.check_init_variance),
            ("gpa causality", self.check_gpa_causality),
            ("gpa attention rows", self.check_gpa_rows),
            ("snake connectivity", self.check_snake),
            ("nbody energy conservation", self.check_nbody_energy),
        ]

    def _rng(self, salt: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, salt])

    def run(self, config_hash: str = "") -> SelfTestReport:
        report = SelfTestReport(seed=self.seed, config_hash=config_hash)
        for name, fn in self.checks:
            started = time.perf_counter()
            try:
                passed, detail = fn()
            except Exception as e:
                passed, detail = False, f"{type(e).__name__}: {e}"
            result = CheckResult(name, bool(passed), detail, round(time.perf_counter() - started, 6))
            report.checks.append(result)
            if result.passed:
                logger.info(f"✅ {name}: {detail}")
            else:
                logger.error(f"❌ {name}: {detail}")
        logger.info(f"Self-test: {sum(c.passed for c in report.checks)}/{len(report.checks)} checks passed")
        return report

    # ------------------------------------------------------------------
    # Algebra
    # ------------------------------------------------------------------

    def check_engine_equivalence(self):
        rng = self._rng(1)
        A = rng.standard_normal((N_PAIRS, CL41.dim))
        B = rng.standard_normal((N_PAIRS, CL41.dim))
        naive = gp_naive_array(A, B, CL41, self.table)
        bitmask = gp_bitmask_array(A, B, CL41)
        iso = product_via_iso_array(A, B)
        err = max(np.max(np.abs(naive - bitmask)), np.max(np.abs(iso - bitmask)))
        return err < EQUIVALENCE_ATOL, f"max deviation {err:.2e} over {N_PAIRS} pairs"

    def check_cayley_table(self):
        eye = np.eye(CL41.dim)
        expected = np.zeros((CL41.dim, CL41.dim, CL41.dim))
        wrong_entries = 0
        for i in range(CL41.dim):
            for j in range(CL41.dim):
                k, w = basis_product(i, j, CL41)
                expected[i, j, k] = w
                wrong_entries += self.table.lookup(i, j) != (k, w)
        A, B = eye[:, None, :], eye[None, :, :]
        engines = {
            "naive": gp_naive_array(A, B, CL41, self.table),
            "bitmask": gp_bitmask_array(A, B, CL41),
            "matrix-iso": product_via_iso_array(np.broadcast_to(A, expected.shape),
                                                np.broadcast_to(B, expected.shape)),
        }
        bad = [name for name, out in engines.items() if np.max(np.abs(out - expected)) > EQUIVALENCE_ATOL]
        if wrong_entries:
            bad.append(f"{wrong_entries} stored table entries")
        return not bad, "all 1024 blade pairs match" if not bad else f"mismatching engines: {bad}"

    def check_basis_squares(self):
        squares = [float(gp_bitmask_array(np.eye(CL41.dim)[1 << k], np.eye(CL41.dim)[1 << k], CL41)[0])
                   for k in range(CL41.n)]
        return squares == list(CL41.diag), f"e_k² = {squares}"

    def check_associativity(self):
        rng = self._rng(2)
        a, b, c = (rng.standard_normal((100, CL41.dim)) for _ in range(3))
        left = gp_bitmask_array(gp_bitmask_array(a, b, CL41), c, CL41)
        right = gp_bitmask_array(a, gp_bitmask_array(b, c, CL41), CL41)
        err = float(np.max(np.abs(left - right)))
        return err < 1e-9, f"max deviation {err:.2e}"

    def check_reversion(self):
        rng = self._rng(3)
        a, b = rng.standard_normal((2, 100, CL41.dim))
        lhs = reverse_array(gp_bitmask_array(a, b, CL41), CL41)
        rhs = gp_bitmask_array(reverse_array(b, CL41), reverse_array(a, CL41), CL41)
        err = float(np.max(np.abs(lhs - rhs)))
        return err < 1e-10, f"max deviation {err:.2e}"

    def check_grade_decomposition(self):
        a = self._rng(4).standard_normal(CL41.dim)
        total = sum(grade_project_array(a, g, CL41) for g in range(CL41.n + 1))
        return bool(np.array_equal(total, a)), "sum of grade parts reproduces the input"

    def check_signature_mismatch(self):
        try:
            Multivector.scalar(1.0) * Multivector.scalar(1.0, Signature.from_pq(3, 0))
        except SignatureMismatchError:
            return True, "Cl(4,1) x Cl(3,0) rejected"
        return False, "mixed-signature product was accepted"

    def check_outer_product(self):
        e1, e2 = Multivector.basis(1), Multivector.basis(2)
        ok = outer_product(e1, e2).allclose(Multivector.basis(3)) and outer_product(e1, e1).allclose(Multivector.zero())
        return ok, "e1^e2 = e12, e1^e1 = 0"

    def check_scalar_fast_path(self):
        rng = self._rng(5)
        a, b = Multivector.random(rng), Multivector.random(rng)
        with op_counter.counting() as counter:
            fast = scalar_product_fast(a, b)
            ops = counter.get("scalar_fast")
        full = (a * ~b)[0]
        return abs(fast - full) < 1e-12 and ops == CL41.dim, f"{ops} MADs, deviation {abs(fast - full):.2e}"

    def check_bitmask_ops(self):
        A = np.ones((1, CL41.dim))
        with op_counter.counting() as counter:
            gp_bitmask_array(A, A, CL41)
            ops = counter.get("bitmask")
        return ops == 5120, f"{ops} modeled MADs per product"

    def check_naive_ops(self):
        A = np.ones((1, CL41.dim))
        with op_counter.counting() as counter:
            gp_naive_array(A, A, CL41)
            gp_bitmask_array(A, A, CL41)
            naive, bitmask = counter.get("naive"), counter.get("bitmask")
        return naive == 32768 and naive / bitmask == 6.4, f"{naive} modeled ops, ratio {naive / bitmask:.2f}"

    def check_iso_flops(self):
        A = np.ones((1, CL41.dim))
        with op_counter.counting() as counter:
            product_via_iso_array(A, A)
            flops = counter.get("iso_gemm")
        return flops <= 256, f"{flops} real FLOPs per product"

    def check_iso_round_trip(self):
        a = self._rng(6).standard_normal((50, CL41.dim))
        err = float(np.max(np.abs(rho_inverse_array(rho_array(a)) - a)))
        return err < 1e-12, f"max deviation {err:.2e}"

    # ------------------------------------------------------------------
    # Conformal geometry
    # ------------------------------------------------------------------

    def check_isometric_embedding(self):
        rng = self._rng(7)
        x, y = rng.uniform(-10.0, 10.0, size=(2, N_PAIRS, 3))
        inner = scalar_product_array(lift_array(x), lift_array(y), CL41)
        err = float(np.max(np.abs(inner + 0.5 * np.sum((x - y) ** 2, axis=-1))))
        return err < 1e-10, f"max |X.Y + d²/2| = {err:.2e}"

    def check_null_cone(self):
        X = lift_array(self._rng(8).uniform(-10.0, 10.0, size=(N_PAIRS, 3)))
        err = float(np.max(np.abs(scalar_product_array(X, X, CL41))))
        return err < 1e-10, f"max |X.X| = {err:.2e}"

    def check_projection(self):
        x = self._rng(9).uniform(-10.0, 10.0, size=3)
        err = float(np.max(np.abs(project_down(lift(x)) - x)))
        return err < 1e-12, f"deviation {err:.2e}"

    def check_translator(self):
        rng = self._rng(10)
        x, t = rng.uniform(-5.0, 5.0, size=(2, 3))
        moved = sandwich(translator(t), lift(x).mv)
        err = float(np.max(np.abs(project_down(moved) - (x + t))))
        return err < 1e-10, f"deviation {err:.2e}"

    def check_cayley_adherence(self):
        B = self._rng(11).uniform(-0.5, 0.5, size=(N_PAIRS, 10))
        R = cayley_rotor_array(B)
        err = float(np.max(np.abs(scalar_product_array(R, R, CL41) - 1.0)))
        return err < 1e-9, f"max |<R ~R> - 1| = {err:.2e}"

    def check_cayley_singularity(self):
        b = np.zeros(10)
        b[9] = 2.0
        try:
            cayley_rotor(Bivector(b))
        except CayleySingularityError as e:
            return True, str(e)
        return False, "2 e+- produced a rotor"

    def check_rotor_isometry(self):
        rng = self._rng(12)
        R = cayley_rotor_array(rng.uniform(-0.5, 0.5, size=(N_PAIRS, 10)))
        X = rng.standard_normal((N_PAIRS, CL41.dim))
        before = scalar_product_array(X, X, CL41)
        after = scalar_product_array(sandwich_array(R, X), sandwich_array(R, X), CL41)
        err = float(np.max(np.abs(after - before) / (1.0 + np.abs(before))))
        return err < 1e-9, f"max relative change {err:.2e}"

    # ------------------------------------------------------------------
    # Gradients and recurrence
    # ------------------------------------------------------------------

    def check_gradient_norm(self):
        rng = self._rng(13)
        b = np.zeros(10)
        b[:COMPACT_SLOTS] = rng.uniform(-0.5, 0.5, COMPACT_SLOTS)
        R = cayley_rotor_array(b)
        g0 = rng.standard_normal(CL41.dim)
        g = g0
        for _ in range(1000):
            _, g = gp_backward(g, R, g)
        ratio = float(np.linalg.norm(g) / np.linalg.norm(g0))
        return abs(ratio - 1.0) <= 1e-6, f"adjoint norm ratio after 1000 steps {ratio:.9f}"

    def check_grad_check(self):
        rng = self._rng(14)
        X = rng.standard_normal((3, CL41.dim))
        W = rng.standard_normal((3, CL41.dim))
        # scaled rotors keep <Psi ~Psi> positive under left multiplication by R
        psi = 1.3 * cayley_rotor_array(rng.uniform(-0.3, 0.3, size=(3, 10)))

        def loss(tape, b):
            R = tape.cayley(b)
            y = tape.normalize(tape.gp(R, tape.constant(psi)))
            s = tape.sandwich(R, tape.constant(X))
            return tape.add(tape.sum(tape.mul(y, W)), tape.mse(s, X))

        err = grad_check(loss, rng.uniform(-0.3, 0.3, size=10))
        return err < 1e-4, f"worst relative error {err:.2e}"

    def check_state_stability(self):
        rng = self._rng(15)
        params = RraParams.init(8, 8, rng)
        states = rra_forward(rng.standard_normal((10000, 8)), params)
        dev = state_norm_deviation(states)
        return dev <= 1e-8, f"max |<Psi ~Psi> - 1| over 10000 steps {dev:.2e}"

    def check_ablation_drift(self):
        rng = self._rng(16)
        params = RraParams.init(8, 8, rng)
        with np.errstate(over="ignore", invalid="ignore"):
            states = rra_forward(rng.standard_normal((200, 8)), params, manifold_norm=False)
            dev = state_norm_deviation(states)
        return not dev <= 1e-6, f"norm deviation without projection {dev:.3g}"

    def check_init_variance(self):
        ratio = product_variance_ratio(10000, 1.0 / CL41.dim, self._rng(17))
        return abs(ratio - 1.0) <= 0.15, f"variance ratio {ratio:.3f}"

    def check_gpa_causality(self):
        rng = self._rng(18)
        params = GpaParams.init(4, rng)
        X = rng.standard_normal((6, 4))
        full = gpa_forward(X, params, causal=True).outputs
        prefix = gpa_forward(X[:3], params, causal=True).outputs
        err = float(np.max(np.abs(full[:3] - prefix)))
        return err < 1e-12, f"prefix deviation {err:.2e}"

    def check_gpa_rows(self):
        rng = self._rng(19)
        attention = gpa_forward(rng.standard_normal((8, 4)), GpaParams.init(4, rng)).attention
        err = float(np.max(np.abs(attention.sum(axis=-1) - 1.0)))
        return err < 1e-12 and bool(np.all(attention >= 0.0)), f"row-sum deviation {err:.2e}"

    # ------------------------------------------------------------------
    # Tasks
    # ------------------------------------------------------------------

    def check_snake(self):
        samples = generate_snake_dataset([16, 32], self.snake_samples, seed=self.seed)
        predictions = [snake_connectivity_algebraic(s) is SnakeLabel.BROKEN for s in samples]
        labels = [s.label is SnakeLabel.BROKEN for s in samples]
        score = mcc(predictions, labels)
        return score == 1.0, f"MCC {score:.4f} over {len(samples)} samples"

    def check_nbody_energy(self):
        frame, masses, _ = circular_two_body()
        binary = Trajectory(masses, integrate_frames(frame, masses, 1.0, 1e-3, 0.01, 100))
        generated = rk4_integrate(NBodyConfig(), seed=self.seed)
        drifts = (energy_drift(binary), energy_drift(generated))
        return max(drifts) <= 1.0, f"drift {drifts[0]:.2e}% (binary), {drifts[1]:.2e}% (generated)"
