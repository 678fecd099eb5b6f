"""
Benchmark Manager
Latency micro-benchmarks for the three product engines and for the Rotor
Accumulator over sequence length, with modeled roofline quantities.
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import SCHEMA_VERSION, BenchConfig, EngineKind, pin_threads
from core.algebra import CL41, DEFAULT_DTYPE, gp_bitmask_array, gp_naive_array, op_counter
from core.data_manager import data_manager
from core.matrix_iso import product_via_iso_array
from models.accumulator import RraParams, rra_forward

logger = logging.getLogger(__name__)

MIN_REPS = 30
PRODUCT_COLUMNS = ("engine", "batch", "reps", "median_ns", "mean_ns", "p95_ns",
                   "mad_count", "bytes_moved", "intensity")
RRA_COLUMNS = ("length", "batch", "reps", "median_ns", "mean_ns", "p95_ns", "ns_per_step")

COEFF_BYTES = np.dtype(DEFAULT_DTYPE).itemsize
# one table read (target index + sign) alongside the two operand loads
TABLE_LOOKUP_BYTES = 16
RRA_FEATURES = 8

_ENGINE_FNS: Dict[EngineKind, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    EngineKind.NAIVE: lambda A, B: gp_naive_array(A, B, CL41),
    EngineKind.BITMASK: lambda A, B: gp_bitmask_array(A, B, CL41),
    EngineKind.MATRIX_ISO: product_via_iso_array,
}

_COUNTER_KEYS = {
    EngineKind.NAIVE: "naive",
    EngineKind.BITMASK: "bitmask",
    EngineKind.MATRIX_ISO: "iso_gemm",
}


@dataclass
class LatencyStats:
    reps: int
    median_ns: float
    mean_ns: float
    p95_ns: float

    @classmethod
    def from_samples(cls, samples_ns: Sequence[int]) -> "LatencyStats":
        arr = np.asarray(samples_ns, dtype=np.float64)
        return cls(len(arr), float(np.median(arr)), float(np.mean(arr)), float(np.percentile(arr, 95)))


@dataclass
class BenchReport:
    """One engine's latency row plus modeled per-product roofline figures."""
    engine: str
    batch: int
    reps: int
    median_ns: float
    mean_ns: float
    p95_ns: float
    mad_count: int
    bytes_moved: int
    intensity: float = field(init=False)

    def __post_init__(self):
        if self.reps < MIN_REPS:
            raise ValueError(f"Benchmarks need at least {MIN_REPS} repetitions, got {self.reps}")
        if self.median_ns > self.p95_ns:
            raise ValueError(f"median {self.median_ns} exceeds p95 {self.p95_ns}")
        self.intensity = self.mad_count / self.bytes_moved

    def as_row(self) -> Dict[str, object]:
        return asdict(self)


@dataclass
class RraBenchRow:
    length: int
    batch: int
    reps: int
    median_ns: float
    mean_ns: float
    p95_ns: float

    @property
    def ns_per_step(self) -> float:
        return self.median_ns / self.length

    def as_row(self) -> Dict[str, object]:
        row = asdict(self)
        row["ns_per_step"] = self.ns_per_step
        return row


@dataclass
class ProductBenchResult:
    reports: List[BenchReport]
    ratios: Dict[str, float]


@dataclass
class RraBenchResult:
    rows: List[RraBenchRow]
    slope: Optional[float]


def time_call(fn: Callable[[], object], reps: int, warmup: int) -> LatencyStats:
    """Monotonic nanosecond timings of ``fn`` after ``warmup`` untimed calls."""
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        started = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - started)
    return LatencyStats.from_samples(samples)


def modeled_bytes(engine: EngineKind, mad_count: int) -> int:
    """Modeled traffic of one product: table lookups for naive, operands and result otherwise."""
    operands = 3 * CL41.dim * COEFF_BYTES
    if engine is EngineKind.NAIVE:
        return mad_count * TABLE_LOOKUP_BYTES
    if engine is EngineKind.MATRIX_ISO:
        # three 4x4 complex matrices
        return 3 * 16 * 2 * COEFF_BYTES
    return operands


def measured_ops_per_product(engine: EngineKind, A: np.ndarray, B: np.ndarray) -> int:
    with op_counter.counting() as counter:
        _ENGINE_FNS[engine](A, B)
        return counter.get(_COUNTER_KEYS[engine]) // A.shape[0]


def loglog_slope(lengths: Sequence[int], latencies: Sequence[float]) -> float:
    """Least-squares slope of log(latency) against log(L)."""
    slope, _ = np.polyfit(np.log(np.asarray(lengths, dtype=np.float64)),
                          np.log(np.asarray(latencies, dtype=np.float64)), 1)
    return float(slope)


class BenchmarkManager:
    """Runs the engine and accumulator benchmarks and writes their CSVs."""

    def __init__(self, config: Optional[BenchConfig] = None):
        self.config = config or BenchConfig()
        self.threads = pin_threads()

    def bench_product(self, engines: Sequence[EngineKind] = tuple(EngineKind), seed: int = 0,
                      batch: Optional[int] = None, reps: Optional[int] = None) -> ProductBenchResult:
        batch = batch or self.config.batch
        reps = reps or self.config.reps
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((batch, CL41.dim))
        B = rng.standard_normal((batch, CL41.dim))

        reports = []
        for engine in engines:
            fn = _ENGINE_FNS[engine]
            stats = time_call(lambda: fn(A, B), reps, self.config.warmup)
            mads = measured_ops_per_product(engine, A, B)
            report = BenchReport(engine=engine.value, batch=batch, reps=stats.reps,
                                 median_ns=stats.median_ns, mean_ns=stats.mean_ns, p95_ns=stats.p95_ns,
                                 mad_count=mads, bytes_moved=modeled_bytes(engine, mads))
            logger.info(f"⏱️  {engine.value}: median {report.median_ns:.0f} ns, "
                        f"{report.mad_count} modeled ops, intensity {report.intensity:.3f}")
            reports.append(report)

        ratios = self._ratios({r.engine: r for r in reports})
        for name, value in ratios.items():
            logger.info(f"{name}: {value:.3f}")
        return ProductBenchResult(reports, ratios)

    @staticmethod
    def _ratios(by_engine: Dict[str, BenchReport]) -> Dict[str, float]:
        ratios = {}
        naive = by_engine.get(EngineKind.NAIVE.value)
        bitmask = by_engine.get(EngineKind.BITMASK.value)
        iso = by_engine.get(EngineKind.MATRIX_ISO.value)
        if naive and bitmask:
            ratios["modeled_ops_naive_over_bitmask"] = naive.mad_count / bitmask.mad_count
            ratios["latency_naive_over_bitmask"] = naive.median_ns / bitmask.median_ns
        if bitmask and iso:
            ratios["latency_bitmask_over_iso"] = bitmask.median_ns / iso.median_ns
            ratios["latency_reduction_iso_vs_bitmask_pct"] = 100.0 * (1.0 - iso.median_ns / bitmask.median_ns)
        if naive and iso:
            ratios["latency_naive_over_iso"] = naive.median_ns / iso.median_ns
        return ratios

    def bench_rra(self, lengths: Optional[Sequence[int]] = None, seed: int = 0,
                  batch: Optional[int] = None, reps: Optional[int] = None) -> RraBenchResult:
        lengths = list(lengths or self.config.lengths)
        batch = batch or self.config.batch
        reps = reps or self.config.reps
        if reps < MIN_REPS:
            raise ValueError(f"Benchmarks need at least {MIN_REPS} repetitions, got {reps}")
        rng = np.random.default_rng(seed)
        params = RraParams.init(RRA_FEATURES, RRA_FEATURES, rng)

        rows = []
        for length in lengths:
            shape = (length, RRA_FEATURES) if batch == 1 else (length, batch, RRA_FEATURES)
            X = rng.standard_normal(shape) * 0.1
            stats = time_call(lambda: rra_forward(X, params), reps, self.config.warmup)
            row = RraBenchRow(length, batch, stats.reps, stats.median_ns, stats.mean_ns, stats.p95_ns)
            logger.info(f"⏱️  RRA L={length}: median {row.median_ns / 1e6:.3f} ms ({row.ns_per_step:.0f} ns/step)")
            rows.append(row)

        slope = None
        if len(rows) >= 2:
            slope = loglog_slope([r.length for r in rows], [r.median_ns for r in rows])
            logger.info(f"📈 log-log latency slope over L: {slope:.3f}")
        return RraBenchResult(rows, slope)

    def _meta(self, seed: int, config_hash: str, **extra) -> Dict[str, object]:
        meta = {"schema_version": SCHEMA_VERSION, "seed": seed, "config_hash": config_hash}
        meta.update({name.lower(): value for name, value in self.threads.items()})
        meta.update(extra)
        return meta

    def write_product_csv(self, path: str, result: ProductBenchResult, seed: int, config_hash: str):
        ratios = {k: f"{v:.6g}" for k, v in result.ratios.items()}
        data_manager.save_table(path, self._meta(seed, config_hash, **ratios), PRODUCT_COLUMNS,
                                [r.as_row() for r in result.reports])

    def write_rra_csv(self, path: str, result: RraBenchResult, seed: int, config_hash: str):
        extra = {} if result.slope is None else {"slope": f"{result.slope:.6g}"}
        data_manager.save_table(path, self._meta(seed, config_hash, **extra), RRA_COLUMNS,
                                [r.as_row() for r in result.rows])


def read_bench_csv(path: str) -> Tuple[Dict[str, str], List[Dict[str, str]]]:
    """Metadata comment and rows of a benchmark CSV."""
    return data_manager.load_table(path)
