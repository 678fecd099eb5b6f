"""
Versor Toolkit Main Application
Entry point for self-tests, engine and accumulator benchmarks, dataset
generation, training and evaluation.
"""

import argparse
import json
import logging
import sys
from typing import Dict, List, Optional

from config.settings import Architecture, EngineKind, TaskName, VersorSettings, pin_threads

# BLAS reads its thread count when numpy first loads
pin_threads()

from core.errors import VersorError  # noqa: E402
from managers.benchmark_manager import BenchmarkManager  # noqa: E402
from managers.experiment_manager import ExperimentManager  # noqa: E402
from managers.selftest_manager import SelfTestManager  # noqa: E402

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: str = "INFO", log_file: Optional[str] = None):
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=getattr(logging, level.upper()), format=LOG_FORMAT, handlers=handlers, force=True)


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Versor geometric-algebra toolkit")
    parser.add_argument("command", choices=["selftest", "bench-product", "bench-rra", "gen", "train", "eval"],
                        help="Subcommand to run")
    parser.add_argument("--config", help="key=value configuration file (flags win over file)")
    parser.add_argument("--seed", type=int, help="Random seed recorded in every artifact")
    parser.add_argument("--engine", choices=[e.value for e in EngineKind],
                        help="Product engine (bench-product runs all three when omitted)")
    parser.add_argument("--task", choices=[t.value for t in TaskName], help="Task for gen/train/eval")
    parser.add_argument("--out", help="Output path (CSV for benchmarks, JSON for metrics and self-test)")
    parser.add_argument("--dataset", help="Dataset path (JSON Lines)")
    parser.add_argument("--checkpoint", help="Model checkpoint path (.npz)")
    parser.add_argument("--lengths", type=_int_list, help="Comma-separated sequence lengths for bench-rra")
    parser.add_argument("--epochs", type=int, help="Training epochs")
    parser.add_argument("--horizon", type=int, help="Rollout horizon")
    parser.add_argument("--batch", type=int, help="Benchmark batch size")
    parser.add_argument("--reps", type=int, help="Benchmark repetitions (at least 30)")
    parser.add_argument("--architecture", choices=[a.value for a in Architecture], help="Model architecture")
    parser.add_argument("--readout-hidden", type=int, help="Width of the SiLU readout layer (0 for a linear readout)")
    parser.add_argument("--no-manifold-norm", action="store_true",
                        help="Ablation: drop the manifold projection from the recurrence")
    parser.add_argument("--corrupt-cayley", action="store_true",
                        help="Self-test negative control: flip one Cayley table sign")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--log-file", help="Also write logs to this file")
    return parser


def resolve_settings(args: argparse.Namespace) -> VersorSettings:
    settings = VersorSettings(args.config)
    overrides: Dict[str, object] = {
        "run.seed": args.seed,
        "run.engine": args.engine,
        "run.task": args.task,
        "run.out": args.out,
        "run.dataset": args.dataset,
        "run.checkpoint": args.checkpoint,
        "train.epochs": args.epochs,
        "train.horizon": args.horizon,
        "bench.batch": args.batch,
        "bench.reps": args.reps,
        "bench.lengths": args.lengths,
        "model.architecture": args.architecture,
        "model.readout_hidden": args.readout_hidden,
    }
    if args.no_manifold_norm:
        overrides["model.manifold_norm"] = False
    settings.apply_overrides(overrides)
    return settings


def cmd_selftest(settings: VersorSettings, corrupt_cayley: bool = False) -> int:
    manager = SelfTestManager(seed=settings.run.seed, corrupt_table=corrupt_cayley)
    report = manager.run(settings.config_hash())
    summary = report.to_dict()
    if settings.run.out:
        from core.data_manager import data_manager
        data_manager.save_report(settings.run.out, summary)
    else:
        print(json.dumps(summary, indent=2))
    if report.passed:
        print(f"✅ All {len(report.checks)} self-test checks passed")
        return EXIT_OK
    print(f"❌ Self-test failed: {report.first_failure}")
    return EXIT_FAILURE


def cmd_bench_product(settings: VersorSettings, engine: Optional[str] = None) -> int:
    manager = BenchmarkManager(settings.bench)
    engines = [EngineKind(engine)] if engine else list(EngineKind)
    result = manager.bench_product(engines, seed=settings.run.seed)
    if settings.run.out:
        manager.write_product_csv(settings.run.out, result, settings.run.seed, settings.config_hash())
    print("\n⏱️  Product engines")
    for r in result.reports:
        print(f"   {r.engine:<11} median {r.median_ns:>12.0f} ns   ops {r.mad_count:>6}   intensity {r.intensity:.3f}")
    for name, value in result.ratios.items():
        print(f"   📈 {name}: {value:.3f}")
    return EXIT_OK


def cmd_bench_rra(settings: VersorSettings) -> int:
    manager = BenchmarkManager(settings.bench)
    result = manager.bench_rra(seed=settings.run.seed)
    if settings.run.out:
        manager.write_rra_csv(settings.run.out, result, settings.run.seed, settings.config_hash())
    print("\n⏱️  Rotor accumulator")
    for row in result.rows:
        print(f"   L={row.length:<6} median {row.median_ns / 1e6:>10.3f} ms   {row.ns_per_step:>10.0f} ns/step")
    if result.slope is not None:
        print(f"   📈 log-log slope: {result.slope:.3f}")
    return EXIT_OK


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run the subcommand and return the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level, args.log_file)

    try:
        settings = resolve_settings(args)
    except (KeyError, ValueError, FileNotFoundError) as e:
        logger.error(f"❌ Invalid configuration: {e}")
        return EXIT_USAGE
    issues = settings.validate_config()
    if issues:
        for issue in issues:
            logger.error(f"❌ {issue}")
        return EXIT_USAGE

    logger.info(f"🤖 Versor {args.command} (seed {settings.run.seed}, config {settings.config_hash()})")
    try:
        if args.command == "selftest":
            return cmd_selftest(settings, args.corrupt_cayley)
        if args.command == "bench-product":
            return cmd_bench_product(settings, args.engine)
        if args.command == "bench-rra":
            return cmd_bench_rra(settings)

        experiments = ExperimentManager(settings)
        if args.command == "gen":
            path = experiments.cmd_gen()
            print(f"📦 Dataset written to {path}")
            return EXIT_OK
        metrics = experiments.cmd_train() if args.command == "train" else experiments.cmd_eval()
        print(json.dumps(metrics, indent=2, sort_keys=True))
        return EXIT_OK
    except VersorError as e:
        logger.error(f"❌ {args.command} failed: {e}")
        return EXIT_FAILURE


def main():
    """Main entry point."""
    try:
        sys.exit(run())
    except KeyboardInterrupt:
        print("\n🛑 Interrupted by user")
        sys.exit(EXIT_FAILURE)


if __name__ == "__main__":
    main()
