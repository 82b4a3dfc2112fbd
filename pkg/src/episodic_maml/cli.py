"""``episodic-maml`` command-line driver.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 failed numeric self-check (``gradcheck`` only).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import gradcheck
from .config import RunConfig, load_run_config
from .episodes import (
    ClassRegistry,
    EpisodePool,
    NormStats,
    SyntheticTasks,
    apply_standardization,
    compute_norm_stats,
    ingest_csv,
    split_by_scarcity,
)
from .errors import CheckpointError, ConfigError, DataError, SamplingError, SchemaError, ShapeError
from .maml import Checkpoint, baseline_test, load_checkpoint, meta_test, meta_train, save_checkpoint
from .metrics import MetricsRecord, aggregate_metrics, write_jsonl

log = logging.getLogger("episodic_maml")

COMMANDS = ("split", "meta-train", "meta-test", "baseline", "synth-bench", "gradcheck")
THREADS_ENV = "EPISODIC_MAML_THREADS"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="episodic-maml",
        description="Few-shot MAML for refactoring classification from code metrics.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field (value parsed as JSON when possible)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_workers() -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    try:
        n = int(raw) if raw else 0
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    if n < 0:
        raise ConfigError(f"{THREADS_ENV} must be >= 0")
    return n or (os.cpu_count() or 1)


def _registry(cfg: RunConfig):
    if cfg.csv_path is None:
        if cfg.class_counts:
            return None, ClassRegistry.from_counts(cfg.class_counts)
        raise ConfigError("set csv_path (or class_counts for 'split')")
    if not cfg.feature_columns:
        raise ConfigError("feature_columns must list at least one column")
    return ingest_csv(cfg.csv_path, cfg.label_column, cfg.feature_columns, cfg.source_column)


def _load_data(cfg: RunConfig):
    instances, registry = _registry(cfg)
    if instances is None:
        raise ConfigError("this command needs csv_path")
    try:
        split = split_by_scarcity(registry, cfg.n_test_classes)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    return instances, registry, split


def _pools(cfg: RunConfig, stats: NormStats | None = None):
    instances, registry, split = _load_data(cfg)
    train_ids = split.class_ids(registry, "meta_train")
    if stats is None:
        stats = compute_norm_stats(instances.restrict(train_ids))
    scaled = apply_standardization(instances, stats)
    train_pool = EpisodePool.from_split(scaled, registry, split, "meta_train")
    test_pool = EpisodePool.from_split(scaled, registry, split, "meta_test")
    return train_pool, test_pool, stats


def _summary(label: str, records: list[MetricsRecord]) -> None:
    if not records:
        print(f"{label}: no batches")
        return
    mean = aggregate_metrics(records)
    print(f"{label}: accuracy {mean.accuracy:.4f}  precision {mean.precision:.4f}  "
          f"recall {mean.recall:.4f}  loss {mean.loss:.4f}  ({len(records)} batches)")


def _train(cfg: RunConfig, source, stats: NormStats, workers: int) -> Checkpoint:
    arch = cfg.architecture(source.dim)
    with open(cfg.training_log_path, "w", encoding="utf-8") as fh:
        def stream(entry):
            fh.write(entry.to_json() + "\n")
            fh.flush()
        theta, _ = meta_train(source, cfg.episode_config(), cfg.maml_config(), arch, workers, stream)
    checkpoint = Checkpoint(theta, stats, cfg.echo(), cfg.meta_iterations, cfg.seed)
    save_checkpoint(cfg.checkpoint_path, checkpoint)
    log.info("wrote %s and %s", cfg.checkpoint_path, cfg.training_log_path)
    return checkpoint


def cmd_split(cfg: RunConfig, workers: int) -> int:
    _, registry = _registry(cfg)
    try:
        split = split_by_scarcity(registry, cfg.n_test_classes)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    text = split.to_json()
    with open(cfg.split_path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_meta_train(cfg: RunConfig, workers: int) -> int:
    train_pool, _, stats = _pools(cfg)
    _train(cfg, train_pool, stats, workers)
    return EXIT_OK


def _check_compatible(cfg: RunConfig, checkpoint: Checkpoint, dim: int) -> None:
    arch = checkpoint.architecture
    if arch.output_dim != cfg.n_way or arch.input_dim != dim:
        raise DataError(
            f"checkpoint network is {arch.input_dim}->{arch.output_dim} but data/config "
            f"need {dim}->{cfg.n_way}"
        )


def cmd_meta_test(cfg: RunConfig, workers: int) -> int:
    checkpoint = load_checkpoint(cfg.checkpoint_path)
    _, test_pool, _ = _pools(cfg, checkpoint.norm_stats)
    _check_compatible(cfg, checkpoint, test_pool.dim)
    records = meta_test(checkpoint.parameters, test_pool, cfg.episode_config(), cfg.maml_config(), workers)
    write_jsonl(cfg.report_path, records)
    _summary("meta-test", records)
    return EXIT_OK


def cmd_baseline(cfg: RunConfig, workers: int) -> int:
    _, test_pool, _ = _pools(cfg)
    records = baseline_test(test_pool, cfg.episode_config(), cfg.maml_config(),
                            cfg.architecture(test_pool.dim), workers)
    write_jsonl(cfg.baseline_report_path, records)
    _summary("scratch baseline", records)
    return EXIT_OK


def cmd_synth_bench(cfg: RunConfig, workers: int) -> int:
    source = SyntheticTasks(cfg.synth_dim, cfg.synth_cluster_std)
    checkpoint = _train(cfg, source, NormStats.identity(cfg.synth_dim), workers)
    ecfg, mcfg = cfg.episode_config(), cfg.maml_config()
    records = meta_test(checkpoint.parameters, source, ecfg, mcfg, workers)
    baseline = baseline_test(source, ecfg, mcfg, checkpoint.architecture, workers)
    write_jsonl(cfg.report_path, records)
    write_jsonl(cfg.baseline_report_path, baseline)
    _summary("meta-test", records)
    _summary("scratch baseline", baseline)
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, workers: int) -> int:
    report = gradcheck.run_gradcheck(seed=cfg.seed)
    print(f"max gradient relative error: {report.max_grad_error:.3e} (tol {gradcheck.GRAD_TOL:g})")
    print(f"max HVP relative error:      {report.max_hvp_error:.3e} (tol {gradcheck.HVP_TOL:g})")
    print(f"max HVP asymmetry:           {report.max_symmetry_error:.3e} (tol {gradcheck.SYMMETRY_TOL:g})")
    print("gradcheck " + ("passed" if report.passed else "FAILED"))
    return EXIT_OK if report.passed else EXIT_NUMERIC


HANDLERS = {
    "split": cmd_split,
    "meta-train": cmd_meta_train,
    "meta-test": cmd_meta_test,
    "baseline": cmd_baseline,
    "synth-bench": cmd_synth_bench,
    "gradcheck": cmd_gradcheck,
}


def execute(command: str, cfg: RunConfig) -> int:
    if command not in HANDLERS:
        print(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return HANDLERS[command](cfg, resolve_workers())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SchemaError, SamplingError, ShapeError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # config was already validated, so what is left is data-dependent
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_run_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return execute(args.command, cfg)


if __name__ == "__main__":
    sys.exit(main())
