"""Run configuration for the command-line driver.

Defaults reproduce the published training regime: 3x80 ReLU MLP, SGD with
alpha = beta = 0.001, 5000 meta-iterations over batches of 25 tasks and a
single adaptation step, evaluated on 30 batches of 25 test tasks.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .episodes import EpisodeConfig
from .errors import ConfigError
from .maml import MamlConfig
from .mlp import MlpArchitecture


OUTPUT_FIELDS = ("split_path", "checkpoint_path", "training_log_path", "report_path", "baseline_report_path")


@dataclass
class RunConfig:
    # episodes
    n_way: int = 2
    k_shot: int = 5
    q_query: int = 15
    # meta-learning
    alpha: float = 0.001
    beta: float = 0.001
    meta_iterations: int = 5000
    meta_batch_size: int = 25
    adaptation_steps: int = 1
    grad_mode: str = "first_order"
    seed: int = 0
    test_batches: int = 30
    test_batch_size: int = 25
    # network
    hidden: list = field(default_factory=lambda: [80, 80, 80])
    activation: str = "relu"
    # data
    csv_path: str | None = None
    label_column: str = "refactoring"
    feature_columns: list = field(default_factory=list)
    source_column: str | None = None
    n_test_classes: int = 5
    class_counts: dict | None = None
    # synthetic benchmark
    synth_dim: int = 20
    synth_cluster_std: float = 0.5
    # outputs
    split_path: str = "split.json"
    checkpoint_path: str = "checkpoint.json"
    training_log_path: str = "training_log.jsonl"
    report_path: str = "metrics.jsonl"
    baseline_report_path: str = "baseline.jsonl"

    def episode_config(self) -> EpisodeConfig:
        return EpisodeConfig(self.n_way, self.k_shot, self.q_query)

    def maml_config(self) -> MamlConfig:
        return MamlConfig(
            alpha=self.alpha, beta=self.beta, meta_iterations=self.meta_iterations,
            meta_batch_size=self.meta_batch_size, adaptation_steps=self.adaptation_steps,
            grad_mode=self.grad_mode, seed=self.seed, test_batches=self.test_batches,
            test_batch_size=self.test_batch_size,
        )

    def architecture(self, input_dim: int) -> MlpArchitecture:
        return MlpArchitecture(input_dim, self.n_way, tuple(self.hidden), self.activation)

    def validate(self) -> None:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                self.episode_config()
            self.maml_config()
            self.architecture(1)
            if self.n_test_classes < 1:
                raise ValueError("n_test_classes must be >= 1")
            if self.synth_dim < 1 or self.synth_cluster_std < 0:
                raise ValueError("synth_dim must be >= 1 and synth_cluster_std >= 0")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def echo(self) -> dict:
        """Settings that shape a trained model; output locations are left out."""
        return {k: v for k, v in asdict(self).items() if k not in OUTPUT_FIELDS}


def _coerce(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_run_config(path: str | None = None, overrides: list[str] = ()) -> RunConfig:
    """Defaults, then the JSON file at ``path``, then ``key=value`` overrides."""
    known = {f.name for f in fields(RunConfig)}
    values: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update(doc)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = _coerce(raw)
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config field(s): {unknown}")
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg
