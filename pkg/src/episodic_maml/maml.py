"""MAML training and evaluation loops.

Meta-training repeatedly adapts the shared initialization to a batch of
episodes with plain gradient descent on each support set, then moves the
initialization along the averaged query-loss gradient of the adapted models.
``grad_mode="exact"`` back-propagates through the inner steps using
Hessian-vector products; ``"first_order"`` drops that correction.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .episodes import Episode, EpisodeConfig, EpisodeSource, NormStats, sample_episode_batch
from .errors import CheckpointParseError, CheckpointValidationError, CheckpointVersionError
from .metrics import MetricsRecord, aggregate_metrics, episode_metrics, scratch_baseline
from .mlp import (
    LabeledBatch,
    MlpArchitecture,
    MlpParameters,
    forward,
    hessian_vector_product,
    init_parameters,
    loss,
    loss_gradient,
)

log = logging.getLogger(__name__)

GRAD_MODES = ("first_order", "exact")
FORMAT_VERSION = 1


@dataclass(frozen=True)
class MamlConfig:
    alpha: float = 0.001
    beta: float = 0.001
    meta_iterations: int = 5000
    meta_batch_size: int = 25
    adaptation_steps: int = 1
    grad_mode: str = "first_order"
    seed: int = 0
    test_batches: int = 30
    test_batch_size: int = 25

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        for name in ("meta_batch_size", "adaptation_steps", "test_batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        # zero meta-iterations is allowed and yields the initialization itself
        for name in ("meta_iterations", "test_batches"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"grad_mode must be one of {GRAD_MODES}")

    def train_rng(self) -> np.random.Generator:
        return np.random.default_rng([self.seed, 1])

    def test_rng(self) -> np.random.Generator:
        return np.random.default_rng([self.seed, 2])


def _map(fn, items, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _mean(terms: Sequence[np.ndarray]) -> np.ndarray:
    total = np.zeros_like(terms[0])
    for term in terms:  # fixed index order keeps the sum bit-reproducible
        total = total + term
    return total / len(terms)


def _adapt_path(theta: MlpParameters, support: LabeledBatch, steps: int, alpha: float) -> list[MlpParameters]:
    path = [theta]
    for _ in range(steps):
        _, grad = loss_gradient(path[-1], support)
        path.append(path[-1] - alpha * grad)
    return path


def inner_adapt(theta: MlpParameters, support: LabeledBatch, steps: int, alpha: float) -> MlpParameters:
    """``steps`` full-batch gradient-descent steps on the support loss."""
    return _adapt_path(theta, support, steps, alpha)[-1]


@dataclass(frozen=True)
class _EpisodeTerm:
    grad: np.ndarray
    pre_loss: float
    post_loss: float


def _episode_term(theta, episode: Episode, alpha: float, steps: int, grad_mode: str) -> _EpisodeTerm:
    path = _adapt_path(theta, episode.support, steps, alpha)
    post_loss, grad = loss_gradient(path[-1], episode.query)
    if grad_mode == "exact":
        # chain rule through each step: d theta_{s+1} / d theta_s = I - alpha * H_s
        for point in reversed(path[:-1]):
            grad = grad - alpha * hessian_vector_product(point, episode.support, grad)
    pre_loss = post_loss if steps == 0 else loss(theta, episode.query)
    return _EpisodeTerm(grad.vector, pre_loss, post_loss)


def _meta_terms(theta, episodes, alpha, steps, grad_mode, workers) -> list[_EpisodeTerm]:
    if not episodes:
        raise ValueError("meta_gradient needs at least one episode")
    if grad_mode not in GRAD_MODES:
        raise ValueError(f"grad_mode must be one of {GRAD_MODES}")
    return _map(lambda ep: _episode_term(theta, ep, alpha, steps, grad_mode), list(episodes), workers)


def meta_gradient(
    theta: MlpParameters,
    episodes: Sequence[Episode],
    alpha: float,
    steps: int = 1,
    grad_mode: str = "first_order",
    workers: int = 1,
) -> MlpParameters:
    """Gradient of the mean post-adaptation query loss over ``episodes``."""
    terms = _meta_terms(theta, episodes, alpha, steps, grad_mode, workers)
    return theta.like(_mean([t.grad for t in terms]))


@dataclass(frozen=True)
class TrainingLogEntry:
    iteration: int
    pre_adapt_query_loss: float
    post_adapt_query_loss: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def meta_train(
    pool: EpisodeSource,
    episode_cfg: EpisodeConfig,
    maml_cfg: MamlConfig,
    architecture: MlpArchitecture | None = None,
    workers: int = 1,
    on_iteration: Callable[[TrainingLogEntry], None] | None = None,
) -> tuple[MlpParameters, list[TrainingLogEntry]]:
    """Run the outer SGD loop; returns the meta-learned initialization and its log."""
    if architecture is None:
        architecture = MlpArchitecture(pool.dim, episode_cfg.n_way)
    if architecture.output_dim != episode_cfg.n_way:
        raise ValueError(
            f"network has {architecture.output_dim} outputs but episodes are {episode_cfg.n_way}-way"
        )
    theta = init_parameters(architecture, maml_cfg.seed)
    rng = maml_cfg.train_rng()
    history = []
    for it in range(1, maml_cfg.meta_iterations + 1):
        episodes = sample_episode_batch(pool, episode_cfg, maml_cfg.meta_batch_size, rng)
        terms = _meta_terms(theta, episodes, maml_cfg.alpha, maml_cfg.adaptation_steps,
                            maml_cfg.grad_mode, workers)
        theta = theta - maml_cfg.beta * _mean([t.grad for t in terms])
        entry = TrainingLogEntry(
            it,
            sum(t.pre_loss for t in terms) / len(terms),
            sum(t.post_loss for t in terms) / len(terms),
        )
        history.append(entry)
        if on_iteration is not None:
            on_iteration(entry)
        if it % 500 == 0:
            log.info("iteration %d: post-adaptation query loss %.4f", it, entry.post_adapt_query_loss)
    return theta, history


def meta_test_batches(pool: EpisodeSource, episode_cfg: EpisodeConfig,
                      maml_cfg: MamlConfig) -> Iterator[list[Episode]]:
    """The meta-test episode stream; identical for every consumer with the same seed."""
    rng = maml_cfg.test_rng()
    for _ in range(maml_cfg.test_batches):
        yield sample_episode_batch(pool, episode_cfg, maml_cfg.test_batch_size, rng)


def _adapted_metrics(theta, episode, steps, alpha) -> MetricsRecord:
    adapted = inner_adapt(theta, episode.support, steps, alpha)
    return episode_metrics(forward(adapted, episode.query), episode.query.labels)


def meta_test(
    theta: MlpParameters,
    pool: EpisodeSource,
    episode_cfg: EpisodeConfig,
    maml_cfg: MamlConfig,
    workers: int = 1,
) -> list[MetricsRecord]:
    """Adapt ``theta`` independently to each test episode; one mean record per batch."""
    records = []
    for index, batch in enumerate(meta_test_batches(pool, episode_cfg, maml_cfg)):
        per_episode = _map(
            lambda ep: _adapted_metrics(theta, ep, maml_cfg.adaptation_steps, maml_cfg.alpha),
            batch, workers,
        )
        records.append(aggregate_metrics(per_episode, batch_index=index))
    return records


def baseline_test(
    pool: EpisodeSource,
    episode_cfg: EpisodeConfig,
    maml_cfg: MamlConfig,
    architecture: MlpArchitecture | None = None,
    workers: int = 1,
) -> list[MetricsRecord]:
    """Scratch-trained counterpart of ``meta_test`` on the very same episodes."""
    if architecture is None:
        architecture = MlpArchitecture(pool.dim, episode_cfg.n_way)
    records = []
    for index, batch in enumerate(meta_test_batches(pool, episode_cfg, maml_cfg)):
        per_episode = _map(
            lambda ep: scratch_baseline(ep, maml_cfg.adaptation_steps, maml_cfg.alpha, maml_cfg.seed,
                                        architecture.hidden_widths, architecture.activation),
            batch, workers,
        )
        records.append(aggregate_metrics(per_episode, batch_index=index))
    return records


@dataclass(frozen=True)
class Checkpoint:
    parameters: MlpParameters
    norm_stats: NormStats
    config: dict = field(default_factory=dict)
    iterations_completed: int = 0
    seed: int = 0
    format_version: int = FORMAT_VERSION

    @property
    def architecture(self) -> MlpArchitecture:
        return self.parameters.architecture

    def to_document(self) -> dict:
        arch = self.architecture
        return {
            "format_version": self.format_version,
            "arch": {
                "input_dim": arch.input_dim,
                "hidden": list(arch.hidden_widths),
                "n_way": arch.output_dim,
                "activation": arch.activation,
            },
            "weights": [w.tolist() for w, _ in self.parameters.layers],
            "biases": [b.tolist() for _, b in self.parameters.layers],
            "norm_stats": {"mean": self.norm_stats.mean.tolist(), "std": self.norm_stats.std.tolist()},
            "config": self.config,
            "iterations_completed": self.iterations_completed,
            "seed": self.seed,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "Checkpoint":
        if not isinstance(doc, dict):
            raise CheckpointValidationError("checkpoint root must be a JSON object")
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(f"unsupported checkpoint format_version {version!r}")
        try:
            a = doc["arch"]
            arch = MlpArchitecture(int(a["input_dim"]), int(a["n_way"]), tuple(a["hidden"]), a["activation"])
            weights, biases = doc["weights"], doc["biases"]
            if len(weights) != len(arch.layer_shapes) or len(biases) != len(arch.layer_shapes):
                raise CheckpointValidationError(
                    f"architecture implies {len(arch.layer_shapes)} layers, file has "
                    f"{len(weights)} weight and {len(biases)} bias arrays"
                )
            layers = []
            for (out_dim, in_dim), w, b in zip(arch.layer_shapes, weights, biases):
                w = np.array(w, dtype=np.float64)
                b = np.array(b, dtype=np.float64)
                if w.shape != (out_dim, in_dim) or b.shape != (out_dim,):
                    raise CheckpointValidationError(
                        f"layer expects weight {(out_dim, in_dim)}, bias {(out_dim,)}; "
                        f"file has {w.shape}, {b.shape}"
                    )
                layers.append((w, b))
            stats = NormStats(doc["norm_stats"]["mean"], doc["norm_stats"]["std"])
            if stats.mean.shape[0] != arch.input_dim:
                raise CheckpointValidationError("norm_stats width does not match input_dim")
            return cls(
                parameters=MlpParameters.from_layers(arch, layers),
                norm_stats=stats,
                config=dict(doc.get("config", {})),
                iterations_completed=int(doc["iterations_completed"]),
                seed=int(doc["seed"]),
                format_version=version,
            )
        except CheckpointValidationError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointValidationError(f"malformed checkpoint: {exc}") from exc


def _encode(value) -> str:
    # json.dumps emits the shortest round-trip repr; checkpoints pin 17 significant digits
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError("checkpoint values must be finite")
        text = format(value, ".17g")
        return text if ("." in text or "e" in text) else text + ".0"
    if isinstance(value, (int, str)):
        return json.dumps(value)
    if isinstance(value, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in value.items()) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    Path(path).write_text(_encode(checkpoint.to_document()) + "\n", encoding="utf-8")


def load_checkpoint(path) -> Checkpoint:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointParseError(f"{path}: not valid JSON ({exc})") from exc
    return Checkpoint.from_document(doc)
