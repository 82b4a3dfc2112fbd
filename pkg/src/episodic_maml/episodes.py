"""Tabular ingestion, scarcity-based class split, standardization and
N-way K-shot episode sampling.

Instances are held column-wise in an ``InstanceSet`` (a feature matrix plus
per-row class ids) rather than as one object per row; the refactoring
dataset runs to millions of rows.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
import pandas as pd

from .errors import DataError, SamplingError, SchemaError, ShapeError
from .mlp import LabeledBatch

STD_FLOOR = 1e-8
TIE_RULE = "lex"


@dataclass(frozen=True)
class ClassRegistry:
    """Ordered (class name, instance count) pairs; a class id is its position."""

    entries: tuple[tuple[str, int], ...]

    def __post_init__(self):
        entries = tuple((str(name), int(count)) for name, count in self.entries)
        names = [name for name, _ in entries]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        if any(count < 0 for _, count in entries):
            raise ValueError("class counts must be >= 0")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_counts(cls, counts: dict[str, int]) -> "ClassRegistry":
        return cls(tuple(sorted(counts.items())))

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.entries]

    @property
    def counts(self) -> dict[str, int]:
        return dict(self.entries)

    def class_id(self, name: str) -> int:
        return self.names.index(name)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True, eq=False)
class InstanceSet:
    features: np.ndarray
    class_ids: np.ndarray
    feature_columns: tuple[str, ...] = ()
    sources: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {x.shape}")
        ids = np.asarray(self.class_ids, dtype=np.int64).reshape(-1)
        if ids.shape[0] != x.shape[0]:
            raise ShapeError(f"{x.shape[0]} feature rows vs {ids.shape[0]} class ids")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "class_ids", ids)
        object.__setattr__(self, "feature_columns", tuple(self.feature_columns))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def restrict(self, class_ids: Iterable[int]) -> "InstanceSet":
        mask = np.isin(self.class_ids, np.fromiter(class_ids, dtype=np.int64))
        return InstanceSet(
            self.features[mask],
            self.class_ids[mask],
            self.feature_columns,
            None if self.sources is None else self.sources[mask],
        )


def ingest_csv(
    path,
    label_column: str,
    feature_columns: Sequence[str],
    source_column: str | None = None,
) -> tuple[InstanceSet, ClassRegistry]:
    """Read a labelled metrics CSV into an ``InstanceSet`` and its registry.

    Features come out in ``feature_columns`` order. Class ids index the
    registry, whose classes are sorted by name.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such CSV file: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path}: file has no header row") from exc

    wanted = [label_column, *feature_columns] + ([source_column] if source_column else [])
    missing = [col for col in wanted if col not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}")

    features = np.empty((len(frame), len(feature_columns)), dtype=np.float64)
    for j, col in enumerate(feature_columns):
        raw = frame[col]
        parsed = pd.to_numeric(raw.str.strip(), errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(parsed))
        if bad.size:
            row = int(bad[0])
            raise DataError(
                f"{path}: row {row + 1} (line {row + 2}), column {col!r}: "
                f"cannot use {raw.iloc[row]!r} as a finite number"
            )
        features[:, j] = parsed

    labels = frame[label_column].to_numpy(dtype=str)
    names, class_ids, counts = np.unique(labels, return_inverse=True, return_counts=True)
    registry = ClassRegistry(tuple(zip(names.tolist(), counts.tolist())))
    sources = frame[source_column].to_numpy(dtype=str) if source_column else None
    return InstanceSet(features, class_ids, tuple(feature_columns), sources), registry


@dataclass(frozen=True)
class MetaSplit:
    """Disjoint class-name partition into meta-train and meta-test sides."""

    meta_train: tuple[str, ...]
    meta_test: tuple[str, ...]
    tie_rule: str = TIE_RULE

    def __post_init__(self):
        if set(self.meta_train) & set(self.meta_test):
            raise ValueError("meta-train and meta-test classes overlap")

    def class_ids(self, registry: ClassRegistry, side: str) -> list[int]:
        names = self.meta_train if side == "meta_train" else self.meta_test
        return [registry.class_id(name) for name in names]

    def to_json(self) -> str:
        return json.dumps(
            {"meta_train": list(self.meta_train), "meta_test": list(self.meta_test), "tie_rule": self.tie_rule},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "MetaSplit":
        doc = json.loads(text)
        return cls(tuple(doc["meta_train"]), tuple(doc["meta_test"]), doc.get("tie_rule", TIE_RULE))


def split_by_scarcity(registry: ClassRegistry, n_test_classes: int) -> MetaSplit:
    """Send the ``n_test_classes`` rarest classes to meta-test.

    Ties on count fall back to lexicographic class name.
    """
    if not 0 <= n_test_classes < len(registry):
        raise ValueError(
            f"n_test_classes must be in [0, {len(registry)}), got {n_test_classes}"
        )
    by_scarcity = sorted(registry.entries, key=lambda item: (item[1], item[0]))
    test = tuple(name for name, _ in by_scarcity[:n_test_classes])
    train = tuple(name for name in registry.names if name not in set(test))
    return MetaSplit(train, test)


@dataclass(frozen=True, eq=False)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64).reshape(-1))
        if self.mean.shape != self.std.shape:
            raise ShapeError("mean and std lengths differ")

    def __eq__(self, other):
        if not isinstance(other, NormStats):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)

    @classmethod
    def identity(cls, dim: int) -> "NormStats":
        return cls(np.zeros(dim), np.ones(dim))


def _matrix(instances) -> np.ndarray:
    return instances.features if isinstance(instances, InstanceSet) else np.asarray(instances, dtype=np.float64)


def compute_norm_stats(instances) -> NormStats:
    """Per-feature mean and population std; pass meta-train instances only."""
    x = _matrix(instances)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("cannot compute normalization stats of an empty pool")
    return NormStats(x.mean(axis=0), np.maximum(x.std(axis=0), STD_FLOOR))


def apply_standardization(instances, stats: NormStats):
    x = _matrix(instances)
    if x.ndim != 2 or x.shape[1] != stats.mean.shape[0]:
        raise ShapeError(f"feature width {x.shape[-1]} does not match stats width {stats.mean.shape[0]}")
    out = (x - stats.mean) / stats.std
    if isinstance(instances, InstanceSet):
        return InstanceSet(out, instances.class_ids, instances.feature_columns, instances.sources)
    return out


@dataclass(frozen=True)
class EpisodeConfig:
    n_way: int
    k_shot: int
    q_query: int = 15

    def __post_init__(self):
        if self.n_way < 2 or self.k_shot < 1 or self.q_query < 1:
            raise ValueError(f"need n_way >= 2, k_shot >= 1, q_query >= 1; got {self}")
        if self.q_query <= self.k_shot:
            warnings.warn(
                f"q_query={self.q_query} is not larger than k_shot={self.k_shot}", stacklevel=3
            )

    @property
    def per_class(self) -> int:
        return self.k_shot + self.q_query


@dataclass(frozen=True, eq=False)
class Episode:
    support: LabeledBatch
    query: LabeledBatch
    class_map: tuple[int, ...]
    support_index: np.ndarray
    query_index: np.ndarray

    @property
    def n_way(self) -> int:
        return len(self.class_map)


class EpisodeSource(Protocol):
    def sample(self, cfg: EpisodeConfig, rng: np.random.Generator) -> Episode: ...


def _assemble(cfg: EpisodeConfig, class_map, per_class_rows, per_class_index) -> Episode:
    k = cfg.k_shot
    support_x, query_x, support_i, query_i = [], [], [], []
    for rows, index in zip(per_class_rows, per_class_index):
        support_x.append(rows[:k])
        query_x.append(rows[k:])
        support_i.append(index[:k])
        query_i.append(index[k:])
    n = len(class_map)
    return Episode(
        support=LabeledBatch(np.concatenate(support_x), np.repeat(np.arange(n), k)),
        query=LabeledBatch(np.concatenate(query_x), np.repeat(np.arange(n), cfg.q_query)),
        class_map=tuple(int(c) for c in class_map),
        support_index=np.concatenate(support_i),
        query_index=np.concatenate(query_i),
    )


class EpisodePool:
    """Instances of one side of a meta-split, grouped by class id."""

    def __init__(self, instances: InstanceSet, class_ids: Iterable[int] | None = None,
                 class_names: dict[int, str] | None = None):
        wanted = sorted(set(instances.class_ids.tolist()) if class_ids is None else set(class_ids))
        self.features = instances.features
        self.rows = {c: np.flatnonzero(instances.class_ids == c) for c in wanted}
        self.class_names = dict(class_names or {})

    @classmethod
    def from_split(cls, instances: InstanceSet, registry: ClassRegistry, split: MetaSplit,
                   side: str) -> "EpisodePool":
        ids = split.class_ids(registry, side)
        return cls(instances, ids, {i: registry.names[i] for i in ids})

    @property
    def class_ids(self) -> list[int]:
        return list(self.rows)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def _name(self, class_id: int) -> str:
        return self.class_names.get(class_id, f"class {class_id}")

    def validate(self, cfg: EpisodeConfig) -> None:
        if len(self.rows) < cfg.n_way:
            raise SamplingError(f"pool holds {len(self.rows)} classes but {cfg.n_way}-way episodes were requested")
        for class_id, rows in self.rows.items():
            if rows.size < cfg.per_class:
                raise SamplingError(
                    f"{self._name(class_id)!r} has {rows.size} instances, "
                    f"needs k_shot + q_query = {cfg.per_class}"
                )

    def sample(self, cfg: EpisodeConfig, rng: np.random.Generator) -> Episode:
        self.validate(cfg)
        ids = self.class_ids
        chosen = [ids[i] for i in rng.choice(len(ids), size=cfg.n_way, replace=False)]
        index = [rng.choice(self.rows[c], size=cfg.per_class, replace=False) for c in chosen]
        return _assemble(cfg, chosen, [self.features[i] for i in index], index)


def sample_episode(pool: EpisodeSource, cfg: EpisodeConfig, rng: np.random.Generator) -> Episode:
    return pool.sample(cfg, rng)


def sample_episode_batch(pool: EpisodeSource, cfg: EpisodeConfig, m: int,
                         rng: np.random.Generator) -> list[Episode]:
    return [pool.sample(cfg, rng) for _ in range(m)]


@dataclass(frozen=True)
class SyntheticTaskConfig:
    n_way: int
    k_shot: int
    q_query: int
    dim: int
    cluster_std: float

    def __post_init__(self):
        if self.dim < 1 or self.cluster_std < 0:
            raise ValueError("synthetic tasks need dim >= 1 and cluster_std >= 0")


def synthetic_episode(gen_cfg: SyntheticTaskConfig, rng: np.random.Generator) -> Episode:
    """Gaussian-blob task: fresh standard-normal class means, isotropic noise."""
    cfg = EpisodeConfig(gen_cfg.n_way, gen_cfg.k_shot, gen_cfg.q_query)
    means = rng.standard_normal((cfg.n_way, gen_cfg.dim))
    rows = [
        mu + gen_cfg.cluster_std * rng.standard_normal((cfg.per_class, gen_cfg.dim))
        for mu in means
    ]
    index = [np.arange(c * cfg.per_class, (c + 1) * cfg.per_class) for c in range(cfg.n_way)]
    return _assemble(cfg, range(cfg.n_way), rows, index)


@dataclass(frozen=True)
class SyntheticTasks:
    """Episode source producing a brand-new synthetic task on every draw."""

    dim: int
    cluster_std: float

    def sample(self, cfg: EpisodeConfig, rng: np.random.Generator) -> Episode:
        gen = SyntheticTaskConfig(cfg.n_way, cfg.k_shot, cfg.q_query, self.dim, self.cluster_std)
        return synthetic_episode(gen, rng)
