import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CLASS_COUNTS, CLASS_COUNTS_META_TEST
from episodic_maml.episodes import (
    ClassRegistry,
    EpisodeConfig,
    EpisodePool,
    InstanceSet,
    MetaSplit,
    NormStats,
    SyntheticTaskConfig,
    SyntheticTasks,
    apply_standardization,
    compute_norm_stats,
    ingest_csv,
    sample_episode,
    sample_episode_batch,
    split_by_scarcity,
    synthetic_episode,
)
from episodic_maml.errors import DataError, SamplingError, SchemaError, ShapeError
from oracles import nearest_centroid_accuracy

FEATURES = ["loc", "cbo", "wmc"]


def write_csv(path, counts, seed=0):
    rng = np.random.default_rng(seed)
    lines = ["refactoring,loc,cbo,wmc,project"]
    for name, count in counts.items():
        values = rng.integers(0, 500, size=(count, 3))
        lines += [f"{name},{a},{b}.5,{c},p{i % 3}" for i, (a, b, c) in enumerate(values)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def toy_instances(sizes, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    ids = np.repeat(np.arange(len(sizes)), sizes)
    return InstanceSet(rng.standard_normal((ids.size, dim)), ids)


# ingestion -----------------------------------------------------------------

def test_ingest_meta_test_counts(tmp_path):
    path = write_csv(tmp_path / "five.csv", CLASS_COUNTS_META_TEST)
    instances, registry = ingest_csv(path, "refactoring", FEATURES, source_column="project")
    assert registry.counts == CLASS_COUNTS_META_TEST
    assert len(instances) == 27513
    assert instances.dim == 3
    assert set(instances.sources) == {"p0", "p1", "p2"}
    for class_id, name in enumerate(registry.names):
        assert np.sum(instances.class_ids == class_id) == CLASS_COUNTS_META_TEST[name]


def test_ingest_keeps_feature_column_order(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,label,b\n1,x,2\n3,y,4\n", encoding="utf-8")
    instances, registry = ingest_csv(path, "label", ["b", "a"])
    np.testing.assert_array_equal(instances.features, [[2, 1], [4, 3]])
    assert registry.entries == (("x", 1), ("y", 1))


def test_ingest_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("refactoring,loc,cbo,wmc\n", encoding="utf-8")
    instances, registry = ingest_csv(path, "refactoring", FEATURES)
    assert len(instances) == 0
    assert len(registry) == 0


def test_ingest_non_numeric_cell(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("refactoring,loc,cbo,wmc\nrename class,1,2,3\nrename class,4,abc,6\n", encoding="utf-8")
    with pytest.raises(DataError, match=r"row 2.*'cbo'.*'abc'"):
        ingest_csv(path, "refactoring", FEATURES)


@pytest.mark.parametrize("cell", ["", "nan", "inf"])
def test_ingest_rejects_missing_and_non_finite(tmp_path, cell):
    path = tmp_path / "bad.csv"
    path.write_text(f"refactoring,loc,cbo,wmc\nx,1,{cell},3\n", encoding="utf-8")
    with pytest.raises(DataError):
        ingest_csv(path, "refactoring", FEATURES)


def test_ingest_missing_column(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("refactoring,loc\nx,1\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="cbo"):
        ingest_csv(path, "refactoring", FEATURES)


def test_ingest_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_csv(tmp_path / "nope.csv", "refactoring", FEATURES)


# split ----------------------------------------------------------------------

def test_split_reproduces_least_instance_classes():
    split = split_by_scarcity(ClassRegistry.from_counts(CLASS_COUNTS), 5)
    assert set(split.meta_test) == {"move and rename class", "rename class", "extract subclass",
                                    "extract variable", "extract and move method"}
    assert split.meta_test == ("move and rename class", "rename class", "extract subclass",
                               "extract variable", "extract and move method")
    assert set(split.meta_train) | set(split.meta_test) == set(CLASS_COUNTS)
    assert not set(split.meta_train) & set(split.meta_test)


def test_split_tie_rule_is_lexicographic():
    registry = ClassRegistry.from_counts({"delta": 10, "alpha": 10, "charlie": 10, "bravo": 10})
    assert split_by_scarcity(registry, 2).meta_test == ("alpha", "bravo")


@pytest.mark.parametrize("n", [4, 5, -1])
def test_split_rejects_bad_count(n):
    registry = ClassRegistry.from_counts({"a": 1, "b": 2, "c": 3, "d": 4})
    with pytest.raises(ValueError):
        split_by_scarcity(registry, n)


def test_split_json_round_trip():
    split = split_by_scarcity(ClassRegistry.from_counts(CLASS_COUNTS), 5)
    doc = json.loads(split.to_json())
    assert doc["tie_rule"] == "lex"
    assert set(doc) == {"meta_train", "meta_test", "tie_rule"}
    assert MetaSplit.from_json(split.to_json()) == split


def test_split_rejects_overlap():
    with pytest.raises(ValueError):
        MetaSplit(("a", "b"), ("b",))


@settings(max_examples=50, deadline=None)
@given(counts=st.dictionaries(st.text("abcdef", min_size=1, max_size=4), st.integers(0, 50), min_size=2, max_size=12),
       data=st.data())
def test_split_partition_property(counts, data):
    registry = ClassRegistry.from_counts(counts)
    n = data.draw(st.integers(0, len(registry) - 1))
    split = split_by_scarcity(registry, n)
    assert set(split.meta_train) | set(split.meta_test) == set(counts)
    assert not set(split.meta_train) & set(split.meta_test)
    assert len(split.meta_test) == n
    if n and split.meta_train:
        assert max(counts[c] for c in split.meta_test) <= min(counts[c] for c in split.meta_train)


# standardization ------------------------------------------------------------

def test_norm_stats_standardize_meta_train():
    rng = np.random.default_rng(3)
    x = rng.normal(5.0, 3.0, size=(200, 4))
    x[:, 2] = 7.0
    stats = compute_norm_stats(x)
    assert stats.std[2] == 1e-8
    z = apply_standardization(x, stats)
    np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(z[:, [0, 1, 3]].std(axis=0), 1.0, atol=1e-6)
    assert np.all(z[:, 2] == 0.0)


def test_norm_stats_leakage_check():
    instances = toy_instances([30, 30, 30, 30])
    shifted = InstanceSet(instances.features + instances.class_ids[:, None], instances.class_ids)
    train_stats = compute_norm_stats(shifted.restrict([0, 1]))
    test_stats = compute_norm_stats(shifted.restrict([2, 3]))
    assert not np.allclose(train_stats.mean, test_stats.mean)


def test_norm_stats_empty_pool():
    with pytest.raises(ValueError):
        compute_norm_stats(np.empty((0, 3)))


def test_apply_standardization_algebra():
    stats = NormStats([1.0, 2.0], [2.0, 4.0])
    np.testing.assert_array_equal(apply_standardization(np.array([[1.0, 2.0]]), stats), [[0.0, 0.0]])
    x = np.array([[3.0, 10.0]])
    once = apply_standardization(x, stats)
    assert not np.array_equal(apply_standardization(once, stats), once)
    np.testing.assert_array_equal(apply_standardization(x, NormStats.identity(2)), x)
    with pytest.raises(ShapeError):
        apply_standardization(np.ones((1, 3)), stats)


def test_apply_standardization_keeps_instance_set():
    instances = toy_instances([5, 5])
    out = apply_standardization(instances, compute_norm_stats(instances))
    assert isinstance(out, InstanceSet)
    np.testing.assert_array_equal(out.class_ids, instances.class_ids)


# episode sampling -----------------------------------------------------------

def check_episode(ep, cfg, pool_classes=None):
    n, k, q = cfg.n_way, cfg.k_shot, cfg.q_query
    assert len(ep.support) == n * k and len(ep.query) == n * q
    assert np.array_equal(np.bincount(ep.support.labels, minlength=n), np.full(n, k))
    assert np.array_equal(np.bincount(ep.query.labels, minlength=n), np.full(n, q))
    assert set(ep.support.labels.tolist()) == set(range(n)) == set(ep.query.labels.tolist())
    assert not set(ep.support_index.tolist()) & set(ep.query_index.tolist())
    assert len(set(ep.support_index.tolist())) == n * k and len(set(ep.query_index.tolist())) == n * q
    assert len(set(ep.class_map)) == n
    if pool_classes is not None:
        assert set(ep.class_map) <= set(pool_classes)


def test_episode_shape_2way_5shot():
    pool = EpisodePool(toy_instances([40, 40, 40]))
    cfg = EpisodeConfig(2, 5, 15)
    ep = sample_episode(pool, cfg, np.random.default_rng(0))
    assert len(ep.support) == 10 and len(ep.query) == 30
    check_episode(ep, cfg)


def test_episode_shape_5way_1shot():
    pool = EpisodePool(toy_instances([10] * 6))
    ep = sample_episode(pool, EpisodeConfig(5, 1, 3), np.random.default_rng(0))
    assert len(ep.support) == 5 and len(ep.query) == 15


def test_episode_rows_come_from_the_mapped_class():
    instances = toy_instances([20, 25, 30])
    pool = EpisodePool(instances)
    ep = sample_episode(pool, EpisodeConfig(2, 3, 4), np.random.default_rng(5))
    for batch, index in ((ep.support, ep.support_index), (ep.query, ep.query_index)):
        np.testing.assert_array_equal(batch.features, instances.features[index])
        np.testing.assert_array_equal(np.array(ep.class_map)[batch.labels], instances.class_ids[index])


def test_episode_deficient_class_is_named():
    registry = ClassRegistry.from_counts({"rename class": 19, "extract variable": 40})
    instances = InstanceSet(np.zeros((59, 2)), np.repeat([1, 0], [19, 40]))
    split = MetaSplit((), ("rename class", "extract variable"))
    pool = EpisodePool.from_split(instances, registry, split, "meta_test")
    with pytest.raises(SamplingError, match="rename class"):
        sample_episode(pool, EpisodeConfig(2, 5, 15), np.random.default_rng(0))


def test_episode_too_few_classes():
    with pytest.raises(SamplingError):
        sample_episode(EpisodePool(toy_instances([30, 30])), EpisodeConfig(3, 1, 2), np.random.default_rng(0))


def test_episode_config_validation():
    with pytest.raises(ValueError):
        EpisodeConfig(1, 5, 15)
    with pytest.raises(ValueError):
        EpisodeConfig(2, 0, 15)
    with pytest.warns(UserWarning):
        EpisodeConfig(2, 5, 5)


def test_episode_batch():
    pool = EpisodePool(toy_instances([40] * 4))
    cfg = EpisodeConfig(2, 5, 15)
    batch = sample_episode_batch(pool, cfg, 25, np.random.default_rng(9))
    assert len(batch) == 25
    again = sample_episode_batch(pool, cfg, 25, np.random.default_rng(9))
    for a, b in zip(batch, again):
        assert np.array_equal(a.support_index, b.support_index) and np.array_equal(a.query_index, b.query_index)
    assert sample_episode_batch(pool, cfg, 0, np.random.default_rng(9)) == []


def test_pools_respect_meta_split():
    registry = ClassRegistry.from_counts({f"c{i}": 30 for i in range(7)})
    instances = InstanceSet(np.random.default_rng(0).standard_normal((210, 2)), np.repeat(np.arange(7), 30))
    split = split_by_scarcity(registry, 3)
    train = EpisodePool.from_split(instances, registry, split, "meta_train")
    test = EpisodePool.from_split(instances, registry, split, "meta_test")
    train_ids, test_ids = set(split.class_ids(registry, "meta_train")), set(split.class_ids(registry, "meta_test"))
    rng = np.random.default_rng(1)
    cfg = EpisodeConfig(3, 2, 5)
    for _ in range(300):
        assert set(train.sample(cfg, rng).class_map) <= train_ids
        assert set(test.sample(cfg, rng).class_map) <= test_ids


def test_class_selection_is_uniform():
    pool = EpisodePool(toy_instances([25] * 5))
    cfg = EpisodeConfig(2, 3, 4)
    rng = np.random.default_rng(2024)
    n_episodes = 3000
    hist = np.zeros(5)
    for _ in range(n_episodes):
        hist[list(sample_episode(pool, cfg, rng).class_map)] += 1
    p = cfg.n_way / 5
    expected, sigma = n_episodes * p, np.sqrt(n_episodes * p * (1 - p))
    assert np.all(np.abs(hist - expected) <= 3 * sigma)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 5), k=st.integers(1, 6), q=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_episode_invariants_property(n, k, q, seed):
    sizes = [k + q + extra for extra in np.random.default_rng(seed).integers(0, 5, size=n + 2)]
    pool = EpisodePool(toy_instances(sizes))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = EpisodeConfig(n, k, q)
    check_episode(sample_episode(pool, cfg, np.random.default_rng(seed)), cfg, pool.class_ids)


# synthetic tasks ------------------------------------------------------------

def test_synthetic_zero_noise_points_identical():
    ep = synthetic_episode(SyntheticTaskConfig(3, 4, 6, 5, 0.0), np.random.default_rng(0))
    for c in range(3):
        rows = np.vstack([ep.support.features[ep.support.labels == c], ep.query.features[ep.query.labels == c]])
        assert np.all(rows == rows[0])
    check_episode(ep, EpisodeConfig(3, 4, 6))


def test_synthetic_is_seeded():
    cfg = SyntheticTaskConfig(2, 5, 15, 20, 0.5)
    a = synthetic_episode(cfg, np.random.default_rng(4))
    b = synthetic_episode(cfg, np.random.default_rng(4))
    assert np.array_equal(a.support.features, b.support.features)
    assert np.array_equal(a.query.features, b.query.features)


def test_synthetic_separable_nearest_centroid():
    rng = np.random.default_rng(8)
    for _ in range(20):
        ep = synthetic_episode(SyntheticTaskConfig(5, 2, 7, 10, 0.0), rng)
        assert nearest_centroid_accuracy(ep) == 1.0


def test_synthetic_source_matches_function():
    cfg = EpisodeConfig(2, 5, 15)
    a = SyntheticTasks(20, 0.5).sample(cfg, np.random.default_rng(3))
    b = synthetic_episode(SyntheticTaskConfig(2, 5, 15, 20, 0.5), np.random.default_rng(3))
    assert np.array_equal(a.query.features, b.query.features)


def test_synthetic_config_validation():
    with pytest.raises(ValueError):
        SyntheticTaskConfig(2, 5, 15, 0, 0.5)
    with pytest.raises(ValueError):
        SyntheticTaskConfig(2, 5, 15, 3, -1.0)
