import numpy as np
import pytest

from episodic_maml.mlp import LabeledBatch, MlpArchitecture, init_parameters

# Instance counts per refactoring type, summed over all projects in the dataset.
CLASS_COUNTS_META_TRAIN = {
    "extract interface": 10495,
    "extract super-class": 26814,
    "extract class": 41191,
    "move class": 49815,
    "extract method": 327493,
    "move method": 163078,
    "inline method": 53827,
    "push down method": 62630,
    "pull up method": 155076,
    "rename method": 427935,
    "inline variable": 30894,
    "rename variable": 324955,
    "rename parameter": 336751,
    "parameterize variable": 22537,
    "replace variable": 25894,
}
CLASS_COUNTS_META_TEST = {
    "extract subclass": 6436,
    "move and rename class": 654,
    "rename class": 3991,
    "extract and move method": 9723,
    "extract variable": 6709,
}
CLASS_COUNTS = {**CLASS_COUNTS_META_TRAIN, **CLASS_COUNTS_META_TEST}


def random_problem(rng, input_dim=3, hidden=(4, 3), n_way=3, n=6, activation="tanh", scale=0.3):
    arch = MlpArchitecture(input_dim, n_way, hidden, activation)
    params = init_parameters(arch, int(rng.integers(2**31))) + scale * rng.standard_normal(arch.n_params)
    batch = LabeledBatch(rng.standard_normal((n, input_dim)), rng.integers(0, n_way, size=n))
    return params, batch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Synthetic end-to-end setting: 2-way 5-shot blobs in 20 dimensions. Step sizes
# are larger than the published 0.001 so one inner step can adapt a fresh task.
SYNTH_DIM = 20
SYNTH_STD = 0.5
SYNTH_MAML = dict(alpha=0.01, beta=0.1, meta_iterations=1000, meta_batch_size=25, adaptation_steps=1,
                  grad_mode="first_order", seed=0, test_batches=4, test_batch_size=25)


@pytest.fixture(scope="session")
def synthetic_run():
    from types import SimpleNamespace
    import time

    from episodic_maml.episodes import EpisodeConfig, SyntheticTasks
    from episodic_maml.maml import MamlConfig, meta_train

    source = SyntheticTasks(SYNTH_DIM, SYNTH_STD)
    episode_cfg = EpisodeConfig(2, 5, 15)
    maml_cfg = MamlConfig(**SYNTH_MAML)
    start = time.perf_counter()
    theta, history = meta_train(source, episode_cfg, maml_cfg)
    return SimpleNamespace(theta=theta, history=history, seconds=time.perf_counter() - start,
                           source=source, episode_cfg=episode_cfg, maml_cfg=maml_cfg)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
