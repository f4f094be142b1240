import numpy as np
import pytest

from visprompt.dictionary import build_similarity_dictionary
from visprompt.embedding import estimate_gaussian_prior, make_rng
from visprompt.testbed import TestbedSpec, generate
from visprompt.trainer import TrainConfig, train_visual_prompts


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_task():
    return generate(TestbedSpec(dim=16, images=40, eval_images=20, vocab_fillers=60,
                                modes_per_category=3, seed=3))


@pytest.fixture(scope="session")
def small_dicts(small_task):
    ds = small_task.dataset
    return {c: build_similarity_dictionary(ds, small_task.vocabulary, c, 10, 0.7, exclude=ds.categories)
            for c in ds.categories}


@pytest.fixture(scope="session")
def small_trained(small_task, small_dicts):
    config = TrainConfig(n_vectors=4, epochs=8, batch_size=8, seed=1)
    prior = estimate_gaussian_prior(small_task.vocabulary.embeddings)
    return train_visual_prompts(small_task.dataset, small_dicts, config, make_rng(1), prior=prior)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, passed, detail)``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number, passed, detail):
        lines[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(lines[number])
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
