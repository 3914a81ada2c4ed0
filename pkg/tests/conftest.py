import numpy as np
import pytest

from pseudolab import fixtures, pipeline
from pseudolab.features import FeatureConfig
from pseudolab.pipeline import ArchetypeSpec

SMALL_RETRIEVAL = FeatureConfig(hashed_dim=256, ngram_min=3, ngram_max=4)
SMALL_ARCHETYPES = (
    ArchetypeSpec("a", 256, 3, 5, 32),
    ArchetypeSpec("b", 128, 2, 4, 32),
    ArchetypeSpec("c", 192, 4, 6, 20),
)


@pytest.fixture(scope="session")
def small_dataset():
    return fixtures.make_synthetic_dataset(n_corpus=800, n_train=60, n_test=20, seed=3)


@pytest.fixture(scope="session")
def small_context(small_dataset):
    return pipeline.build_context(
        small_dataset.store, SMALL_RETRIEVAL, SMALL_ARCHETYPES
    )


@pytest.fixture(scope="session")
def small_pipeline_config():
    return pipeline.PipelineConfig(k=25)


@pytest.fixture(scope="session")
def big_dataset():
    """The 5,000-sentence fixture with 200 labeled training sentences."""
    return fixtures.make_synthetic_dataset()


@pytest.fixture(scope="session")
def big_context(big_dataset):
    import time

    start = time.monotonic()
    ctx = pipeline.build_context(big_dataset.store, SMALL_RETRIEVAL, SMALL_ARCHETYPES)
    return ctx, time.monotonic() - start


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Recorder for per-criterion verdict lines shown in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        verdict = "PASS" if passed else "FAIL"
        line = f"criterion {number:2d}: {verdict} — {detail}"
        ACCEPTANCE_LINES.append(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance summary")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
