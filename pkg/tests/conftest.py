import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from convsearch_rl.corpus import BM25Retriever  # noqa: E402
from convsearch_rl.dialogue import SyntheticSpec, generate_synthetic  # noqa: E402


@pytest.fixture(scope="session")
def synthetic():
    return generate_synthetic(SyntheticSpec())


@pytest.fixture(scope="session")
def small_synthetic():
    return generate_synthetic(SyntheticSpec(n_conversations=10, seed=3))


@pytest.fixture(scope="session")
def retriever(synthetic):
    return BM25Retriever().fit(synthetic[1])


@pytest.fixture(scope="session")
def small_retriever(small_synthetic):
    return BM25Retriever().fit(small_synthetic[1])


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
