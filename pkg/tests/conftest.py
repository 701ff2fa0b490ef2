import numpy as np
import pytest

from kcan.checks import toy_config, toy_problem
from kcan.graph import load_dataset
from kcan.synth import SynthConfig, generate, write_dataset


@pytest.fixture(scope="session")
def toy():
    return toy_problem(0)


@pytest.fixture
def toy_cfg():
    return toy_config()


@pytest.fixture(scope="session")
def small_data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    write_dataset(generate(SynthConfig(users=30, items=20, seed=3)), out)
    return out


@pytest.fixture(scope="session")
def small(small_data_dir):
    return load_dataset(small_data_dir, 0)


def random_csr(rng, n_rows, max_deg=6):
    deg = rng.integers(0, max_deg + 1, size=n_rows)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(deg, out=indptr[1:])
    return indptr


def pytest_terminal_summary(terminalreporter):
    import sys

    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(module, "RESULTS", {})
    lines = [results[k] for k in sorted(results)]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
