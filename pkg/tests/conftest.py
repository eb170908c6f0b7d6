import numpy as np
import pytest

from earl.generate import generate_dataset

ACCEPTANCE_LINES: list[str] = []


def write_lines(path, lines) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(f"{line}\n" for line in lines))
    return str(path)


@pytest.fixture
def small_file(tmp_path):
    """Four records, 4 bytes each: ``a\\t1``, ``b\\t2``, ..."""
    return write_lines(tmp_path / "small.txt", ["a\t1", "b\t2", "c\t3", "d\t4"])


@pytest.fixture(scope="session")
def uniform_1k(tmp_path_factory):
    path = tmp_path_factory.mktemp("u") / "uniform.txt"
    generate_dataset(path, 1000, "uniform", seed=5)
    return str(path)


@pytest.fixture(scope="session")
def shifted_normal(tmp_path_factory):
    """10^6 records from N(0.2, 1); the manifest carries the truth."""
    path = tmp_path_factory.mktemp("mean") / "normal.txt"
    generate_dataset(path, 1_000_000, "normal", loc=0.2, scale=1.0, seed=2024)
    return str(path)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
