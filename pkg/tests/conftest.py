import numpy as np
import pytest

from refsteg import Corpus, CarrierResolver
from refsteg.carrier import file_location, CarrierRecord
from refsteg.fixtures import experiment1


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def exp1():
    """(carrier bytes, label model) for the knife example."""
    return experiment1()


@pytest.fixture
def exp1_files(tmp_path, exp1):
    from refsteg import save_model

    carrier, model = exp1
    cpath = tmp_path / "tree.ppm"
    cpath.write_bytes(carrier)
    mpath = tmp_path / "label.bshm"
    save_model(model, mpath)
    return cpath, mpath


@pytest.fixture
def corpus(tmp_path):
    """A corpus of five random files of 2-16 KiB."""
    rng = np.random.default_rng(7)
    c = Corpus(tmp_path / "corpus")
    for _ in range(5):
        c.add(rng.integers(0, 256, int(rng.integers(2048, 16384)), dtype=np.uint8).tobytes())
    return c


@pytest.fixture
def resolver(corpus, tmp_path):
    return CarrierResolver(corpus=corpus, cache_dir=tmp_path / "cache")


def write_carrier(path, data: bytes) -> CarrierRecord:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return CarrierRecord(file_location(path), data)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import REPORT

    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
