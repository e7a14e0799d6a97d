import numpy as np
import pytest

from handcast.synth import SynthConfig, synth_generate
from handcast import trainer as tr


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Twenty short synthetic clips, generated once per session."""
    root = tmp_path_factory.mktemp("synth20")
    synth_generate(SynthConfig(n_clips=20, frames_per_clip=40, seed=3), root)
    return root


@pytest.fixture(scope="session")
def small_samples(small_dataset):
    return tr.load_dataset(small_dataset)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


VERDICTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
