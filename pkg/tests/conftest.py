import numpy as np
import pytest

from diffeditor.config import RunConfig
from diffeditor.ingestion.dataset import Dataset, ingest_manifest
from diffeditor.ingestion.manifest import load_manifest
from diffeditor.toy import make_toy_corpus


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    make_toy_corpus(root, n_utterances=5, seed=0)
    return root


@pytest.fixture(scope="session")
def toy_data(toy_dir):
    summary = ingest_manifest(load_manifest(toy_dir / "manifest.jsonl"), toy_dir / "cache")
    assert not summary.failures
    return toy_dir / "cache"


@pytest.fixture(scope="session")
def toy_dataset(toy_data):
    return Dataset.load(toy_data)


@pytest.fixture
def tiny_cfg():
    """A very small model for fast unit tests."""
    return RunConfig.load(
        "toy",
        [
            "model.d=16",
            "model.encoder_ff=32",
            "model.predictor_width=8",
            "model.denoiser_blocks=2",
            "model.denoiser_width=8",
            "word_encoder.d_word=24",
            "training.batch_size=2",
        ],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else "")
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
