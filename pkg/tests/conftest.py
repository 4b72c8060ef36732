import numpy as np
import pytest

from vcshift.dsp import Waveform


def sine(freq, seconds=1.0, sr=16000, amp=1.0, phase=0.0):
    t = np.arange(int(round(seconds * sr))) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t + phase), sr)


def sawtooth(freq, seconds=1.0, sr=16000, amp=0.8):
    t = np.arange(int(round(seconds * sr))) / sr
    return Waveform(amp * (2 * ((t * freq) % 1.0) - 1), sr)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# small model settings shared by training/harness/eval tests
TINY_OVERRIDES = (
    "encoder.layer_count=1", "encoder.hidden_size=16", "encoder.head_count=2", "encoder.conv_channels=16,16",
    "vocoder.base_channels=16", "vocoder.resblock_kernels=3", "vocoder.resblock_dilations=1,2",
    "vocoder.disc_channels=8,8,8,8", "vocoder.disc_groups=1,2,4,1",
    "training.batch_size=2", "training.segment_frames=16", "training.steps=10",
)


@pytest.fixture(scope="session")
def tiny_cfg():
    from vcshift.config import load_config
    return load_config(overrides=TINY_OVERRIDES)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    from vcshift.corpus import build_nonparallel_corpus
    return build_nonparallel_corpus(tmp_path_factory.mktemp("corpus"), 2, 20.0, seed=0)


@pytest.fixture(scope="session")
def tiny_parallel(tmp_path_factory):
    from vcshift.corpus import build_parallel_corpus
    return build_parallel_corpus(tmp_path_factory.mktemp("parallel"), utterances=3, seed=0)


@pytest.fixture(scope="session")
def tiny_trained(tiny_cfg, tiny_corpus, tmp_path_factory):
    """A 10-step stage-1 run: (TrainResult, out_dir)."""
    from vcshift.training import run_training
    out = tmp_path_factory.mktemp("run")
    return run_training(1, tiny_corpus, tiny_cfg, out_dir=out), out


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, text: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {text}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
