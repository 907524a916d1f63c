import time

import numpy as np
import pytest

from dance.costfn import CostFunctionSpec
from dance.evaluator import EvaluatorTrainConfig, TrainConfig, train_evaluator
from dance.oracle import HwSpace, generate_dataset, records_to_dataset
from dance.workload import ArchSpace


def tiny_config(epochs=6):
    return EvaluatorTrainConfig(
        hwgen=TrainConfig(epochs=epochs, batch_size=32, lr=0.05, optimizer="sgd",
                          schedule="constant"),
        costest=TrainConfig(epochs=epochs, batch_size=64, lr=3e-3, optimizer="adam",
                            schedule="cosine"),
        hwgen_width=16, costest_width=32)


@pytest.fixture(scope="session")
def small_dataset():
    return records_to_dataset(generate_dataset(60, rng_seed=0, cost_fn=CostFunctionSpec.edap()))


@pytest.fixture(scope="session")
def tiny_evaluator(small_dataset):
    """A fast, weakly trained evaluator for plumbing tests."""
    model, val = train_evaluator(small_dataset, ArchSpace(), HwSpace(), CostFunctionSpec.edap(),
                                 tiny_config())
    return model, val


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def smoke_config():
    from dance.evaluator import default_costest_config, default_hwgen_config
    return EvaluatorTrainConfig(hwgen=default_hwgen_config(epochs=20, decay_every=6, batch_size=16),
                                costest=default_costest_config(epochs=20, batch_size=64),
                                train_no_forwarding=False)


@pytest.fixture(scope="session")
def smoke_evaluator():
    """Evaluator at the smoke-preset scale (200 networks, 20 epochs per net)."""
    data = records_to_dataset(generate_dataset(200, rng_seed=1, cost_fn=CostFunctionSpec.edap()))
    model, _ = train_evaluator(data, ArchSpace(), HwSpace(), CostFunctionSpec.edap(), smoke_config())
    return model


@pytest.fixture(scope="session")
def smoke_pipeline(tmp_path_factory):
    """One ``pipeline --preset smoke --seed 1`` run; returns its output directory."""
    from dance.cli import main
    out = tmp_path_factory.mktemp("pipeline") / "run1"
    assert main(["pipeline", "--preset", "smoke", "--seed", "1", "--out", str(out)]) == 0
    return out


# acceptance verdicts, echoed after the run so they survive output capture
RESULTS: list[str] = []
_START = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(RESULTS):
        terminalreporter.write_line(line)
    terminalreporter.write_line(f"session wall time {time.perf_counter() - _START:.0f}s")
