import numpy as np
import pytest
from hypothesis import settings

from texttpp.backbone import BackboneConfig
from texttpp.core import Dataset, EventSequence, EventType
from texttpp.encode import PromptSpec
from texttpp.model import ModelConfig, TPPModel

settings.register_profile("texttpp", deadline=None, max_examples=50)
settings.load_profile("texttpp")


def random_sequence(rng, n, num_types, seq_id="s", rate=1.0):
    times = np.cumsum(rng.exponential(1.0 / rate, n))
    return EventSequence(seq_id, times, rng.integers(0, num_types, n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_dataset(rng):
    types = (EventType(0, "Nice Question"), EventType(1, "Good Answer"), EventType(2, "Popular Question"))
    seqs = tuple(random_sequence(rng, int(n), 3, f"q{i}") for i, n in enumerate(rng.integers(2, 9, 12)))
    return Dataset("toy", "days", types, seqs)


@pytest.fixture
def tiny_model_factory(toy_dataset):
    def make(intensity="thp", temporal="sinusoidal", prompt=False, order="type_first", seed=0, dim=8, ffn=16):
        spec = PromptSpec(enabled=prompt, text="events on a forum" if prompt else "", order=order)
        cfg = ModelConfig(
            backbone=BackboneConfig(num_layers=1, num_heads=2, model_dim=dim, ffn_dim=ffn),
            intensity=intensity,
            temporal=temporal,
            prompt=spec,
        )
        return TPPModel.from_dataset(toy_dataset, cfg, seed=seed)

    return make


# acceptance report: one line per criterion, repeated in the terminal summary

_REPORT: list[str] = []


@pytest.fixture
def report():
    def record(label: str, passed: bool | None, detail: str) -> None:
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
        line = f"{status}  {label}: {detail}"
        _REPORT.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
