import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("repo", max_examples=60, deadline=None, derandomize=True)
settings.load_profile("repo")

from labelleak.datagen import generate_stream, null_majority_spec, sliding_windows  # noqa: E402
from labelleak.model import ModelArch, init_model  # noqa: E402

_ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(cid): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, ok, detail in sorted(_ACCEPTANCE, key=lambda r: int(r[0])):
        terminalreporter.write_line(f"criterion {cid:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def criterion():
    """Record a criterion outcome: printed immediately and in the summary."""
    def record(cid, ok, detail):
        line = f"criterion {cid}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE.append((str(cid), bool(ok), detail))
        return ok
    return record


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_model(k=3, d=4, hidden=(5,), seed=0, bias=True, gain=0.5):
    return init_model(ModelArch(d, hidden, k, final_layer_has_bias=bias, init_gain=gain), seed)


@pytest.fixture(scope="session")
def har_windows():
    """Windows of one synthetic HAR-like client (K=6)."""
    spec = null_majority_spec(6, 3, 20_000, mean_dwell_windows=20, seed=3)
    return sliding_windows(generate_stream(spec, 7, client_id="h"), 50, 0.5)
