from __future__ import annotations

import numpy as np
import pytest

from simex import synth
from simex.rng import stream


@pytest.fixture(scope="session")
def glyph_set():
    return synth.glyphs(4, seed=0)


@pytest.fixture
def rng():
    return stream(1234, "tests")


def init64(layers, seed=0):
    """Glorot-init every parametrized layer and promote params to float64."""
    rng = stream(seed, "init64")
    for layer in layers:
        layer.init_params(rng)
        layer.params[:] = [p.astype(np.float64) for p in layer.params]
    return layers


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = [mod.RESULTS[k] for k in sorted(mod.RESULTS)] if mod else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
