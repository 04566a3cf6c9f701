import sys

import numpy as np
import pytest

from eyemod import synth


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None) if mod else None
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in verdicts:
            terminalreporter.write_line(line)


@pytest.fixture
def spec():
    return synth.FrameSpec(seed=7)


@pytest.fixture
def qpsk_frame(spec):
    rng = np.random.default_rng(spec.seed)
    return synth.modulate(synth.ModulationScheme.QPSK, spec, rng)
