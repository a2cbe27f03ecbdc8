import numpy as np
import pytest

from icc.model import (ChannelRealization, SystemConfig, TransmitFrame, draw_trial, superpose)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def batch_trials(cfg: SystemConfig, n_trials: int, noise_var: float | None = None, start: int = 0):
    """Stack ``n_trials`` seeded trials; returns (ch, frame, y)."""
    draws = [draw_trial(cfg, t) for t in range(start, start + n_trials)]
    ch = ChannelRealization.stack([d[0] for d in draws])
    frame = TransmitFrame.stack([d[1] for d in draws])
    w = np.stack([d[2] for d in draws])
    nv = cfg.noise_var if noise_var is None else noise_var
    return ch, frame, superpose(ch.h, frame.x, w, nv)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one summary line per acceptance criterion; printed at the end of the run."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number: int, passed: bool, text: str):
        lines.append((number, f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {text}"))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
