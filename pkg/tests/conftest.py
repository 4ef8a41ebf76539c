import numpy as np
import pytest

from twrelay.linalg import herm
from twrelay.model import (ChannelSet, PrecoderSet, SystemConfig,
                           relay_input_covariance)
from twrelay.sim import config_for_snr, draw_channels


def crandn(rng, *shape):
    return (rng.standard_normal(shape)
            + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_instance(seed, n=2, m=2, snr_db=10.0, reciprocal=True):
    rng = np.random.default_rng(seed)
    return config_for_snr(n, m, snr_db), draw_channels(n, m, reciprocal, rng)


def random_feasible(cfg, ch, rng, streams=None, fill=None):
    """Random precoders inside every budget.  With `fill` given the source
    powers use that fraction of their budgets and the relay its full one."""
    n, m = ch.N, ch.M
    d = n if streams is None else streams
    A1, A2, Ar = crandn(rng, n, d), crandn(rng, n, d), crandn(rng, m, m)
    f1, f2, fr = (rng.uniform(0, 1, 3) if fill is None else (fill, fill, 1))
    A1 *= np.sqrt(f1 * cfg.tau1 / np.vdot(A1, A1).real)
    A2 *= np.sqrt(f2 * cfg.tau2 / np.vdot(A2, A2).real)
    r_x = relay_input_covariance(cfg, ch, A1, A2)
    Ar *= np.sqrt(fr * cfg.taur / np.trace(Ar @ r_x @ herm(Ar)).real)
    return PrecoderSet(A1, A2, Ar)


@pytest.fixture
def scalar_ones():
    """N = M = 1 with every gain, budget and noise variance equal to one."""
    cfg = SystemConfig(1, 1, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    one = np.ones((1, 1))
    return cfg, ChannelSet(one, one, one, one)


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    """Store (and print) the one-line verdict of an acceptance criterion."""
    line = (f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  "
            f"{detail}")
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
