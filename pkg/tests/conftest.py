import sys

import numpy as np
import pytest

from weaklift import data as D


def random_pose(rng, n=None, scale=300.0):
    """Root-relative random joints in mm; (16, 3) or (n, 16, 3)."""
    shape = (16, 3) if n is None else (n, 16, 3)
    p = rng.normal(scale=scale, size=shape)
    p[..., 0, :] = 0.0
    return p


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_small():
    """(paired, weak) synthetic records, noiseless, shared across tests."""
    return D.generate_synthetic(D.SynthConfig(n_samples=120, seed=5, weak_fraction=0.25))


@pytest.fixture(scope="session")
def synth_noisy():
    return D.generate_synthetic(D.SynthConfig(n_samples=60, seed=9, weak_fraction=0.5, noise_sigma=4.0))


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines after the test report."""
    mod = sys.modules.get("test_acceptance")
    lines = mod.summary_lines() if mod is not None else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
