import numpy as np
import pytest

from ivuscal.phantom import default_phantom
from ivuscal.sim import AcquisitionSpec, random_calibration, simulate_acquisition

_acceptance_lines = []


def record_criterion(name, passed, detail=""):
    """Store a pass/fail line for the acceptance summary printed at the end of the run."""
    _acceptance_lines.append(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def phantom():
    return default_phantom()


@pytest.fixture(scope="session")
def noiseless(phantom):
    """Ground truth, sequence and problem for one noiseless acquisition."""
    gt = random_calibration(seed=7)
    seq = simulate_acquisition(phantom, gt, AcquisitionSpec(seed=7))
    return gt, seq, seq.problem(phantom)


@pytest.fixture(scope="session")
def noisy(phantom):
    gt = random_calibration(seed=11)
    spec = AcquisitionSpec(seed=11, pixel_noise_sigma=1.0, pose_translation_noise_sigma=0.2)
    seq = simulate_acquisition(phantom, gt, spec)
    return gt, seq, seq.problem(phantom)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
