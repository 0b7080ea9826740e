import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bailout.levy_model import JumpComponent, LevyModel, SizeDistribution

settings.register_profile(
    "bailout", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("bailout")


def regime_model(drift):
    """Jump diffusion of the two-regime experiment with the given drift."""
    return LevyModel(
        drift,
        0.2,
        (
            JumpComponent(0.8, "up", SizeDistribution.weibull(2.0, 1.0)),
            JumpComponent(0.2, "down", SizeDistribution.half_normal(1.0)),
        ),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """record(label, ok, detail): log a PASS/FAIL line for the terminal summary, then assert."""

    def record(label, ok, detail=""):
        status = "PASS" if ok else "FAIL"
        request.config.acceptance_lines.append(f"criterion {label}: {status}  {detail}")
        assert ok, f"criterion {label} failed: {detail}"

    return record
