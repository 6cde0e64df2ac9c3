"""Shared fixtures and the acceptance-criteria reporting hook."""

import pytest
from hypothesis import settings

import toydiffusion as td
from toydiffusion.train import NAIVE, TIMENOISE

settings.register_profile("suite", deadline=None, max_examples=40)
settings.load_profile("suite")

# One line per acceptance criterion, printed in the terminal summary so the
# verdicts survive pytest's output capture.
ACCEPTANCE_LINES = []


def record_criterion(num: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(
        f"criterion {num:2d}: {'PASS' if passed else 'FAIL'} - {detail}"
    )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def world():
    return td.GaussianWorld()


@pytest.fixture(scope="session")
def vp():
    return td.NoiseSchedule.vp()


@pytest.fixture(scope="session")
def ve():
    return td.NoiseSchedule.ve()


@pytest.fixture(scope="session")
def remedy_checkpoints(world, vp):
    """Reference 20k-step checkpoints, {naive, timenoise} x seeds 0..2.

    Built once per session (roughly 40 s); used by the training-remedy
    acceptance criterion.
    """
    noise = td.TimeNoiseParams(beta_m=2.0, a=5.0)
    ckpts = {}
    for seed in (0, 1, 2):
        for mode in (NAIVE, TIMENOISE):
            cfg = td.TrainConfig(
                mode=mode,
                steps=20_000,
                seed=seed,
                timenoise=noise if mode == TIMENOISE else None,
            )
            ckpts[(seed, mode)] = td.train(world, vp, cfg)
    return ckpts
