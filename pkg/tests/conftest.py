import numpy as np
import pytest

from squeezewave import ModelConfig

ACCEPTANCE_LINES: list[str] = []


def record_criterion(line: str) -> None:
    """Print a criterion's pass line and repeat it in the run summary."""
    print("\n" + line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(variant="waveglow", **overrides) -> ModelConfig:
    """Small, fast configuration exercising the full flow structure."""
    base = dict(
        group_size=4,
        n_flows=3,
        n_early_every=0,
        n_early_size=0,
        wn_layers=2,
        wn_width=8,
        wn_kernel=3,
        variant=variant,
        cond_before_upsample=False,
        n_mels=6,
        hop=8,
        window_samples=64,
    )
    base.update(overrides)
    return ModelConfig(**base).validate()
