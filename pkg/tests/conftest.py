import numpy as np
import pytest

from contrafp.audio import AudioBuffer, TARGET_RATE
from contrafp.nn import Encoder, EncoderConfig


def make_tone(freq_hz: float, seconds: float, rate: int = TARGET_RATE,
              amplitude: float = 0.5) -> AudioBuffer:
    t = np.arange(int(round(seconds * rate)), dtype=np.float64) / rate
    return AudioBuffer((amplitude * np.sin(2.0 * np.pi * freq_hz * t)).astype(np.float32), rate)


@pytest.fixture(scope="session")
def small_config() -> EncoderConfig:
    # two narrow conv stages keep forward/backward cheap in unit tests
    return EncoderConfig(conv_channels=(4, 8))


@pytest.fixture(scope="session")
def small_encoder(small_config) -> Encoder:
    return Encoder(small_config)


@pytest.fixture(scope="session")
def small_params(small_config, small_encoder):
    return small_encoder.init_params(seed=0)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Replay acceptance verdict lines after the run; pytest capture hides
    per-test prints on pass, and these lines should always be visible."""
    try:
        from test_acceptance import REPORT_LINES
    except ImportError:
        return
    if REPORT_LINES:
        terminalreporter.section("acceptance gates")
        for line in REPORT_LINES:
            terminalreporter.line(line)
