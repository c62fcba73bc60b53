import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fiberdbp import (
    DualPolSignal,
    FiberParams,
    LinkConfig,
    SsfmStepConfig,
    TxConfig,
    modulate_pm_qpsk,
    scale_to_power,
)

# the sandbox box is slow and single-core; wall-clock deadlines only flake
settings.register_profile(
    "suite", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("suite")

STANDARD_SPAN = FiberParams(beta2=-21.0, gamma=1.3, alpha_db_per_km=0.2, length=40.0)


def quiet_link(num_spans, span=STANDARD_SPAN):
    """Transparent link with ASE, rotations and wavelength defaults off."""
    return LinkConfig(
        span=span,
        num_spans=num_spans,
        amp_gain_db=None,
        amp_noise_figure_db=None,
        pol_rotation=False,
    )


@pytest.fixture(scope="session")
def make_waveform():
    """QPSK test waveforms, cached per (symbols, seed, power) tuple."""
    cache = {}

    def build(num_symbols=2**12, seed=3, power_dbm=0.0):
        key = (num_symbols, seed, power_dbm)
        if key not in cache:
            sig, bits = modulate_pm_qpsk(TxConfig(num_symbols=num_symbols, rng_seed=seed))
            cache[key] = (scale_to_power(sig, power_dbm), bits)
        sig, bits = cache[key]
        return sig, bits

    return build


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def noise_signal(rng, n=4096, sample_rate=56e9):
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    y = rng.normal(size=n) + 1j * rng.normal(size=n)
    return DualPolSignal(x, y, sample_rate)
