"""Fiber-optic transmission simulation and low-complexity digital backpropagation DSP.

Dual-polarization split-step propagation (Manakov model), conventional and
enhanced split-step backpropagation receivers, a linear frequency-domain
equalizer, an analytic computational-cost model, a PM-QPSK modem chain and
an experiment runner with a small CLI.
"""

from .sigkit import (
    DualPolSignal,
    EssfmCoefficients,
    FiberParams,
    LinkConfig,
    alpha_from_db_per_km,
    dbm_to_watts,
    effective_length,
    scale_to_power,
    signal_power,
    watts_to_dbm,
)
from .spectral import OverlapPlan, fft, fft_frequencies, ifft, overlap_save_run
from .channel import SsfmStepConfig, propagate_link, propagate_span
from .dbp import (
    ARRANGEMENTS,
    DbpConfig,
    backpropagate,
    channel_memory_samples,
    estimate_channel_memory,
)
from .train import TrainConfig, TrainResult, load_coefficients, mse, optimize_coefficients, save_coefficients
from .costmodel import CostReport, cost_per_sample, optimize_block_length, sweep_link_length
from .modem import RxMetrics, TxConfig, butterfly_equalize, carrier_recover, measure_ber, modulate_pm_qpsk
from .cli import ExperimentResult, ExperimentSpec, load_spec, run_experiment

__version__ = "0.1.0"

__all__ = [
    "DualPolSignal",
    "EssfmCoefficients",
    "FiberParams",
    "LinkConfig",
    "alpha_from_db_per_km",
    "dbm_to_watts",
    "effective_length",
    "scale_to_power",
    "signal_power",
    "watts_to_dbm",
    "OverlapPlan",
    "fft",
    "ifft",
    "fft_frequencies",
    "overlap_save_run",
    "SsfmStepConfig",
    "propagate_span",
    "propagate_link",
    "ARRANGEMENTS",
    "DbpConfig",
    "backpropagate",
    "channel_memory_samples",
    "estimate_channel_memory",
    "TrainConfig",
    "TrainResult",
    "mse",
    "optimize_coefficients",
    "save_coefficients",
    "load_coefficients",
    "CostReport",
    "cost_per_sample",
    "optimize_block_length",
    "sweep_link_length",
    "TxConfig",
    "RxMetrics",
    "modulate_pm_qpsk",
    "butterfly_equalize",
    "carrier_recover",
    "measure_ber",
    "ExperimentSpec",
    "ExperimentResult",
    "load_spec",
    "run_experiment",
    "__version__",
]
