"""Experiment runner: config files in, CSV out.

Scenarios
---------
* ``cost-fig1``: per-step cost versus block length at fixed overlap.
* ``cost-fig2``: per-step cost versus link length (overlap from the
  dispersion memory estimate, block length 8x).
* ``inset-table``: relative complexity of the four reference receiver
  configurations (ffe, 1-step essfm, 16- and 20-step ssfm).
* ``ber-sweep``: full transmission + receiver chain over launch powers,
  variants and Monte-Carlo blocks.
* ``train-coeffs``: fit enhanced-sub-step coefficients per launch power and
  write them to coefficient files.

The config file is line-oriented ``key = value`` text with ``[section]``
headers; unknown keys and malformed values fail with the offending line
number. Every key has a default, so an empty file is a valid spec. Any
scalar key can be overridden with an environment variable named
FIBERDBP_<SECTION>_<KEY> (e.g. FIBERDBP_LINK_NUM_SPANS=4, top-level keys
without the section part).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .sigkit import DualPolSignal, FiberParams, LinkConfig, scale_to_power
from .spectral import OverlapPlan
from .channel import SsfmStepConfig, apply_laser_phase_noise, propagate_link
from .dbp import DbpConfig, backpropagate
from .train import TrainConfig, mse, optimize_coefficients, save_coefficients, load_coefficients
from .costmodel import CostReport, cost_per_sample, cost_table_csv, sweep_link_length
from .modem import (
    TxConfig,
    butterfly_equalize,
    carrier_recover,
    evm_percent,
    measure_ber,
    modulate_pm_qpsk,
    qpsk_decide,
    qpsk_map,
)

FORMAT_VERSION = 1

SCENARIOS = ("cost-fig1", "cost-fig2", "ber-sweep", "train-coeffs", "inset-table")

CSV_HEADER = (
    "format_version,scenario,algorithm,ns,nc,power_dbm,ber,q_db,mse,"
    "mults_per_sample,latency_proxy,seed,status"
)

ENV_PREFIX = "FIBERDBP_"


class SpecError(ValueError):
    """Configuration file error, carrying file/line context."""


@dataclass(frozen=True)
class VariantSpec:
    """One receiver configuration of a ber-sweep."""

    name: str
    algorithm: str
    num_steps: int = 1
    n_coeffs: int = 32           # essfm only
    coeff_file: str | None = None
    arrangement: str = "symmetric"

    def __post_init__(self):
        if self.algorithm not in ("ffe", "ssfm", "essfm"):
            raise SpecError(f"variant {self.name}: unknown algorithm {self.algorithm!r}")
        if self.arrangement not in ("symmetric", "linear-first", "nonlinear-first"):
            raise SpecError(f"variant {self.name}: unknown arrangement {self.arrangement!r}")
        if self.num_steps < 1:
            raise SpecError(f"variant {self.name}: num_steps must be >= 1")
        if self.n_coeffs < 0:
            raise SpecError(f"variant {self.name}: n_coeffs must be >= 0")


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str
    link: LinkConfig
    tx: TxConfig
    train: TrainConfig
    variants: tuple[VariantSpec, ...]
    launch_powers_dbm: tuple[float, ...]
    num_blocks: int
    seeds: tuple[int, ...]
    output_path: str
    block_len: int = 8192
    overlap: int = 1024
    channel_steps_per_span: int = 16
    laser_linewidth_hz: float = 100e3
    lo_offset_hz: float = 0.0
    back_to_back: bool = False
    eq_taps: int = 15
    eq_step: float = 1e-3
    eq_passes: int = 2
    phase_window: int = 32
    sweep_lengths_km: tuple[float, ...] = (500.0, 1000.0, 2000.0, 4000.0, 8000.0)
    sweep_bandwidth_hz: float = 50e9
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise SpecError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.format_version != FORMAT_VERSION:
            raise SpecError(f"unsupported format_version {self.format_version}")
        if self.num_blocks < 1:
            raise SpecError("num_blocks must be >= 1")
        if len(self.seeds) != self.num_blocks:
            raise SpecError("seeds list length must equal num_blocks")
        if self.scenario in ("ber-sweep", "train-coeffs"):
            if not self.launch_powers_dbm:
                raise SpecError(f"{self.scenario} needs a non-empty launch power list")
        if self.scenario == "ber-sweep" and not self.variants:
            raise SpecError("ber-sweep needs a non-empty variant list")
        OverlapPlan(self.block_len, self.overlap)  # validates geometry

    @property
    def plan(self) -> OverlapPlan:
        return OverlapPlan(self.block_len, self.overlap)

    @property
    def skip_symbols(self) -> int:
        """Symbols excluded from BER counting: the coefficient-training
        prefix (uniform across variants for comparability)."""
        skip = self.train.train_samples // self.tx.samples_per_symbol
        return min(skip, self.tx.num_symbols // 2)


@dataclass
class ResultRow:
    scenario: str
    algorithm: str
    ns: int
    nc: int
    power_dbm: float
    ber: float
    q_db: float
    mse: float
    mults_per_sample: float
    latency_proxy: int
    seed: int
    status: str = "ok"

    def to_csv(self) -> str:
        return (
            f"{FORMAT_VERSION},{self.scenario},{self.algorithm},{self.ns},{self.nc},"
            f"{self.power_dbm:.2f},{self.ber:.2e},{self.q_db:.2f},{self.mse:.3e},"
            f"{self.mults_per_sample:.2f},{self.latency_proxy},{self.seed},{self.status}"
        )


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[ResultRow]
    csv_text: str

    @property
    def all_ok(self) -> bool:
        return all(r.status == "ok" for r in self.rows)

    def failed_rows(self) -> list[ResultRow]:
        return [r for r in self.rows if r.status != "ok"]

    def write(self, path: str | None = None) -> str:
        out = path or self.spec.output_path
        with open(out, "w", newline="") as fh:
            fh.write(self.csv_text)
        return out


# ---------------------------------------------------------------- spec file

def _to_int(raw: str) -> int:
    return int(raw.replace("_", ""), 0)


def _to_float(raw: str) -> float:
    return float(raw)


def _to_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("on", "true", "yes", "1"):
        return True
    if low in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {raw!r}")


def _to_str(raw: str) -> str:
    return raw.strip()


def _to_scenario(raw: str) -> str:
    name = raw.strip()
    if name not in SCENARIOS:
        raise ValueError(f"expected one of {', '.join(SCENARIOS)}, got {name!r}")
    return name


def _to_float_list(raw: str) -> tuple[float, ...]:
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if not items:
        raise ValueError("expected a comma-separated list of numbers")
    return tuple(float(s) for s in items)


def _to_int_list(raw: str) -> tuple[int, ...]:
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if not items:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(_to_int(s) for s in items)


def _to_gain(raw: str):
    return None if raw.strip().lower() == "transparent" else float(raw)


def _to_noise_figure(raw: str):
    return None if raw.strip().lower() in ("off", "none") else float(raw)


def _positive_int(raw: str) -> int:
    v = _to_int(raw)
    if v < 1:
        raise ValueError(f"expected a positive integer, got {v}")
    return v


# (section, key) -> converter; results land in a flat settings dict
_SCHEMA = {
    ("", "format_version"): _to_int,
    ("", "scenario"): _to_scenario,
    ("", "output"): _to_str,
    ("", "launch_powers_dbm"): _to_float_list,
    ("", "num_blocks"): _positive_int,
    ("", "seeds"): _to_int_list,
    ("", "back_to_back"): _to_bool,
    ("", "sweep_lengths_km"): _to_float_list,
    ("", "sweep_bandwidth_hz"): _to_float,
    ("link", "span_length_km"): _to_float,
    ("link", "num_spans"): _positive_int,
    ("link", "beta2_ps2_km"): _to_float,
    ("link", "gamma_per_w_km"): _to_float,
    ("link", "alpha_db_per_km"): _to_float,
    ("link", "amp_gain_db"): _to_gain,
    ("link", "amp_noise_figure_db"): _to_noise_figure,
    ("link", "pol_rotation"): _to_bool,
    ("link", "center_wavelength_nm"): _to_float,
    ("tx", "symbol_rate_baud"): _to_float,
    ("tx", "prbs_order"): _positive_int,
    ("tx", "samples_per_symbol"): _positive_int,
    ("tx", "pulse"): _to_str,
    ("tx", "rolloff"): _to_float,
    ("tx", "num_symbols"): _positive_int,
    ("tx", "rng_seed"): _to_int,
    ("tx", "laser_linewidth_hz"): _to_float,
    ("channel", "steps_per_span"): _positive_int,
    ("channel", "lo_offset_hz"): _to_float,
    ("rx", "equalizer_taps"): _positive_int,
    ("rx", "equalizer_step"): _to_float,
    ("rx", "equalizer_passes"): _positive_int,
    ("rx", "phase_window"): _positive_int,
    ("train", "n_coeffs"): _to_int,
    ("train", "target_steps_per_span"): _positive_int,
    ("train", "train_samples"): _positive_int,
    ("train", "max_iterations"): _positive_int,
    ("train", "tolerance"): _to_float,
    ("train", "rng_seed"): _to_int,
    ("dbp", "block_len"): _positive_int,
    ("dbp", "overlap"): _to_int,
}

_VARIANT_SCHEMA = {
    "algorithm": _to_str,
    "num_steps": _positive_int,
    "n_coeffs": _to_int,
    "coeff_file": _to_str,
    "arrangement": _to_str,
}

_DEFAULTS = {
    ("", "format_version"): FORMAT_VERSION,
    ("", "scenario"): "ber-sweep",
    ("", "output"): "results.csv",
    ("", "launch_powers_dbm"): (-2.0, -1.0, 0.0, 1.0),
    ("", "num_blocks"): 5,
    ("", "seeds"): (1, 2, 3, 4, 5),
    ("", "back_to_back"): False,
    ("", "sweep_lengths_km"): (500.0, 1000.0, 2000.0, 4000.0, 8000.0),
    ("", "sweep_bandwidth_hz"): 50e9,
    ("link", "span_length_km"): 40.0,
    ("link", "num_spans"): 80,
    ("link", "beta2_ps2_km"): -21.0,
    ("link", "gamma_per_w_km"): 1.3,
    ("link", "alpha_db_per_km"): 0.2,
    ("link", "amp_gain_db"): None,
    ("link", "amp_noise_figure_db"): 5.0,
    ("link", "pol_rotation"): True,
    ("link", "center_wavelength_nm"): 1550.0,
    ("tx", "symbol_rate_baud"): 28e9,
    ("tx", "prbs_order"): 11,
    ("tx", "samples_per_symbol"): 2,
    ("tx", "pulse"): "nrz",
    ("tx", "rolloff"): 0.2,
    ("tx", "num_symbols"): 2**15,
    ("tx", "rng_seed"): 1,
    ("tx", "laser_linewidth_hz"): 100e3,
    ("channel", "steps_per_span"): 16,
    ("channel", "lo_offset_hz"): 0.0,
    ("rx", "equalizer_taps"): 15,
    ("rx", "equalizer_step"): 1e-3,
    ("rx", "equalizer_passes"): 2,
    ("rx", "phase_window"): 32,
    ("train", "n_coeffs"): 32,
    ("train", "target_steps_per_span"): 4,
    ("train", "train_samples"): 16384,
    ("train", "max_iterations"): 30,
    ("train", "tolerance"): 1e-9,
    ("train", "rng_seed"): 0,
    ("dbp", "block_len"): 8192,
    ("dbp", "overlap"): 1024,
}

_DEFAULT_VARIANTS = (
    VariantSpec("ffe", "ffe"),
    VariantSpec("ssfm1", "ssfm", num_steps=1),
    VariantSpec("ssfm20", "ssfm", num_steps=20),
    VariantSpec("essfm1", "essfm", num_steps=1, n_coeffs=32),
)


def parse_spec_text(text: str, source: str = "<spec>", apply_env: bool = True) -> ExperimentSpec:
    """Parse spec text; every key is optional (defaults apply)."""
    settings = dict(_DEFAULTS)
    variants: dict[str, dict] = {}
    variant_order: list[str] = []

    section = ""
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise SpecError(f"{source}:{lineno}: malformed section header {rawline.strip()!r}")
            section = line[1:-1].strip().lower()
            if section.startswith("variant."):
                name = section[len("variant."):]
                if not name:
                    raise SpecError(f"{source}:{lineno}: variant section needs a name")
                if name not in variants:
                    variants[name] = {}
                    variant_order.append(name)
            elif section not in ("", "link", "tx", "channel", "rx", "train", "dbp"):
                raise SpecError(f"{source}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise SpecError(f"{source}:{lineno}: expected 'key = value', got {rawline.strip()!r}")
        key, _, raw_val = line.partition("=")
        key = key.strip().lower()
        raw_val = raw_val.strip()
        if section.startswith("variant."):
            name = section[len("variant."):]
            if key not in _VARIANT_SCHEMA:
                raise SpecError(f"{source}:{lineno}: unknown variant key {key!r}")
            try:
                variants[name][key] = _VARIANT_SCHEMA[key](raw_val)
            except ValueError as exc:
                raise SpecError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
        else:
            if (section, key) not in _SCHEMA:
                where = f"[{section}] " if section else ""
                raise SpecError(f"{source}:{lineno}: unknown key {where}{key!r}")
            try:
                settings[(section, key)] = _SCHEMA[(section, key)](raw_val)
            except ValueError as exc:
                raise SpecError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc

    if apply_env:
        _apply_env_overrides(settings)

    return _build_spec(settings, variants, variant_order)


def _apply_env_overrides(settings: dict):
    sections = ("link", "tx", "channel", "rx", "train", "dbp")
    for name, raw in sorted(os.environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        tail = name[len(ENV_PREFIX):].lower()
        section, key = "", tail
        for s in sections:
            if tail.startswith(s + "_"):
                section, key = s, tail[len(s) + 1:]
                break
        if (section, key) not in _SCHEMA:
            raise SpecError(f"environment override {name}: unknown spec key")
        try:
            settings[(section, key)] = _SCHEMA[(section, key)](raw)
        except ValueError as exc:
            raise SpecError(f"environment override {name}: bad value: {exc}") from exc


def _build_spec(settings: dict, variants: dict, variant_order: list[str]) -> ExperimentSpec:
    def get(section, key):
        return settings[(section, key)]

    span = FiberParams(
        beta2=get("link", "beta2_ps2_km"),
        gamma=get("link", "gamma_per_w_km"),
        alpha_db_per_km=get("link", "alpha_db_per_km"),
        length=get("link", "span_length_km"),
    )
    link = LinkConfig(
        span=span,
        num_spans=get("link", "num_spans"),
        amp_gain_db=get("link", "amp_gain_db"),
        amp_noise_figure_db=get("link", "amp_noise_figure_db"),
        pol_rotation=get("link", "pol_rotation"),
        center_wavelength_nm=get("link", "center_wavelength_nm"),
    )
    tx = TxConfig(
        symbol_rate=get("tx", "symbol_rate_baud"),
        prbs_order=get("tx", "prbs_order"),
        samples_per_symbol=get("tx", "samples_per_symbol"),
        pulse=get("tx", "pulse"),
        rolloff=get("tx", "rolloff"),
        num_symbols=get("tx", "num_symbols"),
        rng_seed=get("tx", "rng_seed"),
    )
    train = TrainConfig(
        n_coeffs=get("train", "n_coeffs"),
        target_steps_per_span=get("train", "target_steps_per_span"),
        train_samples=get("train", "train_samples"),
        max_iterations=get("train", "max_iterations"),
        tolerance=get("train", "tolerance"),
        rng_seed=get("train", "rng_seed"),
    )

    if variant_order:
        variant_list = []
        for name in variant_order:
            kv = variants[name]
            if "algorithm" not in kv:
                raise SpecError(f"variant {name!r} is missing the algorithm key")
            coeff_file = kv.get("coeff_file") or None
            variant_list.append(
                VariantSpec(
                    name=name,
                    algorithm=kv["algorithm"],
                    num_steps=kv.get("num_steps", 1),
                    n_coeffs=kv.get("n_coeffs", get("train", "n_coeffs")),
                    coeff_file=coeff_file,
                    arrangement=kv.get("arrangement", "symmetric"),
                )
            )
        variant_tuple = tuple(variant_list)
    else:
        variant_tuple = _DEFAULT_VARIANTS

    seeds = tuple(get("", "seeds"))
    num_blocks = get("", "num_blocks")
    if len(seeds) == 1 and num_blocks > 1:
        seeds = tuple(seeds[0] + i for i in range(num_blocks))

    return ExperimentSpec(
        scenario=get("", "scenario"),
        link=link,
        tx=tx,
        train=train,
        variants=variant_tuple,
        launch_powers_dbm=tuple(get("", "launch_powers_dbm")),
        num_blocks=num_blocks,
        seeds=seeds,
        output_path=get("", "output"),
        block_len=get("dbp", "block_len"),
        overlap=get("dbp", "overlap"),
        channel_steps_per_span=get("channel", "steps_per_span"),
        laser_linewidth_hz=get("tx", "laser_linewidth_hz"),
        lo_offset_hz=get("channel", "lo_offset_hz"),
        back_to_back=get("", "back_to_back"),
        eq_taps=get("rx", "equalizer_taps"),
        eq_step=get("rx", "equalizer_step"),
        eq_passes=get("rx", "equalizer_passes"),
        phase_window=get("rx", "phase_window"),
        sweep_lengths_km=tuple(get("", "sweep_lengths_km")),
        sweep_bandwidth_hz=get("", "sweep_bandwidth_hz"),
        format_version=get("", "format_version"),
    )


def load_spec(path: str, apply_env: bool = True) -> ExperimentSpec:
    """Parse a spec file. Unknown keys and malformed values raise SpecError
    with the file name and line number; an empty file yields the default
    spec."""
    with open(path) as fh:
        text = fh.read()
    return parse_spec_text(text, source=str(path), apply_env=apply_env)


def dump_spec(spec: ExperimentSpec) -> str:
    """Serialize a spec to config-file text that parses back to an equal
    spec (environment overrides aside)."""
    def b(v):
        return "on" if v else "off"

    def fl(values):
        return ", ".join(repr(float(v)) for v in values)

    lines = [
        f"format_version = {spec.format_version}",
        f"scenario = {spec.scenario}",
        f"output = {spec.output_path}",
        f"launch_powers_dbm = {fl(spec.launch_powers_dbm)}",
        f"num_blocks = {spec.num_blocks}",
        f"seeds = {', '.join(str(s) for s in spec.seeds)}",
        f"back_to_back = {b(spec.back_to_back)}",
        f"sweep_lengths_km = {fl(spec.sweep_lengths_km)}",
        f"sweep_bandwidth_hz = {spec.sweep_bandwidth_hz!r}",
        "",
        "[link]",
        f"span_length_km = {spec.link.span.length!r}",
        f"num_spans = {spec.link.num_spans}",
        f"beta2_ps2_km = {spec.link.span.beta2!r}",
        f"gamma_per_w_km = {spec.link.span.gamma!r}",
        f"alpha_db_per_km = {spec.link.span.alpha_db_per_km!r}",
        "amp_gain_db = " + ("transparent" if spec.link.amp_gain_db is None else repr(spec.link.amp_gain_db)),
        "amp_noise_figure_db = " + ("off" if spec.link.amp_noise_figure_db is None else repr(spec.link.amp_noise_figure_db)),
        f"pol_rotation = {b(spec.link.pol_rotation)}",
        f"center_wavelength_nm = {spec.link.center_wavelength_nm!r}",
        "",
        "[tx]",
        f"symbol_rate_baud = {spec.tx.symbol_rate!r}",
        f"prbs_order = {spec.tx.prbs_order}",
        f"samples_per_symbol = {spec.tx.samples_per_symbol}",
        f"pulse = {spec.tx.pulse}",
        f"rolloff = {spec.tx.rolloff!r}",
        f"num_symbols = {spec.tx.num_symbols}",
        f"rng_seed = {spec.tx.rng_seed}",
        f"laser_linewidth_hz = {spec.laser_linewidth_hz!r}",
        "",
        "[channel]",
        f"steps_per_span = {spec.channel_steps_per_span}",
        f"lo_offset_hz = {spec.lo_offset_hz!r}",
        "",
        "[rx]",
        f"equalizer_taps = {spec.eq_taps}",
        f"equalizer_step = {spec.eq_step!r}",
        f"equalizer_passes = {spec.eq_passes}",
        f"phase_window = {spec.phase_window}",
        "",
        "[train]",
        f"n_coeffs = {spec.train.n_coeffs}",
        f"target_steps_per_span = {spec.train.target_steps_per_span}",
        f"train_samples = {spec.train.train_samples}",
        f"max_iterations = {spec.train.max_iterations}",
        f"tolerance = {spec.train.tolerance!r}",
        f"rng_seed = {spec.train.rng_seed}",
        "",
        "[dbp]",
        f"block_len = {spec.block_len}",
        f"overlap = {spec.overlap}",
    ]
    for v in spec.variants:
        lines += [
            "",
            f"[variant.{v.name}]",
            f"algorithm = {v.algorithm}",
            f"num_steps = {v.num_steps}",
            f"n_coeffs = {v.n_coeffs}",
            f"arrangement = {v.arrangement}",
        ]
        if v.coeff_file:
            lines.append(f"coeff_file = {v.coeff_file}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ experiments

def _tx_seed(spec: ExperimentSpec, block_seed: int) -> int:
    return int(np.random.SeedSequence([spec.tx.rng_seed, block_seed]).generate_state(1)[0])


def _simulate_block(spec: ExperimentSpec, power_dbm: float, power_idx: int, block_seed: int):
    """Transmit and propagate one Monte-Carlo block; returns the received
    waveform and the reference symbols."""
    tx_cfg = replace(spec.tx, rng_seed=_tx_seed(spec, block_seed))
    sig, reference = modulate_pm_qpsk(tx_cfg)
    sig = scale_to_power(sig, power_dbm)

    ss = np.random.SeedSequence([block_seed, power_idx, 0xF1BE])
    noise_seed, link_seed = ss.spawn(2)
    sig = apply_laser_phase_noise(sig, spec.laser_linewidth_hz, rng=noise_seed)
    if not spec.back_to_back:
        sig = propagate_link(sig, spec.link, SsfmStepConfig(spec.channel_steps_per_span), rng=link_seed)
        if spec.lo_offset_hz != 0.0:
            t = np.arange(len(sig)) / sig.sample_rate
            rot = np.exp(2j * np.pi * spec.lo_offset_hz * t)
            sig = DualPolSignal(sig.x * rot, sig.y * rot, sig.sample_rate)
    return sig, reference


def _fine_reference(spec: ExperimentSpec, received: DualPolSignal) -> tuple[np.ndarray, slice]:
    """Fine-step backpropagation of the training prefix, plus the window on
    which waveform MSE is scored."""
    n = min(spec.train.train_samples, len(received))
    prefix = DualPolSignal(received.x[:n], received.y[:n], received.sample_rate)
    cfg = DbpConfig(
        "ssfm",
        spec.plan,
        spec.link,
        num_steps=spec.train.target_steps_per_span * spec.link.num_spans,
    )
    target = backpropagate(prefix, cfg).stack()
    edge = spec.overlap // 2
    if n <= 4 * edge:
        edge = 0
    return target, slice(edge, n - edge if edge else n)


def _variant_coefficients(spec: ExperimentSpec, variant: VariantSpec, received: DualPolSignal):
    if variant.coeff_file:
        return load_coefficients(variant.coeff_file)
    geometry = DbpConfig("ssfm", spec.plan, spec.link, num_steps=variant.num_steps,
                         arrangement=variant.arrangement)
    train_cfg = replace(spec.train, n_coeffs=variant.n_coeffs)
    return optimize_coefficients(received, geometry, train_cfg).coefficients


def _receive_variant(
    spec: ExperimentSpec,
    variant: VariantSpec,
    received: DualPolSignal,
    reference: np.ndarray,
    fine_target: np.ndarray | None,
    fine_window: slice | None,
):
    """Run one receiver variant; returns (ber, q_db, waveform_mse, evm)."""
    if spec.back_to_back:
        compensated = received
        wave_mse = math.nan
    else:
        coeffs = None
        if variant.algorithm == "essfm":
            coeffs = _variant_coefficients(spec, variant, received)
        cfg = DbpConfig(
            variant.algorithm,
            spec.plan,
            spec.link,
            num_steps=variant.num_steps,
            coeffs=coeffs,
            arrangement=variant.arrangement,
        )
        compensated = backpropagate(received, cfg)
        if fine_target is not None:
            n = fine_target.shape[1]
            head = compensated.stack()[:, :n][:, fine_window]
            wave_mse = mse(head, fine_target[:, fine_window])
        else:
            wave_mse = math.nan

    equalized = butterfly_equalize(
        compensated, taps=spec.eq_taps, step_size=spec.eq_step, passes=spec.eq_passes
    )
    symbols = np.stack([equalized.x, equalized.y])
    recovered = carrier_recover(
        symbols, spec.tx.symbol_rate, reference=reference, window=spec.phase_window
    )
    decided = qpsk_decide(recovered)
    reference_bits = qpsk_decide(reference)
    ev = evm_percent(recovered, _nearest_constellation(recovered))
    metrics = measure_ber(decided, reference_bits, skip=2 * spec.skip_symbols, evm=ev)
    return metrics.ber, metrics.q_factor_db, wave_mse, ev


def _nearest_constellation(symbols: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.mean(np.abs(symbols) ** 2))
    return scale * qpsk_map(
        (symbols.real < 0).astype(np.float64), (symbols.imag < 0).astype(np.float64)
    )


def _ber_task(spec: ExperimentSpec, power_idx: int, block_idx: int) -> dict[str, ResultRow]:
    """All variant rows for one (power, block) cell."""
    power = spec.launch_powers_dbm[power_idx]
    seed = spec.seeds[block_idx]
    rows: dict[str, ResultRow] = {}

    def cost_columns(variant: VariantSpec) -> tuple[int, int, float, int]:
        nc = variant.n_coeffs if variant.algorithm == "essfm" else 0
        rep = cost_per_sample(
            variant.algorithm, spec.block_len, spec.overlap, n_coeffs=nc,
            num_steps=variant.num_steps,
        )
        return rep.num_steps, nc, rep.mults_per_sample, rep.latency_proxy

    try:
        received, reference = _simulate_block(spec, power, power_idx, seed)
        fine_target, fine_window = (None, None)
        if not spec.back_to_back:
            fine_target, fine_window = _fine_reference(spec, received)
    except Exception as exc:  # propagation failed: every variant row fails
        for variant in spec.variants:
            ns, nc, mults, lat = cost_columns(variant)
            rows[variant.name] = ResultRow(
                spec.scenario, variant.algorithm, ns, nc, power,
                math.nan, math.nan, math.nan, mults, lat, seed,
                status=_failure(exc),
            )
        return rows

    for variant in spec.variants:
        ns, nc, mults, lat = cost_columns(variant)
        try:
            ber, q_db, wave_mse, _ = _receive_variant(
                spec, variant, received, reference, fine_target, fine_window
            )
            rows[variant.name] = ResultRow(
                spec.scenario, variant.algorithm, ns, nc, power,
                ber, q_db, wave_mse, mults, lat, seed,
            )
        except Exception as exc:
            rows[variant.name] = ResultRow(
                spec.scenario, variant.algorithm, ns, nc, power,
                math.nan, math.nan, math.nan, mults, lat, seed,
                status=_failure(exc),
            )
    return rows


def _failure(exc: Exception) -> str:
    msg = f"failed: {type(exc).__name__}: {exc}"
    return msg.replace(",", ";").replace("\n", " ")[:160]


def _cost_rows_to_result(spec: ExperimentSpec, reports: list[CostReport]) -> ExperimentResult:
    csv_text = f"# format_version={FORMAT_VERSION}\n" + cost_table_csv(reports)
    rows = [
        ResultRow(
            spec.scenario, r.algorithm, r.num_steps, r.n_coeffs, math.nan,
            math.nan, math.nan, math.nan, r.mults_per_sample, r.latency_proxy, 0,
        )
        for r in reports
    ]
    return ExperimentResult(spec, rows, csv_text)


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> ExperimentResult:
    """Execute a spec and return rows plus rendered CSV.

    ber-sweep cells (power x block) may run in a process pool (``jobs``);
    rows are assembled in spec order so output is independent of scheduling.
    Per-row failures are recorded in the status column and do not abort the
    run.
    """
    if jobs < 1:
        raise ValueError("jobs must be >= 1")

    if spec.scenario == "cost-fig1":
        m = spec.overlap
        reports = []
        for alg in ("ffe", "ssfm", "essfm"):
            nc = spec.train.n_coeffs if alg == "essfm" else 0
            for mult in (2, 4, 8, 16, 32):
                reports.append(cost_per_sample(alg, mult * m, m, n_coeffs=nc, num_steps=1))
        return _cost_rows_to_result(spec, reports)

    if spec.scenario == "cost-fig2":
        reports = sweep_link_length(
            ("ffe", "ssfm", "essfm"),
            spec.sweep_lengths_km,
            abs(spec.link.span.beta2),
            spec.sweep_bandwidth_hz,
            n_coeffs=spec.train.n_coeffs,
        )
        return _cost_rows_to_result(spec, reports)

    if spec.scenario == "inset-table":
        n, m, nc = spec.block_len, spec.overlap, spec.train.n_coeffs
        reports = [
            cost_per_sample("ffe", n, m),
            cost_per_sample("essfm", n, m, n_coeffs=nc, num_steps=1),
            cost_per_sample("ssfm", n, m, num_steps=16),
            cost_per_sample("ssfm", n, m, num_steps=20),
        ]
        return _cost_rows_to_result(spec, reports)

    if spec.scenario == "train-coeffs":
        return _run_train_coeffs(spec)

    return _run_ber_sweep(spec, jobs)


def _run_ber_sweep(spec: ExperimentSpec, jobs: int) -> ExperimentResult:
    cells = [(pi, bi) for pi in range(len(spec.launch_powers_dbm)) for bi in range(spec.num_blocks)]
    if jobs == 1:
        cell_rows = [_ber_task(spec, pi, bi) for pi, bi in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_ber_task, spec, pi, bi) for pi, bi in cells]
            cell_rows = [f.result() for f in futures]
    by_cell = dict(zip(cells, cell_rows))

    rows = []
    for pi in range(len(spec.launch_powers_dbm)):
        for variant in spec.variants:
            for bi in range(spec.num_blocks):
                rows.append(by_cell[(pi, bi)][variant.name])
    csv_text = CSV_HEADER + "\n" + "\n".join(r.to_csv() for r in rows) + "\n"
    return ExperimentResult(spec, rows, csv_text)


def _run_train_coeffs(spec: ExperimentSpec) -> ExperimentResult:
    rows = []
    base, ext = os.path.splitext(spec.output_path)
    if ext == ".csv" or not ext:
        coeff_base = base
    else:
        coeff_base = spec.output_path
    for pi, power in enumerate(spec.launch_powers_dbm):
        seed = spec.seeds[0]
        try:
            received, _ = _simulate_block(spec, power, pi, seed)
            geometry = DbpConfig("ssfm", spec.plan, spec.link, num_steps=1)
            result = optimize_coefficients(received, geometry, spec.train)
            path = f"{coeff_base}_p{power:+.1f}dBm.coeffs"
            save_coefficients(path, result.coefficients)
            rows.append(
                ResultRow(
                    spec.scenario, "essfm", 1, spec.train.n_coeffs, power,
                    math.nan, math.nan, result.final_mse,
                    cost_per_sample("essfm", spec.block_len, spec.overlap,
                                    n_coeffs=spec.train.n_coeffs).mults_per_sample,
                    1, seed,
                )
            )
        except Exception as exc:
            rows.append(
                ResultRow(
                    spec.scenario, "essfm", 1, spec.train.n_coeffs, power,
                    math.nan, math.nan, math.nan, math.nan, 1, seed,
                    status=_failure(exc),
                )
            )
    csv_text = CSV_HEADER + "\n" + "\n".join(r.to_csv() for r in rows) + "\n"
    return ExperimentResult(spec, rows, csv_text)


# ------------------------------------------------------------------- CLI

def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fiberdbp",
        description="Fiber transmission and backpropagation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("cost", "complexity scenarios (cost-fig1 / cost-fig2 / inset-table)"),
        ("sweep", "BER versus launch power sweep"),
        ("train", "fit enhanced-sub-step coefficients"),
        ("run", "run whatever scenario the spec selects"),
    ):
        p = sub.add_parser(name, help=desc)
        p.add_argument("--spec", help="spec file (defaults apply when omitted)")
        p.add_argument("--out", help="override the output path")
        p.add_argument("--seed", type=int, help="override the seed list base")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for sweep cells")
        if name == "cost":
            p.add_argument(
                "--scenario",
                choices=("cost-fig1", "cost-fig2", "inset-table"),
                help="which complexity table to emit",
            )
    return parser


def main(argv=None) -> int:
    args = _make_parser().parse_args(argv)
    try:
        spec = load_spec(args.spec) if args.spec else parse_spec_text("", source="<defaults>")
    except (OSError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    overrides = {}
    if args.command == "sweep":
        overrides["scenario"] = "ber-sweep"
    elif args.command == "train":
        overrides["scenario"] = "train-coeffs"
    elif args.command == "cost":
        if args.scenario:
            overrides["scenario"] = args.scenario
        elif spec.scenario not in ("cost-fig1", "cost-fig2", "inset-table"):
            overrides["scenario"] = "cost-fig1"
    if args.out:
        overrides["output_path"] = args.out
    if args.seed is not None:
        overrides["seeds"] = tuple(args.seed + i for i in range(spec.num_blocks))
    if overrides:
        spec = replace(spec, **overrides)

    try:
        result = run_experiment(spec, jobs=args.jobs)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    path = result.write()
    print(f"wrote {path} ({len(result.rows)} rows)")
    failed = result.failed_rows()
    if failed:
        print(f"{len(failed)} of {len(result.rows)} rows failed:", file=sys.stderr)
        for r in failed:
            print(f"  {r.algorithm} ns={r.ns} p={r.power_dbm} seed={r.seed}: {r.status}",
                  file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
