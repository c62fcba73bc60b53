import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fiberdbp import (
    ARRANGEMENTS,
    DbpConfig,
    DualPolSignal,
    EssfmCoefficients,
    FiberParams,
    OverlapPlan,
    SsfmStepConfig,
    backpropagate,
    channel_memory_samples,
    effective_length,
    estimate_channel_memory,
    mse,
    propagate_link,
    scale_to_power,
)
from fiberdbp.channel import nonlinear_substep_ssfm
from fiberdbp.dbp import _reverse_step_schedule, nonlinear_substep_essfm

from .conftest import STANDARD_SPAN, noise_signal, quiet_link
from .oracles import essfm_phase_direct


def test_channel_memory_values():
    assert channel_memory_samples(21.0, 3000.0, 50e9) == pytest.approx(989.6016858807848)
    assert channel_memory_samples(-21.0, 3000.0, 50e9) == pytest.approx(989.6016858807848)
    assert estimate_channel_memory(21.0, 3000.0, 50e9) == 1024
    assert estimate_channel_memory(21.0, 3200.0, 50e9) == 2048
    assert estimate_channel_memory(21.0, 3200.0, 56e9) == 2048
    assert estimate_channel_memory(21.0, 2000.0, 50e9) == 1024


def test_channel_memory_validation():
    with pytest.raises(ValueError):
        channel_memory_samples(21.0, 0.0, 50e9)
    with pytest.raises(ValueError):
        channel_memory_samples(21.0, 100.0, 0.0)


@pytest.mark.parametrize("n_side", [0, 1, 2, 4])
def test_enhanced_substep_matches_nested_loop(rng, n_side):
    # rotation kept at a physical scale (well under a radian per step) so
    # the absolute tolerance is meaningful
    block = 0.7 * (rng.normal(size=(2, 16)) + 1j * rng.normal(size=(2, 16)))
    c = rng.normal(size=n_side + 1) * 0.3
    c[0] = 1.0
    coeffs = EssfmCoefficients(c)
    fast = nonlinear_substep_essfm(block, 1.7, 0.25, coeffs)
    slow = essfm_phase_direct(block, 1.7, 0.25, c)
    np.testing.assert_allclose(fast, slow, rtol=0.0, atol=1e-14)


def test_enhanced_substep_identity_is_plain_substep(rng):
    block = rng.normal(size=(2, 64)) + 1j * rng.normal(size=(2, 64))
    out = nonlinear_substep_essfm(block, 1.3, 18.2, EssfmCoefficients.identity(6))
    ref = nonlinear_substep_ssfm(block, 1.3, 18.2)
    np.testing.assert_array_equal(out, ref)


def test_enhanced_substep_validation(rng):
    block = rng.normal(size=(2, 16)) + 1j * rng.normal(size=(2, 16))
    with pytest.raises(ValueError):
        nonlinear_substep_essfm(block, 1.0, 1.0, EssfmCoefficients.identity(8))
    with pytest.raises(ValueError):
        nonlinear_substep_essfm(block[0], 1.0, 1.0, EssfmCoefficients.identity(1))


def test_dbp_config_validation():
    plan = OverlapPlan(256, 64)
    link = quiet_link(2)
    with pytest.raises(ValueError):
        DbpConfig("trellis", plan, link)
    with pytest.raises(ValueError):
        DbpConfig("ssfm", plan, link, num_steps=0)
    with pytest.raises(ValueError):
        DbpConfig("ssfm", plan, link, arrangement="diagonal")
    with pytest.raises(ValueError):
        DbpConfig("essfm", plan, link)  # coefficients missing
    with pytest.raises(ValueError):
        DbpConfig("essfm", plan, link, coeffs=EssfmCoefficients.identity(128))


@settings(max_examples=10)
@given(
    num_spans=st.integers(min_value=1, max_value=3),
    num_steps=st.integers(min_value=1, max_value=5),
    arrangement=st.sampled_from(ARRANGEMENTS),
    seed=st.integers(min_value=0, max_value=2**31),
)
def test_identity_coefficients_degenerate_to_plain_dbp(num_spans, num_steps, arrangement, seed):
    gen = np.random.default_rng(seed)
    sig = noise_signal(gen, n=1024)
    plan = OverlapPlan(512, 128)
    link = quiet_link(num_spans)
    plain = backpropagate(sig, DbpConfig("ssfm", plan, link, num_steps=num_steps, arrangement=arrangement))
    enhanced = backpropagate(
        sig,
        DbpConfig(
            "essfm",
            plan,
            link,
            num_steps=num_steps,
            coeffs=EssfmCoefficients.identity(16),
            arrangement=arrangement,
        ),
    )
    np.testing.assert_array_equal(plain.stack(), enhanced.stack())


def test_ffe_is_linear(rng):
    plan = OverlapPlan(1024, 256)
    link = quiet_link(4)
    a = noise_signal(rng, n=4096)
    b = noise_signal(rng, n=4096)
    mix = DualPolSignal(2.0 * a.x - 0.5j * b.x, 2.0 * a.y - 0.5j * b.y, a.sample_rate)

    out_mix = backpropagate(mix, DbpConfig("ffe", plan, link)).stack()
    out_a = backpropagate(a, DbpConfig("ffe", plan, link)).stack()
    out_b = backpropagate(b, DbpConfig("ffe", plan, link)).stack()
    err = np.max(np.abs(out_mix - (2.0 * out_a - 0.5j * out_b)))
    assert err < 1e-10 * np.max(np.abs(out_mix))


def test_ffe_inverts_linear_link(make_waveform):
    sig, _ = make_waveform(num_symbols=2**12, seed=5, power_dbm=0.0)
    span = FiberParams(beta2=-21.0, gamma=0.0, alpha_db_per_km=0.2, length=40.0)
    link = quiet_link(4, span=span)
    rx = propagate_link(sig, link, SsfmStepConfig(steps_per_span=1), rng=None)
    out = backpropagate(rx, DbpConfig("ffe", OverlapPlan(2048, 512), link))
    assert mse(out, sig) < 1e-6


def test_split_step_dbp_error_shrinks_with_steps(make_waveform):
    # noiseless nonlinear link: residual error non-increasing as the
    # reverse step count doubles (5% slack for the comparison)
    sig, _ = make_waveform(num_symbols=2**12, seed=11, power_dbm=0.0)
    link = quiet_link(10)
    rx = propagate_link(sig, link, SsfmStepConfig(steps_per_span=30), rng=None)
    plan = OverlapPlan(4096, 1024)
    prev = None
    for num_steps in (1, 2, 4, 8, 16, 32):
        err = mse(backpropagate(rx, DbpConfig("ssfm", plan, link, num_steps=num_steps)), sig)
        if prev is not None:
            assert err <= prev * 1.05
        prev = err
    # and the finest grid actually inverts most of the distortion
    assert prev < 0.05


def test_reverse_schedule_single_step():
    link = quiet_link(4)
    schedule = _reverse_step_schedule(link, 1)
    assert len(schedule) == 1
    dz, weight, gain = schedule[0]
    assert dz == pytest.approx(160.0)
    assert weight == pytest.approx(4.0 * effective_length(STANDARD_SPAN.alpha, 40.0), rel=1e-12)
    assert gain == pytest.approx(1.0)


def test_reverse_schedule_per_span_steps():
    link = quiet_link(3)
    schedule = _reverse_step_schedule(link, 3)
    le = effective_length(STANDARD_SPAN.alpha, 40.0)
    for dz, weight, gain in schedule:
        assert dz == pytest.approx(40.0)
        assert weight == pytest.approx(le, rel=1e-12)
        assert gain == pytest.approx(1.0)


@pytest.mark.parametrize("num_steps", [1, 2, 3, 5, 8, 160])
def test_reverse_schedule_conserves_totals(num_steps):
    # total nonlinear weight is Ns-invariant when the signal power is
    # restored at every sub-span boundary, and end-to-end gain is unity
    link = quiet_link(8)
    schedule = _reverse_step_schedule(link, num_steps)
    le = effective_length(STANDARD_SPAN.alpha, 40.0)
    # each segment weight equals the forward nonlinear phase integral of
    # that segment referenced to its own endpoint power; summed over a
    # whole span they telescope to at least the per-span effective length
    assert sum(w for _, w, _ in schedule) >= 8.0 * le - 1e-9
    gain_total = 1.0
    for _, _, g in schedule:
        gain_total *= g
    assert gain_total == pytest.approx(1.0, rel=1e-12)
    assert sum(dz for dz, _, _ in schedule) == pytest.approx(link.total_length)


def test_lossless_schedule_weights_equal_segment_length():
    span = FiberParams(beta2=-21.0, gamma=1.3, alpha_db_per_km=0.0, length=50.0)
    link = quiet_link(2, span=span)
    for dz, weight, gain in _reverse_step_schedule(link, 5):
        assert weight == pytest.approx(dz)
        assert gain == pytest.approx(1.0)


def test_backpropagate_warns_on_short_overlap(make_waveform):
    sig, _ = make_waveform(num_symbols=2**11, seed=9, power_dbm=0.0)
    link = quiet_link(80)
    with pytest.warns(UserWarning, match="channel memory"):
        backpropagate(sig, DbpConfig("ffe", OverlapPlan(1024, 256), link))


def test_backpropagate_quiet_when_overlap_sufficient(make_waveform, recwarn):
    sig, _ = make_waveform(num_symbols=2**11, seed=9, power_dbm=0.0)
    link = quiet_link(1)
    backpropagate(sig, DbpConfig("ffe", OverlapPlan(2048, 512), link))
    assert len(recwarn) == 0


def test_backpropagate_jobs_bit_identical(make_waveform):
    sig, _ = make_waveform(num_symbols=2**12, seed=10, power_dbm=0.0)
    link = quiet_link(2)
    cfg = DbpConfig("ssfm", OverlapPlan(2048, 512), link, num_steps=4)
    seq = backpropagate(sig, cfg, jobs=1)
    par = backpropagate(sig, cfg, jobs=3)
    np.testing.assert_array_equal(seq.stack(), par.stack())


@pytest.mark.parametrize("arrangement", ARRANGEMENTS)
def test_arrangements_converge_to_same_inverse(make_waveform, arrangement):
    # at many steps per span all sub-step orderings agree with the channel
    sig, _ = make_waveform(num_symbols=2**12, seed=12, power_dbm=0.0)
    link = quiet_link(2)
    rx = propagate_link(sig, link, SsfmStepConfig(steps_per_span=40), rng=None)
    cfg = DbpConfig("ssfm", OverlapPlan(4096, 1024), link, num_steps=80, arrangement=arrangement)
    assert mse(backpropagate(rx, cfg), sig) < 1e-4
