"""Source waveforms and measurements against closed-form values."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minerlvrt.signals import (HarmonicSpec, MeasurementWindow, SagSpec, SineSpec, Source,
                               apply_sag, fundamental_phasor, harmonic_injection, power_metrics,
                               sag_envelope, sag_onset, sample_source, sliding_rms)

FS = 120e3  # whole samples per 60 Hz cycle


def _t(n_cycles=3, f0=60.0):
    return np.arange(int(round(n_cycles * FS / f0))) / FS


# -- sources and sags -------------------------------------------------------


class TestSine:
    def test_peak_and_phase(self):
        spec = SineSpec(240.0, 60.0, 90.0)
        assert spec.peak == pytest.approx(240.0 * math.sqrt(2))
        assert sample_source(spec, 0.0) == pytest.approx(spec.peak)

    def test_phase_wraps(self):
        assert SineSpec(phase_deg=-90.0).phase_deg == pytest.approx(270.0)

    @pytest.mark.parametrize("kw", [{"rms_volts": -1.0}, {"frequency": 0.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SineSpec(**kw)


class TestSag:
    @pytest.mark.parametrize("pow_deg", [0.0, 45.0, 90.0, 300.0])
    def test_onset_lands_on_requested_angle(self, pow_deg):
        spec = SineSpec()
        sag = SagSpec(0.5, pow_deg, 0.045, arm_time_s=0.4123)
        t_on = sag_onset(spec, sag)
        assert 0.4123 <= t_on < 0.4123 + 1 / 60
        assert float(spec.phase_at(t_on)) == pytest.approx(pow_deg, abs=1e-6)

    def test_envelope_window(self):
        spec = SineSpec()
        sag = SagSpec(0.25, 0.0, 0.015, arm_time_s=0.0)
        t = np.array([-1e-6, 0.0, 0.0149, 0.0151])
        assert list(sag_envelope(spec, sag, t)) == [1.0, 0.25, 0.25, 1.0]

    def test_apply_sag_scales_without_phase_jump(self):
        spec = SineSpec()
        sag = SagSpec(0.5, 45.0, 0.045)
        t = _t()
        ratio = apply_sag(spec, sag, t) / np.where(sample_source(spec, t) == 0, 1,
                                                   sample_source(spec, t))
        inside = sag_envelope(spec, sag, t) < 1
        assert np.allclose(ratio[inside & (np.abs(sample_source(spec, t)) > 1)], 0.5)

    @pytest.mark.parametrize("kw", [{"retained_fraction": 1.2}, {"retained_fraction": -0.1},
                                    {"retained_fraction": 0.5, "duration_s": 0.0},
                                    {"retained_fraction": 0.5, "arm_time_s": -1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SagSpec(**kw)

    def test_source_event_window(self):
        src = Source(sag=SagSpec(0.5, 90.0, 0.045, arm_time_s=0.4))
        t_on, t_off = src.event_window()
        assert t_off - t_on == pytest.approx(0.045)
        assert Source().event_window() is None


class TestHarmonics:
    def test_off_on_decay(self):
        spec = SineSpec()
        h = HarmonicSpec(((5, 0.1, 0.0),), decay_constant=50.0)
        t = np.array([0.05, 0.1521, 0.2521])
        out = harmonic_injection(spec, h, t, t_start=0.1, t_clear=0.2)
        w = 2 * math.pi * 60
        expect = 0.1 * spec.peak * np.sin(5 * w * t)
        assert out[0] == 0.0
        assert out[1] == pytest.approx(expect[1])
        assert out[2] == pytest.approx(expect[2] * math.exp(-50 * 0.0521))
        assert abs(expect[1]) > 1.0 and abs(expect[2]) > 1.0

    @pytest.mark.parametrize("comps", [((1, 0.1, 0.0),), ((5, -0.1, 0.0),),
                                       ((5, 0.1, 0.0), (5, 0.2, 0.0))])
    def test_invalid(self, comps):
        with pytest.raises(ValueError):
            HarmonicSpec(comps)


# -- measurements -------------------------------------------------------------


class TestSlidingRms:
    def test_sine(self):
        x = 10.0 * np.sin(2 * math.pi * 60 * _t())
        r = sliding_rms(x, FS)
        assert np.allclose(r, 10 / math.sqrt(2), rtol=1e-6)

    def test_step_reaches_new_value_after_one_window(self):
        x = np.concatenate([np.ones(2000), 3 * np.ones(4000)])
        r = sliding_rms(x, FS, MeasurementWindow(length_s=0.01))
        w = int(0.01 * FS)
        assert r[2000 + w - 1] == pytest.approx(3.0)
        assert r[2000 + w - 2] < 3.0
        assert r[1999] == pytest.approx(1.0)

    def test_stride_holds(self):
        x = np.arange(5000, dtype=float)
        r = sliding_rms(x, FS, MeasurementWindow(length_s=0.001, stride_s=0.0001))
        assert r[100] == r[105]

    def test_window_longer_than_trace(self):
        with pytest.raises(ValueError):
            sliding_rms(np.ones(10), FS)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.1, 1000.0), st.floats(0.0, 2 * math.pi))
    def test_property_sine_rms(self, amp, phi):
        x = amp * np.sin(2 * math.pi * 60 * _t(2) + phi)
        assert sliding_rms(x, FS)[-1] == pytest.approx(amp / math.sqrt(2), rel=1e-6)


class TestPhasorAndPower:
    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.1, 1000.0), st.floats(-3.0, 3.0))
    def test_property_fundamental_phasor(self, amp, phi):
        x = amp * np.sin(2 * math.pi * 60 * _t() + phi) + 0.2 * amp * np.sin(
            2 * math.pi * 300 * _t())
        ph = fundamental_phasor(x, FS, 60.0)
        assert abs(ph) == pytest.approx(amp, rel=1e-6)
        assert math.remainder(np.angle(ph) - phi, 2 * math.pi) == pytest.approx(0.0, abs=1e-6)

    def test_resistive_unity(self):
        t = _t()
        v = np.sin(2 * math.pi * 60 * t)
        pm = power_metrics(v, 2 * v, FS)
        assert pm.pf == pytest.approx(1.0)
        assert pm.p == pytest.approx(1.0)

    def test_leading_flag_and_displacement(self):
        t = _t()
        w = 2 * math.pi * 60
        pm = power_metrics(np.sin(w * t), np.sin(w * t + math.radians(30)), FS)
        assert pm.leading
        assert pm.displacement_deg == pytest.approx(30.0, abs=1e-6)
        assert pm.pf == pytest.approx(math.cos(math.radians(30)), rel=1e-6)
        assert not power_metrics(np.sin(w * t), np.sin(w * t - 0.3), FS).leading

    def test_distortion_lowers_pf(self):
        t = _t()
        w = 2 * math.pi * 60
        v = np.sin(w * t)
        i = np.sin(w * t) + 0.5 * np.sin(3 * w * t)
        assert power_metrics(v, i, FS).pf == pytest.approx(1 / math.sqrt(1.25), rel=1e-6)

    def test_zero_current(self):
        t = _t()
        with pytest.raises(ZeroDivisionError):
            power_metrics(np.sin(t), np.zeros_like(t), FS)
