"""Source waveforms (sine, point-on-wave sags, decaying harmonics) and measurements."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class SineSpec:
    rms_volts: float = 240.0
    frequency: float = 60.0
    phase_deg: float = 0.0

    def __post_init__(self):
        if self.rms_volts < 0:
            raise ValueError(f"rms_volts must be >= 0 (got {self.rms_volts})")
        if not self.frequency > 0:
            raise ValueError(f"frequency must be > 0 (got {self.frequency})")
        object.__setattr__(self, "phase_deg", float(self.phase_deg) % 360.0)

    @property
    def peak(self) -> float:
        return SQRT2 * self.rms_volts

    def phase_at(self, t):
        """Source phase angle in degrees, wrapped to [0, 360)."""
        return np.mod(360.0 * self.frequency * np.asarray(t, dtype=float) + self.phase_deg, 360.0)


@dataclass(frozen=True)
class SagSpec:
    """Rectangular sag: amplitude scaled to ``retained_fraction`` for ``duration_s``.

    Onset is the first instant at or after ``arm_time_s`` at which the source
    phase equals ``start_pow_deg``.
    """

    retained_fraction: float
    start_pow_deg: float = 0.0
    duration_s: float = 0.045
    arm_time_s: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.retained_fraction <= 1.0:
            raise ValueError(f"retained_fraction must lie in [0, 1] (got {self.retained_fraction})")
        if not self.duration_s > 0:
            raise ValueError(f"duration_s must be > 0 (got {self.duration_s})")
        if self.arm_time_s < 0:
            raise ValueError(f"arm_time_s must be >= 0 (got {self.arm_time_s})")
        object.__setattr__(self, "start_pow_deg", float(self.start_pow_deg) % 360.0)


@dataclass(frozen=True)
class HarmonicSpec:
    """Additive harmonic content: (order, amplitude fraction of fundamental peak, phase)."""

    components: tuple[tuple[int, float, float], ...] = ((5, 0.08, 0.0), (7, 0.05, 0.0),
                                                         (11, 0.03, 0.0), (13, 0.02, 0.0))
    decay_constant: float = 20.0

    def __post_init__(self):
        comps = tuple((int(o), float(a), float(ph)) for o, a, ph in self.components)
        orders = [c[0] for c in comps]
        if len(set(orders)) != len(orders):
            raise ValueError("harmonic orders must be distinct")
        for o, a, _ in comps:
            if o < 2:
                raise ValueError(f"harmonic order must be >= 2 (got {o})")
            if a < 0:
                raise ValueError(f"amplitude_fraction must be >= 0 (got {a})")
        if self.decay_constant < 0:
            raise ValueError("decay_constant must be >= 0")
        object.__setattr__(self, "components", comps)


@dataclass(frozen=True)
class MeasurementWindow:
    """Rectangular measurement window; ``None`` means one fundamental cycle / one sample."""

    length_s: float | None = None
    stride_s: float | None = None

    def __post_init__(self):
        if self.length_s is not None and not self.length_s > 0:
            raise ValueError("length_s must be > 0")
        if self.stride_s is not None and not self.stride_s > 0:
            raise ValueError("stride_s must be > 0")


def sample_source(spec: SineSpec, t):
    """Instantaneous value of the ideal sinusoidal source."""
    t = np.asarray(t, dtype=float)
    out = spec.peak * np.sin(2.0 * np.pi * spec.frequency * t + np.deg2rad(spec.phase_deg))
    return float(out) if out.ndim == 0 else out


def sag_onset(spec: SineSpec, sag: SagSpec) -> float:
    """First time >= ``sag.arm_time_s`` at which the source phase equals ``start_pow_deg``."""
    period = 1.0 / spec.frequency
    phase_now = float(spec.phase_at(sag.arm_time_s))
    delta = (sag.start_pow_deg - phase_now) % 360.0
    if delta > 360.0 - 1e-9:
        delta = 0.0
    return sag.arm_time_s + delta / 360.0 * period


def sag_envelope(spec: SineSpec, sag: SagSpec | None, t):
    """Amplitude multiplier: ``retained_fraction`` inside [onset, onset + duration), else 1."""
    t = np.asarray(t, dtype=float)
    if sag is None:
        return np.ones_like(t)
    t_on = sag_onset(spec, sag)
    inside = (t >= t_on) & (t < t_on + sag.duration_s)
    return np.where(inside, sag.retained_fraction, 1.0)


def apply_sag(spec: SineSpec, sag: SagSpec, t):
    """Sagged source value; phase is continuous across the sag boundaries."""
    out = sample_source(spec, t) * sag_envelope(spec, sag, t)
    return float(out) if np.ndim(out) == 0 else out


def harmonic_injection(spec: SineSpec, harmonics: HarmonicSpec, t, t_start: float,
                       t_clear: float):
    """Harmonic voltage active from ``t_start``, decaying exponentially after ``t_clear``."""
    t = np.asarray(t, dtype=float)
    env = np.where(t < t_start, 0.0,
                   np.where(t < t_clear, 1.0,
                            np.exp(-harmonics.decay_constant * np.clip(t - t_clear, 0.0, None))))
    w = 2.0 * np.pi * spec.frequency
    out = np.zeros_like(t)
    for order, amp, ph in harmonics.components:
        out += amp * spec.peak * np.sin(order * (w * t + np.deg2rad(spec.phase_deg))
                                        + np.deg2rad(ph))
    return out * env


@dataclass(frozen=True)
class Source:
    """Ideal voltage source with an optional sag and optional harmonic injection.

    Harmonics switch on at sag onset and decay after the sag clears; with no
    sag they are applied from ``t = 0`` without decay.
    """

    sine: SineSpec = field(default_factory=SineSpec)
    sag: SagSpec | None = None
    harmonics: HarmonicSpec | None = None

    def waveform(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        v = sample_source(self.sine, t) * sag_envelope(self.sine, self.sag, t)
        if self.harmonics is not None:
            t_on, t_off = self.event_window() or (0.0, math.inf)
            v = v + harmonic_injection(self.sine, self.harmonics, t, t_on, t_off)
        return v

    def event_window(self) -> tuple[float, float] | None:
        if self.sag is None:
            return None
        t_on = sag_onset(self.sine, self.sag)
        return t_on, t_on + self.sag.duration_s


# ---------------------------------------------------------------------------
# Measurements
# ---------------------------------------------------------------------------


def sliding_rms(x, sample_rate: float, window: MeasurementWindow | None = None,
                frequency: float = 60.0) -> np.ndarray:
    """Trailing rectangular-window RMS.

    Samples before the first full window are held at the first full-window
    value.  With a stride longer than one sample the output is updated every
    stride and held in between.
    """
    x = np.asarray(x, dtype=float)
    window = window or MeasurementWindow()
    length = window.length_s if window.length_s is not None else 1.0 / frequency
    w = int(round(length * sample_rate))
    if w < 2:
        raise ValueError("RMS window must span at least 2 samples")
    if w > x.size:
        raise ValueError(f"RMS window ({w} samples) is longer than the trace ({x.size})")
    c = np.concatenate(([0.0], np.cumsum(x * x)))
    ms = (c[w:] - c[:-w]) / w
    out = np.empty_like(x)
    out[w - 1:] = np.sqrt(np.clip(ms, 0.0, None))
    out[:w - 1] = out[w - 1]
    if window.stride_s is not None:
        stride = max(int(round(window.stride_s * sample_rate)), 1)
        if stride > 1:
            idx = (np.arange(x.size) - (w - 1)) // stride * stride + (w - 1)
            out = out[np.clip(idx, w - 1, None)]
    return out


def fundamental_phasor(x, sample_rate: float, f0: float) -> complex:
    """Peak-amplitude phasor of the ``f0`` component via single-frequency correlation.

    Uses the longest whole-cycle prefix of ``x``; the phase is referred to the
    first sample as a sine reference (``A sin(wt + phi)`` -> ``A e^{j phi}``).
    """
    x = np.asarray(x, dtype=float)
    per = sample_rate / f0
    ncyc = int(x.size // per)
    if ncyc < 1:
        raise ValueError("need at least one fundamental period of samples")
    n = int(round(ncyc * per))
    n = min(n, x.size)
    t = np.arange(n) / sample_rate
    w = 2.0 * np.pi * f0
    # A sin(wt + phi) = A sin(phi) cos(wt) + A cos(phi) sin(wt)
    a_sin = 2.0 / n * np.dot(x[:n], np.sin(w * t))
    a_cos = 2.0 / n * np.dot(x[:n], np.cos(w * t))
    return complex(a_sin, a_cos)


@dataclass(frozen=True)
class PowerMetrics:
    p: float
    s: float
    pf: float
    leading: bool
    displacement_deg: float

    def to_dict(self) -> dict:
        return {"p": self.p, "s": self.s, "pf": self.pf, "leading": self.leading,
                "displacement_deg": self.displacement_deg}


def power_metrics(v, i, sample_rate: float, f0: float = 60.0) -> PowerMetrics:
    """Active/apparent power, true power factor and leading/lagging flag.

    ``pf = P / (Vrms Irms)`` over the longest whole-cycle prefix; leading means
    the fundamental current leads the fundamental voltage.
    """
    v = np.asarray(v, dtype=float)
    i = np.asarray(i, dtype=float)
    if v.shape != i.shape:
        raise ValueError("voltage and current channels must be aligned")
    per = sample_rate / f0
    ncyc = int(v.size // per)
    if ncyc < 1:
        raise ValueError("need at least one fundamental period of samples")
    n = min(int(round(ncyc * per)), v.size)
    v, i = v[:n], i[:n]
    p = float(np.mean(v * i))
    s = float(math.sqrt(np.mean(v * v)) * math.sqrt(np.mean(i * i)))
    if s == 0.0:
        raise ZeroDivisionError("apparent power is zero; power factor undefined")
    v1 = fundamental_phasor(v, sample_rate, f0)
    i1 = fundamental_phasor(i, sample_rate, f0)
    disp = math.degrees(np.angle(i1 / v1)) if abs(v1) > 0 and abs(i1) > 0 else 0.0
    return PowerMetrics(p=p, s=s, pf=p / s, leading=disp > 0.0, displacement_deg=disp)
