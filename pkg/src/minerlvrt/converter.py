"""Switching-level single-phase PFC boost converter.

The power stage is a diode bridge feeding a boost inductor, an IGBT to the
return rail and a boost diode into the DC-bus capacitor.  The DC bus feeds a
constant-power load (the hash boards).  Control is the classic dual loop:

* an outer PI on the DC-bus error yields a power command ``k`` (W),
* the multiplier ``i_ref = k * v_rect / max(v_rms**2, epsilon)`` shapes the
  inductor-current reference like the rectified input voltage,
* an inner PI on the current error yields the duty ratio, compared against a
  triangular carrier to produce the gate signal.

All per-step work is done by numba kernels operating on flat float arrays so
that a run of a million steps costs tens of milliseconds.  The dataclasses
and thin wrappers in this module are the Python-facing surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from numba import njit

# ---------------------------------------------------------------------------
# Flat-array layout shared with the engine kernel
# ---------------------------------------------------------------------------

P_PAV = 0
P_VNOM = 1
P_VREF = 2
P_L = 3
P_C = 4
P_R = 5
P_FSW = 6
P_DMAX = 7
P_EPS = 8
P_KPV = 9
P_KIV = 10
P_KPI = 11
P_KII = 12
P_ITRIP = 13
P_VOVER = 14
P_VUNDER = 15
P_DCDELAY = 16
P_LATCH = 17
P_DCPROT = 18
P_DIODE = 19
P_CUTOFF = 20
P_KMAX = 21
P_ARM = 22
P_OCPROT = 23
N_PARAMS = 24

S_IL = 0
S_VDC = 1
S_INTV = 2
S_INTI = 3
S_CARRIER = 4
S_T = 5
S_TRIPPED = 6
S_CAUSE = 7
S_TTRIP = 8
S_ISUM = 9
S_VSUM = 10
S_POS = 11
S_ICOUNT = 12
S_DCTIMER = 13
S_GATE = 14
S_IREF = 15
S_DUTY = 16
S_KCMD = 17
S_VRECT = 18
S_IIN = 19
S_VRMS = 20
S_IRMS = 21
S_ILOAD = 22
S_VTERM = 23
S_IL_PREV = 24
N_STATE = 25

CAUSE_NONE = 0
CAUSE_OVERCURRENT = 1
CAUSE_DC_OVERVOLTAGE = 2
CAUSE_DC_UNDERVOLTAGE = 3

ERR_OK = 0
ERR_NONFINITE = 1


class TripCause(str, Enum):
    NONE = "none"
    OVERCURRENT = "overcurrent"
    DC_OVERVOLTAGE = "dc_overvoltage"
    DC_UNDERVOLTAGE = "dc_undervoltage"


_CAUSE_BY_CODE = {
    CAUSE_NONE: TripCause.NONE,
    CAUSE_OVERCURRENT: TripCause.OVERCURRENT,
    CAUSE_DC_OVERVOLTAGE: TripCause.DC_OVERVOLTAGE,
    CAUSE_DC_UNDERVOLTAGE: TripCause.DC_UNDERVOLTAGE,
}


@dataclass(frozen=True)
class TripStatus:
    """Protection latch outcome of one converter block."""

    state: str = "armed"
    cause: TripCause = TripCause.NONE
    trip_time: float | None = None

    def __post_init__(self):
        if self.state not in ("armed", "tripped"):
            raise ValueError(f"state: expected 'armed' or 'tripped', got {self.state!r}")
        object.__setattr__(self, "cause", TripCause(self.cause))
        if (self.cause is TripCause.NONE) != (self.state == "armed"):
            raise ValueError("cause must be 'none' exactly when state is 'armed'")

    @property
    def tripped(self) -> bool:
        return self.state == "tripped"

    def to_dict(self) -> dict:
        return {"state": self.state, "cause": self.cause.value, "trip_time": self.trip_time}


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProtectionParams:
    """Protection thresholds.

    ``i_trip_rms`` of ``None`` resolves to 1.5x the rated input RMS current.
    DC-bus over/undervoltage tripping is implemented but off by default;
    only the inductor-current RMS trip is enabled out of the box.
    """

    i_trip_rms: float | None = None
    v_dc_over: float = 460.0
    v_dc_under: float = 280.0
    uv_ov_delay_s: float = 0.005
    latching: bool = True
    overcurrent_enabled: bool = True
    dc_voltage_enabled: bool = False

    def __post_init__(self):
        if self.i_trip_rms is not None and not self.i_trip_rms > 0:
            raise ValueError("i_trip_rms must be positive")
        if self.uv_ov_delay_s < 0:
            raise ValueError("uv_ov_delay_s must be non-negative")


@dataclass(frozen=True)
class PIGains:
    kp: float
    ki: float

    def __post_init__(self):
        if self.kp < 0 or self.ki < 0:
            raise ValueError("PI gains must be non-negative")


@dataclass(frozen=True)
class ConverterParams:
    """Electrical and control parameters of one PFC boost block.

    Inductance, capacitance and both PI gain pairs may be left as ``None``;
    they are then sized from ``dc_ripple_pp``/``inductor_ripple_fraction``
    and the loop bandwidths ``f_v_bw``/``f_i_bw``.
    """

    p_av: float = 3200.0
    v_in_rms_nom: float = 240.0
    v_dc_ref: float = 400.0
    frequency: float = 60.0
    inductance: float | None = None
    capacitance: float | None = None
    series_resistance: float = 0.0
    diode_drop: float = 0.0
    f_switch: float = 20e3
    duty_max: float = 0.95
    epsilon: float = 1.0
    power_limit_pu: float = 2.0
    load_cutoff_pu: float = 0.75
    dc_ripple_pp: float = 40.0
    inductor_ripple_fraction: float = 0.2
    f_v_bw: float = 10.0
    f_i_bw: float = 2000.0
    pi_voltage: PIGains | None = None
    pi_current: PIGains | None = None
    protection: ProtectionParams = field(default_factory=ProtectionParams)

    def __post_init__(self):
        # nested sections may arrive as mappings from config files
        for name, cls in (("pi_voltage", PIGains), ("pi_current", PIGains),
                          ("protection", ProtectionParams)):
            val = getattr(self, name)
            if isinstance(val, dict):
                object.__setattr__(self, name, cls(**val))
        checks = [
            ("p_av", self.p_av > 0, "must be > 0"),
            ("v_in_rms_nom", self.v_in_rms_nom > 0, "must be > 0"),
            ("v_dc_ref", self.v_dc_ref > 0, "must be > 0"),
            ("frequency", self.frequency > 0, "must be > 0"),
            ("series_resistance", self.series_resistance >= 0, "must be >= 0"),
            ("diode_drop", self.diode_drop >= 0, "must be >= 0"),
            ("duty_max", 0 < self.duty_max < 1, "must lie in (0, 1)"),
            ("epsilon", self.epsilon > 0, "must be > 0"),
            ("f_switch", self.f_switch >= 100 * self.frequency,
             "must be at least 100x the fundamental frequency"),
            ("power_limit_pu", self.power_limit_pu > 1, "must be > 1"),
            ("load_cutoff_pu", 0 <= self.load_cutoff_pu < 1, "must lie in [0, 1)"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ValueError(f"{name} {msg} (got {getattr(self, name)!r})")
        for name in ("inductance", "capacitance"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be > 0 (got {val!r})")
        prot = self.protection
        if not prot.v_dc_under < self.v_dc_ref < prot.v_dc_over:
            raise ValueError("protection: require v_dc_under < v_dc_ref < v_dc_over")

        if self.inductance is None or self.capacitance is None:
            L, C = size_components(self.p_av, self.v_dc_ref, self.frequency, self.dc_ripple_pp,
                                   self.inductor_ripple_fraction, self.f_switch,
                                   self.v_in_rms_nom)
            if self.inductance is None:
                object.__setattr__(self, "inductance", L)
            if self.capacitance is None:
                object.__setattr__(self, "capacitance", C)
        if self.pi_voltage is None or self.pi_current is None:
            pv, pc = design_pi_gains(self.inductance, self.capacitance, self.f_v_bw,
                                     self.f_i_bw, v_dc_ref=self.v_dc_ref, f0=self.frequency,
                                     f_switch=self.f_switch)
            if self.pi_voltage is None:
                object.__setattr__(self, "pi_voltage", pv)
            if self.pi_current is None:
                object.__setattr__(self, "pi_current", pc)
        if prot.i_trip_rms is None:
            object.__setattr__(self, "protection",
                               replace(prot, i_trip_rms=1.5 * self.rated_input_current))

    @property
    def rated_input_current(self) -> float:
        return self.p_av / self.v_in_rms_nom

    @property
    def load_cutoff_voltage(self) -> float:
        return self.load_cutoff_pu * self.v_dc_ref

    def aggregate(self, n: int) -> ConverterParams:
        """Scale to ``n`` identical units in lockstep.

        Power, capacitance and the trip current scale with ``n``; inductance and
        ESR scale with ``1/n``.  Gains follow so that the per-unit closed loop is
        unchanged: the current loop gain is in duty per ampere (``1/n``), the
        voltage loop gain in watts per volt (``n``).
        """
        if n < 1:
            raise ValueError("aggregate count must be >= 1")
        prot = replace(self.protection, i_trip_rms=self.protection.i_trip_rms * n)
        return replace(
            self,
            p_av=self.p_av * n,
            inductance=self.inductance / n,
            capacitance=self.capacitance * n,
            series_resistance=self.series_resistance / n,
            epsilon=self.epsilon,
            pi_voltage=PIGains(self.pi_voltage.kp * n, self.pi_voltage.ki * n),
            pi_current=PIGains(self.pi_current.kp / n, self.pi_current.ki / n),
            protection=prot,
        )

    def to_array(self, arming_time_s: float = 0.0) -> np.ndarray:
        p = np.zeros(N_PARAMS)
        prot = self.protection
        p[P_PAV] = self.p_av
        p[P_VNOM] = self.v_in_rms_nom
        p[P_VREF] = self.v_dc_ref
        p[P_L] = self.inductance
        p[P_C] = self.capacitance
        p[P_R] = self.series_resistance
        p[P_FSW] = self.f_switch
        p[P_DMAX] = self.duty_max
        p[P_EPS] = self.epsilon
        p[P_KPV] = self.pi_voltage.kp
        p[P_KIV] = self.pi_voltage.ki
        p[P_KPI] = self.pi_current.kp
        p[P_KII] = self.pi_current.ki
        p[P_ITRIP] = prot.i_trip_rms
        p[P_VOVER] = prot.v_dc_over
        p[P_VUNDER] = prot.v_dc_under
        p[P_DCDELAY] = prot.uv_ov_delay_s
        p[P_LATCH] = 1.0 if prot.latching else 0.0
        p[P_DCPROT] = 1.0 if prot.dc_voltage_enabled else 0.0
        p[P_OCPROT] = 1.0 if prot.overcurrent_enabled else 0.0
        p[P_DIODE] = self.diode_drop
        p[P_CUTOFF] = self.load_cutoff_voltage
        p[P_KMAX] = self.power_limit_pu * self.p_av
        p[P_ARM] = arming_time_s
        return p


# ---------------------------------------------------------------------------
# Design helpers
# ---------------------------------------------------------------------------


def boost_ripple_volt_seconds(v_in_pk: float, v_dc: float) -> float:
    """Worst-case ``v_in * (1 - v_in / v_dc)`` over ``0 <= v_in <= v_in_pk``.

    The boost ripple is ``dI = v_in * D / (L f)`` with ``D = 1 - v_in / v_dc``;
    the product peaks at ``v_in = v_dc / 2`` when the line peak reaches it.
    """
    v_star = min(v_dc / 2.0, v_in_pk)
    return v_star * (1.0 - v_star / v_dc)


def size_components(p_av: float, v_dc_ref: float, f0: float, dc_ripple_pp: float,
                    inductor_ripple_fraction: float, f_switch: float,
                    v_in_rms_nom: float) -> tuple[float, float]:
    """Size boost inductor and DC-bus capacitor.

    C = p_av / (2*pi * f0 * v_dc_ref * dc_ripple_pp)     (second-harmonic ripple)
    L = max_v[v (1 - v/v_dc_ref)] / (f_switch * ripple_fraction * I_pk)
    with I_pk = sqrt(2) * p_av / v_in_rms_nom the line-peak input current.

    The capacitor relation follows from the 2*f0 power pulsation of amplitude
    p_av: the bus ripple *amplitude* is p_av / (2*pi * 2*f0 * C * v_dc_ref), so
    the peak-to-peak ripple is twice that.
    """
    args = dict(p_av=p_av, v_dc_ref=v_dc_ref, f0=f0, dc_ripple_pp=dc_ripple_pp,
                f_switch=f_switch, v_in_rms_nom=v_in_rms_nom,
                inductor_ripple_fraction=inductor_ripple_fraction)
    for name, val in args.items():
        if not val > 0:
            raise ValueError(f"{name} must be positive (got {val!r})")
    if inductor_ripple_fraction >= 1:
        raise ValueError("inductor_ripple_fraction must be < 1")
    capacitance = p_av / (2.0 * math.pi * f0 * v_dc_ref * dc_ripple_pp)
    i_pk = math.sqrt(2.0) * p_av / v_in_rms_nom
    volt_seconds = boost_ripple_volt_seconds(math.sqrt(2.0) * v_in_rms_nom, v_dc_ref)
    inductance = volt_seconds / (f_switch * inductor_ripple_fraction * i_pk)
    return inductance, capacitance


def design_pi_gains(L: float, C: float, f_v_bw: float, f_i_bw: float, *,
                    v_dc_ref: float = 400.0, f0: float = 60.0, f_switch: float = 20e3,
                    zero_ratio_v: float = 2.0,
                    zero_ratio_i: float = 1.0) -> tuple[PIGains, PIGains]:
    """Crossover-placement PI design for both loops.

    Current loop: duty -> inductor current is ``v_dc / (s L)``, so
    ``kp_i = 2*pi*f_i_bw * L / v_dc``.  Voltage loop: power -> DC-bus voltage is
    ``1 / (s C v_dc)``, so ``kp_v = 2*pi*f_v_bw * C * v_dc``.  Each PI zero sits
    ``zero_ratio_v`` (``zero_ratio_i``) below its crossover, i.e.
    ``ki = kp * 2*pi*f_bw / zero_ratio``.  The current-loop zero sits at
    crossover so the integrator tracks the rectified-sine reference closely.
    """
    if not (0 < f_v_bw < f0 / 4 < f_i_bw <= f_switch / 10):
        raise ValueError(
            "loop bandwidths must satisfy f_v_bw < f0/4 < f_i_bw <= f_switch/10 "
            f"(got f_v_bw={f_v_bw}, f_i_bw={f_i_bw}, f0={f0}, f_switch={f_switch})")
    wv = 2.0 * math.pi * f_v_bw
    wi = 2.0 * math.pi * f_i_bw
    kp_v = wv * C * v_dc_ref
    kp_i = wi * L / v_dc_ref
    return (PIGains(kp_v, kp_v * wv / zero_ratio_v),
            PIGains(kp_i, kp_i * wi / zero_ratio_i))


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _rectify(v, diode_drop):
    r = abs(v) - 2.0 * diode_drop
    return r if r > 0.0 else 0.0


@njit(cache=True)
def _dc_load(v_dc, p_av, cutoff):
    if v_dc <= 0.0 or v_dc < cutoff:
        return 0.0
    return p_av / v_dc


@njit(cache=True)
def _control(p, s, v_rect, v_rms_est, dt):
    """Outer/inner PI with conditional-integration anti-windup; returns gate."""
    if s[S_TRIPPED] > 0.5:
        s[S_IREF] = 0.0
        s[S_DUTY] = 0.0
        s[S_KCMD] = 0.0
        s[S_GATE] = 0.0
        s[S_CARRIER] = _advance_carrier(s[S_CARRIER], p[P_FSW] * dt)
        return False

    kmax = p[P_KMAX]
    e_v = p[P_VREF] - s[S_VDC]
    k = p[P_KPV] * e_v + s[S_INTV]
    if k >= kmax:
        k = kmax
        if e_v < 0.0:
            s[S_INTV] += p[P_KIV] * e_v * dt
    elif k <= 0.0:
        k = 0.0
        if e_v > 0.0:
            s[S_INTV] += p[P_KIV] * e_v * dt
    else:
        s[S_INTV] += p[P_KIV] * e_v * dt
    if s[S_INTV] > kmax:
        s[S_INTV] = kmax
    elif s[S_INTV] < 0.0:
        s[S_INTV] = 0.0

    den = v_rms_est * v_rms_est
    if den < p[P_EPS]:
        den = p[P_EPS]
    i_ref = k * v_rect / den

    dmax = p[P_DMAX]
    e_i = i_ref - s[S_IL]
    d = p[P_KPI] * e_i + s[S_INTI]
    if d >= dmax:
        d = dmax
        if e_i < 0.0:
            s[S_INTI] += p[P_KII] * e_i * dt
    elif d <= 0.0:
        d = 0.0
        if e_i > 0.0:
            s[S_INTI] += p[P_KII] * e_i * dt
    else:
        s[S_INTI] += p[P_KII] * e_i * dt
    if s[S_INTI] > dmax:
        s[S_INTI] = dmax
    elif s[S_INTI] < 0.0:
        s[S_INTI] = 0.0

    ph = s[S_CARRIER]
    carrier = 2.0 * ph if ph < 0.5 else 2.0 - 2.0 * ph
    gate = d > carrier
    s[S_CARRIER] = _advance_carrier(ph, p[P_FSW] * dt)
    s[S_KCMD] = k
    s[S_IREF] = i_ref
    s[S_DUTY] = d
    s[S_GATE] = 1.0 if gate else 0.0
    return gate


@njit(cache=True)
def _advance_carrier(ph, inc):
    ph += inc
    if ph >= 1.0:
        ph -= 1.0
    return ph


@njit(cache=True)
def _linear_terms(p, s, gate, dt):
    """Trapezoidal boost step as a 2x2 linear system in (i_l, v_dc).

    Both gate states are linear; the CPL current is taken at the step start.
    Returns the pieces shared by ``_stage_affine`` and ``_electrical``.
    """
    i0 = s[S_IL]
    v0 = s[S_VDC]
    i_ld = _dc_load(v0, p[P_PAV], p[P_CUTOFF])
    a = p[P_L] / dt
    b = p[P_C] / dt
    R = p[P_R]
    sw = 0.0 if gate else 1.0  # boost diode path active when the switch is off
    # (a + R/2) i1 + (sw/2) v1 = (a - R/2) i0 + v_rect - sw v0/2
    # (-sw/2) i1 + b v1        = b v0 + sw i0/2 - i_ld
    r1 = (a - 0.5 * R) * i0 - 0.5 * sw * v0
    r2 = b * v0 + 0.5 * sw * i0 - i_ld
    a11 = a + 0.5 * R
    a12 = 0.5 * sw
    det = a11 * b + a12 * a12
    alpha = (r1 * b - a12 * r2) / det
    beta = b / det
    return alpha, beta, r1, r2, a11, a12, det, b, i_ld


@njit(cache=True)
def _stage_affine(p, s, gate, dt):
    """``(alpha, beta)`` with end-of-step ``i_l = alpha + beta * v_rect`` (before clamping)."""
    alpha, beta, _, _, _, _, _, _, _ = _linear_terms(p, s, gate, dt)
    return alpha, beta


@njit(cache=True)
def _electrical(p, s, gate, v_rect, dt):
    """One trapezoidal step of the boost stage.

    Trapezoidal integration makes the discrete energy balance exact for
    midpoint-averaged element powers.
    """
    i0 = s[S_IL]
    v0 = s[S_VDC]
    alpha, beta, r1, r2, a11, a12, det, b, i_ld = _linear_terms(p, s, gate, dt)
    sw = 2.0 * a12
    i1 = alpha + beta * v_rect
    v1 = (a11 * r2 + a12 * (r1 + v_rect)) / det
    if i1 < 0.0:
        # diode blocks: clamp at the interpolated zero crossing
        if i0 > 0.0:
            frac = i0 / (i0 - i1)
        else:
            frac = 0.0
        i1 = 0.0
        v1 = v0 + (0.5 * sw * i0 * frac - i_ld) / b
    if v1 < 0.0:
        v1 = 0.0
    s[S_IL_PREV] = i0
    s[S_IL] = i1
    s[S_VDC] = v1
    s[S_ILOAD] = i_ld


@njit(cache=True)
def _bridge_mid(i0, alpha, beta, u):
    """Step-averaged inductor current for rectified voltage ``u``."""
    i1 = alpha + beta * u
    if i1 < 0.0:
        i1 = 0.0
    return 0.5 * (i0 + i1)


@njit(cache=True)
def terminal_solve(w, z, active, i0, alpha, beta, vd2):
    """Solve ``v = w - z * i_in`` together with the diode-bridge relation.

    ``w`` and ``z`` are the Thevenin voltage and resistance seen at the
    terminal for this step.  The bridge gives ``i_in = sgn(v) g(u)`` with
    ``u = max(|v| - vd2, 0)`` and ``g`` the step-averaged inductor current,
    a nondecreasing piecewise-linear function.  When ``|w| <= z g(0)`` no
    polarity is consistent: all four diodes conduct, the terminal is clamped
    at 0 V and the rest of the inductor current freewheels through the
    bridge.  Returns ``(v, i_in, u)``.
    """
    if not active:
        u = abs(w) - vd2
        return w, 0.0, (u if u > 0.0 else 0.0)
    if z <= 0.0:
        u = abs(w) - vd2
        if u < 0.0:
            u = 0.0
        if w > 0.0:
            return w, _bridge_mid(i0, alpha, beta, u), u
        if w < 0.0:
            return w, -_bridge_mid(i0, alpha, beta, u), u
        return w, 0.0, 0.0
    g0 = _bridge_mid(i0, alpha, beta, 0.0)
    mag = abs(w)
    if mag <= z * g0:
        return 0.0, w / z, 0.0
    sgn = 1.0 if w > 0.0 else -1.0
    v = mag - z * g0
    if v > vd2:
        kink = vd2 - alpha / beta if alpha < 0.0 else vd2
        v = mag - z * 0.5 * i0
        if alpha >= 0.0 or v > kink:
            v = (mag - z * 0.5 * (i0 + alpha - beta * vd2)) / (1.0 + 0.5 * z * beta)
    u = v - vd2
    if u < 0.0:
        u = 0.0
    return sgn * v, sgn * _bridge_mid(i0, alpha, beta, u), u


@njit(cache=True)
def _protect(p, s, t, dt):
    """Latching overcurrent and optional DC-bus voltage protection."""
    if s[S_TRIPPED] > 0.5 and p[P_LATCH] > 0.5:
        return
    armed = t >= p[P_ARM]
    if armed and p[P_DCPROT] > 0.5 and (s[S_VDC] > p[P_VOVER] or s[S_VDC] < p[P_VUNDER]):
        s[S_DCTIMER] += 1.0
    else:
        s[S_DCTIMER] = 0.0
    cause = CAUSE_NONE
    if armed and p[P_OCPROT] > 0.5 and s[S_ICOUNT] > 0.5 and s[S_IRMS] > p[P_ITRIP]:
        cause = CAUSE_OVERCURRENT
    elif s[S_DCTIMER] > 0.0 and s[S_DCTIMER] * dt >= p[P_DCDELAY]:
        cause = CAUSE_DC_OVERVOLTAGE if s[S_VDC] > p[P_VOVER] else CAUSE_DC_UNDERVOLTAGE
    if cause != CAUSE_NONE:
        if s[S_TRIPPED] < 0.5:
            s[S_TTRIP] = t
        s[S_TRIPPED] = 1.0
        s[S_CAUSE] = cause
    else:
        s[S_TRIPPED] = 0.0
        s[S_CAUSE] = CAUSE_NONE
        s[S_TTRIP] = -1.0


@njit(cache=True)
def converter_begin(p, s, dt):
    """First half of a step: control from the previous terminal sample.

    The controller sees the terminal voltage one step late (a sample-and-hold
    measurement), which lets the power stage be solved simultaneously with
    the network.  Returns ``(active, alpha, beta)`` describing the power
    stage for this step.
    """
    v_meas = _rectify(s[S_VTERM], p[P_DIODE])
    gate = _control(p, s, v_meas, s[S_VRMS], dt)
    alpha, beta = _stage_affine(p, s, gate, dt)
    return s[S_TRIPPED] < 0.5, alpha, beta


@njit(cache=True)
def converter_finish(p, s, ibuf, vbuf, v_term, v_rect, i_in, dt):
    """Second half of a step at the solved terminal voltage and input current.

    Order: power stage -> trailing-cycle RMS windows -> protection.
    Returns an error code.
    """
    w = ibuf.shape[0]
    tripped = s[S_TRIPPED] > 0.5
    _electrical(p, s, s[S_GATE] > 0.5, 0.0 if tripped else v_rect, dt)

    pos = int(s[S_POS])
    v2 = v_term * v_term
    s[S_VSUM] += v2 - vbuf[pos]
    vbuf[pos] = v2
    i2 = s[S_IL] * s[S_IL]
    s[S_ISUM] += i2 - ibuf[pos]
    ibuf[pos] = i2
    pos += 1
    if pos >= w:
        pos = 0
        s[S_ICOUNT] = 1.0
        # exact resum once per window keeps the running sums drift-free
        acc_i = 0.0
        acc_v = 0.0
        for j in range(w):
            acc_i += ibuf[j]
            acc_v += vbuf[j]
        s[S_ISUM] = acc_i
        s[S_VSUM] = acc_v
    s[S_POS] = pos
    isum = s[S_ISUM] if s[S_ISUM] > 0.0 else 0.0
    vsum = s[S_VSUM] if s[S_VSUM] > 0.0 else 0.0
    s[S_IRMS] = math.sqrt(isum / w)
    s[S_VRMS] = math.sqrt(vsum / w)
    s[S_VRECT] = v_rect
    s[S_VTERM] = v_term
    s[S_IIN] = 0.0 if tripped else i_in
    t_new = s[S_T] + dt
    s[S_T] = t_new
    _protect(p, s, t_new, dt)
    if not (math.isfinite(s[S_IL]) and math.isfinite(s[S_VDC])
            and math.isfinite(s[S_INTV]) and math.isfinite(s[S_INTI])):
        return ERR_NONFINITE
    return ERR_OK


@njit(cache=True)
def converter_step(p, s, ibuf, vbuf, v_term, dt):
    """Advance one converter block by ``dt`` fed from an ideal voltage ``v_term``."""
    active, alpha, beta = converter_begin(p, s, dt)
    v, i_in, u = terminal_solve(v_term, 0.0, active, s[S_IL], alpha, beta, 2.0 * p[P_DIODE])
    return converter_finish(p, s, ibuf, vbuf, v, u, i_in, dt)


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------


def window_samples(frequency: float, dt: float) -> int:
    """Samples in one fundamental cycle at step ``dt``."""
    n = int(round(1.0 / (frequency * dt)))
    if n < 2:
        raise ValueError("one fundamental cycle must span at least 2 steps")
    return n


class ConverterState:
    """Mutable state of one converter block.

    Wraps the flat state vector and the two trailing-cycle buffers (squared
    inductor current for protection, squared input voltage for the control
    multiplier) that the kernels operate on.
    """

    def __init__(self, s: np.ndarray, ibuf: np.ndarray, vbuf: np.ndarray):
        self.s = s
        self.ibuf = ibuf
        self.vbuf = vbuf

    @classmethod
    def initial(cls, params: ConverterParams, dt: float, v_dc0: float | None = None,
                v_rms0: float | None = None) -> ConverterState:
        """Energization state: bus pre-charged to the rectified peak, controllers at zero."""
        w = window_samples(params.frequency, dt)
        v_rms0 = params.v_in_rms_nom if v_rms0 is None else v_rms0
        if v_dc0 is None:
            v_dc0 = max(math.sqrt(2.0) * v_rms0 - 2.0 * params.diode_drop, 0.0)
        s = np.zeros(N_STATE)
        s[S_VDC] = v_dc0
        s[S_TTRIP] = -1.0
        vbuf = np.full(w, v_rms0 * v_rms0)
        s[S_VSUM] = vbuf.sum()
        s[S_VRMS] = v_rms0
        return cls(s, np.zeros(w), vbuf)

    def copy(self) -> ConverterState:
        return ConverterState(self.s.copy(), self.ibuf.copy(), self.vbuf.copy())

    i_l = property(lambda self: float(self.s[S_IL]))
    v_dc = property(lambda self: float(self.s[S_VDC]))
    integ_v = property(lambda self: float(self.s[S_INTV]))
    integ_i = property(lambda self: float(self.s[S_INTI]))
    carrier_phase = property(lambda self: float(self.s[S_CARRIER]))
    t = property(lambda self: float(self.s[S_T]))
    i_ref = property(lambda self: float(self.s[S_IREF]))
    duty = property(lambda self: float(self.s[S_DUTY]))
    power_command = property(lambda self: float(self.s[S_KCMD]))
    i_rms = property(lambda self: float(self.s[S_IRMS]))
    v_rms = property(lambda self: float(self.s[S_VRMS]))
    input_current = property(lambda self: float(self.s[S_IIN]))

    @property
    def rms_buffer(self) -> np.ndarray:
        """Trailing window of squared inductor-current samples."""
        return self.ibuf

    @property
    def trip(self) -> TripStatus:
        if self.s[S_TRIPPED] < 0.5:
            return TripStatus()
        return TripStatus("tripped", _CAUSE_BY_CODE[int(self.s[S_CAUSE])], float(self.s[S_TTRIP]))


# ---------------------------------------------------------------------------
# Python-facing single-step operations
# ---------------------------------------------------------------------------


def rectified_input(v: float, diode_drop: float = 0.0) -> float:
    """Full-bridge output: ``max(|v| - 2*diode_drop, 0)``."""
    if diode_drop < 0:
        raise ValueError("diode_drop must be >= 0")
    return float(_rectify(float(v), float(diode_drop)))


def dc_load_current(v_dc: float, params: ConverterParams) -> float:
    """Constant-power hash-board current, zero below the brown-out cutoff."""
    if v_dc < 0:
        raise ValueError("v_dc must be >= 0")
    return float(_dc_load(float(v_dc), params.p_av, params.load_cutoff_voltage))


def ideal_cpl_current(v, v_rms, params: ConverterParams):
    """Ideal constant-power input current ``p_av * v / (v_rms**2 + epsilon)``."""
    return params.p_av * np.asarray(v, dtype=float) / (np.asarray(v_rms, dtype=float) ** 2
                                                       + params.epsilon)


def control_step(state: ConverterState, params: ConverterParams, v_rect: float,
                 v_rms_est: float, dt: float,
                 arming_time_s: float = 0.0) -> tuple[bool, ConverterState]:
    if dt <= 0 or v_rms_est < 0:
        raise ValueError("control_step requires dt > 0 and v_rms_est >= 0")
    new = state.copy()
    gate = _control(params.to_array(arming_time_s), new.s, float(v_rect), float(v_rms_est),
                    float(dt))
    return bool(gate), new


def electrical_step(state: ConverterState, gate: bool, v_rect: float,
                    params: ConverterParams, dt: float) -> ConverterState:
    if dt > 1.0 / (20.0 * params.f_switch) * (1 + 1e-9):
        raise ValueError("dt must give at least 20 steps per carrier period")
    new = state.copy()
    _electrical(params.to_array(), new.s, bool(gate), float(v_rect), float(dt))
    if not (math.isfinite(new.s[S_IL]) and math.isfinite(new.s[S_VDC])):
        raise FloatingPointError(f"non-finite converter state at t={state.t:.6g} s")
    return new


def check_protection(state: ConverterState, params: ConverterParams, dt: float = 1e-6,
                     arming_time_s: float = 0.0) -> TripStatus:
    """Evaluate the protection latch on ``state`` (which is updated in place)."""
    _protect(params.to_array(arming_time_s), state.s, state.t, dt)
    return state.trip


def step(state: ConverterState, params: ConverterParams, v_term: float, dt: float,
         arming_time_s: float = 0.0) -> ConverterState:
    """Full converter step at terminal voltage ``v_term`` (returns a new state)."""
    new = state.copy()
    err = converter_step(params.to_array(arming_time_s), new.s, new.ibuf, new.vbuf,
                         float(v_term), float(dt))
    if err != ERR_OK:
        raise FloatingPointError(f"non-finite converter state at t={state.t:.6g} s")
    return new
