"""Three-phase linear network: trapezoidal companion models and phasor analysis.

A network is a set of three-phase buses joined by per-phase RL lines,
constant-impedance shunt loads, Δ-Yg transformers and switchable LLLG fault
branches, driven by ideal grounded voltage sources.  Source nodes have known
voltages; every other node is solved each step from

    G_uu v_u = i_u - G_uk v_k

where ``i_u`` collects branch history currents and converter draws.  ``G_uu``
changes only when a fault switch operates, so it is inverted once per switch
topology.  Each fault has one switch per phase; switches close together at
the fault instant and each opens at its own first current zero after the
clearing command, as a circuit breaker does.

Every element is a series RL or series RC "branch" described by an incidence vector ``c`` over
node voltages: branch voltage ``c . v`` and its current leaves the network
along ``+c``.  A line between a and b is ``c = e_a - e_b``; a Δ-Yg winding
feeding secondary phase a from primary A-C is ``c = n e_A - n e_C - e_a``.
The same stamps serve the time-domain companion system and the phasor solve.

Trapezoidal companions, with branch current ``i = g v + h``:

    RL:  g = 1 / (R + 2L/dt),  h_next =  g (v + (2L/dt - R) i)
    RC:  g = 1 / (R + dt/2C),  h_next = -g (v + (dt/2C - R) i)

Interrupting an inductor current that is not exactly zero at the step makes
the trapezoidal rule chatter: node voltages alternate in sign from one step to
the next and never decay.  Every inductor therefore carries a parallel damping
resistor ``Rp = DAMPING_FACTOR * 2L/dt``.  With ``G1 = dt/2L + 1/Rp`` and
``a = dt/2L - 1/Rp`` the damped RL branch keeps the same one-state form,

    g = G1 / (1 + G1 R),  h_next = a / (1 + G1 R) (v + (1 - a R) / a i)

and reduces to the plain RL companion as ``Rp`` grows.  A spurious step-to-step
oscillation then decays by ``(DAMPING_FACTOR - 1) / (DAMPING_FACTOR + 1)`` per
step while the 60 Hz impedance changes by about ``wL / Rp`` (2e-5 at 1 us).
The phasor solve omits ``Rp``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .signals import HarmonicSpec

PHASES = ("a", "b", "c")
PHASE_SHIFT_DEG = {"a": 0.0, "b": -120.0, "c": 120.0}

# Resistance used for a bolted (0 ohm) fault so the nodal matrix stays regular.
BOLTED_RESISTANCE = 1e-6

# Parallel damping resistance across each inductor, in units of 2L/dt.
DAMPING_FACTOR = 10.0


class NetworkError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Model description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SourceElement:
    """Ideal grounded three-phase voltage source (positive sequence)."""

    bus: str
    v_ll: float
    phase_deg: float = 0.0
    harmonics: HarmonicSpec | None = None

    def __post_init__(self):
        if self.v_ll < 0:
            raise ValueError("source v_ll must be >= 0")
        if isinstance(self.harmonics, dict):
            object.__setattr__(self, "harmonics", HarmonicSpec(**self.harmonics))


@dataclass(frozen=True)
class LineElement:
    """Per-phase series RL branch between two buses."""

    from_bus: str
    to_bus: str
    r_ohm: float
    l_h: float

    def __post_init__(self):
        if self.r_ohm < 0 or self.l_h < 0 or (self.r_ohm == 0 and self.l_h == 0):
            raise ValueError(f"line {self.from_bus}-{self.to_bus}: impedance must be positive")


@dataclass(frozen=True)
class LoadElement:
    """Constant-impedance wye load (series RL per phase) sized at ``v_ll``."""

    bus: str
    p_w: float
    q_var: float = 0.0
    v_ll: float = 25e3

    def __post_init__(self):
        if self.p_w <= 0 or self.q_var < 0 or self.v_ll <= 0:
            raise ValueError(f"load at {self.bus}: need p_w > 0, q_var >= 0, v_ll > 0")

    def series_rl(self, frequency: float) -> tuple[float, float]:
        v_ph = self.v_ll / math.sqrt(3.0)
        s_ph = complex(self.p_w, self.q_var) / 3.0
        z = v_ph ** 2 / s_ph.conjugate()
        return z.real, z.imag / (2.0 * math.pi * frequency)


@dataclass(frozen=True)
class CapacitorElement:
    """Grounded-wye shunt capacitor per phase, with optional series damping resistance."""

    bus: str
    c_f: float
    r_ohm: float = 0.0

    def __post_init__(self):
        if not self.c_f > 0 or self.r_ohm < 0:
            raise ValueError(f"capacitor at {self.bus}: need c_f > 0 and r_ohm >= 0")


@dataclass(frozen=True)
class TransformerSpec:
    """Two-winding Δ-Yg transformer; leakage referred to the secondary.

    The secondary lags the primary by 30 degrees: secondary phase a is wound
    on primary phases A-C.
    """

    rating_mva: float = 1.5
    v_primary_ll: float = 25e3
    v_secondary_ll: float = 415.0
    z_percent: float = 6.0
    x_over_r: float = 8.0

    def __post_init__(self):
        if not (self.rating_mva > 0 and self.v_primary_ll > 0 and self.v_secondary_ll > 0):
            raise ValueError("transformer ratings must be positive")
        if not self.z_percent > 0:
            raise ValueError("z_percent must be > 0")
        if not self.x_over_r > 0:
            raise ValueError("x_over_r must be > 0")

    @property
    def ratio(self) -> float:
        return self.v_primary_ll / self.v_secondary_ll


@dataclass(frozen=True)
class SecondaryModel:
    """Per-phase secondary equivalent of a Δ-Yg transformer."""

    v_ln: float
    winding_ratio: float  # secondary phase volts per primary line-to-line volt
    phase_shift_deg: float
    r_ohm: float
    l_h: float
    z_ohm: float


def transformer_secondary(spec: TransformerSpec, frequency: float = 60.0) -> SecondaryModel:
    """Ideal-ratio Δ-Yg secondary with the percent leakage impedance on the secondary base."""
    z_base = spec.v_secondary_ll ** 2 / (spec.rating_mva * 1e6)
    z = spec.z_percent / 100.0 * z_base
    r = z / math.sqrt(1.0 + spec.x_over_r ** 2)
    x = r * spec.x_over_r
    v_ln = spec.v_secondary_ll / math.sqrt(3.0)
    return SecondaryModel(v_ln=v_ln, winding_ratio=v_ln / spec.v_primary_ll,
                          phase_shift_deg=-30.0, r_ohm=r, l_h=x / (2.0 * math.pi * frequency),
                          z_ohm=z)


# Faults per network; every fault adds three switches and the companion system
# keeps one inverted matrix per switch topology.
MAX_FAULTS = 3


@dataclass(frozen=True)
class FaultSpec:
    """Three-phase-to-ground fault through ``impedance_ohms`` per phase.

    The fault is applied at ``apply_time``; clearing is commanded at
    ``apply_time + duration_s`` and each phase interrupts at its next
    current zero.
    """

    bus: str
    impedance_ohms: float = 0.0
    apply_time: float = 0.4
    duration_s: float = 0.045
    type: str = "LLLG"

    def __post_init__(self):
        if self.impedance_ohms < 0:
            raise ValueError("fault impedance_ohms must be >= 0")
        if not self.duration_s > 0:
            raise ValueError("fault duration_s must be > 0")
        if self.type != "LLLG":
            raise ValueError(f"only LLLG faults are modelled (got {self.type!r})")

    @property
    def clear_time(self) -> float:
        return self.apply_time + self.duration_s


@dataclass(frozen=True)
class TransformerElement:
    primary_bus: str
    secondary_bus: str
    spec: TransformerSpec

    def __post_init__(self):
        if isinstance(self.spec, dict):
            object.__setattr__(self, "spec", TransformerSpec(**self.spec))


@dataclass
class NetworkModel:
    """Three-phase network description.

    ``attachments`` lists buses where converter blocks draw current (one block
    per phase).  Faults are part of the model so that the companion system
    can precompute every switch topology.
    """

    frequency: float = 60.0
    sources: list[SourceElement] = field(default_factory=list)
    lines: list[LineElement] = field(default_factory=list)
    loads: list[LoadElement] = field(default_factory=list)
    capacitors: list[CapacitorElement] = field(default_factory=list)
    transformers: list[TransformerElement] = field(default_factory=list)
    faults: list[FaultSpec] = field(default_factory=list)
    attachments: list[str] = field(default_factory=list)

    def __post_init__(self):
        conv = [("sources", SourceElement), ("lines", LineElement), ("loads", LoadElement),
                ("capacitors", CapacitorElement), ("transformers", TransformerElement),
                ("faults", FaultSpec)]
        for name, cls in conv:
            setattr(self, name, [cls(**e) if isinstance(e, dict) else e
                                 for e in getattr(self, name)])
        self.attachments = list(self.attachments)

    # builder helpers -------------------------------------------------------

    def add_source(self, bus, v_ll, phase_deg=0.0, harmonics=None) -> NetworkModel:
        self.sources.append(SourceElement(bus, v_ll, phase_deg, harmonics))
        return self

    def add_line(self, from_bus, to_bus, r_ohm, l_h) -> NetworkModel:
        self.lines.append(LineElement(from_bus, to_bus, r_ohm, l_h))
        return self

    def add_load(self, bus, p_w, q_var=0.0, v_ll=25e3) -> NetworkModel:
        self.loads.append(LoadElement(bus, p_w, q_var, v_ll))
        return self

    def add_capacitor(self, bus, c_f, r_ohm=0.0) -> NetworkModel:
        self.capacitors.append(CapacitorElement(bus, c_f, r_ohm))
        return self

    def add_transformer(self, primary_bus, secondary_bus, spec: TransformerSpec) -> NetworkModel:
        self.transformers.append(TransformerElement(primary_bus, secondary_bus, spec))
        return self

    def add_fault(self, fault: FaultSpec) -> NetworkModel:
        self.faults.append(fault)
        return self

    def attach(self, bus: str) -> NetworkModel:
        self.attachments.append(bus)
        return self

    @property
    def buses(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.sources:
            seen[s.bus] = None
        for ln in self.lines:
            seen[ln.from_bus] = None
            seen[ln.to_bus] = None
        for ld in self.loads:
            seen[ld.bus] = None
        for cp in self.capacitors:
            seen[cp.bus] = None
        for tr in self.transformers:
            seen[tr.primary_bus] = None
            seen[tr.secondary_bus] = None
        for f in self.faults:
            seen[f.bus] = None
        for a in self.attachments:
            seen[a] = None
        return list(seen)

    def validate(self) -> None:
        if not self.sources:
            raise NetworkError("network needs at least one source")
        src_buses = [s.bus for s in self.sources]
        if len(set(src_buses)) != len(src_buses):
            raise NetworkError("at most one source per bus")
        known = set(self.buses)
        for f in self.faults:
            if f.bus in src_buses:
                raise NetworkError(f"fault at source bus {f.bus!r} would short an ideal source")
        if len(self.faults) > MAX_FAULTS:
            raise NetworkError(f"at most {MAX_FAULTS} faults per network")
        for a in self.attachments:
            if a not in known:
                raise NetworkError(f"attachment bus {a!r} is not in the network")


# ---------------------------------------------------------------------------
# Node indexing and element stamps
# ---------------------------------------------------------------------------


@dataclass
class _Branch:
    name: str
    nodes: list[int]
    coefs: list[float]
    r: float
    l: float
    c: float = 0.0  # > 0 marks a series RC branch (l unused)

    def companion(self, dt: float) -> tuple[float, float, float]:
        """(g, signed history gain, history current coefficient)."""
        if self.c > 0:
            g = 1.0 / (self.r + dt / (2.0 * self.c))
            return g, -g, dt / (2.0 * self.c) - self.r
        if self.l <= 0:
            return 1.0 / self.r, 0.0, 0.0
        g1 = (1.0 + 1.0 / DAMPING_FACTOR) * dt / (2.0 * self.l)
        a = (1.0 - 1.0 / DAMPING_FACTOR) * dt / (2.0 * self.l)
        den = 1.0 + g1 * self.r
        return g1 / den, a / den, (1.0 - a * self.r) / a

    def impedance(self, w: float) -> complex:
        if self.c > 0:
            return complex(self.r, -1.0 / (w * self.c))
        return complex(self.r, w * self.l)


def _node_name(bus: str, ph: str) -> str:
    return f"{bus}.{ph}"


def _index_nodes(net: NetworkModel) -> tuple[list[str], int]:
    """Known (source) nodes first, then unknown nodes."""
    src = {s.bus for s in net.sources}
    known = [_node_name(b, ph) for b in net.buses if b in src for ph in PHASES]
    unknown = [_node_name(b, ph) for b in net.buses if b not in src for ph in PHASES]
    return known + unknown, len(known)


def _branches(net: NetworkModel, index: dict[str, int]) -> list[_Branch]:
    out = []
    for ln in net.lines:
        for ph in PHASES:
            out.append(_Branch(f"line {ln.from_bus}-{ln.to_bus}.{ph}",
                               [index[_node_name(ln.from_bus, ph)],
                                index[_node_name(ln.to_bus, ph)]],
                               [1.0, -1.0], ln.r_ohm, ln.l_h))
    for ld in net.loads:
        r, l = ld.series_rl(net.frequency)
        for ph in PHASES:
            out.append(_Branch(f"load {ld.bus}.{ph}", [index[_node_name(ld.bus, ph)]], [1.0], r, l))
    for cp in net.capacitors:
        for ph in PHASES:
            out.append(_Branch(f"capacitor {cp.bus}.{ph}", [index[_node_name(cp.bus, ph)]], [1.0],
                               cp.r_ohm, 0.0, cp.c_f))
    for tr in net.transformers:
        sec = transformer_secondary(tr.spec, net.frequency)
        n = sec.winding_ratio
        # secondary a <- primary A-C, b <- B-A, c <- C-B
        for ph, (p1, p2) in zip(PHASES, (("a", "c"), ("b", "a"), ("c", "b"))):
            out.append(_Branch(
                f"transformer {tr.primary_bus}/{tr.secondary_bus}.{ph}",
                [index[_node_name(tr.primary_bus, p1)], index[_node_name(tr.primary_bus, p2)],
                 index[_node_name(tr.secondary_bus, ph)]],
                [n, -n, -1.0], sec.r_ohm, sec.l_h))
    return out


def _fault_conductances(net: NetworkModel, index: dict[str, int]) -> list[list[tuple[int, float]]]:
    out = []
    for f in net.faults:
        r = max(f.impedance_ohms, BOLTED_RESISTANCE)
        out.append([(index[_node_name(f.bus, ph)], 1.0 / r) for ph in PHASES])
    return out


def _switches(net: NetworkModel, index: dict[str, int]) -> list[tuple[int, float]]:
    """(node, conductance) for every fault switch, fault-major then phase."""
    return [stamp for stamps in _fault_conductances(net, index) for stamp in stamps]


def _topologies(n_switches: int) -> list[tuple[bool, ...]]:
    """All switch states; list position equals the bitmask of closed switches."""
    return [tuple(bool(m >> k & 1) for k in range(n_switches)) for m in range(2 ** n_switches)]


def _check_connected(net: NetworkModel, nodes: list[str], n_known: int,
                     branches: list[_Branch]) -> None:
    """Every unknown node must reach a source or ground through a branch."""
    parent = list(range(len(nodes) + 1))
    ground = len(nodes)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        parent[find(a)] = find(b)

    for k in range(n_known):
        union(k, ground)
    for br in branches:
        ends = br.nodes if len(br.nodes) > 1 else br.nodes + [ground]
        for a in ends[1:]:
            union(ends[0], a)
    floating = [nodes[k] for k in range(n_known, len(nodes)) if find(k) != find(ground)]
    if floating:
        raise NetworkError(f"singular network: floating subnetwork {floating}")


# ---------------------------------------------------------------------------
# Companion system
# ---------------------------------------------------------------------------


@dataclass
class CompanionSystem:
    """Discretized network ready for per-step solves."""

    network: NetworkModel
    dt: float
    nodes: list[str]
    n_known: int
    topologies: list[tuple[bool, ...]]   # per switch, indexed by bitmask
    switch_node: np.ndarray   # node index of each fault switch
    switch_g: np.ndarray      # fault conductance of each switch
    g_uu_inv: np.ndarray      # (n_topo, n_u, n_u)
    g_uk: np.ndarray          # (n_topo, n_u, n_k)
    br_idx: np.ndarray        # (n_br, 3) node indices, -1 padded
    br_coef: np.ndarray       # (n_br, 3)
    br_g: np.ndarray          # companion conductance
    br_gh: np.ndarray         # signed history gain
    br_amr: np.ndarray        # history current coefficient
    branch_names: list[str]
    h: np.ndarray = None      # history currents
    i: np.ndarray = None      # branch currents

    @property
    def n_unknown(self) -> int:
        return len(self.nodes) - self.n_known

    def node_index(self, bus: str, phase: str) -> int:
        return self.nodes.index(_node_name(bus, phase))

    def topology_index(self, closed: tuple[bool, ...]) -> int:
        """Index for per-switch states, or per-fault states (all phases alike)."""
        closed = tuple(bool(c) for c in closed)
        if len(closed) * 3 == len(self.switch_node) and len(closed) != len(self.switch_node):
            closed = tuple(c for c in closed for _ in PHASES)
        return self.topologies.index(closed)

    def reset(self) -> None:
        self.h = np.zeros(len(self.branch_names))
        self.i = np.zeros(len(self.branch_names))


def assemble_companion(network: NetworkModel, dt: float) -> CompanionSystem:
    """Trapezoidal companion-model nodal system for every fault-switch topology."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    network.validate()
    nodes, nk = _index_nodes(network)
    index = {n: k for k, n in enumerate(nodes)}
    branches = _branches(network, index)
    _check_connected(network, nodes, nk, branches)
    switches = _switches(network, index)
    nn = len(nodes)
    nu = nn - nk

    comp = np.array([b.companion(dt) for b in branches]).reshape(len(branches), 3)
    g, gh, amr = comp[:, 0].copy(), comp[:, 1].copy(), comp[:, 2].copy()
    base = np.zeros((nn, nn))
    for br, gb in zip(branches, g):
        c = np.zeros(nn)
        for k, cf in zip(br.nodes, br.coefs):
            c[k] += cf
        base += gb * np.outer(c, c)

    topos = _topologies(len(switches))
    inv = np.zeros((len(topos), nu, nu))
    guk = np.zeros((len(topos), nu, nk))
    for t_i, closed in enumerate(topos):
        G = base.copy()
        for on, (k, gf) in zip(closed, switches):
            if on:
                G[k, k] += gf
        guu = G[nk:, nk:]
        try:
            inv[t_i] = np.linalg.inv(guu)
        except np.linalg.LinAlgError as exc:
            raise NetworkError(f"singular nodal matrix for fault topology {closed}") from exc
        if not np.all(np.isfinite(inv[t_i])) or np.linalg.cond(guu) > 1e15:
            raise NetworkError(f"ill-conditioned nodal matrix for fault topology {closed}")
        guk[t_i] = G[nk:, :nk]

    idx = -np.ones((len(branches), 3), dtype=np.int64)
    coef = np.zeros((len(branches), 3))
    for b_i, br in enumerate(branches):
        idx[b_i, :len(br.nodes)] = br.nodes
        coef[b_i, :len(br.coefs)] = br.coefs
    sw_node = np.array([k for k, _ in switches], dtype=np.int64)
    sw_g = np.array([gf for _, gf in switches])
    sysm = CompanionSystem(network, dt, nodes, nk, topos, sw_node, sw_g, inv, guk, idx, coef,
                           g, gh, amr,
                           [b.name for b in branches])
    sysm.reset()
    return sysm


def source_waveforms(network: NetworkModel, nodes: list[str], n_known: int, t: np.ndarray,
                     event: tuple[float, float] | None = None) -> np.ndarray:
    """Known-node voltages (n_known, len(t)); harmonics active over ``event``."""
    from .signals import SineSpec, harmonic_injection, sample_source

    out = np.zeros((n_known, t.size))
    by_bus = {s.bus: s for s in network.sources}
    for k in range(n_known):
        bus, ph = nodes[k].rsplit(".", 1)
        src = by_bus[bus]
        sine = SineSpec(src.v_ll / math.sqrt(3.0), network.frequency,
                        src.phase_deg + PHASE_SHIFT_DEG[ph])
        out[k] = sample_source(sine, t)
        if src.harmonics is not None and event is not None:
            out[k] += harmonic_injection(sine, src.harmonics, t, event[0], event[1])
    return out


def network_step(system: CompanionSystem, v_known: np.ndarray, injections: np.ndarray,
                 topology: int = 0) -> np.ndarray:
    """Solve one step; returns the full node-voltage vector and updates history.

    ``injections`` are currents drawn out of each node (full node indexing,
    entries at known nodes are ignored).
    """
    nk = system.n_known
    i_u = -np.asarray(injections, dtype=float)[nk:].copy()
    for b in range(len(system.branch_names)):
        for j in range(3):
            k = system.br_idx[b, j]
            if k >= nk:
                i_u[k - nk] -= system.br_coef[b, j] * system.h[b]
    v = np.empty(len(system.nodes))
    v[:nk] = v_known
    v[nk:] = system.g_uu_inv[topology] @ (i_u - system.g_uk[topology] @ v_known)
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("non-finite network solution")
    for b in range(len(system.branch_names)):
        vb = 0.0
        for j in range(3):
            k = system.br_idx[b, j]
            if k >= 0:
                vb += system.br_coef[b, j] * v[k]
        ib = system.br_g[b] * vb + system.h[b]
        system.i[b] = ib
        system.h[b] = system.br_gh[b] * (vb + system.br_amr[b] * ib)
    return v


# ---------------------------------------------------------------------------
# Phasor (fundamental-frequency) analysis
# ---------------------------------------------------------------------------


@dataclass
class PhasorSolution:
    nodes: list[str]
    voltages: np.ndarray          # peak phasors, sine reference
    branch_currents: np.ndarray
    branch_voltages: np.ndarray

    def voltage(self, bus: str, phase: str = "a") -> complex:
        return complex(self.voltages[self.nodes.index(_node_name(bus, phase))])


def phasor_solve(network: NetworkModel, closed: tuple[bool, ...] | None = None,
                 shunts: dict[str, complex] | None = None) -> PhasorSolution:
    """Steady-state fundamental solution.

    ``shunts`` maps a bus name (all phases) or a ``(bus, phase)`` pair to an
    admittance to ground, e.g. the constant-impedance equivalent of a
    converter block.
    """
    network.validate()
    nodes, nk = _index_nodes(network)
    index = {n: k for k, n in enumerate(nodes)}
    branches = _branches(network, index)
    _check_connected(network, nodes, nk, branches)
    w = 2.0 * math.pi * network.frequency
    nn = len(nodes)
    Y = np.zeros((nn, nn), dtype=complex)
    cvecs = []
    ys = []
    for br in branches:
        c = np.zeros(nn)
        for k, cf in zip(br.nodes, br.coefs):
            c[k] += cf
        y = 1.0 / br.impedance(w)
        Y += y * np.outer(c, c)
        cvecs.append(c)
        ys.append(y)
    closed = tuple(closed) if closed is not None else (False,) * len(network.faults)
    for on, stamps in zip(closed, _fault_conductances(network, index)):
        if on:
            for k, gf in stamps:
                Y[k, k] += gf
    for key, y in (shunts or {}).items():
        targets = [key] if isinstance(key, tuple) else [(key, ph) for ph in PHASES]
        for bus, ph in targets:
            k = index[_node_name(bus, ph)]
            Y[k, k] += y
    vk = np.zeros(nk, dtype=complex)
    by_bus = {s.bus: s for s in network.sources}
    for k in range(nk):
        bus, ph = nodes[k].rsplit(".", 1)
        src = by_bus[bus]
        amp = math.sqrt(2.0) * src.v_ll / math.sqrt(3.0)
        vk[k] = amp * np.exp(1j * math.radians(src.phase_deg + PHASE_SHIFT_DEG[ph]))
    vu = np.linalg.solve(Y[nk:, nk:], -Y[nk:, :nk] @ vk) if nn > nk else np.zeros(0)
    v = np.concatenate([vk, vu])
    vb = np.array([c @ v for c in cvecs])
    ib = np.array(ys) * vb
    return PhasorSolution(nodes, v, ib, vb)


def initialize_history(system: CompanionSystem, solution: PhasorSolution) -> None:
    """Set branch history so the first step continues the phasor steady state.

    Phasors use the sine reference: ``x(t) = Im(X e^{jwt})``.
    """
    w = 2.0 * math.pi * system.network.frequency
    rot = np.exp(-1j * w * system.dt)  # value one step before t = 0
    i_prev = np.imag(solution.branch_currents * rot)
    v_prev = np.imag(solution.branch_voltages * rot)
    system.i = i_prev.copy()
    system.h = system.br_gh * (v_prev + system.br_amr * i_prev)
