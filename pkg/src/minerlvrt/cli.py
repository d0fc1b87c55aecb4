"""Command-line front end: YAML scenario files, run/sweep/facility/validate.

A scenario file is a YAML mapping with a ``schema`` version, a ``kind`` and
the sections that kind uses.  Every section is optional and falls back to the
documented defaults; unknown keys and invalid values are rejected with the
file name and line number.  ``execute`` writes its outputs and then a
``manifest.json`` listing every file with its SHA-256, written last so a
directory with a manifest is always complete.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from . import __version__
from .converter import ConverterParams
from .engine import SimConfig, run_simulation
from .facility import (CALIBRATED_TRIP_PU, POST_FAULT_S, FacilityScenario, fault1_scenario,
                       fault2_scenario)
from .lvrt import (DEFAULT_DURATIONS, DEFAULT_RETAINED, OutcomeTable, SweepGrid,
                   compare_reference, reference_table, run_facility_table, sag_sim_config,
                   sweep_capability)
from .network import TransformerSpec
from .signals import SagSpec, SineSpec, Source

SCHEMA = "minerlvrt.scenario/1"
KINDS = ("single", "sweep", "facility", "validate")
PRESETS = {"fault1": fault1_scenario, "fault2": fault2_scenario}


class ConfigError(ValueError):
    """Invalid scenario file; the message carries file and line context."""


# ---------------------------------------------------------------------------
# Config sections
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FacilityConfig:
    """Facility table run: a preset network, transformer and miner count.

    ``reference`` names a built-in table (``fault1``/``fault2``), a CSV path,
    or ``none``.
    """

    preset: str = "fault1"
    miners_per_phase: int = 104
    transformer: TransformerSpec = field(default_factory=TransformerSpec)
    apply_time: float = 0.4
    retained_fractions: tuple[float, ...] = DEFAULT_RETAINED[::-1]
    durations_s: tuple[float, ...] = DEFAULT_DURATIONS
    reference: str = "preset"
    input_capacitance_f: float = 2e-6
    input_damping_ohm: float = 1.0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {sorted(PRESETS)} (got {self.preset!r})")
        if self.miners_per_phase < 1:
            raise ValueError(f"miners_per_phase must be >= 1 (got {self.miners_per_phase})")
        if not self.apply_time > 0:
            raise ValueError(f"apply_time must be > 0 (got {self.apply_time})")
        for name in ("retained_fractions", "durations_s"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals or len(set(vals)) != len(vals):
                raise ValueError(f"{name} must be a non-empty list of distinct values")
            object.__setattr__(self, name, vals)
        if any(not 0 <= r < 1 for r in self.retained_fractions):
            raise ValueError(f"retained_fractions must lie in [0, 1) "
                             f"(got {list(self.retained_fractions)})")
        if any(d <= 0 for d in self.durations_s):
            raise ValueError(f"durations_s must be > 0 (got {list(self.durations_s)})")

    def scenario(self, miner: ConverterParams, sim: SimConfig) -> FacilityScenario:
        base = PRESETS[self.preset](duration_s=self.durations_s[0], apply_time=self.apply_time,
                                    miner=miner, miners_per_phase=self.miners_per_phase)
        t_end = self.apply_time + self.durations_s[0] + POST_FAULT_S
        return replace(base, transformer=self.transformer,
                       input_capacitance_f=self.input_capacitance_f,
                       input_damping_ohm=self.input_damping_ohm,
                       sim=replace(sim, t_end=max(sim.t_end, t_end)))

    def reference_table(self, base_dir: Path) -> OutcomeTable | None:
        if self.reference == "none":
            return None
        if self.reference == "preset":
            return reference_table(self.preset)
        if self.reference in PRESETS:
            return reference_table(self.reference)
        return OutcomeTable.from_csv(Path(base_dir, self.reference))


@dataclass(frozen=True)
class ValidateConfig:
    """Options for the invariant suite; ``sweep`` adds the 48-cell sweep checks."""

    sweep: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    converter: ConverterParams = field(default_factory=lambda: _default_converter({}))
    sim: SimConfig = field(default_factory=SimConfig)
    source: SineSpec = field(default_factory=SineSpec)
    sag: SagSpec | None = None
    grid: SweepGrid = field(default_factory=SweepGrid)
    facility: FacilityConfig = field(default_factory=FacilityConfig)
    validate: ValidateConfig = field(default_factory=ValidateConfig)
    output_dir: str | None = None
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {list(KINDS)} (got {self.kind!r})")


# sections each kind may carry, besides ``schema``, ``kind`` and ``output_dir``
KIND_SECTIONS = {
    "single": ("converter", "sim", "source", "sag"),
    "sweep": ("converter", "sim", "grid"),
    "facility": ("converter", "sim", "facility"),
    "validate": ("validate",),
}
SECTION_TYPES = {"converter": ConverterParams, "sim": SimConfig, "source": SineSpec,
                 "sag": SagSpec, "grid": SweepGrid, "facility": FacilityConfig,
                 "validate": ValidateConfig}


def _default_converter(mapping: dict) -> ConverterParams:
    """Converter parameters with the calibrated trip threshold unless one is given."""
    params = ConverterParams(**mapping)
    prot = mapping.get("protection")
    given = prot.get("i_trip_rms") if isinstance(prot, dict) else \
        (prot.i_trip_rms if prot is not None else None)
    if given is None:
        params = replace(params, protection=replace(
            params.protection, i_trip_rms=CALIBRATED_TRIP_PU * params.rated_input_current))
    return params


# ---------------------------------------------------------------------------
# Parsing with line context
# ---------------------------------------------------------------------------


def _line_index(node: yaml.Node, path: tuple = (), out: dict | None = None) -> dict:
    """Map each key path to its 1-based source line."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = path + (k.value,)
            out[p] = k.start_mark.line + 1
            _line_index(v, p, out)
    return out


class _Ctx:
    def __init__(self, source: str, lines: dict):
        self.source = source
        self.lines = lines

    def error(self, path: tuple, msg: str) -> ConfigError:
        line = None
        for k in range(len(path), 0, -1):
            if path[:k] in self.lines:
                line = self.lines[path[:k]]
                break
        where = f"{self.source}:{line}" if line else self.source
        dotted = ".".join(map(str, path)) or "<root>"
        return ConfigError(f"{where}: {dotted}: {msg}")


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _convert(tp, value, path: tuple, ctx: _Ctx):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or type(tp).__name__ == "UnionType":
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, path, ctx)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path, ctx)
    if tp is float:
        if not _is_number(value):
            raise ctx.error(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ctx.error(path, f"expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ctx.error(path, f"expected true or false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ctx.error(path, f"expected a string, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, list):
            raise ctx.error(path, f"expected a list, got {value!r}")
        item = args[0]
        return tuple(_convert(item, v, path + (i,), ctx) for i, v in enumerate(value))
    raise ctx.error(path, f"unsupported field type {tp!r}")  # pragma: no cover


def _fields(cls) -> dict[str, Any]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls) if f.init}


def _build(cls, mapping, path: tuple, ctx: _Ctx):
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ctx.error(path, f"expected a mapping, got {mapping!r}")
    fields = _fields(cls)
    kwargs = {}
    for key, value in mapping.items():
        if key not in fields:
            raise ctx.error(path + (key,), f"unknown key; allowed: {sorted(fields)}")
        kwargs[key] = _convert(fields[key], value, path + (key,), ctx)
    try:
        if cls is ConverterParams:
            return _default_converter(kwargs)
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        msg = str(exc)
        named = next((k for k in fields if msg.startswith(k) or f" {k} " in f" {msg} "), None)
        raise ctx.error(path + ((named,) if named else ()), msg) from None


def parse_scenario_text(text: str, source: str = "<string>", base_dir: str = ".") -> ScenarioConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from None
    ctx = _Ctx(source, _line_index(node) if node is not None else {})
    if not isinstance(data, dict):
        raise ctx.error((), "scenario file must be a mapping")
    schema = data.get("schema")
    if schema != SCHEMA:
        raise ctx.error(("schema",), f"expected schema {SCHEMA!r}, got {schema!r}")
    kind = data.get("kind")
    if kind not in KINDS:
        raise ctx.error(("kind",), f"kind must be one of {list(KINDS)}, got {kind!r}")
    allowed = KIND_SECTIONS[kind]
    kwargs: dict[str, Any] = {"kind": kind, "base_dir": base_dir}
    for key, value in data.items():
        if key in ("schema", "kind"):
            continue
        if key == "output_dir":
            kwargs[key] = _convert(str, value, (key,), ctx)
        elif key in SECTION_TYPES:
            if key not in allowed:
                raise ctx.error((key,), f"section not used by kind {kind!r}; "
                                        f"allowed sections: {list(allowed)}")
            if key == "sag" and value is None:
                kwargs[key] = None
            else:
                kwargs[key] = _build(SECTION_TYPES[key], value, (key,), ctx)
        else:
            raise ctx.error((key,), f"unknown key; allowed: "
                                    f"{['schema', 'kind', 'output_dir', *allowed]}")
    return ScenarioConfig(**kwargs)


def parse_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such scenario file")
    return parse_scenario_text(path.read_text(), str(path), str(path.parent))


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    return obj


def scenario_dict(config: ScenarioConfig) -> dict:
    out: dict[str, Any] = {"schema": SCHEMA, "kind": config.kind}
    for sec in KIND_SECTIONS[config.kind]:
        out[sec] = _plain(getattr(config, sec))
    if config.output_dir is not None:
        out["output_dir"] = config.output_dir
    return out


def serialize(config: ScenarioConfig) -> str:
    """YAML text that parses back to an equal config; every default is explicit."""
    return yaml.safe_dump(scenario_dict(config), sort_keys=False, default_flow_style=None)


def config_digest(config: ScenarioConfig) -> str:
    canon = json.dumps(scenario_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunManifest:
    config_digest: str
    version: str
    files: tuple[tuple[str, str], ...]  # (relative path, sha256)

    def to_dict(self) -> dict:
        return {"schema": "minerlvrt.manifest/1", "config_sha256": self.config_digest,
                "version": self.version,
                "files": [{"path": p, "sha256": h} for p, h in self.files]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


class _Writer:
    """Writes each output file atomically and remembers its checksum."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: list[tuple[str, str]] = []

    def write(self, name: str, text: str) -> None:
        path = self.out_dir / name
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text)
        os.replace(tmp, path)
        self.files.append((name, hashlib.sha256(text.encode()).hexdigest()))

    def json(self, name: str, obj) -> None:
        self.write(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _run_single(cfg: ScenarioConfig, w: _Writer, jobs: int) -> bool:
    sim = cfg.sim
    if cfg.sag is not None:
        sim = sag_sim_config(cfg.sag, sim, cfg.source)
    res = run_simulation(Source(cfg.source, cfg.sag), [cfg.converter], sim)
    w.write("trace.csv", res.trace.to_csv())
    w.json("summary.json", res.summary_dict())
    return True


def _run_sweep(cfg: ScenarioConfig, w: _Writer, jobs: int) -> bool:
    cmap = sweep_capability(cfg.converter, cfg.grid, cfg.sim, jobs=jobs)
    w.write("capability.csv", cmap.to_csv())
    w.json("capability_summary.json", cmap.summary_dict())
    return True


def _run_facility(cfg: ScenarioConfig, w: _Writer, jobs: int) -> bool:
    fc = cfg.facility
    scenario = fc.scenario(cfg.converter, cfg.sim)
    result = run_facility_table(scenario, fc.retained_fractions, fc.durations_s, jobs=jobs)
    w.write("facility_table.csv", result.table.to_csv())
    w.json("facility_summary.json", result.summary_dict())
    ref = fc.reference_table(Path(cfg.base_dir))
    if ref is not None:
        ref = ref.subset(result.table.retained_fractions, result.table.durations_s)
        w.json("comparison.json", compare_reference(result.table, ref).to_dict())
    return True


def _run_validate(cfg: ScenarioConfig, w: _Writer, jobs: int) -> bool:
    from .validation import run_invariant_suite
    results = run_invariant_suite(include_sweep=cfg.validate.sweep, jobs=jobs)
    w.json("validation.json", {"schema": "minerlvrt.validation/1",
                               "passed": all(r.passed for r in results),
                               "checks": [r.to_dict() for r in results]})
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return all(r.passed for r in results)


_RUNNERS = {"single": _run_single, "sweep": _run_sweep, "facility": _run_facility,
            "validate": _run_validate}


def execute(config: ScenarioConfig, out_dir: str | Path | None = None,
            jobs: int = 1) -> tuple[RunManifest, bool]:
    """Run ``config``, write outputs under ``out_dir`` and the manifest last.

    Returns the manifest and whether the run succeeded (``validate`` fails
    when any invariant fails).  Exceptions propagate and no manifest is
    written.
    """
    out = Path(out_dir or config.output_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    stale = out / "manifest.json"
    if stale.exists():
        stale.unlink()
    w = _Writer(out)
    w.write("scenario.yaml", serialize(config))
    ok = _RUNNERS[config.kind](config, w, jobs)
    manifest = RunManifest(config_digest(config), __version__, tuple(w.files))
    tmp = out / "manifest.json.tmp"
    tmp.write_text(manifest.to_json())
    os.replace(tmp, out / "manifest.json")
    return manifest, ok


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_COMMAND_KIND = {"run": "single", "sweep": "sweep", "facility": "facility",
                 "validate": "validate"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minerlvrt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind in _COMMAND_KIND.items():
        p = sub.add_parser(name, help=f"run a '{kind}' scenario")
        p.add_argument("--config", help="scenario YAML file (defaults apply when omitted)")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
        p.add_argument("--dt", type=float, help="override the simulation time step, seconds")
    return parser


def _load(args) -> ScenarioConfig:
    kind = _COMMAND_KIND[args.command]
    if args.config:
        cfg = parse_scenario(args.config)
        if cfg.kind != kind:
            raise ConfigError(f"{args.config}: kind {cfg.kind!r} cannot run under "
                              f"'{args.command}' (expects {kind!r})")
    else:
        cfg = ScenarioConfig(kind=kind)
    if args.dt is not None:
        if kind == "validate":
            raise ConfigError("--dt does not apply to validate")
        try:
            cfg = replace(cfg, sim=replace(cfg.sim, dt=args.dt))
        except ValueError as exc:
            raise ConfigError(f"--dt: {exc}") from None
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        manifest, ok = execute(cfg, args.out, jobs=args.jobs)
    except Exception as exc:  # every failure becomes a message and exit status 1
        print(f"minerlvrt: error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out or cfg.output_dir or "out")
    print(f"wrote {len(manifest.files)} files and manifest.json to {out}")
    return 0 if ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
