"""Uniformly sampled multi-channel time series with an event log."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class Trace:
    sample_rate: float
    channels: dict[str, np.ndarray] = field(default_factory=dict)
    events: list[tuple[float, str]] = field(default_factory=list)
    t0: float = 0.0

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be > 0")
        self.channels = {k: np.asarray(v, dtype=float) for k, v in self.channels.items()}
        lengths = {v.size for v in self.channels.values()}
        if len(lengths) > 1:
            raise ValueError(f"channels have unequal lengths: {sorted(lengths)}")
        self.events = sorted(((float(t), str(lbl)) for t, lbl in self.events), key=lambda e: e[0])

    def __len__(self) -> int:
        return next(iter(self.channels.values())).size if self.channels else 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    def __contains__(self, name: str) -> bool:
        return name in self.channels

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def time(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) / self.sample_rate

    def index_at(self, t: float) -> int:
        """Index of the first sample at or after ``t`` (clipped to the trace)."""
        k = int(np.ceil((t - self.t0) * self.sample_rate - 1e-9))
        return min(max(k, 0), len(self))

    def window(self, t_start: float, t_stop: float) -> Trace:
        a, b = self.index_at(t_start), self.index_at(t_stop)
        return Trace(self.sample_rate, {k: v[a:b] for k, v in self.channels.items()},
                     [e for e in self.events if t_start <= e[0] < t_stop],
                     t0=self.t0 + a / self.sample_rate)

    def add_event(self, t: float, label: str) -> None:
        self.events.append((float(t), label))
        self.events.sort(key=lambda e: e[0])

    # -- CSV ---------------------------------------------------------------

    def to_csv(self, path: str | Path | None = None) -> str:
        """Serialize as CSV: a ``# sample_rate_hz=...`` comment line, header, rows.

        Events are written as trailing ``# event,<time>,<label>`` comment lines.
        Floats use ``repr`` so a round trip is exact.
        """
        buf = io.StringIO()
        buf.write(f"# sample_rate_hz={self.sample_rate!r}\n")
        names = list(self.channels)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_s", *names])
        cols = [self.time] + [self.channels[n] for n in names]
        for row in zip(*cols):
            w.writerow([repr(float(x)) for x in row])
        for t, lbl in self.events:
            buf.write(f"# event,{t!r},{lbl}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source: str | Path) -> Trace:
        text = Path(source).read_text() if isinstance(source, Path) or (
            isinstance(source, str) and "\n" not in source) else source
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# sample_rate_hz="):
            raise ValueError("trace CSV must start with a '# sample_rate_hz=' line")
        rate = float(lines[0].split("=", 1)[1])
        events = []
        body = []
        for ln in lines[1:]:
            if ln.startswith("# event,"):
                _, t, lbl = ln.split(",", 2)
                events.append((float(t), lbl))
            elif ln and not ln.startswith("#"):
                body.append(ln)
        rows = list(csv.reader(body))
        header = rows[0]
        if header[0] != "time_s":
            raise ValueError("first CSV column must be time_s")
        data = np.array(rows[1:], dtype=float).reshape(-1, len(header))
        t0 = float(data[0, 0]) if data.shape[0] else 0.0
        channels = {name: data[:, k] for k, name in enumerate(header) if k > 0}
        return cls(rate, channels, events, t0=t0)
