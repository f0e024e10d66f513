"""Uniformly sampled battery time series, synthetic profiles and CSV I/O."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .ecm import BatteryConfig, ExogenousRecord, soc_trajectory, transition_voltage

PHASES = ("charge", "discharge")

BASE_COLUMNS = ("t_s", "current_a", "temp_k", "voltage_v", "soc")
TRUTH_COLUMNS = ("truth_voltage_v", "truth_soc")

# Initial states and run lengths of the reference experiment.
INITIAL_STATE = {"charge": (2.5, 0.01), "discharge": (4.2, 1.0)}
DEFAULT_DURATION_S = {"charge": 2500.0, "discharge": 7000.0}
DEFAULT_TEMP_K = 293.0
UNIFORM_ATOL_S = 1e-9


class DatasetError(Exception):
    pass


class SchemaError(DatasetError):
    """Missing, renamed or unexpected CSV column."""


class ParseError(DatasetError):
    """A row could not be parsed or violates a field invariant."""

    def __init__(self, message: str, line: int, column: int | None = None):
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.column = column


class NonUniformSampling(DatasetError):
    pass


class ProfileMismatch(DatasetError):
    """The current/temperature schedule does not cover the requested duration."""


class Sample(NamedTuple):
    t: float
    current_a: float
    temp_k: float
    voltage_v: float
    soc: float
    truth_voltage_v: float | None = None
    truth_soc: float | None = None


def _column(values) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Column-oriented battery log.

    ``voltage_v`` and ``soc`` hold whatever the series currently carries
    (truth, noisy or filtered); ``truth_voltage_v``/``truth_soc`` are set on
    derived series so the ground truth travels with them.
    """

    t: np.ndarray
    current_a: np.ndarray
    temp_k: np.ndarray
    voltage_v: np.ndarray
    soc: np.ndarray
    sample_rate: float
    phase: str = "charge"
    truth_voltage_v: np.ndarray | None = None
    truth_soc: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in BASE_COLUMNS[1:] + ("t",):
            object.__setattr__(self, name, _column(getattr(self, name)))
        n = len(self.t)
        for name in BASE_COLUMNS[1:]:
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        if (self.truth_voltage_v is None) != (self.truth_soc is None):
            raise ValueError("truth columns must be given together")
        if self.truth_voltage_v is not None:
            for name in TRUTH_COLUMNS:
                col = _column(getattr(self, name))
                if len(col) != n:
                    raise ValueError(f"column {name} has length {len(col)}, expected {n}")
                object.__setattr__(self, name, col)
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "metadata", dict(self.metadata))

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.records)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        if self.has_truth != other.has_truth or self.phase != other.phase:
            return False
        if not math.isclose(self.sample_rate, other.sample_rate, rel_tol=1e-9):
            return False
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in self.columns)

    @property
    def has_truth(self) -> bool:
        return self.truth_voltage_v is not None

    @property
    def timestep_s(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def columns(self) -> tuple[str, ...]:
        names = ("t",) + BASE_COLUMNS[1:]
        return names + TRUTH_COLUMNS if self.has_truth else names

    @property
    def records(self) -> list[Sample]:
        cols = [getattr(self, c).tolist() for c in self.columns]
        return [Sample(*row) for row in zip(*cols)]

    def exogenous(self) -> list[ExogenousRecord]:
        return [ExogenousRecord(i, tk) for i, tk in
                zip(self.current_a.tolist(), self.temp_k.tolist())]

    def state_matrix(self) -> np.ndarray:
        """``(N, 2)`` array of ``[voltage_v, soc]``."""
        return np.column_stack([self.voltage_v, self.soc])

    def ground_truth(self) -> np.ndarray:
        """``(N, 2)`` truth array; the carried columns when present."""
        if self.has_truth:
            return np.column_stack([self.truth_voltage_v, self.truth_soc])
        return self.state_matrix()

    def replace(self, **changes) -> "TimeSeries":
        kw = {c: getattr(self, c) for c in ("t",) + BASE_COLUMNS[1:] + TRUTH_COLUMNS}
        kw.update(sample_rate=self.sample_rate, phase=self.phase, metadata=self.metadata)
        kw.update(changes)
        return TimeSeries(**kw)


@dataclass(frozen=True)
class Segment:
    duration_s: float
    current_a: float
    temp_k: float = DEFAULT_TEMP_K


@dataclass(frozen=True)
class Profile:
    """Piecewise-constant current and temperature schedule."""

    segments: tuple[Segment, ...]

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValueError("profile needs at least one segment")
        for s in segs:
            if not s.duration_s > 0:
                raise ValueError(f"segment duration must be positive, got {s.duration_s}")
            if not s.temp_k > 0:
                raise ValueError(f"segment temperature must be positive, got {s.temp_k}")

    @property
    def duration_s(self) -> float:
        return math.fsum(s.duration_s for s in self.segments)

    @classmethod
    def constant(cls, current_a: float, duration_s: float,
                 temp_k: float = DEFAULT_TEMP_K) -> "Profile":
        return cls((Segment(duration_s, current_a, temp_k),))

    def sample(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Current and temperature in effect at each time in ``t``."""
        edges = np.cumsum([s.duration_s for s in self.segments])
        idx = np.minimum(np.searchsorted(edges, t, side="right"), len(self.segments) - 1)
        current = np.array([s.current_a for s in self.segments])[idx]
        temp = np.array([s.temp_k for s in self.segments])[idx]
        return current, temp


def default_current(phase: str, cfg: BatteryConfig,
                    duration_s: float | None = None) -> float:
    """Constant current that sweeps the SOC range over the phase duration."""
    duration_s = DEFAULT_DURATION_S[phase] if duration_s is None else duration_s
    soc0 = INITIAL_STATE[phase][1]
    if phase == "charge":
        return -(1.0 - soc0) * 3600.0 * cfg.capacity_ah / duration_s
    return soc0 * 3600.0 * cfg.capacity_ah / duration_s


def generate_synthetic(phase: str, cfg: BatteryConfig, profile: Profile | None = None,
                       duration_s: float | None = None,
                       initial_state: tuple[float, float] | None = None) -> TimeSeries:
    """Noise-free ground truth from the battery model.

    Sample k sits at ``t = k * cfg.timestep_s`` and sample k+1 is the model
    transition of sample k under the exogenous values of sample k. SOC
    saturates at the bounds rather than truncating, so the length is always
    ``round(duration_s / timestep_s)``.

    Raises
    ------
    ProfileMismatch
        If ``profile`` is shorter than ``duration_s``.
    """
    if phase not in PHASES:
        raise ValueError(f"phase must be one of {PHASES}, got {phase!r}")
    if duration_s is None:
        duration_s = profile.duration_s if profile is not None else DEFAULT_DURATION_S[phase]
    if not duration_s > 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    if profile is None:
        profile = Profile.constant(default_current(phase, cfg, duration_s), duration_s)
    if profile.duration_s < duration_s - UNIFORM_ATOL_S:
        raise ProfileMismatch(
            f"profile covers {profile.duration_s} s, {duration_s} s requested"
        )

    n = int(round(duration_s / cfg.timestep_s))
    t = np.arange(n) * cfg.timestep_s
    current, temp = profile.sample(t)
    et, soc0 = INITIAL_STATE[phase] if initial_state is None else initial_state

    soc = soc_trajectory(soc0, current[:-1].tolist(), cfg)[:n] if n else np.empty(0)
    volts = np.empty(n)
    for k in range(n):
        volts[k] = et
        if k + 1 < n:
            et = transition_voltage(et, soc[k], ExogenousRecord(current[k], temp[k]), cfg)

    return TimeSeries(
        t, current, temp, volts, soc, sample_rate=1.0 / cfg.timestep_s, phase=phase,
        metadata={"source": "synthetic", "capacity_ah": cfg.capacity_ah,
                  "timestep_s": cfg.timestep_s, "v1_closure": cfg.v1_closure},
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(series: TimeSeries, path) -> None:
    """Write ``series`` with full round-trip precision (UTF-8, LF)."""
    header = BASE_COLUMNS + (TRUTH_COLUMNS if series.has_truth else ())
    cols = [getattr(series, c).tolist() for c in series.columns]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def _infer_phase(current: np.ndarray) -> str:
    return "discharge" if current.size and current.mean() > 0 else "charge"


def read_csv(path, phase: str | None = None,
             sample_rate: float | None = None) -> TimeSeries:
    """Parse a series written by :func:`write_csv`.

    ``phase`` defaults to the sign of the mean current. ``sample_rate`` is
    inferred from the timestamps; it is only needed for files with fewer than
    two rows (the default step is then 0.1 s).

    Raises
    ------
    SchemaError
        Header missing a required column or containing unknown ones.
    ParseError
        Non-numeric or invalid field, with its line and column number.
    NonUniformSampling
        Timestamps not strictly increasing at a constant step.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in BASE_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column {missing[0]!r}")
        has_truth = any(c in header for c in TRUTH_COLUMNS)
        expected = BASE_COLUMNS + (TRUTH_COLUMNS if has_truth else ())
        if tuple(header) != expected:
            absent = [c for c in expected if c not in header]
            if absent:
                raise SchemaError(f"{path}: missing column {absent[0]!r}")
            raise SchemaError(f"{path}: expected header {','.join(expected)}, got {','.join(header)}")

        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise ParseError(f"expected {len(expected)} fields, got {len(row)}", lineno)
            vals = []
            for col, raw in enumerate(row, start=1):
                try:
                    v = float(raw)
                except ValueError:
                    raise ParseError(f"{expected[col - 1]}={raw!r} is not a number",
                                     lineno, col) from None
                if not math.isfinite(v):
                    raise ParseError(f"{expected[col - 1]} is not finite", lineno, col)
                vals.append(v)
            if vals[0] < 0:
                raise ParseError(f"t_s={vals[0]} is negative", lineno, 1)
            if vals[2] <= 0:
                raise ParseError(f"temp_k={vals[2]} must be positive", lineno, 3)
            if has_truth and not 0.0 <= vals[6] <= 1.0:
                raise ParseError(f"truth_soc={vals[6]} outside [0, 1]", lineno, 7)
            rows.append(vals)

    data = np.array(rows, dtype=float).reshape(len(rows), len(expected))
    t = data[:, 0]
    if len(t) >= 2:
        steps = np.diff(t)
        dt = (t[-1] - t[0]) / (len(t) - 1)
        if not dt > 0 or np.any(steps <= 0) or np.abs(steps - dt).max() > UNIFORM_ATOL_S:
            bad = int(np.argmax(np.abs(steps - dt))) if dt > 0 else 0
            raise NonUniformSampling(f"{path}: irregular timestep near line {bad + 3}")
        if sample_rate is None:
            sample_rate = 1.0 / dt
    elif sample_rate is None:
        sample_rate = 10.0

    return TimeSeries(
        t, data[:, 1], data[:, 2], data[:, 3], data[:, 4], sample_rate=sample_rate,
        phase=phase or _infer_phase(data[:, 1]),
        truth_voltage_v=data[:, 5] if has_truth else None,
        truth_soc=data[:, 6] if has_truth else None,
        metadata={"source": str(path)},
    )
