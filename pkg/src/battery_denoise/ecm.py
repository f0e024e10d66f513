"""Single-RC smartphone battery model.

State is ``[terminal voltage (V), SOC]``. R1 and C1 depend on SOC and cell
temperature through bilinear lookup tables; the SOC follows coulomb counting.
Positive current means discharge.
"""
from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

SOC_GRID = (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0)
TEMP_GRID_K = (278.0, 293.0, 313.0)

# rows follow SOC_GRID, columns follow TEMP_GRID_K
R1_OHM = (
    (0.0109, 0.0029, 0.0013),
    (0.0069, 0.0024, 0.0012),
    (0.0047, 0.0026, 0.0013),
    (0.0034, 0.0016, 0.001),
    (0.0033, 0.0023, 0.0014),
    (0.0033, 0.0018, 0.0011),
    (0.0028, 0.0017, 0.0011),
)
C1_UF = (
    (1913.6, 12447.0, 30609.0),
    (4625.7, 18872.0, 32995.0),
    (23306.0, 40764.0, 47535.0),
    (10736.0, 18721.0, 26325.0),
    (18036.0, 33630.0, 48274.0),
    (12251.0, 18360.0, 26839.0),
    (9022.9, 23394.0, 30606.0),
)

V1_CLOSURES = ("steady_state", "zero")


class TableError(ValueError):
    """Malformed or inconsistent parameter table."""


def _as_grid(values) -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(float(v) for v in row) for row in values)


@dataclass(frozen=True)
class EcmTable:
    """R1 (ohm) and C1 (microfarad) grids over SOC x temperature (K)."""

    soc_grid: tuple[float, ...] = SOC_GRID
    temp_grid: tuple[float, ...] = TEMP_GRID_K
    r1_values: tuple[tuple[float, ...], ...] = R1_OHM
    c1_values: tuple[tuple[float, ...], ...] = C1_UF

    def __post_init__(self):
        soc = tuple(float(s) for s in self.soc_grid)
        temp = tuple(float(t) for t in self.temp_grid)
        r1, c1 = _as_grid(self.r1_values), _as_grid(self.c1_values)
        object.__setattr__(self, "soc_grid", soc)
        object.__setattr__(self, "temp_grid", temp)
        object.__setattr__(self, "r1_values", r1)
        object.__setattr__(self, "c1_values", c1)

        if len(soc) < 2 or len(temp) < 2:
            raise TableError("each grid axis needs at least two breakpoints")
        if any(b <= a for a, b in zip(soc, soc[1:])) or soc[0] < 0 or soc[-1] > 1:
            raise TableError("soc_grid must be strictly ascending within [0, 1]")
        if any(b <= a for a, b in zip(temp, temp[1:])) or temp[0] <= 0:
            raise TableError("temp_grid must be strictly ascending and positive")
        for name, grid in (("r1_values", r1), ("c1_values", c1)):
            if len(grid) != len(soc) or any(len(row) != len(temp) for row in grid):
                raise TableError(f"{name} must be {len(soc)}x{len(temp)}")
            if not all(v > 0 and math.isfinite(v) for row in grid for v in row):
                raise TableError(f"{name} must be positive and finite")

    @classmethod
    def from_csv(cls, path) -> "EcmTable":
        """Load a table from CSV with header ``soc,temp_k,r1_ohm,c1_uf``.

        One row per grid point; row order is free but the points must form a
        complete rectangular grid.
        """
        path = Path(path)
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["soc", "temp_k", "r1_ohm", "c1_uf"]:
                raise TableError(f"{path}: expected header soc,temp_k,r1_ohm,c1_uf, got {header}")
            points = {}
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    soc, temp, r1, c1 = (float(v) for v in row)
                except ValueError as exc:
                    raise TableError(f"{path}:{lineno}: {exc}") from None
                if (soc, temp) in points:
                    raise TableError(f"{path}:{lineno}: duplicate grid point ({soc}, {temp})")
                points[soc, temp] = (r1, c1)
        socs = sorted({s for s, _ in points})
        temps = sorted({t for _, t in points})
        missing = [(s, t) for s in socs for t in temps if (s, t) not in points]
        if missing:
            raise TableError(f"{path}: incomplete grid, missing {missing[:3]}")
        return cls(
            tuple(socs), tuple(temps),
            tuple(tuple(points[s, t][0] for t in temps) for s in socs),
            tuple(tuple(points[s, t][1] for t in temps) for s in socs),
        )

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["soc", "temp_k", "r1_ohm", "c1_uf"])
            for i, s in enumerate(self.soc_grid):
                for j, t in enumerate(self.temp_grid):
                    w.writerow([repr(s), repr(t), repr(self.r1_values[i][j]),
                                repr(self.c1_values[i][j])])


def _bracket(grid: Sequence[float], x: float) -> tuple[int, float]:
    """Cell index and fractional position of ``x`` after clamping to the grid."""
    if not x > grid[0]:  # also catches NaN
        return 0, 0.0
    if x >= grid[-1]:
        return len(grid) - 2, 1.0
    i = bisect_right(grid, x) - 1
    return i, (x - grid[i]) / (grid[i + 1] - grid[i])


def interpolate(table: EcmTable, values, soc: float, temp: float) -> float:
    """Bilinear interpolation of a SOC x temperature grid, inputs clamped.

    Grid points reproduce the stored value exactly.
    """
    i, u = _bracket(table.soc_grid, soc)
    j, v = _bracket(table.temp_grid, temp)
    lo, hi = values[i], values[i + 1]
    a = (1.0 - v) * lo[j] + v * lo[j + 1]
    b = (1.0 - v) * hi[j] + v * hi[j + 1]
    return (1.0 - u) * a + u * b


def lookup_r1(table: EcmTable, soc: float, temp: float) -> float:
    """RC-branch resistance in ohms."""
    return interpolate(table, table.r1_values, soc, temp)


def lookup_c1(table: EcmTable, soc: float, temp: float) -> float:
    """RC-branch capacitance in farads."""
    return interpolate(table, table.c1_values, soc, temp) / 1e6


class ExogenousRecord(NamedTuple):
    current_a: float
    temperature_k: float


@dataclass(frozen=True)
class BatteryConfig:
    """Cell capacity (Ah), step length (s), parameter table and V1 closure.

    ``v1_closure`` selects how the RC-branch voltage is closed:
    ``"steady_state"`` uses V1 = I * R1, ``"zero"`` uses V1 = 0.
    """

    capacity_ah: float = 4.0
    timestep_s: float = 0.1
    table: EcmTable = field(default_factory=EcmTable)
    v1_closure: str = "steady_state"

    def __post_init__(self):
        if not (self.capacity_ah > 0 and math.isfinite(self.capacity_ah)):
            raise ValueError(f"capacity_ah must be positive, got {self.capacity_ah}")
        if not (self.timestep_s > 0 and math.isfinite(self.timestep_s)):
            raise ValueError(f"timestep_s must be positive, got {self.timestep_s}")
        if self.v1_closure not in V1_CLOSURES:
            raise ValueError(f"v1_closure must be one of {V1_CLOSURES}, got {self.v1_closure!r}")

    @property
    def soc_per_amp(self) -> float:
        """SOC removed by one amp over one step."""
        return self.timestep_s / (3600.0 * self.capacity_ah)


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def transition_soc(soc: float, rec: ExogenousRecord, cfg: BatteryConfig,
                   clamp: bool = True) -> float:
    """One coulomb-counting step."""
    nxt = soc - rec.current_a * cfg.soc_per_amp
    return _clamp01(nxt) if clamp else nxt


def soc_trajectory(soc0: float, currents: Sequence[float], cfg: BatteryConfig,
                   clamp: bool = True) -> np.ndarray:
    """SOC at every step boundary for a current sequence.

    Returns ``len(currents) + 1`` values starting at ``soc0``. Charge is
    accumulated with Neumaier summation and converted to SOC in one step, so
    the k-step change matches ``-cfg.soc_per_amp * sum(currents[:k])`` to a
    single rounding. With ``clamp``, a trajectory that leaves [0, 1] is
    recomputed step by step, saturating at the bound and counting on from it.
    """
    out = np.empty(len(currents) + 1)
    out[0] = soc0
    total = comp = 0.0
    for k, i in enumerate(currents, start=1):
        t = total + i
        comp += (total - t) + i if abs(total) >= abs(i) else (i - t) + total
        total = t
        out[k] = soc0 - (total + comp) * cfg.soc_per_amp
    if not clamp or (out.min() >= 0.0 and out.max() <= 1.0):
        return out
    soc = out[0] = _clamp01(soc0)
    for k, i in enumerate(currents, start=1):
        soc = _clamp01(soc - i * cfg.soc_per_amp)
        out[k] = soc
    return out


def rc_voltage(soc: float, rec: ExogenousRecord, cfg: BatteryConfig,
               r1: float | None = None) -> float:
    """Voltage across the RC branch under the configured closure."""
    if cfg.v1_closure == "zero":
        return 0.0
    if r1 is None:
        r1 = lookup_r1(cfg.table, soc, rec.temperature_k)
    return rec.current_a * r1


def transition_voltage(et: float, soc: float, rec: ExogenousRecord,
                       cfg: BatteryConfig) -> float:
    """One explicit-Euler step of the terminal voltage."""
    r1 = lookup_r1(cfg.table, soc, rec.temperature_k)
    c1 = lookup_c1(cfg.table, soc, rec.temperature_k)
    v1 = rc_voltage(soc, rec, cfg, r1)
    return et + (v1 / (r1 * c1) - rec.current_a / c1) * cfg.timestep_s


def measure(state) -> np.ndarray:
    """Identity observation of ``[E_T, SOC]``; noise enters via R."""
    return np.array(state, dtype=float)


@dataclass(frozen=True)
class BatteryModel:
    """Transition/measurement pair for the filter.

    ``clamp_soc`` is off by default: the filter runs with small-alpha sigma
    points whose outer weights are of order 1/alpha**2, and a kink at the SOC
    bounds would dominate the weighted mean whenever the spread straddles it.
    """

    cfg: BatteryConfig = field(default_factory=BatteryConfig)
    clamp_soc: bool = False

    def transition(self, x: np.ndarray, rec: ExogenousRecord) -> np.ndarray:
        et, soc = float(x[0]), float(x[1])
        return np.array([
            transition_voltage(et, soc, rec, self.cfg),
            transition_soc(soc, rec, self.cfg, clamp=self.clamp_soc),
        ])

    def measure(self, x: np.ndarray) -> np.ndarray:
        return x
