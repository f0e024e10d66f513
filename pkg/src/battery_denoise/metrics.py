"""Mean squared error and per-sample error series for filtered runs."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import UNIFORM_ATOL_S, TimeSeries

ERROR_COLUMNS = ("t_s", "voltage_error_v", "soc_error")


class MetricsError(ValueError):
    pass


class LengthMismatch(MetricsError):
    pass


class EmptySeries(MetricsError):
    pass


def mse(observed: Sequence[float], predicted: Sequence[float]) -> float:
    """Mean of squared differences, accumulated with exact summation."""
    y = np.asarray(observed, dtype=float).reshape(-1)
    yhat = np.asarray(predicted, dtype=float).reshape(-1)
    if y.size != yhat.size:
        raise LengthMismatch(f"{y.size} observed vs {yhat.size} predicted values")
    if y.size == 0:
        raise EmptySeries("mse of an empty series")
    return math.fsum(((y - yhat) ** 2).tolist()) / y.size


def _ratio(noisy: float, filtered: float) -> float:
    if noisy == filtered:
        return 1.0
    return noisy / filtered if filtered > 0 else math.inf


@dataclass(eq=False)
class EvalReport:
    """Filtered and noisy MSE per channel plus the error series.

    ``voltage_error`` and ``soc_error`` are truth minus filtered.
    """

    mse_voltage: float
    mse_soc: float
    noisy_mse_voltage: float
    noisy_mse_soc: float
    t: np.ndarray
    voltage_error: np.ndarray
    soc_error: np.ndarray
    config_snapshot: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.t)

    @property
    def improvement_voltage(self) -> float:
        return _ratio(self.noisy_mse_voltage, self.mse_voltage)

    @property
    def improvement_soc(self) -> float:
        return _ratio(self.noisy_mse_soc, self.mse_soc)

    def summary(self) -> dict:
        return {
            "n": self.n,
            "mse_voltage": self.mse_voltage,
            "mse_soc": self.mse_soc,
            "noisy_mse_voltage": self.noisy_mse_voltage,
            "noisy_mse_soc": self.noisy_mse_soc,
            "improvement_voltage": self.improvement_voltage,
            "improvement_soc": self.improvement_soc,
        }

    def to_text(self) -> str:
        lines = [
            f"samples                 {self.n}",
            f"voltage MSE (filtered)  {self.mse_voltage:.6e} V^2",
            f"voltage MSE (noisy)     {self.noisy_mse_voltage:.6e} V^2",
            f"voltage improvement     {self.improvement_voltage:.4f}x",
            f"SOC MSE (filtered)      {self.mse_soc:.6e}",
            f"SOC MSE (noisy)         {self.noisy_mse_soc:.6e}",
            f"SOC improvement         {self.improvement_soc:.4f}x",
        ]
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        items = [(k, v) for k, v in self.summary().items()]
        items += [(f"config.{k}", v) for k, v in sorted(self.config_snapshot.items())]
        return "".join(f"{k} = {_kv_value(v)}\n" for k, v in items)

    def write(self, text_path, kv_path) -> None:
        Path(text_path).write_text(self.to_text(), encoding="utf-8")
        Path(kv_path).write_text(self.to_kv(), encoding="utf-8")

    def write_error_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ERROR_COLUMNS)
            for row in zip(self.t.tolist(), self.voltage_error.tolist(),
                           self.soc_error.tolist()):
                w.writerow([repr(v) for v in row])


def _kv_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def read_kv(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.lstrip().startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def evaluate(truth: TimeSeries, filtered: TimeSeries, noisy: TimeSeries,
             config_snapshot: dict | None = None) -> EvalReport:
    """Compare filtered and noisy channels against ground truth.

    The truth series contributes its ``voltage_v``/``soc`` columns, or its
    carried truth columns when it has them.
    """
    n = len(truth)
    for name, s in (("filtered", filtered), ("noisy", noisy)):
        if len(s) != n:
            raise LengthMismatch(f"{name} series has {len(s)} samples, truth has {n}")
        if n and np.abs(s.t - truth.t).max() > UNIFORM_ATOL_S:
            raise LengthMismatch(f"{name} series timestamps do not line up with truth")
    if n == 0:
        raise EmptySeries("cannot evaluate empty series")

    ref = truth.ground_truth()
    est = filtered.state_matrix()
    raw = noisy.state_matrix()
    return EvalReport(
        mse_voltage=mse(ref[:, 0], est[:, 0]),
        mse_soc=mse(ref[:, 1], est[:, 1]),
        noisy_mse_voltage=mse(ref[:, 0], raw[:, 0]),
        noisy_mse_soc=mse(ref[:, 1], raw[:, 1]),
        t=truth.t.copy(),
        voltage_error=ref[:, 0] - est[:, 0],
        soc_error=ref[:, 1] - est[:, 1],
        config_snapshot=dict(config_snapshot or {}),
    )
