"""Seedable white-noise injection.

A one-sided power spectral density (W/Hz) is turned into a per-sample
variance over the Nyquist band, ``psd * fs / 2``, and independent Gaussian
draws of that variance are added to the voltage and SOC channels. Draws come
from numpy's Philox counter-based generator so a seed reproduces exactly on
any platform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import TimeSeries

DEFAULT_PSD = 1e-4


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    psd: float = DEFAULT_PSD
    sample_rate: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not (self.psd >= 0 and math.isfinite(self.psd)):
            raise NoiseError(f"psd must be non-negative, got {self.psd}")
        if not (self.sample_rate > 0 and math.isfinite(self.sample_rate)):
            raise NoiseError(f"sample_rate must be positive, got {self.sample_rate}")
        if not 0 <= int(self.seed) < 2**64 or int(self.seed) != self.seed:
            raise NoiseError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


def psd_to_variance(spec: NoiseSpec) -> float:
    return spec.psd * spec.sample_rate / 2.0


def draw(spec: NoiseSpec, n: int) -> np.ndarray:
    """``(n, 2)`` noise draws: column 0 for voltage, column 1 for SOC."""
    rng = np.random.Generator(np.random.Philox(int(spec.seed)))
    return rng.standard_normal((n, 2)) * math.sqrt(psd_to_variance(spec))


def corrupt(series: TimeSeries, spec: NoiseSpec) -> TimeSeries:
    """Add white noise to the voltage and SOC channels of ``series``.

    The clean values move to the truth columns (existing truth columns are
    kept as they are).
    """
    if not math.isclose(series.sample_rate, spec.sample_rate, rel_tol=1e-6):
        raise NoiseError(
            f"series sampled at {series.sample_rate} Hz, noise spec assumes {spec.sample_rate} Hz"
        )
    truth_v = series.truth_voltage_v if series.has_truth else series.voltage_v
    truth_soc = series.truth_soc if series.has_truth else series.soc
    volts, soc = series.voltage_v, series.soc
    if spec.psd > 0:
        w = draw(spec, len(series))
        volts = volts + w[:, 0]
        soc = soc + w[:, 1]
    meta = dict(series.metadata, noise_psd=spec.psd, noise_seed=int(spec.seed))
    return series.replace(voltage_v=volts, soc=soc, truth_voltage_v=truth_v,
                          truth_soc=truth_soc, metadata=meta)
