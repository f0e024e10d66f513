"""Synthesize -> corrupt -> filter -> evaluate, as plain functions."""
from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .config import RunConfig
from .dataset import DEFAULT_DURATION_S, Profile, TimeSeries, default_current, generate_synthetic, write_csv
from .ecm import BatteryModel
from .metrics import EvalReport, evaluate
from .noise import corrupt
from .sigma_filter import FilterRun, run_filter

OUTPUT_FILES = ("truth.csv", "noisy.csv", "filtered.csv", "errors.csv",
                "report.txt", "report.kv")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def synthesize(cfg: RunConfig, phase: str) -> TimeSeries:
    battery = cfg.battery_config()
    duration = cfg.duration_s or DEFAULT_DURATION_S[phase]
    current = cfg.current_a
    if current is None:
        current = default_current(phase, battery, duration)
    profile = Profile.constant(current, duration, cfg.temperature_k)
    return generate_synthetic(phase, battery, profile, duration,
                              initial_state=cfg.initial_state(phase))


def denoise(series: TimeSeries, cfg: RunConfig) -> tuple[TimeSeries, FilterRun]:
    """Filter the voltage/SOC channels of ``series``.

    The filter step follows the series' own sampling interval.
    """
    battery = cfg.battery_config()
    if not np.isclose(battery.timestep_s, series.timestep_s, rtol=1e-9):
        battery = type(battery)(battery.capacity_ah, series.timestep_s,
                                battery.table, battery.v1_closure)
    ukf = cfg.ukf_config(series.phase)
    run = run_filter(ukf, BatteryModel(battery), series.state_matrix(), series.exogenous())
    meta = dict(series.metadata, filtered=True, jitter_events=run.jitter_events)
    out = series.replace(voltage_v=run.means[:, 0], soc=run.means[:, 1], metadata=meta)
    return out, run


def reproduce(cfg: RunConfig, phase: str, out_dir) -> EvalReport:
    """Run the whole chain for one phase and write every intermediate file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with stage("synth"):
        truth = synthesize(cfg, phase)
        write_csv(truth, out / "truth.csv")
    with stage("corrupt"):
        noisy = corrupt(truth, cfg.noise_spec(truth.sample_rate))
        write_csv(noisy, out / "noisy.csv")
    with stage("filter"):
        filtered, _ = denoise(noisy, cfg)
        write_csv(filtered, out / "filtered.csv")
    with stage("evaluate"):
        snapshot = dict(cfg.to_dict(), phase=phase, output_path=None, input_path=None)
        report = evaluate(truth, filtered, noisy, snapshot)
        report.write_error_csv(out / "errors.csv")
        report.write(out / "report.txt", out / "report.kv")
    return report
