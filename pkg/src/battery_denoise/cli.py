"""Command-line front end.

Subcommands mirror the pipeline stages (``synth``, ``corrupt``, ``filter``,
``evaluate``) plus ``reproduce``, which chains them with the reference
defaults. Exit codes: 0 success, 2 configuration error, 3 I/O or data error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, parse_kv
from .dataset import DatasetError, ProfileMismatch, read_csv, write_csv
from .metrics import MetricsError, evaluate
from .noise import NoiseError, corrupt
from .pipeline import StageError, denoise, reproduce, synthesize
from .sigma_filter import FilterError

log = logging.getLogger("battery_denoise")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return _exit_code(exc.cause)
    if isinstance(exc, (ConfigError, ProfileMismatch, NoiseError)):
        return EXIT_CONFIG
    if isinstance(exc, FilterError):
        return EXIT_NUMERIC
    if isinstance(exc, (OSError, DatasetError, MetricsError)):
        return EXIT_IO
    return 1


def _common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--seed", type=int, help="noise seed (unsigned 64-bit)")
    p.add_argument("--psd", type=float, help="white-noise PSD in W/Hz")
    p.add_argument("--ts", type=float, help="timestep in seconds")
    p.add_argument("--phase", choices=("charge", "discharge", "both"))
    p.add_argument("--out", type=Path, default=Path(out_default),
                   help=f"output path (default: {out_default})")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="battery-denoise",
        description="UKF denoising of battery voltage and SOC time series.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a noise-free synthetic series")
    _common(p, "truth.csv")
    p.add_argument("--duration", type=float, help="series length in seconds")
    p.add_argument("--current", type=float, help="constant current in A (positive = discharge)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("corrupt", help="add white noise to voltage and SOC")
    p.add_argument("input", type=Path)
    _common(p, "noisy.csv")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("filter", help="run the UKF over a noisy series")
    p.add_argument("input", type=Path)
    _common(p, "filtered.csv")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("evaluate", help="MSE report for truth/filtered/noisy files")
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--filtered", type=Path, required=True)
    p.add_argument("--noisy", type=Path, required=True)
    _common(p, ".")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reproduce", help="synth -> corrupt -> filter -> evaluate")
    _common(p, "reproduce")
    p.set_defaults(func=cmd_reproduce)
    return parser


def load_config(args: argparse.Namespace, **extra) -> tuple[RunConfig, set[str]]:
    """Merge defaults, config file and flags (flags win) and validate.

    Also returns the set of keys that were given explicitly.
    """
    overrides: dict[str, str] = {}
    if args.config is not None:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        overrides.update(parse_kv(text, str(args.config)))
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    flags = {"seed": args.seed, "psd": args.psd, "timestep_s": args.ts, "phase": args.phase}
    flags.update(extra)
    overrides.update({k: str(v) for k, v in flags.items() if v is not None})
    cfg = RunConfig().with_overrides(overrides).validate()
    return cfg, set(overrides)


def _single_phase(cfg: RunConfig, command: str) -> str:
    if cfg.phase == "both":
        raise ConfigError(f"{command} works on one phase at a time")
    return cfg.phase


def cmd_synth(args) -> int:
    cfg, _ = load_config(args, duration_s=args.duration, current_a=args.current)
    phase = _single_phase(cfg, "synth")
    series = synthesize(cfg, phase)
    write_csv(series, args.out)
    log.info("wrote %d samples to %s", len(series), args.out)
    return EXIT_OK


def cmd_corrupt(args) -> int:
    cfg, _ = load_config(args)
    series = read_csv(args.input)
    noisy = corrupt(series, cfg.noise_spec(series.sample_rate))
    write_csv(noisy, args.out)
    log.info("wrote %d samples to %s", len(noisy), args.out)
    return EXIT_OK


def cmd_filter(args) -> int:
    cfg, explicit = load_config(args)
    phase = _single_phase(cfg, "filter") if "phase" in explicit else None
    series = read_csv(args.input, phase=phase)
    filtered, run = denoise(series, cfg)
    write_csv(filtered, args.out)
    log.info("filtered %d samples (%s, %d jitter events) into %s",
             len(filtered), filtered.phase, run.jitter_events, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg, _ = load_config(args)
    truth = read_csv(args.truth)
    report = evaluate(truth, read_csv(args.filtered), read_csv(args.noisy),
                      dict(cfg.to_dict(), phase=truth.phase))
    args.out.mkdir(parents=True, exist_ok=True)
    report.write(args.out / "report.txt", args.out / "report.kv")
    report.write_error_csv(args.out / "errors.csv")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg, _ = load_config(args)
    phases = cfg.phases()
    for phase in phases:
        out = args.out / phase if len(phases) > 1 else args.out
        report = reproduce(cfg, phase, out)
        sys.stdout.write(f"[{phase}] outputs in {out}\n{report.to_text()}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        code = _exit_code(exc)
        if code == 1:
            raise
        sys.stderr.write(f"battery-denoise {args.command}: {exc}\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
