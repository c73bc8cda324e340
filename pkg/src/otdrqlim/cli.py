"""Command-line front end.

Exit status: 0 on success, 2 on a configuration error, 1 on any other
failure.  Diagnostics go to standard error; data goes to files under
``--out`` (and, for ``limits`` and ``validate-config``, to standard output).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, SystemConfig, apply_overrides, derive_grid, dump_config,
                     load_config, parse_assignments, validate)
from .estimation import estimate_phase
from .experiment import (UncertaintyReport, _fmt, _write_csv, _write_gnuplot, git_describe,
                         noise_scale_for_snr, simulate_frames, sweep)
from .fiber import ComplexTrace, write_trace
from .limits import limit_curve

logger = logging.getLogger("otdrqlim")

COMMANDS = ("limits", "simulate-trace", "sweep-snr", "sweep-length", "sweep-frames",
            "validate-config")
SWEEP_AXES = {"sweep-snr": "snr", "sweep-length": "delta_L", "sweep-frames": "frames"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--seed", type=int, help="master RNG seed")
    common.add_argument("--fibers", type=int, help="fibre realisations per sweep point")
    common.add_argument("--frames", type=int, help="frames (pulses) per fibre")
    common.add_argument("--out", type=Path, help="output directory (created if absent)")
    common.add_argument("--format", choices=("csv",), default="csv")
    common.add_argument("--no-noise", action="store_true", help="disable ASE and receiver noise")
    common.add_argument("--threads", type=int, default=None,
                        help="worker processes, 0 = one per CPU (default: $OTDRQLIM_THREADS or 1)")
    common.add_argument("--gnuplot", action="store_true", help="also write gnuplot scripts")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="otdrqlim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "limits": "write the analytic reference curves (no simulation)",
        "simulate-trace": "simulate one fibre and dump a frame's power and phase",
        "sweep-snr": "ensemble sweep over the SNR operating point",
        "sweep-length": "ensemble sweep over the heated length",
        "sweep-frames": "ensemble sweep over the averaging length",
        "validate-config": "check a configuration and print the derived grid",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "simulate-trace":
            sp.add_argument("--frame", type=int, default=0, help="frame to dump")
            sp.add_argument("--trial", type=int, default=0, help="fibre (trial) index")
    return parser


def resolve_config(args) -> SystemConfig:
    config = load_config(args.config) if args.config else SystemConfig()
    overrides = parse_assignments(args.overrides)
    if args.seed is not None:
        overrides["rng_seed"] = args.seed
    if args.fibers is not None:
        overrides["fibers"] = args.fibers
    if args.frames is not None:
        overrides["frames"] = args.frames
    if args.no_noise:
        overrides["noise_scale"] = 0.0
    return apply_overrides(config, overrides)


def _manifest(out: Path, command: str, config: SystemConfig, extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "config": asdict(config),
        "master_seed": config.rng_seed,
        "version": __version__,
        "git_describe": git_describe(),
    }
    manifest.update(extra or {})
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
                    encoding="utf-8")
    return path


def cmd_validate_config(args, source: SystemConfig) -> int:
    cfg = validate(source)
    grid = derive_grid(cfg)
    lines = {
        "total_fast_samples": grid.total_fast_samples,
        "sample_period_s": grid.sample_period,
        "sample_spacing_m": grid.sample_spacing,
        "resolution_cell_m": grid.resolution_cell_length,
        "group_velocity_m_per_s": grid.group_velocity,
        "conversion_constant_cf": cfg.cf,
    }
    for k, v in lines.items():
        print(f"{k} = {_fmt(v)}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "config.ini").write_text(dump_config(source), encoding="utf-8")
        _manifest(args.out, "validate-config", source, {"derived": lines})
    return 0


def cmd_limits(args, source: SystemConfig) -> int:
    cfg = validate(source)
    snr_db = np.asarray(source.snr_db_grid, dtype=float)
    snr = 10 ** (snr_db / 10)
    phase = limit_curve("phase_vs_snr", snr)
    header = ["snr_db", "sigma_limit_rad"] + [f"sigma_limit_k_dL{dL:g}" for dL in source.delta_l_list]
    temp = [limit_curve("temp_vs_snr", snr, cf=cfg.cf, delta_L=dL).sigma for dL in source.delta_l_list]
    rows = [[snr_db[i], phase.sigma[i]] + [t[i] for t in temp] for i in range(len(snr_db))]

    # CSV of the SNR curves to standard output
    sys.stdout.write(",".join(header) + "\r\n")
    for row in rows:
        sys.stdout.write(",".join(_fmt(v) for v in row) + "\r\n")

    if args.out:
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        lin = 10 ** (source.snr_db / 10)
        length = limit_curve("temp_vs_length", source.delta_l_list, cf=cfg.cf, snr=lin)
        monitor_dL = source.monitor_distance_m - source.heating_zone_start_m
        delta_L = min(monitor_dL, source.heating_zone_end_m - source.heating_zone_start_m)
        frames = limit_curve("temp_vs_frames", source.frames_grid, cf=cfg.cf, delta_L=delta_L, snr=lin)
        written = [
            _write_csv(out / "limits_vs_snr.csv", header, rows),
            _write_csv(out / "limits_vs_length.csv", ("delta_L_m", "sigma_limit_k"),
                       zip(length.abscissa, length.sigma)),
            _write_csv(out / "limits_vs_frames.csv", ("frames", "sigma_limit_k"),
                       zip(frames.abscissa.astype(int), frames.sigma)),
        ]
        if args.gnuplot:
            _write_gnuplot(out, written)
        _manifest(out, "limits", source, {"conversion_constant_cf": cfg.cf})
    return 0


def cmd_simulate_trace(args, source: SystemConfig) -> int:
    cfg = validate(source)
    grid = derive_grid(cfg)
    if not 0 <= args.frame < cfg.frames:
        raise ConfigError("frame-range", f"--frame {args.frame} outside 0..{cfg.frames - 1}")
    scale = source.noise_scale
    noisy, _ = simulate_frames(cfg, args.trial, scale, args.frame + 1)
    y = noisy[args.frame]
    out = args.out or Path("trace")
    out.mkdir(parents=True, exist_ok=True)
    k = np.arange(len(y))
    power = np.abs(y) ** 2
    phase = estimate_phase(y)
    _write_csv(out / "trace.csv", ("k", "distance_m", "power_w", "phase_rad"),
               zip(k, grid.distance_of_sample(k), power, phase))
    trace = ComplexTrace(y, cfg.adc_rate, args.frame, 0)
    write_trace(out / "trace.bin", trace, {"trial_index": args.trial, "noise_scale": repr(scale)})
    _manifest(out, "simulate-trace", source,
              {"trial_index": args.trial, "frame": args.frame,
               "total_fast_samples": grid.total_fast_samples})
    logger.info("wrote %d samples to %s", len(y), out)
    return 0


def cmd_sweep(args, source: SystemConfig) -> int:
    cfg = validate(source)
    axis = SWEEP_AXES[args.command]
    out = args.out or Path(f"{args.command}-out")
    t0 = time.perf_counter()
    report: UncertaintyReport = sweep(cfg, axis, threads=args.threads,
                                      noise_scale=0.0 if args.no_noise else None)
    report.write(out, gnuplot=args.gnuplot, extra_manifest={"command": args.command})
    logger.info("%s: %d fibres per point, %d failures, %.1f s wall time", args.command,
                report.ensemble_size, len(report.failures), time.perf_counter() - t0)
    return 0


HANDLERS = {
    "limits": cmd_limits,
    "simulate-trace": cmd_simulate_trace,
    "validate-config": cmd_validate_config,
    "sweep-snr": cmd_sweep,
    "sweep-length": cmd_sweep,
    "sweep-frames": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit with 2
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2) if args.verbose else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        source = resolve_config(args)
        return HANDLERS[args.command](args, source)
    except ConfigError as exc:
        print(f"otdrqlim: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 1
        logger.debug("traceback", exc_info=True)
        print(f"otdrqlim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
