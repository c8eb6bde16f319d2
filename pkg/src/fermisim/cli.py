"""Command-line interface.

    fermisim run --config cfg.ini [--out DIR] [--threads K]
    fermisim validate --config cfg.ini
    fermisim diagnose --checkpoint state.dm.bin

Exit codes: 0 success, 1 validation error, 2 runtime/convergence failure.
FERMISIM_THREADS is the fallback for --threads.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fermisim")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory (overrides config)")
    p_run.add_argument("--threads", type=int, default=None)

    p_val = sub.add_parser("validate", help="validate a config file")
    p_val.add_argument("--config", required=True)

    p_diag = sub.add_parser("diagnose", help="inspect a binary checkpoint")
    p_diag.add_argument("--checkpoint", required=True)

    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "diagnose":
            return _cmd_diagnose(args)
    except KeyboardInterrupt:
        return 2
    return 2


def _load_config(path: str):
    from .experiments import ConfigError, parse_config

    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _cmd_validate(args) -> int:
    from .experiments import ConfigError

    try:
        cfg = _load_config(args.config)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1
    print(f"valid config: kind = {cfg.kind}")
    for w in cfg.warnings:
        print(f"warning: {w}")
    return 0


def _cmd_run(args) -> int:
    from .experiments import ConfigError, ExperimentError, emit_report, run_experiment
    from .grid_ops import GridError
    from .hf_dynamics import HFError
    from .equilibrium import PhaseSpaceError, ThomasFermiError

    try:
        cfg = _load_config(args.config)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 1
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("FERMISIM_THREADS", "1"))
    out_dir = args.out or cfg.out_dir
    try:
        report = run_experiment(cfg, threads=threads)
        written = emit_report(report, out_dir)
    except (ExperimentError, HFError, ThomasFermiError, PhaseSpaceError, GridError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    for w in cfg.warnings:
        print(f"warning: {w}")
    return 0


def _cmd_diagnose(args) -> int:
    from .serialize import SerializeError, read_density, read_phase_space
    from .states import operator_metrics, semiclassical_report

    path = args.checkpoint
    try:
        with open(path, "rb") as fh:
            magic = fh.read(8).decode("ascii", errors="replace").split()[0]
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return 1
    try:
        if magic == "FSIMDM":
            dm = read_density(path)
            metrics = operator_metrics(dm.op)
            rep = semiclassical_report(dm)
            print(f"density matrix on dim={dm.grid.dim} n={dm.grid.n} "
                  f"L={dm.grid.length:.6g} eps={dm.grid.epsilon:.6g}")
            print(f"trace = {metrics['trace'].real:.12g} (target {dm.particle_number:.12g})")
            print(f"hs_norm = {metrics['hs_norm']:.12g}  op_norm = {metrics['op_norm']:.12g}")
            print(f"eigenvalue range = [{dm.eigenvalues.min():.3e}, {dm.eigenvalues.max():.6g}]")
            print(f"semiclassical constant = {rep.constant:.6g}")
            return 0
        if magic == "FSIMPSD":
            psd = read_phase_space(path)
            print(f"phase-space density on dim={psd.grid.dim} n={psd.grid.n} nv={psd.nv}")
            print(f"mass = {psd.mass:.12g}  min = {psd.values.min():.3e}  "
                  f"max = {psd.values.max():.6g}")
            print(f"negative values flagged: {psd.flagged_negative}")
            return 0
        print(f"unknown checkpoint magic {magic!r}", file=sys.stderr)
        return 1
    except (SerializeError, ValueError) as exc:
        print(f"diagnose failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
