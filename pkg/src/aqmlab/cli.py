"""Command-line front end.

    aqmlab run     --config exp.yaml --out results/
    aqmlab tune    --config exp.yaml --out results/
    aqmlab sweep   --config exp.yaml --out results/
    aqmlab compare --config exp.yaml --out results/

Exit codes: 0 success, 2 config error, 3 simulation error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import yaml

from . import config as cfgmod
from .controllers import Rbf, controller_to_dict
from .pso import tune
from .scenarios import run_matrix, run_scenario, run_sweep

log = logging.getLogger("aqmlab")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIM = 3
EXIT_IO = 4

TRACE_COLUMNS = ("time", "queue", "window", "control", "arrival_rate")
METRIC_COLUMNS = ("iae", "utilization", "loss_rate")


class SimulationError(RuntimeError):
    pass


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    return format(float(x), ".12g")


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def trace_rows(res):
    for i in range(len(res)):
        yield (res.time[i], res.queue[i], res.window[i], res.control[i], res.arrival_rate[i])


def cmd_run(exp: cfgmod.Experiment, out: Path) -> int:
    try:
        res = run_scenario(exp.scenario, exp.controller, dt=exp.dt, seed=exp.seed)
    except (ValueError, ArithmeticError) as exc:
        raise SimulationError(str(exc)) from exc
    write_csv(out / "trace.csv", TRACE_COLUMNS, trace_rows(res))
    write_csv(out / "metrics.csv", METRIC_COLUMNS, [(res.iae, res.utilization, res.loss_rate)])
    return EXIT_OK


def cmd_compare(exp: cfgmod.Experiment, out: Path) -> int:
    cells = run_matrix([exp.scenario], exp.controllers, dt=exp.dt, seed=exp.seed)
    rows = []
    traces = []
    for c in cells:
        if c.ok:
            r = c.result
            rows.append((c.controller, r.iae, r.utilization, r.loss_rate))
            traces.append((c.controller, r))
        else:
            rows.append((c.controller, "nan", "nan", "nan"))
    write_csv(out / "metrics.csv", ("controller",) + METRIC_COLUMNS, rows)
    for name, res in traces:
        write_csv(out / f"trace_{name}.csv", TRACE_COLUMNS, trace_rows(res))
    failed = [c for c in cells if not c.ok]
    for c in failed:
        log.error("controller %s failed: %s", c.controller, c.error)
    return EXIT_SIM if failed else EXIT_OK


def cmd_sweep(exp: cfgmod.Experiment, out: Path) -> int:
    if not exp.controllers:
        raise cfgmod.ConfigError("sweep needs a non-empty controllers list")
    cells = run_sweep(exp.sweep_spec(), exp.controllers, dt=exp.dt, seed=exp.seed)
    rows = []
    for c in cells:
        if c.ok:
            rows.append((c.axis_value, c.controller, c.result.utilization, c.result.loss_rate))
        else:
            rows.append((c.axis_value, c.controller, "nan", "nan"))
    write_csv(out / "sweep.csv", ("axis_value", "controller", "utilization", "loss_rate"), rows)
    failed = [c for c in cells if not c.ok]
    for c in failed:
        log.error("cell %s/%s failed: %s", c.scenario, c.controller, c.error)
    return EXIT_SIM if failed else EXIT_OK


def cmd_tune(exp: cfgmod.Experiment, out: Path) -> int:
    template = exp.controller
    if not isinstance(template, Rbf):
        raise cfgmod.ConfigError(f"controller scheme {template.scheme!r} is not tunable; use rbf or irbf")
    swarm = dataclasses.replace(exp.swarm, seed=exp.seed)
    try:
        report = tune(template, exp.bounds, swarm, exp.scenario.params, exp.eval_spec,
                      tune_shape=exp.tune_shape, workers=exp.workers,
                      callback=lambda k, s: log.info("iteration %d best IAE %.6g", k, s))
    except (ValueError, ArithmeticError) as exc:
        if "bounds" in str(exc):
            raise cfgmod.ConfigError(str(exc)) from exc
        raise SimulationError(str(exc)) from exc
    write_csv(out / "convergence.csv", ("iteration", "best_iae"),
              [(i, s) for i, s in enumerate(report.convergence_trace)])
    write_csv(out / "best.csv", ("parameter", "value"),
              list(zip(report.parameter_names, report.global_best_position)))
    with open(out / "best_controller.yaml", "w") as fh:
        yaml.safe_dump({"controller": controller_to_dict(report.best_config)}, fh, sort_keys=False)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "tune": cmd_tune, "sweep": cmd_sweep, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aqmlab", description="Fluid-model AQM experiments")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="YAML experiment config")
    ap.add_argument("--out", type=Path, default=Path("."), help="output directory")
    ap.add_argument("--seed", type=int, help="override run.seed")
    ap.add_argument("--dt", type=float, help="override run.dt (seconds)")
    ap.add_argument("--dump-effective-config", action="store_true",
                    help="print the fully resolved config as YAML and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        exp = cfgmod.load(args.config) if args.config else cfgmod.parse({})
        if args.seed is not None:
            if args.seed < 0:
                raise cfgmod.ConfigError("--seed must be non-negative")
            exp.seed = args.seed
        if args.dt is not None:
            if not args.dt > 0:
                raise cfgmod.ConfigError("--dt must be positive")
            exp.dt = args.dt
        if args.dump_effective_config:
            sys.stdout.write(cfgmod.dump(exp))
            return EXIT_OK
        try:
            args.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            print(f"error: cannot create output directory {args.out}: {exc}", file=sys.stderr)
            return EXIT_IO
        return COMMANDS[args.command](exp, args.out)
    except cfgmod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
