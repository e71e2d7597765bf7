"""Command-line front end.

Exit status: 0 success, 2 bad configuration or input, 3 solver or
calibration failure, 4 validation failure.  Failures print one line to
stderr: ``error stage=<stage> kind=<exception> message="..."``.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    load_scenario,
    load_stack,
    load_variation,
    parse_overrides,
    split_overrides,
    write_keyvalue,
)
from .fields import FieldMap, PowerTrace, load_fieldmap, save_fieldmap
from .greens import CalibrationError, GreensSet, ThermalRunawayError, calibrate
from .heatmap import render_heatmap
from .oracle import ConvergenceError
from .scenarios import (
    Scenario,
    check_set,
    oracle_options,
    oracle_steady,
    oracle_trace,
    standard_scenarios,
)
from .solver import (
    ValidationError,
    error_metrics,
    monte_carlo,
    steady_profile,
    step_response,
    time_varying_profile,
)
from .variation import conductivity_map, fit_conductivity_coeff, variation_leakage

log = logging.getLogger("vartherm")

EXIT_CONFIG, EXIT_SOLVER, EXIT_VALIDATION = 2, 3, 4
MAE_LIMIT, MAX_LIMIT = 2.5, 4.0  # percent of max rise


class StageError(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(str(exc))
        self.stage, self.exc = stage, exc


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, typ, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, (ConvergenceError, ThermalRunawayError, CalibrationError, ArithmeticError)):
        return EXIT_SOLVER
    return EXIT_CONFIG


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        msg = message.replace('"', "'")
        print(f'error stage=args kind=UsageError message="{msg}"', file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


# --------------------------------------------------------------------------
# helpers


def _outdir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _setup(args):
    over = parse_overrides(args.set)
    s_over, v_over = split_overrides(over)
    stack = load_stack(args.stack, s_over)
    var = load_variation(args.variation, v_over, stack.die_edge)
    return stack, var


def _chip(stack, var):
    n = stack.n
    nominal = FieldMap(np.full((n, n), var.leak_total / n**2), stack.pitch, "W")
    base = variation_leakage(nominal, var.params, var.beta, var.beta_L, var.beta_tox)
    k_die = None
    if var.dopant_spread > 0:
        k_die = conductivity_map(stack.layers[0].conductivity, var.params, var.dopant_spread, n)
    c = var.conductivity_coeff
    if c is None:
        c = fit_conductivity_coeff(stack.layers[0].conductivity, stack.ambient, var.eta)
    return nominal, base, k_die, c


def _load_power(path) -> FieldMap:
    return load_fieldmap(path)


def _load_trace(directory, dt: float) -> PowerTrace:
    files = sorted(Path(directory).glob("*.map"))
    if not files:
        raise ConfigError(f"{directory}: no .map frames found")
    return PowerTrace(dt, [load_fieldmap(f) for f in files])


def _write_maps(out: Path, name: str, maps, heatmap: bool):
    maps = maps if isinstance(maps, list) else [maps]
    for i, m in enumerate(maps):
        stem = name if len(maps) == 1 else f"{name}_{i:04d}"
        save_fieldmap(m, out / f"{stem}.map")
        if heatmap:
            render_heatmap(m, out / f"{stem}.ppm")


def _timing(offline: float, online: float):
    print(f"timing offline_s={offline:.4f} online_s={online:.6f}")


def _random_mode(args) -> str:
    return "none" if args.no_rand else args.rand_mode


# --------------------------------------------------------------------------
# subcommands


def cmd_calibrate(args):
    with _Stage("config"):
        stack, var = _setup(args)
        out = _outdir(args.out)
    t0 = time.perf_counter()
    with _Stage("calibrate"):
        _, base, k_die, c = _chip(stack, var)
        gs, report = calibrate(stack, base, k_die, c, var.probe, jobs=args.jobs)
    offline = time.perf_counter() - t0
    with _Stage("write"):
        gs.save(out)
        info = {"conductivity_coeff": repr(c), "alpha": repr(gs.alpha), "C": repr(gs.C),
                "offline_s": f"{offline:.3f}"}
        if report is not None:
            info.update(c_prime=repr(report.c_prime), fit_r2=repr(report.fit_r2),
                        probe=report.probe)
        write_keyvalue(out / "calibration.txt", info)
    _timing(offline, 0.0)


def _greens(args) -> tuple[GreensSet, float]:
    t0 = time.perf_counter()
    with _Stage("load-greens"):
        gs = GreensSet.load(args.greens)
    return gs, time.perf_counter() - t0


def cmd_steady(args):
    gs, offline = _greens(args)
    with _Stage("input"):
        p = _load_power(args.power)
        out = _outdir(args.out)
    with _Stage("solve"):
        res = steady_profile(gs, p, random=_random_mode(args))
    with _Stage("write"):
        _write_maps(out, "rise", res.rise, args.heatmap)
        _write_maps(out, "total", res.total, args.heatmap)
    _timing(offline, res.metadata["online_s"])


def cmd_step(args):
    gs, offline = _greens(args)
    with _Stage("input"):
        p = _load_power(args.power)
        times = [float(t) for t in args.times.split(",")]
        out = _outdir(args.out)
    with _Stage("solve"):
        res = step_response(gs, p, times=times, random=_random_mode(args))
    with _Stage("write"):
        _write_maps(out, "rise", res.rise, args.heatmap)
    _timing(offline, res.metadata["online_s"])


def cmd_trace(args):
    gs, offline = _greens(args)
    with _Stage("input"):
        trace = _load_trace(args.trace, args.dt)
        out = _outdir(args.out)
        initial = trace.frames[0] if args.warm else None
    with _Stage("solve"):
        res = time_varying_profile(gs, trace, args.window, initial=initial,
                                   random=_random_mode(args))
    with _Stage("write"):
        _write_maps(out, "rise", res.rise, args.heatmap)
    _timing(offline, res.metadata["online_s"])


def cmd_oracle(args):
    with _Stage("config"):
        stack, var = _setup(args)
        p = _load_power(args.power)
        out = _outdir(args.out)
    with _Stage("oracle"):
        _, base, k_die, c = _chip(stack, var)
        opts = oracle_options(base, c, method="cg")
        t0 = time.perf_counter()
        if args.trace:
            trace = _load_trace(args.trace, args.dt)
            maps = oracle_trace(stack, trace, opts, trace.frames[0] if args.warm else None, k_die)
        else:
            maps, _ = oracle_steady(stack, p, opts, k_die)
        elapsed = time.perf_counter() - t0
    with _Stage("write"):
        _write_maps(out, "oracle", maps, args.heatmap)
    _timing(0.0, elapsed)


def cmd_montecarlo(args):
    gs, offline = _greens(args)
    with _Stage("config"):
        stack, var = _setup(args)
        p = _load_power(args.power)
        out = _outdir(args.out)
        seeds = None
        if args.seeds:
            seeds = [int(s) for s in Path(args.seeds).read_text().split()]
        nominal = FieldMap(np.full((gs.n, gs.n), var.leak_total / gs.n**2), gs.pitch, "W")
    t0 = time.perf_counter()
    with _Stage("montecarlo"):
        summary = monte_carlo(gs, nominal, var.params, p, args.runs, seeds,
                              random=_random_mode(args), jobs=args.jobs)
    online = time.perf_counter() - t0
    with _Stage("write"):
        (out / "runs.csv").write_text("\n".join(summary.csv_rows(timing=False)) + "\n")
        (out / "timing.csv").write_text(
            "seed,runtime_ms\n" + "".join(f"{r.seed},{r.runtime_ms:.3f}\n" for r in summary.runs))
        write_keyvalue(out / "summary.txt", {
            "runs": len(summary.runs), "mean_max_rise": f"{summary.mean:.12g}",
            "std_max_rise": f"{summary.std:.12g}",
            **{f"p{q}_max_rise": f"{v:.12g}" for q, v in summary.percentiles.items()},
            "failed": sum(1 for r in summary.runs if r.error),
        })
    _timing(offline, online)


def _suite(args, stack) -> list[Scenario]:
    if not args.suite:
        return standard_scenarios(stack)
    files = sorted(Path(args.suite).glob("*.txt"))
    if not files:
        raise ConfigError(f"{args.suite}: no scenario files")
    out = []
    for f in files:
        d = load_scenario(f)
        var = load_variation(d["variation"] or None, {}, stack.die_edge)
        params = var.params if not d["seed"] else var.params.reseeded(int(d["seed"]))
        out.append(Scenario(d["name"], load_fieldmap(d["power"]), params, var.leak_total))
    return out


def cmd_validate(args):
    with _Stage("config"):
        stack, var = _setup(args)
        suite = _suite(args, stack)
        out = _outdir(args.out)
    t0 = time.perf_counter()
    with _Stage("calibrate"):
        if args.greens:
            gs = GreensSet.load(args.greens)
        else:
            first = suite[0]
            _, _, k_die, c = _chip(stack, var)
            gs, _ = calibrate(stack, first.leakage(var.beta), k_die, c, var.probe, jobs=args.jobs)
    offline = time.perf_counter() - t0
    c = var.conductivity_coeff
    if c is None:
        c = fit_conductivity_coeff(stack.layers[0].conductivity, stack.ambient, var.eta)
    failures, online = [], 0.0
    for sc in suite:
        with _Stage(f"validate:{sc.name}"):
            g = check_set(gs, sc)
            res = steady_profile(g, sc.p_dyn, random=_random_mode(args))
            online += res.metadata["online_s"]
            ref, _ = oracle_steady(stack, sc.p_dyn, oracle_options(sc.leakage(gs.beta), c))
            rep = error_metrics(res, ref)
        ok = rep.pct_of_max_rise <= MAE_LIMIT and rep.max_pct <= MAX_LIMIT
        write_keyvalue(out / f"{sc.name}.report", {**rep.as_dict(), "pass": ok})
        print(f"{sc.name}: mae={rep.pct_of_max_rise:.3f}% max={rep.max_pct:.3f}% "
              f"hotspot_hit={rep.hotspot_hit} {'PASS' if ok else 'FAIL'}")
        if not ok:
            failures.append(sc.name)
    _timing(offline, online)
    if failures:
        raise StageError("validate", ValidationError(
            f"scenarios over threshold: {' '.join(failures)}"))


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="vartherm", description="Variation-aware chip temperature solver")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def chip_args(p):
        p.add_argument("--stack", help="stack key-value file (default: built-in stack)")
        p.add_argument("--variation", help="variation key-value file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a stack or variation key")
        p.add_argument("--jobs", type=int, default=1, help="worker cap")

    def rand_args(p):
        p.add_argument("--no-rand", action="store_true", help="omit the random component")
        p.add_argument("--rand-mode", choices=("interaction", "hadamard"), default="interaction")
        p.add_argument("--heatmap", action="store_true", help="also write PPM images")

    p = sub.add_parser("calibrate", help="build a Green's function set")
    chip_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("steady", help="steady-state profile")
    p.add_argument("--greens", required=True)
    p.add_argument("--power", required=True)
    p.add_argument("--out", required=True)
    rand_args(p)
    p.set_defaults(func=cmd_steady)

    p = sub.add_parser("step", help="response to a power step")
    p.add_argument("--greens", required=True)
    p.add_argument("--power", required=True)
    p.add_argument("--times", required=True, help="comma-separated seconds")
    p.add_argument("--out", required=True)
    rand_args(p)
    p.set_defaults(func=cmd_step)

    p = sub.add_parser("trace", help="time-varying power trace")
    p.add_argument("--greens", required=True)
    p.add_argument("--trace", required=True, help="directory of .map frames (sorted by name)")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--warm", action="store_true", help="start at steady state of the first frame")
    p.add_argument("--out", required=True)
    rand_args(p)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("oracle", help="finite-difference reference solve")
    chip_args(p)
    p.add_argument("--power", required=True, help="power map (steady) or unused with --trace")
    p.add_argument("--trace")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--warm", action="store_true")
    p.add_argument("--heatmap", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("montecarlo", help="sweep leakage-variation seeds")
    chip_args(p)
    p.add_argument("--greens", required=True)
    p.add_argument("--power", required=True)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seeds", help="file of whitespace-separated integer seeds")
    p.add_argument("--out", required=True)
    p.add_argument("--no-rand", action="store_true")
    p.add_argument("--rand-mode", choices=("interaction", "hadamard"), default="interaction")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("validate", help="compare against the oracle on a scenario suite")
    chip_args(p)
    p.add_argument("--suite", help="directory of scenario files (default: built-in suite)")
    p.add_argument("--greens", help="prepared Green's set (default: calibrate now)")
    p.add_argument("--out", required=True)
    p.add_argument("--no-rand", action="store_true")
    p.add_argument("--rand-mode", choices=("interaction", "hadamard"), default="interaction")
    p.set_defaults(func=cmd_validate)
    return ap


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as e:
        msg = str(e.exc).replace("\n", " ").replace('"', "'")
        print(f'error stage={e.stage} kind={type(e.exc).__name__} message="{msg}"',
              file=sys.stderr)
        return _exit_code(e.exc)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
