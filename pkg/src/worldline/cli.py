"""Command-line interface: ``worldline {cp,plates,sweep,selftest}``.

Exit codes: 0 success, 1 self-test failure, 2 configuration error,
3 numerical failure. Options may also come from a flat ``key = value`` file
given with ``--config`` (keys are option names without dashes, with
dashes or underscores); command-line flags take precedence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .analytic import NumericalError

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

CP_COLUMNS = ("chi", "N", "n_paths", "method", "order", "m_or_delta", "estimate", "stderr",
              "oracle", "rel_err", "seed", "wall_time_s")
PLATES_COLUMNS = ("chi_hat", "d", "N", "n_paths", "observable", "pa_m", "estimate", "stderr",
                  "oracle", "rel_err", "seed", "wall_time_s")
SWEEP_COLUMNS = ("observable", "axis", "axis_value", "estimate", "stderr", "oracle", "rel_err",
                 "seed", "flag")


class ConfigError(ValueError):
    """Invalid command-line or config-file input."""


# ---------------------------------------------------------------------------
# parsing helpers

def count(text) -> int:
    """Integer that also accepts scientific notation such as ``1e6``."""
    value = float(text)
    if not math.isfinite(value) or value != int(value):
        raise argparse.ArgumentTypeError(f"expected an integer count, got {text!r}")
    return int(value)


def real(text) -> float:
    """Float that also accepts ``inf``."""
    try:
        return float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def triple(text) -> tuple:
    parts = [float(p) for p in str(text).split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")
    return tuple(parts)


def real_list(text) -> list:
    return [float(p) for p in str(text).split(",") if p.strip()]


def boolean(text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def read_config_file(path: str) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _common(p, paths=100_000, steps=10_000):
    p.add_argument("--config", help="flat key = value file with option defaults")
    p.add_argument("--paths", type=count, default=paths)
    p.add_argument("--steps", type=count, default=steps)
    p.add_argument("--seed", type=count, default=0)
    p.add_argument("--workers", type=count, default=None,
                   help="worker threads (default: WORLDLINE_WORKERS or the CPU count)")
    p.add_argument("--out", default="-", help="output file, '-' for stdout")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--verbose", action="store_true")


def _cp_options(p):
    p.add_argument("--chi", type=real, default=None)
    p.add_argument("--order", type=count, default=0)
    p.add_argument("--method", choices=("fd", "pa"), default="pa")
    p.add_argument("--delta", type=real, default=0.05, help="finite-difference width over d")
    p.add_argument("--pa-m", type=count, default=1)
    p.add_argument("--subaverages", type=count, default=1)
    p.add_argument("--sub-steps", type=count, default=1)
    p.add_argument("--t-nodes", type=count, default=64)
    p.add_argument("--t-scheme", choices=("auto", "exact", "gauss", "sampled"), default="auto")
    p.add_argument("--epsilon", type=real, default=None,
                   help="cp: strict-mode tolerance; plates: skip-condition tolerance")
    p.add_argument("--strict", action="store_true", help="enforce the averaging-fraction bound")


def _plates_options(p):
    p.add_argument("--chi-hat", type=real, default=None)
    p.add_argument("--d", type=real, default=1.0)
    p.add_argument("--pa-m", type=count, default=1)
    p.add_argument("--epsilon", type=real, default=None,
                   help="skip-condition tolerance (default 1e4 / (N sqrt(T)))")
    p.add_argument("--theta", type=real, default=1.0)
    p.add_argument("--start", choices=("window", "jitter", "midplane"), default="window")
    p.add_argument("--pivot", type=triple, default=(0.0, 0.0, 0.0))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="worldline", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    cp = sub.add_parser("cp", help="Casimir-Polder potential and derivatives")
    _common(cp)
    _cp_options(cp)

    pl = sub.add_parser("plates", help="two-plate energy, force, curvature or torque",
                        conflict_handler="resolve")
    _common(pl, paths=100_000, steps=1000)
    _plates_options(pl)
    pl.add_argument("--observable", choices=("energy", "force", "curvature", "torque"),
                    default="energy")

    sw = sub.add_parser("sweep", help="convergence sweep with error-floor fit",
                        conflict_handler="resolve")
    _common(sw)
    _cp_options(sw)
    _plates_options(sw)
    sw.add_argument("--observable", default="cp_derivative",
                    choices=("cp_derivative", "plates_energy", "plates_force", "plates_curvature"))
    sw.add_argument("--axis", choices=("pa_fraction", "fd_delta"), default="pa_fraction")
    sw.add_argument("--points", type=real_list, default=None, help="comma-separated axis values")
    sw.add_argument("--shared-seed", type=boolean, nargs="?", const=True, default=False)
    sw.add_argument("--split", type=real, default=None, help="fit split point on the axis")
    sw.add_argument("--fit-small", type=real_list, default=None, help="lo,hi of the small-side fit")
    sw.add_argument("--fit-large", type=real_list, default=None, help="lo,hi of the large-side fit")
    sw.add_argument("--fit-exponent", type=real, default=None)

    st = sub.add_parser("selftest", help="fast oracle and property checks")
    st.add_argument("--mutate", choices=("none", "eta-sign"), default="none",
                    help="inject a known defect to check that the suite catches it")
    st.add_argument("--config", help=argparse.SUPPRESS)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    """Parse ``argv`` with config-file values as defaults (flags win)."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        file_values = read_config_file(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in subparser._actions}
        defaults = {}
        for key, value in file_values.items():
            if key not in known or key == "config":
                raise ConfigError(f"unknown config key {key!r}")
            action = known[key]
            if isinstance(action, (argparse._StoreTrueAction,)):
                defaults[key] = boolean(value)
            elif action.type is not None:
                defaults[key] = action.type(value)
            else:
                defaults[key] = value
            if action.choices is not None and defaults[key] not in action.choices:
                raise ConfigError(f"config key {key!r}: invalid choice {value!r}")
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if getattr(args, "workers", None) is None and hasattr(args, "workers"):
        env = os.environ.get("WORLDLINE_WORKERS")
        if env:
            try:
                args.workers = count(env)
            except (argparse.ArgumentTypeError, ValueError):
                raise ConfigError(f"WORLDLINE_WORKERS must be an integer, got {env!r}") from None
    return args


# ---------------------------------------------------------------------------
# output

@dataclass
class RunConfig:
    """Everything echoed into an output header."""

    command: str
    engine: dict
    output: str = "-"
    format: str = "csv"
    extra: dict = field(default_factory=dict)


def _plain(value):
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def write_rows(run: RunConfig, columns, rows) -> None:
    """Write the header block and ``rows`` (dicts) as CSV or JSON lines."""
    out = sys.stdout if run.output == "-" else open(run.output, "w", encoding="utf-8", newline="")
    try:
        out.write(f"# worldline {__version__}\n")
        out.write(f"# command: {run.command}\n")
        out.write("# config: " + json.dumps(_plain(run.engine), sort_keys=True) + "\n")
        if run.extra:
            out.write("# extra: " + json.dumps(_plain(run.extra), sort_keys=True) + "\n")
        if run.format == "csv":
            out.write(",".join(columns) + "\n")
            for row in rows:
                out.write(",".join(_fmt(row.get(c, "")) for c in columns) + "\n")
        else:
            for row in rows:
                out.write(json.dumps({c: _plain(row.get(c)) for c in columns}) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()


def _fmt(value) -> str:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return '"' + ";".join(_fmt(v) for v in value) + '"'
    text = str(value)
    return f'"{text}"' if "," in text else text


def _rel_err(estimate, oracle):
    try:
        return abs(estimate - oracle) / abs(oracle) if oracle else math.nan
    except (TypeError, ZeroDivisionError):
        return math.nan


# ---------------------------------------------------------------------------
# commands

def _cp_config(args):
    from .cp_engine import CpConfig, DerivativeSpec

    if args.chi is None:
        raise ConfigError("--chi is required")
    method = "finite_difference" if args.method == "fd" else "partial_average"
    spec = DerivativeSpec(order=args.order, method=method, fd_delta=args.delta,
                          pa_m=args.pa_m, subaverage_count=args.subaverages)
    kwargs = dict(chi=args.chi, n_steps=args.steps, sub_steps=args.sub_steps,
                  n_paths=args.paths, derivative=spec, t_quadrature_nodes=args.t_nodes,
                  seed=args.seed, t_scheme=args.t_scheme, strict_error=args.strict,
                  workers=args.workers)
    if args.epsilon is not None:
        kwargs["epsilon_tolerance"] = args.epsilon
    return CpConfig(**kwargs)


def _plates_config(args, observable="energy"):
    from .plates_engine import PlatesConfig

    if args.chi_hat is None:
        raise ConfigError("--chi-hat is required")
    return PlatesConfig(chi_hat=args.chi_hat, d=args.d, n_steps=args.steps, n_paths=args.paths,
                        pa_epsilon=args.epsilon, pa_m=args.pa_m, derivative=observable,
                        seed=args.seed, theta=args.theta, start=args.start,
                        pivot=tuple(args.pivot), workers=args.workers)


def cmd_cp(args) -> int:
    from .cp_engine import cp_derivative_fd, cp_derivative_pa, cp_potential

    cfg = _cp_config(args)
    t0 = time.perf_counter()
    spec = cfg.derivative
    if spec.method == "finite_difference":
        res = cp_derivative_fd(cfg)
        knob = spec.fd_delta
    else:
        res = cp_potential(cfg) if spec.order == 0 else cp_derivative_pa(cfg)
        knob = spec.pa_m
    row = {"chi": cfg.chi, "N": cfg.n_steps, "n_paths": cfg.n_paths,
           "method": "fd" if spec.method == "finite_difference" else "pa", "order": spec.order,
           "m_or_delta": knob, "estimate": res.estimate, "stderr": res.stderr,
           "oracle": res.oracle, "rel_err": _rel_err(res.estimate, res.oracle), "seed": cfg.seed,
           "wall_time_s": round(time.perf_counter() - t0, 3)}
    write_rows(RunConfig("cp", asdict(cfg), args.out, args.format), CP_COLUMNS, [row])
    return EXIT_OK


def cmd_plates(args) -> int:
    from .plates_engine import plates_run, plates_torque

    cfg = _plates_config(args, args.observable)
    t0 = time.perf_counter()
    base = {"chi_hat": cfg.chi_hat, "d": cfg.d, "N": cfg.n_steps, "n_paths": cfg.n_paths,
            "pa_m": cfg.pa_m, "seed": cfg.seed}
    rows = []
    extra = {}
    if args.observable == "torque":
        res = plates_torque(cfg)
        for k, axis in enumerate("xyz"):
            rows.append(dict(base, observable=f"torque_{axis}", estimate=float(res.torque[k]),
                             stderr=float(res.stderr[k]), oracle=float(res.expected[k]),
                             rel_err=_rel_err(res.torque[k], res.expected[k])))
        extra = {"lever": res.lever.tolist(), "force": res.force.estimate,
                 "force_stderr": res.force.stderr}
    else:
        res = plates_run(cfg)[args.observable]
        rows.append(dict(base, observable=args.observable, estimate=res.estimate,
                         stderr=res.stderr, oracle=res.oracle,
                         rel_err=_rel_err(res.estimate, res.oracle)))
    wall = round(time.perf_counter() - t0, 3)
    for r in rows:
        r["wall_time_s"] = wall
    write_rows(RunConfig("plates", asdict(cfg), args.out, args.format, extra), PLATES_COLUMNS, rows)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .stats import SweepPlan, fit_error_floor, sweep

    if not args.points:
        raise ConfigError("--points is required")
    if args.observable == "cp_derivative":
        template = _cp_config(args)
        if args.axis == "fd_delta" and template.derivative.order not in (1, 2):
            raise ConfigError("fd_delta sweeps need --order 1 or 2")
    else:
        template = _plates_config(args)
    plan = SweepPlan(args.observable, args.axis, args.points, args.paths, args.shared_seed)
    rows = sweep(plan, template, args.workers)
    extra = {"plan": asdict(plan)}
    split = args.split if args.split is not None else math.sqrt(args.points[0] * args.points[-1])
    try:
        fit = fit_error_floor(rows, split, args.fit_small, args.fit_large,
                              fixed_exponent=args.fit_exponent)
        fit_row = fit.to_dict()
        fit_row["flag"] = "fit" if fit.has_crossing else "fit: no crossing in range"
    except (ValueError, np.linalg.LinAlgError) as exc:
        fit_row = {"flag": f"fit: {exc}"}
    fit_row.update(observable=args.observable, axis=args.axis, axis_value=fit_row.get("crossing"),
                   estimate=fit_row.get("floor"))
    rows.append(fit_row)
    columns = SWEEP_COLUMNS + ("fit_a", "fit_exponent", "crossing", "floor", "small_range",
                               "large_range")
    write_rows(RunConfig("sweep", asdict(template), args.out, args.format, extra), columns, rows)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftests

    results = run_selftests(mutate=args.mutate)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} passed")
    return EXIT_OK if failed == 0 else EXIT_SELFTEST


COMMANDS = {"cp": cmd_cp, "plates": cmd_plates, "sweep": cmd_sweep, "selftest": cmd_selftest}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"worldline: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError) as exc:
        print(f"worldline: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
