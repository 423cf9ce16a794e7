"""Command-line entry point: ``capshare solve | compare | sweep``.

Instance configs are INI-style text::

    [shared]
    c_ul = 20e6        # Hz
    c_dl = 20e6
    c_total = 40e6     # optional, defaults to c_ul + c_dl
    f_a = 3e9          # cycles/s
    f_c = 2e9
    r_ac = 6e6         # bit/s
    alpha = 1e-8
    beta = 2e-7
    theta = 1.1        # optional: deadline = theta * t_l for users without one
    objective = max    # or sum

    [user.0]
    d_in = 1.6e8       # bits
    d_out = 1.6e7
    y = 3.8e10         # cycles (default 1900 per byte of d_in)
    e_l = 58.4         # J
    t_l = 63.2         # s
    e_t = 22.72
    e_r = 2.272
    eta_u = 3.5
    eta_d = 3.5
    c_a = 1.6e8
    c_c = 1.6e8
    rho = 0.5
    deadline = 70      # optional

A ``[generate]`` section replaces the user sections with one random
default instance (fields ``n`` plus any default-scenario constant),
drawn from ``--seed``. Sweep configs hold a ``[sweep]`` section and an
optional ``[shared]`` section overriding the default scenario.

Exit codes: 0 success, 1 bad input (config, cap, missing deadline),
2 infeasible, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import math
import os
import re
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (CapShareError, ClampExceedsTolerance, ConfigError, InfeasibleAllocation,
                     MissingDeadline, NumericalFailure, TooLarge)
from .experiments import (METHODS, PRESET_NAMES, PROFILES, SWEEPABLE, DefaultParams, SweepSpec,
                          generate_instance, preset, run_method, run_sweep)
from .model import Instance, ObjectiveMode, SharedParams, TaskProfile, UserParams, user_delay
from .resource_alloc import DEFAULT_TOL

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3, 4

SHARED_FIELDS = ("c_ul", "c_dl", "c_total", "f_a", "f_c", "r_ac", "alpha", "beta")
USER_FIELDS = ("d_in", "d_out", "y", "e_l", "t_l", "e_t", "e_r", "eta_u", "eta_d", "c_a",
               "c_c", "rho", "deadline")
_USER_OPTIONAL = ("y", "deadline")
_SWEEP_FIELDS = ("param", "values", "methods", "realizations", "theta",
                 "scale_resources_with_n", "trials", "timing", "oracle_max_n", "objective")
_BASE_FIELDS = tuple(f for f in SWEEPABLE if f not in ("theta",)) + ("objective",)


# config parsing --------------------------------------------------------------

class _Source:
    """Parsed config plus a map from (section, key) to line number."""

    def __init__(self, text: str, name: str = "<config>"):
        self.text = text
        self.name = name
        self.digest = hashlib.sha256(text.encode()).hexdigest()[:16]
        parser = configparser.ConfigParser(interpolation=None,
                                           inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(text, source=name)
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            if line is None and getattr(exc, "errors", None):
                line = exc.errors[0][0]
            raise ConfigError(str(exc).splitlines()[0], line=line) from None
        self.parser = parser
        self.lines: dict[tuple[str, str | None], int] = {}
        section = None
        for no, raw in enumerate(text.splitlines(), 1):
            s = raw.strip()
            m = re.match(r"\[([^\]]+)\]", s)
            if m:
                section = m.group(1).strip()
                self.lines[(section, None)] = no
            elif section and s and s[0] not in "#;":
                key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
                self.lines.setdefault((section, key), no)

    def sections(self):
        return self.parser.sections()

    def line(self, section, key=None):
        return self.lines.get((section, key), self.lines.get((section, None)))

    def keys(self, section):
        return list(self.parser[section].keys())

    def get(self, section, key):
        return self.parser[section][key]

    def number(self, section, key, kind=float):
        raw = self.get(section, key)
        try:
            value = kind(raw)
        except ValueError:
            raise ConfigError(f"expected a number, got {raw!r}", self.line(section, key),
                              key) from None
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError(f"value must be finite, got {raw!r}", self.line(section, key), key)
        return value

    def flag(self, section, key):
        try:
            return self.parser[section].getboolean(key)
        except ValueError:
            raise ConfigError("expected true/false", self.line(section, key), key) from None

    def check_keys(self, section, allowed):
        for key in self.keys(section):
            if key not in allowed:
                raise ConfigError(f"unknown field in [{section}]", self.line(section, key), key)

    def wrap(self, section, fn):
        """Run a constructor, turning validation errors into ConfigErrors."""
        try:
            return fn()
        except (ValueError, CapShareError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), self.line(section)) from None


def _objective(src, section):
    raw = src.get(section, "objective").strip().lower()
    try:
        return ObjectiveMode(raw)
    except ValueError:
        raise ConfigError("objective must be 'max' or 'sum'", src.line(section, "objective"),
                          "objective") from None


def _user_sections(src):
    out = []
    for name in src.sections():
        if name.startswith("user."):
            idx = name[5:]
            if not idx.isdigit():
                raise ConfigError("user sections are named [user.<index>]", src.line(name))
            out.append((int(idx), name))
    out.sort()
    if [k for k, _ in out] != list(range(len(out))):
        raise ConfigError("user sections must be numbered 0, 1, 2, ... without gaps",
                          src.line(out[-1][1]) if out else None)
    return [name for _, name in out]


def parse_instance(text: str, seed: int = 0, name: str = "<config>") -> tuple[Instance, str]:
    """Instance from config text; returns ``(instance, digest)``."""
    src = _Source(text, name)
    known = {"shared", "generate"}
    for sec in src.sections():
        if sec not in known and not sec.startswith("user."):
            raise ConfigError(f"unknown section [{sec}]", src.line(sec))
    if "generate" in src.sections():
        return _generated(src, seed), src.digest
    if "shared" not in src.sections():
        raise ConfigError("missing [shared] section")
    src.check_keys("shared", SHARED_FIELDS + ("theta", "objective"))
    for key in ("c_ul", "c_dl", "f_a", "f_c", "r_ac", "alpha", "beta"):
        if key not in src.keys("shared"):
            raise ConfigError("required field missing", src.line("shared"), key)
    vals = {k: src.number("shared", k) for k in SHARED_FIELDS if k in src.keys("shared")}
    vals.setdefault("c_total", vals["c_ul"] + vals["c_dl"])
    shared = src.wrap("shared", lambda: SharedParams(
        vals["c_ul"], vals["c_dl"], vals["c_total"], vals["f_a"], vals["f_c"], vals["r_ac"],
        vals["alpha"], vals["beta"]))
    theta = src.number("shared", "theta") if "theta" in src.keys("shared") else None
    mode = _objective(src, "shared") if "objective" in src.keys("shared") else \
        ObjectiveMode.MAX_DELAY

    names = _user_sections(src)
    if not names:
        raise ConfigError("no [user.k] sections")
    users = []
    for sec in names:
        src.check_keys(sec, USER_FIELDS)
        for key in USER_FIELDS:
            if key not in _USER_OPTIONAL and key not in src.keys(sec):
                raise ConfigError(f"required field missing in [{sec}]", src.line(sec), key)
        u = {k: src.number(sec, k) for k in USER_FIELDS if k in src.keys(sec)}
        cycles = u.get("y", 1900.0 * u["d_in"] / 8.0)
        deadline = u.get("deadline")
        if deadline is None and theta is not None:
            deadline = theta * u["t_l"]
        task = src.wrap(sec, lambda: TaskProfile(u["d_in"], u["d_out"], cycles))
        params = src.wrap(sec, lambda: UserParams(
            u["e_l"], u["t_l"], u["e_t"], u["e_r"], u["eta_u"], u["eta_d"], u["c_a"], u["c_c"],
            u["rho"], deadline))
        users.append((task, params))
    return src.wrap("shared", lambda: Instance(tuple(users), shared, mode)), src.digest


def _base_params(src, section, base: DefaultParams) -> DefaultParams:
    changes = {}
    for key in src.keys(section):
        if key == "objective":
            changes[key] = _objective(src, section)
        else:
            changes[key] = src.number(section, key, int if key == "n" else float)
    return src.wrap(section, lambda: base.replace(**changes))


def _generated(src, seed):
    for sec in src.sections():
        if sec != "generate":
            raise ConfigError("[generate] cannot be combined with other sections",
                              src.line(sec))
    src.check_keys("generate", _BASE_FIELDS + ("theta",))
    params = _base_params(src, "generate", DefaultParams())
    return generate_instance(params, np.random.default_rng([seed, 0]))


def parse_sweep(text: str, seed: int = 0, name: str = "<config>") -> tuple[SweepSpec, str]:
    src = _Source(text, name)
    for sec in src.sections():
        if sec not in ("sweep", "shared"):
            raise ConfigError(f"unknown section [{sec}]", src.line(sec))
    if "sweep" not in src.sections():
        raise ConfigError("missing [sweep] section")
    src.check_keys("sweep", _SWEEP_FIELDS)
    for key in ("param", "values"):
        if key not in src.keys("sweep"):
            raise ConfigError("required field missing", src.line("sweep"), key)
    base = DefaultParams()
    if "shared" in src.sections():
        src.check_keys("shared", _BASE_FIELDS)
        base = _base_params(src, "shared", base)
    kw = {"param": src.get("sweep", "param").strip(), "seed": seed, "base": base}
    cast = int if kw["param"] == "n" else float
    items = [s.strip() for s in src.get("sweep", "values").split(",") if s.strip()]
    try:
        kw["grid"] = tuple(cast(s) for s in items)
    except ValueError:
        raise ConfigError("values must be a comma-separated list of numbers",
                          src.line("sweep", "values"), "values") from None
    if "methods" in src.keys("sweep"):
        kw["methods"] = tuple(s.strip() for s in src.get("sweep", "methods").split(",")
                              if s.strip())
    for key, kind in (("realizations", int), ("trials", int), ("oracle_max_n", int),
                      ("theta", float)):
        if key in src.keys("sweep"):
            kw[key] = src.number("sweep", key, kind)
    for key in ("scale_resources_with_n", "timing"):
        if key in src.keys("sweep"):
            kw[key] = src.flag("sweep", key)
    if "objective" in src.keys("sweep"):
        kw["base"] = base.replace(objective=_objective(src, "sweep"))
    return src.wrap("sweep", lambda: SweepSpec(**kw)), src.digest


# output ---------------------------------------------------------------------

def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        atomic_write(out, text)


def _check_out(out: str | None) -> None:
    if out is not None and not Path(out).parent.is_dir():
        raise FileNotFoundError(f"output directory {str(Path(out).parent)!r} does not exist")


def _g(x: float) -> str:
    return f"{x:.10g}"


def format_solution(instance: Instance, sol, method: str) -> str:
    arr = instance.arrays
    lines = [f"method      {method}",
             f"provenance  {sol.provenance.value}" + ("  (fallback start)" if sol.fallback else ""),
             f"users       {instance.n}",
             f"objective   {instance.objective_mode.value}",
             f"decision    {sol.decision}",
             ""]
    head = ["user", "place", "c_u_hz", "c_d_hz", "f_a_hz", "delay_s"]
    if instance.has_deadlines:
        head += ["deadline_s", "slack_s"]
    lines.append("  ".join(f"{h:>14}" if k > 1 else f"{h:>5}" for k, h in enumerate(head)))
    for i in range(instance.n):
        d = user_delay(i, sol.decision, sol.alloc, instance)
        row = [f"{i:>5}", f"{sol.decision[i].code:>5}", f"{_g(sol.alloc.cu[i]):>14}",
               f"{_g(sol.alloc.cd[i]):>14}", f"{_g(sol.alloc.fa[i]):>14}", f"{_g(d):>14}"]
        if instance.has_deadlines:
            row += [f"{_g(arr.deadline[i]):>14}", f"{_g(arr.deadline[i] - d):>14}"]
        lines.append("  ".join(row))
    lines += ["",
              f"energy_term {_g(sol.cost.energy_term)}",
              f"delay_term  {_g(sol.cost.delay_term)}",
              f"total_cost  {_g(sol.total)}"]
    if not math.isnan(sol.lower_bound):
        lines.append(f"lower_bound {_g(sol.lower_bound)}")
    return "\n".join(lines) + "\n"


def _banner(command: str, seed: int, digest: str) -> None:
    print(f"capshare {__version__} {command} seed={seed} config={digest}", file=sys.stderr)


# commands -----------------------------------------------------------------------

def _read(path: str) -> str:
    return Path(path).read_text()


def cmd_solve(args) -> int:
    instance, digest = parse_instance(_read(args.config), args.seed, args.config)
    _banner("solve", args.seed, digest)
    _check_out(args.out)
    sol = run_method(args.method, instance, args.seed, args.trials, args.tol)
    _emit(format_solution(instance, sol, args.method), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    instance, digest = parse_instance(_read(args.config), args.seed, args.config)
    _banner("compare", args.seed, digest)
    _check_out(args.out)
    methods = [m for m in METHODS if not (m == "sharecap-d" and not instance.has_deadlines)]
    if args.methods:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}", field="--methods")
    rows = []
    for m in methods:
        t0 = time.perf_counter()
        try:
            sol = run_method(m, instance, args.seed, args.trials, args.tol)
            rows.append((m, sol.total, str(sol.decision), time.perf_counter() - t0, ""))
        except (InfeasibleAllocation, NumericalFailure, TooLarge, ClampExceedsTolerance,
                MissingDeadline) as exc:
            rows.append((m, math.nan, "-", time.perf_counter() - t0, type(exc).__name__))
    oracle = next((r[1] for r in rows if r[0] == "oracle" and not math.isnan(r[1])), None)
    head = f"{'method':<12} {'cost':>16} {'gap_vs_oracle':>14} {'decision':<{max(8, instance.n)}}"
    if args.timing:
        head += f" {'runtime_s':>10}"
    lines = [head]
    for m, cost, dec, dt, err in rows:
        gap = "n/a" if (oracle is None or math.isnan(cost)) else f"{(cost - oracle) / oracle:.6%}"
        line = (f"{m:<12} {(err or _g(cost)):>16} {gap:>14} "
                f"{dec:<{max(8, instance.n)}}")
        if args.timing:
            line += f" {dt:>10.3f}"
        lines.append(line.rstrip())
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if (args.preset is None) == (args.config is None):
        raise ConfigError("give exactly one of a sweep config or --preset")
    changes = {k: getattr(args, k) for k in ("realizations", "trials", "tol")
               if getattr(args, k) is not None}
    if args.timing:
        changes["timing"] = True
    if args.preset is not None:
        try:
            spec = preset(args.preset, args.profile, seed=args.seed, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc), field="--preset") from None
        digest = hashlib.sha256(repr(spec).encode()).hexdigest()[:16]
    else:
        spec, digest = parse_sweep(_read(args.config), args.seed, args.config)
        if changes:
            try:
                spec = dataclasses.replace(spec, **changes)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
    _banner("sweep", args.seed, digest)
    _check_out(args.out)
    table = run_sweep(spec)
    for err in table.errors:
        print(f"cell error: {spec.param}={err.value} method={err.method} "
              f"realization={err.realization}: {err.message}", file=sys.stderr)
    _emit(table.to_csv(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="capshare", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"capshare {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, solve_flags=True):
        sp.add_argument("--seed", type=int, default=0, help="seed for every random choice")
        sp.add_argument("--out", help="write the result here (atomically) instead of stdout")
        if solve_flags:
            sp.add_argument("--trials", type=int, default=10, help="rounding trials M")
            sp.add_argument("--tol", type=float, default=DEFAULT_TOL,
                            help="resource-solver tolerance")

    s = sub.add_parser("solve", help="solve one instance with one method")
    s.add_argument("config")
    s.add_argument("--method", choices=METHODS, default="sharecap")
    common(s)
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("compare", help="run every method on one instance")
    c.add_argument("config")
    c.add_argument("--methods", help="comma-separated subset of methods")
    c.add_argument("--timing", action="store_true", help="add a wall-clock column")
    common(c)
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", help="Monte-Carlo parameter sweep to CSV")
    w.add_argument("config", nargs="?")
    w.add_argument("--preset", choices=PRESET_NAMES)
    w.add_argument("--profile", choices=tuple(PROFILES), default="full")
    w.add_argument("--realizations", type=int)
    w.add_argument("--timing", action="store_true",
                   help="fill mean_runtime_s (always on for table3)")
    common(w, solve_flags=False)
    w.add_argument("--trials", type=int)
    w.add_argument("--tol", type=float)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TooLarge, MissingDeadline) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleAllocation as exc:
        print(f"error: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalFailure, ClampExceedsTolerance) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
