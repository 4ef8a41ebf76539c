"""Command-line front end for precoding sweeps.

Usage::

    twrelay iterative --config sweep.yaml --out results.csv
    twrelay compare --config sweep.yaml --format json --threads 4

One subcommand per scheme (``iterative``, ``cp``, ``cp-uniform``, ``sas``,
``none``) runs that scheme alone; ``compare`` runs every scheme listed in
the config over the same channel and noise draws.  The config is a YAML
mapping; see the README for the accepted keys.

Exit status: 0 success, 2 configuration error, 3 I/O error, 4 more than
10% solver failures at some SNR point (results are still written).
"""

import argparse
import csv
import io
import json
import math
import os
import platform
import sys
import tempfile
from dataclasses import asdict, dataclass, fields

import numpy as np
import scipy
import yaml

from .errors import ConfigurationError
from .sim import SCHEMES, ExperimentSpec, run_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FAILURES = 4

COLUMNS = ("snr_db", "scheme", "mean_total_mse", "mean_ber_s1",
           "mean_ber_s2", "trials", "failures", "mean_iters")
FORMATS = ("csv", "json")


class ConfigError(ConfigurationError):
    """Config problem tied to a field and, when known, a line (1-based)."""

    def __init__(self, message, field=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = (", ".join(where) + ": ") if where else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line


@dataclass(frozen=True)
class RunConfig:
    spec: ExperimentSpec
    out: str = "-"
    format: str = "csv"
    threads: int = 1
    verbosity: int = 0


# key -> (converter, ExperimentSpec field or None for run-level keys)
_INT = "int"
_FLOAT = "float"
_BOOL = "bool"
_STR = "str"
_SPEC_KEYS = {
    "N": _INT, "M": _INT, "streams": _STR, "trials": _INT,
    "symbols_per_trial": _INT, "seed": _INT, "reciprocal": _BOOL,
    "restarts": _INT, "max_iters": _INT, "rel_tol": _FLOAT,
}
_LIST_KEYS = ("snr_db", "schemes")
_RUN_KEYS = {"out": _STR, "format": _STR, "threads": _INT,
             "verbosity": _INT}
_ALL_KEYS = (set(_SPEC_KEYS) | set(_LIST_KEYS) | {"scheme"}
             | set(_RUN_KEYS))


def _convert(kind, value, key, line):
    try:
        if kind == _INT:
            if isinstance(value, bool) or (isinstance(value, float)
                                           and not value.is_integer()):
                raise ValueError
            return int(value)
        if kind == _FLOAT:
            if isinstance(value, bool):
                raise ValueError
            # YAML 1.1 reads "1e-6" as a string.
            return float(value)
        if kind == _BOOL:
            if not isinstance(value, bool):
                raise ValueError
            return value
        if not isinstance(value, str):
            raise ValueError
        return value
    except (TypeError, ValueError):
        raise ConfigError(f"expected {kind}, got {value!r}", key, line) \
            from None


def parse_config(text):
    """Parse and validate YAML config text.

    Raises
    ------
    ConfigError
        On malformed YAML, unknown keys, wrong types or an invalid
        combination (for example a channel-parallelization scheme with
        ``M != N``).
    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {exc}",
                          line=mark.line + 1 if mark else None) from None
    if root is None:
        data, lines = {}, {}
    elif not isinstance(root, yaml.MappingNode) or not isinstance(data,
                                                                  dict):
        raise ConfigError("top level must be a mapping", line=1)
    else:
        lines = {k.value: k.start_mark.line + 1 for k, _ in root.value}
    for key in data:
        if key not in _ALL_KEYS:
            raise ConfigError(f"unknown key (allowed: "
                              f"{', '.join(sorted(_ALL_KEYS))})",
                              str(key), lines.get(key))

    spec_kwargs = {}
    for key, kind in _SPEC_KEYS.items():
        if key in data:
            spec_kwargs[key] = _convert(kind, data[key], key, lines.get(key))
    if "snr_db" in data:
        raw = data["snr_db"]
        raw = raw if isinstance(raw, list) else [raw]
        spec_kwargs["snr_db"] = tuple(
            _convert(_FLOAT, v, "snr_db", lines.get("snr_db")) for v in raw)
    if "scheme" in data and "schemes" in data:
        raise ConfigError("give either 'scheme' or 'schemes', not both",
                          "scheme", lines.get("scheme"))
    if "scheme" in data:
        spec_kwargs["schemes"] = (
            _convert(_STR, data["scheme"], "scheme", lines.get("scheme")),)
    if "schemes" in data:
        raw = data["schemes"]
        if not isinstance(raw, list):
            raise ConfigError("expected a list", "schemes",
                              lines.get("schemes"))
        spec_kwargs["schemes"] = tuple(
            _convert(_STR, v, "schemes", lines.get("schemes")) for v in raw)

    run_kwargs = {}
    for key, kind in _RUN_KEYS.items():
        if key in data:
            run_kwargs[key] = _convert(kind, data[key], key, lines.get(key))
    return _build(spec_kwargs, run_kwargs, lines)


def _build(spec_kwargs, run_kwargs, lines=None):
    lines = lines or {}
    try:
        spec = ExperimentSpec(**spec_kwargs)
    except ConfigError:
        raise
    except ConfigurationError as exc:
        key = _guess_field(str(exc))
        if key == "schemes" and "scheme" in lines:
            key = "scheme"
        raise ConfigError(str(exc), key, lines.get(key)) from None
    cfg = RunConfig(spec=spec, **run_kwargs)
    if cfg.format not in FORMATS:
        raise ConfigError(f"must be one of {FORMATS}", "format",
                          lines.get("format"))
    if cfg.threads < 1:
        raise ConfigError("must be >= 1", "threads", lines.get("threads"))
    return cfg


def _guess_field(message):
    for name in ("scheme", "snr_db", "streams", "trials", "seed",
                 "symbols_per_trial", "N", "M"):
        if name in message:
            return "schemes" if name == "scheme" else name
    return None


def emit(cfg):
    """Canonical YAML text for `cfg`; ``parse_config(emit(c)) == c``."""
    spec = cfg.spec
    data = {
        "N": spec.N, "M": spec.M, "snr_db": list(spec.snr_db),
        "schemes": list(spec.schemes), "streams": spec.streams,
        "trials": spec.trials, "symbols_per_trial": spec.symbols_per_trial,
        "seed": spec.seed, "reciprocal": spec.reciprocal,
        "restarts": spec.restarts, "max_iters": spec.max_iters,
        "rel_tol": spec.rel_tol, "out": cfg.out, "format": cfg.format,
        "threads": cfg.threads, "verbosity": cfg.verbosity,
    }
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)


def _fmt(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if math.isnan(value):
        return "nan"
    return format(float(value), ".12g")


def result_rows(sweep):
    """Rows in grid order: per SNR point, every scheme in config order."""
    rows = []
    for p in sweep.points:
        rows.append({"snr_db": p.snr_db, "scheme": p.scheme,
                     "mean_total_mse": p.mean_total_mse,
                     "mean_ber_s1": p.mean_ber_s1,
                     "mean_ber_s2": p.mean_ber_s2, "trials": p.trials,
                     "failures": p.failures, "mean_iters": p.mean_iters})
    return rows


def render(sweep, fmt):
    rows = result_rows(sweep)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in COLUMNS])
        return buf.getvalue()

    def jsonable(v):
        if isinstance(v, str):
            return v
        text = _fmt(v)
        return None if text == "nan" else json.loads(text)

    doc = {"columns": list(COLUMNS),
           "rows": [{c: jsonable(r[c]) for c in COLUMNS} for r in rows]}
    return json.dumps(doc, indent=2) + "\n"


def _metadata(cfg, sweep):
    try:
        from importlib.metadata import version
        pkg_version = version("artifact")
    except Exception:
        pkg_version = "unknown"
    return {
        "seed": cfg.spec.seed,
        "versions": {"package": pkg_version,
                     "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "pyyaml": yaml.__version__},
        "flagged_points": [[p.snr_db, p.scheme] for p in sweep.points
                           if p.flagged],
        "config": emit(cfg),
    }


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-",
                               suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(cfg, stdout=None):
    """Run the sweep in `cfg` and write its results.

    Writes the table to ``cfg.out`` (stdout for ``"-"``) and, for a file
    target, a metadata record next to it (``<out>.meta.json``).

    Returns
    -------
    int
        Exit status.
    """
    stdout = sys.stdout if stdout is None else stdout
    sweep = run_sweep(cfg.spec, threads=cfg.threads)
    text = render(sweep, cfg.format)
    meta = json.dumps(_metadata(cfg, sweep), indent=2) + "\n"
    try:
        if cfg.out == "-":
            stdout.write(text)
        else:
            _atomic_write(cfg.out, text)
            _atomic_write(cfg.out + ".meta.json", meta)
    except OSError as exc:
        print(f"error: cannot write results: {exc}", file=sys.stderr)
        return EXIT_IO
    if sweep.flagged:
        bad = ", ".join(f"{p.scheme}@{p.snr_db:g}dB" for p in sweep.points
                        if p.flagged)
        print(f"error: more than 10% solver failures at {bad}",
              file=sys.stderr)
        return EXIT_FAILURES
    if cfg.verbosity > 0:
        print(f"wrote {len(sweep.points)} rows", file=sys.stderr)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="twrelay",
        description="Monte Carlo sweeps of two-way relay precoding schemes.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SCHEMES + ("compare",):
        p = sub.add_parser(name, help=("run every scheme in the config on "
                                       "shared draws" if name == "compare"
                                       else f"run the {name} scheme"))
        p.add_argument("--config", help="YAML sweep configuration")
        p.add_argument("--seed", type=int, help="master seed (u64)")
        p.add_argument("--out", help="output path, '-' for stdout")
        p.add_argument("--format", choices=FORMATS)
        p.add_argument("--threads", type=int, help="worker processes")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _load(args):
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            cfg = parse_config(f.read())
    else:
        cfg = parse_config("")
    spec_changes = {}
    if args.command != "compare":
        spec_changes["schemes"] = (args.command,)
        if args.command == "sas" and not args.config:
            spec_changes["streams"] = "single"
    if args.seed is not None:
        spec_changes["seed"] = args.seed
    run_changes = {}
    if args.out is not None:
        run_changes["out"] = args.out
    if args.format is not None:
        run_changes["format"] = args.format
    if args.threads is not None:
        run_changes["threads"] = args.threads
    if args.verbose:
        run_changes["verbosity"] = args.verbose
    spec_kwargs = {f.name: getattr(cfg.spec, f.name)
                   for f in fields(ExperimentSpec)}
    spec_kwargs.update(spec_changes)
    run_kwargs = {k: v for k, v in asdict(cfg).items() if k != "spec"}
    run_kwargs.update(run_changes)
    return _build(spec_kwargs, run_kwargs)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
