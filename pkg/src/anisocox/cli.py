"""Command-line entry point ``anisocox``.

Exit codes: 0 success, 1 usage or input-format error, 2 numerical or
validation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .covariance import ModelSpec
from .envelope import StatisticSpec, run_get
from .geometry import MultiTypePattern, Window
from .mc import default_workers, run_mc
from .palmfit import FitConfig, fit_pipeline, stage_one
from .simulate import SimConfig, simulate_lgcp
from .summaries import RadialGrid, estimate_G, estimate_pcf_iso, estimate_sector_k
from .validity import check_conditions

log = logging.getLogger("anisocox")

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _load(loader, path, what):
    try:
        return loader(path)
    except FileNotFoundError:
        raise UsageError(f"{what} file not found: {path}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"malformed {what} {path}: {exc}") from None


def _window(args):
    if getattr(args, "window", None):
        return _load(Window.from_json, args.window, "window")
    return Window.unit()


def _pattern(args, path):
    types = None
    if getattr(args, "types", None):
        try:
            types = [int(t) for t in args.types.split(",")]
        except ValueError:
            raise UsageError(f"--types must be comma-separated integers, got {args.types!r}") from None
    return _load(lambda p: MultiTypePattern.from_csv(p, _window(args), types), path, "pattern CSV")


def _type_index(pattern, t, flag):
    try:
        return pattern.type_ids.index(t)
    except ValueError:
        raise UsageError(f"{flag}: type {t} not present (types {pattern.type_ids})") from None


def _out_dir(args):
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(out, name, text):
    if out is None:
        sys.stdout.write(text)
    else:
        (out / name).write_text(text)


# --------------------------------------------------------------------------
# subcommands


def cmd_validate(args):
    model = _load(ModelSpec.from_json, args.model, "model JSON")
    report = check_conditions(model, args.tol)
    out = _out_dir(args)
    _emit(out, "validity.json", _dump(report.to_dict()))
    return EXIT_OK if report.all_pass else EXIT_FAIL


def cmd_simulate(args):
    model = _load(ModelSpec.from_json, args.model, "model JSON")
    try:
        cfg = SimConfig(args.grid, args.grid, args.oversize, args.seed, args.method, _window(args))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args)
    if out is None and args.reps != 1:
        raise UsageError("--reps > 1 needs --out")
    for r in range(args.reps):
        pattern, fld = simulate_lgcp(model, cfg, r)
        if out is None:
            _write_pattern_csv(pattern, sys.stdout)
        else:
            pattern.to_csv(out / f"pattern_{r:04d}.csv")
            if args.dump_field:
                fld.dump(out / f"field_{r:04d}.bin")
    return EXIT_OK


def _write_pattern_csv(pattern, fh):
    fh.write("type,x,y\n")
    for c in pattern.components:
        for x, y in c.points:
            fh.write(f"{c.type_id},{float(x)!r},{float(y)!r}\n")


def cmd_summarize(args):
    pattern = _pattern(args, args.pattern)
    p = _type_index(pattern, args.p, "--p")
    q = _type_index(pattern, args.q if args.q is not None else args.p, "--q")
    a, b, w = pattern[p], pattern[q], pattern.window
    if args.stat == "pcf":
        r = np.linspace(args.rmin, args.rmax, args.n)
        h = args.h if args.h is not None else 0.15 / math.sqrt(max(a.n, 1) / w.area)
        if r[0] <= h:
            raise UsageError(f"--rmin must exceed the bandwidth {h:g}")
        curve = estimate_pcf_iso(a, b, w, RadialGrid(r, h))
    elif args.stat == "sectork":
        phis = np.arange(args.n_phi + 1) * math.pi / args.n_phi
        curve = estimate_sector_k(a, b, w, args.r, phis, args.h_phi)
    else:
        curve = estimate_G(a, b, w, np.linspace(0.0, args.rmax, args.n))
    curve.meta["type_pair"] = [args.p, args.q if args.q is not None else args.p]
    out = _out_dir(args)
    if out is None:
        sys.stdout.write("abscissa,value\n")
        for x, v in zip(curve.abscissa, curve.values):
            sys.stdout.write(f"{float(x)!r},{float(v)!r}\n")
    else:
        curve.to_csv(out / f"{args.stat}.csv")
        (out / f"{args.stat}.json").write_text(curve.meta_json())
    return EXIT_OK


def _fit_config(args):
    d = {}
    if args.config:
        d = _load(lambda p: json.loads(Path(p).read_text()), args.config, "fit config JSON")
        if not isinstance(d, dict):
            raise UsageError("fit config must be a JSON object")
    if args.isotropic:
        d["isotropic"] = True
    if args.fix_nu is not None:
        d["fix_nu"] = args.fix_nu
    if args.R is not None:
        d["R"] = args.R
    try:
        return FitConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid fit configuration: {exc}") from None


def cmd_fit(args):
    cfg = _fit_config(args)
    pattern = _pattern(args, args.pattern)
    for c in pattern.components:
        if c.n < 2:
            log.error("type %d has %d point(s); fitting needs at least two per type", c.type_id, c.n)
            return EXIT_FAIL
    out = _out_dir(args)
    if args.stage == "anisotropy":
        _, info = stage_one(pattern, cfg)
        res = {f"{p + 1},{q + 1}": v for (p, q), v in info.items()}
        _emit(out, "anisotropy.json", _dump(res))
        return EXIT_OK
    fit = fit_pipeline(pattern, cfg)
    _emit(out, "fit.json", _dump(fit.to_dict()))
    return EXIT_OK


def cmd_envelope(args):
    pattern = _pattern(args, args.pattern)
    model = _load(ModelSpec.from_json, args.model, "model JSON")
    if model.P != pattern.P:
        raise UsageError(f"model has P={model.P} but the pattern has {pattern.P} types")
    p = _type_index(pattern, args.p, "--p")
    q = _type_index(pattern, args.q if args.q is not None else args.p, "--q")
    kind = "sector_k" if args.stat == "sectork" else "G"
    spec = StatisticSpec(kind, p, q, r=args.r, r_max=args.rmax)
    try:
        sim_cfg = SimConfig(args.grid, args.grid, args.oversize, args.seed, "auto", pattern.window)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.M < 1:
        raise UsageError("--M must be at least 1")
    res = run_get(pattern, model, spec, args.M, args.alpha, args.seed, sim_cfg)
    out = _out_dir(args)
    _emit(out, "envelope.json", _dump(res.to_dict()))
    if out is not None:
        res.to_csv(out / "envelope.csv")
    return EXIT_OK


def cmd_mc(args):
    model = _load(ModelSpec.from_json, args.model, "model JSON")
    cfg = _fit_config(args)
    try:
        sim_cfg = SimConfig(args.grid, args.grid, args.oversize, args.seed, "auto", _window(args))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.out is None:
        raise UsageError("mc needs --out for the study directory")
    out = _out_dir(args)
    workers = args.workers or default_workers()
    study = run_mc(model, args.reps, cfg, args.seed, sim_cfg, out, workers)
    log.info("study finished: %d ok, %d failed", study.summary["n_ok"], study.summary["n_failed"])
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    # global options are accepted before or after the subcommand
    glob = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    glob.add_argument("--log-level", help="logging level (env ANISOCOX_LOG)")
    glob.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    parser = _Parser(prog="anisocox", description="Multivariate anisotropic LGCP toolkit", parents=[glob])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **k: _add(*a, parents=[glob], **k)

    def common(sp, out=True):
        sp.add_argument("--window", help="window JSON {xmin,xmax,ymin,ymax}; default unit square")
        if out:
            sp.add_argument("--out", help="output directory (default: stdout)")

    sp = sub.add_parser("validate", help="check the validity conditions of a model")
    sp.add_argument("model")
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("simulate", help="simulate LGCP patterns from a model")
    sp.add_argument("model")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--grid", type=int, default=256)
    sp.add_argument("--oversize", type=int, default=4)
    sp.add_argument("--method", choices=["auto", "spectral", "dense"], default="auto")
    sp.add_argument("--reps", type=int, default=1)
    sp.add_argument("--dump-field", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("summarize", help="estimate a summary curve")
    sp.add_argument("pattern")
    sp.add_argument("--stat", choices=["pcf", "sectork", "G"], required=True)
    sp.add_argument("--p", type=int, default=1, help="first type id")
    sp.add_argument("--q", type=int, default=None, help="second type id (default: --p)")
    sp.add_argument("--r", type=float, default=0.05, help="sector-K radius")
    sp.add_argument("--n-phi", type=int, default=60)
    sp.add_argument("--h-phi", type=float, default=math.pi / 8)
    sp.add_argument("--rmin", type=float, default=0.01)
    sp.add_argument("--rmax", type=float, default=0.1)
    sp.add_argument("--n", type=int, default=50)
    sp.add_argument("--h", type=float, default=None, help="pcf bandwidth")
    sp.add_argument("--types", help="comma-separated type ids in order")
    common(sp)
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("fit", help="two-stage model fit")
    sp.add_argument("pattern")
    sp.add_argument("--config", help="fit configuration JSON")
    sp.add_argument("--isotropic", action="store_true")
    sp.add_argument("--fix-nu", type=float, default=None)
    sp.add_argument("--R", type=float, default=None)
    sp.add_argument("--stage", choices=["all", "anisotropy"], default="all")
    sp.add_argument("--types", help="comma-separated type ids in order")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("envelope", help="global envelope test against a model")
    sp.add_argument("pattern")
    sp.add_argument("model")
    sp.add_argument("--stat", choices=["sectork", "G"], default="sectork")
    sp.add_argument("--p", type=int, default=1)
    sp.add_argument("--q", type=int, default=None)
    sp.add_argument("--r", type=float, default=0.05)
    sp.add_argument("--rmax", type=float, default=0.1)
    sp.add_argument("--M", type=int, default=499)
    sp.add_argument("--alpha", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--grid", type=int, default=256)
    sp.add_argument("--oversize", type=int, default=4)
    sp.add_argument("--types", help="comma-separated type ids in order")
    common(sp)
    sp.set_defaults(func=cmd_envelope)

    sp = sub.add_parser("mc", help="Monte Carlo simulate-and-fit study")
    sp.add_argument("model")
    sp.add_argument("--reps", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--config", help="fit configuration JSON")
    sp.add_argument("--isotropic", action="store_true")
    sp.add_argument("--fix-nu", type=float, default=None)
    sp.add_argument("--R", type=float, default=None)
    sp.add_argument("--grid", type=int, default=256)
    sp.add_argument("--oversize", type=int, default=4)
    common(sp)
    sp.set_defaults(func=cmd_mc)
    return parser


def _config_digest(args):
    skip = {"func", "out", "log_level", "workers"}
    d = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()


def _inputs(args):
    paths = {}
    for key in ("model", "pattern", "config", "window"):
        v = getattr(args, key, None)
        if v and os.path.isfile(v):
            paths[key] = {"path": os.path.basename(v), "sha256": _sha256(v)}
    return paths


def _manifest(args, t0, code):
    return {
        "subcommand": args.command,
        "config_digest": _config_digest(args),
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "inputs": _inputs(args),
        "exit_code": code,
        "wall_time_s": round(time.perf_counter() - t0, 3),
    }


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.log_level = getattr(args, "log_level", None)
    args.workers = getattr(args, "workers", None)
    level = args.log_level or os.environ.get("ANISOCOX_LOG", "WARNING")
    try:
        logging.basicConfig(level=level.upper(), format="%(levelname)s %(name)s: %(message)s", force=True)
    except ValueError:
        parser.error(f"unknown log level {level!r}")
    if not sys.warnoptions:
        warnings.simplefilter("default")
        logging.captureWarnings(True)
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        code = EXIT_USAGE
    except (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        code = EXIT_FAIL
    manifest = _manifest(args, t0, code)
    out = getattr(args, "out", None)
    if out is not None and os.path.isdir(out):
        Path(out, "manifest.json").write_text(_dump(manifest))
    else:
        log.info("manifest: %s", json.dumps(manifest, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
