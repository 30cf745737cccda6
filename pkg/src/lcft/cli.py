"""Command-line entry point: ``lcft <subcommand> [options]``.

Structured configs are TOML files with a ``schema_version`` key. Every JSON output
embeds the resolved config, defaults included, under ``"config"``. Errors are JSON
objects on stderr; exit code 1 means invalid input, 2 a numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, fields, is_dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .errors import ConfigError, LcftError

SCHEMA_VERSION = 1
SUBCOMMANDS = ("green", "gmc", "correlator", "beltrami", "ward", "virasoro", "xcheck")

# sample-count multiplier and solver tolerance per profile
PROFILES = {
    "strict": {"samples": 4.0, "tol": 1e-12},
    "default": {"samples": 1.0, "tol": 1e-10},
    "fast": {"samples": 0.1, "tol": 1e-8},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# --------------------------------------------------------------------------- serialization


def _plain(obj):
    """JSON-ready copy: complex -> [re, im], numpy scalars and arrays -> Python."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _dump(payload, out=None):
    text = json.dumps(_plain(payload), indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


# --------------------------------------------------------------------------- config


def load_config(path, allowed):
    """Read a TOML config and check its schema version and keys."""
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    version = data.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {', '.join(unknown)}")
    return data


def parse_metric(spec):
    """'round', 'equator', 'flat', 'grid:<path>', 'closed_form:<sigma>' or a config table."""
    if isinstance(spec, dict):
        return dict(spec)
    spec = spec or "round"
    kind, _, rest = spec.partition(":")
    if kind == "grid":
        return {"kind": "grid", "grid_path": rest}
    if kind == "closed_form":
        return {"kind": "closed_form", "sigma": rest}
    if rest:
        raise ConfigError(f"metric spec {spec!r} takes no argument")
    return {"kind": kind}


def _metric(table):
    from . import geometry as geo

    return geo.metric_from_config(table)


def _point(text):
    try:
        return complex(text.replace(" ", ""))
    except ValueError as exc:
        raise ConfigError(f"cannot read a complex number from {text!r}") from exc


def _points(text):
    return [_point(t) for t in text.split(",") if t.strip()] if text else []


def _samples(n, args):
    return max(2, int(round(n * PROFILES[args.tolerance_profile]["samples"])))


def _echo(args, **extra):
    cfg = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "subcommand": args.command,
        "seed": args.seed,
        "threads": args.threads,
        "deterministic": args.deterministic,
        "tolerance_profile": args.tolerance_profile,
    }
    cfg.update(extra)
    return cfg


# --------------------------------------------------------------------------- subcommands


def cmd_green(args):
    from . import field as fld

    cfg = load_config(args.config, {"metric", "x", "y", "method", "n_terms"})
    metric = parse_metric(args.metric or cfg.get("metric"))
    x = _point(args.x) if args.x else complex(*cfg.get("x", (0.0, 0.0)))
    y = _point(args.y) if args.y else complex(*cfg.get("y", (0.5, 0.0)))
    method = args.method or cfg.get("method")
    n_terms = cfg.get("n_terms")
    value = fld.green_function(_metric(metric), x, y, method=method, n_terms=n_terms)
    _dump({"value": value, "config": _echo(args, metric=metric, x=x, y=y, method=method, n_terms=n_terms)}, args.out)


def cmd_gmc(args):
    from . import field as fld

    cfg = load_config(args.config, {"metric", "gamma", "samples", "n_modes", "n_r", "n_theta", "balls"})
    metric = parse_metric(args.metric or cfg.get("metric"))
    gamma = args.gamma if args.gamma is not None else cfg.get("gamma", 1.0)
    samples = _samples(args.samples or cfg.get("samples", 1000), args)
    n_modes = cfg.get("n_modes", 400)
    n_r, n_theta = cfg.get("n_r", 32), cfg.get("n_theta", 64)
    balls = cfg.get("balls", [])
    m = _metric(metric)
    fld._check_gamma(gamma)
    grid = fld.build_chaos_grid(m, n_r, n_theta)
    basis = fld.build_basis(m, n_modes)
    rho = fld.rho_factor(m, grid.centers, gamma)
    W = [grid.volumes * rho]
    for b in balls:
        center = complex(b["x_re"], b.get("x_im", 0.0))
        inside = np.abs(grid.centers - center) < b["radius"]
        W.append(grid.volumes * rho * inside)
    masses = fld.ChaosSampler(basis, grid).integrals(gamma, np.array(W), args.seed, 0, samples)
    mean = masses.mean(axis=1)
    se = masses.std(axis=1, ddof=1) / np.sqrt(samples)
    summary = {
        "total_mass_mean": mean[0],
        "total_mass_se": se[0],
        "ball_mass_mean": mean[1:],
        "ball_mass_se": se[1:],
        "volume": float(np.sum(grid.volumes * rho)),
        "config": _echo(args, metric=metric, gamma=gamma, samples=samples, n_modes=n_modes,
                        n_r=n_r, n_theta=n_theta, balls=balls),
    }
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "total_mass"] + [f"ball_{i}" for i in range(len(balls))])
            for k in range(samples):
                w.writerow([k] + [repr(float(v)) for v in masses[:, k]])
        _dump(summary, str(args.out) + ".json")
    else:
        _dump(summary)


def correlator_config(cfg, args):
    from . import correlator as C

    ins = cfg.get("insertions")
    if not ins:
        raise ConfigError("correlator config needs a non-empty insertions list")
    try:
        insertions = tuple(C.VertexInsertion(complex(i["x_re"], i.get("x_im", 0.0)), float(i["alpha"])) for i in ins)
    except KeyError as exc:
        raise ConfigError(f"insertion entry lacks {exc}") from exc
    z_mode = cfg.get("z_mode", "ratio")
    if z_mode == "ratio":
        zm = C.RatioCancel()
    elif z_mode == "opaque":
        zm = C.OpaqueConstant(float(cfg["z_value"]))
    else:
        raise ConfigError(f"unknown z_mode {z_mode!r}")
    num = C.NumericsConfig(**cfg.get("numerics", {}))
    metric = parse_metric(cfg.get("metric", "round"))
    return C.CorrelatorConfig(
        gamma=float(cfg.get("gamma", 0.8)),
        insertions=insertions,
        mu=float(cfg.get("mu", 1.0)),
        metric=_metric(metric),
        samples=_samples(int(cfg.get("samples", 10_000)), args),
        z_mode=zm,
        numerics=num,
    ), metric


def cmd_correlator(args):
    from . import correlator as C

    keys = {"gamma", "mu", "insertions", "metric", "samples", "z_mode", "z_value", "numerics"}
    cfg = load_config(args.config, keys)
    ccfg, metric = correlator_config(cfg, args)
    est = C.moment_estimate(ccfg, args.seed)
    out = est.to_json()
    echo = {
        "gamma": ccfg.gamma,
        "mu": ccfg.mu,
        "insertions": [{"x_re": i.x.real, "x_im": i.x.imag, "alpha": i.alpha} for i in ccfg.insertions],
        "metric": metric,
        "samples": ccfg.samples,
        "z_mode": cfg.get("z_mode", "ratio"),
        "numerics": asdict(ccfg.numerics),
    }
    if isinstance(ccfg.z_mode, C.OpaqueConstant):
        echo["z_value"] = ccfg.z_mode.value
    out["config"] = _echo(args, **echo)
    _dump(out, args.out_json)


def cmd_beltrami(args):
    from . import beltrami as bel
    from .gridio import read_grid, write_grid

    metric = parse_metric(args.metric)
    hat = _metric(metric)
    channels, L = read_grid(args.perturbation)
    n = channels.shape[-1]
    if channels.shape[-2] != n:
        raise ConfigError("perturbation grid must be square")
    grid = bel.BeltramiGrid.from_half_width(n, L)
    if channels.shape[0] == 2:
        f = bel.traceless_from_upper_zz(channels[0] + 1j * channels[1])
    elif channels.shape[0] == 3:
        f = channels
    else:
        raise ConfigError("perturbation file needs 2 channels (Re, Im of f^zz) or 3 (f11, f12, f22)")
    coef = bel.coefficient_from_metric(hat, f, args.eps, grid)
    sol = bel.solve(coef, tol=PROFILES[args.tolerance_profile]["tol"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_grid(out / "u.grid", np.stack([sol.u.real, sol.u.imag]), L)
    write_grid(out / "phi.grid", sol.phi, L)
    res = sol.dbar_u - coef.mu * (1 + sol.du)
    write_grid(out / "residual.grid", np.stack([res.real, res.imag]), L)
    report = sol.report()
    report["config"] = _echo(args, metric=metric, perturbation=str(args.perturbation), eps=args.eps,
                             grid_n=n, half_width=L, tol=PROFILES[args.tolerance_profile]["tol"])
    _dump(report, out / "report.json")
    _dump(report)


def cmd_ward(args):
    from . import symbolic as sym

    x = _points(args.vertices)
    N = len(x) if x else int(args.n_vertices or 0)
    if N < 1:
        raise ConfigError("give vertex positions with --vertices or a count with --n-vertices")
    corr = sym.ward_correlation(args.n, N, mode=args.mode, form=args.form)
    if args.emit == "latex":
        print(corr.to_latex())
        return
    if args.emit == "json":
        out = corr.to_json()
        out["config"] = _echo(args, n=args.n, vertices=x or N, mode=args.mode, form=args.form)
        _dump(out, args.out)
        return
    if not x:
        raise ConfigError("--emit eval needs vertex positions")
    z = _points(args.z)
    if len(z) != args.n:
        raise ConfigError(f"--z needs {args.n} points")
    a = _points(args.base_coeffs) if args.base_coeffs else [0.0] * N
    weights = [float(w) for w in args.weights.split(",")] if args.weights else [1.0] * N
    metric = parse_metric(args.metric) if args.mode == sym.SYMBOLIC else None
    value = sym.evaluate(corr, dict(enumerate(z, start=1)), x, sym.exponential_base(a, x),
                         metric=_metric(metric) if metric else None, c=args.c, weights=weights)
    _dump({"value": value, "config": _echo(args, n=args.n, vertices=x, z=z, mode=args.mode, form=args.form,
                                          c=args.c, weights=weights, base_coeffs=a, metric=metric)}, args.out)


def cmd_virasoro(args):
    from . import virasoro as V

    table = V.virasoro_table(args.max_mode)
    if args.emit == "json":
        _dump({"rows": [r.to_json() for r in table], "all_equal": all(r.equal for r in table),
               "config": _echo(args, max_mode=args.max_mode)}, args.out)
        return
    lines = [f"{'n':>4} {'m':>4}  {'equal':<6} central"]
    for r in table:
        lines.append(f"{r.n:>4} {r.m:>4}  {str(r.equal).lower():<6} {V._poly_str(r.central)}")
    lines.append(f"all equal: {str(all(r.equal for r in table)).lower()}")
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def xcheck_config(cfg, args):
    from . import correlator as C
    from . import xcheck as X

    kw = {}
    for key in ("gamma", "samples", "eps", "dx", "grid_n", "grid_half_width", "quad_r", "quad_theta"):
        if key in cfg:
            kw[key] = cfg[key]
    if "insertions" in cfg:
        kw["insertions"] = tuple((complex(i["x_re"], i.get("x_im", 0.0)), float(i["alpha"])) for i in cfg["insertions"])
    for key in ("traceless", "trace"):
        if key in cfg:
            b = cfg[key]
            kw[key] = X.Bump(complex(b.get("center_re", 0.0), b.get("center_im", 0.0)), float(b.get("radius", 0.5)),
                             complex(b.get("a0_re", 0.0), b.get("a0_im", 0.0)),
                             complex(b.get("a1_re", 0.0), b.get("a1_im", 0.0)))
    if "numerics" in cfg:
        kw["numerics"] = C.NumericsConfig(**cfg["numerics"])
    xc = X.XCheckConfig(**kw)
    return X.XCheckConfig(**{**kw, "samples": _samples(xc.samples, args)})


def cmd_xcheck(args):
    from . import xcheck as X

    keys = {"gamma", "insertions", "traceless", "trace", "samples", "eps", "dx", "grid_n",
            "grid_half_width", "quad_r", "quad_theta", "numerics"}
    xc = xcheck_config(load_config(args.config, keys), args)
    rep = X.run(xc, args.seed)
    out = rep.to_json()
    if args.deterministic:
        out["details"].pop("seconds", None)
    out["pass"] = rep.sigma_distance < 3
    out["config"] = _echo(args, **asdict(xc))
    _dump(out, args.out)


# --------------------------------------------------------------------------- parser


def build_parser():
    def globals_parser(top):
        # subcommand copies must not reset flags given before the subcommand
        d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
        gp = _Parser(add_help=False)
        g = gp.add_argument_group("global options")
        g.add_argument("--seed", type=int, default=d(0), help="master seed (u64)")
        g.add_argument("--threads", type=int, default=d(1), help="worker count (results are thread-count independent)")
        g.add_argument("--deterministic", action="store_true", default=d(False), help="sequential reduction, no timing fields")
        g.add_argument("--tolerance-profile", choices=tuple(PROFILES), default=d("default"))
        return gp

    common = globals_parser(False)
    p = _Parser(prog="lcft", description="Liouville stress-energy correlations on the sphere.", parents=[globals_parser(True)])
    p.add_argument("--version", action="version", version=f"lcft {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("green", parents=[common], help="Green function G_g(x, y)")
    s.add_argument("--config")
    s.add_argument("--metric")
    s.add_argument("--x")
    s.add_argument("--y")
    s.add_argument("--method", choices=("closed", "double_integral", "eigen"))
    s.add_argument("--out")
    s.set_defaults(func=cmd_green)

    s = sub.add_parser("gmc", parents=[common], help="chaos masses: CSV per sample plus a JSON sidecar")
    s.add_argument("--config")
    s.add_argument("--gamma", type=float)
    s.add_argument("--metric")
    s.add_argument("--samples", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gmc)

    s = sub.add_parser("correlator", parents=[common], help="Monte Carlo vertex correlation")
    s.add_argument("--config", required=True)
    s.add_argument("--out", dest="out_json")
    s.set_defaults(func=cmd_correlator)

    s = sub.add_parser("beltrami", parents=[common], help="solve the Beltrami decomposition of a perturbed metric")
    s.add_argument("--metric", default="round")
    s.add_argument("--perturbation", required=True)
    s.add_argument("--eps", type=float, default=1.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_beltrami)

    s = sub.add_parser("ward", parents=[common], help="symbolic Ward recursion")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--vertices", help="comma-separated vertex positions")
    s.add_argument("--n-vertices", type=int)
    s.add_argument("--mode", choices=("flat", "symbolic"), default="flat")
    s.add_argument("--form", choices=("T", "raw"), default="T")
    s.add_argument("--emit", choices=("latex", "json", "eval"), default="json")
    s.add_argument("--z", help="comma-separated T insertion points for --emit eval")
    s.add_argument("--c", type=float, default=25.0)
    s.add_argument("--weights")
    s.add_argument("--base-coeffs", help="a_j of the test base F = exp(sum a_j x_j)")
    s.add_argument("--metric", default="round")
    s.add_argument("--out")
    s.set_defaults(func=cmd_ward)

    s = sub.add_parser("virasoro", parents=[common], help="commutator table of the contour modes")
    s.add_argument("--max-mode", type=int, default=5)
    s.add_argument("--emit", choices=("table", "json"), default="table")
    s.add_argument("--out")
    s.set_defaults(func=cmd_virasoro)

    s = sub.add_parser("xcheck", parents=[common], help="metric derivative of the MC correlator against the Ward prediction")
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_xcheck)
    return p


def _error(payload):
    print(json.dumps(_plain(payload), sort_keys=True), file=sys.stderr)


def run(argv=None):
    """Execute one command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        _error({"error": "UsageError", "message": str(exc).splitlines()[-1]})
        return 1
    try:
        args.func(args)
    except LcftError as exc:
        _error(exc.to_json())
        return exc.exit_code
    except (TypeError, ValueError, KeyError) as exc:
        # malformed config values that slipped past the schema check
        _error({"error": "ConfigError", "message": str(exc)})
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
