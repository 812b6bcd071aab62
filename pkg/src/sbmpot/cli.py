"""Command line entry point: `sbmpot {simulate,estimate,martin,verify,audit}`.

Configuration comes from an optional file (see `parse_config`) overlaid with
command line flags. Every run writes `manifest.json` with the fully resolved
configuration next to its CSV/JSON outputs; `--config manifest.json` replays it.
"""
import argparse
import csv
import json
import os
import sys
import time
from importlib.metadata import PackageNotFoundError, version

import numpy as np

from .bernstein import RelativisticStable, Stable, StableSum, check_scaling, check_transience
from .errors import ConfigError, DomainSyntaxError, NotFound, SbmError
from .geometry import Domain
from .kernels import ProcessModel, ball_expected_exit, comparability_radius
from .simulate import as_stream

FORMAT_VERSION = 1
OUTPUT_ENV = "SBMPOT_OUTPUT_DIR"
COMMANDS = ("simulate", "estimate", "martin", "verify", "audit")
SUITE_NAMES = ("mean-value", "bhp", "oscillation", "martin-oscillation", "roundtrip")

DEFAULTS = {
    "process": {"kind": "stable", "alpha": 1.0},
    "d": 2,
    "domain": None,
    "seed": 0,
    "workers": None,
    "output_dir": None,
    "backend": None,
    "simulate": {"at": None, "n_paths": 1000, "method": "auto", "dt": 1e-3},
    "estimate": {"quantity": "exit-time", "at": None, "n_paths": 20000, "method": "auto", "dt": 1e-3,
                 "y": None, "charge": {"kind": "annulus", "r1": 1.0, "r2": 2.0, "value": 1.0},
                 "function": "exit-time", "rho": 0.3},
    "martin": {"mode": "kernel", "x": None, "z": None, "n_paths": 40000, "function": "one",
               "n_stages": 5, "n_bins": 8},
    "verify": {"suite": "all", "budget": 1.0},
    "audit": {},
}


def version_string():
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


# config files

def _value(text, where):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if text.startswith(("[", "{", '"')):
            raise ConfigError(f"{where}: malformed value {text!r}")
        return text


def parse_config(text, name="<config>"):
    """Flat `key = value` lines; `[section]` opens one nesting level.

    Values are JSON when they parse as JSON and bare strings otherwise. Dotted
    keys (`process.alpha = 1.5`) address a section directly. `#` starts a
    comment line. A document that is a JSON object is taken as-is, and a run
    manifest contributes its `config` entry.
    """
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{name}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}")
        return obj.get("config", obj) if "format_version" in obj else obj
    out = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        where = f"{name}:{lineno}"
        if line.startswith("["):
            if not line.endswith("]") or not line[1:-1].strip():
                raise ConfigError(f"{where}: bad section header {line!r}")
            section = line[1:-1].strip()
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value'")
        key, val = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{where}: empty key")
        path = ([section] if section else []) + key.split(".")
        if len(path) > 2:
            raise ConfigError(f"{where}: at most one nesting level is allowed, got {'.'.join(path)}")
        _assign(out, path, _value(val, where))
    return out


def _assign(cfg, path, value):
    if len(path) == 1:
        cfg[path[0]] = value
    else:
        sec = cfg.setdefault(path[0], {})
        if not isinstance(sec, dict):
            raise ConfigError(f"{path[0]} is a value, not a section")
        sec[path[1]] = value


def merge(base, over):
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in base.items()}
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k].update(v)
        else:
            out[k] = v
    return out


# building objects from the resolved config

def build_spec(p):
    kind = p.get("kind", "stable")
    if kind == "stable":
        return Stable(p.get("alpha", 1.0))
    if kind == "stable_sum":
        return StableSum(p["terms"])
    if kind == "relativistic":
        return RelativisticStable(p.get("alpha", 1.0), p["m"])
    if kind == "log":
        # synthetic exponent for the audit only
        return lambda lam: np.log1p(np.asarray(lam, dtype=float))
    raise ConfigError(f"unknown process kind {kind!r}")


def build_model(cfg):
    spec = build_spec(cfg["process"])
    if callable(spec) and not hasattr(spec, "kind"):
        raise ConfigError("the synthetic 'log' process is only available to audit")
    return ProcessModel(int(cfg["d"]), spec)


def build_charge(c):
    from .potential import OuterCharge
    kind = c.get("kind")
    if kind == "annulus":
        return OuterCharge.annulus(c["r1"], c["r2"], c.get("value", 1.0))
    if kind == "ball":
        return OuterCharge.ball_indicator(c["center"], c["radius"], c.get("value", 1.0))
    if kind == "point":
        return OuterCharge.point(c["z"], c.get("mass", 1.0))
    if kind == "zero":
        return OuterCharge.zero()
    raise ConfigError(f"unknown charge kind {kind!r}")


def _point(v, d, what):
    if v is None:
        return None
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size != d:
        raise ConfigError(f"{what} needs {d} coordinates, got {arr.size}")
    return arr


# commands

def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def cmd_simulate(cfg, out):
    from .simulate import exit_sample_timestep, exit_sample_wos
    model = build_model(cfg)
    D = Domain.parse(cfg["domain"])
    p = cfg["simulate"]
    x = _point(p["at"], model.d, "simulate.at")
    x = D.deep_point() if x is None else x
    method = p["method"] if p["method"] != "auto" else ("wos" if model.is_stable else "timestep")
    rng = as_stream(cfg["seed"])
    kw = {"workers": cfg["workers"], "backend": cfg["backend"]}
    if method == "wos":
        b = exit_sample_wos(model.alpha, D, x, rng, n_paths=p["n_paths"], **kw)
        times = [""] * b.n
    else:
        b = exit_sample_timestep(model, D, x, p["dt"], rng, n_paths=p["n_paths"], **kw)
        times = b.exit_time
    cols = [f"x{i + 1}" for i in range(model.d)]
    rows = [[i, *b.exit_position[i], times[i], int(b.steps[i])] for i in range(b.n)]
    _write_csv(os.path.join(out, "simulate.csv"), ["path_id", *cols, "exit_time", "steps"], rows)
    return 0, {"n_paths": b.n, "escaped": int(b.escaped.sum()), "method": method}


def _estimate_rows(cfg):
    from . import potential as P
    model = build_model(cfg)
    D = Domain.parse(cfg["domain"])
    p = cfg["estimate"]
    q = p["quantity"]
    x = _point(p["at"], model.d, "estimate.at")
    x = D.deep_point() if x is None else x
    rng = as_stream(cfg["seed"])
    kw = {"workers": cfg["workers"], "backend": cfg["backend"]}
    if q == "exit-time":
        e = P.expected_exit_time(model, D, x, p["n_paths"], rng, p["method"], p["dt"], **kw)
    elif q == "green":
        e = P.green_potential(model, D, 1.0, x, p["n_paths"], rng, p["method"], p["dt"], **kw)
    elif q == "poisson-kernel":
        y = _point(p["y"], model.d, "estimate.y")
        if y is None:
            raise ConfigError("poisson-kernel needs estimate.y")
        e = P.poisson_kernel_est(model, D, x, y, p["n_paths"], rng, p["method"], p["dt"], **kw)
    elif q == "poisson-integral":
        e = P.poisson_integral(model, D, build_charge(p["charge"]), x, p["n_paths"], rng, p["method"], p["dt"],
                               **kw)
    elif q == "L-apply":
        return _l_apply(model, D, p, x)
    else:
        raise ConfigError(f"unknown quantity {q!r}")
    return [q, *x, e.value, e.std_error, e.n, e.method, ";".join(e.flags)]


def _l_apply(model, D, p, x):
    from .potential import ball_poisson_integral, operator_L_apply
    if not (D.is_ball and model.is_stable):
        raise ConfigError("L-apply tabulates its input function on a ball with the stable kind")
    c, r = D.tree.center, D.tree.radius
    interfaces = [(c, r)]
    if p["function"] == "exit-time":
        u = lambda y: ball_expected_exit(model.alpha, model.d, r, y, center=c)
    elif p["function"] == "poisson-integral":
        lam = build_charge(p["charge"])
        if lam.radial is None or np.any(c != 0):
            raise ConfigError("poisson-integral tabulation needs a radial charge and a ball centred at 0")
        u = ball_poisson_integral(model.alpha, model.d, r, lam)
        interfaces += [(c, b) for b in lam.radial[1]]
    else:
        raise ConfigError(f"unknown function {p['function']!r}")
    v = operator_L_apply(model, u, x, p["rho"] * r, interfaces=interfaces, return_parts=True)
    return ["L-apply", *x, v.value, 0.0, 0, "quadrature", ""]


def cmd_estimate(cfg, out):
    row = _estimate_rows(cfg)
    d = int(cfg["d"])
    _write_csv(os.path.join(out, "estimate.csv"),
               ["quantity", *[f"x{i + 1}" for i in range(d)], "value", "std_error", "n", "method", "flags"], [row])
    return 0, {"value": row[-5], "std_error": row[-4]}


def _trace_function(model, D, p):
    from .kernels import ball_martin_kernel
    if p["function"] == "one":
        return (lambda y: np.ones(len(np.atleast_2d(y)))), None
    if p["function"] == "martin":
        z = _point(p["z"], model.d, "martin.z")
        c, r = D.tree.center, D.tree.radius
        return (lambda y: ball_martin_kernel(model.alpha, model.d, r, np.atleast_2d(y) - c, z - c)), [z]
    raise ConfigError(f"unknown trace function {p['function']!r}")


def cmd_martin(cfg, out):
    from . import martin as M
    model = build_model(cfg)
    D = Domain.parse(cfg["domain"])
    p = cfg["martin"]
    mode = p["mode"]
    rng = as_stream(cfg["seed"])
    if mode == "kernel":
        x = _point(p["x"], model.d, "martin.x")
        z = _point(p["z"], model.d, "martin.z")
        if x is None or z is None:
            raise ConfigError("martin kernel needs martin.x and martin.z")
        e = M.martin_kernel(model, D, x, z, n_paths=p["n_paths"], rng=rng)
        _write_csv(os.path.join(out, "martin_kernel.csv"), ["value", "std_error", "method", "flags"],
                   [[e.value, e.std_error, e.method, ";".join(e.flags)]])
        return 0, {"value": e.value, "std_error": e.std_error}
    if mode == "classify":
        z = p["z"]
        z = M.INFINITY if z in (None, "inf", M.INFINITY) else _point(z, model.d, "martin.z")
        v = M.classify_accessible(model, D, z, n_paths=p["n_paths"], rng=rng)
        with open(os.path.join(out, "classify.json"), "w") as fh:
            json.dump({"point": v.point, "verdict": v.verdict, "evidence": _jsonable(v.evidence)}, fh, indent=2,
                      sort_keys=True)
        return 0, {"verdict": v.verdict}
    if mode == "trace":
        u, peaks = _trace_function(model, D, p)
        t = M.boundary_trace(model, D, u, n_stages=p["n_stages"], n_bins=p["n_bins"], n_paths=p["n_paths"],
                             rng=rng, peaks=peaks)
        rows = []
        for st in t.stages:
            rows.append([st["stage"], "interior", st["interior"]])
            rows += [[st["stage"], b, m] for b, m in enumerate(st["boundary_bins"])]
        _write_csv(os.path.join(out, "trace.csv"), ["stage", "bin_id", "mass"], rows)
        return 0, {"converged": t.converged, "total_mass_trend": t.total_mass_trend}
    raise ConfigError(f"unknown martin mode {mode!r}")


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    return o


def audit(cfg):
    """Scaling (global and large-scale), comparability (inner and outer), transience."""
    spec = build_spec(cfg["process"])
    d = int(cfg["d"])
    lam = np.geomspace(1.0, 1e6, 13)
    rep = {"process": cfg["process"], "d": d}
    for name, r, glob in (("scaling_global", np.geomspace(1e-6, 1e6, 25), True),
                          ("scaling_H1", np.geomspace(1.0, 1e6, 13), False)):
        s = check_scaling(spec, lam, r, global_variant=glob)
        rep[name] = {"lsc": s.satisfied_lsc, "usc": s.satisfied_usc, "delta1": s.delta1, "delta2": s.delta2,
                     "a1": s.a1, "a2": s.a2}
    rep["H1"] = rep["scaling_H1"]["lsc"] and rep["scaling_H1"]["usc"]
    rep["H2"] = rep["scaling_global"]["lsc"] and rep["scaling_global"]["usc"]
    rep["transient"] = bool(check_transience(spec, d))
    if hasattr(spec, "kind") and rep["transient"]:
        model = ProcessModel(d, spec)
        for direction, q in (("inner", 0.5), ("outer", 2.0)):
            try:
                c = comparability_radius(model, 1.0, 0.1, q, direction)
                rep[f"comparability_{direction}"] = {"p": c.p, "worst_ratio": c.worst_ratio}
            except NotFound as e:
                rep[f"comparability_{direction}"] = {"p": None, "reason": str(e)}
        rep["E"] = rep["comparability_outer"]["p"] is not None
    else:
        rep["E"] = None
    return _jsonable(rep)


def cmd_audit(cfg, out):
    rep = audit(cfg)
    with open(os.path.join(out, "audit.json"), "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True)
    return 0, {"H1": rep["H1"], "H2": rep["H2"], "transient": rep["transient"], "E": rep["E"]}


def cmd_verify(cfg, out):
    from .verify import run_suite
    p = cfg["verify"]
    names = SUITE_NAMES if p["suite"] == "all" else (p["suite"],)
    if any(n not in SUITE_NAMES for n in names):
        raise ConfigError(f"unknown suite {p['suite']!r}")
    model = build_model(cfg)
    summary = {}
    gate = None
    if not model.is_stable:
        gate = audit(cfg)
    for n in names:
        if gate is not None:
            why = "suite needs the stable kind" if not gate["E"] else "suite tabulates closed forms of the stable kind"
            summary[n] = {"pass": None, "status": "conditional", "reason": why, "audit": gate,
                          "seeds": {"seed": cfg["seed"]}}
            continue
        t0 = time.perf_counter()
        r = run_suite(n, model=model, seed=cfg["seed"], budget=p["budget"])
        wall = round(time.perf_counter() - t0, 3)
        rows = r.rows
        keys = sorted({k for row in rows for k in row})
        _write_csv(os.path.join(out, f"verify_{n}.csv"), keys,
                   [[json.dumps(_jsonable(row.get(k))) if isinstance(row.get(k), (list, dict)) else row.get(k, "")
                     for k in keys] for row in rows])
        summary[n] = {"pass": bool(r.passed), "status": "pass" if r.passed else "fail",
                      "worst_case": _jsonable(r.worst_case), "seeds": _jsonable(r.seeds), "wall_time_s": wall}
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    failed = any(s["pass"] is False for s in summary.values())
    return (1 if failed else 0), {k: v["status"] for k, v in summary.items()}


HANDLERS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "martin": cmd_martin, "verify": cmd_verify,
            "audit": cmd_audit}


# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _coords(text):
    return [float(t) for t in text.replace(",", " ").split()]


def make_parser():
    common = _Parser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="config file (key = value) or a previous manifest.json")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. process.alpha=1.5")
    g.add_argument("--kind", choices=["stable", "stable_sum", "relativistic", "log"])
    g.add_argument("--alpha", type=float)
    g.add_argument("--mass", type=float, help="relativistic mass m")
    g.add_argument("--d", type=int)
    g.add_argument("--domain")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--backend", choices=["compiled", "python"])
    g.add_argument("--output-dir")

    ap = _Parser(prog="sbmpot", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=version_string())
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="exit samples to CSV")
    s.add_argument("--at", type=_coords)
    s.add_argument("--n-paths", type=int)
    s.add_argument("--method", choices=["auto", "wos", "timestep"])
    s.add_argument("--dt", type=float)

    e = sub.add_parser("estimate", parents=[common], help="potential-theoretic estimates")
    e.add_argument("--quantity", choices=["green", "poisson-kernel", "poisson-integral", "exit-time", "L-apply"])
    e.add_argument("--at", type=_coords)
    e.add_argument("--y", type=_coords)
    e.add_argument("--charge", type=json.loads, help='JSON, e.g. {"kind": "annulus", "r1": 1, "r2": 2}')
    e.add_argument("--function", choices=["exit-time", "poisson-integral"])
    e.add_argument("--n-paths", type=int)
    e.add_argument("--method", choices=["auto", "wos", "timestep"])
    e.add_argument("--dt", type=float)

    m = sub.add_parser("martin", parents=[common], help="Martin kernel, accessibility, boundary trace")
    mode = m.add_mutually_exclusive_group()
    mode.add_argument("--kernel", action="store_const", const="kernel", dest="mode")
    mode.add_argument("--classify", action="store_const", const="classify", dest="mode")
    mode.add_argument("--trace", action="store_const", const="trace", dest="mode")
    m.add_argument("--x", type=_coords)
    m.add_argument("--z", help="boundary point coordinates or 'inf'")
    m.add_argument("--function", choices=["one", "martin"])
    m.add_argument("--n-paths", type=int)
    m.add_argument("--n-stages", type=int)
    m.add_argument("--n-bins", type=int)

    v = sub.add_parser("verify", parents=[common], help="theorem suites")
    v.add_argument("--suite", choices=list(SUITE_NAMES) + ["all"])
    v.add_argument("--budget", type=float, help="scale factor on path counts")

    sub.add_parser("audit", parents=[common], help="assumption audit")
    return ap


def resolve(args, env=None):
    """Defaults, then the config file, then --set pairs, then explicit flags."""
    env = os.environ if env is None else env
    cfg = merge(DEFAULTS, {})
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = merge(cfg, parse_config(fh.read(), args.config))
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}")
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, val = item.split("=", 1)
        path = k.strip().split(".")
        if len(path) > 2:
            raise ConfigError(f"--set {k}: at most one nesting level")
        _assign(cfg, path, _value(val, "--set"))
    a = vars(args)
    proc = {"kind": a.get("kind"), "alpha": a.get("alpha"), "m": a.get("mass")}
    if proc["kind"] is not None and proc["kind"] != cfg["process"].get("kind"):
        cfg["process"] = {"kind": proc["kind"]}
    cfg["process"].update({k: v for k, v in proc.items() if v is not None})
    for k in ("d", "domain", "seed", "workers", "backend"):
        if a.get(k) is not None:
            cfg[k] = a[k]
    if a.get("output_dir"):
        cfg["output_dir"] = a["output_dir"]
    if not cfg.get("domain"):
        cfg["domain"] = f"ball({' '.join(['0'] * int(cfg['d']))}; 1)"
    if not cfg.get("output_dir"):
        cfg["output_dir"] = env.get(OUTPUT_ENV) or "sbmpot_out"
    cmd = args.command
    sec = cfg.setdefault(cmd, {})
    for k, val in a.items():
        if k in sec and val is not None and k not in ("config", "set"):
            sec[k] = val
    if cmd == "martin" and a.get("z") is not None:
        sec["z"] = a["z"] if a["z"] == "inf" else _coords(a["z"])
    if cfg["workers"] is None:
        cfg["workers"] = os.cpu_count() or 1
    cfg["command"] = cmd
    _validate(cfg)
    return cfg


def _validate(cfg):
    if not isinstance(cfg.get("seed"), int) or not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    if not isinstance(cfg.get("d"), int) or cfg["d"] < 1:
        raise ConfigError("d must be a positive integer")
    try:
        D = Domain.parse(cfg["domain"])
    except DomainSyntaxError as e:
        raise ConfigError(f"domain: {e}")
    if D.d != cfg["d"]:
        raise ConfigError(f"domain has dimension {D.d} but d = {cfg['d']}")


def run(cfg):
    """Execute a resolved config; returns the exit code."""
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    code, info = HANDLERS[cfg["command"]](cfg, out)
    manifest = {"format_version": FORMAT_VERSION, "tool": "sbmpot", "version": version_string(),
                "config": cfg, "wall_time_s": round(time.perf_counter() - t0, 3), "exit_code": code,
                "result": _jsonable(info)}
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(json.dumps({"command": cfg["command"], "exit_code": code, "result": _jsonable(info)}, sort_keys=True))
    return code


def main(argv=None):
    try:
        args = make_parser().parse_args(argv)
        cfg = resolve(args)
    except ConfigError as e:
        print(f"sbmpot: error: {e}", file=sys.stderr)
        return 2
    try:
        return run(cfg)
    except (ConfigError, DomainSyntaxError) as e:
        print(f"sbmpot: error: {e}", file=sys.stderr)
        return 2
    except SbmError as e:
        print(f"sbmpot: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
