"""Command-line front end.

Every subcommand resolves its flags into a JSON-serializable run config,
executes it, and writes CSV/JSON data files plus ``manifest.json``.  A
manifest can be replayed with ``eqwave replay``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .cw import continue_primary, default_seed, enumerate_cws, predicted_count, reappearance_phi, solve_cw
from .cw_spectrum import char_data, continuous_spectrum_distance, cw_spectrum, nontrivial
from .errors import ConfigError, EqwaveError
from .io import mw_from_dict, mw_to_dict, read_json, wrap_angle, write_csv, write_json
from .model import LK_DEFAULTS, SL_DEFAULTS, TWO_PI, model_from_config, model_to_config
from .mw import (count_lower_bound, enumerate_family, estimate_radii, mw_from_simulation, primary_mw_normalize,
                 solve_mw)
from .mw_spectrum import large_delay_trend, monodromy_multipliers
from .sim import HistorySegment, extract_frequencies, integrate

log = logging.getLogger("eqwave")

MANIFEST_SCHEMA = "eqwave-manifest-v1"
PARAM_FLAGS = ("alpha", "eta", "J", "eps", "beta", "gamma")
MODEL_DEFAULTS = {"lang_kobayashi": LK_DEFAULTS, "stuart_landau": SL_DEFAULTS}
ALIASES = {"lk": "lang_kobayashi", "sl": "stuart_landau"}

# command -> {arg: default}; None marks a required value
COMMANDS = {
    "cw-branch": {"psi_start": 0.0, "psi_end": TWO_PI, "h_max": 0.1},
    "cw-count": {"tau": None, "phi": None, "h_max": 0.1},
    "cw-spectrum": {"psi": 0.0, "tau": None, "m": 10, "chi_max": None},
    "mw-solve": {"tau": None, "phi": None, "psi": None, "mw_file": None, "t_sim": 6000.0,
                 "perturb": 1e-3, "modes": 32, "tol": 1e-9},
    "mw-enumerate": {"mw_file": None, "tau": None, "phi": None, "eps0": "auto", "delta0": "auto",
                     "gamma0": "auto", "max_pairs": 64},
    "mw-count-bound": {"T0": None, "V0": None, "eps0": None, "delta0": None, "gamma0": None, "tau": None},
    "mw-floquet": {"mw_file": None, "m": 10},
    "mw-trend": {"mw_file": None, "chain": 3, "m": 8},
    "simulate": {"tau": None, "phi": None, "psi": 0.0, "mw_file": None, "t_end": None, "h": None,
                 "perturb": 0.0, "save_every": 1},
}
NEEDS_MODEL = set(COMMANDS) - {"mw-count-bound"}


# ------------------------------------------------------------------ parsing


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--model", default=None, help="lk | sl (default lk, or the model stored in --mw-file)")
    for name in PARAM_FLAGS:
        g.add_argument(f"--{name}", type=float, default=None)


def _add_common(p):
    p.add_argument("--out", default="eqwave_out", help="output directory")
    p.add_argument("--dry-run", action="store_true", help="validate and print the resolved config")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    p.add_argument("--seed", type=int, default=0, help="seed for random perturbations")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eqwave", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"eqwave {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, spec in COMMANDS.items():
        p = sub.add_parser(cmd)
        if cmd in NEEDS_MODEL:
            _add_model_flags(p)
        for arg, default in spec.items():
            flag = "--" + arg.replace("_", "-")
            if arg == "mw_file":
                p.add_argument(flag, default=None)
            elif arg in ("eps0", "delta0", "gamma0") and default == "auto":
                p.add_argument(flag, default="auto", help="number or 'auto' (basin probe)")
            elif isinstance(default, int) and not isinstance(default, bool):
                p.add_argument(flag, type=int, default=default)
            else:
                p.add_argument(flag, type=float, default=default, required=(default is None and _required(cmd, arg)))
        _add_common(p)
    rp = sub.add_parser("replay", help="re-run a saved manifest")
    rp.add_argument("manifest")
    _add_common(rp)
    return parser


def _required(cmd, arg):
    optional = {("mw-solve", "phi"), ("mw-solve", "psi"), ("mw-solve", "tau"), ("mw-enumerate", "tau"),
                ("mw-enumerate", "phi"), ("cw-spectrum", "chi_max"), ("simulate", "phi"),
                ("simulate", "t_end"), ("simulate", "h"), ("simulate", "tau")}
    return (cmd, arg) not in optional


def config_from_args(ns: argparse.Namespace) -> dict:
    """Resolve parsed flags into a complete run config."""
    cmd = ns.command
    args = {k: getattr(ns, k) for k in COMMANDS[cmd]}
    for k in ("eps0", "delta0", "gamma0"):
        if k in args and cmd == "mw-enumerate" and args[k] != "auto":
            try:
                args[k] = float(args[k])
            except ValueError:
                raise ConfigError(f"--{k} must be a number or 'auto'") from None
    if args.get("mw_file"):
        args["mw_file"] = str(Path(args["mw_file"]).resolve())
    cfg = {"command": cmd, "args": args, "seed": ns.seed, "threads": _threads(ns.threads)}
    if cmd in NEEDS_MODEL:
        cfg["model"] = _model_config(ns, args)
    return cfg


def _threads(flag):
    if flag is not None:
        return flag
    env = os.environ.get("EQWAVE_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"EQWAVE_THREADS={env!r} is not an integer") from None
    return None


def _model_config(ns, args) -> dict:
    base = None
    if args.get("mw_file"):
        base = _load_mw_file(args["mw_file"])[1]
    name = ns.model if ns.model is not None else (base or {}).get("model", "lk")
    name = ALIASES.get(name, name)
    if name not in MODEL_DEFAULTS:
        raise ConfigError(f"unknown model {name!r}")
    params = dict(MODEL_DEFAULTS[name])
    if base and base.get("model") == name:
        params.update(base.get("params", {}))
    for k in PARAM_FLAGS:
        v = getattr(ns, k)
        if v is not None:
            if k not in params:
                raise ConfigError(f"--{k} is not a parameter of {name}")
            params[k] = v
    return {"model": name, "params": params}


def _load_mw_file(path):
    try:
        d = read_json(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read MW file {path}: {exc}") from None
    if "values" not in d:
        raise ConfigError(f"{path} does not hold a modulated wave")
    return mw_from_dict(d), d.get("model")


def validate(cfg: dict) -> None:
    cmd = cfg.get("command")
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}")
    args = cfg.get("args", {})
    for k, default in COMMANDS[cmd].items():
        if default is None and k != "mw_file" and _required(cmd, k) and args.get(k) is None:
            raise ConfigError(f"{cmd}: missing --{k.replace('_', '-')}")
    if cmd in ("mw-floquet", "mw-trend", "mw-enumerate") and not args.get("mw_file"):
        raise ConfigError(f"{cmd}: missing --mw-file")
    if cmd == "mw-solve" and not args.get("mw_file") and (args.get("psi") is None or args.get("tau") is None):
        raise ConfigError("mw-solve needs --mw-file or both --psi and --tau")
    if cmd == "mw-count-bound":
        if not (np.pi - 1e-9 <= args["V0"] <= 3 * np.pi + 1e-9):
            # accept the usual 3.14159 spelling of pi
            if not abs(args["V0"] - np.pi) < 1e-5:
                raise ConfigError("V0 must lie in [pi, 3 pi]")
        if not (0 < args["gamma0"] < TWO_PI and args["eps0"] > 0 and args["delta0"] > 0 and args["T0"] > 0):
            raise ConfigError("need T0, eps0, delta0 > 0 and 0 < gamma0 < 2 pi")
    for k in ("tau", "t_end", "h"):
        v = args.get(k)
        if v is not None and not (np.isfinite(v) and v >= 0):
            raise ConfigError(f"--{k} must be finite and >= 0")
    if cmd == "simulate" and args.get("tau") is None and not args.get("mw_file"):
        raise ConfigError("simulate needs --tau (or --mw-file)")
    if cfg.get("threads") is not None and cfg["threads"] < 1:
        raise ConfigError("--threads must be >= 1")
    if "model" in cfg:
        model_from_config(cfg["model"])


# ------------------------------------------------------------------ commands


def _model(cfg, tau=0.0, phi=0.0):
    mc = dict(cfg["model"], tau=tau, phi=phi)
    return model_from_config(mc)


def _branch(model, h_max=0.1, psi_start=0.0, psi_end=TWO_PI):
    return continue_primary(model, psi_start, psi_end, seed=default_seed(model, psi_start), h_max=h_max)


def cmd_cw_branch(cfg, out):
    a = cfg["args"]
    model = _model(cfg)
    br = _branch(model, a["h_max"], a["psi_start"], a["psi_end"])
    n = model.n
    rows = [[wrap_angle(c.psi), c.omega, *c.x0, c.residual_norm] for c in br.nodes]
    write_csv(out / "branch.csv", ["psi", "omega"] + [f"x0_{i}" for i in range(n)] + ["residual"], rows)
    K, _, pieces = predicted_count(br, 1.0)
    return {"nodes": len(br), "closed": br.closed, "folds": br.fold_indices, "stalled": br.stalled,
            "K_total": K, "K_pieces": [p[1] for p in pieces]}


def cmd_cw_count(cfg, out):
    a = cfg["args"]
    model = _model(cfg, a["tau"], a["phi"])
    br = _branch(model, a["h_max"])
    rep = enumerate_cws(br, a["tau"], a["phi"])
    n = model.n
    rows = [[wrap_angle(c.psi), c.omega, wrap_angle(reappearance_phi(c, a["tau"])), *c.x0, c.residual_norm]
            for c in rep.cws]
    write_csv(out / "cws.csv", ["psi", "omega", "phi"] + [f"x0_{i}" for i in range(n)] + ["residual"], rows)
    pieces = [{"K": p.K, "predicted": list(p.predicted), "found": p.found} for p in rep.pieces]
    return {"count": rep.found, "K_total": rep.K, "tau": rep.tau, "phi": rep.phi, "pieces": pieces}


def cmd_cw_spectrum(cfg, out):
    a = cfg["args"]
    model = _model(cfg, a["tau"])
    cw = solve_cw(model, a["psi"], default_seed(model, a["psi"]))
    rep = cw_spectrum(model, cw, a["tau"], chi_max=a["chi_max"], m=a["m"])
    write_csv(out / "strong.csv", ["re", "im"], [[z.real, z.imag] for z in rep.strong_roots])
    write_csv(out / "rightmost.csv", ["re", "im", "tau_re"],
              [[z.real, z.imag, a["tau"] * z.real] for z in rep.rightmost])
    cs = rep.continuous
    if cs is not None:
        g = cs.gamma
        write_csv(out / "continuous.csv", ["chi"] + [f"gamma_{j}" for j in range(g.shape[1])],
                  np.column_stack([cs.chi, g]))
    data = char_data(model, cw, a["tau"])
    nt = nontrivial(rep.rightmost)
    summary = {"class": rep.cls, "psi": wrap_angle(cw.psi), "omega": cw.omega,
               "phi": wrap_angle(reappearance_phi(cw, a["tau"])), "trivial_defect": data.trivial_defect(),
               "max_nontrivial_re": float(np.max(nt.real)) if nt.size else None}
    if cs is not None and rep.rightmost.size:
        summary["continuous_distance"] = continuous_spectrum_distance(data, rep.rightmost, rep.strong_roots)
    return summary


def _save_mw(out, model, mw, name="mw"):
    write_json(out / f"{name}.json", mw_to_dict(mw, model_to_config(model)))
    y = TWO_PI * np.arange(mw.M) / mw.M
    write_csv(out / f"{name}_profile.csv", ["y"] + [f"a_{i}" for i in range(model.n)],
              np.column_stack([y, mw.values]))


def cmd_mw_solve(cfg, out):
    a = cfg["args"]
    rng = np.random.default_rng(cfg.get("seed", 0))
    if a["mw_file"]:
        seed, _ = _load_mw_file(a["mw_file"])
        tau = seed.tau if a["tau"] is None else a["tau"]
        phi = seed.phi if a["phi"] is None else a["phi"]
        model = _model(cfg, tau, phi)
        sim = None
    else:
        base = _model(cfg)
        cw = solve_cw(base, a["psi"], default_seed(base, a["psi"]))
        tau = a["tau"]
        phi = reappearance_phi(cw, tau) if a["phi"] is None else a["phi"]
        model = _model(cfg, tau, phi)
        seed, sim = mw_from_simulation(model, cw, a["t_sim"], perturb=a["perturb"], M=2 * a["modes"] + 1, rng=rng)
    mw = solve_mw(model, seed, tau, phi, tol=a["tol"])
    _save_mw(out, model, mw)
    summary = {"beta": mw.beta, "omega": mw.omega, "tau": mw.tau, "phi": wrap_angle(mw.phi), "T": mw.T,
               "V": mw.V, "modes": mw.NF, "residual_norm": mw.residual_norm, "amplitude": mw.amplitude()}
    if sim is not None:
        summary["simulation"] = {"beta": sim[0], "omega": sim[1],
                                 "beta_rel_err": abs(mw.beta - sim[0]) / abs(mw.beta),
                                 "omega_rel_err": abs(mw.omega - sim[1]) / abs(mw.omega)}
    return summary


def cmd_mw_enumerate(cfg, out):
    a = cfg["args"]
    mw, _ = _load_mw_file(a["mw_file"])
    model = _model(cfg, mw.tau, mw.phi)
    mw0 = primary_mw_normalize(mw, model)
    if mw0 is not mw:
        mw0 = solve_mw(model, mw0, mw0.tau, mw0.phi)
    radii = {k: a[k] for k in ("eps0", "delta0", "gamma0")}
    if any(v == "auto" for v in radii.values()):
        est = estimate_radii(model, mw0)
        for k in radii:
            if radii[k] == "auto":
                radii[k] = float(getattr(est, k))
    tau = mw0.tau if a["tau"] is None else a["tau"]
    phi = mw0.phi if a["phi"] is None else a["phi"]
    bound = count_lower_bound(mw0.T, mw0.V, radii["eps0"], radii["delta0"], radii["gamma0"], tau)
    res = enumerate_family(model.with_params(tau=tau, phi=phi), mw0, tau, phi, radii["eps0"], radii["delta0"],
                           radii["gamma0"], max_pairs=a["max_pairs"])
    rows = [[m.k, m.l, m.chi, wrap_angle(m.psi), m.solution.beta, m.solution.omega, m.solution.residual_norm]
            for m in res.members]
    write_csv(out / "family.csv", ["k", "l", "chi", "psi", "beta", "omega", "residual"], rows)
    return {"count": len(res.members), "N_bound": bound.N, "tau_star": bound.tau_star,
            "below_threshold": bound.below_threshold, "radii": radii, "T0": mw0.T, "V0": mw0.V,
            "pairs_tried": len(res.pairs) if a["max_pairs"] is None else min(len(res.pairs), a["max_pairs"]),
            "unresolved": res.unresolved, "jacobian_det": res.jacobian_det, "warnings": res.warnings}


def cmd_mw_count_bound(cfg, out):
    a = cfg["args"]
    V0 = max(a["V0"], np.pi)
    b = count_lower_bound(a["T0"], V0, a["eps0"], a["delta0"], a["gamma0"], a["tau"])
    res = {"r": b.r, "tau_star": b.tau_star, "k_count": b.k_count, "l_count": b.l_count, "N": b.N,
           "below_threshold": b.below_threshold}
    write_json(out / "count_bound.json", res)
    return res


def cmd_mw_floquet(cfg, out):
    a = cfg["args"]
    mw, _ = _load_mw_file(a["mw_file"])
    model = _model(cfg, mw.tau, mw.phi)
    rep = monodromy_multipliers(model, mw, a["m"])
    rows = [[z.real, z.imag, abs(z), float(i in rep.trivial)] for i, z in enumerate(rep.multipliers)]
    write_csv(out / "multipliers.csv", ["re", "im", "abs", "trivial"], rows)
    return {"class": rep.cls, "trivial_error": rep.trivial_error, "max_exponent": rep.max_exponent(),
            "period": rep.period, "mesh": rep.p}


def cmd_mw_trend(cfg, out):
    a = cfg["args"]
    mw, _ = _load_mw_file(a["mw_file"])
    model = _model(cfg, mw.tau, mw.phi)
    tr = large_delay_trend(model, mw, chain=a["chain"], m=a["m"])
    write_csv(out / "trend.csv", ["k", "tau", "max_exponent"], list(zip(tr.k, tr.tau, tr.exponents)))
    return {"trend": tr.trend, "truncated": tr.truncated, "points": len(tr.k)}


def cmd_simulate(cfg, out):
    a = cfg["args"]
    rng = np.random.default_rng(cfg.get("seed", 0))
    if a["mw_file"]:
        mw, _ = _load_mw_file(a["mw_file"])
        tau = mw.tau if a["tau"] is None else a["tau"]
        phi = mw.phi if a["phi"] is None else a["phi"]
        model = _model(cfg, tau, phi)
        src = mw
    else:
        base = _model(cfg)
        cw = solve_cw(base, a["psi"], default_seed(base, a["psi"]))
        tau = a["tau"]
        phi = reappearance_phi(cw, tau) if a["phi"] is None else a["phi"]
        model = _model(cfg, tau, phi)
        src = cw
    h = a["h"] if a["h"] else tau / max(64, int(np.ceil(tau / 0.05)))
    hist = (HistorySegment.from_mw if a["mw_file"] else HistorySegment.from_cw)(model, src, tau, h)
    if a["perturb"]:
        hist.values[-1] = hist.values[-1] + a["perturb"] * rng.standard_normal(model.n)
    t_end = a["t_end"] if a["t_end"] is not None else 50 * max(tau, 1.0)
    tr = integrate(model, hist, t_end, h, save_every=a["save_every"])
    cols = ["t"] + [f"x_{i}" for i in range(model.n)] + ["amplitude", "phase"]
    write_csv(out / "trajectory.csv", cols, np.column_stack([tr.t, tr.x, tr.amplitude, wrap_angle(tr.phase)]))
    half = tr.t >= 0.5 * tr.t[-1]
    from .sim import Trajectory
    beta, omega = extract_frequencies(Trajectory(tr.t[half], tr.x[half], tr.rotation_block, tr.meta))
    return {"tau": tau, "phi": wrap_angle(phi), "h": h, "t_end": t_end, "beta_fft": beta, "omega_mean": omega}


HANDLERS = {
    "cw-branch": cmd_cw_branch, "cw-count": cmd_cw_count, "cw-spectrum": cmd_cw_spectrum,
    "mw-solve": cmd_mw_solve, "mw-enumerate": cmd_mw_enumerate, "mw-count-bound": cmd_mw_count_bound,
    "mw-floquet": cmd_mw_floquet, "mw-trend": cmd_mw_trend, "simulate": cmd_simulate,
}


# ------------------------------------------------------------------ driver


def run(cfg: dict, out: str | Path) -> int:
    """Execute one validated config; returns the process exit status."""
    validate(cfg)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    from threadpoolctl import threadpool_limits

    before = set(os.listdir(out))
    try:
        with threadpool_limits(limits=cfg.get("threads")):
            summary = HANDLERS[cfg["command"]](cfg, out)
    except (EqwaveError, np.linalg.LinAlgError, ArithmeticError) as exc:
        if isinstance(exc, ConfigError):
            raise
        write_json(out / "diagnostic.json", {"command": cfg["command"], "error": type(exc).__name__,
                                             "message": str(exc), "traceback": traceback.format_exc(),
                                             "config": cfg})
        print(f"eqwave: {cfg['command']} failed: {exc}", file=sys.stderr)
        return 1
    write_json(out / "summary.json", summary)
    outputs = sorted((set(os.listdir(out)) - before) | {"summary.json"})
    write_json(out / "manifest.json", {"schema": MANIFEST_SCHEMA, "version": __version__, "config": cfg,
                                       "outputs": outputs})
    print(json.dumps(summary, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o)))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if ns.command == "replay":
            m = read_json(ns.manifest)
            if m.get("schema") != MANIFEST_SCHEMA:
                raise ConfigError(f"{ns.manifest}: not an {MANIFEST_SCHEMA} manifest")
            cfg = m["config"]
        else:
            cfg = config_from_args(ns)
        validate(cfg)
        if ns.dry_run:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return 0
        return run(cfg, ns.out)
    except ConfigError as exc:
        print(f"eqwave: configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"eqwave: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
