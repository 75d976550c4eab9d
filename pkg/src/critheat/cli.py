"""Command line runner: one subcommand per pipeline stage.

Parameters come from built-in defaults, then an INI file section named after the
command (``--config``), then flags.  Every run writes its CSV artifacts, a
``<command>_report.txt`` of ``key = value`` lines and a ``manifest.json`` holding
the resolved parameters.  The output directory defaults to ``$CRITHEAT_OUTDIR``
(or ``./critheat_out``).

Exit codes: 0 success, 2 a tolerance check failed, 1 usage or configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__

ENV_OUTDIR = "CRITHEAT_OUTDIR"

DEFAULTS = {
    "profile": {"M": 400, "L": 10.0},
    "spectrum": {"M": 2000, "L": 5.0, "r_match": 8.0, "cheb_N": 121},
    "modulate": {"T": 0.05, "zq": -0.1, "eps_frac": 1e-4, "time_ratio": 0.95},
    "inner": {"T": 0.05, "R": 40.0, "a": 0.5, "nu": 1.5, "M": 480, "zq": -0.1, "n_sources": 4, "seed": 0},
    "outer": {"T": 0.05, "a": 0.5, "M": 400, "n_sources": 5, "seed": 0},
    "glue": {"T": 0.05, "R": 40.0, "a": 0.5, "nu": 1.5, "eps_frac": 1e-4, "zstar_amp": 0.1, "damping": 0.7,
             "max_iters": 40, "tol": 1e-9, "delta0": 1e-2, "delta1": 0.5, "time_ratio": 0.95,
             "inner_M": 480, "outer_M": 600, "outer_substeps": 2},
    "ratefit": {"input": "glue.csv", "T": 0.05, "window_hi_frac": 0.1},
}

HELP = {
    "profile": "bubble residual, alpha recovery, kernel residuals and core integrals",
    "spectrum": "unstable eigenpair (lambda0, Z0) with cross-check and decay fit",
    "modulate": "leading scale law mu_*, the constants beta, alpha_*, gamma and the T0/T1 checks",
    "inner": "inner linear solves on sample sources and the measured constant",
    "outer": "barrier tuning and outer solves on sample sources",
    "glue": "full radial gluing run with rate fits",
    "ratefit": "blow-up rate fits from a glue.csv file",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _typed(default, text: str):
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="critheat", description="Type II blow-up gluing experiments for the 5-D critical heat equation.")
    parser.add_argument("--version", action="version", version=f"critheat {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    for name, params in DEFAULTS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="INI file; the section [%s] supplies parameters" % name)
        p.add_argument("--outdir", help=f"output directory (default ${ENV_OUTDIR} or ./critheat_out)")
        p.add_argument("-v", "--verbose", action="store_true")
        for key, val in params.items():
            p.add_argument(f"--{key}", dest=key, default=None, help=f"default {val!r}")
    return parser


def resolve_params(command: str, args: argparse.Namespace) -> dict:
    """Defaults <- config section <- flags, with types taken from the defaults."""
    params = dict(DEFAULTS[command])
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise UsageError(f"cannot parse {path}: {exc}") from exc
        if not cp.has_section(command):
            raise UsageError(f"config file {path} has no [{command}] section")
        for key, text in cp.items(command):
            if key not in params:
                raise UsageError(f"unknown key '{key}' in [{command}]")
            params[key] = _typed(DEFAULTS[command][key], text)
    for key in DEFAULTS[command]:
        text = getattr(args, key)
        if text is not None:
            params[key] = _typed(DEFAULTS[command][key], text)
    _validate(command, params)
    return params


def _validate(command: str, p: dict) -> None:
    def need(cond, msg):
        if not cond:
            raise UsageError(msg)

    if "T" in p:
        need(p["T"] > 0, "T must be positive")
    if "M" in p:
        need(p["M"] >= 16, "M must be at least 16")
    if "a" in p:
        need(0 < p["a"] < 1, "a must lie in (0, 1)")
    if "R" in p:
        need(p["R"] >= 10, "R must be at least 10")
    if "eps_frac" in p:
        need(0 < p["eps_frac"] < 1, "eps_frac must lie in (0, 1)")
    if "zq" in p:
        need(p["zq"] < 0, "zq must be negative")
    if command == "spectrum":
        need(p["cheb_N"] % 2 == 1, "cheb_N must be odd")
    if command == "glue":
        need(0 < p["damping"] <= 1, "damping must lie in (0, 1]")
        need(p["zstar_amp"] > 0, "zstar_amp must be positive")
        need(p["max_iters"] >= 1, "max_iters must be positive")
    if command in ("inner", "outer"):
        need(p["n_sources"] >= 1, "n_sources must be positive")


def output_dir(args) -> Path:
    out = Path(args.outdir or os.environ.get(ENV_OUTDIR) or "critheat_out")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory not writable: {out} ({exc})") from exc
    return out


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_report(path: Path, report: dict) -> None:
    with path.open("w") as fh:
        for k, v in report.items():
            fh.write(f"{k} = {_fmt(v)}\n")


def write_manifest(out: Path, command: str, params: dict, files: list, report: dict, passed: bool) -> None:
    import scipy

    manifest = {
        "command": command,
        "package_version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "parameters": params,
        "artifacts": sorted(files),
        "checks_passed": bool(passed),
        "report": {k: (float(v) if isinstance(v, (float, np.floating)) else
                       bool(v) if isinstance(v, (bool, np.bool_)) else v) for k, v in report.items()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands: each returns (report, checks, files)

def cmd_profile(p: dict, out: Path):
    from .grid import tan_grid
    from .profile import ALPHA, core_integrals, export_profiles_csv, kernel_residual, pde_residual, recover_alpha

    g = tan_grid(p["M"], L=p["L"])
    export_profiles_csv(g, out / "profiles.csv")
    res = pde_residual(g)
    alpha = recover_alpha(g)
    kern = [kernel_residual(g, i) for i in range(1, 7)]
    ci = core_integrals()
    ident = abs(ci["I_pUp1Z6"] + 1.5 * ci["I_Up"]) / abs(ci["I_pUp1Z6"])
    report = {"alpha": alpha, "alpha_reference": ALPHA, "bubble_residual": res, "kernel_residual_max": max(kern),
              **{f"integral_{k}": v for k, v in ci.values.items()},
              "identity_rel_error": ident, "rule_disagreement": ci.rel_disagreement}
    checks = {"bubble_residual": res < 1e-8, "alpha": abs(alpha - ALPHA) < 1e-10 * ALPHA,
              "kernel": max(kern) < 1e-6, "identity": ident < 1e-7}
    return report, checks, ["profiles.csv"]


def cmd_spectrum(p: dict, out: Path):
    from .spectrum import export_eigenpair_csv, rayleigh_quotient, solve_eigenpair

    pair = solve_eigenpair(M=p["M"], L=p["L"], r_match=p["r_match"], cheb_N=p["cheb_N"])
    export_eigenpair_csv(pair, out / "eigenpair.csv")
    cross = abs(pair.lambda0 - pair.lambda_cheb) / pair.lambda0
    rate_err = pair.decay_rate / np.sqrt(pair.lambda0) - 1.0
    report = {"lambda0": pair.lambda0, "lambda_cheb": pair.lambda_cheb, "cross_rel": cross,
              "lambda_second": pair.lambda_second, "gap": pair.gap, "R_trunc": pair.R_trunc,
              "decay_rate": pair.decay_rate, "decay_rate_rel_error": rate_err, "decay_power": pair.decay_power,
              "rayleigh": rayleigh_quotient(pair)}
    checks = {"positive": pair.lambda0 > 0, "cross": cross < 1e-6, "power": abs(pair.decay_power - 2) <= 0.1,
              "rate": abs(rate_err) <= 0.02}
    return report, checks, ["eigenpair.csv"]


def cmd_modulate(p: dict, out: Path):
    from .modulation import (BubbleTrajectory, ModulationConstants, T0_apply, T1_apply, export_trajectory_csv,
                             mu_star, mu_star_dot, perturbation_gamma, time_grid)

    T, zq = p["T"], p["zq"]
    t = time_grid(T, p["eps_frac"] * T, p["time_ratio"])
    consts = ModulationConstants.build(zq)
    traj = BubbleTrajectory.leading(t, T, zq)
    export_trajectory_csv(traj, out / "trajectory.csv")
    ms = mu_star(t, T, zq)
    ode = float(np.max(np.abs(mu_star_dot(t, T, zq) + consts.beta_n * abs(zq) * np.sqrt(ms))))
    s = T - t
    e0 = float(np.max(np.abs(T0_apply(lambda x: np.ones_like(x), consts.gamma, T, 0.0, t) + s**2 / (consts.gamma + 2))))
    e1 = float(np.max(np.abs(T1_apply(lambda x: np.ones_like(x), T, 0.0, t)[:, 0] - s**2 / 2)))
    gfit = perturbation_gamma(T, zq)[0]
    report = {"beta": consts.beta_n, "alpha_star": consts.alpha_star, "gamma": consts.gamma,
              "mu_star_ode_residual": ode, "T0_error": e0, "T1_error": e1, "gamma_fit": gfit}
    checks = {"ode": ode < 1e-12, "T0": e0 < 1e-10, "T1": e1 < 1e-10, "gamma": abs(gfit - 1.0) < 0.02}
    return report, checks, ["trajectory.csv"]


def cmd_inner(p: dict, out: Path):
    from .inner import (WeightSpec, build_inner_operator, export_snapshots_csv, norm_source, sample_sources,
                        solve_inner)
    from .modulation import BubbleTrajectory, mu_star, time_grid

    T, zq = p["T"], p["zq"]
    w = WeightSpec(p["a"], p["nu"], p["R"])
    op = build_inner_operator(w.R, M=p["M"])
    t = time_grid(T, layer_scale=mu_star(0.0, T, zq) ** 2)
    traj = BubbleTrajectory.leading(t, T, zq)
    src = sample_sources(op.grid, t, T, w, n=p["n_sources"], seed=p["seed"])
    ratios, drifts = [], []
    first = None
    for h in src:
        sol = solve_inner(h, None, traj, w, op)
        first = first or sol
        ratios.append((abs(sol.ell) + sol.norms["grad"] + sol.norms["phi"]) / norm_source(h, w, T))
        drifts.append(sol.orth_drift)
    idx = np.unique(np.linspace(0, len(t) - 1, 9).astype(int))
    export_snapshots_csv(first, out / "inner_snapshots.csv", idx)
    report = {"Tin_constant": max(ratios), **{f"ratio_{k}": r for k, r in enumerate(ratios)},
              "orth_drift": max(drifts), "lambda_unstable_ball": op.lambda_unstable, "ell_first": first.ell}
    checks = {"finite": bool(np.isfinite(max(ratios))), "drift": max(drifts) <= 1e-8}
    return report, checks, ["inner_snapshots.csv"]


def cmd_outer(p: dict, out: Path):
    from .modulation import time_grid
    from .outer import barrier_slack, export_field_csv, outer_grid, sample_outer_sources, solve_outer, tune_barrier

    T, a = p["T"], p["a"]
    grid = outer_grid(p["M"])
    t = time_grid(T)
    bar = tune_barrier(a, T, grid, t)
    slacks, ratios = [], []
    first = None
    for g in sample_outer_sources(grid, t, T, a, n=p["n_sources"], seed=p["seed"]):
        f = solve_outer(g, grid, t, T, a)
        first = first or f
        slacks.append(barrier_slack(f, g, bar))
        ratios.append(f.norms["ratio"])
    idx = np.unique(np.linspace(0, len(t) - 1, 9).astype(int))
    export_field_csv(first, out / "outer_field.csv", idx)
    with (out / "outer_norms.csv").open("w") as fh:
        fh.write("t,psi_sup\n")
        for k in range(len(t)):
            fh.write(f"{t[k]!r},{float(np.max(np.abs(first.psi[k])))!r}\n")
    report = {"barrier_c": bar.c, "barrier_gamma_sep": bar.gamma_sep, "barrier_min_margin": bar.min_margin,
              "barrier_ceiling": bar.ceiling, "min_slack": min(slacks), "max_ratio": max(ratios)}
    checks = {"margin": bar.min_margin >= 0, "comparison": min(slacks) >= 0}
    return report, checks, ["outer_field.csv", "outer_norms.csv"]


def glue_config(p: dict):
    from .gluing import GluingConfig
    from .inner import WeightSpec

    return GluingConfig(T=p["T"], eps_frac=p["eps_frac"], weights=WeightSpec(p["a"], p["nu"], p["R"]),
                        zstar_amp=p["zstar_amp"], delta0=p["delta0"], delta1=p["delta1"], max_iters=p["max_iters"],
                        damping=p["damping"], tol=p["tol"], time_ratio=p["time_ratio"], inner_M=p["inner_M"],
                        outer_M=p["outer_M"], outer_substeps=p["outer_substeps"])


def glue_checks(res) -> dict:
    rows = [h for h in res.history if "iteration" in h]
    contr = [h["contraction"] for h in rows if h["iteration"] > 2 and np.isfinite(h["contraction"])]
    return {"converged": res.converged, "contraction": bool(contr) and max(contr) < 0.5,
            "mu_slope": abs(res.mu_fit.slope - 2.0) <= 0.1, "u_slope": abs(res.u_fit.slope + 3.0) <= 0.15,
            "decades": res.mu_fit.decades >= 1.0, "type_ii": res.type_ii,
            "projection": res.projections_max < 1e-8, "audit": res.audit["total"] <= 10 * res.audit["floor"]}


def cmd_glue(p: dict, out: Path):
    from .gluing import export_glue_csv, export_history_csv, run_gluing

    res = run_gluing(glue_config(p))
    export_glue_csv(res, out / "glue.csv")
    export_history_csv(res, out / "glue_history.csv")
    rows = [h for h in res.history if "iteration" in h]
    contr = [h["contraction"] for h in rows if h["iteration"] > 2 and np.isfinite(h["contraction"])]
    report = {"converged": res.converged, "iterations": len(rows), "max_contraction": max(contr) if contr else np.nan,
              "mu_slope": res.mu_fit.slope, "u_slope": res.u_fit.slope, "fit_decades": res.mu_fit.decades,
              "type_ii": res.type_ii, "ell": res.state.ell, "projection_max": res.projections_max,
              **{f"audit_{k}": v for k, v in res.audit.items()}, **{f"norm_{k}": v for k, v in res.norms.items()}}
    return report, glue_checks(res), ["glue.csv", "glue_history.csv"]


def cmd_ratefit(p: dict, out: Path):
    import csv

    from .gluing import rate_fit

    path = Path(p["input"])
    if not path.is_absolute() and not path.exists():
        path = out / path
    if not path.is_file():
        raise UsageError(f"input file not found: {p['input']}")
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    try:
        t = np.array([float(r["t"]) for r in rows])
        mu = np.array([float(r["mu"]) for r in rows])
        us = np.array([float(r["u_sup"]) for r in rows])
    except KeyError as exc:
        raise UsageError(f"input lacks column {exc}") from exc
    except ValueError as exc:
        raise UsageError(f"malformed number in {path}: {exc}") from exc
    T = p["T"]
    win = (0.0, p["window_hi_frac"] * T)
    fm, fu = rate_fit(t, mu, T, win), rate_fit(t, us, T, win)
    s = T - t
    last = s <= s.min() * 10 * (1 + 1e-12)
    type_ii = bool(np.all(np.diff(s[last] ** 0.75 * us[last]) > 0))
    report = {"mu_slope": fm.slope, "u_slope": fu.slope, "decades": fm.decades, "mu_rms": fm.rms,
              "u_rms": fu.rms, "type_ii": type_ii}
    checks = {"decades": fm.decades >= 1.0, "mu_slope": abs(fm.slope - 2) <= 0.1,
              "u_slope": abs(fu.slope + 3) <= 0.15, "type_ii": type_ii}
    (out / "ratefit.csv").write_text("quantity,slope,intercept,rms,n_points,decades\n" + "".join(
        f"{n},{f.slope!r},{f.intercept!r},{f.rms!r},{f.n_points},{f.decades!r}\n" for n, f in (("mu", fm), ("u_sup", fu))))
    return report, checks, ["ratefit.csv"]


COMMANDS = {"profile": cmd_profile, "spectrum": cmd_spectrum, "modulate": cmd_modulate, "inner": cmd_inner,
            "outer": cmd_outer, "glue": cmd_glue, "ratefit": cmd_ratefit}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        params = resolve_params(args.command, args)
        out = output_dir(args)
    except (UsageError, ValueError) as exc:
        print(f"critheat {args.command}: error: {exc}", file=sys.stderr)
        return 1
    try:
        report, checks, files = COMMANDS[args.command](params, out)
    except UsageError as exc:
        print(f"critheat {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, ArithmeticError) as exc:
        # numerical failures (divergence, fit faults) count as failed tolerance checks
        report, checks, files = {"failure": f"{type(exc).__name__}: {exc}"}, {"run": False}, []
    for k, v in checks.items():
        report[f"check_{k}"] = bool(v)
    passed = all(bool(v) for v in checks.values())
    report["passed"] = passed
    write_report(out / f"{args.command}_report.txt", report)
    write_manifest(out, args.command, params, files + [f"{args.command}_report.txt"], report, passed)
    for k, v in checks.items():
        print(f"{args.command}: {k}: {'PASS' if v else 'FAIL'}")
    print(f"{args.command}: {'PASS' if passed else 'FAIL'} (artifacts in {out})")
    return 0 if passed else 2


if __name__ == "__main__":
    sys.exit(main())
