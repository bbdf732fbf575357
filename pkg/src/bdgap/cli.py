"""Batch driver: one JSON scenario in, report files and a summary out.

Usage::

    bdgap scenario.json [--mode MODE] [--z Z | --mass RHO] [--n N]
                        [--t-end T] [--eta ETA] [--out PREFIX]

Exit status is 0 on success, 1 when a computation fails and 2 when the
scenario does not validate.
"""
import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .coeffs import CoefficientModel, Kind
from .equilibrium import equilibrium_profile, z_of_mass
from .errors import BDError, ConfigError
from . import dynamics, spectral

MODES = ("equilibrium", "spectrum", "simulate", "sweep", "hardy")
DEFAULTS = {
    "n": 400, "t_end": 40.0, "eta": None, "nu": None, "tol": 1e-12,
    "rtol": 1e-10, "atol": 1e-14, "snapshot_every": 0.1, "eps": 1e-2,
    "seed": 0, "delta": 0.0, "w_grid": None, "out": "bdgap",
    "dump_states": False,
}
KNOWN = set(DEFAULTS) | {"model", "mode", "z", "mass"}


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump(obj):
    return json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n"


def resolve_config(doc, overrides=None):
    """Merge flag overrides into a scenario and validate every field.

    Returns ``(config, model)``.  Raises :class:`ConfigError` naming the
    offending field(s).
    """
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a JSON object")
    cfg = dict(DEFAULTS)
    cfg.update(doc)
    for key, val in (overrides or {}).items():
        if val is not None:
            cfg[key] = val
    unknown = sorted(set(cfg) - KNOWN)
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
    if "model" not in cfg:
        raise ConfigError("field 'model' is required")
    model = CoefficientModel.from_dict(cfg["model"])
    mode = cfg.get("mode")
    if mode not in MODES:
        raise ConfigError(f"field 'mode' must be one of {', '.join(MODES)}, got {mode!r}")
    has_z, has_mass = cfg.get("z") is not None, cfg.get("mass") is not None
    if mode != "sweep":
        if has_z and has_mass:
            raise ConfigError("fields 'z' and 'mass' are mutually exclusive; give exactly one")
        if not (has_z or has_mass):
            raise ConfigError(f"mode {mode!r} needs exactly one of 'z' or 'mass'")
        key = "z" if has_z else "mass"
        if not _positive(cfg[key]):
            raise ConfigError(f"field {key!r} must be a positive number")
    if not (isinstance(cfg["n"], int) and cfg["n"] >= 3):
        raise ConfigError("field 'n' must be an integer >= 3")
    for key in ("t_end", "tol", "rtol", "atol", "snapshot_every", "eps"):
        if not _positive(cfg[key]):
            raise ConfigError(f"field {key!r} must be a positive number")
    for key in ("eta", "nu"):
        if cfg[key] is not None and not _positive(cfg[key]):
            raise ConfigError(f"field {key!r} must be a positive number")
    if mode == "sweep":
        if model.kind not in (Kind.PT, Kind.CF):
            raise ConfigError("mode 'sweep' needs a PowerLawPT or SurfaceTensionCF model")
        grid = cfg["w_grid"]
        if grid is not None and (not isinstance(grid, list) or not grid
                                 or not all(_positive(w) for w in grid)):
            raise ConfigError("field 'w_grid' must be a nonempty list of positive numbers")
    if not isinstance(cfg["out"], str) or not cfg["out"]:
        raise ConfigError("field 'out' must be a nonempty path prefix")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("field 'seed' must be an integer")
    cfg["model"] = model.to_dict()
    cfg["mode"] = mode
    return cfg, model


def _positive(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and x > 0 and math.isfinite(x)


def _z(cfg, model):
    if cfg.get("z") is not None:
        return float(cfg["z"])
    return z_of_mass(model, float(cfg["mass"]), tol=1e-12)


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return str(path)


def run_equilibrium(cfg, model, prefix):
    z = _z(cfg, model)
    profile = equilibrium_profile(model, z, cfg["n"], tol=cfg["tol"])
    files = [_write(Path(f"{prefix}_profile.json"), _dump(profile.to_dict()))]
    results = {"z": z, "mass": profile.mass, "m2": profile.m2, "m3": profile.m3,
               "a_quantity": profile.a_quantity, "total": profile.total}
    checks = {"mass_positive": profile.mass > 0}
    return results, checks, files


def run_spectrum(cfg, model, prefix):
    z = _z(cfg, model)
    report = spectral.spectral_report(model, z, cfg["n"], delta=cfg["delta"],
                                      tol=cfg["tol"])
    files = [_write(Path(f"{prefix}_spectrum.json"), _dump(report.to_dict()))]
    lo, hi = report.lambda1_bracket
    checks = {
        "lambda_lo_le_numeric": report.lambda_lo <= report.lambda_numeric + 1e-8,
        "numeric_le_lambda_hi": report.lambda_numeric <= report.lambda_hi + 1e-8,
        "hardy_matches_B": (not math.isfinite(report.b_quantity)) or
        abs(report.hardy_b - report.b_quantity) <= 1e-9 * report.b_quantity,
        "lambda1_in_bracket": lo - 1e-8 <= report.lambda1_numeric <= hi + 1e-8,
    }
    return report.to_dict(), checks, files


def run_simulate(cfg, model, prefix):
    z = _z(cfg, model)
    n = cfg["n"]
    profile = equilibrium_profile(model, z, n, tol=cfg["tol"])
    state0 = dynamics.perturbed_equilibrium(profile, n, cfg["eps"], cfg["seed"])
    controls = dict(rtol=cfg["rtol"], atol=cfg["atol"],
                    snapshot_every=cfg["snapshot_every"], profile=profile,
                    eta=cfg["eta"], nu=cfg["nu"], keep_states=cfg["dump_states"])
    traj = dynamics.integrate(model, state0, cfg["t_end"], controls)
    files = [_write(Path(f"{prefix}_trajectory.csv"), traj.to_csv())]
    if cfg["dump_states"]:
        states = [[float(v) for v in s.c] for s in traj.states]
        files.append(_write(Path(f"{prefix}_states.json"), json.dumps(states) + "\n"))
    fit = dynamics.fit_decay_rate(np.column_stack([traj.times, traj.column("l1_dist")]))
    b = spectral.quantity_B(profile, model, cfg["tol"])
    lo, hi = spectral.gap_bounds(profile, b, profile.m2, profile.m3)
    h = traj.column("H")
    results = {"z": z, "B": b, "inv_B": 1.0 / b, "lambda_lo": lo, "lambda_hi": hi,
               "rate": fit.rate, "r2": fit.r2, "fit_window": list(fit.window),
               "eta": traj.eta, "nu": traj.nu, "mass_drift": traj.mass_drift,
               "clamped": traj.clamped}
    checks = {
        "mass_conserved": not traj.flagged,
        "H_nonincreasing": bool(np.all(np.diff(h) <= 1e-10)),
        "Fz_nonnegative": bool(np.all(traj.column("Fz") >= 0)),
        "rate_above_0.9_lambda_lo": fit.rate >= 0.9 * lo,
        "rate_within_bracket": lo * 0.9 <= fit.rate and (fit.rate <= hi or not math.isfinite(hi)),
    }
    return results, checks, files


def run_sweep(cfg, model, prefix):
    grid = cfg["w_grid"] or list(spectral.DEFAULT_W_GRID)
    rows, slope = spectral.critical_sweep(model, grid, tol=cfg["tol"])
    files = [_write(Path(f"{prefix}_sweep.csv"), spectral.sweep_csv(rows))]
    alpha, mu = model.alpha, model.mu
    predicted = -2.0 + alpha / (1.0 - mu) if alpha < 2 * (1 - mu) else 0.0
    ok = [r for r in rows if not r.error]
    results = {"fitted_exponent": slope, "predicted_exponent": predicted,
               "rows": [{"w": r.w, "z": r.z, "B": r.b, "ratio_min": r.ratio_min,
                         "ratio_max": r.ratio_max, "error": r.error} for r in rows]}
    checks = {
        "all_rows_certified": len(ok) == len(rows),
        "tail_ratio_bounded": all(0 < r.ratio_min <= r.ratio_max < np.inf for r in ok),
        "exponent_near_prediction": abs(slope - predicted) <= 0.15,
    }
    return results, checks, files


def run_hardy(cfg, model, prefix):
    z = _z(cfg, model)
    n = cfg["n"]
    profile = equilibrium_profile(model, z, n + 1, tol=cfg["tol"])
    lq = profile.log_scriptQ
    mu = np.exp(lq[1:])
    nu = np.exp(model.log_a(np.arange(1, n + 1)) + lq[:-1])
    b_h, k, ratio = spectral.hardy_bracket(mu, nu)
    b = spectral.quantity_B(profile, model, cfg["tol"])
    results = {"z": z, "b_hardy": b_h, "witness_k": k, "witness_ratio": ratio,
               "B": b, "A_bracket": [b_h, 4 * b_h]}
    files = [_write(Path(f"{prefix}_hardy.json"), _dump(results))]
    checks = {"witness_ratio_ge_b": ratio >= b_h * (1 - 1e-6),
              "hardy_matches_B": abs(b_h - b) <= 1e-9 * b if math.isfinite(b) else False}
    return results, checks, files


RUNNERS = {"equilibrium": run_equilibrium, "spectrum": run_spectrum,
           "simulate": run_simulate, "sweep": run_sweep, "hardy": run_hardy}


def run(cfg, model):
    """Execute a validated scenario; returns the summary dictionary."""
    prefix = cfg["out"]
    results, checks, files = RUNNERS[cfg["mode"]](cfg, model, prefix)
    summary = {"config": cfg, "results": results, "checks": checks,
               "passed": all(checks.values()), "files": files}
    _write(Path(f"{prefix}_summary.json"), _dump(summary))
    return summary


def build_parser():
    p = argparse.ArgumentParser(
        prog="bdgap", description="Becker-Doring equilibria, spectral gap and dynamics.")
    p.add_argument("config", help="scenario JSON file")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--z", type=float)
    p.add_argument("--mass", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--out")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k != "config"}
    try:
        doc = json.loads(Path(args.config).read_text())
        if args.z is not None and args.mass is None:
            doc.pop("mass", None)
        if args.mass is not None and args.z is None:
            doc.pop("z", None)
        cfg, model = resolve_config(doc, overrides)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"bdgap: invalid scenario: {exc}", file=sys.stderr)
        return 2
    try:
        summary = run(cfg, model)
    except BDError as exc:
        print(f"bdgap: {cfg['mode']} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(_dump(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
