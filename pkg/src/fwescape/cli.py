"""Command-line front end.

Configs are JSON documents with blocks ``model``, ``solver`` (ShootingConfig
fields), ``grid``, ``langevin`` (SimConfig fields), ``oracle`` and ``report``,
plus ``command``, ``output`` and ``format_version``. Unknown keys are errors.
A run summary (which embeds its resolved config) is itself a valid config.

Exit codes: 0 success, 1 validation or criterion failure, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from . import io
from .instanton import (FanError, ShootingConfig, StiffnessError, TrajectoryRejected, compare_to_oracle,
                        detect_crossings, fan_shoot, optimal_escape)
from .models import DoubleWell, Macrospin, MaierStein, ModelError
from .norms import GridSpec, bifurcation_scan, default_grid, find_and_classify_extrema, norm_grid

COMMANDS = ("instanton", "norm-map", "bifurcation", "langevin", "oracle-check", "report")
TOP_KEYS = {"format_version", "command", "model", "solver", "grid", "langevin", "oracle", "report", "output"}
MODEL_KEYS = {"model", "alpha", "D", "current_ratio", "omega_ratio"}
GRID_KEYS = {"bounds", "resolution", "param_range", "steps"}
ORACLE_KEYS = {"tolerance", "window"}
REPORT_KEYS = {"criteria", "tolerances"}
STATIONARY_KEYS = {"t_run", "n", "h"}


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# config handling


def _check_keys(block: dict, allowed: set, where: str):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be a mapping")
    bad = set(block) - allowed
    if bad:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(bad)}")


def _dataclass_keys(cls):
    return {f.name for f in fields(cls)}


def load_config(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if "config" in doc and "format_version" in doc:  # a run summary
        io.check_version(doc["format_version"])
        doc = doc["config"]
    return doc


def resolve_config(raw: dict, command: str, *, out=None, seed=None, threads=None) -> dict:
    """Validate keys, apply flag overrides and fill in every default."""
    from .acceptance import TOLERANCES
    from .langevin import SimConfig

    _check_keys(raw, TOP_KEYS, "config")
    if "format_version" in raw:
        io.check_version(raw["format_version"])
    if raw.get("command", command) != command:
        raise ConfigError(f"config is for command {raw['command']!r}, not {command!r}")
    cfg = {"format_version": io.FORMAT_VERSION, "command": command}

    model = dict(raw.get("model", {}))
    _check_keys(model, MODEL_KEYS, "model")
    name = model.get("model", "maier_stein")
    if name == "maier_stein":
        cfg["model"] = {"model": name, "alpha": float(model.get("alpha", 3.0))}
        extra = set(model) - {"model", "alpha"}
    elif name == "double_well":
        cfg["model"] = {"model": name}
        extra = set(model) - {"model"}
    elif name == "macrospin":
        cfg["model"] = {"model": name, "alpha": float(model.get("alpha", 0.01)), "D": float(model.get("D", 0.0)),
                        "current_ratio": float(model.get("current_ratio", 0.0)),
                        "omega_ratio": float(model.get("omega_ratio", 0.0))}
        extra = set()
    else:
        raise ConfigError(f"unknown model {name!r}")
    if extra:
        raise ConfigError(f"key(s) {sorted(extra)} do not apply to model {name!r}")

    solver = dict(raw.get("solver", {}))
    _check_keys(solver, _dataclass_keys(ShootingConfig), "solver")
    if threads is not None:
        solver["threads"] = threads
    cfg["solver"] = io.to_jsonable(asdict(ShootingConfig(**solver)))

    grid = dict(raw.get("grid", {}))
    _check_keys(grid, GRID_KEYS, "grid")
    cfg["grid"] = grid

    lang = dict(raw.get("langevin", {}))
    stationary = lang.pop("stationary", None)
    _check_keys(lang, _dataclass_keys(SimConfig) | {"write_paths"}, "langevin")
    write_paths = bool(lang.pop("write_paths", False))
    if seed is not None:
        lang["seed"] = seed
    if threads is not None:
        lang["threads"] = threads
    if command == "langevin":
        if "eps_noise" not in lang:
            raise ConfigError("langevin.eps_noise is required")
        cfg["langevin"] = io.to_jsonable(asdict(SimConfig(**lang)))
        cfg["langevin"]["write_paths"] = write_paths
        if stationary is not None:
            _check_keys(stationary, STATIONARY_KEYS, "langevin.stationary")
            cfg["langevin"]["stationary"] = {"t_run": 20.0, "n": 1000, "h": 1e-3, **stationary}
    elif lang or stationary:
        cfg["langevin"] = lang

    oracle = dict(raw.get("oracle", {}))
    _check_keys(oracle, ORACLE_KEYS, "oracle")
    cfg["oracle"] = {"window": list(oracle.get("window", [0.1, 0.05])), "tolerance": oracle.get("tolerance")}

    rep = dict(raw.get("report", {}))
    _check_keys(rep, REPORT_KEYS, "report")
    tols = dict(rep.get("tolerances", {}))
    bad = set(tols) - set(TOLERANCES)
    if bad:
        raise ConfigError(f"unknown tolerance key(s): {sorted(bad)}")
    cfg["report"] = {"criteria": rep.get("criteria"), "tolerances": tols}

    cfg["output"] = out if out is not None else raw.get("output", "out")
    return cfg


def build_model(block: dict, axis: str = "x"):
    name = block["model"]
    if name == "maier_stein":
        return MaierStein(block["alpha"])
    if name == "double_well":
        return DoubleWell()
    return Macrospin.from_ratios(block["alpha"], block["D"], block["current_ratio"], block["omega_ratio"], axis)


def _shooting(cfg) -> ShootingConfig:
    s = dict(cfg["solver"])
    if s.get("target") is not None:
        s["target"] = tuple(s["target"])
    return ShootingConfig(**s)


# --------------------------------------------------------------------------
# commands


def cmd_instanton(cfg: dict) -> dict:
    model = build_model(cfg["model"])
    sc = _shooting(cfg)
    out = cfg["output"]
    fan = fan_shoot(model, None, sc)
    rep = detect_crossings(fan, sc.match_tol, sc.momentum_tol, model=model)
    for tr in fan:
        io.write_trajectory(os.path.join(out, f"trajectory_{tr.seed_index:03d}.csv"), tr)
    summary = {
        "n_trajectories": len(fan),
        "crossings": len(rep),
        "crossing_pairs": [[c.i, c.j, c.point, c.mismatch] for c in rep.crossings],
        "momentum_tol": rep.momentum_tol,
        "trajectories": [{"seed_index": tr.seed_index, "stop_reason": tr.stop_reason, "action": tr.action,
                          "energy_residual": tr.meta["energy_residual"],
                          "speed_residual": tr.meta["speed_residual"]} for tr in fan],
    }
    if isinstance(model, Macrospin):
        exits = [tr.action for tr in fan if tr.stop_reason == "separatrix"]
        summary["optimal_action"] = min(exits) if exits else None
        if model.D == 0:
            reps = [compare_to_oracle(tr, model.alpha, model.I, effective=model.omega != 0,
                                      window=tuple(cfg["oracle"]["window"])) for tr in fan]
            summary["oracle_rms"] = max(r.rms for r in reps)
            summary["oracle_rms_pointwise"] = max(r.rms_raw for r in reps)
    else:
        res = optimal_escape(model, None, sc)
        for k, tr in enumerate(res.optimal):
            io.write_trajectory(os.path.join(out, f"optimal_{k}.csv"), tr)
        summary["optimal_action"] = res.optimal[0].action
        summary["optimal_count"] = len(res.optimal)
        summary["optimal_max_abs_y"] = [float(np.max(np.abs(tr.x[:, 1]))) for tr in res.optimal]
        summary["on_axis_optimum"] = all(v <= 1e-3 for v in summary["optimal_max_abs_y"])
    return summary


def _grid_spec(cfg, model):
    g = cfg["grid"]
    base = default_grid(model)
    bounds = tuple(tuple(b) for b in g.get("bounds", base.bounds))
    res = tuple(g.get("resolution", base.resolution))
    return GridSpec(bounds, res)


def cmd_norm_map(cfg: dict) -> dict:
    model = build_model(cfg["model"], axis="z")
    land = norm_grid(model, _grid_spec(cfg, model))
    ext = find_and_classify_extrema(land)
    io.write_landscape(os.path.join(cfg["output"], "landscape.csv"), land)
    kinds = [e.kind for e in ext]
    return {"extrema": [{"x": e.x, "kind": e.kind, "value": e.value, "eigenvalues": e.eigenvalues,
                         "refined": e.refined, "degenerate": e.degenerate} for e in ext],
            "counts": {k: kinds.count(k) for k in ("min", "max", "saddle")}}


def cmd_bifurcation(cfg: dict) -> dict:
    if cfg["model"]["model"] != "maier_stein":
        raise ConfigError("bifurcation scans the Maier-Stein alpha family")
    g = cfg["grid"]
    lo, hi = g.get("param_range", [3.0, 5.0])
    r = bifurcation_scan(MaierStein, (float(lo), float(hi)), int(g.get("steps", 41)))
    table = []
    for p in r.params:
        ext = find_and_classify_extrema(norm_grid(MaierStein(float(p)), GridSpec(((-0.25, 1.25), (-0.75, 0.75)),
                                                                                   (96, 96))))
        table.append({"alpha": p, "extrema": [{"x": e.x, "kind": e.kind, "value": e.value} for e in ext]})
    return {"found": r.found, "threshold": r.threshold, "bracket": r.bracket,
            "tracked": [{"alpha": p, "x": x, "kind": k, "transverse_eigenvalue": lam}
                        for p, x, k, lam in zip(r.params, r.locations, r.kinds, r.transverse)],
            "extrema_tables": table}


def cmd_langevin(cfg: dict) -> dict:
    from scipy.stats import kstest

    from .langevin import SimConfig, bimodality, simulate_escapes, stationary_energies, stationary_energy_cdf

    model = build_model(cfg["model"], axis="z")
    lang = dict(cfg["langevin"])
    write_paths = lang.pop("write_paths")
    stationary = lang.pop("stationary", None)
    if lang.get("x0") is not None:
        lang["x0"] = tuple(lang["x0"])
    sim = SimConfig(**lang)
    run = simulate_escapes(model, sim)
    out = cfg["output"]
    io.write_events(os.path.join(out, "events.csv"), run.events)
    if write_paths:
        for e in run.events:
            io.write_event_path(os.path.join(out, "paths", f"path_{e.realization:05d}.csv"), e)
    summary = {"censoring": run.summary(), "censored_realizations": run.censored,
               "failed_realizations": run.failed,
               "note": "noise level is a free choice; no value is fixed by the model definition"}
    sv = run.section_values()
    if len(sv) >= 4:
        summary["section_statistics"] = bimodality(sv)
    if stationary is not None:
        if not isinstance(model, Macrospin) or model.I != 0:
            raise ConfigError("the stationary check needs a macrospin with current_ratio = 0")
        e = stationary_energies(model, sim.eps_noise, stationary["h"], stationary["t_run"],
                                int(stationary["n"]), seed=sim.seed)
        ks = kstest(e, stationary_energy_cdf(model.D, 1.0 / sim.eps_noise))
        summary["stationary_check"] = {"ks_statistic": ks.statistic, "p_value": ks.pvalue,
                                       "passed": bool(ks.pvalue > 0.01), "n": len(e)}
    return summary


def cmd_oracle_check(cfg: dict) -> dict:
    model = build_model(cfg["model"])
    if not isinstance(model, Macrospin) or model.D != 0:
        raise ConfigError("the closed-form oracle covers the uniaxial macrospin (D = 0)")
    fan = fan_shoot(model, None, _shooting(cfg))
    tilted = model.omega != 0
    tol = cfg["oracle"]["tolerance"] or (5e-2 if tilted else 1e-2)
    reps = [compare_to_oracle(tr, model.alpha, model.I, effective=tilted, window=tuple(cfg["oracle"]["window"]))
            for tr in fan]
    rms = max(r.rms for r in reps)
    for tr in fan:
        io.write_trajectory(os.path.join(cfg["output"], f"trajectory_{tr.seed_index:03d}.csv"), tr)
    return {"oracle_rms": rms, "oracle_rms_pointwise": max(r.rms_raw for r in reps), "tolerance": tol,
            "passed": rms <= tol, "I_used": reps[0].I_used, "orientation": reps[0].orientation,
            "_exit": 0 if rms <= tol else 1}


def cmd_report(cfg: dict) -> dict:
    from .acceptance import run_acceptance

    res = run_acceptance(cfg["report"]["criteria"], cfg["report"]["tolerances"])
    for r in res:
        print(r.line())
    failed = [r.id for r in res if not r.passed]
    return {"criteria": [asdict(r) for r in res], "failed": failed, "all_passed": not failed,
            "_exit": 1 if failed else 0}


HANDLERS = {"instanton": cmd_instanton, "norm-map": cmd_norm_map, "bifurcation": cmd_bifurcation,
            "langevin": cmd_langevin, "oracle-check": cmd_oracle_check, "report": cmd_report}


# --------------------------------------------------------------------------
# entry point


def _error_record(out, kind, exc, code):
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    diag = getattr(exc, "diagnostics", None)
    if diag is None and len(getattr(exc, "args", ())) > 1:
        diag = exc.args[1]
    if diag is not None:
        rec["diagnostics"] = diag
    print(json.dumps(io.to_jsonable(rec)), file=sys.stderr)
    if out:
        try:
            io.write_json(os.path.join(out, "error.json"), rec)
        except OSError:
            pass
    return code


def run_command(command, config_path=None, out=None, seed=None, threads=None) -> int:
    cfg = None
    try:
        raw = load_config(config_path) if config_path else {}
        cfg = resolve_config(raw, command, out=out, seed=seed, threads=threads)
        summary = HANDLERS[command](cfg)
    except (ConfigError, ModelError, ValueError, KeyError, TypeError, io.FormatVersionError) as exc:
        return _error_record(cfg["output"] if cfg else out, "validation", exc, 1)
    except (TrajectoryRejected, StiffnessError, FanError, NumericalFailure, FloatingPointError,
            ArithmeticError) as exc:
        return _error_record(cfg["output"], "numerical", exc, 2)
    code = summary.pop("_exit", 0)
    io.write_json(os.path.join(cfg["output"], "summary.json"), {"config": cfg, "results": summary})
    return code


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fwescape", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config (or an earlier summary.json)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int)
    a = ap.parse_args(argv)
    return run_command(a.command, a.config, a.out, a.seed, a.threads)


if __name__ == "__main__":
    sys.exit(main())
