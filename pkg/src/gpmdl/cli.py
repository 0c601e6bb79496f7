"""Command-line front end: ``bounds``, ``train`` and ``report``.

Each subcommand reads one JSON config (schema version 1, unknown keys
rejected) and writes CSV, SVG and JSON files under ``--out``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
``GPMDL_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from . import figures
from .bounds import LOG_BASES, BoundSpec, RiskPair, evaluate_bounds
from .data import _as_spec, generate
from .nets import (
    REGULARIZERS,
    NonFiniteLossError,
    TrainConfig,
    estimate_mdl,
    evaluate,
    fit_model,
    save_checkpoint,
)
from .svg import line_chart

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


# -- config schema -------------------------------------------------------------------

_GRID = {"start": (float, None), "stop": (float, None), "num": (int, None)}

BOUNDS_SCHEMA = {
    "version": (int, 1),
    "n": (int, 50000),
    "C": (int, 10),
    "emp_risks": (list, [0.05, 0.01]),
    "mdl_over_n": (dict, {"start": 0.0, "stop": 0.5, "num": 101}, _GRID),
    "tv": ((float, str), "sqrt_C_over_n"),
    "fig1_emp_risk": (float, 0.05),
    "gen_errors": (dict, {"start": 0.005, "stop": 0.95, "num": 100}, _GRID),
    "hc_pairs": (list, [[0.05, 0.3], [0.05, 0.15], [0.2, 0.6]]),
    "hc_eps": (dict, {"start": 0.0, "stop": 0.2, "num": 81}, _GRID),
}

TRAIN_SCHEMA = {
    "version": (int, 1),
    "data": (dict, {}, {
        "n": (int, 2000),
        "C": (int, 4),
        "D": (int, 32),
        "views": (list, ["Medium", "Medium"]),
        "separation": (float, 3.0),
        "seed": ((int, type(None)), None),
    }),
    "train": (dict, {}, {
        "epochs": (int, 30),
        "batch_size": (int, 64),
        "lr": (float, 1e-3),
        "latent_dim": (int, 8),
        "hidden": (list, [64, 64]),
        "n_components": (int, 4),
        "samples_train": (int, 1),
        "samples_test": (int, 5),
        "init_factor": (int, 8),
    }),
    "runs": (list, None),
    "seeds": (list, [0, 1, 2, 3, 4]),
    "delta": (float, 0.05),
}

RUN_SCHEMA = {
    "name": (str, None),
    "regularizer": (str, None),
    "lams": (list, [0.0]),
    "prior": (dict, {}),
}


def _validate(cfg: Any, schema: dict, path: str = "") -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    unknown = sorted(set(cfg) - set(schema))
    if unknown:
        raise ConfigError(f"{path + '.' if path else ''}{unknown[0]}: unknown key")
    out = {}
    for key, spec in schema.items():
        kpath = f"{path}.{key}" if path else key
        types, default = spec[0], spec[1]
        types = types if isinstance(types, tuple) else (types,)
        if key not in cfg:
            if default is None and type(None) not in types:
                raise ConfigError(f"{kpath}: required")
            value = json.loads(json.dumps(default))
        else:
            value = cfg[key]
        if float in types and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, types) or isinstance(value, bool):
            names = "/".join(t.__name__ for t in types)
            raise ConfigError(f"{kpath}: expected {names}, got {type(value).__name__}")
        if len(spec) > 2 and isinstance(value, dict):
            value = _validate(value, spec[2], kpath)
        out[key] = value
    if "version" in out and out["version"] != 1:
        raise ConfigError(f"{path + '.' if path else ''}version: unsupported schema version {out['version']}")
    return out


def _grid(g: dict, path: str) -> np.ndarray:
    if g["num"] < 1:
        raise ConfigError(f"{path}.num: must be >= 1")
    return np.linspace(g["start"], g["stop"], g["num"])


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def validate_bounds_config(raw: dict) -> dict:
    cfg = _validate(raw, BOUNDS_SCHEMA)
    if cfg["n"] < 10:
        raise ConfigError("n: the gap bound needs n >= 10")
    if cfg["C"] < 1:
        raise ConfigError("C: must be >= 1")
    if isinstance(cfg["tv"], str) and cfg["tv"] != "sqrt_C_over_n":
        raise ConfigError("tv: expected a number or 'sqrt_C_over_n'")
    for i, e in enumerate(cfg["emp_risks"]):
        if not isinstance(e, (int, float)) or not 0 <= e <= 1:
            raise ConfigError(f"emp_risks[{i}]: expected a risk in [0, 1]")
    for i, p in enumerate(cfg["hc_pairs"]):
        if not (isinstance(p, list) and len(p) == 2 and all(isinstance(v, (int, float)) and 0 <= v <= 1 for v in p)):
            raise ConfigError(f"hc_pairs[{i}]: expected [x1, x2] in [0, 1]")
    for key in ("mdl_over_n", "gen_errors", "hc_eps"):
        _grid(cfg[key], key)
    return cfg


def validate_train_config(raw: dict) -> dict:
    cfg = _validate(raw, TRAIN_SCHEMA)
    runs = []
    for i, r in enumerate(cfg["runs"]):
        run = _validate(r, RUN_SCHEMA, f"runs[{i}]")
        if run["regularizer"] not in REGULARIZERS:
            raise ConfigError(f"runs[{i}].regularizer: expected one of {REGULARIZERS}")
        for j, lam in enumerate(run["lams"]):
            if not isinstance(lam, (int, float)) or lam < 0:
                raise ConfigError(f"runs[{i}].lams[{j}]: expected a nonnegative number")
        runs.append(run)
    if not runs:
        raise ConfigError("runs: at least one run is required")
    names = [r["name"] for r in runs]
    if len(set(names)) != len(names):
        raise ConfigError("runs: names must be unique")
    cfg["runs"] = runs
    if not cfg["data"]["views"]:
        raise ConfigError("data.views: at least one view is required")
    for i, v in enumerate(cfg["data"]["views"]):
        try:
            _as_spec(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"data.views[{i}]: {exc}") from None
    for i, s in enumerate(cfg["seeds"]):
        if not isinstance(s, int) or isinstance(s, bool):
            raise ConfigError(f"seeds[{i}]: expected an integer")
    try:
        TrainConfig(**{k: v for k, v in cfg["train"].items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None
    return cfg


# -- CSV helpers ---------------------------------------------------------------------------


def write_table(path, header: List[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_table(path, types: Dict[str, type] = None):
    """Strictly parse a CSV written by :func:`write_table`; columns default to float."""
    types = types or {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        out = {h: [] for h in header}
        for line, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{line}: expected {len(header)} columns, got {len(row)}")
            for h, cell in zip(header, row):
                try:
                    out[h].append(types.get(h, float)(cell))
                except ValueError:
                    raise ValueError(f"{path}:{line}: bad value {cell!r} in column {h}") from None
    return out


# -- bounds --------------------------------------------------------------------------------


def cmd_bounds(cfg: dict, out: Path, log_base: str = "mixed") -> dict:
    """Write the bound tables and plots; returns the summary dict."""
    out.mkdir(parents=True, exist_ok=True)
    n, C = cfg["n"], cfg["C"]
    tv = figures.default_tv(n, C) if cfg["tv"] == "sqrt_C_over_n" else float(cfg["tv"])
    if not 0 <= tv <= 2:
        raise ConfigError("tv: must lie in [0, 2]")
    emp = [float(e) for e in cfg["emp_risks"]]

    r_grid = _grid(cfg["mdl_over_n"], "mdl_over_n")
    curves = figures.bound_curves(n, C, emp, r_grid, tv, log_base)
    header = ["mdl_over_n", "thm1_bound"] + [f"thm2_gen_bound_emp_{e:g}" for e in emp]
    write_table(out / "bounds_curve.csv", header, curves)
    series = {"thm1_bound": (curves[:, 0], curves[:, 1])}
    for j, e in enumerate(emp):
        series[f"thm2_gen_bound, emp. risk {e:g}"] = (curves[:, 0], curves[:, 2 + j])
    (out / "bounds_curve.svg").write_text(
        line_chart(series, "Generalization bounds", "MDL / n", "bound on gen. error")
    )

    g_grid = _grid(cfg["gen_errors"], "gen_errors")
    res = figures.residual_table(cfg["fig1_emp_risk"], g_grid, tv)
    write_table(out / "residual.csv", ["gen_error", "residual"], res)
    (out / "residual.svg").write_text(
        line_chart(
            {"residual": (res[:, 0], res[:, 1]), "gen. error": (res[:, 0], res[:, 0])},
            f"Residual integrand, emp. risk {cfg['fig1_emp_risk']:g}", "generalization error", "value",
        )
    )

    pairs = [tuple(p) for p in cfg["hc_pairs"]]
    hc = figures.hc_table(pairs, _grid(cfg["hc_eps"], "hc_eps"))
    write_table(out / "hc.csv", ["eps"] + [f"h_C_{a:g}_{b:g}" for a, b in pairs], hc)
    (out / "hc.svg").write_text(
        line_chart({f"({a:g}, {b:g})": (hc[:, 0], hc[:, 1 + j]) for j, (a, b) in enumerate(pairs)},
                   "h_C", "eps", "h_C")
    )

    ratio = res[:, 1] / np.where(res[:, 0] > 0, res[:, 0], np.nan)
    summary = {
        "n": n,
        "C": C,
        "tv": tv,
        "log_base": log_base,
        "crossover": {f"{e:g}": figures.crossover(n, C, e, tv, log_base, hi=float(r_grid[-1]) or 0.5) for e in emp},
        "residual_max_ratio": float(np.nanmax(ratio)) if ratio.size else None,
        "thm1_at_zero_mdl": math.sqrt((C + 2) / n),
    }
    (out / "bounds_summary.json").write_text(json.dumps(summary, indent=1))
    return summary


# -- training -----------------------------------------------------------------------------


def _train_config(cfg: dict, run: dict, lam: float, seed: int) -> TrainConfig:
    t = dict(cfg["train"])
    t["hidden"] = tuple(t["hidden"])
    return TrainConfig(regularizer=run["regularizer"], lam=float(lam), seed=int(seed), prior=dict(run["prior"]), **t)


def run_one(cfg: dict, run: dict, lam: float, seed: int, out: Path = None, log_base: str = "mixed") -> dict:
    """Train one (run, lambda, seed) cell and evaluate it; files go to ``out`` if given."""
    d = cfg["data"]
    K = len(d["views"])
    data_seed = seed if d["seed"] is None else d["seed"]
    ds = generate(n=d["n"], C=d["C"], D=d["D"], K=K, view_specs=d["views"], separation=d["separation"], seed=data_seed)
    tcfg = _train_config(cfg, run, lam, seed)
    rows = []

    def track(epoch, model, engine, rec):
        tr = evaluate(model, ds.views, ds.y, tcfg.samples_test, seed)[0]
        gh = evaluate(model, ds.ghost_views, ds.ghost_y, tcfg.samples_test, seed)[0]
        rows.append([epoch, rec["loss"], rec["ce"], rec["reg"], tr, gh])

    try:
        model, engine, _ = fit_model(ds.views, ds.y, tcfg, n_classes=d["C"], callback=track if out else None)
    except NonFiniteLossError as exc:
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            state = getattr(exc, "state", None)
            if state is not None:
                save_checkpoint(state.model, out / "failed_model")
            (out / "failure.json").write_text(json.dumps({"error": str(exc), "config": tcfg.to_dict()}, indent=1))
        raise
    acc_tr, risk_tr, _ = evaluate(model, ds.views, ds.y, tcfg.samples_test, seed)
    acc_gh, risk_gh, _ = evaluate(model, ds.ghost_views, ds.ghost_y, tcfg.samples_test, seed)
    mdl, _ = estimate_mdl(model, engine, ds.views, ds.y)
    p_tr = np.bincount(ds.y, minlength=d["C"]) / ds.y.size
    p_gh = np.bincount(ds.ghost_y, minlength=d["C"]) / ds.ghost_y.size
    tv = float(np.abs(p_tr - p_gh).sum())
    spec = BoundSpec(n=d["n"], C=d["C"], mdl=max(mdl, 0.0), tv=min(tv, 2.0), delta=cfg["delta"])
    report = evaluate_bounds(spec, RiskPair(risk_tr, risk_gh), log_base=log_base)
    result = {
        "run": run["name"],
        "regularizer": run["regularizer"],
        "lam": float(lam),
        "seed": int(seed),
        "train_acc": acc_tr,
        "ghost_acc": acc_gh,
        "mdl": mdl,
        "mdl_clamped": mdl < 0,
        "tv": tv,
        "bounds": report.to_dict(),
    }
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_table(out / "metrics.csv", ["epoch", "loss", "ce", "reg", "train_acc", "ghost_acc"], rows)
        save_checkpoint(model, out / "model")
        if engine.stateful:
            (out / "prior.json").write_text(json.dumps([json.loads(s) for s in engine.snapshot()]))
        (out / "bound_report.json").write_text(json.dumps(result, indent=1))
    return result


def cmd_train(cfg: dict, out: Path, log_base: str = "mixed", seeds=None) -> List[dict]:
    """Train every (run, lambda, seed) cell; writes per-cell directories and ``results.json``."""
    out.mkdir(parents=True, exist_ok=True)
    seeds = cfg["seeds"] if seeds is None else seeds
    (out / "config.json").write_text(json.dumps(dict(cfg, seeds=seeds), indent=1))
    results = []
    for run in cfg["runs"]:
        for lam in run["lams"]:
            for seed in seeds:
                cell = out / "runs" / run["name"] / f"lam_{lam:g}" / f"seed_{seed}"
                results.append(run_one(cfg, run, lam, seed, cell, log_base))
    (out / "results.json").write_text(json.dumps(results, indent=1))
    write_table(
        out / "results.csv",
        ["run", "regularizer", "lam", "seed", "train_acc", "ghost_acc", "mdl", "thm1_bound", "thm2_gen_bound"],
        [
            [r["run"], r["regularizer"], r["lam"], r["seed"], r["train_acc"], r["ghost_acc"], r["mdl"],
             r["bounds"]["thm1_bound"], r["bounds"]["thm2_gen_bound"]]
            for r in results
        ],
    )
    return results


# -- report -----------------------------------------------------------------------------


def summarize(results: List[dict]) -> dict:
    """Mean/std per (run, lambda) over seeds and the best lambda per run by mean ghost accuracy."""
    cells: Dict[tuple, List[dict]] = {}
    order = []
    for r in results:
        key = (r["run"], float(r["lam"]))
        if key not in cells:
            cells[key] = []
            order.append(key)
        cells[key].append(r)
    table = []
    for run, lam in order:
        rs = cells[(run, lam)]
        gh = np.array([r["ghost_acc"] for r in rs])
        tr = np.array([r["train_acc"] for r in rs])
        table.append({
            "run": run, "regularizer": rs[0]["regularizer"], "lam": lam, "n_seeds": len(rs),
            "ghost_acc_mean": float(gh.mean()), "ghost_acc_std": float(gh.std()),
            "train_acc_mean": float(tr.mean()), "train_acc_std": float(tr.std()),
            "mdl_mean": float(np.mean([r["mdl"] for r in rs])),
        })
    best = {}
    for row in table:
        cur = best.get(row["run"])
        if cur is None or row["ghost_acc_mean"] > cur["ghost_acc_mean"]:
            best[row["run"]] = row
    return {"cells": table, "best": best}


def render_summary(summary: dict) -> str:
    lines = [f"{'run':<16}{'best lam':>10}{'ghost acc':>20}{'train acc':>20}{'seeds':>7}"]
    for run, row in summary["best"].items():
        lines.append(
            f"{run:<16}{row['lam']:>10g}"
            f"{row['ghost_acc_mean']:>13.4f} +- {row['ghost_acc_std']:.3f}"
            f"{row['train_acc_mean']:>13.4f} +- {row['train_acc_std']:.3f}{row['n_seeds']:>7d}"
        )
    return "\n".join(lines)


def cmd_report(run_dir: Path) -> dict:
    path = Path(run_dir) / "results.json"
    if not Path(run_dir).is_dir():
        raise FileNotFoundError(f"{run_dir}: run directory not found")
    if not path.is_file():
        raise FileNotFoundError(f"{path}: missing results file")
    results = json.loads(path.read_text())
    if not results:
        raise ConfigError(f"{path}: no results")
    summary = summarize(results)
    (Path(run_dir) / "report.json").write_text(json.dumps(summary, indent=1))
    return summary


# -- entry point --------------------------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(prog="gpmdl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("bounds", "train"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=name == "train", help="JSON config path")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, help="run only this seed")
        s.add_argument("--log-base", choices=LOG_BASES, default="mixed")
    r = sub.add_parser("report")
    r.add_argument("run_dir")
    return p


def _limit_threads():
    n = os.environ.get("GPMDL_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    _limit_threads()
    try:
        if args.command == "bounds":
            raw = load_config(args.config) if args.config else {}
            summary = cmd_bounds(validate_bounds_config(raw), Path(args.out), args.log_base)
            print(json.dumps(summary, indent=1))
        elif args.command == "train":
            cfg = validate_train_config(load_config(args.config))
            seeds = [args.seed] if args.seed is not None else None
            results = cmd_train(cfg, Path(args.out), args.log_base, seeds)
            print(render_summary(summarize(results)))
        else:
            print(render_summary(cmd_report(Path(args.run_dir))))
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
