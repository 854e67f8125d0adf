"""Command-line interface: ``fqr fit | tune | bootstrap | simulate``.

Every run writes its outputs plus ``manifest.json`` into ``--out``; JSON
outputs embed the manifest under ``"manifest"`` and CSV outputs start with a
``# fqr-manifest`` comment line. ``fqr replay manifest.json`` reruns a
recorded command. Exit codes: 0 success, 2 input error, 3 convergence
failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import warnings
from dataclasses import replace
from importlib import metadata, resources
from pathlib import Path

import numpy as np

from .basis import build_basis, compute_gram_set
from .design import DataError, FunctionalDataset, assemble_design, load_csv, read_manifest
from .inference import (BootstrapError, alpha_intervals, build_pcb, build_scb, wild_bootstrap,
                        write_alpha_table)
from .simlab import SCENARIOS, SimScenario, run_study, write_replicates_jsonl, write_sweep_csv
from .solver import ConvergenceError, FitResult, SolverConfig, fit_close, fit_sql
from .tune import TuneGrid, default_grid, n_threads, tune_fit, write_score_table

logger = logging.getLogger("fqr")

EXIT_INPUT = 2
EXIT_CONVERGENCE = 3


class InputError(Exception):
    """Bad command-line input (exit code 2)."""


# ---------------------------------------------------------------- manifest


def tool_version() -> str:
    try:
        return metadata.version("fqr")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(command: str, args: dict, config: dict | None, seed, inputs: dict) -> dict:
    return {
        "command": command,
        "args": args,
        "config": config,
        "seed": seed,
        "inputs": {k: {"path": str(v), "sha256": file_hash(v)} for k, v in inputs.items()},
        "version": tool_version(),
    }


def _f17(v) -> str:
    return format(float(v), ".17g")


def write_csv(path, header, rows, manifest) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# fqr-manifest " + json.dumps(manifest, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _f17(v) for v in row])


def read_csv(path) -> tuple[list, list, dict | None]:
    """Read a CSV written by this tool: ``(header, rows, manifest)``."""
    manifest = None
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# fqr-manifest "):
            manifest = json.loads(line[len("# fqr-manifest "):])
        elif not line.startswith("#"):
            body.append(line)
    rows = list(csv.reader(body))
    return rows[0], rows[1:], manifest


def write_json(path, obj, manifest) -> None:
    with open(path, "w") as fh:
        json.dump({**obj, "manifest": manifest}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _patch_csv_manifest(path, manifest) -> None:
    """Prefix a CSV written by a library helper with the manifest line."""
    text = Path(path).read_text()
    Path(path).write_text("# fqr-manifest " + json.dumps(manifest, sort_keys=True) + "\n" + text)


def _patch_jsonl_manifest(path, manifest) -> None:
    """Prefix a JSON-lines file with a ``{"manifest": ...}`` record."""
    text = Path(path).read_text()
    head = json.dumps({"manifest": manifest}, sort_keys=True)
    Path(path).write_text(head + "\n" + text)


# ------------------------------------------------------------------ inputs


def toy_paths() -> tuple[Path, Path]:
    base = resources.files("fqr") / "data"
    return Path(str(base / "toy.csv")), Path(str(base / "toy.json"))


def _load(args) -> tuple[FunctionalDataset, dict]:
    if args.toy:
        csv_path, schema_path = toy_paths()
    else:
        if not args.data:
            raise InputError("a dataset CSV (or --toy) is required")
        csv_path = Path(args.data)
        schema_path = Path(args.schema) if args.schema else csv_path.with_suffix(".json")
    for p in (csv_path, schema_path):
        if not p.exists():
            raise InputError(f"file not found: {p}")
    data = load_csv(csv_path, read_manifest(schema_path))
    return data, {"data": csv_path, "schema": schema_path}


def _config(args) -> SolverConfig:
    if not 0.0 < args.tau < 1.0:
        raise InputError("--tau must lie in (0, 1)")
    if args.bandwidth < 0:
        raise InputError("--bandwidth must be non-negative")
    lam = 0.0 if args.sql else (args.lam or 0.0)
    return SolverConfig(tau=args.tau, bandwidth=args.bandwidth, q=args.q,
                        gamma=args.gamma, lam=lam)


def _basis(args, data: FunctionalDataset):
    if args.K < 1 or args.p < 0:
        raise InputError("--K must be positive and --p non-negative")
    if args.q > args.p:
        raise InputError("--q cannot exceed --p")
    basis = build_basis((float(data.grid[0]), float(data.grid[-1])), args.K, args.p)
    return basis, compute_gram_set(basis, args.q)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _args_dict(args) -> dict:
    skip = {"func", "out"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _write_fit(out: Path, fit: FitResult, data: FunctionalDataset, manifest: dict) -> None:
    write_json(out / "fit.json", fit.to_dict(), manifest)
    names = (data.names or {}).get("functional") or [f"X{l + 1}" for l in range(fit.m)]
    for l, name in enumerate(names):
        t = data.grid
        beta = fit.beta(t, l)
        flag = fit.null_mask(t, l).astype(int)
        write_csv(out / f"beta_{name}.csv", ["t", f"beta_{l + 1}", "null_flag"],
                  [(a, b, str(c)) for a, b, c in zip(t, beta, flag)], manifest)


def _fit(design, basis, gram_set, config, sql: bool) -> FitResult:
    if sql:
        return fit_sql(design, basis, gram_set, replace(config, lam=0.0))
    return fit_close(design, basis, gram_set, config)


# ---------------------------------------------------------------- commands


def cmd_fit(args) -> int:
    data, inputs = _load(args)
    config = _config(args)
    basis, gram_set = _basis(args, data)
    design = assemble_design(data, basis)
    fit = _fit(design, basis, gram_set, config, args.sql)
    manifest = build_manifest("fit", _args_dict(args), config.to_dict(), None, inputs)
    out = _out(args)
    _write_fit(out, fit, data, manifest)
    write_json(out / "manifest.json", {}, manifest)
    if not fit.converged:
        logger.warning("solver hit its iteration cap; see converged=false in fit.json")
    return 0


def _parse_list(text: str, name: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise InputError(f"{name} must be a comma-separated list of numbers") from None
    if not vals:
        raise InputError(f"{name} is empty")
    return vals


def cmd_tune(args) -> int:
    data, inputs = _load(args)
    config = _config(args)
    basis, gram_set = _basis(args, data)
    design = assemble_design(data, basis)
    if args.auto_grid:
        grid = default_grid(data.n, args.K)
    else:
        if args.lambda_grid is None or args.gamma_grid is None:
            raise InputError("give --lambda-grid and --gamma-grid, or --auto-grid")
        lams = (0.0,) if args.sql else _parse_list(args.lambda_grid, "--lambda-grid")
        grid = TuneGrid(lams, _parse_list(args.gamma_grid, "--gamma-grid"))
    if args.sql and args.auto_grid:
        grid = TuneGrid((0.0,), grid.gamma_candidates)
    res = tune_fit(design, basis, gram_set, grid, config, df_rule=args.df_rule,
                   threads=n_threads())
    best_cfg = replace(config, lam=res.best[0], gamma=res.best[1])
    manifest = build_manifest("tune", _args_dict(args), best_cfg.to_dict(), None, inputs)
    out = _out(args)
    write_score_table(res.table, out / "scores.csv")
    _patch_csv_manifest(out / "scores.csv", manifest)
    _write_fit(out, res.fit, data, manifest)
    write_json(out / "manifest.json", {"best": {"lambda": res.best[0], "gamma": res.best[1]}},
               manifest)
    return 0


def cmd_bootstrap(args) -> int:
    data, inputs = _load(args)
    config = _config(args)
    basis, gram_set = _basis(args, data)
    if args.B < 2:
        raise InputError("--B must be at least 2")
    if not 0.0 < args.level < 1.0:
        raise InputError("--level must lie in (0, 1)")
    design = assemble_design(data, basis)
    fit = _fit(design, basis, gram_set, config, args.sql)
    if args.sql:
        config = replace(config, lam=0.0)
    try:
        summary = wild_bootstrap(design, basis, gram_set, config, args.B, split_seed=args.seed,
                                 threads=n_threads())
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    manifest = build_manifest("bootstrap", _args_dict(args), config.to_dict(), args.seed, inputs)
    out = _out(args)
    _write_fit(out, fit, data, manifest)
    write_json(out / "bootstrap.json", summary.to_dict(), manifest)
    names = (data.names or {}).get("functional") or [f"X{l + 1}" for l in range(fit.m)]
    for l, name in enumerate(names):
        for kind, builder in (("scb", build_scb), ("pcb", build_pcb)):
            try:
                band = builder(summary, fit, args.level, l=l)
            except ValueError as exc:
                logger.warning("no %s for %s: %s", kind, name, exc)
                continue
            write_csv(out / f"{kind}_{name}.csv", ["t", "estimate", "lower", "upper"],
                      zip(band.t, band.estimate, band.lower, band.upper), manifest)
    write_alpha_table(alpha_intervals(summary, fit, args.level), out / "alpha_ci.csv")
    _patch_csv_manifest(out / "alpha_ci.csv", manifest)
    d = design.d
    header = ["replicate"] + [f"alpha{j}_half{h + 1}" for h in range(2) for j in range(d)]
    rows = []
    for b in range(args.B):
        row = [str(b)]
        for h in summary.halves:
            row += list(h.alpha_reps[b]) if b < h.alpha_reps.shape[0] else [float("nan")] * d
        rows.append(row)
    write_csv(out / "replicates.csv", header, rows, manifest)
    write_json(out / "manifest.json", {}, manifest)
    return 0


def cmd_simulate(args) -> int:
    if args.scenario not in SCENARIOS:
        raise InputError(f"unknown scenario {args.scenario!r}; choose from {sorted(SCENARIOS)}")
    if args.n < 10 or args.replicates < 1:
        raise InputError("--n must be at least 10 and --replicates at least 1")
    taus = _parse_list(str(args.tau), "--tau")
    if not all(0.0 < t < 1.0 for t in taus):
        raise InputError("--tau values must lie in (0, 1)")
    fixed = None
    if args.lam is not None or args.gamma_fixed is not None:
        if args.lam is None or args.gamma_fixed is None:
            raise InputError("a fixed pair needs both --lambda and --gamma")
        fixed = (args.lam, args.gamma_fixed)
    groups = []
    for tau in taus:
        scenario = SimScenario.named(args.scenario, n=args.n, tau=tau, seed=args.seed,
                                     grid_size=args.grid_size)
        reports = run_study(scenario, args.method, args.replicates, K=args.K, p=args.p, q=args.q,
                            fixed=fixed, df_rule=args.df_rule, threads=n_threads())
        groups.append(({"tau": tau, "n": args.n}, list(reports.values())))
    manifest = build_manifest("simulate", _args_dict(args), None, args.seed, {})
    out = _out(args)
    write_sweep_csv(groups, out / "metrics.csv", paired=len(groups[0][1]) > 1)
    _patch_csv_manifest(out / "metrics.csv", manifest)
    for i, (extra, reps) in enumerate(groups):
        write_replicates_jsonl(reps, out / "replicates.jsonl", extra={"tau": extra["tau"]},
                               mode="w" if i == 0 else "a")
    _patch_jsonl_manifest(out / "replicates.jsonl", manifest)
    write_json(out / "manifest.json", {}, manifest)
    return 0


def cmd_replay(args) -> int:
    with open(args.manifest) as fh:
        rec = json.load(fh)
    man = rec.get("manifest", rec)
    if man.get("command") not in COMMANDS:
        raise InputError("manifest does not record a known command")
    ns = argparse.Namespace(**man["args"], out=args.out)
    for name, info in man.get("inputs", {}).items():
        if Path(info["path"]).exists() and file_hash(info["path"]) != info["sha256"]:
            raise InputError(f"input {info['path']} changed since the manifest was written")
    return COMMANDS[man["command"]](ns)


COMMANDS = {"fit": cmd_fit, "tune": cmd_tune, "bootstrap": cmd_bootstrap,
            "simulate": cmd_simulate}


# ------------------------------------------------------------------ parser


def _fit_flags(p: argparse.ArgumentParser, tau_required=True) -> None:
    p.add_argument("data", nargs="?", help="wide CSV with one row per sample")
    p.add_argument("--schema", help="JSON dataset manifest (default: DATA with .json suffix)")
    p.add_argument("--toy", action="store_true", help="use the bundled toy dataset")
    p.add_argument("--tau", type=float, required=tau_required, help="quantile level")
    p.add_argument("--K", type=int, default=50, help="number of subintervals")
    p.add_argument("--p", type=int, default=3, help="spline degree")
    p.add_argument("--q", type=int, default=2, help="penalised derivative order")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="fSCAD parameter")
    p.add_argument("--gamma", type=float, default=1e-6, help="roughness parameter")
    p.add_argument("--bandwidth", type=float, default=0.0, help="0 selects the plug-in rule")
    p.add_argument("--sql", action="store_true", help="roughness-only baseline")
    p.add_argument("--out", default="fqr-out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fqr", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model")
    _fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("tune", help="grid search scored by BIC")
    _fit_flags(p)
    p.add_argument("--lambda-grid", help="comma-separated lambda candidates")
    p.add_argument("--gamma-grid", help="comma-separated gamma candidates")
    p.add_argument("--auto-grid", action="store_true", help="use the default 8 x 6 grid")
    p.add_argument("--df-rule", default="count", choices=["count", "effective"])
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("bootstrap", help="wild bootstrap bands")
    _fit_flags(p)
    p.add_argument("--B", type=int, default=200, help="replicates per half")
    p.add_argument("--level", type=float, default=0.05, help="band level a")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("simulate", help="Monte Carlo study")
    p.add_argument("--scenario", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--tau", default="0.5", help="quantile level or comma-separated sweep")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--method", choices=["close", "sql", "both"], default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--K", type=int, default=50)
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--grid-size", type=int, default=101)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="fixed lambda")
    p.add_argument("--gamma", dest="gamma_fixed", type=float, default=None, help="fixed gamma")
    p.add_argument("--df-rule", default="count", choices=["count", "effective"])
    p.add_argument("--out", default="fqr-out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit with code 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="fqr: %(message)s")
    warnings.formatwarning = lambda msg, cat, *a, **k: f"fqr: {cat.__name__}: {msg}\n"
    try:
        n_threads()
        return args.func(args)
    except (InputError, DataError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"fqr: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, BootstrapError) as exc:
        print(f"fqr: convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
