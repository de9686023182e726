"""Command-line front end: run experiments, invoke the oracle, build
partitions and decompositions, verify properties, generate instances.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.
All CSV files carry a leading JSON metadata comment with a schema_version
field; JSON reports are pretty-printed with sorted keys. Fixed seeds make
every command byte-reproducible on one platform (wall-clock timings are
written to a separate sidecar so results.csv stays deterministic).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import yaml

from . import analysis, datagen, meta, oracle
from .core import (ConfigError, CurvatureParams, LossBundle, NumericalError,
                   glm_curvature, shifted_square_link, squared_curvature,
                   total_variation, with_box)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

SCHEMA_VERSION = 1

RESULT_COLUMNS = ["seed", "n", "d", "C_n", "learner", "meta", "dynamic_regret",
                  "static_regret_best_interval", "oracle_objective", "lambda"]

DEFAULT_CONFIG = {
    "experiment": {
        "learner": "ftl",
        "meta": "flh",
        "loss": "squared",
        "n": 1024,
        "dim": 1,
        "seeds": [0],
        "meta_zeta": None,
        "ons_zeta": None,
    },
    "curvature": None,  # optional dict(G, G_dagger, alpha, beta, H, B)
    "data": {
        "profile": "piecewise_constant",
        "jump_count": 4,
        "frequency": 2.0,
        "C_n": [1.0],
        "B": 1.0,
        "feature_radius": 1.0,
        "noise": {"kind": "uniform", "sigma": 0.5},
        "file": None,
    },
    "oracle": {"tol": 1e-6},
    "output": {"dir": "out"},
    "scaling": {"n_grid": [512, 1024, 2048, 4096]},
    "workers": 1,
}


class _Parser(argparse.ArgumentParser):
    """argparse that reports flag errors through the validation exit code."""

    def error(self, message):
        raise ConfigError(message)


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    cfg = DEFAULT_CONFIG
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                user = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"malformed config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config {path} must be a mapping")
        cfg = _deep_merge(cfg, user)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    exp = cfg["experiment"]
    if exp["learner"] not in ("ftl", "ogd", "ons"):
        raise ConfigError(f"experiment.learner must be ftl|ogd|ons, got {exp['learner']!r}")
    if exp["meta"] not in ("flh", "aflh", "none"):
        raise ConfigError(f"experiment.meta must be flh|aflh|none, got {exp['meta']!r}")
    if exp["loss"] not in ("squared", "glm"):
        raise ConfigError(f"experiment.loss must be squared|glm, got {exp['loss']!r}")
    if exp["learner"] == "ftl" and exp["loss"] != "squared":
        raise ConfigError("learner=ftl requires loss=squared")
    if not isinstance(exp["n"], int) or exp["n"] < 1:
        raise ConfigError("experiment.n must be a positive integer")
    if not isinstance(exp["dim"], int) or exp["dim"] < 1:
        raise ConfigError("experiment.dim must be a positive integer")
    seeds = exp["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("experiment.seeds must be a nonempty list of integers")
    data = cfg["data"]
    grid = data["C_n"]
    if isinstance(grid, (int, float)):
        data["C_n"] = [float(grid)]
    elif isinstance(grid, list) and grid and all(isinstance(c, (int, float)) for c in grid):
        data["C_n"] = [float(c) for c in grid]
    else:
        raise ConfigError("data.C_n must be a number or nonempty list of numbers")
    if any(c < 0 for c in data["C_n"]):
        raise ConfigError("data.C_n entries must be nonnegative")
    if data["B"] <= 0:
        raise ConfigError("data.B must be positive")
    if exp["loss"] == "glm" and exp["n"] > 1024:
        raise ConfigError("loss=glm runs are capped at n <= 1024 (oracle cost); "
                          "lower experiment.n")
    noise = data["noise"]
    if noise["kind"] not in ("uniform", "truncated_gaussian", "none"):
        raise ConfigError(f"unknown noise kind {noise['kind']!r}")
    if data["file"] is not None and exp["loss"] != "squared":
        raise ConfigError("data.file supplies labels only, which needs loss=squared")


def _curvature_from(cfg: dict) -> CurvatureParams:
    if cfg["curvature"] is not None:
        c = cfg["curvature"]
        try:
            return CurvatureParams(G=float(c["G"]), G_dagger=float(c["G_dagger"]),
                                   alpha=float(c["alpha"]), beta=float(c["beta"]),
                                   H=float(c["H"]), B=float(c["B"]))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad curvature block: {exc}") from exc
    B = float(cfg["data"]["B"])
    if cfg["experiment"]["loss"] == "squared":
        return squared_curvature(B)
    return _glm_regression_curvature(B, float(cfg["data"]["feature_radius"]),
                                     cfg["experiment"]["dim"])


def _glm_regression_curvature(B: float, R: float, dim: int) -> CurvatureParams:
    """Constants for the online-regression family g_t(z) = (z - y_t)^2 with
    ||v_t||_2 <= R and |y_t| <= B: g'' = 2 everywhere, |g'| bounded through
    the box radii."""
    a = 2.0 * (R * math.sqrt(dim) * B + B)
    G = a * R
    a_plus = 2.0 * (R * math.sqrt(dim) * (B + G) + B)
    curv = glm_curvature(R, a, a_plus, 2.0, 2.0)
    return with_box(curv, B)


def _make_stream(cfg: dict, n: int, C_n: float, seed: int):
    """Comparator + labels (+ features for glm) for one experiment cell."""
    data = cfg["data"]
    exp = cfg["experiment"]
    d = exp["dim"]
    B = float(data["B"])
    noise = datagen.NoiseSpec(kind=data["noise"]["kind"],
                              sigma=float(data["noise"].get("sigma", 0.0)),
                              clip=data["noise"].get("clip"),
                              seed=seed + 7919)
    B_w = B - noise.amplitude
    if B_w <= 0:
        raise ConfigError("noise amplitude leaves no room for the comparator "
                          "(need sigma < data.B)")
    profile = datagen.SequenceProfile(
        kind=data["profile"], n=n, C_n=C_n, B=B_w, seed=seed, d=d,
        jump_count=data.get("jump_count"), frequency=data.get("frequency"))
    w = datagen.gen_comparator(profile)
    labels = datagen.gen_labels(w, noise, B)
    curv = _curvature_from(cfg)
    if exp["loss"] == "squared":
        bundle = LossBundle.squared(labels, curv)
        return w, labels, bundle, None
    rng = np.random.Generator(np.random.PCG64(seed + 104729))
    R = float(data["feature_radius"])
    feats = rng.normal(size=(n, d))
    feats *= R / np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1e-12)
    targets = np.sum(feats * labels, axis=1)
    links = [shifted_square_link(float(v)) for v in targets]
    bundle = LossBundle.glm(links, feats, curv)
    return w, labels, bundle, feats


def _load_stream_from_file(cfg: dict, C_n: float):
    y, _ = oracle.read_instance_csv(cfg["data"]["file"])
    curv = _curvature_from(cfg)
    if float(np.max(np.abs(y))) > curv.B + 1e-9:
        raise ConfigError("labels in data.file exceed the configured box B")
    bundle = LossBundle.squared(y, curv)
    return None, y, bundle, None


def run_cell(cfg: dict, n: int, C_n: float, seed: int) -> dict:
    """One (n, C_n, seed) experiment cell; returns a plain result dict."""
    exp = cfg["experiment"]
    t_start = time.perf_counter()
    if cfg["data"]["file"] is not None:
        _, labels, bundle, _ = _load_stream_from_file(cfg, C_n)
        n = len(bundle)
    else:
        _, labels, bundle, _ = _make_stream(cfg, n, C_n, seed)
    curv = bundle.curvature
    config = meta.RunConfig(learner=exp["learner"], meta=exp["meta"],
                            curvature=curv, dim=exp["dim"],
                            meta_zeta=exp["meta_zeta"], ons_zeta=exp["ons_zeta"])
    trace = meta.run_protocol(bundle, config)
    tol = float(cfg["oracle"]["tol"])
    if bundle.kind == "squared":
        sol = oracle.tv_constrained_solve(labels, C_n, curv.B)
        static_best = analysis.max_dyadic_interval_regret(labels, trace.predictions)
    else:
        sol = oracle.oracle_general_loss(bundle, C_n, curv.B, tol=max(tol, 1e-5))
        fixed = oracle.oracle_general_loss(bundle, 0.0, curv.B, tol=max(tol, 1e-5))
        static_best = float(np.sum(trace.loss_values) - fixed.objective)
    dreg = analysis.dynamic_regret(trace, sol.u, bundle)
    wall_ms = (time.perf_counter() - t_start) * 1000.0
    return {
        "seed": seed, "n": n, "d": exp["dim"], "C_n": C_n,
        "learner": exp["learner"], "meta": exp["meta"],
        "dynamic_regret": dreg,
        "static_regret_best_interval": static_best,
        "oracle_objective": sol.objective,
        "lambda": sol.lam,
        "wall_time_ms": wall_ms,
        "_trace": trace, "_labels": labels,
    }


def _pool_cell(args):
    cfg, n, C_n, seed, keep = args
    row = run_cell(cfg, n, C_n, seed)
    trace, labels = row.pop("_trace"), row.pop("_labels")
    payload = (trace.predictions, labels) if keep else None
    return row, payload


def _worker_count(cfg: dict, flag_workers: int | None) -> int:
    env = os.environ.get("NSREGRET_WORKERS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"NSREGRET_WORKERS must be an integer, got {env!r}") from exc
    if flag_workers is not None:
        return max(1, flag_workers)
    return max(1, int(cfg.get("workers", 1)))


def _execute_cells(cfg: dict, cells: list, workers: int, keep_traces: bool):
    """Run cells serially or in a process pool; output order is by cell key,
    never completion order. Trace payloads are (predictions, labels) pairs."""
    rows = []
    traces = {}
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                _pool_cell, [(cfg, n, c, s, keep_traces) for n, c, s in cells]))
        for (n, c, s), (row, payload) in zip(cells, results):
            rows.append(row)
            if payload is not None:
                traces[(n, c, s)] = payload
    else:
        for n, c, s in cells:
            row = run_cell(cfg, n, c, s)
            trace = row.pop("_trace")
            labels = row.pop("_labels")
            if keep_traces:
                traces[(n, c, s)] = (trace.predictions, labels)
            rows.append(row)
    rows.sort(key=lambda r: (r["n"], r["C_n"], r["seed"]))
    return rows, traces


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _write_results_csv(path, rows: list, cfg_note: dict) -> None:
    head = {"schema_version": SCHEMA_VERSION, "columns": RESULT_COLUMNS}
    head.update(cfg_note)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + json.dumps(head, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])


def _write_json(path, payload: dict) -> None:
    payload = dict(payload)
    payload.setdefault("schema_version", SCHEMA_VERSION)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


_PLOT_SCRIPT = """\
#!/usr/bin/env python3
\"\"\"Render results.csv / scaling.json from this directory (requires matplotlib).\"\"\"
import csv, json, os
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
res = os.path.join(here, "results.csv")
if os.path.exists(res):
    rows = [r for r in csv.DictReader(
        (l for l in open(res) if not l.startswith("#")))]
    ns = sorted({int(r["n"]) for r in rows})
    regs = [sum(float(r["dynamic_regret"]) for r in rows if int(r["n"]) == n)
            / max(1, sum(1 for r in rows if int(r["n"]) == n)) for n in ns]
    plt.figure()
    plt.loglog(ns, regs, "o-")
    plt.xlabel("n"); plt.ylabel("mean dynamic regret")
    plt.savefig(os.path.join(here, "regret_vs_n.png"), dpi=150)
sc = os.path.join(here, "scaling.json")
if os.path.exists(sc):
    data = json.load(open(sc))
    pts = [(e["n"], e["mean_regret"]) for e in data["per_n"]]
    plt.figure()
    plt.loglog(*zip(*pts), "o-", label=f"slope={data['slope']:.3f}")
    plt.xlabel("n"); plt.ylabel("mean dynamic regret"); plt.legend()
    plt.savefig(os.path.join(here, "scaling.png"), dpi=150)
print("plots written next to the data files")
"""


def _emit_plot_script(outdir: str) -> None:
    with open(os.path.join(outdir, "plots.py"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_PLOT_SCRIPT)


def cmd_run(args) -> int:
    cfg = load_config(args.config, _flag_overrides(args))
    outdir = cfg["output"]["dir"]
    os.makedirs(outdir, exist_ok=True)
    exp = cfg["experiment"]
    cells = [(exp["n"], c, s) for c in cfg["data"]["C_n"] for s in exp["seeds"]]
    workers = _worker_count(cfg, args.workers)
    rows, traces = _execute_cells(cfg, cells, workers, keep_traces=not args.no_traces)
    note = {"learner": exp["learner"], "meta": exp["meta"], "loss": exp["loss"]}
    _write_results_csv(os.path.join(outdir, "results.csv"), rows, note)
    with open(os.path.join(outdir, "timings.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# timings are non-deterministic and excluded from the results schema\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "C_n", "seed", "wall_time_ms"])
        for row in rows:
            writer.writerow([row["n"], _fmt(row["C_n"]), row["seed"],
                             f"{row['wall_time_ms']:.3f}"])
    for (n, c, s), (preds, labels) in sorted(traces.items()):
        name = f"trace_n{n}_C{c:g}_s{s}.csv"
        with open(os.path.join(outdir, name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# " + json.dumps({"schema_version": SCHEMA_VERSION, "n": n,
                                        "C_n": c, "seed": s}, sort_keys=True) + "\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "k", "x", "y"])
            for t in range(preds.shape[0]):
                for k in range(preds.shape[1]):
                    writer.writerow([t + 1, k + 1, repr(float(preds[t, k])),
                                     repr(float(labels[t, k]))])
    _emit_plot_script(outdir)
    print(f"wrote {len(rows)} result rows to {os.path.join(outdir, 'results.csv')}")
    return EXIT_OK


def _check_geometric(grid: list) -> None:
    if len(grid) < 4:
        raise ConfigError("scaling.n_grid needs at least 4 horizons")
    ratios = [grid[i + 1] / grid[i] for i in range(len(grid) - 1)]
    if any(r <= 1 for r in ratios):
        raise ConfigError("scaling.n_grid must be increasing")
    if max(ratios) / min(ratios) > 1.05:
        raise ConfigError("scaling.n_grid must be geometrically spaced")


def cmd_scaling(args, regret_fn=None) -> int:
    """Sweep horizons, average dynamic regret across seeds, fit the log-log
    slope. ``regret_fn(n, C_n, seed)`` is a test hook replacing cell runs."""
    cfg = load_config(args.config, _flag_overrides(args))
    grid = [int(n) for n in cfg["scaling"]["n_grid"]]
    _check_geometric(grid)
    if cfg["experiment"]["loss"] == "glm" and max(grid) > 1024:
        raise ConfigError("loss=glm scaling grids are capped at n <= 1024 "
                          "(oracle cost); shrink scaling.n_grid")
    outdir = cfg["output"]["dir"]
    os.makedirs(outdir, exist_ok=True)
    exp = cfg["experiment"]
    C_n = cfg["data"]["C_n"][0]
    seeds = exp["seeds"]
    per_n = []
    per_seed_curves: dict[int, list] = {s: [] for s in seeds}
    if regret_fn is None:
        workers = _worker_count(cfg, args.workers)
        cells = [(n, C_n, s) for n in grid for s in seeds]
        rows, _ = _execute_cells(cfg, cells, workers, keep_traces=False)
        lookup = {(r["n"], r["seed"]): r["dynamic_regret"] for r in rows}
    else:
        lookup = {(n, s): float(regret_fn(n, C_n, s)) for n in grid for s in seeds}
    for n in grid:
        vals = {s: lookup[(n, s)] for s in seeds}
        per_n.append({"n": n, "mean_regret": float(np.mean(list(vals.values()))),
                      "per_seed": {str(s): vals[s] for s in seeds}})
        for s in seeds:
            per_seed_curves[s].append((n, vals[s]))
    slope, intercept, r2 = analysis.fit_scaling_exponent(
        [(e["n"], e["mean_regret"]) for e in per_n])
    seed_slopes = []
    for s in seeds:
        try:
            sl, _, _ = analysis.fit_scaling_exponent(per_seed_curves[s])
            seed_slopes.append(sl)
        except ValueError:
            pass
    if len(seed_slopes) >= 2:
        half = 1.96 * float(np.std(seed_slopes, ddof=1)) / math.sqrt(len(seed_slopes))
        ci = [float(np.mean(seed_slopes)) - half, float(np.mean(seed_slopes)) + half]
    else:
        ci = [slope, slope]
    payload = {"slope": slope, "intercept": intercept, "r2": r2,
               "slope_ci": ci, "C_n": C_n, "seeds": seeds, "per_n": per_n,
               "learner": exp["learner"], "meta": exp["meta"]}
    _write_json(os.path.join(outdir, "scaling.json"), payload)
    _emit_plot_script(outdir)
    print(f"slope={slope:.4f} r2={r2:.4f} -> {os.path.join(outdir, 'scaling.json')}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    y, _ = oracle.read_instance_csv(args.input)
    B = args.B if args.B is not None else float(np.max(np.abs(y)))
    sol = oracle.tv_constrained_solve(y, args.C_n, B)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    oracle.write_solution_csv(os.path.join(outdir, "solution.csv"), sol,
                              meta={"C_n": args.C_n, "B": B})
    _write_json(os.path.join(outdir, "kkt_report.json"), {
        "lambda": sol.lam, "objective": sol.objective, "tv": sol.tv,
        "stationarity_max_residual": sol.kkt.stationarity_max_residual,
        "subgradient_violation": sol.kkt.subgradient_violation,
        "comp_slack_tv": sol.kkt.comp_slack_tv,
        "comp_slack_box": sol.kkt.comp_slack_box,
        "flags": sol.flags,
    })
    tol = args.tol
    worst = max(sol.kkt.stationarity_max_residual, sol.kkt.subgradient_violation,
                sol.kkt.comp_slack_tv / max(1.0, sol.lam))
    print(f"lambda={sol.lam!r} objective={sol.objective!r} "
          f"max_residual={worst:.3e}")
    if worst > tol:
        print(f"KKT residual exceeds tol={tol}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_partition(args) -> int:
    if args.solution is None and args.input is None:
        raise ConfigError("partition needs --solution or --input")
    if args.solution is not None:
        u, meta_in = oracle.read_solution_csv(args.solution)
    else:
        y, _ = oracle.read_instance_csv(args.input)
        B0 = args.B if args.B is not None else float(np.max(np.abs(y)))
        u = oracle.tv_constrained_solve(y, args.C_n, B0).u
    B = args.B if args.B is not None else float(np.max(np.abs(u)))
    part = analysis.build_partition(u, B)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "partition.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + json.dumps({"schema_version": SCHEMA_VERSION, "B": B,
                                    "M": part.M, "tv": total_variation(u)},
                                   sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin", "i_s", "i_t", "n_i", "C_i"])
        for i, (s, e) in enumerate(part.bins):
            writer.writerow([i + 1, s, e, int(part.n_i[i]), repr(float(part.C_i[i]))])
    print(f"M={part.M} bins -> {path}")
    return EXIT_OK


def cmd_decompose(args) -> int:
    y, _ = oracle.read_instance_csv(args.input)
    B = args.B if args.B is not None else float(np.max(np.abs(y)))
    curv = squared_curvature(B)
    bundle = LossBundle.squared(y, curv)
    trace = meta.run_protocol(bundle, meta.RunConfig("ftl", args.meta, curv, y.shape[1]))
    sol = oracle.tv_constrained_solve(y, args.C_n, B)
    part = analysis.build_partition(sol.u, B)
    rows = analysis.regret_decompose(trace, sol, part, bundle)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "decomposition.csv")
    total = sum(r.total for r in rows)
    dreg = analysis.dynamic_regret(trace, sol.u, bundle)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + json.dumps({"schema_version": SCHEMA_VERSION,
                                    "dynamic_regret": dreg, "decomposition_total": total,
                                    "lambda": sol.lam}, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin", "i_s", "i_t", "n_i", "C_i", "T1", "T2", "T3"])
        for r in rows:
            writer.writerow([r.index, r.i_s, r.i_t, r.n_i, repr(r.C_i),
                             repr(r.T1), repr(r.T2), repr(r.T3)])
    print(f"{len(rows)} bins, total={total!r}, dynamic_regret={dreg!r} -> {path}")
    return EXIT_OK


def cmd_gen(args) -> int:
    profile = datagen.SequenceProfile(
        kind=args.profile, n=args.n, C_n=args.C_n, B=args.comparator_B,
        seed=args.seed if args.seed is not None else 0, d=args.dim,
        jump_count=args.jump_count, frequency=args.frequency)
    w = datagen.gen_comparator(profile)
    noise = datagen.NoiseSpec(kind=args.noise, sigma=args.sigma,
                              seed=(args.seed if args.seed is not None else 0) + 7919)
    B = args.B if args.B is not None else profile.B + noise.amplitude
    labels = datagen.gen_labels(w, noise, B)
    outdir = args.out or "."
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "instance.csv")
    datagen.write_generated_csv(path, labels, w.w, meta={
        "profile": args.profile, "seed": args.seed or 0, "C_n": args.C_n,
        "B": B, "comparator_B": profile.B, "realized_tv": w.total_variation,
        "noise": args.noise, "sigma": args.sigma})
    print(f"instance with realized TV {w.total_variation!r} -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify: fixed-seed property suites
# ---------------------------------------------------------------------------

def _suite_learner_feasibility() -> tuple[int, int, str]:
    from .core import DecisionBox
    from .learners import FtlState, OgdState, OnsState
    rng = np.random.Generator(np.random.PCG64(101))
    failures, checks = 0, 0
    box = DecisionBox(1.0, 2)
    ftl, ogd, ons = FtlState(box), OgdState(box, 2.0), OnsState(box, 0.5)
    for _ in range(300):
        y = rng.uniform(-1, 1, 2)
        g = rng.uniform(-4, 4, 2)
        for lrn, arg in ((ftl, y), (ogd, g), (ons, g)):
            pred, _ = lrn.step(arg)
            checks += 1
            if not box.contains(pred, tol=1e-12):
                failures += 1
    return checks, failures, "every FTL/OGD/ONS prediction inside its box"


def _suite_weight_simplex() -> tuple[int, int, str]:
    from .core import DecisionBox
    from .meta import FlhState
    rng = np.random.Generator(np.random.PCG64(202))
    curv = squared_curvature(1.0)
    box = DecisionBox(1.0, 1)
    state = FlhState("ftl", box, curv, 0.125, per_coordinate=True, horizon_hint=300)
    pool = state.pool
    failures, checks = 0, 0
    for t in range(300):
        y = rng.uniform(-1, 1, 1)
        preds = state.expert_predictions()
        losses = (y[None, :] - preds) ** 2
        pool.observe_label(y)
        try:
            state.update_weights(losses)
        except NumericalError:
            failures += 1
            break
        checks += 1
        err = abs(float(np.sum(state.weights)) - 1.0)
        if err > 1e-12 or np.any(state.weights < 0):
            failures += 1
    return max(checks, 1), failures, "FLH weights stay on the simplex after every update"


def _suite_kkt_and_partition():
    rng = np.random.Generator(np.random.PCG64(303))
    checks, failures = 0, 0
    part_checks, part_failures = 0, 0
    dec_checks, dec_failures = 0, 0
    curv = squared_curvature(1.0)
    for _ in range(20):
        n = int(rng.integers(16, 129))
        d = int(rng.integers(1, 3))
        y = rng.uniform(-1, 1, (n, d))
        C = float(rng.uniform(0.0, 2.0))
        sol = oracle.tv_constrained_solve(y, C, 1.0)
        checks += 1
        ok = (sol.kkt.stationarity_max_residual <= 1e-6
              and sol.kkt.subgradient_violation <= 1e-9
              and sol.kkt.comp_slack_tv <= 1e-6 * max(1.0, sol.lam)
              and sol.tv <= C + 1e-8)
        if not ok:
            failures += 1
        part = analysis.build_partition(sol.u, 1.0)
        part_checks += 1
        bound = 1.0 / np.sqrt(part.n_i)
        m_cap = 8.0 * max(1.0, n ** (1 / 3) * sol.tv ** (2 / 3))
        if not (part.check_tiling() and np.all(part.C_i <= bound) and part.M <= m_cap):
            part_failures += 1
        bundle = LossBundle.squared(y, curv)
        trace = meta.run_protocol(bundle, meta.RunConfig("ftl", "flh", curv, d))
        rows = analysis.regret_decompose(trace, sol, part, bundle)
        total = sum(r.total for r in rows)
        dreg = analysis.dynamic_regret(trace, sol.u, bundle)
        dec_checks += 1
        scale = max(1.0, float(np.sum(trace.loss_values)))
        if abs(total - dreg) > 1e-8 * scale or any(r.T2 > 1e-12 for r in rows):
            dec_failures += 1
    return (checks, failures), (part_checks, part_failures), (dec_checks, dec_failures)


def _suite_meta_regret() -> tuple[int, int, str]:
    rng = np.random.Generator(np.random.PCG64(404))
    n = 1024
    curv = squared_curvature(1.0)
    y = rng.uniform(-1, 1, n)
    bundle = LossBundle.squared(y, curv)
    trace = meta.run_protocol(bundle, meta.RunConfig("ftl", "flh", curv, 1))
    zeta = 0.125
    checks, failures = 0, 0
    for _ in range(50):
        r = int(rng.integers(1, n))
        s = int(rng.integers(r, n)) + 1
        s = min(s, n)
        flh_loss = float(np.sum(trace.loss_values[r - 1: s]))
        ftl_loss = float(np.sum(analysis.ftl_interval_losses(y, r, s)))
        bound = (1.0 / zeta) * (math.log(r) + math.log(s - r + 1)) + 2.0
        checks += 1
        if flh_loss - ftl_loss > bound:
            failures += 1
    return checks, failures, "FLH interval loss within the meta-regret bound of a fresh FTL"


def cmd_verify(args) -> int:
    suites = {}
    checks, failures, desc = _suite_learner_feasibility()
    suites["learner_feasibility"] = {"checks": checks, "failures": failures,
                                     "passed": failures == 0, "detail": desc}
    checks, failures, desc = _suite_weight_simplex()
    suites["weight_simplex"] = {"checks": checks, "failures": failures,
                                "passed": failures == 0, "detail": desc}
    (kc, kf), (pc, pf), (dc, df) = _suite_kkt_and_partition()
    suites["kkt_residuals"] = {"checks": kc, "failures": kf, "passed": kf == 0,
                               "detail": "oracle stationarity/subgradient/slackness residuals"}
    suites["partition_bounds"] = {"checks": pc, "failures": pf, "passed": pf == 0,
                                  "detail": "per-bin TV bound, tiling and bin-count cap"}
    suites["decomposition_identity"] = {"checks": dc, "failures": df, "passed": df == 0,
                                        "detail": "T1+T2+T3 equals dynamic regret; T2 <= 0"}
    checks, failures, desc = _suite_meta_regret()
    suites["meta_regret_intervals"] = {"checks": checks, "failures": failures,
                                       "passed": failures == 0, "detail": desc}
    all_passed = all(s["passed"] for s in suites.values())
    payload = {"all_passed": all_passed, "suites": suites}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "verify.json"), payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK if all_passed else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def _flag_overrides(args) -> dict:
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("experiment", {})["seeds"] = [args.seed]
    if getattr(args, "out", None) is not None:
        overrides.setdefault("output", {})["dir"] = args.out
    if getattr(args, "tol", None) is not None:
        overrides.setdefault("oracle", {})["tol"] = args.tol
    return overrides


def _add_common(p) -> None:
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--seed", type=int, default=None, help="replace the seed list")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel cells (NSREGRET_WORKERS overrides)")
    p.add_argument("--tol", type=float, default=1e-6, help="residual tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nsregret",
                     description="strongly-adaptive dynamic-regret experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment grid", parents=[],
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_common(p)
    p.add_argument("--no-traces", action="store_true", help="skip per-run trace files")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("scaling", help="horizon sweep and slope fit")
    _add_common(p)
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("oracle", help="solve a TV-constrained instance")
    _add_common(p)
    p.add_argument("--input", required=True, help="instance CSV (t,k,y)")
    p.add_argument("--C_n", type=float, required=True)
    p.add_argument("--B", type=float, default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("partition", help="key partition of an oracle sequence")
    _add_common(p)
    p.add_argument("--solution", default=None, help="solution CSV (t,k,u)")
    p.add_argument("--input", default=None, help="instance CSV (solved first)")
    p.add_argument("--C_n", type=float, default=1.0)
    p.add_argument("--B", type=float, default=None)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("decompose", help="T1/T2/T3 table for an instance")
    _add_common(p)
    p.add_argument("--input", required=True, help="instance CSV (t,k,y)")
    p.add_argument("--C_n", type=float, required=True)
    p.add_argument("--B", type=float, default=None)
    p.add_argument("--meta", default="flh", choices=["flh", "aflh"])
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("verify", help="run the property suites")
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen", help="generate a synthetic instance")
    _add_common(p)
    p.add_argument("--profile", default="piecewise_constant",
                   choices=list(datagen.PROFILE_KINDS))
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--C_n", type=float, default=1.0)
    p.add_argument("--comparator-B", type=float, default=0.5,
                   help="comparator box half-width")
    p.add_argument("--B", type=float, default=None,
                   help="label box (defaults to comparator-B + noise amplitude)")
    p.add_argument("--jump-count", type=int, default=None)
    p.add_argument("--frequency", type=float, default=None)
    p.add_argument("--noise", default="uniform",
                   choices=["uniform", "truncated_gaussian", "none"])
    p.add_argument("--sigma", type=float, default=0.25)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
