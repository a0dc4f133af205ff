"""Command-line entry points: generate, regress, infer, baseline, score, oracle.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .baseline import LAMBDA_GRID, run_em_lasso
from .bench import (
    NoiseSpec,
    RingSpec,
    area_pr,
    area_roc,
    confusion_at,
    enumerate_posterior,
    generate_transport_matrix,
    pr_curve,
    roc_curve,
    simulate_series,
)
from .core import ContractError, NumericalError, PriorConfig, rng_stream
from .dynamic import SamplerConfig, Schedule, TimeSeriesSet, run_dynamic_mcmc
from .io import (
    read_matrix_csv,
    save_trajectory,
    write_bitmap,
    write_jsonl,
    write_manifest,
    write_matrix_csv,
)
from .regression import RegressionData, run_regression_mcmc
from .tempering import Ladder, geometric_ladder, run_parallel_tempering

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def code_version() -> str:
    try:
        return version("sparsedyn")
    except PackageNotFoundError:
        return "unknown"


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

DEFAULTS = {
    "out": "sparsedyn-out",
    "data": None,
    "generate": {
        "ring_sizes": [40, 60],
        "inter_ring_edges": None,
        "edge_weight": 1.0,
        "noise": {},
        "noise_mode": "rate",
        "T": 10.0,
        "dt": 0.5,
        "n_series": 2,
        "fine_dt": None,
    },
    "prior": {},
    "sampler": {"mode": "heuristic"},
    "schedule": {"n_samples": 50000, "burn_in": 3000, "thin": 10},
    "ladder": {"size": 16, "ratio": 1.05, "swap_period": 10},
    "baseline": {"lambda_grid": list(LAMBDA_GRID), "lam": 1.0, "q": 0.04, "r": 0.0016,
                 "n_step": 5, "lag": 2, "max_iter": 200, "tol": 1e-6},
    "regress": {"X": None, "Y": None, "noise_var": 1.0, "prior_var": 1.0},
    "score": {"scores": None, "truth": None, "method": "method", "case": ""},
}

PRESETS = {
    "case1": {"generate": {"dt": 0.5, "n_series": 2}, "sampler": {"mode": "ptemp"}},
    "case2": {"generate": {"dt": 1.0, "n_series": 2}, "sampler": {"mode": "heuristic"}},
    "case3": {"generate": {"dt": 0.5, "n_series": 1}, "sampler": {"mode": "heuristic"}},
    "desk": {"generate": {"ring_sizes": [8, 12], "dt": 0.5, "n_series": 2},
             "sampler": {"mode": "heuristic"},
             "schedule": {"n_samples": 20000, "burn_in": 3000, "thin": 10}},
}


def merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(args) -> dict:
    cfg = DEFAULTS
    if args.preset:
        cfg = merge(cfg, PRESETS[args.preset])
    if args.config:
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = merge(cfg, user)
    cfg = copy.deepcopy(cfg)
    if args.mode:
        cfg["sampler"]["mode"] = args.mode
    if args.out:
        cfg["out"] = args.out
    if args.data:
        cfg["data"] = args.data
    for key in ("X", "Y"):
        val = getattr(args, key, None)
        if val:
            cfg["regress"][key] = val
    for key in ("scores", "truth"):
        val = getattr(args, key, None)
        if val:
            cfg["score"][key] = val
    cfg["seed"] = args.seed
    return cfg


def build_objects(cfg: dict):
    """Validated library objects for the sampler sections of the config."""
    try:
        prior = PriorConfig.from_dict(cfg["prior"])
        sampler = SamplerConfig(**cfg["sampler"])
        schedule = Schedule(**cfg["schedule"])
        lad = dict(cfg["ladder"])
        ladder = Ladder(geometric_ladder(lad.pop("size", 16), lad.pop("ratio", 1.05)), **lad)
    except (ContractError, TypeError) as exc:
        raise ConfigError(str(exc))
    return prior, sampler, schedule, ladder


def n_threads() -> int:
    raw = os.environ.get("SPARSEDYN_THREADS")
    if raw is None:
        return max(1, os.cpu_count() or 1)
    try:
        val = int(raw)
    except ValueError:
        raise ConfigError(f"SPARSEDYN_THREADS must be an integer, got {raw!r}")
    if val < 1:
        raise ConfigError("SPARSEDYN_THREADS must be >= 1")
    return val


def out_dir(cfg: dict) -> Path:
    path = Path(cfg["out"])
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}")
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")
    return path


def finish(out: Path, command: str, cfg: dict, outputs: list):
    manifest = out / "manifest.json"
    echo = {k: v for k, v in cfg.items() if k != "seed"}
    write_manifest(manifest, command, echo, cfg["seed"], outputs, code_version())
    return [*outputs, manifest]


# --------------------------------------------------------------------------
# Dataset loading
# --------------------------------------------------------------------------

def load_dataset(cfg: dict):
    """Read a directory written by ``generate`` into a TimeSeriesSet (+ truth if present)."""
    if not cfg.get("data"):
        raise ConfigError("no dataset directory given (--data or config 'data')")
    root = Path(cfg["data"])
    meta_path = root / "dataset.json"
    if not meta_path.is_file():
        raise DataError(f"{meta_path} not found")
    with open(meta_path) as fh:
        meta = json.load(fh)
    values = []
    for k in range(int(meta["n_series"])):
        path = root / f"series_{k}.csv"
        if not path.is_file():
            raise DataError(f"{path} not found")
        values.append(read_matrix_csv(path))
    mv = meta.get("meas_var")
    series = TimeSeriesSet(values, float(meta["dt"]), meas_var=None if mv is None else np.asarray(mv))
    truth_path = root / "truth.csv"
    truth = read_matrix_csv(truth_path).astype(np.int8) if truth_path.is_file() else None
    return series, truth


def _require(path, what: str) -> Path:
    if not path:
        raise ConfigError(f"no {what} path given")
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{what} file {p} not found")
    return p


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_generate(cfg: dict) -> list:
    g = cfg["generate"]
    try:
        spec = RingSpec(list(g["ring_sizes"]), g["inter_ring_edges"], float(g["edge_weight"]))
        noise = NoiseSpec(**g["noise"])
        A, truth = generate_transport_matrix(spec)
        if g["noise_mode"] not in ("rate", "increment"):
            raise ContractError(f"unknown noise_mode {g['noise_mode']!r}")
        if not (float(g["T"]) > 0 and float(g["dt"]) > 0 and int(g["n_series"]) >= 1):
            raise ContractError("generate needs T > 0, dt > 0 and n_series >= 1")
    except (TypeError, ValueError, ContractError) as exc:
        raise ConfigError(str(exc))
    try:
        sim = simulate_series(A, noise, float(g["T"]), float(g["dt"]), rng_stream(cfg["seed"]),
                              n_series=int(g["n_series"]), fine_dt=g["fine_dt"],
                              noise_mode=g["noise_mode"])
    except ContractError as exc:
        raise ConfigError(str(exc))
    out = out_dir(cfg)
    files = [out / "A.csv", out / "truth.csv"]
    write_matrix_csv(files[0], A)
    write_matrix_csv(files[1], truth)
    for k, (y, x) in enumerate(zip(sim.series.values, sim.true_fine)):
        write_matrix_csv(out / f"series_{k}.csv", y)
        write_matrix_csv(out / f"times_{k}.csv", sim.sample_times[None, :])
        save_trajectory(out / f"true_trajectory_{k}.npy", x)
        files += [out / f"series_{k}.csv", out / f"times_{k}.csv", out / f"true_trajectory_{k}.npy"]
    save_trajectory(out / "fine_times.npy", sim.fine_times)
    meta = {"n": int(A.shape[0]), "n_series": len(sim.series.values), "dt": float(g["dt"]),
            "T": float(g["T"]), "meas_var": sim.series.meas_var.tolist()}
    with open(out / "dataset.json", "w") as fh:
        fh.write(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    files += [out / "fine_times.npy", out / "dataset.json"]
    return finish(out, "generate", cfg, files)


def _chain_records(record, hyper_trace=None) -> list:
    rows = []
    for k, (S, lp) in enumerate(zip(record.samples, record.log_scores)):
        rec = {"sample": k, "log_p": lp, "n_edges": int(S.sum()),
               "bitmap": np.packbits(S.ravel().astype(bool)).tobytes().hex()}
        if k < len(record.info):
            rec.update(record.info[k])
        if hyper_trace is not None:
            for key, trace in hyper_trace.items():
                rec[key] = trace[k].tolist()
        rows.append(rec)
    return rows


def cmd_regress(cfg: dict) -> list:
    rc = cfg["regress"]
    X_path, Y_path = _require(rc["X"], "X"), _require(rc["Y"], "Y")
    prior, _, schedule, _ = build_objects(cfg)
    try:
        data = RegressionData(read_matrix_csv(X_path), read_matrix_csv(Y_path),
                              rc["noise_var"], rc["prior_var"])
    except ContractError as exc:
        raise DataError(str(exc))
    probs, record = run_regression_mcmc(data, prior, schedule.n_samples, schedule.burn_in,
                                        schedule.thin, rng_stream(cfg["seed"]))
    out = out_dir(cfg)
    files = [out / "edge_probabilities.csv", out / "chain.jsonl", out / "samples.bin",
             out / "acceptance.json"]
    write_matrix_csv(files[0], probs)
    write_jsonl(files[1], _chain_records(record))
    write_bitmap(files[2], record.samples, data.shape)
    with open(files[3], "w") as fh:
        fh.write(json.dumps(record.acceptance_rates(), sort_keys=True, indent=2) + "\n")
    return finish(out, "regress", cfg, files)


def cmd_oracle(cfg: dict) -> list:
    rc = cfg["regress"]
    X_path, Y_path = _require(rc["X"], "X"), _require(rc["Y"], "Y")
    prior, _, _, _ = build_objects(cfg)
    try:
        data = RegressionData(read_matrix_csv(X_path), read_matrix_csv(Y_path),
                              rc["noise_var"], rc["prior_var"])
        post = enumerate_posterior(data, prior)
    except ContractError as exc:
        raise DataError(str(exc))
    out = out_dir(cfg)
    files = [out / "exact_edge_probabilities.csv", out / "exact_table.csv"]
    write_matrix_csv(files[0], post.edge_marginals)
    table = np.column_stack([np.arange(post.probabilities.size), post.log_marginals, post.probabilities])
    write_matrix_csv(files[1], table, header=["index", "log_marginal", "probability"])
    return finish(out, "oracle", cfg, files)


def cmd_infer(cfg: dict) -> list:
    prior, sampler, schedule, ladder = build_objects(cfg)
    try:
        series, _ = load_dataset(cfg)
    except ContractError as exc:
        raise DataError(str(exc))
    if sampler.mode == "ptemp":
        res = run_parallel_tempering(series, prior, sampler, ladder, schedule, cfg["seed"])
    else:
        res = run_dynamic_mcmc(series, prior, sampler, schedule, rng_stream(cfg["seed"]))
    out = out_dir(cfg)
    files = [out / "edge_probabilities.csv", out / "chain.jsonl", out / "samples.bin",
             out / "acceptance.json"]
    write_matrix_csv(files[0], res.edge_probabilities)
    write_jsonl(files[1], _chain_records(res.record, res.hyper_trace))
    write_bitmap(files[2], res.record.samples, res.edge_probabilities.shape)
    summary = {"acceptance": res.acceptance, **res.extras}
    with open(files[3], "w") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    for key, trace in res.hyper_trace.items():
        path = out / f"trace_{key}.csv"
        write_matrix_csv(path, trace)
        files.append(path)
    for k, x in enumerate(res.trajectory_mean):
        path = out / f"trajectory_mean_{k}.npy"
        save_trajectory(path, x)
        files.append(path)
    return finish(out, "infer", cfg, files)


def _score(scores, truth) -> dict:
    fpr, tpr, _ = roc_curve(scores, truth)
    rec, prec, _ = pr_curve(scores, truth)
    return {"auroc": area_roc(fpr, tpr), "auprec": area_pr(rec, prec),
            "confusion": confusion_at(scores, truth), "roc": (fpr, tpr), "pr": (rec, prec)}


def cmd_baseline(cfg: dict, oracle_lambda: bool = False) -> list:
    b = cfg["baseline"]
    try:
        series, truth = load_dataset(cfg)
    except ContractError as exc:
        raise DataError(str(exc))
    grid = [float(v) for v in b["lambda_grid"]]
    if not grid or any(v <= 0 for v in grid):
        raise ConfigError("lambda_grid must hold positive values")
    if oracle_lambda and truth is None:
        raise DataError("--oracle-lambda needs truth.csv in the dataset directory")

    def fit(lam):
        return run_em_lasso(series.values, series.dt, lam, b["q"], b["r"], int(b["n_step"]),
                            int(b["lag"]), int(b["max_iter"]), float(b["tol"]))

    with ThreadPoolExecutor(max_workers=min(n_threads(), len(grid))) as pool:
        fits = list(pool.map(fit, grid))

    out = out_dir(cfg)
    files = []
    per_lambda = {}
    for lam, em in zip(grid, fits):
        tag = format(lam, "g")
        write_matrix_csv(out / f"A_est_lambda_{tag}.csv", em.A)
        write_jsonl(out / f"objective_lambda_{tag}.jsonl",
                    [{"iteration": i + 1, "objective": v} for i, v in enumerate(em.objective)])
        files += [out / f"A_est_lambda_{tag}.csv", out / f"objective_lambda_{tag}.jsonl"]
        entry = {"lambda": lam, "iterations": em.iterations}
        if truth is not None:
            s = _score(np.abs(em.A), truth)
            entry.update(auroc=s["auroc"], auprec=s["auprec"])
        per_lambda[tag] = entry
    if oracle_lambda:
        best = max(range(len(grid)), key=lambda i: (per_lambda[format(grid[i], "g")]["auroc"], -i))
    else:
        lam = float(b["lam"])
        if lam not in grid:
            raise ConfigError(f"baseline lam {lam} is not in lambda_grid")
        best = grid.index(lam)
    chosen = fits[best]
    write_matrix_csv(out / "A_est.csv", chosen.A)
    write_matrix_csv(out / "magnitudes.csv", np.abs(chosen.A))
    with open(out / "lambda_summary.json", "w") as fh:
        fh.write(json.dumps({"selected": grid[best], "oracle": oracle_lambda, "grid": per_lambda},
                            sort_keys=True, indent=2) + "\n")
    files += [out / "A_est.csv", out / "magnitudes.csv", out / "lambda_summary.json"]
    return finish(out, "baseline", cfg, files)


def cmd_score(cfg: dict) -> list:
    sc = cfg["score"]
    scores = read_matrix_csv(_require(sc["scores"], "scores"))
    truth = read_matrix_csv(_require(sc["truth"], "truth"))
    try:
        s = _score(scores, truth)
    except ContractError as exc:
        raise DataError(str(exc))
    out = out_dir(cfg)
    files = [out / "metrics.json", out / "roc.csv", out / "pr.csv", out / "summary.csv"]
    metrics = {"auroc": s["auroc"], "auprec": s["auprec"], "confusion": s["confusion"]}
    with open(files[0], "w") as fh:
        fh.write(json.dumps(metrics, sort_keys=True, indent=2) + "\n")
    write_matrix_csv(files[1], np.column_stack(s["roc"]), header=["fpr", "tpr"])
    write_matrix_csv(files[2], np.column_stack(s["pr"]), header=["recall", "precision"])
    with open(files[3], "w") as fh:
        fh.write("method,case,auroc,auprec\n")
        fh.write(f"{sc['method']},{sc['case']},{s['auroc']:.4f},{s['auprec']:.4f}\n")
    return finish(out, "score", cfg, files)


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config document")
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--mode", choices=["plain", "gibbs", "heuristic", "ptemp"])
    common.add_argument("--out", help="output directory")
    common.add_argument("--data", help="dataset directory written by 'generate'")

    parser = argparse.ArgumentParser(prog="sparsedyn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="simulate the ring benchmark")
    for name in ("regress", "oracle"):
        p = sub.add_parser(name, parents=[common],
                           help="regression topology sampler" if name == "regress" else "exact enumeration")
        p.add_argument("--X", help="CSV of inputs (rows = variables, columns = samples)")
        p.add_argument("--Y", help="CSV of outputs (rows = variables, columns = samples)")
    sub.add_parser("infer", parents=[common], help="dynamic topology sampler")
    p = sub.add_parser("baseline", parents=[common], help="EM-Lasso over the penalty grid")
    p.add_argument("--oracle-lambda", action="store_true",
                   help="select the penalty with the best AUROC against the dataset truth")
    p = sub.add_parser("score", parents=[common], help="AUROC / AUPREC of an edge-score matrix")
    p.add_argument("--scores", help="CSV of edge scores")
    p.add_argument("--truth", help="CSV of the true topology")
    return parser


COMMANDS = {"generate": cmd_generate, "regress": cmd_regress, "oracle": cmd_oracle,
            "infer": cmd_infer, "score": cmd_score}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed < 0 or args.seed >= 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args)
        if args.command == "baseline":
            cmd_baseline(cfg, args.oracle_lambda)
        else:
            COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractError as exc:
        print(f"data error ({args.command}): {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure ({args.command}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
