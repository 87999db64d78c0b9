"""Batch command line interface.

Commands: ``validate``, ``fit``, ``select``, ``predict``, ``simulate``.
Stdout carries a human summary; files carry the machine output. Every run
writes exactly one ``manifest.json`` into its output directory recording the
resolved options, input digests and software version.

Exit codes: 0 success, 2 validation failure, 3 identifiability failure
(without ``--force``), 4 non-convergence (outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data_model import (
    CovariateMatrix,
    IdentifiabilityError,
    ObjectCatalog,
    ValidationError,
    check_identifiability,
    load_covariates,
    load_rankings,
    standardize_covariates,
)
from .likelihood import CoefficientSet
from .optimizer import fit, initial_estimate
from .penalty import PenaltyConfig
from .prediction import predict_new, write_rank_table
from .selection import PenaltyGrid, build_grid, effective_df, select
from .simulation import (
    STUDY_METHODS,
    SimulationConfig,
    run_study,
    scenario_preset,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IDENTIFIABILITY = 3
EXIT_NONCONVERGENCE = 4

GRID_RULE = "0 plus log-spaced values from lambda_max/1000 to lambda_max; lambda_max found by doubling from 1"


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_manifest(out_dir, command, options, inputs, extra, started) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "options": options,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "started_unix": started,
        "wall_clock_seconds": time.time() - started,
    }
    manifest.update(extra)
    with open(Path(out_dir) / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _public_options(args) -> dict:
    return {
        k: v for k, v in vars(args).items() if k != "func" and not k.startswith("_")
    }


def _resolve_threads(value) -> int:
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("SFPL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValidationError(f"SFPL_THREADS must be an integer, got {env!r}") from exc
    return 1


def _check_common_numeric(args) -> None:
    if getattr(args, "lambda_s", None) is not None and args.lambda_s < 0:
        raise ValidationError("--lambda-s must be >= 0")
    if getattr(args, "lambda_f", None) is not None and args.lambda_f < 0:
        raise ValidationError("--lambda-f must be >= 0")
    if getattr(args, "epsilon", 1.0) <= 0:
        raise ValidationError("--epsilon must be > 0")
    if getattr(args, "xi", 1.0) <= 0:
        raise ValidationError("--xi must be > 0")
    if getattr(args, "zero_threshold", 1.0) <= 0:
        raise ValidationError("--zero-threshold must be > 0")


def _load_inputs(args):
    catalog, X_raw = load_covariates(args.covariates)
    data = load_rankings(args.rankings, catalog)
    X = standardize_covariates(X_raw) if args.standardize else X_raw
    return catalog, data, X


def _load_tau(path, n_groups):
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if row and any(c.strip() for c in row):
                rows.append([float(c) for c in row])
    tau = np.array(rows, dtype=float)
    if tau.shape != (n_groups, n_groups):
        raise ValidationError(
            f"tau file must be a headerless {n_groups}x{n_groups} matrix"
        )
    return tau


def _raw_scale(B: CoefficientSet, X: CovariateMatrix) -> np.ndarray:
    if X.standardized:
        return B.B / X.column_sds
    return B.B


def _write_fit_outputs(out, data, X, catalog, result, zero_threshold) -> None:
    raw = _raw_scale(result.B_hat, X)
    rows = []
    for k, group in enumerate(data.group_labels):
        for q, var in enumerate(X.variable_names):
            rows.append([group, var, float(result.B_hat.B[k, q]), float(raw[k, q])])
    _write_csv(out / "coefficients.csv", ["group", "variable", "beta_std", "beta_raw"], rows)
    payload = {
        "lambda_s": result.config.lambda_s,
        "lambda_f": result.config.lambda_f,
        "epsilon": result.config.epsilon,
        "objective_trace": list(result.objective_trace),
        "iterations": result.iterations,
        "converged": result.converged,
        "final_step_size": result.final_step_size,
        "df": effective_df(result.B_hat, zero_threshold),
        "zero_threshold": zero_threshold,
        "neg_log_likelihood": result.final_nll,
        "model": {
            "group_labels": list(data.group_labels),
            "variable_names": list(X.variable_names),
            "catalog": list(catalog.labels),
            "standardized": X.standardized,
            "column_means": X.column_means,
            "column_sds": X.column_sds,
            "covariates": X.values,
            "coefficients": result.B_hat.B,
        },
    }
    with open(out / "fit.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def cmd_validate(args) -> int:
    started = time.time()
    catalog, X_raw = load_covariates(args.covariates)
    data = load_rankings(args.rankings, catalog)
    X = standardize_covariates(X_raw) if args.standardize else X_raw
    report = check_identifiability(X)
    print(f"catalog: {catalog.size} objects, {X.n_variables} variables")
    print(f"groups: {data.n_groups} ({', '.join(data.group_labels)})")
    print(f"rankers per group: {', '.join(str(n) for n in data.group_sizes)}")
    verdict = "PASS" if report.passed else "FAIL"
    print(f"identifiability: rank {report.rank} of p={report.n_variables} -> {verdict}")
    coverage = {}
    for k, label in enumerate(data.group_labels):
        missing = data.unranked_objects(k)
        coverage[label] = [catalog.labels[i] for i in missing]
        if missing:
            print(f"coverage: group {label!r} never ranks {len(missing)} objects: "
                  f"{', '.join(coverage[label])}")
        else:
            print(f"coverage: group {label!r} ranks every object")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {
            "rank": report.rank,
            "p": report.n_variables,
            "identifiable": report.passed,
            "groups": list(data.group_labels),
            "group_sizes": list(data.group_sizes),
            "unranked_objects": coverage,
        }
        with open(out / "validation.json", "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_manifest(out, "validate", _public_options(args),
                        [args.rankings, args.covariates], {}, started)
    return EXIT_OK


def cmd_fit(args) -> int:
    started = time.time()
    _check_common_numeric(args)
    catalog, data, X = _load_inputs(args)
    report = check_identifiability(X)
    if not report.passed and not args.force:
        print(
            f"error: covariate matrix has rank {report.rank} < p = {report.n_variables}; "
            "coefficients are not unique (rerun with --force to override)",
            file=sys.stderr,
        )
        return EXIT_IDENTIFIABILITY
    tau = _load_tau(args.tau, data.n_groups) if args.tau else None
    cfg = PenaltyConfig(args.lambda_s, args.lambda_f, tau=tau, epsilon=args.epsilon)
    result = fit(data, X, cfg, xi=args.xi, max_iter=args.max_iter, check_rank=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_fit_outputs(out, data, X, catalog, result, args.zero_threshold)
    _write_manifest(
        out,
        "fit",
        _public_options(args),
        [args.rankings, args.covariates] + ([args.tau] if args.tau else []),
        {"identifiability_rank": report.rank},
        started,
    )
    print(
        f"fit: lambda_s={cfg.lambda_s:g} lambda_f={cfg.lambda_f:g} "
        f"iterations={result.iterations} converged={result.converged} "
        f"objective={result.objective_trace[-1]:.6f}"
    )
    if not result.converged:
        print("warning: fit did not converge; outputs flagged", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def _parse_grid_list(text) -> tuple:
    values = tuple(float(v) for v in text.split(",") if v.strip() != "")
    return values


def cmd_select(args) -> int:
    started = time.time()
    _check_common_numeric(args)
    catalog, data, X = _load_inputs(args)
    report = check_identifiability(X)
    if not report.passed and not args.force:
        print(
            f"error: covariate matrix has rank {report.rank} < p = {report.n_variables}; "
            "coefficients are not unique (rerun with --force to override)",
            file=sys.stderr,
        )
        return EXIT_IDENTIFIABILITY
    tau = _load_tau(args.tau, data.n_groups) if args.tau else None
    threads = _resolve_threads(args.threads)
    B0 = initial_estimate(data, X)
    if args.grid_s or args.grid_f:
        if not (args.grid_s and args.grid_f):
            raise ValidationError("--grid-s and --grid-f must be given together")
        try:
            grid = PenaltyGrid(_parse_grid_list(args.grid_s), _parse_grid_list(args.grid_f))
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc
    else:
        grid = build_grid(
            data,
            X,
            n_s=args.grid_size_s,
            n_f=args.grid_size_f,
            tau=tau,
            epsilon=args.epsilon,
            zero_threshold=args.zero_threshold,
            xi=args.xi,
            init=B0,
            force=args.force,
        )
    selection = select(
        data,
        X,
        grid,
        criterion=args.criterion,
        tau=tau,
        epsilon=args.epsilon,
        zero_threshold=args.zero_threshold,
        xi=args.xi,
        threads=threads,
        init=B0,
        force=args.force,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ic_rows = [
        [ls, lf, selection.ic_table[(ls, lf)]["df"],
         selection.ic_table[(ls, lf)]["aic"], selection.ic_table[(ls, lf)]["bic"]]
        for ls in grid.lambda_s_values
        for lf in grid.lambda_f_values
        if (ls, lf) in selection.ic_table
    ]
    _write_csv(out / "ic_table.csv", ["lambda_s", "lambda_f", "df", "aic", "bic"], ic_rows)
    chosen = selection.chosen_fit
    _write_fit_outputs(out, data, X, catalog, chosen, args.zero_threshold)
    payload = {
        "criterion": selection.criterion,
        "lambda_s": selection.chosen[0],
        "lambda_f": selection.chosen[1],
        "zero_threshold": selection.zero_threshold,
        "grid_lambda_s": list(grid.lambda_s_values),
        "grid_lambda_f": list(grid.lambda_f_values),
        "grid_rule": GRID_RULE,
        "failed_cells": {f"{k[0]},{k[1]}": v for k, v in selection.failures.items()},
    }
    with open(out / "selection.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    _write_manifest(
        out,
        "select",
        _public_options(args),
        [args.rankings, args.covariates] + ([args.tau] if args.tau else []),
        {"grid_lambda_s": list(grid.lambda_s_values),
         "grid_lambda_f": list(grid.lambda_f_values),
         "grid_rule": GRID_RULE,
         "chosen": list(selection.chosen)},
        started,
    )
    print(
        f"select: criterion={selection.criterion} chose lambda_s={selection.chosen[0]:g} "
        f"lambda_f={selection.chosen[1]:g} "
        f"df={selection.ic_table[selection.chosen]['df']}"
    )
    if not chosen.converged:
        print("warning: chosen fit did not converge; outputs flagged", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_predict(args) -> int:
    started = time.time()
    fit_dir = Path(args.fit_dir)
    fit_json = fit_dir / "fit.json"
    if not fit_json.exists():
        raise ValidationError(f"{fit_json} not found; run fit or select first")
    with open(fit_json, "r", encoding="utf-8") as fh:
        model = json.load(fh)["model"]
    catalog = ObjectCatalog(tuple(model["catalog"]))
    X_train = CovariateMatrix(
        np.array(model["covariates"], dtype=float),
        tuple(model["variable_names"]),
        standardized=model["standardized"],
        column_means=model["column_means"],
        column_sds=model["column_sds"],
    )
    B_hat = CoefficientSet(np.array(model["coefficients"], dtype=float))
    with open(args.new_covariates, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValidationError(f"{args.new_covariates}: file is empty")
    header = [c.strip() for c in rows[0]]
    if header[:1] != ["object"] or tuple(header[1:]) != tuple(model["variable_names"]):
        raise ValidationError(
            "new-covariates header must be object,"
            + ",".join(model["variable_names"])
        )
    labels = []
    values = []
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValidationError(f"{args.new_covariates}:{ln}: expected {len(header)} fields")
        labels.append(row[0].strip())
        try:
            values.append([float(c) for c in row[1:]])
        except ValueError as exc:
            raise ValidationError(
                f"{args.new_covariates}:{ln}: non-numeric covariate value"
            ) from exc
    if len(set(labels)) != len(labels):
        raise ValidationError("duplicate label in new-covariates file")
    table = predict_new(
        B_hat,
        X_train,
        catalog,
        labels,
        np.array(values, dtype=float),
        group_labels=tuple(model["group_labels"]),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rank_table(table, out / "rank_table.csv")
    _write_manifest(
        out,
        "predict",
        _public_options(args),
        [fit_json, args.new_covariates],
        {},
        started,
    )
    print(
        f"predict: ranked {len(table.object_labels)} objects "
        f"({int(table.predicted_only.sum())} predicted-only) "
        f"across {len(table.group_labels)} groups"
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    started = time.time()
    _check_common_numeric(args)
    threads = _resolve_threads(args.threads)
    if args.scenario:
        scenarios = [(name, scenario_preset(name)) for name in args.scenario]
    else:
        cfg = SimulationConfig(
            K=args.K, M=args.M, m=args.m, p=args.p, n_k=args.n_k,
            eta=args.eta, delta=args.delta, n_new=args.n_new,
        )
        scenarios = [("custom", cfg)]
    methods = tuple(args.methods.split(",")) if args.methods else STUDY_METHODS
    result = run_study(
        scenarios,
        replicates=args.replicates,
        methods=methods,
        seed=args.seed,
        threads=threads,
        n_s=args.grid_size_s,
        n_f=args.grid_size_f,
        criterion=args.criterion,
        zero_threshold=args.zero_threshold,
        epsilon=args.epsilon,
        xi=args.xi,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = [
        "scenario", "K", "M", "m", "p", "n_k", "eta", "delta", "n_new", "method",
        "rmse_mean", "rmse_se", "f1_mean", "f1_se", "rcr_mean", "rcr_se",
        "rcr_pred_mean", "rcr_pred_se", "seconds_mean", "replicates_used",
    ]
    rows = []
    for row in result.rows:
        values = [row[c] for c in header]
        if not args.timing:
            values[header.index("seconds_mean")] = float("nan")
        rows.append(values)
    _write_csv(out / "study.csv", header, rows)
    _write_csv(
        out / "rcr_replicates.csv",
        ["scenario", "method", "replicate", "rcr", "rcr_pred"],
        [
            [r["scenario"], r["method"], r["replicate"], r["rcr"], r["rcr_pred"]]
            for r in result.replicate_rows
        ],
    )
    _write_manifest(
        out,
        "simulate",
        _public_options(args),
        [],
        {
            "scenarios": {name: vars(cfg) for name, cfg in scenarios},
            "grid_rule": GRID_RULE,
            "failures": [list(f) for f in result.failures],
        },
        started,
    )
    for name, rep_idx, message in result.failures:
        print(f"warning: scenario {name} replicate {rep_idx} failed: {message}",
              file=sys.stderr)
    print(
        f"simulate: {len(scenarios)} scenario(s) x {args.replicates} replicates, "
        f"{len(result.failures)} failure(s); study table written"
    )
    return EXIT_OK


def _add_common_io(parser, with_fit_options=True) -> None:
    parser.add_argument("--rankings", required=True, help="rankings CSV file")
    parser.add_argument("--covariates", required=True, help="covariates CSV file")
    parser.add_argument(
        "--standardize",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="z-score covariate columns before fitting (default on)",
    )
    if with_fit_options:
        parser.add_argument("--out", required=True, help="output directory")
        parser.add_argument("--epsilon", type=float, default=1e-5,
                            help="surrogate smoothing constant")
        parser.add_argument("--xi", type=float, default=1e-8,
                            help="relative objective change declaring convergence")
        parser.add_argument("--zero-threshold", type=float, default=1e-4,
                            help="magnitude below which a coefficient counts as zero")
        parser.add_argument("--max-iter", type=int, default=500)
        parser.add_argument("--tau", default=None,
                            help="optional headerless KxK CSV of fusion pair weights")
        parser.add_argument("--force", action="store_true",
                            help="fit even when the covariate matrix is rank deficient")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfpl",
        description=(
            "Group-specific ranking models from partial rankings with "
            "object covariates, L1 shrinkage and cross-group fusion."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check input files without fitting")
    _add_common_io(p_validate, with_fit_options=False)
    p_validate.add_argument("--out", default=None, help="optional report directory")
    p_validate.set_defaults(func=cmd_validate)

    p_fit = sub.add_parser("fit", help="fit at one penalty pair")
    _add_common_io(p_fit)
    p_fit.add_argument("--lambda-s", type=float, required=True, help="shrinkage penalty")
    p_fit.add_argument("--lambda-f", type=float, required=True, help="fusion penalty")
    p_fit.set_defaults(func=cmd_fit)

    p_select = sub.add_parser("select", help="fit a penalty grid and pick by criterion")
    _add_common_io(p_select)
    p_select.add_argument("--criterion", choices=["aic", "bic"], required=True)
    p_select.add_argument("--grid-s", default=None,
                          help="explicit comma-separated lambda_s values (first must be 0)")
    p_select.add_argument("--grid-f", default=None,
                          help="explicit comma-separated lambda_f values (first must be 0)")
    p_select.add_argument("--grid-size-s", type=int, default=10)
    p_select.add_argument("--grid-size-f", type=int, default=10)
    p_select.add_argument("--threads", type=int, default=None,
                          help="worker threads (default SFPL_THREADS or 1)")
    p_select.set_defaults(func=cmd_select)

    p_predict = sub.add_parser("predict", help="rank new objects using a prior fit")
    p_predict.add_argument("--fit-dir", required=True, help="directory written by fit/select")
    p_predict.add_argument("--new-covariates", required=True,
                           help="CSV of new objects with the training variables")
    p_predict.add_argument("--out", required=True)
    p_predict.set_defaults(func=cmd_predict)

    p_sim = sub.add_parser("simulate", help="run the simulation study")
    p_sim.add_argument("--scenario", action="append", default=None,
                       help="preset name, e.g. table1-n100-p5 (repeatable)")
    p_sim.add_argument("--K", type=int, default=4)
    p_sim.add_argument("--M", type=int, default=20)
    p_sim.add_argument("--m", type=int, default=3)
    p_sim.add_argument("--p", type=int, default=5)
    p_sim.add_argument("--n-k", type=int, default=100)
    p_sim.add_argument("--eta", type=float, default=0.25)
    p_sim.add_argument("--delta", type=float, default=0.25)
    p_sim.add_argument("--n-new", type=int, default=0)
    p_sim.add_argument("--replicates", type=int, default=50)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--threads", type=int, default=None,
                       help="worker processes (default SFPL_THREADS or 1)")
    p_sim.add_argument("--methods", default=None, help="comma list among SFPL,PL,PPL")
    p_sim.add_argument("--criterion", choices=["aic", "bic"], default="bic")
    p_sim.add_argument("--grid-size-s", type=int, default=10)
    p_sim.add_argument("--grid-size-f", type=int, default=10)
    p_sim.add_argument("--zero-threshold", type=float, default=1e-4)
    p_sim.add_argument("--epsilon", type=float, default=1e-5)
    p_sim.add_argument("--xi", type=float, default=1e-8)
    p_sim.add_argument("--timing", action="store_true",
                       help="record wall-clock means in the study table "
                            "(off by default so reruns are byte-identical)")
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except IdentifiabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IDENTIFIABILITY


if __name__ == "__main__":
    sys.exit(main())
