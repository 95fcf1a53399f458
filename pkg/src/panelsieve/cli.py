"""Command-line front end: fit, test, cv, design and simulate workflows.

Reads long-format response panels and stimulus tables from CSV, runs the
requested analysis, and writes machine-readable JSON reports plus
plot-ready CSV grids. All floating-point output is serialized with
``repr`` (17 significant digits), and every report embeds the fully
resolved configuration, so identical inputs and seeds give byte
identical files.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical
failure. No partial report is left behind on a nonzero exit: outputs
are written to temporaries and renamed at the end.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .basis import BasisSpec, derivative_operator, design_matrix
from .covariance import known_covariance, sample_avg_covariance
from .design import (
    DesignSet,
    assumption2_report,
    gram_deviation,
    grid_design,
    halton_design,
    target_gram_uniform_legendre,
)
from .estimator import ExperimentData, fit, loo_cv_score
from .exceptions import (
    ConditioningError,
    DimensionError,
    DomainError,
    IdentificationError,
    InconsistentConstraintError,
    LeverageError,
    RankDeficiencyError,
    SelectionError,
)
from .inference import (
    derivative_sum_constraint,
    linear_constraint,
    pointwise_constraint,
    stevens_constraint,
    wald,
)
from .simulate import DgpSpec, convergence_study

_NUMERICAL_ERRORS = (
    ConditioningError,
    RankDeficiencyError,
    IdentificationError,
    InconsistentConstraintError,
    LeverageError,
    SelectionError,
    np.linalg.LinAlgError,
)


class UsageError(Exception):
    """Configuration or input-file problem; maps to exit code 2."""


# ---------------------------------------------------------------------------
# serialization helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        # json serializes floats with repr: shortest exact round-trip form
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _write_json(path: str, payload: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _write_csv(path: str, header: list, rows) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating))
                             else v for v in row])
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# input parsing


def _read_csv_rows(path: str, required: list) -> list:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise UsageError(f"{path}: empty file, header row required")
            missing = [c for c in required if c not in reader.fieldnames]
            if missing:
                raise UsageError(
                    f"{path}: missing required columns {missing} "
                    f"(found {reader.fieldnames})"
                )
            return list(reader), reader.fieldnames
    except OSError as err:
        raise UsageError(f"cannot read {path}: {err}") from err


def _parse_float(path: str, line: int, col: str, raw: str) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise UsageError(
            f"{path}, line {line}, column {col!r}: not a number: {raw!r}"
        ) from None


def load_stimuli(path: str) -> tuple:
    """Read a stimuli CSV (task_id, x1..xd) -> (task ids, T x d array)."""
    rows, names = _read_csv_rows(path, ["task_id"])
    xcols = [c for c in names if c.startswith("x")]
    if not xcols:
        raise UsageError(f"{path}: no coordinate columns x1..xd found")
    xcols.sort(key=lambda c: int(c[1:]) if c[1:].isdigit() else 0)
    task_ids, points = [], []
    for i, row in enumerate(rows, start=2):
        task_ids.append(row["task_id"])
        points.append([_parse_float(path, i, c, row[c]) for c in xcols])
    if len(set(task_ids)) != len(task_ids):
        raise UsageError(f"{path}: duplicate task_id values")
    return task_ids, np.array(points, dtype=float)


def load_panel(path: str, task_ids: list) -> tuple:
    """Read a long-format response CSV into an n x T panel.

    Requires every (subject, task) cell exactly once; task order follows
    the stimuli file.
    """
    rows, _ = _read_csv_rows(path, ["subject_id", "task_id", "response"])
    t_index = {t: j for j, t in enumerate(task_ids)}
    subjects, s_index = [], {}
    cells = {}
    for i, row in enumerate(rows, start=2):
        s, t = row["subject_id"], row["task_id"]
        if t not in t_index:
            raise UsageError(
                f"{path}, line {i}: task_id {t!r} not present in the stimuli file"
            )
        if s not in s_index:
            s_index[s] = len(subjects)
            subjects.append(s)
        key = (s_index[s], t_index[t])
        if key in cells:
            raise UsageError(
                f"{path}, line {i}: duplicate cell subject {s!r} task {t!r}"
            )
        cells[key] = _parse_float(path, i, "response", row["response"])
    n, T = len(subjects), len(task_ids)
    Y = np.full((n, T), np.nan)
    for (i, j), v in cells.items():
        Y[i, j] = v
    if np.isnan(Y).any():
        i, j = np.argwhere(np.isnan(Y))[0]
        raise UsageError(
            f"{path}: incomplete panel at subject {subjects[i]!r} "
            f"task {task_ids[j]!r}"
        )
    return subjects, Y


def load_covariates(path: str, subjects: list) -> np.ndarray:
    rows, names = _read_csv_rows(path, ["subject_id"])
    zcols = [c for c in names if c.startswith("z")]
    if not zcols:
        raise UsageError(f"{path}: no covariate columns z1..zq found")
    zcols.sort(key=lambda c: int(c[1:]) if c[1:].isdigit() else 0)
    table = {}
    for i, row in enumerate(rows, start=2):
        vals = [_parse_float(path, i, c, row[c]) for c in zcols]
        if any(v not in (0.0, 1.0) for v in vals):
            raise UsageError(f"{path}, line {i}: covariates must be 0 or 1")
        table[row["subject_id"]] = vals
    missing = [s for s in subjects if s not in table]
    if missing:
        raise UsageError(f"{path}: missing covariates for subjects {missing[:5]}")
    return np.array([table[s] for s in subjects], dtype=float)


def _parse_orders(raw: str) -> tuple:
    try:
        return tuple(int(v) for v in raw.split(","))
    except ValueError:
        raise UsageError(f"--orders must be comma-separated integers, got {raw!r}")


def _parse_domain(raw: str, d: int):
    if raw is None:
        return None
    try:
        vals = [float(v) for v in raw.split(",")]
    except ValueError:
        raise UsageError(f"--domain must be comma-separated numbers, got {raw!r}")
    if len(vals) != 2 * d:
        raise UsageError(
            f"--domain needs {2 * d} numbers (lo,hi per axis), got {len(vals)}"
        )
    return tuple((vals[2 * k], vals[2 * k + 1]) for k in range(d))


def _basis_from_args(args) -> BasisSpec:
    orders = _parse_orders(args.orders)
    domain = _parse_domain(args.domain, len(orders))
    try:
        return BasisSpec(family=args.basis, orders=orders, domain=domain)
    except (ValueError, DimensionError) as err:
        raise UsageError(str(err)) from err


def _load_config_overrides(args, argv) -> None:
    """Apply key=value pairs from --config; explicit flags win."""
    if args.config is None:
        return
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as err:
        raise UsageError(f"cannot read config {args.config}: {err}") from err
    except json.JSONDecodeError as err:
        raise UsageError(f"config {args.config} is not valid JSON: {err}") from err
    if not isinstance(cfg, dict):
        raise UsageError(f"config {args.config} must be a JSON object")
    cli_tokens = {t.split("=")[0].lstrip("-").replace("-", "_")
                  for t in argv if t.startswith("--")}
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise UsageError(f"config {args.config}: unknown key {key!r}")
        if attr in cli_tokens:
            continue  # explicit flag overrides the file
        setattr(args, attr, value)


def _resolved_config(args) -> dict:
    skip = {"func", "config"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# ---------------------------------------------------------------------------
# commands


def _load_experiment(args) -> tuple:
    task_ids, X = load_stimuli(args.stimuli)
    subjects, Y = load_panel(args.data, task_ids)
    Z = load_covariates(args.covariates, subjects) if args.covariates else None
    try:
        data = ExperimentData(
            responses=Y, stimuli=X, subject_covariates=Z,
            subject_ids=tuple(subjects), task_ids=tuple(task_ids),
        )
    except (DimensionError, ValueError) as err:
        raise UsageError(str(err)) from err
    return data, task_ids


def cmd_fit(args) -> int:
    data, task_ids = _load_experiment(args)
    spec = _basis_from_args(args)
    if data.n_tasks < spec.size:
        raise UsageError(
            f"underdetermined fit: basis size {spec.size} exceeds task "
            f"count {data.n_tasks}"
        )
    fitted = fit(data, spec)
    sigma = sample_avg_covariance(fitted.residuals)
    try:
        cv = loo_cv_score(data, spec)
    except (RankDeficiencyError, LeverageError):
        cv = None
    gram = assumption2_report(fitted.design)
    report = {
        "tool_version": __version__,
        "config": _resolved_config(args),
        "basis": spec.to_config(),
        "n": data.n_subjects,
        "T": data.n_tasks,
        "P": spec.size,
        "beta_hat": fitted.beta_hat,
        "gram": gram,
        "sigma_bar": {
            "source": sigma.source,
            "lambda_max": sigma.lambda_max,
            "lambda_min": sigma.lambda_min,
            "trace": sigma.trace,
        },
        "cv_score": cv,
    }
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "report.json"), report)

    res = args.grid_resolution
    axes = [np.linspace(a, b, res) for a, b in spec.domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.ravel() for m in mesh], axis=1)
    Psi = design_matrix(spec, grid)
    cols = [f"x{k + 1}" for k in range(spec.ndim)] + ["f_hat"]
    out = [grid[:, k] for k in range(spec.ndim)] + [Psi @ fitted.beta_hat]
    for lam_raw in args.derivative or []:
        lam = _parse_orders(lam_raw)
        if len(lam) != spec.ndim:
            raise UsageError(
                f"--derivative {lam_raw!r} has {len(lam)} entries, basis "
                f"has dimension {spec.ndim}"
            )
        D = derivative_operator(spec, lam).matrix
        cols.append("d" + "_".join(str(v) for v in lam))
        out.append(Psi @ D @ fitted.beta_hat)
    rows = zip(*out)
    _write_csv(os.path.join(args.out, "surface.csv"), cols, rows)
    return 0


def _build_constraint(args, spec: BasisSpec, fitted):
    recipe = args.constraint
    if recipe == "stevens":
        return stevens_constraint(spec)
    if recipe == "derivative_sum":
        return derivative_sum_constraint(spec)
    if recipe == "point":
        if not args.point:
            raise UsageError("point recipe requires at least one --point x,...,v")
        pts, vals = [], []
        for raw in args.point:
            nums = [float(v) for v in raw.split(",")]
            if len(nums) != spec.ndim + 1:
                raise UsageError(
                    f"--point needs {spec.ndim} coordinates plus a target value"
                )
            pts.append(nums[:-1])
            vals.append(nums[-1])
        return pointwise_constraint(spec, pts, vals)
    if recipe == "matrix_file":
        if not args.matrix:
            raise UsageError("matrix_file recipe requires --matrix")
        try:
            M = np.loadtxt(args.matrix, delimiter=",", ndmin=2)
        except (OSError, ValueError) as err:
            raise UsageError(f"cannot read matrix {args.matrix}: {err}") from err
        if M.shape[1] == spec.size + 1:
            rhs = M[:, -1]
            M = M[:, :-1]
        elif M.shape[1] == spec.size:
            rhs = np.zeros(M.shape[0])
        else:
            raise UsageError(
                f"matrix has {M.shape[1]} columns; expected P={spec.size} "
                f"or P+1 with a target column"
            )
        return linear_constraint(M, rhs)
    raise UsageError(f"unknown constraint recipe {recipe!r}")


def cmd_test(args) -> int:
    data, _ = _load_experiment(args)
    spec = _basis_from_args(args)
    if data.n_tasks < spec.size:
        raise UsageError(
            f"underdetermined fit: basis size {spec.size} exceeds task "
            f"count {data.n_tasks}"
        )
    fitted = fit(data, spec)
    constraint = _build_constraint(args, spec, fitted)
    if args.sigma == "known":
        if not args.sigma_file:
            raise UsageError("--sigma known requires --sigma-file")
        try:
            S = np.loadtxt(args.sigma_file, delimiter=",", ndmin=2)
        except (OSError, ValueError) as err:
            raise UsageError(f"cannot read {args.sigma_file}: {err}") from err
        sigma = known_covariance(S)
    else:
        sigma = sample_avg_covariance(fitted.residuals)
    report = wald(fitted, constraint, sigma)
    payload = {
        "tool_version": __version__,
        "config": _resolved_config(args),
        "basis": spec.to_config(),
        "constraint": constraint.label,
        "n": data.n_subjects,
        "T": data.n_tasks,
        "P": spec.size,
        **report.to_dict(),
    }
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "report.json"), payload)
    return 0


def cmd_cv(args) -> int:
    data, _ = _load_experiment(args)
    degrees = _parse_orders(args.degrees)
    if len(degrees) != 2 or degrees[0] > degrees[1]:
        raise UsageError("--degrees must be lo,hi with lo <= hi")
    d = data.stimuli.shape[1]
    domain = _parse_domain(args.domain, d)
    table, failures = [], []
    for J in range(degrees[0], degrees[1] + 1):
        spec = BasisSpec(family=args.basis, orders=(J,) * d, domain=domain)
        try:
            score = loo_cv_score(data, spec)
            table.append({"degree": J, "P": spec.size, "cv_score": score})
        except (RankDeficiencyError, ConditioningError, LeverageError) as err:
            failures.append({"degree": J, "P": spec.size, "error": str(err)})
    if not table:
        raise UsageError(
            f"no candidate is feasible on T={data.n_tasks} tasks: "
            f"{failures[0]['error']}"
        )
    best = min(table, key=lambda r: (r["cv_score"], r["P"]))
    payload = {
        "tool_version": __version__,
        "config": _resolved_config(args),
        "candidates": table,
        "infeasible": failures,
        "selected_degree": best["degree"],
        "tie_break": "minimal CV score, then smallest basis",
    }
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "report.json"), payload)
    return 0


def cmd_design(args) -> int:
    orders = _parse_orders(args.orders)
    d = len(orders)
    domain = _parse_domain(args.domain, d) or tuple((-1.0, 1.0) for _ in orders)
    spec = BasisSpec(family=args.basis, orders=orders, domain=domain)
    try:
        if args.generator == "halton":
            design = halton_design(args.T, d, domain)
        else:
            per_axis = max(2, round(args.T ** (1.0 / d)))
            design = grid_design((per_axis,) * d, domain)
    except (ValueError, DimensionError) as err:
        raise UsageError(str(err)) from err
    Psi = design_matrix(spec, design.points)
    report = {
        "tool_version": __version__,
        "config": _resolved_config(args),
        "generator": design.generator,
        "T": design.n_tasks,
        "P": spec.size,
        "gram": assumption2_report(Psi),
    }
    if spec.family == "legendre":
        Q = target_gram_uniform_legendre(spec)
        report["gram_deviation"] = gram_deviation(Psi, Q)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "report.json"), report)
    header = ["task_id"] + [f"x{k + 1}" for k in range(d)]
    rows = ([f"t{j}"] + list(design.points[j]) for j in range(design.n_tasks))
    _write_csv(os.path.join(args.out, "stimuli.csv"), header, rows)
    return 0


def cmd_simulate(args) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    domain = ((-1.0, 1.0),)
    spec = BasisSpec(family="legendre", orders=(args.degree,), domain=domain)
    rng = np.random.default_rng(args.seed)
    beta_true = rng.normal(size=spec.size)
    dgp = DgpSpec(
        f_kind="polynomial",
        f_params={"spec": spec, "beta": beta_true},
        error_model=args.errors,
        error_params=(
            {"sigma2": args.sigma2} if args.errors == "iid"
            else {"sigma_nu2": args.sigma2, "sigma_ups2": args.sigma2}
        ),
    )
    try:
        ns = [int(v) for v in args.n_grid.split(",")]
    except ValueError:
        raise UsageError(f"--n-grid must be comma-separated integers: {args.n_grid!r}")
    cells = [(n, args.T) for n in ns]
    result = convergence_study(
        dgp, spec, lambda T: halton_design(T, 1, domain), cells,
        reps=args.reps, master_seed=args.seed,
        x_axis="n" if args.errors == "factor" else "nT",
    )
    os.makedirs(args.out, exist_ok=True)
    payload = result.to_dict()
    payload["tool_version"] = __version__
    payload["config"] = _resolved_config(args)
    _write_json(os.path.join(args.out, "study.json"), payload)
    result.to_csv(os.path.join(args.out, "cells.csv"))
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--config", default=None,
                   help="JSON config file; explicit flags override it")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="responses CSV (long format)")
    p.add_argument("--stimuli", required=True, help="stimuli CSV (task_id,x1..xd)")
    p.add_argument("--covariates", default=None,
                   help="optional binary covariates CSV (subject_id,z1..zq)")


def _add_basis(p: argparse.ArgumentParser) -> None:
    p.add_argument("--basis", default="legendre", choices=("legendre", "power"))
    p.add_argument("--orders", required=True,
                   help="comma-separated per-dimension degrees, e.g. 2,2")
    p.add_argument("--domain", default=None,
                   help="comma-separated lo,hi per axis, e.g. 0,1,0,1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panelsieve",
        description="Sieve regression and restriction tests on designed panels",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the averaged panel on a polynomial basis")
    _add_data(p)
    _add_basis(p)
    _add_common(p)
    p.add_argument("--grid-resolution", type=int, default=50)
    p.add_argument("--derivative", action="append", default=None,
                   help="multi-index for an extra surface column, e.g. 1,0")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("test", help="quadratic-form test of a restriction recipe")
    _add_data(p)
    _add_basis(p)
    _add_common(p)
    p.add_argument("--constraint", required=True,
                   choices=("point", "derivative_sum", "stevens", "matrix_file"))
    p.add_argument("--point", action="append", default=None,
                   help="x1,..,xd,value for the point recipe (repeatable)")
    p.add_argument("--matrix", default=None,
                   help="CSV restriction matrix for matrix_file (optional last "
                        "column = target)")
    p.add_argument("--sigma", default="plugin", choices=("known", "plugin"))
    p.add_argument("--sigma-file", default=None,
                   help="CSV covariance matrix for --sigma known")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("cv", help="leave-one-task-out degree selection")
    _add_data(p)
    _add_common(p)
    p.add_argument("--basis", default="legendre", choices=("legendre", "power"))
    p.add_argument("--degrees", required=True, help="lo,hi degree range")
    p.add_argument("--domain", default=None)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("design", help="generate stimuli and report conditioning")
    _add_basis(p)
    _add_common(p)
    p.add_argument("--generator", default="halton", choices=("halton", "grid"))
    p.add_argument("--T", type=int, required=True, help="number of tasks")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="seeded convergence-rate study")
    _add_common(p)
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--errors", default="factor",
                   choices=("iid", "diagonal_hetero", "factor"))
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--T", type=int, default=20)
    p.add_argument("--n-grid", default="100,400,1600")
    p.add_argument("--reps", type=int, default=100)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = parser.parse_args(argv)
        _load_config_overrides(args, argv)
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (DomainError, DimensionError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
