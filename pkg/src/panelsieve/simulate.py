"""Synthetic panels and Monte Carlo studies of the estimator and tests.

Data-generating processes with the three error structures (iid,
task-heteroskedastic, subject factor), replication harnesses for the
convergence-rate and test-size experiments, and the exact one-sample
Kolmogorov-Smirnov distance used to compare statistic samples against
their reference laws. Every study is a pure function of its master seed:
replication r of cell c draws from a stream spawned as
SeedSequence([master_seed, c, r]), so cell evaluation order and
parallelism cannot change the results.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .basis import BasisSpec, design_matrix
from .covariance import known_covariance, sample_avg_covariance
from .design import DesignSet
from .estimator import ExperimentData, fit, sup_error
from .exceptions import ConditioningError, RankDeficiencyError
from .inference import ConstraintSpec, wald

_PRESETS = {
    "exp": lambda X: np.exp(X[:, 0]),
    "exp_diff": lambda X: np.exp(X[:, 0] - X[:, 1]),
}

_ERROR_MODELS = ("iid", "diagonal_hetero", "factor")

_NOISE_LAWS = ("gaussian", "uniform")


@dataclass(frozen=True)
class DgpSpec:
    """A response surface plus an error structure on a stimulus box.

    ``f_kind`` selects the surface:

    * ``"stevens_linear"`` : kappa * (x1 - x2), the log power law with
      exponent ``kappa`` (params: kappa);
    * ``"polynomial"`` : psi(x) @ beta on a given basis (params: spec,
      beta);
    * ``"analytic_smooth"`` : a named preset, ``"exp"`` (d=1) or
      ``"exp_diff"`` (d=2).

    ``error_model`` is one of iid (params: sigma2), diagonal_hetero
    (params: sigma_fn, a callable task variance over the stimuli), or
    factor (params: sigma_nu2, sigma_ups2). ``noise_law`` draws shocks
    as Gaussian (default) or centered uniform with matching variance.
    """

    f_kind: str
    f_params: dict = field(default_factory=dict)
    error_model: str = "iid"
    error_params: dict = field(default_factory=dict)
    noise_law: str = "gaussian"

    def __post_init__(self):
        if self.f_kind not in ("stevens_linear", "polynomial", "analytic_smooth"):
            raise ValueError(f"unknown surface kind {self.f_kind!r}")
        if self.error_model not in _ERROR_MODELS:
            raise ValueError(f"unknown error model {self.error_model!r}")
        if self.noise_law not in _NOISE_LAWS:
            raise ValueError(f"unknown noise law {self.noise_law!r}")
        for key in ("sigma2", "sigma_nu2", "sigma_ups2"):
            if key in self.error_params and self.error_params[key] < 0:
                raise ValueError(f"{key} must be nonnegative")

    def f_true(self, X: np.ndarray) -> np.ndarray:
        """Evaluate the surface at the (T, d) stimulus array."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.f_kind == "stevens_linear":
            kappa = float(self.f_params.get("kappa", 1.0))
            return kappa * (X[:, 0] - X[:, 1])
        if self.f_kind == "polynomial":
            spec = self.f_params["spec"]
            beta = np.asarray(self.f_params["beta"], dtype=float)
            return design_matrix(spec, X) @ beta
        preset = self.f_params.get("preset", "exp")
        if preset not in _PRESETS:
            raise ValueError(f"unknown analytic preset {preset!r}")
        return _PRESETS[preset](X)

    def sigma_bar(self, stimuli: np.ndarray, n: int = None) -> np.ndarray:
        """The population average error covariance over tasks, T x T."""
        T = np.atleast_2d(stimuli).shape[0]
        if self.error_model == "iid":
            return float(self.error_params.get("sigma2", 1.0)) * np.eye(T)
        if self.error_model == "diagonal_hetero":
            v = np.asarray(self.error_params["sigma_fn"](np.atleast_2d(stimuli)))
            return np.diag(v.astype(float))
        nu2 = float(self.error_params.get("sigma_nu2", 1.0))
        ups2 = float(self.error_params.get("sigma_ups2", 1.0))
        return nu2 * np.ones((T, T)) + ups2 * np.eye(T)


def _draw(rng: np.random.Generator, law: str, size) -> np.ndarray:
    """Unit-variance centered shocks under the requested law."""
    if law == "gaussian":
        return rng.standard_normal(size)
    # uniform on [-sqrt(3), sqrt(3)] has unit variance
    return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size)


def _panel_errors(dgp: DgpSpec, n: int, T: int, stimuli: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    if dgp.error_model == "iid":
        s = math.sqrt(float(dgp.error_params.get("sigma2", 1.0)))
        return s * _draw(rng, dgp.noise_law, (n, T))
    if dgp.error_model == "diagonal_hetero":
        v = np.asarray(dgp.error_params["sigma_fn"](np.atleast_2d(stimuli)))
        return np.sqrt(v.astype(float))[None, :] * _draw(rng, dgp.noise_law, (n, T))
    nu = math.sqrt(float(dgp.error_params.get("sigma_nu2", 1.0)))
    ups = math.sqrt(float(dgp.error_params.get("sigma_ups2", 1.0)))
    common = nu * _draw(rng, dgp.noise_law, (n, 1))
    return common + ups * _draw(rng, dgp.noise_law, (n, T))


def replication_rng(master_seed: int, cell: int, rep: int) -> np.random.Generator:
    """The stream of replication ``rep`` in cell ``cell`` of a study."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, cell, rep]))


def gen_panel(dgp: DgpSpec, design: DesignSet, n: int, seed) -> ExperimentData:
    """Draw an n x T panel Y_it = f(X_t) + e_it at the design points.

    ``seed`` may be an integer, a SeedSequence, or a Generator; errors
    are independent across subjects.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    X = design.points
    f = dgp.f_true(X)
    eps = _panel_errors(dgp, n, X.shape[0], X, rng)
    return ExperimentData(responses=f[None, :] + eps, stimuli=X)


@dataclass(frozen=True)
class StudyResult:
    """Per-cell Monte Carlo summaries with the seeds needed to rerun them.

    ``cells`` is a list of dicts carrying the cell parameters, the
    replication count, and the cell's metrics; ``summary`` holds study
    level aggregates (e.g. the fitted log-log slope and its standard
    error); ``master_seed`` makes the study exactly reproducible.
    """

    kind: str
    cells: list
    summary: dict
    master_seed: int
    reps: int

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "master_seed": self.master_seed,
            "reps": self.reps,
            "summary": self.summary,
            "cells": self.cells,
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path) -> None:
        """Tidy export: one row per (cell, metric) pair."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell", "n", "T", "P", "reps", "metric", "value"])
            for c, cell in enumerate(self.cells):
                base = [c, cell.get("n", ""), cell.get("T", ""),
                        cell.get("P", ""), cell.get("reps", "")]
                for key, val in sorted(cell.items()):
                    if key in ("n", "T", "P", "reps"):
                        continue
                    if isinstance(val, (int, float)) and np.isfinite(val):
                        writer.writerow(base + [key, repr(float(val))])


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """OLS slope of log(y) on log(x), with its standard error."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    A = np.stack([np.ones_like(lx), lx], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    dof = max(len(lx) - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    return float(coef[1]), float(math.sqrt(cov[1, 1]))


def convergence_study(dgp: DgpSpec, spec: BasisSpec, design_fn, cells,
                      reps: int, master_seed: int,
                      x_axis: str = "n") -> StudyResult:
    """Median sup-error per (n, T) cell and the fitted log-log rate.

    ``cells`` is a sequence of (n, T) pairs; ``design_fn(T)`` builds the
    stimulus set for a cell. The slope regresses log(median error) on
    log(n) (``x_axis="n"``) or log(nT) (``x_axis="nT"``); the regression
    is skipped when every median is below 1e-10 (noiseless runs).
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if x_axis not in ("n", "nT"):
        raise ValueError("x_axis must be 'n' or 'nT'")
    out_cells = []
    for c, (n, T) in enumerate(cells):
        design = design_fn(T)
        errors, failures = [], 0
        for r in range(reps):
            rng = replication_rng(master_seed, c, r)
            data = gen_panel(dgp, design, n, rng)
            try:
                fitted = fit(data, spec)
            except (RankDeficiencyError, ConditioningError):
                failures += 1
                continue
            errors.append(sup_error(fitted, dgp.f_true, s=0))
        out_cells.append({
            "n": int(n), "T": int(T), "P": spec.size,
            "reps": reps - failures, "failures": failures,
            "median_sup_error": float(np.median(errors)) if errors else math.nan,
        })
    meds = np.array([c["median_sup_error"] for c in out_cells])
    xs = np.array([c["n"] if x_axis == "n" else c["n"] * c["T"]
                   for c in out_cells], dtype=float)
    ok = np.isfinite(meds)
    summary = {"x_axis": x_axis}
    if np.all(meds[ok] <= 1e-10) or ok.sum() < 2:
        summary.update(slope=None, slope_se=None, slope_skipped=True)
    else:
        slope, se = _loglog_slope(xs[ok], meds[ok])
        summary.update(slope=slope, slope_se=se, slope_skipped=False)
    return StudyResult(
        kind="convergence", cells=out_cells, summary=summary,
        master_seed=master_seed, reps=reps,
    )


def _binomial_ci(k: int, m: int, conf: float = 0.95) -> tuple[float, float]:
    """Exact (Clopper-Pearson) confidence interval for a proportion."""
    alpha = 1.0 - conf
    lo = 0.0 if k == 0 else float(special.betaincinv(k, m - k + 1, alpha / 2))
    hi = 1.0 if k == m else float(special.betaincinv(k + 1, m - k, 1 - alpha / 2))
    return lo, hi


def size_power_study(dgp: DgpSpec, spec: BasisSpec, constraint: ConstraintSpec,
                     design: DesignSet, n: int, reps: int, level: float,
                     sigma_mode: str, master_seed: int,
                     cell: int = 0) -> StudyResult:
    """Monte Carlo rejection rate of the quadratic-form test.

    The decision uses the chi-square p-value when the restriction count
    is at most 30 and the normal p-value otherwise. Returns the
    rejection frequency with its exact binomial confidence interval and
    the retained samples of both statistic versions.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if not 0.0 < level <= 1.0:
        raise ValueError("level must be in (0, 1]")
    if sigma_mode not in ("known", "plug_in"):
        raise ValueError("sigma_mode must be 'known' or 'plug_in'")
    R = constraint.effective_rank
    use_chi2 = R <= 30
    w_stars, w_stds, rejections = [], [], 0
    for r in range(reps):
        rng = replication_rng(master_seed, cell, r)
        data = gen_panel(dgp, design, n, rng)
        fitted = fit(data, spec)
        if sigma_mode == "known":
            sigma = known_covariance(dgp.sigma_bar(design.points))
        else:
            sigma = sample_avg_covariance(fitted.residuals)
        report = wald(fitted, constraint, sigma)
        w_stars.append(report.w_star)
        w_stds.append(report.w_standardized)
        p = report.p_chi2 if use_chi2 else report.p_normal
        rejections += p < level
    rate = rejections / reps
    lo, hi = _binomial_ci(rejections, reps)
    cell_rec = {
        "n": int(n), "T": design.n_tasks, "P": spec.size, "reps": reps,
        "R": R, "level": level, "rejection_rate": rate,
        "ci_low": lo, "ci_high": hi,
    }
    return StudyResult(
        kind="size_power",
        cells=[cell_rec],
        summary={
            "sigma_mode": sigma_mode,
            "p_value_used": "chi2" if use_chi2 else "normal",
            "rejection_rate": rate,
            "w_star_samples": w_stars,
            "w_standardized_samples": w_stds,
        },
        master_seed=master_seed,
        reps=reps,
    )


def distribution_distance(samples, reference: str, R: int = None) -> float:
    """Exact one-sample Kolmogorov-Smirnov distance to a reference law.

    ``reference`` is ``"chi2"`` (with ``R`` degrees of freedom) or
    ``"normal"``. The sup of |ECDF - CDF| over the sample points is
    computed from both one-sided gaps at each order statistic.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    m = x.size
    if m < 100:
        raise ValueError(f"need at least 100 samples, got {m}")
    if reference == "chi2":
        if R is None or R < 1:
            raise ValueError("chi2 reference needs degrees of freedom R >= 1")
        cdf = special.gammainc(R / 2.0, np.maximum(x, 0.0) / 2.0)
    elif reference == "normal":
        cdf = special.ndtr(x)
    else:
        raise ValueError(f"unknown reference {reference!r}")
    i = np.arange(1, m + 1)
    d_plus = np.max(i / m - cdf)
    d_minus = np.max(cdf - (i - 1) / m)
    return float(max(d_plus, d_minus))
