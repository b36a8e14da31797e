"""Benchmark runners: estimator bias/variance study and sparse regression."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .estimators import ESTIMATORS, LossOracle, exact_gradient, squared_distance_loss
from .inference import ENUMERATION_LIMIT, EnumerationTooLarge, KSubsetParams
from .sampling import make_rng, topk_mask, trial_rng

NORM_EPS = 1e-12
REPORT_FIELDS = [
    "estimator",
    "n",
    "k",
    "samples",
    "bias",
    "variance",
    "mean_error",
    "error_std",
    "wall_time_ms",
    "master_seed",
]
TRACE_FIELDS = ["step", "rmse", "map_overlap_with_planted"]


def cosine_distance(u, v) -> float:
    """``1 - cos(u, v)``; 1 by convention when either vector is (near) zero."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < NORM_EPS or nv < NORM_EPS:
        return 1.0
    return float(np.clip(1.0 - (u @ v) / (nu * nv), 0.0, 2.0))


def _cosine_distances(rows, v):
    rows = np.asarray(rows, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    nv = np.linalg.norm(v)
    if nv < NORM_EPS:
        return np.ones(len(rows))
    safe = np.where(norms < NORM_EPS, 1.0, norms)
    dist = np.clip(1.0 - rows @ v / (safe * nv), 0.0, 2.0)
    return np.where(norms < NORM_EPS, 1.0, dist)


@dataclass
class EstimatorReport:
    estimator: str
    bias: float
    variance: float
    mean_error: float
    error_std: float
    wall_time_ms: float | None = None
    n: int | None = None
    k: int | None = None
    samples: int | None = None
    master_seed: int | None = None


def compute_metrics(estimates, exact, name: str = "") -> EstimatorReport:
    """Cosine-distance bias, variance and error of a batch of estimates.

    * ``mean_error``: mean distance of each estimate to ``exact``
    * ``bias``: distance of the mean estimate to ``exact``
    * ``variance``: mean distance of each estimate to the mean estimate
    * ``error_std``: sample standard deviation of the per-estimate errors
    """
    estimates = np.asarray(estimates, dtype=np.float64)
    if estimates.ndim != 2 or len(estimates) < 2:
        raise ValueError("need at least two estimates")
    mean = estimates.mean(axis=0)
    errors = _cosine_distances(estimates, exact)
    return EstimatorReport(
        estimator=name,
        bias=cosine_distance(mean, exact),
        variance=float(_cosine_distances(estimates, mean).mean()),
        mean_error=float(errors.mean()),
        error_std=float(errors.std(ddof=1)),
    )


@dataclass
class SyntheticConfig:
    n: int = 10
    k: int = 5
    num_estimates: int = 10_000
    master_seed: int = 0
    # (name, hyperparameters) pairs, names from ESTIMATORS
    estimators: list = field(
        default_factory=lambda: [("simple", {}), ("sfe", {}), ("imle", {}), ("softsub", {})]
    )
    target_seed: int | None = None
    theta_seed: int | None = None
    threads: int | None = None

    def validate(self):
        if self.n < 1 or not 0 <= self.k <= self.n:
            raise ValueError(f"need n >= 1 and 0 <= k <= n, got n={self.n}, k={self.k}")
        if math.comb(self.n, self.k) > ENUMERATION_LIMIT:
            raise EnumerationTooLarge(f"C({self.n}, {self.k}) is too large to enumerate")
        if self.num_estimates < 2:
            raise ValueError("num_estimates must be at least 2")
        for name, _ in self.estimators:
            if name not in ESTIMATORS:
                raise ValueError(f"unknown estimator {name!r}")


def default_threads() -> int:
    env = os.environ.get("KSUBSET_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def synthetic_problem(config: SyntheticConfig):
    """Logits, target ``b`` and loss ``||z - b||^2`` for a synthetic study."""
    target_seed = config.master_seed if config.target_seed is None else config.target_seed
    b = make_rng(target_seed).standard_normal(config.n)
    if config.theta_seed is None:
        theta = np.zeros(config.n)
    else:
        theta = make_rng(config.theta_seed).standard_normal(config.n)
    return KSubsetParams(theta, config.k), b, squared_distance_loss(b)


def _run_trials(fn, params, loss, master_seed, trials, hyper):
    return [fn(params, loss, trial_rng(master_seed, t), **hyper).g for t in trials]


def run_synthetic(config: SyntheticConfig) -> list[EstimatorReport]:
    """Run every configured estimator ``num_estimates`` times against the exact gradient.

    Trial ``t`` uses the stream ``trial_rng(master_seed, t)`` for every
    estimator, and results are assembled in trial order, so the output does
    not depend on the number of threads.
    """
    config.validate()
    params, _, loss = synthetic_problem(config)
    exact = exact_gradient(params, loss).g
    threads = config.threads or default_threads()
    chunks = np.array_split(np.arange(config.num_estimates), threads)
    reports = []
    for name, hyper in config.estimators:
        fn = ESTIMATORS[name]
        start = time.perf_counter()
        if threads == 1:
            rows = _run_trials(fn, params, loss, config.master_seed, chunks[0], hyper)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = pool.map(
                    lambda c: _run_trials(fn, params, loss, config.master_seed, c, hyper),
                    chunks,
                )
                rows = [g for part in parts for g in part]
        elapsed = 1000.0 * (time.perf_counter() - start)
        report = compute_metrics(np.array(rows), exact, name)
        report.wall_time_ms = elapsed
        report.n, report.k = config.n, config.k
        report.samples = config.num_estimates
        report.master_seed = config.master_seed
        reports.append(report)
    return reports


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def reports_to_csv(reports, timing: bool = True) -> str:
    """CSV text; with ``timing=False`` the wall-time column is left empty."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_FIELDS)
    for report in reports:
        row = asdict(report)
        if not timing:
            row["wall_time_ms"] = None
        writer.writerow([_fmt(row[name]) for name in REPORT_FIELDS])
    return buf.getvalue()


def reports_to_json(reports, timing: bool = True) -> str:
    rows = []
    for report in reports:
        row = {name: asdict(report)[name] for name in REPORT_FIELDS}
        if not timing:
            row["wall_time_ms"] = None
        rows.append(row)
    return json.dumps(rows, indent=2) + "\n"


@dataclass
class SparseRegressionProblem:
    design: np.ndarray
    targets: np.ndarray
    support: np.ndarray  # 0/1 mask of the planted features
    weights: np.ndarray  # planted weights, in support order
    sigma: float
    rho: float

    @property
    def k(self) -> int:
        return int(self.support.sum())


def generate_sparse_problem(
    n: int, k: int, m: int, sigma: float, rho: float, seed: int
) -> SparseRegressionProblem:
    """Planted-support linear regression with equicorrelated Gaussian features.

    Feature rows are drawn from a normal with unit variances and pairwise
    correlation ``rho``; columns are then centred and scaled to unit
    root-mean-square before the targets are formed, so the planted weights
    are exact for the returned design.
    """
    if not m > n >= k >= 1:
        raise ValueError(f"need m > n >= k >= 1, got m={m}, n={n}, k={k}")
    if not -1.0 / max(n - 1, 1) < rho < 1.0:
        raise ValueError(f"rho={rho} does not give a positive definite covariance")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    rng = make_rng(seed)
    cov = (1.0 - rho) * np.eye(n) + rho * np.ones((n, n))
    design = rng.standard_normal((m, n)) @ np.linalg.cholesky(cov).T
    design -= design.mean(axis=0)
    design /= np.sqrt(np.mean(design**2, axis=0))
    chosen = np.sort(rng.choice(n, size=k, replace=False))
    support = np.zeros(n)
    support[chosen] = 1.0
    weights = rng.choice([-1.0, 1.0], size=k) * rng.uniform(0.5, 1.5, size=k)
    targets = design[:, chosen] @ weights + sigma * rng.standard_normal(m)
    return SparseRegressionProblem(design, targets, support, weights, float(sigma), float(rho))


def least_squares(design, targets) -> tuple[np.ndarray, float]:
    """Minimum-norm least-squares weights (SVD based) and the residual RMSE."""
    design = np.asarray(design, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if design.ndim != 2 or design.shape[0] != targets.shape[0]:
        raise ValueError("design and targets have incompatible shapes")
    if design.shape[1] == 0:
        return np.zeros(0), float(np.sqrt(np.mean(targets**2)))
    w, *_ = np.linalg.lstsq(design, targets, rcond=None)
    rmse = float(np.sqrt(np.mean((design @ w - targets) ** 2)))
    return w, rmse


def subset_regression_loss(problem: SparseRegressionProblem) -> LossOracle:
    """RMSE of the least-squares fit on the columns a mask selects.

    Entries above 0.5 count as selected.  The gradient holds the fitted
    weights fixed and differentiates the RMSE with respect to a continuous
    column mask: ``-r . phi_i w_i / (m rmse)``.  A column outside the subset
    has no fitted weight, so it is given the weight it would receive from
    regressing the current residual on it alone; without that every
    coordinate of the gradient vanishes at the fit.
    """
    design, targets = problem.design, problem.targets
    m = len(targets)
    col_sq = np.sum(design**2, axis=0)

    def fit(z):
        sel = np.flatnonzero(np.asarray(z) > 0.5)
        w, rmse = least_squares(design[:, sel], targets)
        return sel, w, rmse

    def value(z):
        return fit(z)[2]

    def grad(z):
        sel, w, rmse = fit(z)
        if rmse < NORM_EPS:
            return np.zeros(design.shape[1])
        resid = targets - design[:, sel] @ w
        corr = design.T @ resid
        weights = corr / col_sq
        weights[sel] = w
        return -corr * weights / (m * rmse)

    return LossOracle(value=value, grad=grad)


@dataclass
class SparseRegressionResult:
    map_subset: np.ndarray
    final_rmse: float
    theta: np.ndarray
    trace: list  # (step, rmse of the forward sample, MAP overlap with the planted support)


def run_sparse_regression(
    problem: SparseRegressionProblem,
    k: int,
    steps: int = 500,
    lr: float = 0.5,
    estimator: str = "simple",
    seed: int = 0,
    hyper: dict | None = None,
) -> SparseRegressionResult:
    """Learn k-subset logits over features by plain gradient descent on the RMSE.

    Logits start at zero.  Each step draws one forward sample through
    ``estimator`` and moves the logits against its gradient estimate; the
    answer is the top-k subset of the final logits.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    fn = ESTIMATORS[estimator]
    hyper = hyper or {}
    loss = subset_regression_loss(problem)
    n = problem.design.shape[1]
    theta = np.zeros(n)
    rng = make_rng(seed)
    trace = []
    for step in range(steps):
        params = KSubsetParams(theta, k)
        est = fn(params, loss, rng, **hyper)
        theta = theta - lr * est.g
        sample_rmse = loss.value(est.sample) if est.sample is not None else float("nan")
        overlap = int(topk_mask(theta, k) @ problem.support)
        trace.append((step, sample_rmse, overlap))
    map_subset = topk_mask(theta, k)
    _, final_rmse = least_squares(problem.design[:, map_subset > 0.5], problem.targets)
    return SparseRegressionResult(map_subset, final_rmse, theta, trace)


def trace_to_csv(trace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_FIELDS)
    for step, rmse, overlap in trace:
        writer.writerow([step, _fmt(float(rmse)), overlap])
    return buf.getvalue()
