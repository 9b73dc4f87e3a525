"""Objective learning algorithms: losses, grids, patterns, optimal evaluation.

An objective learning algorithm bundles a training loss, a validation loss,
a finite hyperparameter grid, and a pattern function mapping fitted
parameters to predictions.  Supervised data is encoded by stacking the
response as the trailing coordinate(s) of each point, so the reconfiguration
maps act on the full graph of the data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines
from .errors import ConfigError, DomainError, EvaluationError


@dataclass(frozen=True)
class Dataset:
    """Train/validation/test splits of D-dimensional points.

    ``response_dims`` records how many trailing coordinates are responses
    (0 for unsupervised data).
    """

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray | None = None
    response_dims: int = 0

    def __post_init__(self):
        train = np.atleast_2d(np.asarray(self.train, dtype=np.float64))
        if train.shape[0] < 1:
            raise DomainError("training set must contain at least one point")
        d = train.shape[1]
        val = np.asarray(self.validation, dtype=np.float64).reshape(-1, d) if np.size(
            self.validation
        ) else np.zeros((0, d))
        test = None
        if self.test is not None:
            test = np.asarray(self.test, dtype=np.float64).reshape(-1, d)
        for name, arr in (("train", train), ("validation", val), ("test", test)):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} points must be finite")
        if not 0 <= self.response_dims < d:
            raise DomainError("response_dims must be in [0, D)")
        object.__setattr__(self, "train", train)
        object.__setattr__(self, "validation", val)
        object.__setattr__(self, "test", test)

    @property
    def dim(self) -> int:
        return self.train.shape[1]

    @property
    def n_train(self) -> int:
        return self.train.shape[0]

    @property
    def n_validation(self) -> int:
        return self.validation.shape[0]


def split_xy(points: np.ndarray, response_dims: int) -> tuple[np.ndarray, np.ndarray]:
    """Split graph points into (explanatory, response) blocks."""
    points = np.atleast_2d(points)
    if response_dims <= 0:
        return points, np.zeros((points.shape[0], 0))
    return points[:, :-response_dims], points[:, -response_dims:]


def load_points_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read a CSV of points: header row, one observation per row."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if len(rows) < 2:
        raise DomainError(f"{path}: need a header row and at least one data row")
    header = rows[0]
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise DomainError(f"{path}: non-numeric cell ({exc})") from exc
    return header, data


def dataset_from_csv(
    path: str | Path,
    response_cols: int = 1,
    val_frac: float = 0.2,
    test_frac: float = 0.0,
) -> Dataset:
    """Load a supervised dataset with sequential train/validation/test splits.

    The final ``response_cols`` columns are treated as responses.
    """
    _, data = load_points_csv(path)
    n = data.shape[0]
    n_test = int(round(test_frac * n))
    n_val = int(round(val_frac * n))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise DomainError("splits leave no training data")
    return Dataset(
        train=data[:n_train],
        validation=data[n_train : n_train + n_val],
        test=data[n_train + n_val :] if n_test else None,
        response_dims=response_cols,
    )


# ---------------------------------------------------------------------------
# algorithms
# ---------------------------------------------------------------------------


class ObjectiveLearningAlgorithm:
    """Base class: a (loss_in, loss_out, gamma grid, pattern) quadruple.

    Subclasses implement ``fit_inner`` (exact or iterative minimizer of the
    training loss for one hyperparameter) and the two losses; ``pattern``
    maps (beta, explanatory point) to a prediction.
    """

    gamma_grid: tuple = (0.0,)
    response_dims: int = 0

    def fit_inner(self, gamma, train: np.ndarray):
        raise NotImplementedError

    def loss_in(self, beta, gamma, train: np.ndarray) -> float:
        raise NotImplementedError

    def loss_out(self, beta, gamma, validation: np.ndarray) -> float:
        raise NotImplementedError

    def pattern(self, beta, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inner_diagnostics(self, gamma, train: np.ndarray) -> dict:
        return {}


class LinearRegression(ObjectiveLearningAlgorithm):
    """Least-squares regression on a fixed basis (affine by default)."""

    response_dims = 1

    def __init__(self, basis=None, intercept: bool = True):
        self.basis = basis
        self.intercept = intercept
        self.gamma_grid = (0.0,)

    def design(self, x_expl: np.ndarray) -> np.ndarray:
        x_expl = np.atleast_2d(x_expl)
        if self.basis is not None:
            cols = [np.asarray(f(x_expl), dtype=np.float64).reshape(-1) for f in self.basis]
            d = np.column_stack(cols)
        else:
            d = x_expl
        if self.intercept:
            d = np.column_stack([np.ones(d.shape[0]), d])
        return d

    def fit_inner(self, gamma, train):
        x, y = split_xy(train, 1)
        return baselines.ols_fit(self.design(x), y.ravel())

    def _sse(self, beta, points) -> float:
        if points.shape[0] == 0:
            return 0.0
        x, y = split_xy(points, 1)
        resid = y.ravel() - self.design(x) @ beta
        return float(resid @ resid)

    def loss_in(self, beta, gamma, train):
        return self._sse(beta, train)

    def loss_out(self, beta, gamma, validation):
        return self._sse(beta, validation)

    def pattern(self, beta, x):
        x = np.atleast_2d(x)
        return self.design(x) @ beta

    def inner_diagnostics(self, gamma, train):
        x, y = split_xy(train, 1)
        d = self.design(x)
        cond = float(np.linalg.cond(d))
        dup = _conflicting_duplicates(x, y)
        return {
            "design_condition": cond,
            "conflicting_duplicates": dup,
        }


class EnetRegression(ObjectiveLearningAlgorithm):
    """Elastic-net regression; the grid ranges over (lambda, alpha) pairs.

    Convention: ``alpha = 0`` is the pure l1 penalty (LASSO) and
    ``alpha = 1`` the pure squared-l2 penalty (ridge) -- the reverse of the
    scikit-learn ``l1_ratio`` convention.
    """

    response_dims = 1

    def __init__(self, grid, intercept: bool = False, standardize: bool = False):
        self.gamma_grid = tuple(
            g if isinstance(g, baselines.EnetSpec) else baselines.EnetSpec(*g) for g in grid
        )
        if not self.gamma_grid:
            raise ConfigError("elastic-net grid must be nonempty")
        self.intercept = intercept
        self.standardize = standardize

    def design(self, x_expl: np.ndarray) -> np.ndarray:
        x_expl = np.atleast_2d(x_expl)
        if self.intercept:
            return np.column_stack([np.ones(x_expl.shape[0]), x_expl])
        return x_expl

    def fit_inner(self, gamma, train):
        x, y = split_xy(train, 1)
        return baselines.enet_fit(
            self.design(x), y.ravel(), gamma, standardize=self.standardize
        )

    def loss_in(self, beta, gamma, train):
        x, y = split_xy(train, 1)
        resid = y.ravel() - self.design(x) @ beta
        return float(resid @ resid) + gamma.penalty(beta)

    def loss_out(self, beta, gamma, validation):
        if validation.shape[0] == 0:
            return 0.0
        x, y = split_xy(validation, 1)
        resid = y.ravel() - self.design(x) @ beta
        return float(resid @ resid)

    def pattern(self, beta, x):
        return self.design(np.atleast_2d(x)) @ beta

    def inner_diagnostics(self, gamma, train):
        x, y = split_xy(train, 1)
        return {
            "design_condition": float(np.linalg.cond(self.design(x))),
            "conflicting_duplicates": _conflicting_duplicates(x, y),
        }


class PcaAlgorithm(ObjectiveLearningAlgorithm):
    """Principal components as an objective learning algorithm.

    The fitted parameter is a :class:`~neu.baselines.PcaModel` with
    ``n_components`` components.  The training loss is the negative
    captured-variance fraction of the first ``gate_components`` components;
    the validation loss sums the span-projection loss over the factor
    counts in ``eval_counts``.
    """

    response_dims = 0

    def __init__(self, n_components: int, gate_components: int = 1, eval_counts=None):
        self.n_components = n_components
        self.gate_components = min(gate_components, n_components)
        self.eval_counts = tuple(eval_counts or range(1, n_components + 1))
        if max(self.eval_counts) > n_components:
            raise ConfigError("eval_counts cannot exceed n_components")
        self.gamma_grid = (0.0,)

    def fit_inner(self, gamma, train):
        return baselines.pca(train, self.n_components)

    def loss_in(self, beta, gamma, train):
        frac = sum(beta.explained[: self.gate_components])
        return -float(frac)

    def loss_out(self, beta, gamma, validation):
        if validation.shape[0] == 0:
            return 0.0
        return float(
            sum(baselines.pca_projection_loss(beta, k, validation) for k in self.eval_counts)
        )

    def pattern(self, beta, x):
        x = np.atleast_2d(x)
        return (x - beta.mean) @ beta.components.T

    def inner_diagnostics(self, gamma, train):
        centered = train - train.mean(axis=0)
        w = np.linalg.eigvalsh(centered.T @ centered)[::-1]
        gap = float(w[0] - w[1]) if w.size > 1 else math.inf
        return {"leading_eigengap": gap}


def _conflicting_duplicates(x: np.ndarray, y: np.ndarray, tol: float = 1e-12) -> bool:
    """True when two identical explanatory rows carry different responses."""
    n = x.shape[0]
    order = np.lexsort(x.T[::-1]) if x.shape[1] else np.arange(n)
    xs, ys = x[order], y[order]
    for i in range(n - 1):
        if np.abs(xs[i + 1] - xs[i]).max(initial=0.0) <= tol:
            if np.abs(ys[i + 1] - ys[i]).max(initial=0.0) > tol:
                return True
    return False


# ---------------------------------------------------------------------------
# optimal evaluation and performance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Evaluation:
    """Result of the two-level optimization: inner fit per grid point, outer
    hyperparameter selection on the validation loss."""

    beta_hat: object
    gamma_hat: object
    loss_in_at_opt: float
    loss_out_at_opt: float
    gamma_losses: tuple = ()
    tied: bool = False


def _as_worst(v: float) -> float:
    return math.inf if (v is None or math.isnan(v)) else v


def optimal_evaluation(ola: ObjectiveLearningAlgorithm, dataset: Dataset) -> Evaluation:
    """Fit every grid point on the training set and select the hyperparameter
    minimizing the validation loss (smallest index wins ties).

    With an empty validation set the grid must be a singleton and the sole
    element is selected.
    """
    grid = tuple(ola.gamma_grid)
    if not grid:
        raise ConfigError("hyperparameter grid is empty")
    if dataset.n_validation == 0 and len(grid) > 1:
        raise ConfigError("empty validation set requires a single-element grid")

    results = []
    for gamma in grid:
        beta = ola.fit_inner(gamma, dataset.train)
        li = _as_worst(float(ola.loss_in(beta, gamma, dataset.train)))
        lo = (
            _as_worst(float(ola.loss_out(beta, gamma, dataset.validation)))
            if dataset.n_validation > 0
            else 0.0
        )
        results.append((gamma, beta, li, lo))

    best = min(range(len(results)), key=lambda i: results[i][3])
    gamma, beta, li, lo = results[best]
    if not math.isfinite(lo):
        raise EvaluationError("validation loss is non-finite at every grid point")
    if not math.isfinite(li):
        raise EvaluationError("training loss is non-finite at the selected optimum")
    tie_tol = 0.0
    tied = any(
        i != best and results[i][3] <= lo + tie_tol for i in range(len(results))
    )
    return Evaluation(
        beta_hat=beta,
        gamma_hat=gamma,
        loss_in_at_opt=li,
        loss_out_at_opt=lo,
        gamma_losses=tuple((r[0], r[3]) for r in results),
        tied=tied,
    )


def performance_in(ola: ObjectiveLearningAlgorithm, dataset: Dataset) -> float:
    """Negative training loss at the optimal evaluation."""
    return -optimal_evaluation(ola, dataset).loss_in_at_opt


def performance_out(ola: ObjectiveLearningAlgorithm, dataset: Dataset) -> float:
    """Negative validation loss at the optimal evaluation."""
    return -optimal_evaluation(ola, dataset).loss_out_at_opt


@dataclass(frozen=True)
class RegularityTolerances:
    max_condition: float = 1e8
    tie_tol: float = 1e-9
    min_eigengap: float = 1e-6


@dataclass(frozen=True)
class RegularityReport:
    inner_ok: bool
    outer_ok: bool
    details: dict

    @property
    def regular(self) -> bool:
        return self.inner_ok and self.outer_ok


def regular_domain_check(
    ola: ObjectiveLearningAlgorithm,
    dataset: Dataset,
    tolerances: RegularityTolerances | None = None,
) -> RegularityReport:
    """Approximate uniqueness diagnostics for the two-level optimization.

    Inner: algorithm-specific strict-convexity proxies (design condition
    number, conflicting duplicate observations, leading eigengap).  Outer:
    the validation-loss minimizer over the grid must be unique within
    ``tie_tol``.  This is a diagnostic report; it never raises.
    """
    tol = tolerances or RegularityTolerances()
    details: dict = {}
    inner_ok = True
    try:
        diag = ola.inner_diagnostics(ola.gamma_grid[0], dataset.train)
    except Exception as exc:  # diagnostics must not raise
        diag = {"inner_diagnostic_error": repr(exc)}
        inner_ok = False
    details.update(diag)
    if diag.get("conflicting_duplicates"):
        inner_ok = False
    cond = diag.get("design_condition")
    if cond is not None and not (cond < tol.max_condition):
        inner_ok = False
    gap = diag.get("leading_eigengap")
    if gap is not None and not (gap > tol.min_eigengap):
        inner_ok = False

    outer_ok = True
    try:
        ev = optimal_evaluation(ola, dataset)
        losses = sorted(lo for _, lo in ev.gamma_losses)
        if len(losses) > 1 and losses[1] - losses[0] <= tol.tie_tol:
            outer_ok = False
            details["outer_tie"] = True
        details["outer_losses"] = tuple(ev.gamma_losses)
    except Exception as exc:
        outer_ok = False
        details["outer_error"] = repr(exc)
    return RegularityReport(inner_ok=inner_ok, outer_ok=outer_ok, details=details)
