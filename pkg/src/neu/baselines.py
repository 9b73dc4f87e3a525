"""Concrete learners and benchmark smoothers.

OLS, elastic-net coordinate descent, principal components via the
data-matrix deflation recursion, RBF kernel PCA, penalized cubic
B-splines, and tricube local regression.  All fits are pure functions of
their inputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.interpolate

from .errors import ConfigError, ConvergenceError, DomainError


def ols_fit(design: np.ndarray, responses: np.ndarray) -> np.ndarray:
    """Least-squares coefficients via orthogonal (SVD) decomposition.

    Raises on rank-deficient designs, where the minimizer is not unique.
    """
    design = np.atleast_2d(np.asarray(design, dtype=np.float64))
    responses = np.asarray(responses, dtype=np.float64).ravel()
    if design.shape[0] != responses.shape[0]:
        raise DomainError("design and responses disagree on the number of rows")
    beta, _res, rank, _sv = np.linalg.lstsq(design, responses, rcond=None)
    if rank < design.shape[1]:
        raise DomainError(
            f"design is rank deficient (rank {rank} < {design.shape[1]} columns)"
        )
    return beta


@dataclass(frozen=True)
class EnetSpec:
    """Elastic-net hyperparameters.

    ``alpha = 0`` gives the pure l1 penalty (LASSO), ``alpha = 1`` the pure
    squared-l2 penalty (ridge); note this is the reverse of the common
    scikit-learn ``l1_ratio`` convention.
    """

    lam: float
    alpha: float

    def __post_init__(self):
        if self.lam < 0:
            raise DomainError("lambda must be nonnegative")
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError("alpha must lie in [0, 1]")

    def penalty(self, beta: np.ndarray) -> float:
        b = np.asarray(beta, dtype=np.float64)
        return float(
            self.lam * ((1.0 - self.alpha) * np.abs(b).sum() + self.alpha * (b * b).sum())
        )


def enet_objective(design, responses, beta, spec: EnetSpec) -> float:
    resid = responses - design @ beta
    return float(resid @ resid) + spec.penalty(beta)


def enet_fit(
    design: np.ndarray,
    responses: np.ndarray,
    spec: EnetSpec,
    tol: float = 1e-8,
    max_sweeps: int = 100_000,
    standardize: bool = False,
) -> np.ndarray:
    """Cyclic coordinate descent with soft thresholding.

    Minimizes ``|y - X b|^2 + lam * ((1 - alpha) |b|_1 + alpha |b|_2^2)``.
    With ``standardize=True`` the columns are scaled to unit l2 norm before
    the descent and the coefficients are mapped back.
    """
    x = np.ascontiguousarray(np.atleast_2d(design), dtype=np.float64)
    y = np.asarray(responses, dtype=np.float64).ravel()
    n, p = x.shape
    if y.shape[0] != n:
        raise DomainError("design and responses disagree on the number of rows")
    scales = np.ones(p)
    if standardize:
        scales = np.linalg.norm(x, axis=0)
        scales[scales == 0.0] = 1.0
        x = x / scales

    col_sq = (x * x).sum(axis=0)
    lam1 = spec.lam * (1.0 - spec.alpha)
    lam2 = spec.lam * spec.alpha
    beta = np.zeros(p)
    resid = y.copy()
    for _ in range(max_sweeps):
        max_step = 0.0
        for j in range(p):
            bj = beta[j]
            if bj != 0.0:
                resid += bj * x[:, j]
            rho = float(x[:, j] @ resid)
            denom = col_sq[j] + lam2
            if denom == 0.0:
                new = 0.0
            else:
                new = math.copysign(max(abs(rho) - lam1 / 2.0, 0.0), rho) / denom
            beta[j] = new
            if new != 0.0:
                resid -= new * x[:, j]
            step = abs(new - bj)
            if step > max_step:
                max_step = step
        if max_step < tol * max(1.0, float(np.abs(beta).max())):
            return beta / scales
    raise ConvergenceError(f"coordinate descent did not converge in {max_sweeps} sweeps")


# ---------------------------------------------------------------------------
# principal components
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PcaModel:
    """Column mean, orthonormal components (rows), and explained fractions."""

    mean: np.ndarray
    components: np.ndarray
    explained: tuple[float, ...]


_POWER_TOL = 1e-12
_POWER_MAX_ITERS = 10_000


def _power_iteration(m: np.ndarray) -> np.ndarray:
    d = m.shape[0]
    v = np.ones(d) + 1e-3 * np.arange(d)
    v /= np.linalg.norm(v)
    for _ in range(_POWER_MAX_ITERS):
        mv = m @ v
        norm = np.linalg.norm(mv)
        if norm == 0.0:
            return v
        nv = mv / norm
        if np.abs(nv - v).max() < _POWER_TOL:
            return nv
        v = nv
    warnings.warn("power iteration hit its iteration cap (near-tied eigenvalues?)")
    return v


def pca(data: np.ndarray, n_components: int, tie_tol: float = 1e-9) -> PcaModel:
    """Principal components by deflating the centered data matrix.

    Each component maximizes ``|Q_k v|^2`` over unit vectors, where ``Q_k``
    is the centered data matrix with the span of the earlier components
    projected out.  Warns when the two leading variances of a deflated step
    are tied within ``tie_tol`` (the maximizer is then not unique).
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n, d = data.shape
    if not 1 <= n_components <= min(n - 1 if n > 1 else 1, d):
        raise DomainError("n_components must be in [1, min(n - 1, D)]")
    mean = data.mean(axis=0)
    q = data - mean
    total = float((q * q).sum())
    comps = []
    explained = []
    deflated = q
    for _k in range(n_components):
        m = deflated.T @ deflated
        w = np.linalg.eigvalsh(m)
        if w.size > 1 and abs(w[-1] - w[-2]) <= tie_tol * max(1.0, abs(w[-1])):
            warnings.warn(
                "tied leading variances: the principal direction is not unique"
            )
        v = _power_iteration(m)
        # Deterministic sign: largest-magnitude entry positive.
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            v = -v
        comps.append(v)
        cap = float(np.linalg.norm(q @ v) ** 2)
        explained.append(cap / total if total > 0 else 0.0)
        deflated = deflated - np.outer(deflated @ v, v)
    return PcaModel(mean=mean, components=np.stack(comps), explained=tuple(explained))


def pca_projection_loss(model: PcaModel, n_factors: int, data: np.ndarray) -> float:
    """Summed squared residual of centered observations projected onto the
    span of the first ``n_factors`` components (per-observation least
    squares; ``n_factors = 0`` gives the total centered variance)."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if not 0 <= n_factors <= model.components.shape[0]:
        raise DomainError("n_factors exceeds the number of fitted components")
    centered = data - model.mean
    if n_factors == 0:
        return float((centered * centered).sum())
    v = model.components[:n_factors]
    resid = centered - (centered @ v.T) @ v
    return float((resid * resid).sum())


def kpca(
    data: np.ndarray, n_components: int, sigma: float
) -> tuple[np.ndarray, np.ndarray]:
    """RBF kernel principal component scores and explained fractions.

    Builds the Gram matrix ``exp(-|xi - xj|^2 / (2 sigma^2))``, double
    centers it, and returns the top eigenpairs as scores.  There is no
    reconstruction back to input space.
    """
    if not sigma > 0:
        raise DomainError("kernel width must be positive")
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n = data.shape[0]
    if not 1 <= n_components <= n:
        raise DomainError("n_components must be in [1, n]")
    sq = (data * data).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * data @ data.T
    np.maximum(d2, 0.0, out=d2)
    k = np.exp(-d2 / (2.0 * sigma * sigma))
    one = np.full((n, n), 1.0 / n)
    kc = k - one @ k - k @ one + one @ k @ one
    w, vec = np.linalg.eigh(kc)
    w = w[::-1]
    vec = vec[:, ::-1]
    if w[-1] < -1e-8 * max(1.0, w[0]):
        raise DomainError("centered kernel matrix is not positive semidefinite")
    w = np.clip(w, 0.0, None)
    total = float(w.sum())
    scores = vec[:, :n_components] * np.sqrt(w[:n_components])
    explained = w[:n_components] / total if total > 0 else np.zeros(n_components)
    return scores, explained


# ---------------------------------------------------------------------------
# penalized splines
# ---------------------------------------------------------------------------


class PSplineSmoother:
    """Cubic B-spline fit with a second-derivative roughness penalty."""

    def __init__(self, knots: np.ndarray, coef: np.ndarray, x_range: tuple[float, float]):
        self.knots = knots
        self.coef = coef
        self.x_range = x_range

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.clip(np.asarray(x, dtype=np.float64), *self.x_range)
        b = _bspline_design(x, self.knots)
        return b @ self.coef


def _knot_vector(x: np.ndarray, n_knots: int) -> np.ndarray:
    lo, hi = float(x.min()), float(x.max())
    if n_knots <= 2:
        interior = np.array([])
    else:
        qs = np.linspace(0, 1, n_knots)[1:-1]
        interior = np.quantile(x, qs)
    return np.concatenate([[lo] * 4, interior, [hi] * 4])


def _bspline_design(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    return scipy.interpolate.BSpline.design_matrix(x, knots, 3).toarray()


def _second_derivative_penalty(knots: np.ndarray) -> np.ndarray:
    """Exact Gram matrix of second derivatives of the basis splines.

    Second derivatives of cubics are piecewise linear, so Simpson's rule on
    each inter-knot interval integrates their products exactly.
    """
    n_basis = len(knots) - 4
    uniq = np.unique(knots)
    pts = []
    weights = []
    for a, b in zip(uniq[:-1], uniq[1:]):
        if b <= a:
            continue
        h = b - a
        pts.extend([a, 0.5 * (a + b), b])
        weights.extend([h / 6.0, 4.0 * h / 6.0, h / 6.0])
    pts = np.asarray(pts)
    weights = np.asarray(weights)
    d2 = np.empty((len(pts), n_basis))
    eye = np.eye(n_basis)
    for j in range(n_basis):
        spl = scipy.interpolate.BSpline(knots, eye[j], 3)
        d2[:, j] = spl.derivative(2)(pts)
    return (d2 * weights[:, None]).T @ d2


def pspline_fit(
    x: np.ndarray, y: np.ndarray, lam: float, n_knots: int
) -> PSplineSmoother:
    """Penalized cubic spline minimizing SSE + lam * integral of g''(x)^2."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if lam < 0:
        raise DomainError("lambda must be nonnegative")
    if x.shape != y.shape or x.size < 4:
        raise DomainError("need matching x/y with at least 4 observations")
    if n_knots > x.size:
        raise DomainError("cannot place more knots than observations")
    knots = _knot_vector(x, n_knots)
    b = _bspline_design(x, knots)
    omega = _second_derivative_penalty(knots)
    # Augmented least squares: stack sqrt(lam) * sqrtm(Omega) under B.  The
    # minimum-norm solution handles the unpenalized interpolation case.
    w, v = np.linalg.eigh(omega)
    w = np.clip(w, 0.0, None)
    root = v * np.sqrt(w)
    aug = np.vstack([b, math.sqrt(lam) * root.T]) if lam > 0 else b
    rhs = np.concatenate([y, np.zeros(root.shape[1])]) if lam > 0 else y
    coef, _res, rank, _sv = np.linalg.lstsq(aug, rhs, rcond=None)
    if rank == 0:
        raise DomainError("singular penalized spline system")
    return PSplineSmoother(knots, coef, (float(x.min()), float(x.max())))


# Decade grid for the roughness penalty; its scale bracket matches typical
# curvature magnitudes of unit-square data.
DEFAULT_PSPLINE_LAMBDAS = (1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)
DEFAULT_PSPLINE_KNOTS = (5, 10, 15, 20, 25)


def _cv_folds(x: np.ndarray, k: int) -> list[np.ndarray]:
    # Interleaved-by-position folds: sort by x, deal indices round-robin so
    # every fold spans the domain.  Deterministic.
    order = np.argsort(x, kind="stable")
    return [order[i::k] for i in range(k)]


def pspline_cv(
    x: np.ndarray,
    y: np.ndarray,
    lambdas=DEFAULT_PSPLINE_LAMBDAS,
    knot_counts=DEFAULT_PSPLINE_KNOTS,
    n_folds: int = 4,
) -> tuple[PSplineSmoother, float, int]:
    """Select (lambda, knot count) by k-fold cross-validation, then refit."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    folds = _cv_folds(x, n_folds)
    best = (math.inf, None, None)
    for nk in knot_counts:
        if nk > x.size:
            continue
        for lam in lambdas:
            err = 0.0
            ok = True
            for hold in folds:
                mask = np.ones(x.size, dtype=bool)
                mask[hold] = False
                if mask.sum() < 4:
                    ok = False
                    break
                try:
                    sm = pspline_fit(x[mask], y[mask], lam, min(nk, int(mask.sum())))
                except DomainError:
                    ok = False
                    break
                r = y[hold] - sm.predict(x[hold])
                err += float(r @ r)
            if ok and err < best[0]:
                best = (err, lam, nk)
    if best[1] is None:
        raise ConfigError("no admissible (lambda, knots) combination")
    _, lam, nk = best
    return pspline_fit(x, y, lam, nk), lam, nk


# ---------------------------------------------------------------------------
# local regression
# ---------------------------------------------------------------------------


class LoessSmoother:
    """Tricube-weighted local polynomial regression."""

    def __init__(self, x: np.ndarray, y: np.ndarray, degree: int, span: float):
        if degree not in (1, 2):
            raise DomainError("degree must be 1 or 2")
        if not 0.0 < span <= 1.0:
            raise DomainError("span must lie in (0, 1]")
        self.x = np.asarray(x, dtype=np.float64).ravel()
        self.y = np.asarray(y, dtype=np.float64).ravel()
        self.degree = degree
        self.span = span
        self._k = max(int(math.ceil(span * self.x.size)), degree + 2)
        if self._k > self.x.size:
            raise DomainError("not enough neighbors for the requested degree")

    def predict(self, xq: np.ndarray) -> np.ndarray:
        xq = np.atleast_1d(np.asarray(xq, dtype=np.float64))
        out = np.empty(xq.size)
        for i, x0 in enumerate(xq):
            d = np.abs(self.x - x0)
            idx = np.argpartition(d, self._k - 1)[: self._k]
            h = d[idx].max()
            if h == 0.0:
                out[i] = self.y[idx].mean()
                continue
            u = np.clip(d[idx] / h, 0.0, 1.0)
            w = (1.0 - u**3) ** 3
            t = self.x[idx] - x0
            cols = [np.ones(t.size), t]
            if self.degree == 2:
                cols.append(t * t)
            a = np.column_stack(cols) * np.sqrt(w)[:, None]
            b = self.y[idx] * np.sqrt(w)
            coef, _res, _rank, _sv = np.linalg.lstsq(a, b, rcond=None)
            out[i] = coef[0]
        return out


def loess_fit(x: np.ndarray, y: np.ndarray, degree: int, span: float) -> LoessSmoother:
    """Local polynomial smoother with tricube weights over the span-fraction
    nearest neighbors of each query point."""
    return LoessSmoother(x, y, degree, span)


DEFAULT_LOESS_SPAN = 0.75


def loess_cv(
    x: np.ndarray,
    y: np.ndarray,
    degrees=(1, 2),
    span: float = DEFAULT_LOESS_SPAN,
    n_folds: int = 4,
) -> tuple[LoessSmoother, int, float]:
    """Select the polynomial degree by k-fold cross-validation, then refit.

    The span stays fixed (0.75 by default, the customary local-regression
    default); only the degree is tuned.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    folds = _cv_folds(x, n_folds)
    best = (math.inf, None)
    for degree in degrees:
        err = 0.0
        ok = True
        for hold in folds:
            mask = np.ones(x.size, dtype=bool)
            mask[hold] = False
            try:
                sm = LoessSmoother(x[mask], y[mask], degree, span)
            except DomainError:
                ok = False
                break
            r = y[hold] - sm.predict(x[hold])
            err += float(r @ r)
        if ok and err < best[0]:
            best = (err, degree)
    if best[1] is None:
        raise ConfigError("no admissible degree")
    return LoessSmoother(x, y, best[1], span), best[1], span
