"""Hot numeric kernels for planar (D=2) reconfiguration chains.

Every kernel has two implementations with identical semantics: a numba
``@njit`` version and a pure-numpy version.  The active backend is chosen
by the ``NEU_NUMBA`` environment variable at import time:

* ``NEU_NUMBA=1`` / ``on``  -- require numba (ImportError if missing),
* ``NEU_NUMBA=0`` / ``off`` -- force the pure-numpy path,
* unset / ``auto``          -- numba when importable, numpy otherwise.

``set_backend()`` switches at runtime (used by tests and the benchmark).

Parameter packing: a planar chain is an ``(N, 5)`` float64 array, one row
per map, ``[cx, cy, sigma, p0, p1]``.  For rotation maps ``p0`` is the
skew generator scalar ``t`` (generator ``[[0, -t], [t, 0]]``) and ``p1``
is unused; for micro-bumps ``(p0, p1)`` is the shift vector.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .errors import ConfigError

_ENV = os.environ.get("NEU_NUMBA", "auto").strip().lower()

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def deco(fn):
            return fn

        return deco


if _ENV in ("0", "off", "false", "numpy"):
    _use_numba = False
elif _ENV in ("1", "on", "true", "numba"):
    if not HAVE_NUMBA:
        raise ImportError("NEU_NUMBA=1 requested but numba is not importable")
    _use_numba = True
elif _ENV in ("auto", ""):
    _use_numba = HAVE_NUMBA
else:
    raise ConfigError(f"unrecognized NEU_NUMBA value: {_ENV!r}")

# Fixed-point inverse settings shared by both backends.
INVERT_TOL = 1e-13
INVERT_MAX_ITERS = 200
_NEWTON_MAX_ITERS = 60


def active_backend() -> str:
    return "numba" if _use_numba else "numpy"


def set_backend(name: str) -> None:
    """Switch kernel backend at runtime ("numba" or "numpy")."""
    global _use_numba
    if name == "numba":
        if not HAVE_NUMBA:
            raise ConfigError("numba backend requested but numba is not importable")
        _use_numba = True
    elif name == "numpy":
        _use_numba = False
    else:
        raise ConfigError(f"unknown backend {name!r}")


# ---------------------------------------------------------------------------
# scalar bump helpers (numba)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _bump_nb(r: float, sigma: float) -> float:
    if r >= sigma or sigma <= 0.0:
        return 0.0
    s2 = sigma * sigma
    return math.exp(-s2 / (s2 - r * r))


@njit(cache=True)
def _bump_slope_nb(r: float, sigma: float) -> float:
    # d/dr of the bump profile; zero outside the support and at the center.
    if r <= 0.0 or r >= sigma or sigma <= 0.0:
        return 0.0
    s2 = sigma * sigma
    d = s2 - r * r
    return -math.exp(-s2 / d) * (2.0 * s2 * r) / (d * d)


# ---------------------------------------------------------------------------
# rotation chains
# ---------------------------------------------------------------------------


@njit(cache=True)
def _rot_chain_nb(pts, params, sign):
    out = pts.copy()
    for j in range(params.shape[0]):
        cx = params[j, 0]
        cy = params[j, 1]
        sg = params[j, 2]
        t = params[j, 3]
        for i in range(out.shape[0]):
            vx = out[i, 0] - cx
            vy = out[i, 1] - cy
            r = math.hypot(vx, vy)
            if r < sg:
                a = sign * t * _bump_nb(r, sg)
                ca = math.cos(a)
                sa = math.sin(a)
                out[i, 0] = cx + ca * vx - sa * vy
                out[i, 1] = cy + sa * vx + ca * vy
    return out


def _rot_chain_np(pts, params, sign):
    out = pts.copy()
    for j in range(params.shape[0]):
        cx, cy, sg, t = params[j, 0], params[j, 1], params[j, 2], params[j, 3]
        vx = out[:, 0] - cx
        vy = out[:, 1] - cy
        r = np.hypot(vx, vy)
        m = r < sg
        if not m.any():
            continue
        s2 = sg * sg
        a = np.empty(m.sum())
        rm = r[m]
        a = sign * t * np.exp(-s2 / (s2 - rm * rm))
        ca = np.cos(a)
        sa = np.sin(a)
        out[m, 0] = cx + ca * vx[m] - sa * vy[m]
        out[m, 1] = cy + sa * vx[m] + ca * vy[m]
    return out


# ---------------------------------------------------------------------------
# micro-bump chains
# ---------------------------------------------------------------------------


@njit(cache=True)
def _bump_chain_nb(pts, params):
    out = pts.copy()
    for j in range(params.shape[0]):
        cx = params[j, 0]
        cy = params[j, 1]
        sg = params[j, 2]
        bx = params[j, 3]
        by = params[j, 4]
        for i in range(out.shape[0]):
            r = math.hypot(out[i, 0] - cx, out[i, 1] - cy)
            if r < sg:
                p = _bump_nb(r, sg)
                out[i, 0] += p * bx
                out[i, 1] += p * by
    return out


def _bump_chain_np(pts, params):
    out = pts.copy()
    for j in range(params.shape[0]):
        cx, cy, sg, bx, by = params[j]
        r = np.hypot(out[:, 0] - cx, out[:, 1] - cy)
        m = r < sg
        if not m.any():
            continue
        s2 = sg * sg
        rm = r[m]
        p = np.exp(-s2 / (s2 - rm * rm))
        out[m, 0] += p * bx
        out[m, 1] += p * by
    return out


@njit(cache=True)
def _bump_invert_point_nb(yx, yy, cx, cy, sg, bx, by, tol, maxit):
    # Fixed-point iteration x <- y - psi(|x-c|) X, then a Newton polish for
    # contraction factors close to 1.
    xx = yx
    xy = yy
    for _ in range(maxit):
        p = _bump_nb(math.hypot(xx - cx, xy - cy), sg)
        nx = yx - p * bx
        ny = yy - p * by
        step = max(abs(nx - xx), abs(ny - xy))
        xx = nx
        xy = ny
        if step < tol:
            break
    for _ in range(_NEWTON_MAX_ITERS):
        vx = xx - cx
        vy = xy - cy
        r = math.hypot(vx, vy)
        p = _bump_nb(r, sg)
        fx = xx + p * bx - yx
        fy = xy + p * by - yy
        if max(abs(fx), abs(fy)) < tol:
            break
        if 0.0 < r < sg:
            dp = _bump_slope_nb(r, sg) / r
            a11 = 1.0 + dp * bx * vx
            a12 = dp * bx * vy
            a21 = dp * by * vx
            a22 = 1.0 + dp * by * vy
        else:
            a11 = 1.0
            a12 = 0.0
            a21 = 0.0
            a22 = 1.0
        det = a11 * a22 - a12 * a21
        if det == 0.0:
            break
        xx -= (a22 * fx - a12 * fy) / det
        xy -= (-a21 * fx + a11 * fy) / det
    p = _bump_nb(math.hypot(xx - cx, xy - cy), sg)
    resid = max(abs(xx + p * bx - yx), abs(xy + p * by - yy))
    return xx, xy, resid


@njit(cache=True)
def _bump_chain_invert_nb(pts, params_rev, tol, maxit):
    out = pts.copy()
    n = out.shape[0]
    resid = np.zeros(n)
    for j in range(params_rev.shape[0]):
        cx = params_rev[j, 0]
        cy = params_rev[j, 1]
        sg = params_rev[j, 2]
        bx = params_rev[j, 3]
        by = params_rev[j, 4]
        for i in range(n):
            xx, xy, rr = _bump_invert_point_nb(
                out[i, 0], out[i, 1], cx, cy, sg, bx, by, tol, maxit
            )
            out[i, 0] = xx
            out[i, 1] = xy
            if rr > resid[i]:
                resid[i] = rr
    return out, resid


def _bump_chain_invert_np(pts, params_rev, tol, maxit):
    out = pts.copy()
    n = out.shape[0]
    resid = np.zeros(n)
    for j in range(params_rev.shape[0]):
        cx, cy, sg, bx, by = params_rev[j]
        yx = out[:, 0].copy()
        yy = out[:, 1].copy()
        xx = yx.copy()
        xy = yy.copy()
        active = np.ones(n, dtype=bool)
        s2 = sg * sg
        for _ in range(maxit):
            if not active.any():
                break
            r = np.hypot(xx[active] - cx, xy[active] - cy)
            p = np.zeros_like(r)
            m = r < sg
            rm = r[m]
            p[m] = np.exp(-s2 / (s2 - rm * rm))
            nx = yx[active] - p * bx
            ny = yy[active] - p * by
            step = np.maximum(np.abs(nx - xx[active]), np.abs(ny - xy[active]))
            xx[active] = nx
            xy[active] = ny
            still = step >= tol
            idx = np.flatnonzero(active)
            active[idx[~still]] = False
        # Newton polish on whatever has not converged.
        active = np.ones(n, dtype=bool)
        for _ in range(_NEWTON_MAX_ITERS):
            vx = xx - cx
            vy = xy - cy
            r = np.hypot(vx, vy)
            p = np.zeros(n)
            m = r < sg
            rm = r[m]
            p[m] = np.exp(-s2 / (s2 - rm * rm))
            fx = xx + p * bx - yx
            fy = xy + p * by - yy
            active = np.maximum(np.abs(fx), np.abs(fy)) >= tol
            if not active.any():
                break
            dp = np.zeros(n)
            inner = m & (r > 0.0)
            ri = r[inner]
            d = s2 - ri * ri
            dp[inner] = -np.exp(-s2 / d) * (2.0 * s2 * ri) / (d * d) / ri
            a11 = 1.0 + dp * bx * vx
            a12 = dp * bx * vy
            a21 = dp * by * vx
            a22 = 1.0 + dp * by * vy
            det = a11 * a22 - a12 * a21
            det[det == 0.0] = 1.0
            dx = (a22 * fx - a12 * fy) / det
            dy = (-a21 * fx + a11 * fy) / det
            xx = np.where(active, xx - dx, xx)
            xy = np.where(active, xy - dy, xy)
        r = np.hypot(xx - cx, xy - cy)
        p = np.zeros(n)
        m = r < sg
        rm = r[m]
        p[m] = np.exp(-s2 / (s2 - rm * rm))
        rr = np.maximum(np.abs(xx + p * bx - yx), np.abs(xy + p * by - yy))
        resid = np.maximum(resid, rr)
        out[:, 0] = xx
        out[:, 1] = xy
    return out, resid


# ---------------------------------------------------------------------------
# public dispatchers
# ---------------------------------------------------------------------------


def _as_pts(pts):
    a = np.ascontiguousarray(pts, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 2:
        raise ConfigError("planar kernels expect an (n, 2) array")
    return a


def _as_params(params):
    a = np.ascontiguousarray(params, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 5:
        raise ConfigError("packed chain parameters must be (N, 5)")
    return a


def rot_chain_apply(pts, params, forward: bool = True, backend: str | None = None):
    """Apply a chain of planar decaying rotations to points.

    With ``forward=False`` the rows of ``params`` must already be reversed;
    the rotation angles are negated (the per-map inverse uses the same bump
    value because rotation preserves the distance to the center).
    """
    pts = _as_pts(pts)
    params = _as_params(params)
    sign = 1.0 if forward else -1.0
    use = _use_numba if backend is None else backend == "numba"
    if use:
        return _rot_chain_nb(pts, params, sign)
    return _rot_chain_np(pts, params, sign)


def bump_chain_apply(pts, params, backend: str | None = None):
    """Apply a chain of planar micro-bumps to points."""
    pts = _as_pts(pts)
    params = _as_params(params)
    use = _use_numba if backend is None else backend == "numba"
    if use:
        return _bump_chain_nb(pts, params)
    return _bump_chain_np(pts, params)


def bump_chain_invert(
    pts,
    params_reversed,
    tol: float = INVERT_TOL,
    maxit: int = INVERT_MAX_ITERS,
    backend: str | None = None,
):
    """Invert a chain of planar micro-bumps.

    ``params_reversed`` must hold the chain rows in reverse order.  Returns
    ``(points, residuals)`` where ``residuals[i]`` is the worst forward-map
    residual seen for point ``i`` across the chain.
    """
    pts = _as_pts(pts)
    params_reversed = _as_params(params_reversed)
    use = _use_numba if backend is None else backend == "numba"
    if use:
        return _bump_chain_invert_nb(pts, params_reversed, tol, maxit)
    return _bump_chain_invert_np(pts, params_reversed, tol, maxit)


def warmup() -> None:
    """Force JIT compilation of all kernels (no-op on the numpy backend)."""
    if not _use_numba:
        return
    pts = np.zeros((2, 2))
    params = np.array([[0.0, 0.0, 1.0, 0.1, 0.1]])
    _rot_chain_nb(pts, params, 1.0)
    _bump_chain_nb(pts, params)
    _bump_chain_invert_nb(pts, params, INVERT_TOL, 4)
