"""Bump functions, skew generators, and the two reconfiguration-map families.

Two parametric families of smooth, invertible, compactly supported
perturbations of R^D are provided:

* decaying rotations (any D >= 2): rotate inside a ball of radius sigma
  about a center c, with rotation angle scaled by a bump of the distance
  to c; identity at and beyond the boundary,
* planar micro-bumps (D = 2): translate inside the ball by a fixed shift
  scaled by the same bump.

Both are exactly the identity outside the support ball, infinitely
differentiable everywhere, and invertible (micro-bumps under a norm bound
on the shift enforced at construction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from . import kernels
from .errors import DomainError, InvertibilityError, PreconditionError

RDR = "rdr"
MICROBUMP = "microbump"
FAMILIES = (RDR, MICROBUMP)


def _compute_bump_slope_sup() -> float:
    # sup over u in (0,1) of 2u exp(-1/(1-u^2)) / (1-u^2)^2, the maximum
    # slope of the unit-radius bump profile.  Golden-section on a bracket
    # found by a coarse grid.
    def g(u):
        s = 1.0 - u * u
        return 2.0 * u * math.exp(-1.0 / s) / (s * s)

    us = np.linspace(1e-6, 1.0 - 1e-6, 4097)
    vals = [g(u) for u in us]
    k = int(np.argmax(vals))
    lo, hi = us[max(k - 1, 0)], us[min(k + 1, len(us) - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = g(c), g(d)
    for _ in range(200):
        if b - a < 1e-14:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = g(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = g(d)
    return g((a + b) / 2.0)


#: sup_r |d/dr bump(r, 1)|; for general sigma the sup is this value / sigma.
BUMP_SLOPE_SUP = _compute_bump_slope_sup()


def bump(r: float, sigma: float, form: str = "normalized") -> float:
    """Bump profile value at radius ``r`` for support radius ``sigma``.

    The normalized form is ``exp(-sigma^2 / (sigma^2 - r^2))`` on
    ``r < sigma`` and exactly 0 at and beyond the boundary; it peaks at
    ``e**-1`` at the center and all derivatives vanish at ``r = sigma``.

    ``form="literal"`` keeps the denominator ``sigma - r^2`` (dimensionally
    inconsistent; it blows up on ``sqrt(sigma) < r < sigma``) and exists
    only for comparison purposes.
    """
    if not math.isfinite(r) or r < 0.0:
        raise DomainError(f"radius must be finite and nonnegative, got {r}")
    if not sigma > 0.0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if r >= sigma:
        return 0.0
    if form == "normalized":
        s2 = sigma * sigma
        return math.exp(-s2 / (s2 - r * r))
    if form == "literal":
        d = sigma - r * r
        if d <= 0.0:
            return math.inf
        return math.exp(-sigma / d)
    raise DomainError(f"unknown bump form {form!r}")


def bump_profile(r: np.ndarray, sigma: float) -> np.ndarray:
    """Vectorized normalized bump profile."""
    r = np.asarray(r, dtype=np.float64)
    if not sigma > 0.0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise DomainError("radii must be finite and nonnegative")
    out = np.zeros_like(r)
    m = r < sigma
    s2 = sigma * sigma
    rm = r[m]
    out[m] = np.exp(-s2 / (s2 - rm * rm))
    return out


def bump_slope(r: float, sigma: float) -> float:
    """Derivative of the normalized bump profile with respect to ``r``."""
    if r <= 0.0 or r >= sigma:
        return 0.0
    s2 = sigma * sigma
    d = s2 - r * r
    return -math.exp(-s2 / d) * (2.0 * s2 * r) / (d * d)


def bump_slope_bound(sigma: float) -> float:
    """sup over r of |d/dr bump(r, sigma)| (zero for sigma = 0)."""
    if sigma <= 0.0:
        return 0.0
    return BUMP_SLOPE_SUP / sigma


# ---------------------------------------------------------------------------
# skew-symmetric generators and the matrix exponential
# ---------------------------------------------------------------------------

_SKEW_TOL = 1e-12


def check_skew(a: np.ndarray, tol: float = _SKEW_TOL) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError("generator must be a square matrix")
    if not np.all(np.isfinite(a)):
        raise DomainError("generator entries must be finite")
    scale = max(1.0, float(np.abs(a).max()))
    if float(np.abs(a + a.T).max()) > tol * scale:
        raise DomainError("matrix is not skew-symmetric")
    return a


def random_skew(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    """Random skew-symmetric matrix with N(0, scale^2) upper-triangle entries."""
    raw = rng.normal(0.0, scale, size=(dim, dim))
    return np.triu(raw, 1) - np.triu(raw, 1).T


def skew_eig(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unitary diagonalization of a skew-symmetric matrix.

    Returns ``(lam, U)`` with ``a = U @ diag(1j * lam) @ U.conj().T``; then
    ``exp(s * a) = U @ diag(exp(1j * s * lam)) @ U.conj().T`` for scalar s.
    """
    h = -1j * np.asarray(a, dtype=np.complex128)
    lam, u = np.linalg.eigh(h)
    return lam, u


def mat_exp(a: np.ndarray) -> np.ndarray:
    """Matrix exponential of a skew-symmetric matrix (a rotation matrix).

    Closed forms for D=2 (planar rotation) and D=3 (Rodrigues); Pade
    scaling-and-squaring for larger D.  The output is checked against the
    rotation-matrix invariants before being returned.
    """
    a = check_skew(a)
    d = a.shape[0]
    if d == 2:
        t = a[1, 0]
        c, s = math.cos(t), math.sin(t)
        out = np.array([[c, -s], [s, c]])
    elif d == 3:
        w = np.array([a[2, 1], a[0, 2], a[1, 0]])
        th = float(np.linalg.norm(w))
        if th == 0.0:
            out = np.eye(3)
        else:
            k = a / th
            out = np.eye(3) + math.sin(th) * k + (1.0 - math.cos(th)) * (k @ k)
    else:
        out = scipy.linalg.expm(a)
    err = np.abs(out.T @ out - np.eye(d)).max()
    if err > 1e-10 or abs(np.linalg.det(out) - 1.0) > 1e-10:
        raise InvertibilityError("matrix exponential failed orthogonality check")
    return out


# ---------------------------------------------------------------------------
# the two map families
# ---------------------------------------------------------------------------


def _check_point(x, dim=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DomainError("a point must be a 1-d coordinate vector")
    if not np.all(np.isfinite(x)):
        raise DomainError("point coordinates must be finite")
    if dim is not None and x.shape[0] != dim:
        raise DomainError(f"dimension mismatch: expected {dim}, got {x.shape[0]}")
    return x


@dataclass(frozen=True)
class RdrTheta:
    """Parameters of one decaying rotation: center, radius, skew generator."""

    c: np.ndarray
    sigma: float
    generator: np.ndarray

    def __post_init__(self):
        c = _check_point(self.c)
        if c.shape[0] < 2:
            raise DomainError("decaying rotations need dimension >= 2")
        if not self.sigma > 0.0:
            raise DomainError("sigma must be positive")
        g = check_skew(self.generator)
        if g.shape[0] != c.shape[0]:
            raise DomainError("generator dimension must match the center")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "generator", g)

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    @property
    def family(self) -> str:
        return RDR

    def is_identity(self) -> bool:
        return not np.any(self.generator)

    @cached_property
    def _eig(self):
        return skew_eig(self.generator)

    def packed_row(self) -> np.ndarray:
        if self.dim != 2:
            raise DomainError("packed rows are only defined for planar maps")
        return np.array([self.c[0], self.c[1], self.sigma, self.generator[1, 0], 0.0])


@dataclass(frozen=True)
class BumpTheta:
    """Parameters of one planar micro-bump: center, radius, shift vector.

    The shift norm is bounded at construction by ``|X| * L(sigma) < 1``
    where ``L`` is the maximum bump slope; that bound makes the forward map
    a perturbation of the identity by a contraction, so it is invertible.
    """

    c: np.ndarray
    sigma: float
    shift: np.ndarray

    def __post_init__(self):
        c = _check_point(self.c)
        if c.shape[0] != 2:
            raise DomainError("micro-bumps are planar (dimension 2)")
        if self.sigma < 0.0 or not math.isfinite(self.sigma):
            raise DomainError("sigma must be finite and nonnegative")
        shift = _check_point(self.shift, dim=2)
        lip = float(np.linalg.norm(shift)) * bump_slope_bound(self.sigma)
        if lip >= 1.0:
            raise InvertibilityError(
                f"shift too large for support radius: |X| * L(sigma) = {lip:.6g} >= 1"
            )
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "shift", shift)

    @property
    def dim(self) -> int:
        return 2

    @property
    def family(self) -> str:
        return MICROBUMP

    def is_identity(self) -> bool:
        return not np.any(self.shift)

    def contraction(self) -> float:
        return float(np.linalg.norm(self.shift)) * bump_slope_bound(self.sigma)

    def packed_row(self) -> np.ndarray:
        return np.array([self.c[0], self.c[1], self.sigma, self.shift[0], self.shift[1]])


Theta = RdrTheta | BumpTheta


def max_shift_norm(sigma: float, cap: float = 1.0) -> float:
    """Largest micro-bump shift norm allowed for ``sigma`` at contraction ``cap``."""
    if sigma <= 0.0:
        return math.inf
    return cap * sigma / BUMP_SLOPE_SUP


def identity_theta(family: str, dim: int, center=None, sigma: float = 1.0) -> Theta:
    """A parameter in the identity subset of the family (zero generator/shift)."""
    c = np.zeros(dim) if center is None else _check_point(center, dim)
    if family == RDR:
        return RdrTheta(c, sigma, np.zeros((dim, dim)))
    if family == MICROBUMP:
        if dim != 2:
            raise DomainError("micro-bumps are planar")
        return BumpTheta(c, sigma, np.zeros(2))
    raise DomainError(f"unknown family {family!r}")


# ---------------------------------------------------------------------------
# batch application
# ---------------------------------------------------------------------------


def _rdr_batch_general(pts: np.ndarray, theta: RdrTheta, sign: float) -> np.ndarray:
    lam, u = theta._eig
    v = pts - theta.c
    r = np.linalg.norm(v, axis=1)
    m = r < theta.sigma
    if not m.any():
        return pts.copy()
    out = pts.copy()
    s2 = theta.sigma * theta.sigma
    rm = r[m]
    scale = sign * np.exp(-s2 / (s2 - rm * rm))
    w = v[m].astype(np.complex128) @ u.conj()
    phases = np.exp(1j * np.outer(scale, lam))
    rotated = np.real((w * phases) @ u.T)
    out[m] = rotated + theta.c
    return out


def rdr_apply_batch(pts: np.ndarray, theta: RdrTheta, inverse: bool = False) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != theta.dim:
        raise DomainError("dimension mismatch between points and parameters")
    if theta.dim == 2:
        return kernels.rot_chain_apply(pts, theta.packed_row()[None], forward=not inverse)
    return _rdr_batch_general(pts, theta, -1.0 if inverse else 1.0)


def rdr_apply(x, theta: RdrTheta):
    """Rotate ``x`` about ``theta.c`` by the bump-scaled generator."""
    x = _check_point(x, theta.dim)
    return rdr_apply_batch(x[None], theta)[0]


def rdr_invert(y, theta: RdrTheta):
    """Exact inverse of :func:`rdr_apply` (the rotation preserves |x - c|)."""
    y = _check_point(y, theta.dim)
    return rdr_apply_batch(y[None], theta, inverse=True)[0]


def microbump_apply_batch(pts: np.ndarray, theta: BumpTheta) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DomainError("micro-bumps act on planar points")
    if theta.sigma == 0.0:
        return pts.copy()
    return kernels.bump_chain_apply(pts, theta.packed_row()[None])


def microbump_invert_batch(pts: np.ndarray, theta: BumpTheta) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DomainError("micro-bumps act on planar points")
    if theta.contraction() >= 1.0:
        raise InvertibilityError("micro-bump violates the contraction bound")
    if theta.sigma == 0.0:
        return pts.copy()
    out, resid = kernels.bump_chain_invert(pts, theta.packed_row()[None])
    if resid.max() > 1e-9:
        raise InvertibilityError(
            f"micro-bump inverse did not converge (residual {resid.max():.3g})"
        )
    return out


def microbump_apply(x, theta: BumpTheta):
    """Shift ``x`` by the bump-scaled shift vector of ``theta``."""
    x = _check_point(x, 2)
    return microbump_apply_batch(x[None], theta)[0]


def microbump_invert(y, theta: BumpTheta):
    """Unique preimage of ``y`` under :func:`microbump_apply`."""
    y = _check_point(y, 2)
    return microbump_invert_batch(y[None], theta)[0]


def apply_theta(x, theta: Theta):
    if isinstance(theta, RdrTheta):
        return rdr_apply(x, theta)
    return microbump_apply(x, theta)


def invert_theta(y, theta: Theta):
    if isinstance(theta, RdrTheta):
        return rdr_invert(y, theta)
    return microbump_invert(y, theta)


# ---------------------------------------------------------------------------
# exact single-step movers and local transience
# ---------------------------------------------------------------------------


def _unit_perp(u: np.ndarray) -> np.ndarray:
    # Deterministic unit vector orthogonal to u (dimension >= 2).
    k = int(np.argmin(np.abs(u)))
    e = np.zeros_like(u)
    e[k] = 1.0
    w = e - np.dot(e, u) * u
    n = np.linalg.norm(w)
    if n == 0.0:
        e[:] = 0.0
        e[(k + 1) % len(u)] = 1.0
        w = e - np.dot(e, u) * u
        n = np.linalg.norm(w)
    return w / n


def step_theta(a, b, sigma: float, family: str, bump_cap: float = 0.98) -> Theta:
    """Parameters moving ``a`` exactly to ``b`` with support radius ``sigma``.

    The support ball is centered at the midpoint, so any point at distance
    >= sigma from the midpoint is fixed exactly.  For rotations the move is
    a half-turn in a plane through ``b - a``; for micro-bumps the shift must
    satisfy the contraction bound, which limits the step length relative to
    ``sigma`` (raises InvertibilityError when violated).
    """
    a = _check_point(a)
    b = _check_point(b, a.shape[0])
    c = 0.5 * (a + b)
    h = 0.5 * float(np.linalg.norm(b - a))
    if h == 0.0:
        return identity_theta(family, a.shape[0], center=c, sigma=max(sigma, 1.0))
    if not sigma > h:
        raise PreconditionError("support radius must exceed half the step length")
    p = bump(h, sigma)
    if family == MICROBUMP:
        shift = (b - a) / p
        if float(np.linalg.norm(shift)) * bump_slope_bound(sigma) >= bump_cap:
            raise InvertibilityError("step too long for an invertible micro-bump")
        return BumpTheta(c, sigma, shift)
    if family == RDR:
        t = math.pi / p
        u = (a - c) / h
        dim = a.shape[0]
        if dim == 2:
            gen = t * np.array([[0.0, -1.0], [1.0, 0.0]])
        else:
            w = _unit_perp(u)
            gen = t * (np.outer(w, u) - np.outer(u, w))
        return RdrTheta(c, sigma, gen)
    raise DomainError(f"unknown family {family!r}")


def local_transience_theta(x, y, z, family: str) -> list[Theta]:
    """Parameters carrying ``x`` to ``y`` while fixing ``z``.

    Requires ``d(x, y) < d(x, z)``.  Returns a list of parameters applied in
    order; rotations always need a single element, micro-bumps fall back to
    ``k`` equal sub-steps along the segment whenever one invertible bump
    cannot cover the full move (the list length reports ``k``).
    """
    x = _check_point(x)
    y = _check_point(y, x.shape[0])
    z = _check_point(z, x.shape[0])
    dxy = float(np.linalg.norm(y - x))
    dxz = float(np.linalg.norm(z - x))
    if dxy == 0.0:
        return [identity_theta(family, x.shape[0], center=x, sigma=1.0)]
    if not dxy < dxz:
        raise PreconditionError("need d(x, y) < d(x, z)")

    if family == RDR:
        c = 0.5 * (x + y)
        h = 0.5 * dxy
        zc = float(np.linalg.norm(z - c))
        margin = min(0.5, zc / h - 1.0)
        if margin <= 0.0:  # cannot happen for valid inputs; guard anyway
            raise PreconditionError("z is too close to the midpoint of the move")
        sigma = h * (1.0 + margin)
        return [step_theta(x, y, sigma, RDR)]

    if family != MICROBUMP:
        raise DomainError(f"unknown family {family!r}")

    # Sub-step splitting: each step moves along the segment; the clearance
    # from z to every midpoint is at least d(x,z) - d(x,y) > 0.
    for k in range(1, 10_000):
        pts = [x + (y - x) * (j / k) for j in range(k + 1)]
        thetas = []
        ok = True
        for a, b in zip(pts[:-1], pts[1:]):
            c = 0.5 * (a + b)
            zc = float(np.linalg.norm(z - c))
            h = 0.5 * float(np.linalg.norm(b - a))
            sigma = min(dxy, zc)
            if sigma <= h:
                ok = False
                break
            try:
                thetas.append(step_theta(a, b, sigma, MICROBUMP))
            except InvertibilityError:
                ok = False
                break
        if ok:
            return thetas
    raise InvertibilityError("could not split the move into invertible micro-bumps")
