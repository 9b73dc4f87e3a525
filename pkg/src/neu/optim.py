"""Derivative-free minimizers used by the reconfiguration search."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class OptResult:
    x: np.ndarray
    fx: float
    n_evals: int
    converged: bool
    reason: str


def _finite(v: float) -> float:
    return v if math.isfinite(v) else math.inf


def nelder_mead(
    f,
    x0,
    max_iters: int = 200,
    max_evals: int = 10_000,
    initial_step: float = 0.1,
    initial_steps=None,
    diam_tol: float = 1e-8,
    f_tol: float = 1e-10,
) -> OptResult:
    """Nelder-Mead simplex minimization.

    Reflection, expansion, contraction, and shrink coefficients 1, 2, 0.5,
    0.5.  Stops when the simplex diameter falls below ``diam_tol``, the
    spread of vertex values falls below ``f_tol``, or the evaluation budget
    runs out.  Returns the best vertex seen.  ``initial_steps`` overrides
    the per-coordinate offsets of the starting simplex.
    """
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    n = x0.size
    evals = 0

    def call(x):
        nonlocal evals
        evals += 1
        return _finite(float(f(x)))

    f0 = call(x0)
    if not math.isfinite(f0):
        raise DomainError("objective is not finite at the starting point")
    if initial_steps is not None:
        steps = np.asarray(initial_steps, dtype=np.float64).ravel()
        if steps.size != n:
            raise DomainError("initial_steps length must match x0")
    else:
        steps = initial_step * np.maximum(1.0, np.abs(x0))
    simplex = [x0]
    values = [f0]
    for i in range(n):
        xi = x0.copy()
        xi[i] += steps[i]
        simplex.append(xi)
        values.append(call(xi))
    if all(not math.isfinite(v) for v in values):
        raise DomainError("objective is not finite at every initial vertex")
    simplex = np.asarray(simplex)
    values = np.asarray(values)

    reason = "max_iters"
    converged = False
    for _ in range(max_iters):
        order = np.argsort(values, kind="stable")
        simplex = simplex[order]
        values = values[order]
        diam = float(np.abs(simplex[1:] - simplex[0]).max(initial=0.0))
        spread = float(values[-1] - values[0]) if math.isfinite(values[-1]) else math.inf
        if diam < diam_tol:
            converged, reason = True, "simplex_diameter"
            break
        if spread < f_tol:
            converged, reason = True, "f_spread"
            break
        if evals >= max_evals:
            reason = "max_evals"
            break
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        refl = centroid + 1.0 * (centroid - worst)
        f_refl = call(refl)
        if f_refl < values[0]:
            exp = centroid + 2.0 * (centroid - worst)
            f_exp = call(exp)
            if f_exp < f_refl:
                simplex[-1], values[-1] = exp, f_exp
            else:
                simplex[-1], values[-1] = refl, f_refl
        elif f_refl < values[-2]:
            simplex[-1], values[-1] = refl, f_refl
        else:
            contr = centroid + 0.5 * (worst - centroid)
            f_contr = call(contr)
            if f_contr < values[-1]:
                simplex[-1], values[-1] = contr, f_contr
            else:
                for i in range(1, n + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    values[i] = call(simplex[i])

    best = int(np.argmin(values))
    return OptResult(
        x=simplex[best].copy(),
        fx=float(values[best]),
        n_evals=evals,
        converged=converged,
        reason=reason,
    )


def finite_diff_descent(
    f,
    x0,
    max_iters: int = 200,
    max_evals: int = 10_000,
    step0: float = 0.1,
    grad_tol: float = 1e-6,
    h_scale: float = 1e-6,
) -> OptResult:
    """Gradient descent on a central-difference gradient with backtracking.

    The difference step is ``h_scale * max(1, |x_i|)`` per coordinate; the
    line step halves until the value decreases (collapse below 1e-16 stops
    the iteration with a budget report).
    """
    x = np.asarray(x0, dtype=np.float64).ravel().copy()
    evals = 0

    def call(p):
        nonlocal evals
        evals += 1
        return _finite(float(f(p)))

    fx = call(x)
    if not math.isfinite(fx):
        raise DomainError("objective is not finite at the starting point")

    step = step0
    reason = "max_iters"
    converged = False
    for _ in range(max_iters):
        if evals >= max_evals:
            reason = "max_evals"
            break
        grad = np.zeros_like(x)
        for i in range(x.size):
            h = h_scale * max(1.0, abs(x[i]))
            xp = x.copy()
            xm = x.copy()
            xp[i] += h
            xm[i] -= h
            grad[i] = (call(xp) - call(xm)) / (2.0 * h)
        gnorm = float(np.linalg.norm(grad))
        if gnorm < grad_tol:
            converged, reason = True, "grad_norm"
            break
        direction = -grad / gnorm
        trial_step = step
        improved = False
        while trial_step > 1e-16:
            cand = x + trial_step * direction
            fc = call(cand)
            if fc < fx:
                x, fx = cand, fc
                step = trial_step * 2.0
                improved = True
                break
            trial_step *= 0.5
        if not improved:
            reason = "step_collapse"
            break
    return OptResult(x=x, fx=fx, n_evals=evals, converged=converged, reason=reason)
