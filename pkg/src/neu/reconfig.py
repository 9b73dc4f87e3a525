"""Reconfiguration chains: ordered compositions of local perturbations.

A chain applies its parameters in order (reconfiguration) and inverts them
in reverse order (deconfiguration), optionally sandwiched by a user-supplied
ambient diffeomorphism pair.  Chains are immutable values: ``append``
returns a new chain, which makes accept/reject rollback in the learning
loop free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import geometry, kernels
from .errors import DomainError
from .geometry import MICROBUMP, RDR, BumpTheta, RdrTheta, Theta

AmbientPair = tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class ReconfigChain:
    """An ordered, homogeneous-family sequence of perturbation parameters."""

    family: str
    dim: int
    thetas: tuple[Theta, ...] = ()
    ambient: AmbientPair | None = None

    def __post_init__(self):
        if self.family not in geometry.FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if self.family == MICROBUMP and self.dim != 2:
            raise DomainError("micro-bump chains are planar")
        if self.dim < 1:
            raise DomainError("chain dimension must be >= 1")
        for th in self.thetas:
            self._check_theta(th)
        object.__setattr__(self, "thetas", tuple(self.thetas))

    def _check_theta(self, theta: Theta) -> None:
        if theta.family != self.family:
            raise DomainError(
                f"family mismatch: chain holds {self.family!r}, got {theta.family!r}"
            )
        if theta.dim != self.dim:
            raise DomainError(
                f"dimension mismatch: chain is {self.dim}-d, parameter is {theta.dim}-d"
            )

    def __len__(self) -> int:
        return len(self.thetas)

    # -- application ---------------------------------------------------

    def _packed(self) -> np.ndarray:
        cached = self.__dict__.get("_packed_cache")
        if cached is None:
            cached = (
                np.stack([th.packed_row() for th in self.thetas])
                if self.thetas
                else np.zeros((0, 5))
            )
            object.__setattr__(self, "_packed_cache", cached)
        return cached

    def transform(self, pts: np.ndarray) -> np.ndarray:
        """Apply the chain forward to an (n, D) batch of points."""
        pts = np.asarray(pts, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise DomainError("points do not match the chain dimension")
        if self.ambient is not None:
            pts = np.asarray(self.ambient[0](pts), dtype=np.float64)
        if not self.thetas:
            return pts.copy()
        if self.dim == 2 and self.family == RDR:
            return kernels.rot_chain_apply(pts, self._packed(), forward=True)
        if self.family == MICROBUMP:
            return kernels.bump_chain_apply(pts, self._packed())
        out = pts
        for th in self.thetas:
            out = geometry.rdr_apply_batch(out, th)
        return out

    def invert(self, pts: np.ndarray) -> np.ndarray:
        """Apply the exact inverse: reversed parameters, inverted maps."""
        pts = np.asarray(pts, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != self.dim:
            raise DomainError("points do not match the chain dimension")
        if self.thetas:
            if self.dim == 2 and self.family == RDR:
                pts = kernels.rot_chain_apply(pts, self._packed()[::-1], forward=False)
            elif self.family == MICROBUMP:
                pts, _resid = kernels.bump_chain_invert(pts, self._packed()[::-1])
            else:
                out = pts
                for th in reversed(self.thetas):
                    out = geometry.rdr_apply_batch(out, th, inverse=True)
                pts = out
        else:
            pts = pts.copy()
        if self.ambient is not None:
            pts = np.asarray(self.ambient[1](pts), dtype=np.float64)
        return pts


def empty_chain(family: str, dim: int, ambient: AmbientPair | None = None) -> ReconfigChain:
    return ReconfigChain(family=family, dim=dim, thetas=(), ambient=ambient)


def append(chain: ReconfigChain, theta: Theta) -> ReconfigChain:
    """New chain with ``theta`` at the tail (the input chain is unchanged)."""
    chain._check_theta(theta)
    return ReconfigChain(
        family=chain.family,
        dim=chain.dim,
        thetas=chain.thetas + (theta,),
        ambient=chain.ambient,
    )


def extend(chain: ReconfigChain, thetas) -> ReconfigChain:
    for th in thetas:
        chain._check_theta(th)
    return ReconfigChain(
        family=chain.family,
        dim=chain.dim,
        thetas=chain.thetas + tuple(thetas),
        ambient=chain.ambient,
    )


def reconfigure(chain: ReconfigChain, x) -> np.ndarray:
    """Apply the chain forward to a single point."""
    x = np.asarray(x, dtype=np.float64)
    return chain.transform(x[None])[0]


def deconfigure(chain: ReconfigChain, y) -> np.ndarray:
    """Apply the chain inverse to a single point."""
    y = np.asarray(y, dtype=np.float64)
    return chain.invert(y[None])[0]


def chain_roundtrip_error(chain: ReconfigChain, points: np.ndarray) -> float:
    """max over points of |invert(transform(p)) - p| (diagnostic)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise DomainError("need a nonempty (n, D) array of probe points")
    back = chain.invert(chain.transform(points))
    return float(np.abs(back - points).max())


def check_ambient(chain: ReconfigChain, probes: np.ndarray, tol: float = 1e-9) -> None:
    """Verify that the ambient pair composes to the identity on probe points."""
    if chain.ambient is None:
        return
    probes = np.asarray(probes, dtype=np.float64)
    fwd, inv = chain.ambient
    back = np.asarray(inv(np.asarray(fwd(probes))))
    err = float(np.abs(back - probes).max())
    if err > tol:
        raise DomainError(f"ambient pair is not inverse on probes (error {err:.3g})")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def chain_to_dict(chain: ReconfigChain) -> dict:
    if chain.ambient is not None:
        raise DomainError("chains with a custom ambient pair are not serializable")
    thetas = []
    for th in chain.thetas:
        if isinstance(th, RdrTheta):
            x = th.generator.tolist()
        else:
            x = th.shift.tolist()
        thetas.append({"c": th.c.tolist(), "sigma": th.sigma, "X": x})
    return {"family": chain.family, "dimension": chain.dim, "thetas": thetas}


def chain_from_dict(doc: dict) -> ReconfigChain:
    family = doc["family"]
    dim = int(doc["dimension"])
    thetas = []
    for row in doc["thetas"]:
        c = np.asarray(row["c"], dtype=np.float64)
        sigma = float(row["sigma"])
        x = np.asarray(row["X"], dtype=np.float64)
        if family == RDR:
            thetas.append(RdrTheta(c, sigma, x))
        elif family == MICROBUMP:
            thetas.append(BumpTheta(c, sigma, x))
        else:
            raise DomainError(f"unknown family {family!r}")
    return ReconfigChain(family=family, dim=dim, thetas=tuple(thetas))


def chain_to_json(chain: ReconfigChain) -> str:
    return json.dumps(chain_to_dict(chain))


def chain_from_json(text: str) -> ReconfigChain:
    return chain_from_dict(json.loads(text))
