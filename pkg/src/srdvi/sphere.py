"""Geometry of square-root densities on the unit Hilbert sphere.

Under the map p -> sqrt(p), densities on [0, 1] become points of the
positive orthant of the unit sphere in L2, the Fisher-Rao metric becomes
the plain L2 inner product, and geodesics are great circles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridFn, integrate, inner, trapezoid_weights

UNIT_NORM_TOL = 1e-8
# values in [-DUST, 0) are rounding noise and get clamped to zero
DUST = 1e-8


class StepTooLargeError(ValueError):
    """An exponential-map step left the positive orthant."""

    def __init__(self, min_value: float):
        super().__init__(f"exp_map result leaves the positive orthant (min value {min_value:.3e})")
        self.min_value = min_value


@dataclass(frozen=True, eq=False)
class Srd:
    """Square-root density: nonnegative, unit L2 norm on [0, 1]."""

    psi: GridFn

    def __post_init__(self):
        v = self.psi.values
        if v.min() < 0:
            raise ValueError(f"Srd has negative values (min {v.min():.3e})")
        nrm2 = integrate(self.psi * self.psi)
        if abs(nrm2 - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"Srd is not unit norm (||psi||^2 = {nrm2:.12f})")

    @classmethod
    def uniform(cls, m: int) -> "Srd":
        return cls(GridFn.constant(1.0, m))

    @classmethod
    def from_values(cls, v: np.ndarray) -> "Srd":
        """Clamp rounding dust, renormalize, and wrap raw values."""
        v = np.asarray(v, dtype=float)
        if v.min() < -DUST:
            raise StepTooLargeError(float(v.min()))
        v = np.maximum(v, 0.0)
        nrm = math.sqrt(float(np.dot(trapezoid_weights(v.size), v * v)))
        return cls(GridFn(v / nrm))

    @property
    def values(self) -> np.ndarray:
        return self.psi.values

    @property
    def m(self) -> int:
        return self.psi.m

    def pdf(self) -> GridFn:
        return pdf_from_srd(self)


@dataclass(frozen=True, eq=False)
class TangentVec:
    """Tangent vector ``v`` at footpoint ``at``."""

    at: Srd
    v: GridFn

    def __post_init__(self):
        self.at.psi._check(self.v)
        scale = max(1.0, float(np.abs(self.v.values).max()))
        if abs(inner(self.v, self.at.psi)) > UNIT_NORM_TOL * scale:
            raise ValueError(f"vector is not tangent at its footpoint (<v, psi> = {inner(self.v, self.at.psi):.3e})")

    @classmethod
    def project(cls, at: Srd, v: GridFn) -> "TangentVec":
        """Orthogonal projection of an ambient ``v`` onto the tangent space at ``at``."""
        return cls(at, v - inner(v, at.psi) * at.psi)

    @classmethod
    def zero(cls, at: Srd) -> "TangentVec":
        return cls(at, GridFn.constant(0.0, at.m))

    def norm(self) -> float:
        return math.sqrt(max(inner(self.v, self.v), 0.0))

    def __mul__(self, c: float) -> "TangentVec":
        return TangentVec(self.at, self.v * c)

    __rmul__ = __mul__


def srd_from_pdf(p: GridFn, mass_tol: float = 1e-3) -> Srd:
    """Square root of a density on [0, 1], after exact renormalization."""
    if p.values.min() < 0:
        raise ValueError(f"density has negative values (min {p.values.min():.3e})")
    mass = integrate(p)
    if abs(mass - 1.0) > mass_tol:
        raise ValueError(f"density integrates to {mass:.6g}, not 1")
    return Srd(GridFn(np.sqrt(p.values / mass)))


def pdf_from_srd(psi: Srd) -> GridFn:
    return psi.psi * psi.psi


def geodesic_distance(psi1: Srd, psi2: Srd) -> float:
    """Fisher-Rao distance: arc length between two points of the sphere.

    Uses the chord form ``2 asin(|psi1 - psi2| / 2)``, equal to
    ``acos <psi1, psi2>`` for unit vectors but accurate for nearby points.
    """
    psi1.psi._check(psi2.psi)
    diff = psi1.psi - psi2.psi
    chord = math.sqrt(max(inner(diff, diff), 0.0))
    return 2.0 * math.asin(min(1.0, 0.5 * chord))


def exp_arrays(psi: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Exponential map on raw arrays (no validation, no renormalization)."""
    nv = math.sqrt(max(float(np.dot(w, v * v)), 0.0))
    if nv == 0.0:
        return psi.copy()
    return math.cos(nv) * psi + (math.sin(nv) / nv) * v


def exp_map(psi: Srd, v: TangentVec) -> Srd:
    """Follow the great circle from ``psi`` with initial velocity ``v`` for unit time.

    Raises :class:`StepTooLargeError` if the end point dips below the
    positive orthant by more than rounding dust.
    """
    if v.at is not psi:
        psi.psi._check(v.v)
    out = exp_arrays(psi.values, v.v.values, trapezoid_weights(psi.m))
    return Srd.from_values(out)


def inv_exp_map(psi1: Srd, psi2: Srd) -> TangentVec:
    """Initial velocity of the geodesic from ``psi1`` reaching ``psi2`` at unit time."""
    psi1.psi._check(psi2.psi)
    c = min(1.0, max(-1.0, inner(psi1.psi, psi2.psi)))
    theta = geodesic_distance(psi1, psi2)
    if theta < 1e-12:
        return TangentVec.zero(psi1)
    raw = psi2.values - c * psi1.values
    v = (theta / math.sin(theta)) * raw
    # strip the residual normal component left by rounding
    v = v - float(np.dot(trapezoid_weights(psi1.m), v * psi1.values)) * psi1.values
    return TangentVec(psi1, GridFn(v))


def transport_arrays(v: np.ndarray, psi1: np.ndarray, psi2: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Parallel transport of the rows of ``v`` (shape (..., M)) from psi1 to psi2."""
    s = psi1 + psi2
    s2 = float(np.dot(w, s * s))
    if s2 < 1e-16:
        raise ValueError("cannot transport between antipodal points")
    coef = 2.0 * ((v * w) @ psi2) / s2
    return v - np.multiply.outer(coef, s)


def parallel_transport(v: TangentVec, psi1: Srd, psi2: Srd) -> TangentVec:
    """Move ``v`` from the tangent space at ``psi1`` to the one at ``psi2`` along the geodesic."""
    psi1.psi._check(psi2.psi)
    psi1.psi._check(v.v)
    out = transport_arrays(v.v.values, psi1.values, psi2.values, trapezoid_weights(psi1.m))
    return TangentVec(psi2, GridFn(out))
