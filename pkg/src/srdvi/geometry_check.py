"""Randomized self-check of the sphere and basis operations.

Used by ``srdvi geometry-check`` and by the test suite.
"""

from __future__ import annotations

import time

import numpy as np

from .basis import build_uniform_basis, transport_basis
from .grid import GridFn, grid_nodes, inner, trapezoid_weights
from .sphere import Srd, TangentVec, exp_map, geodesic_distance, inv_exp_map, parallel_transport

TOL_NORM = 1e-8
TOL_ROUND_TRIP = 1e-6
TOL_TRANSPORT = 1e-8
TOL_GRAM = 1e-8
MAX_ROUND_TRIP_DIST = 1.0


def random_srd(rng: np.random.Generator, m: int, n_terms: int = 6, scale: float = 1.0) -> Srd:
    """A strictly positive square-root density with a random smooth log."""
    t = grid_nodes(m)
    k = np.arange(1, n_terms + 1)
    a = rng.normal(0.0, scale, n_terms) / k
    b = rng.normal(0.0, scale, n_terms) / k
    g = a @ np.sin(2 * np.pi * np.outer(k, t)) + b @ np.cos(np.pi * np.outer(k, t))
    return Srd.from_values(np.exp(0.5 * g))


def random_tangent(rng: np.random.Generator, at: Srd, n_terms: int = 8, size: float | None = None) -> TangentVec:
    t = grid_nodes(at.m)
    k = np.arange(1, n_terms + 1)
    raw = rng.normal(size=n_terms) @ np.cos(np.pi * np.outer(k, t)) + rng.normal()
    v = TangentVec.project(at, GridFn(raw))
    if size is not None:
        v = v * (size / v.norm())
    return v


def random_close_pair(rng: np.random.Generator, m: int) -> tuple[Srd, Srd]:
    """Two random Srds less than MAX_ROUND_TRIP_DIST apart."""
    scale = 1.0
    while True:
        p1, p2 = random_srd(rng, m, scale=scale), random_srd(rng, m, scale=scale)
        if geodesic_distance(p1, p2) < MAX_ROUND_TRIP_DIST:
            return p1, p2
        scale *= 0.8


def run_geometry_suite(rng: np.random.Generator, n_draws: int = 500, m: int = 1023, n_basis: int = 99,
                       basis_every: int = 1) -> dict:
    """Worst-case errors of each geometric identity over ``n_draws`` random inputs."""
    t0 = time.perf_counter()
    w = trapezoid_weights(m)
    worst = dict.fromkeys(("unit_norm", "round_trip", "inv_exp_norm", "exp_distance",
                           "transport_isometry", "transport_tangency", "gram_before", "gram_after"), 0.0)

    def bump(key, val):
        worst[key] = max(worst[key], float(val))

    basis = build_uniform_basis(n_basis, m)
    eye = np.eye(basis.n)
    bump("gram_before", np.max(np.abs(basis.gram() - eye)))
    # transporting the full basis dominates the cost; basis_every > 1 subsamples it
    for j in range(n_draws):
        p1, p2 = random_close_pair(rng, m)
        v = inv_exp_map(p1, p2)
        back = exp_map(p1, v)
        for p in (p1, p2, back):
            bump("unit_norm", abs(float(np.dot(w, p.values ** 2)) - 1.0))
        bump("round_trip", np.max(np.abs(back.values - p2.values)))
        bump("inv_exp_norm", abs(v.norm() - geodesic_distance(p1, p2)))

        u = random_tangent(rng, p1, size=0.5 * rng.random())
        bump("exp_distance", abs(geodesic_distance(p1, exp_map(p1, u)) - u.norm()) if _stays_positive(p1, u) else 0.0)

        a, b = random_tangent(rng, p1), random_tangent(rng, p1)
        ka, kb = parallel_transport(a, p1, p2), parallel_transport(b, p1, p2)
        bump("transport_isometry", abs(inner(ka.v, kb.v) - inner(a.v, b.v)))
        bump("transport_isometry", abs(ka.norm() - a.norm()))
        bump("transport_tangency", abs(inner(ka.v, p2.psi)))
        if j % basis_every == 0:
            moved = transport_basis(basis, p2)
            bump("gram_after", np.max(np.abs(moved.gram() - eye)))
            bump("transport_tangency", np.max(np.abs((moved.matrix() * w) @ p2.values)))

    limits = {"unit_norm": TOL_NORM, "round_trip": TOL_ROUND_TRIP, "inv_exp_norm": TOL_NORM,
              "exp_distance": TOL_NORM, "transport_isometry": TOL_TRANSPORT,
              "transport_tangency": TOL_TRANSPORT, "gram_before": TOL_GRAM, "gram_after": TOL_GRAM}
    checks = {k: {"max_error": worst[k], "limit": limits[k], "passed": worst[k] < limits[k]} for k in worst}
    return {"n_draws": n_draws, "m": m, "n_basis": n_basis, "checks": checks,
            "passed": all(c["passed"] for c in checks.values()), "seconds": time.perf_counter() - t0}


def _stays_positive(p: Srd, u: TangentVec) -> bool:
    nv = u.norm()
    return nv == 0 or bool(np.all(np.cos(nv) * p.values + np.sin(nv) * u.v.values / nv >= 0))
