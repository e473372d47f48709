"""Alpha-divergence variational inference on products of SRD spheres.

The approximating family is mean-field: ``q(theta) = prod_i q_i(theta_i)``,
each factor stored as a square-root density on the unit interval together
with the affine map to its native box.  Everything numeric is done in unit
coordinates, where the joint becomes

    f~(t) = f(x, theta(t)) * prod_i (hi_i - lo_i)

so that ``E_alpha = int f~^alpha prod_i psi_i^(2 - 2 alpha) dt`` and the
model evidence is ``int f~ dt``.

Two ways of evaluating the d-dimensional integrals are supported:

``exact``
    full tensor-grid trapezoid quadrature (d <= 2 only).
``taylor``
    nested first-order collapse: every coordinate except the one being
    integrated is pinned at its mean under ``q``.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .basis import OrthonormalBasis, build_uniform_basis
from .grid import DomainMap, GridFn, grid_nodes, trapezoid_weights, write_csv, read_csv
from .sphere import DUST, Srd, StepTooLargeError, TangentVec, exp_arrays

log = logging.getLogger(__name__)

EXACT = "exact"
TAYLOR = "taylor"
LOG_FLOOR = -1e12
# tensor grids beyond this many points are refused (memory)
MAX_TENSOR_POINTS = 20_000_000


class StallError(RuntimeError):
    """No admissible step size was found along an ascent direction."""


class NonFiniteEnergyError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


class ModelSpec:
    """A Bayesian model with data baked in.

    Subclasses set ``domains`` (one :class:`DomainMap` per parameter) and
    implement :meth:`log_joint`, which must accept an array of shape
    ``(..., d)`` of native parameter values and return ``ln f(x, theta)``
    with shape ``(...)``.
    """

    domains: list[DomainMap]
    param_names: list[str] | None = None

    @property
    def dim(self) -> int:
        return len(self.domains)

    def log_joint(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def log_joint_slice(self, base: np.ndarray, i: int, values: np.ndarray) -> np.ndarray:
        """ln f along coordinate ``i`` with the others held at ``base``."""
        pts = np.repeat(np.asarray(base, dtype=float)[None, :], len(values), axis=0)
        pts[:, i] = values
        return self.log_joint(pts)

    def exact_log_marginal(self) -> float:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form marginal")

    def exact_posterior_grid(self, i: int, m: int) -> GridFn:
        """Exact marginal posterior density of coordinate ``i`` on its native grid."""
        raise NotImplementedError(f"{type(self).__name__} has no exact posterior")

    def log_unit_jacobian(self) -> float:
        return float(sum(math.log(d.width) for d in self.domains))


@dataclass(frozen=True, eq=False)
class FactorizedApprox:
    """Mean-field iterate: one (Srd, DomainMap) pair per coordinate."""

    coords: tuple[tuple[Srd, DomainMap], ...]

    def __post_init__(self):
        if not self.coords:
            raise ValueError("need at least one coordinate")
        m = self.coords[0][0].m
        for psi, _ in self.coords:
            if psi.m != m:
                raise ValueError("all coordinates must share the grid size")
        object.__setattr__(self, "coords", tuple(tuple(c) for c in self.coords))

    @classmethod
    def uniform(cls, domains: Sequence[DomainMap], m: int) -> "FactorizedApprox":
        u = Srd.uniform(m)
        return cls(tuple((u, d) for d in domains))

    @classmethod
    def from_unit_densities(cls, densities: Sequence[np.ndarray], domains: Sequence[DomainMap]) -> "FactorizedApprox":
        """Build from densities given on the unit grid (renormalized)."""
        coords = []
        for p, dmap in zip(densities, domains):
            p = np.asarray(p, dtype=float)
            coords.append((Srd.from_values(np.sqrt(np.maximum(p, 0.0))), dmap))
        return cls(tuple(coords))

    @classmethod
    def from_native_pdfs(cls, pdfs, domains: Sequence[DomainMap], m: int) -> "FactorizedApprox":
        """Build from callables giving native-coordinate densities."""
        dens = [np.asarray(f(dmap.nodes(m)), dtype=float) * dmap.width for f, dmap in zip(pdfs, domains)]
        return cls.from_unit_densities(dens, domains)

    @property
    def d(self) -> int:
        return len(self.coords)

    @property
    def m(self) -> int:
        return self.coords[0][0].m

    @property
    def domains(self) -> list[DomainMap]:
        return [dm for _, dm in self.coords]

    def psi(self, i: int) -> np.ndarray:
        return self.coords[i][0].values

    def replace_coord(self, i: int, psi: Srd) -> "FactorizedApprox":
        coords = list(self.coords)
        coords[i] = (psi, coords[i][1])
        return FactorizedApprox(tuple(coords))

    def native_pdf(self, i: int) -> GridFn:
        psi, dmap = self.coords[i]
        return GridFn(psi.values ** 2 / dmap.width)


@dataclass(frozen=True)
class EnergySettings:
    alpha: float = 0.5
    n_basis: int = 99
    grid_m: int = 1023
    step_c1: float = 1e-4
    step_c2: float = 0.9
    tol_delta: float = 1e-4
    max_iter: int = 500
    integral_method: str = TAYLOR
    objective: str = "alpha"  # "alpha" or "kld"
    stopping: str = "max"  # "max" or "min" over coordinate gradient norms
    step_mode: str = "wolfe"  # "wolfe" or "fixed"
    fixed_step: float = 0.1  # geodesic angle per step in "fixed" mode
    max_halvings: int = 60
    orthant: str = "project"  # "project" (clamp + renormalize) or "fail" (shrink the step)
    # stop once the objective gains less than stall_tol * max(1, |value|) over stall_window sweeps; 0 disables
    stall_tol: float = 1e-8
    stall_window: int = 10

    def __post_init__(self):
        if self.objective not in ("alpha", "kld"):
            raise ValueError(f"objective must be 'alpha' or 'kld', got {self.objective!r}")
        if self.objective == "alpha" and (not self.alpha > 0 or self.alpha == 1):
            raise ValueError(f"alpha must be positive and != 1, got {self.alpha}")
        if self.n_basis < 3 or self.n_basis % 2 == 0:
            raise ValueError(f"n_basis must be odd and >= 3, got {self.n_basis}")
        if self.grid_m < 3:
            raise ValueError("grid_m must be >= 3")
        if not 0 < self.step_c1 < self.step_c2 < 1:
            raise ValueError("need 0 < step_c1 < step_c2 < 1")
        if self.tol_delta <= 0:
            raise ValueError("tol_delta must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if self.integral_method not in (EXACT, TAYLOR):
            raise ValueError(f"integral_method must be {EXACT!r} or {TAYLOR!r}")
        if self.stopping not in ("max", "min"):
            raise ValueError("stopping must be 'max' or 'min'")
        if self.step_mode not in ("wolfe", "fixed"):
            raise ValueError("step_mode must be 'wolfe' or 'fixed'")
        if self.orthant not in ("project", "fail"):
            raise ValueError("orthant must be 'project' or 'fail'")
        if self.stall_tol < 0 or self.stall_window < 1:
            raise ValueError("stall_tol must be >= 0 and stall_window >= 1")

    def with_(self, **kw) -> "EnergySettings":
        return replace(self, **kw)

    @property
    def ascent_sign(self) -> float:
        if self.objective == "kld":
            return 1.0
        return 1.0 if self.alpha < 1 else -1.0


@dataclass
class OptimReport:
    iterations: int = 0
    final_grad_norms: list[float] = field(default_factory=list)
    energy_trace: list[float] = field(default_factory=list)
    converged: bool = False
    stop_reason: str = "max_iter"  # "gradient", "stagnation" or "max_iter"
    wall_time: float = 0.0
    step_sizes: list[float] = field(default_factory=list)
    stalls: int = 0
    suppressed_points: int = 0
    integral_method: str = TAYLOR
    objective: str = "alpha"
    alpha: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# joint grids and coordinate slices
# ---------------------------------------------------------------------------


class _JointGrid:
    """ln f~ on a full tensor grid, cached per model and grid size."""

    def __init__(self, model: ModelSpec, m: int):
        if m ** model.dim > MAX_TENSOR_POINTS:
            raise ValueError(f"tensor grid of {m}^{model.dim} points is too large; "
                             f"use a smaller evaluation grid or the taylor method")
        axes = [dm.nodes(m) for dm in model.domains]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        L = np.asarray(model.log_joint(mesh), dtype=float) + model.log_unit_jacobian()
        bad = ~np.isfinite(L) & ~(L == -np.inf)
        if bad.any():
            idx = tuple(int(k) for k in np.argwhere(bad)[0])
            raise NonFiniteEnergyError(f"log_joint is not finite at grid point {idx} "
                                       f"(theta = {mesh[idx].tolist()})")
        self.L = np.maximum(L, LOG_FLOOR)
        self.Lmax = float(self.L.max())
        self.m = m
        self._scaled: dict[float, np.ndarray] = {}

    def scaled(self, alpha: float) -> np.ndarray:
        """exp(alpha (L - Lmax))."""
        a = self._scaled.get(alpha)
        if a is None:
            a = np.exp(alpha * (self.L - self.Lmax))
            if len(self._scaled) > 8:
                self._scaled.clear()
            self._scaled[alpha] = a
        return a


def joint_grid(model: ModelSpec, m: int) -> _JointGrid:
    cache = model.__dict__.setdefault("_srdvi_grid_cache", {})
    g = cache.get(m)
    if g is None:
        g = cache[m] = _JointGrid(model, m)
    return g


def _powp(psi: np.ndarray, p: float) -> tuple[np.ndarray, int]:
    """psi**p with zeros suppressed when p < 0; returns (values, n_suppressed)."""
    if p >= 0:
        return psi ** p, 0
    zero = psi <= 0
    with np.errstate(divide="ignore"):
        out = np.where(zero, 0.0, np.abs(psi) ** p)
    return out, int(zero.sum())


def conditional_means(q: FactorizedApprox) -> np.ndarray:
    """Native-coordinate means of every factor."""
    w = trapezoid_weights(q.m)
    t = grid_nodes(q.m)
    out = np.empty(q.d)
    for i, (psi, dmap) in enumerate(q.coords):
        p = psi.values ** 2
        out[i] = dmap.to_native(float(np.dot(w, t * p)) / float(np.dot(w, p)))
    return out


def _psi_at(q: FactorizedApprox, j: int, theta_native: float) -> float:
    psi, dmap = q.coords[j]
    u = float(dmap.to_unit_coord(theta_native))
    return float(np.interp(u, grid_nodes(q.m), psi.values))


@dataclass
class _Coord:
    """One-coordinate view of the objective with the other factors fixed.

    For the alpha objective the coordinate energy is ``J(psi) = int H psi^p``
    with ``p = 2 - 2 alpha``; the full (log) energy is ``log_offset + ln J``.
    For the KLD objective ``J(psi) = int psi^2 (K - ln psi^2)`` and the full
    value is ``offset + J``.
    """

    kind: str
    H: np.ndarray
    alpha: float
    w: np.ndarray
    offset: float

    def value(self, psi: np.ndarray) -> float:
        if self.kind == "alpha":
            pp, nz = _powp(psi, 2 - 2 * self.alpha)
            # for alpha > 1 a zero of psi where f > 0 makes the energy infinite
            if nz and self.alpha > 1 and np.any(self.H[psi <= 0] > 0):
                return math.inf
            return float(np.dot(self.w, self.H * pp))
        q = psi * psi
        return float(np.dot(self.w, q * self.H - _xlogx(q)))

    def ambient_grad(self, psi: np.ndarray) -> tuple[np.ndarray, int]:
        if self.kind == "alpha":
            a = self.alpha
            pp, nz = _powp(psi, 1 - 2 * a)
            return 2 * (1 - a) * self.H * pp, nz
        q = psi * psi
        with np.errstate(divide="ignore", invalid="ignore"):
            lq = np.where(q > 0, np.log(np.where(q > 0, q, 1.0)), 0.0)
        return 2 * psi * (self.H - lq) - 2 * psi, 0

    def full(self, psi: np.ndarray) -> float:
        """Value of the whole objective (log energy or H) at this coordinate value."""
        v = self.value(psi)
        if self.kind == "alpha":
            return self.offset + math.log(v) if v > 0 else -math.inf
        return self.offset + v


def _coord_problem(model: ModelSpec, q: FactorizedApprox, i: int, s: EnergySettings,
                   means: np.ndarray | None = None) -> _Coord:
    w = trapezoid_weights(q.m)
    alpha = s.alpha
    kind = s.objective
    if s.integral_method == EXACT:
        if q.d > 2:
            raise ValueError(f"exact coordinate updates need d <= 2, got d = {q.d}; use the taylor method")
        g = joint_grid(model, q.m)
        if kind == "alpha":
            p = 2 - 2 * alpha
            A = g.scaled(alpha)
            if q.d == 1:
                H = A
            else:
                other = 1 - i
                pw, _ = _powp(q.psi(other), p)
                vec = w * pw
                H = A @ vec if i == 0 else vec @ A
            return _Coord(kind, np.asarray(H), alpha, w, alpha * g.Lmax)
        # kld: H is E_{q_-i}[ln f~] and the offset is the other factors' entropy
        if q.d == 1:
            return _Coord(kind, g.L, alpha, w, 0.0)
        other = 1 - i
        qo = q.psi(other) ** 2
        vec = w * qo
        K = g.L @ vec if i == 0 else vec @ g.L
        return _Coord(kind, K, alpha, w, -float(np.dot(w, _xlogx(qo))))

    # taylor collapse: pin the other coordinates at their means
    if means is None:
        means = conditional_means(q)
    dmap = q.coords[i][1]
    L = np.asarray(model.log_joint_slice(means, i, dmap.nodes(q.m)), dtype=float)
    L = L + model.log_unit_jacobian()
    if np.any(np.isnan(L)) or np.any(L == np.inf):
        k = int(np.flatnonzero(~np.isfinite(L) & (L != -np.inf))[0])
        raise NonFiniteEnergyError(f"log_joint is not finite on coordinate {i} at grid point {k}")
    L = np.maximum(L, LOG_FLOOR)
    log_psi_others = 0.0
    for j in range(q.d):
        if j != i:
            log_psi_others += 2 * math.log(max(_psi_at(q, j, means[j]), 1e-300))
    if kind == "alpha":
        c = float(L.max())
        H = np.exp(alpha * (L - c))
        return _Coord(kind, H, alpha, w, alpha * c - alpha * log_psi_others)
    return _Coord(kind, L, alpha, w, -log_psi_others)


# ---------------------------------------------------------------------------
# objective values
# ---------------------------------------------------------------------------


def default_eval_grid(d: int, m: int) -> int:
    """Tensor-grid size used for exact evaluation: the fit grid when d <= 2, coarser above."""
    if d <= 2:
        return m
    top = int(MAX_TENSOR_POINTS ** (1.0 / d))
    return min(m, top - (top + 1) % 2)


def _resampled_psis(q: FactorizedApprox, m_eval: int) -> list[np.ndarray]:
    if m_eval == q.m:
        return [q.psi(i) for i in range(q.d)]
    t_old, t_new = grid_nodes(q.m), grid_nodes(m_eval)
    w = trapezoid_weights(m_eval)
    out = []
    for i in range(q.d):
        v = np.interp(t_new, t_old, q.psi(i))
        out.append(v / math.sqrt(float(np.dot(w, v * v))))
    return out


def _outer_all(vecs: Sequence[np.ndarray]) -> np.ndarray:
    out = vecs[0]
    for v in vecs[1:]:
        out = np.multiply.outer(out, v)
    return out


def _exact_log_energy(model: ModelSpec, q: FactorizedApprox, alpha: float, m_eval: int) -> float:
    g = joint_grid(model, m_eval)
    w = trapezoid_weights(m_eval)
    psis = _resampled_psis(q, m_eval)
    if alpha > 1 and any(np.any(v <= 0) for v in psis):
        return math.inf
    facs = [w * _powp(v, 2 - 2 * alpha)[0] for v in psis]
    total = float(np.sum(g.scaled(alpha) * _outer_all(facs)))
    return alpha * g.Lmax + math.log(total) if total > 0 else -math.inf


def _xlogx(q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0)


def _exact_kld(model: ModelSpec, q: FactorizedApprox, m_eval: int) -> float:
    g = joint_grid(model, m_eval)
    w = trapezoid_weights(m_eval)
    dens = [v * v for v in _resampled_psis(q, m_eval)]
    # E_q[ln f~] + sum of the factor entropies
    val = float(np.sum(g.L * _outer_all([w * p for p in dens])))
    return val - sum(float(np.dot(w, _xlogx(p))) for p in dens)


def log_energy_alpha(model: ModelSpec, q: FactorizedApprox, s: EnergySettings,
                     m_eval: int | None = None) -> float:
    """ln E_alpha(psi_q), computed without forming E_alpha itself.

    ``exact`` uses tensor-grid quadrature (on a coarser grid of ``m_eval``
    points per axis when d > 2).  ``taylor`` averages the collapsed value
    (in log space) over the choice of the coordinate left un-pinned; for
    d = 1 both agree.
    """
    if model.dim != q.d:
        raise ValueError(f"model has d = {model.dim}, approximation has d = {q.d}")
    s = s if s.objective == "alpha" else s.with_(objective="alpha")
    if s.integral_method == EXACT:
        return _exact_log_energy(model, q, s.alpha, m_eval or default_eval_grid(q.d, q.m))
    means = conditional_means(q)
    vals = [_coord_problem(model, q, i, s, means).full(q.psi(i)) for i in range(q.d)]
    return float(np.mean(vals))


def energy_alpha(model: ModelSpec, q: FactorizedApprox, s: EnergySettings,
                 m_eval: int | None = None) -> float:
    """E_alpha = int f^alpha q^(1 - alpha).  Underflows for large models; prefer :func:`log_energy_alpha`."""
    return math.exp(log_energy_alpha(model, q, s, m_eval))


def kld_objective(model: ModelSpec, q: FactorizedApprox, s: EnergySettings,
                  m_eval: int | None = None) -> float:
    """H(f, q) = int q ln(f / q), the KLD evidence lower bound."""
    if model.dim != q.d:
        raise ValueError(f"model has d = {model.dim}, approximation has d = {q.d}")
    s = s.with_(objective="kld")
    if s.integral_method == EXACT:
        return _exact_kld(model, q, m_eval or default_eval_grid(q.d, q.m))
    means = conditional_means(q)
    vals = [_coord_problem(model, q, i, s, means).full(q.psi(i)) for i in range(q.d)]
    return float(np.mean(vals))


def log_energy_joint(model: ModelSpec, q_unit: np.ndarray, alpha: float, m: int) -> float:
    """ln int f~^alpha q^(1-alpha) for an arbitrary (not factorized) density on the unit tensor grid."""
    g = joint_grid(model, m)
    W = _tensor_weights(m, model.dim)
    q = np.asarray(q_unit, dtype=float)
    qa, _ = _powp(np.sqrt(q), 2 - 2 * alpha)
    return alpha * g.Lmax + math.log(float(np.sum(W * g.scaled(alpha) * qa)))


def kld_joint(model: ModelSpec, q_unit: np.ndarray, m: int) -> float:
    """H(f, q) for an arbitrary density on the unit tensor grid."""
    g = joint_grid(model, m)
    W = _tensor_weights(m, model.dim)
    q = np.asarray(q_unit, dtype=float)
    return float(np.sum(W * (q * g.L - _xlogx(q))))


def grid_log_marginal(model: ModelSpec, m: int) -> float:
    """ln int f dtheta by tensor-grid trapezoid quadrature over the domain box."""
    g = joint_grid(model, m)
    W = _tensor_weights(m, model.dim)
    return g.Lmax + math.log(float(np.sum(W * g.scaled(1.0))))


def grid_posterior(model: ModelSpec, m: int) -> np.ndarray:
    """Posterior density on the unit tensor grid, normalized by quadrature."""
    g = joint_grid(model, m)
    W = _tensor_weights(m, model.dim)
    p = g.scaled(1.0)
    return p / float(np.sum(W * p))


def _tensor_weights(m: int, d: int) -> np.ndarray:
    return _outer_all([trapezoid_weights(m)] * d)


# ---------------------------------------------------------------------------
# gradients and line search
# ---------------------------------------------------------------------------


def _project(g: np.ndarray, psi: np.ndarray, B0w: np.ndarray, B0: np.ndarray, w: np.ndarray):
    """Coefficients of ``g`` on the basis transported from the uniform point to ``psi``,
    and the corresponding tangent vector, without forming the transported basis.
    """
    s = 1.0 + psi
    s2 = float(np.dot(w, s * s))
    c = B0w @ psi  # <b_k, psi>
    G = B0w @ g - (2.0 / s2) * c * float(np.dot(w, g * s))
    v = G @ B0 - (2.0 / s2) * float(np.dot(c, G)) * s
    return G, v


def _relative_scale(coord: _Coord, psi: np.ndarray) -> float:
    if coord.kind == "alpha":
        return coord.value(psi)
    return 1.0


def gradient_coordinate(model: ModelSpec, q: FactorizedApprox, i: int, basis: OrthonormalBasis,
                        s: EnergySettings) -> TangentVec:
    """Ascent direction for coordinate ``i`` truncated to ``basis``.

    For the alpha objective the result is the gradient of ``ln E_alpha``
    (the energy gradient divided by the energy, a positive rescaling), with
    its sign flipped when ``alpha > 1`` so that it always points uphill for
    the optimizer.  For the KLD objective it is the gradient of ``H(f, q)``.
    """
    if not 0 <= i < q.d:
        raise IndexError(f"coordinate {i} out of range for d = {q.d}")
    psi_srd = q.coords[i][0]
    psi = psi_srd.values
    if not np.allclose(basis.at.values, psi, atol=1e-12, rtol=0):
        raise ValueError("basis is not footed at the current coordinate")
    coord = _coord_problem(model, q, i, s)
    g, nz = coord.ambient_grad(psi)
    if nz:
        log.warning("coordinate %d: %d grid points with psi = 0 suppressed in the gradient", i, nz)
    w = trapezoid_weights(q.m)
    B = basis.matrix()
    G = (B * w) @ g
    v = s.ascent_sign * (G @ B) / _relative_scale(coord, psi)
    # the basis is tangent, but strip rounding residue along psi
    v = v - float(np.dot(w, v * psi)) * psi
    return TangentVec(psi_srd, GridFn(v))


@dataclass
class _LineResult:
    eps: float
    psi: np.ndarray
    value: float
    ok: bool
    trials: int


def _dphi(coord: _Coord, sign: float, psi0: np.ndarray, v: np.ndarray, nv: float, eps: float,
          psi_eps: np.ndarray) -> float:
    """d/d eps of sign * J(exp_psi0(eps v))."""
    th = eps * nv
    vel = -nv * math.sin(th) * psi0 + math.cos(th) * v
    g, _ = coord.ambient_grad(psi_eps)
    return sign * float(np.dot(coord.w, g * vel))


def _orthant_angle(psi0: np.ndarray, v: np.ndarray, nv: float) -> float:
    """Largest geodesic angle (capped at pi/2) before any value drops below -DUST/2."""
    b = v / nv
    R = np.hypot(psi0, b)
    mask = (b < 0) & (R > 0.5 * DUST)
    if not mask.any():
        return math.pi / 2
    phi = np.arctan2(b[mask], psi0[mask])
    theta = phi + np.arccos(np.clip(-0.5 * DUST / R[mask], -1.0, 1.0))
    return float(min(math.pi / 2, theta.min()))


def _wolfe_search(coord: _Coord, sign: float, psi0: np.ndarray, v: np.ndarray, D: float,
                  eps0: float, s: EnergySettings) -> _LineResult:
    """Weak Wolfe search by bracketing and bisection along the geodesic.

    Steps are capped where the geodesic would leave the positive orthant;
    if the curvature condition still holds at the cap, the capped step is
    accepted provided it gives sufficient increase.
    """
    w = coord.w
    nv = math.sqrt(float(np.dot(w, v * v)))
    phi0 = sign * coord.value(psi0)
    lo, hi = 0.0, math.inf
    eps = eps0
    project = s.orthant == "project"
    eps_cap = (math.pi / 2 if project else _orthant_angle(psi0, v, nv)) / nv
    best = None
    for trial in range(1, s.max_halvings + 1):
        at_cap = eps >= eps_cap
        eps = min(eps, eps_cap)
        try:
            new = _exp_checked(psi0, eps * v, w, project)
        except StepTooLargeError:
            hi = eps
            eps = 0.5 * (lo + hi)
            continue
        phi = sign * coord.value(new)
        if not math.isfinite(phi) or phi < phi0 + s.step_c1 * eps * D:
            hi = eps
        else:
            best = (eps, new, phi)
            if (at_cap and not project) or _dphi(coord, sign, psi0, v, nv, eps, new) <= s.step_c2 * D:
                return _LineResult(eps, new, sign * phi, True, trial)
            lo = eps
        eps = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * eps
    if best is not None:
        # sufficient increase holds; curvature could not be certified in budget
        eps, new, phi = best
        return _LineResult(eps, new, sign * phi, True, s.max_halvings)
    return _LineResult(0.0, psi0, sign * phi0, False, s.max_halvings)


def _fixed_step(coord: _Coord, sign: float, psi0: np.ndarray, v: np.ndarray, D: float,
                s: EnergySettings) -> _LineResult:
    w = coord.w
    nv = math.sqrt(float(np.dot(w, v * v)))
    eps = s.fixed_step / nv
    phi0 = sign * coord.value(psi0)
    for trial in range(1, s.max_halvings + 1):
        try:
            new = _exp_checked(psi0, eps * v, w, s.orthant == "project")
            phi = sign * coord.value(new)
            if math.isfinite(phi) and phi >= phi0:
                return _LineResult(eps, new, sign * phi, True, trial)
        except StepTooLargeError:
            pass
        eps *= 0.5
    return _LineResult(0.0, psi0, sign * phi0, False, s.max_halvings)


def _exp_checked(psi0: np.ndarray, step: np.ndarray, w: np.ndarray, project: bool = False) -> np.ndarray:
    out = exp_arrays(psi0, step, w)
    if project:
        # metric projection of the sphere point onto the positive orthant
        out = np.maximum(out, 0.0)
    return Srd.from_values(out).values


def line_search(model: ModelSpec, q: FactorizedApprox, i: int, direction: TangentVec,
                s: EnergySettings, eps0: float | None = None) -> float:
    """Step size along ``direction`` satisfying the weak Wolfe conditions.

    ``direction`` must be an ascent direction for the optimizer's objective
    (for alpha > 1 that means a descent direction of the energy).
    """
    coord = _coord_problem(model, q, i, s)
    psi0 = q.psi(i)
    v = direction.v.values
    sign = s.ascent_sign
    g, _ = coord.ambient_grad(psi0)
    D = sign * float(np.dot(coord.w, g * v))
    if not D > 0:
        raise ValueError(f"direction is not an ascent direction (directional derivative {D:.3e})")
    nv = math.sqrt(float(np.dot(coord.w, v * v)))
    if eps0 is None:
        eps0 = 0.1 / nv
    res = _wolfe_search(coord, sign, psi0, v, D, eps0, s) if s.step_mode == "wolfe" \
        else _fixed_step(coord, sign, psi0, v, D, s)
    if not res.ok:
        raise StallError(f"coordinate {i}: no admissible step after {s.max_halvings} halvings")
    return res.eps


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def _trace_value(model, q, s, means=None) -> float:
    if s.objective == "kld":
        return kld_objective(model, q, s)
    return log_energy_alpha(model, q, s)


def fit(model: ModelSpec, s: EnergySettings, init: FactorizedApprox | None = None,
        basis0: OrthonormalBasis | None = None, callback=None) -> tuple[FactorizedApprox, OptimReport]:
    """Cyclic coordinate gradient ascent on the product of SRD spheres.

    Each sweep updates coordinates 1..d in order: compute the ascent
    direction in the span of the basis transported from the initial point,
    pick a step by weak-Wolfe search (or a fixed angle), and move along the
    geodesic.  A sweep counts as one iteration.  Stops when the gradient
    norms (relative to the energy for the alpha objective) fall below
    ``tol_delta``, using their max (default) or min over coordinates.

    ``energy_trace`` holds ln E_alpha (or H for the KLD objective) after
    each sweep.  With the exact method that is the full objective; with the
    taylor method it accumulates the accepted per-coordinate changes of the
    collapsed objective, starting from its initial collapsed value.
    """
    t0 = time.perf_counter()
    m = s.grid_m
    if init is None:
        init = FactorizedApprox.uniform(model.domains, m)
    if init.d != model.dim:
        raise ValueError(f"init has d = {init.d}, model has d = {model.dim}")
    if init.m != m:
        raise ValueError(f"init grid size {init.m} != settings.grid_m {m}")
    if basis0 is None:
        basis0 = build_uniform_basis(s.n_basis, m)
    B0 = basis0.matrix()
    if not np.allclose(basis0.at.values, 1.0):
        raise ValueError("basis0 must be footed at the uniform density")
    w = trapezoid_weights(m)
    B0w = B0 * w
    sign = s.ascent_sign
    report = OptimReport(integral_method=s.integral_method, objective=s.objective, alpha=s.alpha)

    q = init
    psis = [q.psi(i).copy() for i in range(q.d)]
    means = conditional_means(q)
    trace_val = _trace_value(model, q, s)
    report.energy_trace.append(trace_val)
    eps_prev = [None] * q.d
    grad_norms = [math.inf] * q.d

    for it in range(s.max_iter):
        sweep_gain = 0.0
        for i in range(q.d):
            coord = _coord_problem(model, q, i, s, means if s.integral_method == TAYLOR else None)
            psi = psis[i]
            g, nz = coord.ambient_grad(psi)
            report.suppressed_points += nz
            G, v = _project(g, psi, B0w, B0, w)
            scale = _relative_scale(coord, psi)
            grad_norms[i] = float(np.linalg.norm(G)) / scale
            if grad_norms[i] <= s.tol_delta:
                continue
            v = sign * v
            D = float(np.dot(G, G))
            nv = math.sqrt(D)
            if s.step_mode == "wolfe":
                eps0 = 2.0 * eps_prev[i] if eps_prev[i] else 0.2 / nv
                res = _wolfe_search(coord, sign, psi, v, D, eps0, s)
            else:
                res = _fixed_step(coord, sign, psi, v, D, s)
            if not res.ok:
                report.stalls += 1
                log.info("sweep %d coordinate %d: line search stalled", it, i)
                continue
            old = coord.full(psi)
            psis[i] = res.psi
            q = q.replace_coord(i, Srd(GridFn(res.psi)))
            sweep_gain += coord.full(res.psi) - old
            eps_prev[i] = res.eps
            report.step_sizes.append(res.eps)
            if s.integral_method == TAYLOR:
                means[i] = _mean_1d(res.psi, q.coords[i][1])
        report.iterations = it + 1
        if s.integral_method == EXACT:
            trace_val = _trace_value(model, q, s)
        else:
            trace_val = trace_val + sweep_gain
        if not math.isfinite(trace_val):
            dump = {"iteration": it, "grad_norms": grad_norms, "means": conditional_means(q).tolist()}
            raise NonFiniteEnergyError(f"objective became non-finite: {json.dumps(dump)}")
        report.energy_trace.append(trace_val)
        # provisional; recomputed at the returned iterate after the loop
        report.final_grad_norms = list(grad_norms)
        if callback is not None:
            callback(it, q, report)
        crit = max(grad_norms) if s.stopping == "max" else min(grad_norms)
        if crit <= s.tol_delta:
            report.converged, report.stop_reason = True, "gradient"
            break
        tr = report.energy_trace
        if s.stall_tol > 0 and len(tr) > s.stall_window:
            gain = abs(tr[-1] - tr[-1 - s.stall_window])
            if gain <= s.stall_tol * max(1.0, abs(tr[-1])):
                report.converged, report.stop_reason = True, "stagnation"
                break

    # final gradient norms at the returned iterate
    for i in range(q.d):
        coord = _coord_problem(model, q, i, s)
        g, _ = coord.ambient_grad(q.psi(i))
        G, _ = _project(g, q.psi(i), B0w, B0, w)
        grad_norms[i] = float(np.linalg.norm(G)) / _relative_scale(coord, q.psi(i))
    report.final_grad_norms = list(grad_norms)
    crit = max(grad_norms) if s.stopping == "max" else min(grad_norms)
    report.converged = report.converged or crit <= s.tol_delta
    report.wall_time = time.perf_counter() - t0
    return q, report


def _mean_1d(psi: np.ndarray, dmap: DomainMap) -> float:
    m = psi.size
    w = trapezoid_weights(m)
    p = psi * psi
    return float(dmap.to_native(np.dot(w, grid_nodes(m) * p) / np.dot(w, p)))


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Bounds:
    lb: float
    ub: float
    kld_lb: float


def marginal_bounds(model: ModelSpec, q_low: FactorizedApprox, q_high: FactorizedApprox,
                    alpha_low: float, alpha_high: float, s: EnergySettings,
                    q_kld: FactorizedApprox | None = None, m_eval: int | None = None) -> Bounds:
    """Lower/upper bounds on ln m(x) from two fitted approximations.

    ``lb = ln E_{alpha_low}(q_low) / alpha_low`` and
    ``ub = ln E_{alpha_high}(q_high) / alpha_high``; ``kld_lb`` is
    ``H(f, q_kld)`` (``q_kld`` defaults to ``q_low``).  With the taylor
    method the ordering holds only up to the collapse error.
    """
    if not 0 < alpha_low < 1 < alpha_high:
        raise ValueError(f"need 0 < alpha_low < 1 < alpha_high, got {alpha_low}, {alpha_high}")
    lb = log_energy_alpha(model, q_low, s.with_(alpha=alpha_low, objective="alpha"), m_eval) / alpha_low
    ub = log_energy_alpha(model, q_high, s.with_(alpha=alpha_high, objective="alpha"), m_eval) / alpha_high
    kl = kld_objective(model, q_kld if q_kld is not None else q_low, s, m_eval)
    return Bounds(lb, ub, kl)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(q: FactorizedApprox, report: OptimReport, directory: str | Path,
                    bounds: Bounds | None = None, names: Sequence[str] | None = None) -> None:
    """One ``t,value`` CSV per coordinate plus ``report.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = list(names) if names else [f"theta{i}" for i in range(q.d)]
    for (psi, _), name in zip(q.coords, names):
        write_csv(psi.psi, d / f"psi_{name}.csv")
    payload = {
        "alpha": report.alpha,
        "iterations": report.iterations,
        "converged": report.converged,
        "energy_trace": report.energy_trace,
        "grad_norms": report.final_grad_norms,
        "bounds": asdict(bounds) if bounds else None,
        "coordinates": [{"name": n, "lo": dm.lo, "hi": dm.hi} for n, (_, dm) in zip(names, q.coords)],
    }
    (d / "report.json").write_text(json.dumps(payload, indent=2))


def load_checkpoint(directory: str | Path) -> tuple[FactorizedApprox, dict]:
    d = Path(directory)
    payload = json.loads((d / "report.json").read_text())
    coords = []
    for c in payload["coordinates"]:
        psi = read_csv(d / f"psi_{c['name']}.csv")
        coords.append((Srd.from_values(psi.values), DomainMap(c["lo"], c["hi"])))
    return FactorizedApprox(tuple(coords)), payload
