"""Density estimation with a logistic transform of a B-spline expansion.

f(x | c) = exp(g(x)) / int exp(g),  g(x) = sum_i c_i b_i(x),  c_i ~ N(0, s0_sq).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import BSpline
from scipy.special import logsumexp

from ..engine import ModelSpec
from ..grid import DomainMap, GridFn, trapezoid_weights
from .linreg import BOX_HALF_WIDTH, conditional_sd_box

LOG_2PI = math.log(2 * math.pi)


def open_uniform_knots(d: int, order: int, support: DomainMap) -> np.ndarray:
    """Knot vector with ``order``-fold end knots and ``d - order`` equispaced interior knots."""
    if d < order:
        raise ValueError(f"need at least {order} coefficients for order {order}, got {d}")
    interior = np.linspace(support.lo, support.hi, d - order + 2)[1:-1]
    return np.concatenate([[support.lo] * order, interior, [support.hi] * order])


def bspline_design(x: np.ndarray, d: int, order: int, support: DomainMap) -> np.ndarray:
    """Values of the ``d`` B-splines at ``x``, shape (len(x), d)."""
    knots = open_uniform_knots(d, order, support)
    x = np.clip(np.asarray(x, dtype=float), support.lo, support.hi)
    return BSpline.design_matrix(x, knots, order - 1).toarray()


def bspline_basis(d: int, support: DomainMap, order: int = 4, m: int = 1023) -> list[GridFn]:
    """The B-splines sampled on the native grid of ``support``."""
    B = bspline_design(support.nodes(m), d, order, support)
    return [GridFn(B[:, k]) for k in range(d)]


class LgpDensityModel(ModelSpec):
    """Coefficients ``c`` of the spline expansion are the model parameters."""

    def __init__(self, sample, n_coef: int = 15, support: DomainMap | None = None,
                 spline_order: int = 4, s0_sq: float = 100.0 ** 2, grid_m: int = 1023,
                 domains: list[DomainMap] | None = None, half_width: float = BOX_HALF_WIDTH):
        x = np.asarray(sample, dtype=float).ravel()
        if support is None:
            pad = 0.1 * (x.max() - x.min())
            support = DomainMap(x.min() - pad, x.max() + pad)
        if np.any(x < support.lo) or np.any(x > support.hi):
            raise ValueError("sample lies outside the support")
        if n_coef < spline_order:
            raise ValueError(f"n_coef must be >= spline_order ({spline_order})")
        self.sample = x
        self.n = x.size
        self.support = support
        self.order = spline_order
        self.d_ = n_coef
        self.s0_sq = float(s0_sq)
        self.param_names = [f"c{i}" for i in range(n_coef)]
        self._grid_x = support.nodes(grid_m)
        self._grid_B = bspline_design(self._grid_x, n_coef, spline_order, support)
        # log of trapezoid weights on the native support, used for ln int exp(g)
        self._log_w = np.log(trapezoid_weights(grid_m) * support.width)
        # the likelihood only needs sum_j b(x_j)
        self._data_sum = bspline_design(x, n_coef, spline_order, support).sum(axis=0)
        self._prior_const = -0.5 * n_coef * (LOG_2PI + math.log(s0_sq))
        if domains is None:
            mode = self.mode()
            domains = conditional_sd_box(mode, self.hessian(mode), half_width)
        self.domains = list(domains)

    def log_normalizer(self, c: np.ndarray) -> np.ndarray:
        g = np.asarray(c, dtype=float) @ self._grid_B.T
        return logsumexp(g + self._log_w, axis=-1)

    def log_joint(self, theta: np.ndarray) -> np.ndarray:
        c = np.asarray(theta, dtype=float)
        return (c @ self._data_sum - self.n * self.log_normalizer(c)
                + self._prior_const - 0.5 * np.sum(c * c, axis=-1) / self.s0_sq)

    def log_joint_slice(self, base, i, values):
        base = np.asarray(base, dtype=float)
        values = np.asarray(values, dtype=float)
        b_i = self._grid_B[:, i]
        a0 = self._grid_B @ base - b_i * base[i] + self._log_w
        # b_i has local support, so only those grid rows depend on values
        on = b_i > 0
        lse_off = logsumexp(a0[~on]) if np.any(~on) else -np.inf
        A = a0[on][None, :] + values[:, None] * b_i[on][None, :]
        top = np.maximum(A.max(axis=1), lse_off)
        lz = top + np.log(np.exp(lse_off - top) + np.exp(A - top[:, None]).sum(axis=1))
        lin = float(base @ self._data_sum) - base[i] * self._data_sum[i] + values * self._data_sum[i]
        prior = float(base @ base) - base[i] ** 2 + values * values
        return lin - self.n * lz + self._prior_const - 0.5 * prior / self.s0_sq

    def density(self, c: np.ndarray) -> np.ndarray:
        """f(x | c) on the native support grid."""
        g = self._grid_B @ np.asarray(c, dtype=float)
        return np.exp(g - self.log_normalizer(c))

    def hessian(self, c: np.ndarray) -> np.ndarray:
        """Negative Hessian of the log posterior: n Cov_f[b] + I / s0_sq."""
        f = self.density(c)
        w = np.exp(self._log_w)
        mean_b = (w * f) @ self._grid_B
        second = (self._grid_B * (w * f)[:, None]).T @ self._grid_B
        return self.n * (second - np.outer(mean_b, mean_b)) + np.eye(self.d_) / self.s0_sq

    def mode(self, max_iter: int = 200, tol: float = 1e-10) -> np.ndarray:
        c = np.zeros(self.d_)
        f = float(self.log_joint(c))
        for _ in range(max_iter):
            dens = self.density(c)
            w = np.exp(self._log_w)
            grad = self._data_sum - self.n * ((w * dens) @ self._grid_B) - c / self.s0_sq
            step = np.linalg.solve(self.hessian(c), grad)
            t = 1.0
            while t > 1e-10:
                cand = c + t * step
                fc = float(self.log_joint(cand))
                if fc >= f:
                    break
                t *= 0.5
            c, f_old, f = cand, f, fc
            if abs(f - f_old) <= tol * max(1.0, abs(f)) and np.max(np.abs(t * step)) < 1e-8:
                break
        return c


def density_from_coefficients(model: LgpDensityModel, c: np.ndarray) -> GridFn:
    """Normalized density estimate on the model's support grid."""
    return GridFn(model.density(c))
