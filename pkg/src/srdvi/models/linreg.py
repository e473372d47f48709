"""Bayesian linear regression with a Gaussian prior and known noise variance."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..engine import ModelSpec
from ..grid import DomainMap, GridFn

LOG_2PI = math.log(2 * math.pi)
BOX_HALF_WIDTH = 8.0


def conditional_sd_box(mode: np.ndarray, hess: np.ndarray, half_width: float = BOX_HALF_WIDTH) -> list[DomainMap]:
    """Boxes ``mode_i +- half_width / sqrt(H_ii)`` from the negative log-posterior Hessian."""
    sd = 1.0 / np.sqrt(np.diag(hess))
    return [DomainMap(m - half_width * s, m + half_width * s) for m, s in zip(mode, sd)]


@dataclass(frozen=True)
class GaussianPosterior:
    mean: np.ndarray
    cov: np.ndarray
    log_marginal: float


class LinRegModel(ModelSpec):
    """y = X beta + e, e ~ N(0, sigma2 I), beta ~ N(0, s0_sq I).  X has shape (n, d)."""

    def __init__(self, X, y, sigma2: float = 1.0, s0_sq: float = 100.0 ** 2,
                 domains: list[DomainMap] | None = None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if sigma2 <= 0 or s0_sq <= 0:
            raise ValueError("sigma2 and s0_sq must be positive")
        self.X, self.y = X, y
        self.sigma2, self.s0_sq = float(sigma2), float(s0_sq)
        self.n, self.d_ = X.shape
        self._col_sq = np.einsum("ij,ij->j", X, X)
        self._norm_const = (-0.5 * self.n * (LOG_2PI + math.log(sigma2))
                            - 0.5 * self.d_ * (LOG_2PI + math.log(s0_sq)))
        self.param_names = [f"beta{i}" for i in range(self.d_)]
        if domains is None:
            post = self.exact()
            domains = conditional_sd_box(post.mean, self.hessian())
        if len(domains) != self.d_:
            raise ValueError(f"need {self.d_} domains, got {len(domains)}")
        self.domains = list(domains)

    def hessian(self) -> np.ndarray:
        """Posterior precision X'X / sigma2 + I / s0_sq."""
        return self.X.T @ self.X / self.sigma2 + np.eye(self.d_) / self.s0_sq

    def log_joint(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        resid = self.y - theta @ self.X.T
        return (self._norm_const - 0.5 * np.sum(resid * resid, axis=-1) / self.sigma2
                - 0.5 * np.sum(theta * theta, axis=-1) / self.s0_sq)

    def log_joint_slice(self, base, i, values):
        base = np.asarray(base, dtype=float)
        values = np.asarray(values, dtype=float)
        r = self.y - self.X @ base + self.X[:, i] * base[i]
        xr = float(self.X[:, i] @ r)
        ss = float(r @ r) - 2 * values * xr + values * values * self._col_sq[i]
        prior = float(base @ base) - base[i] ** 2 + values * values
        return self._norm_const - 0.5 * ss / self.sigma2 - 0.5 * prior / self.s0_sq

    def exact(self) -> GaussianPosterior:
        H = self.hessian()
        c = linalg.cho_factor(H, lower=True)
        mean = linalg.cho_solve(c, self.X.T @ self.y / self.sigma2)
        cov = linalg.cho_solve(c, np.eye(self.d_))
        return GaussianPosterior(mean, 0.5 * (cov + cov.T), self._log_marginal())

    def _log_marginal(self) -> float:
        # y ~ N(0, sigma2 I_n + s0_sq X X'), evaluated through the d x d precision
        # by the matrix determinant lemma and Woodbury identity
        H = self.hessian()
        c = linalg.cho_factor(H, lower=True)
        logdet_h = 2 * float(np.sum(np.log(np.diag(c[0]))))
        b = self.X.T @ self.y / self.sigma2
        quad = float(self.y @ self.y) / self.sigma2 - float(b @ linalg.cho_solve(c, b))
        logdet_sigma = self.n * math.log(self.sigma2) + self.d_ * math.log(self.s0_sq) + logdet_h
        return -0.5 * (self.n * LOG_2PI + logdet_sigma + quad)

    def exact_log_marginal(self) -> float:
        return self._log_marginal()

    def exact_posterior_grid(self, i: int, m: int) -> GridFn:
        post = self.exact()
        sd = math.sqrt(post.cov[i, i])
        x = self.domains[i].nodes(m)
        return GridFn(np.exp(-0.5 * ((x - post.mean[i]) / sd) ** 2) / (sd * math.sqrt(2 * math.pi)))


def linreg_exact(model: LinRegModel) -> GaussianPosterior:
    return model.exact()


def simulate_linreg(d: int, n: int, rng: np.random.Generator, sigma2: float = 1.0):
    """Design and coefficients from U(-1, 1), noise N(0, sigma2)."""
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    beta = rng.uniform(-1.0, 1.0, size=d)
    y = X @ beta + math.sqrt(sigma2) * rng.standard_normal(n)
    return X, y, beta
