"""Bayesian logistic regression with independent Gaussian priors."""

from __future__ import annotations

import math

import numpy as np

from ..engine import ModelSpec
from ..grid import DomainMap
from .linreg import BOX_HALF_WIDTH, conditional_sd_box

LOG_2PI = math.log(2 * math.pi)


def log_sigmoid(r):
    """ln g(r) = -ln(1 + e^-r), stable for large |r|."""
    return -np.logaddexp(0.0, -np.asarray(r, dtype=float))


def sigmoid(r):
    r = np.asarray(r, dtype=float)
    return np.exp(log_sigmoid(r))


class LogRegModel(ModelSpec):
    """P(y | x, theta) = g(y theta'x) with y in {-1, +1} and theta ~ N(0, s0_sq I).

    ``X`` holds one observation per row, shape (n, d).
    """

    def __init__(self, X, y, s0_sq: float = 100.0 ** 2, domains: list[DomainMap] | None = None,
                 half_width: float = BOX_HALF_WIDTH):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} labels")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if s0_sq <= 0:
            raise ValueError("s0_sq must be positive")
        self.X, self.y = X, y
        self.n, self.d_ = X.shape
        self.s0_sq = float(s0_sq)
        self._Xy = X * y[:, None]
        self._prior_const = -0.5 * self.d_ * (LOG_2PI + math.log(s0_sq))
        self.param_names = [f"theta{i}" for i in range(self.d_)]
        if domains is None:
            mode = self.mode()
            domains = conditional_sd_box(mode, self.hessian(mode), half_width)
        if len(domains) != self.d_:
            raise ValueError(f"need {self.d_} domains, got {len(domains)}")
        self.domains = list(domains)

    def log_likelihood(self, theta: np.ndarray) -> np.ndarray:
        return np.sum(log_sigmoid(np.asarray(theta, dtype=float) @ self._Xy.T), axis=-1)

    def log_joint(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return (self.log_likelihood(theta) + self._prior_const
                - 0.5 * np.sum(theta * theta, axis=-1) / self.s0_sq)

    def log_joint_slice(self, base, i, values):
        base = np.asarray(base, dtype=float)
        values = np.asarray(values, dtype=float)
        margin0 = self._Xy @ base - self._Xy[:, i] * base[i]
        margins = margin0[None, :] + values[:, None] * self._Xy[None, :, i]
        prior = float(base @ base) - base[i] ** 2 + values * values
        return np.sum(log_sigmoid(margins), axis=1) + self._prior_const - 0.5 * prior / self.s0_sq

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        """Negative Hessian of the log posterior."""
        p = sigmoid(self.X @ theta)
        wts = p * (1 - p)
        return (self.X * wts[:, None]).T @ self.X + np.eye(self.d_) / self.s0_sq

    def mode(self, max_iter: int = 100, tol: float = 1e-10) -> np.ndarray:
        """Posterior mode by damped Newton iterations (the log posterior is concave)."""
        theta = np.zeros(self.d_)
        f = float(self.log_joint(theta))
        for _ in range(max_iter):
            grad = self._Xy.T @ sigmoid(-(self._Xy @ theta)) - theta / self.s0_sq
            step = np.linalg.solve(self.hessian(theta), grad)
            t = 1.0
            while t > 1e-10:
                cand = theta + t * step
                fc = float(self.log_joint(cand))
                if fc >= f:
                    break
                t *= 0.5
            theta, f_old, f = cand, f, fc
            if abs(f - f_old) <= tol * max(1.0, abs(f)) and np.max(np.abs(t * step)) < 1e-8:
                break
        return theta

    def predict_proba(self, theta: np.ndarray, X: np.ndarray | None = None) -> np.ndarray:
        """P(y = +1 | x, theta)."""
        X = self.X if X is None else np.atleast_2d(X)
        return sigmoid(X @ np.asarray(theta, dtype=float))
