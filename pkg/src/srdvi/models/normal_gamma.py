"""Normal model with unknown mean and precision under a conjugate normal-gamma prior.

    x_j | mu, tau ~ N(mu, 1/tau)
    mu | tau      ~ N(m0, 1/tau)
    tau           ~ Ga(a0, b0)      (shape, rate)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from ..engine import FactorizedApprox, ModelSpec
from ..grid import DomainMap, GridFn

LOG_2PI = math.log(2 * math.pi)
# posterior tail mass left outside the default box, per coordinate
BOX_TAIL = 1e-9


@dataclass(frozen=True)
class NormalGammaPosterior:
    """Conjugate posterior NG(mu_n, lam_n, a_n, b_n)."""

    mu_n: float
    lam_n: float
    a_n: float
    b_n: float

    def tau_marginal(self):
        return stats.gamma(self.a_n, scale=1.0 / self.b_n)

    def mu_marginal(self):
        return stats.t(2 * self.a_n, loc=self.mu_n, scale=math.sqrt(self.b_n / (self.a_n * self.lam_n)))


class NormalGammaModel(ModelSpec):
    """Parameters are ordered (mu, tau)."""

    param_names = ["mu", "tau"]

    def __init__(self, data, a0: float = 0.01, b0: float = 0.01, m0: float = 0.0,
                 domains: list[DomainMap] | None = None):
        x = np.asarray(data, dtype=float).ravel()
        if not np.all(np.isfinite(x)):
            raise ValueError("data must be finite")
        if a0 <= 0 or b0 <= 0:
            raise ValueError("a0 and b0 must be positive")
        self.x = x
        self.n = x.size
        self.a0, self.b0, self.m0 = float(a0), float(b0), float(m0)
        self._sum = float(x.sum())
        self._sumsq = float(np.dot(x, x))
        self.domains = list(domains) if domains is not None else self.default_domains()
        if len(self.domains) != 2:
            raise ValueError("normal-gamma model needs two domains")
        if self.domains[1].lo <= 0:
            raise ValueError("tau domain must lie in (0, inf)")

    def posterior(self) -> NormalGammaPosterior:
        n, xbar = self.n, (self._sum / self.n if self.n else 0.0)
        lam_n = 1.0 + n
        mu_n = (self.m0 + n * xbar) / lam_n
        ss = self._sumsq - n * xbar * xbar
        b_n = self.b0 + 0.5 * ss + n * (xbar - self.m0) ** 2 / (2 * lam_n)
        return NormalGammaPosterior(mu_n, lam_n, self.a0 + n / 2, b_n)

    def default_domains(self) -> list[DomainMap]:
        """Posterior mean +- 6 standard errors, widened to the 1e-9 conjugate tail quantiles.

        The tau box starts at the lower 1e-9 quantile (never below 1e-4):
        near tau = 0 the log joint dives towards -inf, which wrecks the KLD
        objective's conditioning while adding no posterior mass.
        """
        post = self.posterior()
        mu_d, tau_d = post.mu_marginal(), post.tau_marginal()
        mu_se = mu_d.std() if post.a_n > 1 else math.sqrt(post.b_n / (post.a_n * post.lam_n))
        mu_lo = min(post.mu_n - 6 * mu_se, mu_d.ppf(BOX_TAIL))
        mu_hi = max(post.mu_n + 6 * mu_se, mu_d.isf(BOX_TAIL))
        tau_hat = post.a_n / post.b_n
        tau_se = math.sqrt(post.a_n) / post.b_n
        tau_hi = max(tau_hat + 6 * tau_se, tau_d.isf(BOX_TAIL))
        tau_lo = max(1e-4, float(tau_d.ppf(BOX_TAIL)))
        return [DomainMap(mu_lo, mu_hi), DomainMap(tau_lo, tau_hi)]

    def log_joint(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        mu, tau = theta[..., 0], theta[..., 1]
        if np.any(tau <= 0):
            raise ValueError("tau must be positive")
        n = self.n
        # sum_j (x_j - mu)^2 from sufficient statistics
        ss = self._sumsq - 2 * mu * self._sum + n * mu * mu
        log_tau = np.log(tau)
        lik = 0.5 * n * (log_tau - LOG_2PI) - 0.5 * tau * ss
        prior_mu = 0.5 * (log_tau - LOG_2PI) - 0.5 * tau * (mu - self.m0) ** 2
        prior_tau = (self.a0 * math.log(self.b0) - special.gammaln(self.a0)
                     + (self.a0 - 1) * log_tau - self.b0 * tau)
        return lik + prior_mu + prior_tau

    def exact_log_marginal(self) -> float:
        post = self.posterior()
        return float(special.gammaln(post.a_n) - special.gammaln(self.a0)
                     + self.a0 * math.log(self.b0) - post.a_n * math.log(post.b_n)
                     + 0.5 * math.log(1.0 / post.lam_n) - 0.5 * self.n * LOG_2PI)

    def exact_posterior_grid(self, i: int, m: int) -> GridFn:
        post = self.posterior()
        dist = post.mu_marginal() if i == 0 else post.tau_marginal()
        return GridFn(dist.pdf(self.domains[i].nodes(m)))

    def exact_posterior_means(self) -> np.ndarray:
        post = self.posterior()
        return np.array([post.mu_n, post.a_n / post.b_n])


def normal_gamma_exact(model: NormalGammaModel, m: int = 1023) -> dict:
    """Conjugate log marginal, its box-quadrature cross-check, and grid posteriors."""
    from ..engine import grid_log_marginal, grid_posterior

    exact = model.exact_log_marginal()
    quad = grid_log_marginal(model, m)
    joint = grid_posterior(model, m)
    return {
        "log_marginal": exact,
        "log_marginal_quadrature": quad,
        "joint_unit": joint,
        "mu": model.exact_posterior_grid(0, m),
        "tau": model.exact_posterior_grid(1, m),
    }


@dataclass(frozen=True)
class KldVbResult:
    mu0: float
    lam0: float
    a: float
    b: float
    iterations: int

    def approx(self, domains: list[DomainMap], m: int) -> FactorizedApprox:
        """The Gaussian x Gamma factorization truncated to ``domains`` on the grid."""
        qmu = stats.norm(self.mu0, 1 / math.sqrt(self.lam0))
        qtau = stats.gamma(self.a, scale=1 / self.b)
        return FactorizedApprox.from_native_pdfs([qmu.pdf, qtau.pdf], domains, m)


def kld_vb_normal_gamma(model: NormalGammaModel, max_iter: int = 1000, tol: float = 1e-12) -> KldVbResult:
    """Closed-form coordinate ascent for q(mu) q(tau) = N(mu0, 1/lam0) Ga(a, b).

    The mu block is updated first, using E[tau] from the previous sweep.
    """
    n, m0 = model.n, model.m0
    x = model.x
    mu0 = (m0 + model._sum) / (1 + n)
    a = model.a0 + (n + 1) / 2
    b = model.b0 + 0.5 * (model._sumsq - model._sum ** 2 / max(n, 1)) + 1.0  # starting guess
    lam0 = (1 + n) * a / b
    for it in range(1, max_iter + 1):
        e_tau = a / b
        lam_new = (1 + n) * e_tau
        # E_mu[ sum (x_j - mu)^2 + (mu - m0)^2 ]
        e_ss = float(np.sum((x - mu0) ** 2)) + (mu0 - m0) ** 2 + (n + 1) / lam_new
        b_new = model.b0 + 0.5 * e_ss
        done = abs(lam_new - lam0) <= tol * lam0 and abs(b_new - b) <= tol * b
        lam0, b = lam_new, b_new
        if done:
            return KldVbResult(mu0, lam0, a, b, it)
    return KldVbResult(mu0, lam0, a, b, max_iter)
