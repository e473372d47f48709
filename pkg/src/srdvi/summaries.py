"""Posterior summaries, classification metrics and Bayes-factor bounds for fitted approximations."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .engine import Bounds, FactorizedApprox
from .grid import DomainMap, grid_nodes, trapezoid_weights
from .models.logreg import LogRegModel, log_sigmoid, sigmoid
from .sphere import Srd

log = logging.getLogger(__name__)

SUMMARY_KINDS = ("MAP", "PMEA", "PMED")


@dataclass(frozen=True)
class PosteriorSummary:
    map: float
    mean: float
    median: float
    ci_lo: float
    ci_hi: float


def _cdf(p: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid of a unit-grid density, normalized to end at 1."""
    h = 1.0 / (p.size - 1)
    c = np.concatenate([[0.0], np.cumsum(0.5 * h * (p[1:] + p[:-1]))])
    return c / c[-1]


def _quantile(cdf: np.ndarray, t: np.ndarray, u: float) -> float:
    """Linear interpolation of the inverse CDF; flat stretches resolve to their left end."""
    k = int(np.searchsorted(cdf, u, side="left"))
    if k == 0:
        return float(t[0])
    if k >= cdf.size:
        return float(t[-1])
    c0, c1 = cdf[k - 1], cdf[k]
    frac = 0.0 if c1 == c0 else (u - c0) / (c1 - c0)
    return float(t[k - 1] + frac * (t[k] - t[k - 1]))


def summarize(psi: Srd, dmap: DomainMap, level: float = 0.95) -> PosteriorSummary:
    """MAP, mean, median and equal-tailed credible interval in native units."""
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    p = psi.values ** 2
    t = grid_nodes(psi.m)
    w = trapezoid_weights(psi.m)
    # argmax returns the first maximizer, i.e. the smallest theta
    t_map = float(t[int(np.argmax(p))])
    t_mean = float(np.dot(w, t * p) / np.dot(w, p))
    cdf = _cdf(p)
    tail = 0.5 * (1 - level)
    q = [_quantile(cdf, t, u) for u in (0.5, tail, 1 - tail)]
    to = lambda u: float(dmap.to_native(u))  # noqa: E731
    return PosteriorSummary(to(t_map), to(t_mean), to(q[0]), to(q[1]), to(q[2]))


def summarize_all(q: FactorizedApprox, level: float = 0.95) -> list[PosteriorSummary]:
    return [summarize(psi, dmap, level) for psi, dmap in q.coords]


def point_estimates(q: FactorizedApprox) -> dict[str, np.ndarray]:
    sums = summarize_all(q)
    return {
        "MAP": np.array([s.map for s in sums]),
        "PMEA": np.array([s.mean for s in sums]),
        "PMED": np.array([s.median for s in sums]),
    }


def sample_factorized(q: FactorizedApprox, n: int, rng: np.random.Generator) -> np.ndarray:
    """Independent draws from each factor by inverse-CDF sampling on the grid, shape (n, d)."""
    t = grid_nodes(q.m)
    out = np.empty((n, q.d))
    for i, (psi, dmap) in enumerate(q.coords):
        cdf = _cdf(psi.values ** 2)
        # strictly increasing copy so interp is well defined on flat stretches
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        out[:, i] = dmap.to_native(np.interp(rng.random(n), cdf[keep], t[keep]))
    return out


def posterior_predictive_prob(model: LogRegModel, q: FactorizedApprox, x_new, method: str = "first_order",
                              n_draws: int = 100_000, rng: np.random.Generator | None = None) -> np.ndarray:
    """P(y = +1 | x_new) under q.

    ``first_order`` evaluates g at the coordinate means; ``mc`` averages g
    over seeded draws from the factorized q.
    """
    X = np.atleast_2d(np.asarray(x_new, dtype=float))
    if method == "first_order":
        mu = np.array([s.mean for s in summarize_all(q)])
        return sigmoid(X @ mu)
    if method == "mc":
        if rng is None:
            raise ValueError("Monte Carlo predictive needs an explicit rng")
        out = np.zeros(len(X))
        done = 0
        while done < n_draws:
            k = min(10_000, n_draws - done)
            theta = sample_factorized(q, k, rng)
            out += sigmoid(theta @ X.T).sum(axis=0)
            done += k
        return out / n_draws
    raise ValueError(f"unknown predictive method {method!r}")


def choose_cutoff(p_train: np.ndarray, y_train: np.ndarray) -> float:
    """Threshold minimizing training error of the rule ``p >= c -> +1``.

    Candidates are the distinct training probabilities plus 0.5; ties go to
    the candidate closest to 0.5.
    """
    if np.unique(y_train).size < 2:
        log.warning("training labels contain a single class; using cutoff 0.5")
        return 0.5
    cands = np.unique(np.concatenate([p_train, [0.5]]))
    pred = np.where(p_train[None, :] >= cands[:, None], 1.0, -1.0)
    err = np.mean(pred != y_train[None, :], axis=1)
    best = np.flatnonzero(err == err.min())
    return float(cands[best[np.argmin(np.abs(cands[best] - 0.5))]])


@dataclass
class SummaryScore:
    accuracy: float
    alpl: float
    accuracy_at_half: float
    confusion: dict[str, int]


@dataclass
class ClassifReport:
    cutoff: float
    scores: dict[str, SummaryScore] = field(default_factory=dict)
    predictive: str = "first_order"

    @property
    def accuracy(self) -> float:
        return self.scores["PPRED"].accuracy

    @property
    def alpl(self) -> float:
        return self.scores["PMEA"].alpl

    def to_dict(self) -> dict:
        return {"cutoff": self.cutoff, "predictive": self.predictive,
                "scores": {k: asdict(v) for k, v in self.scores.items()}}


def _score(p_test: np.ndarray, y_test: np.ndarray, cutoff: float, loglik: np.ndarray) -> SummaryScore:
    pred = np.where(p_test >= cutoff, 1.0, -1.0)
    pred_half = np.where(p_test >= 0.5, 1.0, -1.0)
    conf = {
        "pos_as_pos": int(np.sum((y_test == 1) & (pred == 1))),
        "pos_as_neg": int(np.sum((y_test == 1) & (pred == -1))),
        "neg_as_pos": int(np.sum((y_test == -1) & (pred == 1))),
        "neg_as_neg": int(np.sum((y_test == -1) & (pred == -1))),
    }
    return SummaryScore(100.0 * float(np.mean(pred == y_test)), float(np.mean(loglik)),
                        100.0 * float(np.mean(pred_half == y_test)), conf)


def classify(model: LogRegModel, q: FactorizedApprox, X_train, y_train, X_test, y_test,
             predictive: str = "first_order", rng: np.random.Generator | None = None,
             n_draws: int = 100_000) -> ClassifReport:
    """Test accuracy and ALPL for the MAP, PMEA, PMED and PPRED summaries.

    One cutoff, chosen on the training posterior-predictive probabilities,
    is shared by every summary.  ALPL is the plug-in ln P(y | x, theta_hat)
    for point summaries and ln of the predictive probability for PPRED.
    """
    X_train, X_test = np.atleast_2d(X_train), np.atleast_2d(X_test)
    y_train, y_test = np.asarray(y_train, float), np.asarray(y_test, float)
    pp_train = posterior_predictive_prob(model, q, X_train, predictive, n_draws, rng)
    cutoff = choose_cutoff(pp_train, y_train)
    report = ClassifReport(cutoff, predictive=predictive)
    for name, theta in point_estimates(q).items():
        r = X_test @ theta
        report.scores[name] = _score(sigmoid(r), y_test, cutoff, log_sigmoid(y_test * r))
    pp = posterior_predictive_prob(model, q, X_test, predictive, n_draws, rng)
    ll = np.log(np.where(y_test > 0, pp, 1 - pp))
    report.scores["PPRED"] = _score(pp, y_test, cutoff, ll)
    return report


def bayes_factor_bounds(b1: Bounds, b2: Bounds) -> tuple[float, float]:
    """Interval for m1 / m2 from evidence bounds of two models."""
    return math.exp(b1.lb - b2.ub), math.exp(b1.ub - b2.lb)


def format_table(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    """Aligned-column text rendering of a list of flat dicts."""
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())

    def cell(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    body = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[k]) for b in body)) for k, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(wd) for c, wd in zip(columns, widths))]
    lines += ["  ".join(v.rjust(wd) for v, wd in zip(b, widths)) for b in body]
    return "\n".join(lines)


def summaries_table(q: FactorizedApprox, names: Sequence[str] | None = None, level: float = 0.95) -> str:
    names = list(names) if names else [f"theta{i}" for i in range(q.d)]
    rows = [{"param": n, **asdict(s)} for n, s in zip(names, summarize_all(q, level))]
    return format_table(rows)


def classif_table(report: ClassifReport) -> str:
    rows = [{"summary": k, "accuracy": v.accuracy, "alpl": v.alpl, "acc@0.5": v.accuracy_at_half}
            for k, v in report.scores.items()]
    return f"cutoff = {report.cutoff:.6g}\n" + format_table(rows)


def to_json(obj) -> str:
    """Deterministic JSON (sorted keys, fixed float repr)."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")
