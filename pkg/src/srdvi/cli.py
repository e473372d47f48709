"""Command-line front end: ``srdvi <command> --config run.yaml [overrides]``.

Every run reads one YAML config, applies flag overrides, and writes a JSON
report (plus optional grid CSVs) into the output directory.  Exit status
is 0 when every fit converged, 2 when some fit stopped at the iteration
cap, and 1 on any error.
"""

from __future__ import annotations

import argparse
import copy
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import summaries
from .engine import EnergySettings, FactorizedApprox, OptimReport, conditional_means, fit, marginal_bounds
from .grid import DomainMap, GridFn, write_csv
from .models import data as datasets
from .models.lgp import LgpDensityModel, density_from_coefficients
from .models.linreg import LinRegModel, simulate_linreg
from .models.logreg import LogRegModel
from .models.normal_gamma import NormalGammaModel, kld_vb_normal_gamma

log = logging.getLogger("srdvi")

SCHEMA_VERSION = 1
COMMANDS = ("fit", "bounds", "density-estimate", "classify", "benchmark", "geometry-check")
SUITES = ("linreg-mse", "bounds-ordering")
EXIT_OK, EXIT_ERROR, EXIT_CAP = 0, 1, 2

ENGINE_KEYS = {f.name for f in fields(EnergySettings)}
SCHEMA: dict[str, Any] = {
    "seed": int,
    "model": {
        "type": str, "data": str, "dataset": str, "train_index": str, "test_data": str,
        "label_column": str, "synth": dict, "options": dict,
    },
    "engine": {k: object for k in ENGINE_KEYS},
    "bounds": {"alpha_low": float, "alpha_high": float, "evaluate": str},
    "classify": {"predictive": str, "n_draws": int},
    "benchmark": {"suite": str, "cells": list, "reps": int, "alpha": float, "workers": int},
    "output": {"dir": str, "emit_grids": bool},
}
MODEL_TYPES = ("normal_gamma", "linreg", "logreg", "lgp")
BOUND_ALPHAS = (0.9, 1.1)
# tensor-grid evaluation stays accurate up to about this many coordinates
MAX_EXACT_EVAL_DIM = 5
DEFAULT_CELLS = {"linreg-mse": [[25, 100]], "bounds-ordering": [[3, 10], [5, 20]]}


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"config error at {path}: {msg}")
        self.path = path


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def _check(node: Any, schema: Any, path: str) -> None:
    if isinstance(schema, dict):
        if not isinstance(node, dict):
            raise ConfigError(path or "<root>", f"expected a mapping, got {type(node).__name__}")
        for k, v in node.items():
            sub = f"{path}.{k}" if path else str(k)
            if k not in schema:
                raise ConfigError(sub, "unknown field")
            _check(v, schema[k], sub)
        return
    if schema is object or node is None:
        return
    if schema is float and isinstance(node, (int, float)) and not isinstance(node, bool):
        return
    if schema is int and isinstance(node, bool):
        raise ConfigError(path, "expected an integer")
    if not isinstance(node, schema):
        raise ConfigError(path, f"expected {schema.__name__}, got {type(node).__name__}")


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        bundled = Path(str(resources.files("srdvi") / "configs" / f"{p.stem}.yaml"))
        if p.suffix not in ("", ".yaml") or p.parent != Path(".") or not bundled.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        p = bundled
    cfg = yaml.safe_load(p.read_text()) or {}
    _check(cfg, SCHEMA, "")
    base = p.parent
    # data paths are relative to the config file
    model = cfg.get("model", {})
    for key in ("data", "train_index", "test_data"):
        if key in model and not os.path.isabs(model[key]):
            model[key] = str((base / model[key]).resolve())
    return cfg


def apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(cfg)
    eng = cfg.setdefault("engine", {})
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.alpha is not None:
        eng["alpha"] = args.alpha
    if args.n_basis is not None:
        eng["n_basis"] = args.n_basis
    if args.grid is not None:
        eng["grid_m"] = args.grid
    out = cfg.setdefault("output", {})
    if args.out is not None:
        out["dir"] = args.out
    if args.emit_grids:
        out["emit_grids"] = True
    if getattr(args, "suite", None) is not None:
        cfg.setdefault("benchmark", {})["suite"] = args.suite
    cfg.setdefault("seed", 0)
    out.setdefault("dir", "srdvi-out")
    out.setdefault("emit_grids", False)
    _check(cfg, SCHEMA, "")
    # store every engine field so the report fully determines the run
    cfg["engine"] = asdict(settings_from(cfg))
    return cfg


def settings_from(cfg: dict) -> EnergySettings:
    try:
        return EnergySettings(**cfg.get("engine", {}))
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        field = next((k for k in sorted(ENGINE_KEYS, key=len, reverse=True) if k in msg), None)
        raise ConfigError(f"engine.{field}" if field else "engine", msg) from exc


def rng_streams(seed: int, n: int) -> list[np.random.Generator]:
    """Independent counter-based streams derived from one 64-bit seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------


def _domains(opts: dict, key: str = "domains") -> list[DomainMap] | None:
    if key not in opts:
        return None
    return [DomainMap(lo, hi) for lo, hi in opts[key]]


def build_model(cfg: dict, rng: np.random.Generator):
    """Returns (model, extras) where extras carries data needed by some commands."""
    m = cfg.get("model")
    if not m or "type" not in m:
        raise ConfigError("model.type", "missing")
    kind = m["type"]
    if kind not in MODEL_TYPES:
        raise ConfigError("model.type", f"must be one of {MODEL_TYPES}, got {kind!r}")
    opts = dict(m.get("options", {}))
    synth = m.get("synth")
    extras: dict[str, Any] = {}
    if kind == "normal_gamma":
        if "data" in m:
            x = np.loadtxt(_existing(m["data"]), delimiter=",", skiprows=1, ndmin=1)
        elif synth:
            x = rng.normal(synth.get("mean", 0.0), synth.get("sd", 1.0), int(synth["n"]))
        else:
            raise ConfigError("model", "normal_gamma needs data or synth")
        model = NormalGammaModel(x, a0=opts.get("a0", 0.01), b0=opts.get("b0", 0.01), m0=opts.get("m0", 0.0),
                                 domains=_domains(opts))
        extras["data"] = x
    elif kind == "linreg":
        if "data" in m:
            raw = np.genfromtxt(_existing(m["data"]), delimiter=",", names=True)
            cols = [c for c in raw.dtype.names if c != "y"]
            X, y = np.column_stack([raw[c] for c in cols]), raw["y"]
        elif synth:
            X, y, beta = simulate_linreg(int(synth["d"]), int(synth["n"]), rng, opts.get("sigma2", 1.0))
            extras["beta_true"] = beta
        else:
            raise ConfigError("model", "linreg needs data or synth")
        model = LinRegModel(X, y, sigma2=opts.get("sigma2", 1.0), s0_sq=opts.get("s0_sq", 1e4),
                            domains=_domains(opts))
    elif kind == "logreg":
        if m.get("dataset") == "ionosphere":
            train, test = datasets.load_ionosphere(intercept=opts.get("intercept", False))
        elif "data" in m:
            full = datasets.load_labeled_csv(_existing(m["data"]), m.get("label_column", "label"))
            if "train_index" in m:
                idx = datasets.load_index_file(_existing(m["train_index"]))
                train, test = full.subset(idx), full.subset(np.setdiff1d(np.arange(len(full.y)), idx))
            elif "test_data" in m:
                train = full
                test = datasets.load_labeled_csv(_existing(m["test_data"]), m.get("label_column", "label"))
            else:
                train = test = full
        elif synth:
            train = datasets.separable_toy(rng, int(synth.get("n", 20)))
            test = datasets.separable_toy(rng, int(synth.get("n", 20)))
        else:
            raise ConfigError("model", "logreg needs dataset, data or synth")
        model = LogRegModel(train.X, train.y, s0_sq=opts.get("s0_sq", 1e4), domains=_domains(opts))
        extras.update(train=train, test=test)
    else:
        support = DomainMap(*opts["support"]) if "support" in opts else None
        if "data" in m:
            x = np.loadtxt(_existing(m["data"]), delimiter=",", skiprows=1, ndmin=1)
        elif synth:
            shape = synth.get("kind", "normal")
            n = int(synth["n"])
            if shape == "normal":
                lo, hi = (support.lo, support.hi) if support else (-np.inf, np.inf)
                x = datasets.normal_sample(n, rng, lo, hi)
            elif shape == "bimodal":
                x = datasets.bimodal_sample(n, rng)
            else:
                raise ConfigError("model.synth.kind", f"unknown sample kind {shape!r}")
            extras["truth"] = shape
        else:
            raise ConfigError("model", "lgp needs data or synth")
        if support is not None:
            x = x[(x >= support.lo) & (x <= support.hi)]
        model = LgpDensityModel(x, n_coef=opts.get("n_coef", 15), support=support,
                                s0_sq=opts.get("s0_sq", 1e4), domains=_domains(opts))
        extras["data"] = x
    return model, extras


def _existing(path: str) -> str:
    if not Path(path).exists():
        raise FileNotFoundError(f"data file not found: {path}")
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _fit_block(q: FactorizedApprox, rep: OptimReport, names, deterministic: bool) -> dict:
    d = rep.to_dict()
    if deterministic:
        d["wall_time"] = 0.0
    d["summaries"] = [{"param": n, **asdict(s)} for n, s in zip(names, summaries.summarize_all(q))]
    return d


def _names(model, d: int) -> list[str]:
    return list(model.param_names) if getattr(model, "param_names", None) else [f"theta{i}" for i in range(d)]


def cmd_fit(cfg, rng, out_dir, det) -> tuple[dict, int]:
    """Fit at the configured alpha; a ``bounds`` block adds evidence bounds."""
    if "bounds" in cfg:
        return _fit_with_bounds(cfg, rng, out_dir, det)
    model, _ = build_model(cfg, rng)
    s = settings_from(cfg)
    q, rep = fit(model, s)
    names = _names(model, model.dim)
    result = {"fit": _fit_block(q, rep, names, det)}
    _maybe_grids(cfg, out_dir, q, names)
    return result, EXIT_OK if rep.converged else EXIT_CAP


def cmd_bounds(cfg, rng, out_dir, det) -> tuple[dict, int]:
    return _fit_with_bounds(cfg, rng, out_dir, det)


def _fit_with_bounds(cfg, rng, out_dir, det) -> tuple[dict, int]:
    model, _ = build_model(cfg, rng)
    s = settings_from(cfg)
    b = cfg.get("bounds", {})
    a_lo, a_hi = b.get("alpha_low", BOUND_ALPHAS[0]), b.get("alpha_high", BOUND_ALPHAS[1])
    q_lo, r_lo = fit(model, s.with_(alpha=a_lo, objective="alpha"))
    q_hi, r_hi = fit(model, s.with_(alpha=a_hi, objective="alpha"))
    q_kl, r_kl = fit(model, s.with_(objective="kld"))
    names = _names(model, model.dim)
    method = b.get("evaluate", "auto")
    if method not in ("auto", "exact", "taylor"):
        raise ConfigError("bounds.evaluate", f"must be auto, exact or taylor, got {method!r}")
    if method == "auto":
        method = "exact" if model.dim <= MAX_EXACT_EVAL_DIM else "taylor"
    bounds = marginal_bounds(model, q_lo, q_hi, a_lo, a_hi, s.with_(integral_method=method), q_kld=q_kl)
    fits = {"low": _fit_block(q_lo, r_lo, names, det), "high": _fit_block(q_hi, r_hi, names, det),
            "kld": _fit_block(q_kl, r_kl, names, det)}
    result = {"bounds": asdict(bounds), "bounds_evaluation": method, "fits": fits,
              "converged": r_lo.converged and r_hi.converged and r_kl.converged}
    try:
        truth = model.exact_log_marginal()
        result["exact_log_marginal"] = truth
        result["scaled"] = {k: math.exp(v - truth) for k, v in asdict(bounds).items()}
    except NotImplementedError:
        pass
    if isinstance(model, NormalGammaModel):
        result["kld_vb_closed_form"] = asdict(kld_vb_normal_gamma(model))
    _maybe_grids(cfg, out_dir, q_lo, [f"{n}_low" for n in names])
    _maybe_grids(cfg, out_dir, q_hi, [f"{n}_high" for n in names])
    _maybe_grids(cfg, out_dir, q_kl, [f"{n}_kld" for n in names])
    return result, EXIT_OK if result["converged"] else EXIT_CAP


def cmd_density(cfg, rng, out_dir, det) -> tuple[dict, int]:
    model, extras = build_model(cfg, rng)
    if not isinstance(model, LgpDensityModel):
        raise ConfigError("model.type", "density-estimate needs an lgp model")
    s = settings_from(cfg)
    q, rep = fit(model, s)
    c_hat = conditional_means(q)
    dens = density_from_coefficients(model, c_hat)
    x = model.support.nodes(dens.m)
    result = {"fit": _fit_block(q, rep, _names(model, model.dim), det), "coefficients": c_hat.tolist(),
              "support": [model.support.lo, model.support.hi]}
    truth = extras.get("truth")
    if truth:
        true_pdf = _true_density(truth, x, model.support)
        result["hellinger"] = hellinger(dens.values, true_pdf, model.support)
    _atomic_write_text(out_dir / "density.csv",
                       "x,density\n" + "".join(f"{a:.17g},{b:.17g}\n" for a, b in zip(x, dens.values)))
    _maybe_grids(cfg, out_dir, q, _names(model, model.dim))
    return result, EXIT_OK if rep.converged else EXIT_CAP


def _true_density(kind: str, x: np.ndarray, support: DomainMap) -> np.ndarray:
    """Generating density restricted to the support and renormalized there."""
    from scipy.stats import norm

    from .grid import trapezoid_weights

    p = norm.pdf(x) if kind == "normal" else datasets.bimodal_pdf(x)
    return p / float(np.dot(trapezoid_weights(x.size) * support.width, p))


def hellinger(p: np.ndarray, q: np.ndarray, support: DomainMap) -> float:
    """Hellinger distance between two densities sampled on the support's grid."""
    from .grid import trapezoid_weights

    w = trapezoid_weights(p.size) * support.width
    bc = float(np.dot(w, np.sqrt(np.maximum(p, 0) * np.maximum(q, 0))))
    return math.sqrt(max(0.0, 1.0 - bc))


def cmd_classify(cfg, rng, out_dir, det) -> tuple[dict, int]:
    model, extras = build_model(cfg, rng)
    if not isinstance(model, LogRegModel):
        raise ConfigError("model.type", "classify needs a logreg model")
    s = settings_from(cfg)
    c = cfg.get("classify", {})
    train, test = extras["train"], extras["test"]
    q, rep = fit(model, s)
    report = summaries.classify(model, q, train.X, train.y, test.X, test.y,
                                predictive=c.get("predictive", "first_order"), rng=rng,
                                n_draws=c.get("n_draws", 100_000))
    result = {"fit": _fit_block(q, rep, _names(model, model.dim), det), "classification": report.to_dict()}
    return result, EXIT_OK if rep.converged else EXIT_CAP


def _bench_cell(suite: str, d: int, n: int, rep: int, seed_seq: np.random.SeedSequence,
                s: EnergySettings, alpha: float, det: bool) -> tuple[dict, bool]:
    """One replication; owns its own Philox stream so results do not depend on scheduling."""
    rng = np.random.Generator(np.random.Philox(seed_seq))
    X, y, _ = simulate_linreg(d, n, rng)
    model = LinRegModel(X, y)
    t0 = time.perf_counter()
    if suite == "linreg-mse":
        q, r = fit(model, s.with_(alpha=alpha, objective="alpha"))
        value = float(np.mean((conditional_means(q) - model.exact().mean) ** 2))
        ok = r.converged
    else:
        alpha = BOUND_ALPHAS[0]
        q_lo, r1 = fit(model, s.with_(alpha=BOUND_ALPHAS[0], objective="alpha"))
        q_hi, r2 = fit(model, s.with_(alpha=BOUND_ALPHAS[1], objective="alpha"))
        # ordering is only guaranteed for exactly evaluated energies
        bd = marginal_bounds(model, q_lo, q_hi, *BOUND_ALPHAS, s.with_(integral_method="exact"))
        truth = model.exact_log_marginal()
        value = float(bd.lb <= truth <= bd.ub)
        ok = r1.converged and r2.converged
    wall = 0.0 if det else time.perf_counter() - t0
    return {"d": d, "n": n, "rep": rep, "alpha": alpha, "mse_or_bound": value, "wall_seconds": wall}, ok


def cmd_benchmark(cfg, seed: int, out_dir, det) -> tuple[dict, int]:
    b = cfg.get("benchmark", {})
    suite = b.get("suite")
    if not suite:
        raise ConfigError("benchmark.suite", "a suite name is required")
    if suite not in SUITES:
        raise ConfigError("benchmark.suite", f"unknown suite {suite!r}; choose from {SUITES}")
    s = settings_from(cfg)
    reps = int(b.get("reps", 5))
    cells = b.get("cells", DEFAULT_CELLS[suite])
    alpha = float(b.get("alpha", s.alpha))
    jobs = [(suite, int(d), int(n), rep) for d, n in cells for rep in range(reps)]
    streams = np.random.SeedSequence(seed).spawn(len(jobs))
    args = [(*job, ss, s, alpha, det) for job, ss in zip(jobs, streams)]
    workers = int(b.get("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_bench_cell, *zip(*args)))
    else:
        results = [_bench_cell(*a) for a in args]
    rows = [r for r, _ in results]
    all_ok = all(ok for _, ok in results)
    csv = "d,n,rep,alpha,mse_or_bound,wall_seconds\n" + "".join(
        f"{r['d']},{r['n']},{r['rep']},{r['alpha']},{r['mse_or_bound']:.17g},{r['wall_seconds']:.6f}\n" for r in rows)
    _atomic_write_text(out_dir / f"benchmark_{suite}.csv", csv)
    return {"suite": suite, "rows": rows}, EXIT_OK if all_ok else EXIT_CAP


def cmd_geometry(cfg, rng, out_dir, det) -> tuple[dict, int]:
    from .geometry_check import run_geometry_suite

    s = settings_from(cfg)
    res = run_geometry_suite(rng, n_draws=500, m=s.grid_m, n_basis=s.n_basis)
    if det:
        res["seconds"] = 0.0
    return res, EXIT_OK if res["passed"] else EXIT_ERROR


def _maybe_grids(cfg, out_dir: Path, q: FactorizedApprox, names) -> None:
    if not cfg["output"].get("emit_grids"):
        return
    for (psi, _), n in zip(q.coords, names):
        tmp = out_dir / f".psi_{n}.csv.tmp"
        write_csv(GridFn(psi.values), tmp)
        os.replace(tmp, out_dir / f"psi_{n}.csv")


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srdvi", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="64-bit seed for all randomness")
    p.add_argument("--alpha", type=float)
    p.add_argument("--n-basis", type=int, dest="n_basis")
    p.add_argument("--grid", type=int, help="grid size M")
    p.add_argument("--out", help="output directory")
    p.add_argument("--suite", help="benchmark suite name")
    p.add_argument("--emit-grids", action="store_true", dest="emit_grids")
    p.add_argument("--deterministic", action="store_true", help="zero wall-clock fields for byte-identical output")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args)
        out_dir = Path(cfg["output"]["dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        seed = int(cfg["seed"])
        rng = rng_streams(seed, 1)[0]
        handlers = {"fit": cmd_fit, "bounds": cmd_bounds, "density-estimate": cmd_density,
                    "classify": cmd_classify, "geometry-check": cmd_geometry}
        if args.command == "benchmark":
            result, code = cmd_benchmark(cfg, seed, out_dir, args.deterministic)
        else:
            result, code = handlers[args.command](cfg, rng, out_dir, args.deterministic)
        report = {"schema_version": SCHEMA_VERSION, "command": args.command, "seed": seed,
                  "config": cfg, "exit_code": code, "result": result}
        _atomic_write_text(out_dir / "report.json", summaries.to_json(report) + "\n")
        return code
    except Exception as exc:  # report and map every failure to the error exit code
        print(f"srdvi: error: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
