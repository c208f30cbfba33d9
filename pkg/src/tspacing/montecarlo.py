"""Replicated experiments: calibration, power, and noise-level diagnostics.

Every replica draws from its own generator seeded by ``(seed, gamma index,
replica index)``, so a replica's row does not depend on how many replicas
run, in which order, or in how many processes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import DegenerateLambda2, SpacingError
from .manifold import Sphere
from .models import FieldModel, LAMBDA0_UNIT, make_model, synthesize_observation
from .optimize import find_maxima
from .stattest import estimate_sigma, spacing_pvalue, t_spacing_pvalue

log = logging.getLogger(__name__)

CSV_COLUMNS = ["gamma", "replica", "lambda1", "lambda2", "p_spacing", "p_tspacing",
               "sigma_hat", "dist_norm", "flags"]


def default_t0(model: FieldModel) -> np.ndarray:
    """North pole of the sphere, origin of the torus, ``(pi/4, e1, e2)`` on the Stiefel product."""
    M = model.manifold
    if isinstance(M, Sphere):
        return np.eye(M.n)[-1]
    if model.name == "twospiked":
        e = np.eye(model.n)
        return M.join(np.pi / 4, e[0], e[1])
    return np.zeros(M.ambient_dim)


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=lambda: {"model": "tensor", "n": 3, "k": 3})
    gamma_grid: list = field(default_factory=lambda: [0.0])
    replicas: int = 1000
    sigma_true: float = 1.0
    sigma_known: bool = True
    seed: int = 0
    fixed_t0: bool = True
    lambda0_unit: float = LAMBDA0_UNIT
    starts: int | None = None
    grad_tol: float = 1e-8
    pole_radius: float = 1e-3
    max_iters: int = 500
    workers: int = 1
    output: str | None = None

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if not self.gamma_grid:
            raise ValueError("gamma grid is empty")
        if self.sigma_true <= 0:
            raise ValueError("sigma must be positive")
        self.gamma_grid = [float(g) for g in self.gamma_grid]

    @property
    def optimizer_options(self) -> dict:
        return {"starts": self.starts, "grad_tol": self.grad_tol,
                "pole_radius": self.pole_radius, "max_iters": self.max_iters}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ReplicaResult:
    gamma: float
    replica: int
    lambda1: float = math.nan
    lambda2: float = math.nan
    p_spacing: float = math.nan
    p_tspacing: float = math.nan
    sigma_hat: float = math.nan
    dist_norm: float = math.nan
    flags: list = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(f.startswith("failed") for f in self.flags)

    def csv_row(self) -> list:
        def num(x):
            return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))

        return [repr(self.gamma), str(self.replica), num(self.lambda1), num(self.lambda2),
                num(self.p_spacing), num(self.p_tspacing), num(self.sigma_hat),
                num(self.dist_norm), ";".join(self.flags)]


def replica_rng(seed: int, gamma_index: int, replica: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(gamma_index, replica)))


def normalized_distance(model: FieldModel, t0, t1) -> float:
    """``(1 - <t0, t1>) / 2`` on ``S^2`` (uniform on (0,1) for a uniform ``t1``); NaN elsewhere."""
    if isinstance(model.manifold, Sphere) and model.manifold.n == 3:
        return float((1.0 - np.dot(t0, t1)) / 2.0)
    return math.nan


def run_replica(config: ExperimentConfig, gamma_index: int, replica: int) -> ReplicaResult:
    """One synthetic observation through the whole pipeline; errors become flags."""
    model = make_model(config.model)
    gamma = config.gamma_grid[gamma_index]
    rng = replica_rng(config.seed, gamma_index, replica)
    res = ReplicaResult(gamma=gamma, replica=replica)
    t0 = default_t0(model) if config.fixed_t0 else model.manifold.random_point(rng)
    sigma = config.sigma_true
    try:
        for attempt in range(3):
            obs = synthesize_observation(model, gamma, sigma, t0, rng,
                                         lambda0=config.lambda0_unit * gamma * sigma)
            try:
                rec = find_maxima(model, obs.payload, rng=rng, **config.optimizer_options)
                break
            except DegenerateLambda2:
                # a null event; draw a fresh observation
                if attempt == 2:
                    raise
                res.flags.append("resampled")
        res.lambda1, res.lambda2 = rec.lambda1, rec.lambda2
        res.flags.extend(rec.flags)
        if isinstance(rec.t2, str):
            res.flags.append(rec.t2)
        res.dist_norm = normalized_distance(model, t0, rec.t1)
        if config.sigma_known:
            res.p_spacing = spacing_pvalue(rec.omega.matrix, rec.lambda1, rec.lambda2, sigma)
        est = estimate_sigma(model, obs.payload, rec.t1, rng=rng)
        if est.attempts > 1:
            res.flags.append("resampled")
        res.sigma_hat = est.sigma_hat
        res.p_tspacing = t_spacing_pvalue(rec.omega.matrix, rec.lambda1, rec.lambda2,
                                          est.sigma_hat, model.kl_order(), est.kappa)
    except SpacingError as exc:
        res.flags.append(f"failed:{type(exc).__name__}")
        log.warning("gamma=%s replica=%d failed: %s", gamma, replica, exc)
    return res


def _run_chunk(args):
    config, jobs = args
    return [run_replica(config, gi, r) for gi, r in jobs]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    results: list
    summary: dict

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.results:
            w.writerow(r.csv_row())
        return buf.getvalue()


def summary_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".summary.json")


def run_experiment(config: ExperimentConfig, progress=None) -> ExperimentResult:
    """Run every ``(gamma, replica)`` pair; write CSV (incrementally) and summary if configured.

    Rows are ordered by gamma then replica whatever the number of workers.
    """
    start = time.perf_counter()
    jobs = [(gi, r) for gi in range(len(config.gamma_grid)) for r in range(config.replicas)]
    out = None
    writer = None
    if config.output:
        Path(config.output).parent.mkdir(parents=True, exist_ok=True)
        out = open(config.output, "w", newline="")
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
    results = []
    chunk = 200
    batches = [jobs[i:i + chunk] for i in range(0, len(jobs), chunk)]
    try:
        if config.workers > 1:
            with ProcessPoolExecutor(config.workers) as ex:
                stream = ex.map(_run_chunk, [(config, b) for b in batches])
                for rows in stream:
                    _consume(rows, results, writer, out, progress, len(jobs))
        else:
            for b in batches:
                _consume(_run_chunk((config, b)), results, writer, out, progress, len(jobs))
    finally:
        if out is not None:
            out.close()
    summary = summarize(results, config)
    summary["runtime_seconds"] = time.perf_counter() - start
    if config.output:
        # the runtime is the only non-deterministic field; keep it out of the data file
        data = {k: v for k, v in summary.items() if k != "runtime_seconds"}
        summary_path(config.output).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        log.info("runtime %.1f s", summary["runtime_seconds"])
    return ExperimentResult(config, results, summary)


def _consume(rows, results, writer, out, progress, total):
    results.extend(rows)
    if writer is not None:
        for r in rows:
            writer.writerow(r.csv_row())
        out.flush()
    if progress is not None:
        progress(len(results), total)


# -- statistics -------------------------------------------------------------------

def ks_statistic(sample, cdf="uniform", kappa: int | None = None) -> float:
    """Kolmogorov distance between the empirical CDF of ``sample`` and a reference.

    ``cdf`` is ``"uniform"`` (on (0,1)), ``"chi2"`` (with ``kappa`` degrees
    of freedom), or any callable CDF.
    """
    x = np.asarray(sample, float)
    if x.size == 0:
        raise ValueError("empty sample")
    if callable(cdf):
        ref = cdf
    elif cdf == "uniform":
        ref = stats.uniform.cdf
    elif cdf == "chi2":
        if kappa is None:
            raise ValueError("chi2 reference needs kappa")
        ref = stats.chi2(kappa).cdf
    else:
        raise ValueError(f"unknown reference {cdf!r}")
    return float(stats.kstest(x, ref).statistic)


def ks_threshold(n: int) -> float:
    """1% critical value of the Kolmogorov statistic, ``1.63 / sqrt(n)``."""
    return 1.63 / math.sqrt(n)


def _by_gamma(results):
    out = {}
    for r in results:
        out.setdefault(r.gamma, []).append(r)
    return dict(sorted(out.items()))


def _column(rows, name):
    x = np.array([getattr(r, name) for r in rows if not r.failed], float)
    return x[~np.isnan(x)]


def power_curve(results, alpha: float = 0.05, column: str = "p_spacing") -> list:
    """Rejection rate ``P(p <= alpha)`` per gamma with its binomial standard error."""
    table = []
    for g, rows in _by_gamma(results).items():
        p = _column(rows, column)
        if p.size == 0:
            continue
        rate = float(np.mean(p <= alpha))
        table.append({"gamma": g, "n": int(p.size), "rate": rate,
                      "se": math.sqrt(max(rate * (1 - rate), 1e-300) / p.size)})
    return table


def sigma_diagnostics(results, sigma: float, kappa: int) -> list:
    """Per gamma: mean and SE of ``sigma_hat``, and KS of ``kappa sigma_hat^2 / sigma^2`` vs chi2(kappa)."""
    table = []
    for g, rows in _by_gamma(results).items():
        s = _column(rows, "sigma_hat")
        if s.size == 0:
            continue
        table.append({
            "gamma": g, "n": int(s.size),
            "mean": float(s.mean()),
            "se": float(s.std(ddof=1) / math.sqrt(s.size)) if s.size > 1 else math.nan,
            "ks_chi2": ks_statistic(kappa * s ** 2 / sigma ** 2, "chi2", kappa),
            "all_positive": bool(np.all(s > 0)),
        })
    return table


def summarize(results, config: ExperimentConfig) -> dict:
    model = make_model(config.model)
    kappa = model.kl_order() - model.dim - 1
    per_gamma = []
    for g, rows in _by_gamma(results).items():
        n_failed = sum(r.failed for r in rows)
        entry = {"gamma": g, "replicas": len(rows), "failed": n_failed,
                 "failure_rate": n_failed / len(rows),
                 "pole_limit": sum("pole-limit" in r.flags for r in rows)}
        for col in ("p_spacing", "p_tspacing", "dist_norm"):
            x = _column(rows, col)
            if x.size:
                entry[f"ks_{col}"] = ks_statistic(x)
                entry[f"ks_{col}_threshold"] = ks_threshold(x.size)
        per_gamma.append(entry)
    cfg = {k: v for k, v in config.to_dict().items() if k not in ("output", "workers")}
    out = {"config": cfg, "kappa": kappa, "per_gamma": per_gamma,
           "power_spacing": power_curve(results, 0.05, "p_spacing"),
           "power_tspacing": power_curve(results, 0.05, "p_tspacing"),
           "sigma": sigma_diagnostics(results, config.sigma_true, kappa)}
    return out


def read_results(csv_path) -> list:
    """Load the rows written by :func:`run_experiment`."""
    rows = []
    with open(csv_path, newline="") as fh:
        for d in csv.DictReader(fh):
            def num(k):
                return float(d[k]) if d[k] != "" else math.nan

            rows.append(ReplicaResult(
                gamma=float(d["gamma"]), replica=int(d["replica"]),
                lambda1=num("lambda1"), lambda2=num("lambda2"),
                p_spacing=num("p_spacing"), p_tspacing=num("p_tspacing"),
                sigma_hat=num("sigma_hat"), dist_norm=num("dist_norm"),
                flags=[f for f in d["flags"].split(";") if f],
            ))
    return rows
