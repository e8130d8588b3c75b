"""Monte-Carlo power curves.

Relative curves sweep the effect size ``theta`` on a fixed design; absolute
curves fix ``theta`` and enlarge the design (the whole experiment, or the
level count of one factor). Each repetition is an independent task whose
randomness comes from streams keyed by ``(seed, repetition, ...)``, so curves
are bit-identical for any number of workers.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _rng
from .decompose import LeastSquares, batch_ss
from .design import (
    DesignModel,
    ReplicationPlan,
    RunTable,
    build_coding_matrix,
    build_run_table,
    degrees_of_freedom,
)
from .distributions import Distribution
from .permute import STATISTICS, permutation_test
from .simulate import assemble_dataset, draw_parts

log = logging.getLogger(__name__)

WHOLE = "whole"


@dataclass(frozen=True)
class CurveConfig:
    """Simulation settings shared by both curve types.

    ``grid`` overrides the default grid: ``{0, delta, ..., n_steps * delta}``
    for relative curves, ``{1..n_steps}`` (whole experiment) or
    ``{base, base + 1, ...}`` (factor enlargement, ``n_steps`` points) for
    absolute curves. Coefficients and distributions live on the model.
    """

    reps: int = 1000
    perms: int = 200
    delta: float = 0.1
    n_steps: int = 10
    alpha: float = 0.05
    n_responses: int = 400
    seed: int = 0
    grid: Optional[tuple] = None
    n_boot: int = 1000
    ci_level: float = 0.95
    workers: int = 1
    statistic: str = "F"

    def __post_init__(self):
        problems = []
        if self.reps < 1:
            problems.append("R must be ≥ 1")
        if self.perms < 1:
            problems.append("P must be ≥ 1")
        if not self.delta > 0:
            problems.append("delta must be > 0")
        if self.n_steps < 1:
            problems.append("steps must be ≥ 1")
        if not 0 < self.alpha < 1:
            problems.append("alpha must lie in (0, 1)")
        if self.n_responses < 1:
            problems.append("M must be ≥ 1")
        if self.n_boot < 1:
            problems.append("bootstrap resamples must be ≥ 1")
        if not 0 < self.ci_level < 1:
            problems.append("confidence level must lie in (0, 1)")
        if self.workers < 1:
            problems.append("workers must be ≥ 1")
        if self.statistic not in STATISTICS:
            problems.append(f"unknown statistic {self.statistic!r}")
        if problems:
            raise ValueError("; ".join(problems))
        if self.grid is not None:
            object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))

    def theta_grid(self):
        if self.grid is not None:
            return np.asarray(self.grid)
        return self.delta * np.arange(self.n_steps + 1)


@dataclass
class PowerCurve:
    """Per-effect power over a grid, with bootstrap bands and mean F.

    ``rejections`` and ``f_values`` have shape ``(reps, grid, effects)``.
    """

    mode: str
    grid: np.ndarray
    effects: list
    labels: list
    rejections: np.ndarray
    f_values: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    alpha: float
    meta: dict = field(default_factory=dict)

    @property
    def reps(self):
        return self.rejections.shape[0]

    @property
    def power(self):
        return self.rejections.sum(axis=0) / self.reps

    def power_of(self, effect):
        return self.power[:, self.effects.index(effect)]

    def mean_f(self):
        return np.nanmean(self.f_values, axis=0)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("grid", "effect", "power", "ci_lo", "ci_hi", "mean_f"))
        power, mean_f = self.power, self.mean_f()
        for g, x in enumerate(self.grid):
            for j, lab in enumerate(self.labels):
                w.writerow((_num(x), lab, _num(power[g, j]), _num(self.ci_lo[g, j]),
                            _num(self.ci_hi[g, j]), _num(mean_f[g, j])))
        return buf.getvalue()

    def indicators_csv(self):
        """Raw per-repetition rejection indicators and F-ratios."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("rep", "grid", "effect", "reject", "f"))
        for r in range(self.reps):
            for g, x in enumerate(self.grid):
                for j, lab in enumerate(self.labels):
                    w.writerow((r, _num(x), lab, int(self.rejections[r, g, j]), _num(self.f_values[r, g, j])))
        return buf.getvalue()


def _num(v):
    v = float(v)
    if not np.isfinite(v):
        return ""
    return repr(int(v)) if v.is_integer() and abs(v) < 2 ** 53 else repr(v)


def bootstrap_ci(indicators, n_boot=1000, level=0.95, rng=None):
    """Percentile bootstrap band for power, resampling repetitions.

    ``indicators`` has repetitions on the first axis. Returns ``(lo, hi)``
    with the remaining shape; the band is widened if needed so that it
    always contains the point estimate.
    """
    if n_boot < 1:
        raise ValueError("n_boot must be ≥ 1")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    ind = np.asarray(indicators, dtype=float)
    reps = ind.shape[0]
    flat = ind.reshape(reps, -1)
    rng = rng if rng is not None else np.random.default_rng(0)
    draws = rng.integers(0, reps, size=(n_boot, reps))
    weights = np.zeros((n_boot, reps))
    np.add.at(weights, (np.repeat(np.arange(n_boot), reps), draws.ravel()), 1.0)
    boot = weights @ flat / reps
    tail = (1 - level) / 2
    lo, hi = np.quantile(boot, [tail, 1 - tail], axis=0)
    point = flat.mean(axis=0)
    lo = np.clip(np.minimum(lo, point), 0, 1)
    hi = np.clip(np.maximum(hi, point), 0, 1)
    return lo.reshape(ind.shape[1:]), hi.reshape(ind.shape[1:])


def mean_f_profile(curve: PowerCurve):
    """``{effect: mean observed F over repetitions}`` along the grid."""
    m = curve.mean_f()
    return {e: m[:, j] for j, e in enumerate(curve.effects)}


# -- engines --------------------------------------------------------------


@dataclass
class _Stage:
    """Design-dependent quantities reused by every repetition."""

    model: DesignModel
    table: RunTable
    coding: object
    dof: object
    solver: LeastSquares

    @classmethod
    def build(cls, table: RunTable):
        coding = build_coding_matrix(table)
        dof = degrees_of_freedom(table.model, table)
        return cls(table.model, table, coding, dof, LeastSquares(coding))


def _observed(stage, X, statistic):
    ss, rss = batch_ss(stage.solver, X[None])
    return STATISTICS[statistic](ss, rss, stage.dof, stage.model)


def _test(stage, X, cfg, rng, effects, permute):
    if not permute:
        stat = _observed(stage, X, cfg.statistic)
        return None, np.array([float(stat[e][0]) for e in effects])
    res = permutation_test(X, stage.coding, stage.model, stage.dof, cfg.perms, rng,
                           statistic=cfg.statistic, solver=stage.solver)
    p = np.array([res.pvalues[e] for e in effects])
    f = np.array([res.observed[e] for e in effects])
    return p < cfg.alpha, f


def _map(fn, n, workers):
    if workers <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


def _finish(mode, grid, model, results, cfg, permute, meta):
    effects = list(model.effect_ids)
    rej = np.stack([r[0] for r in results]) if permute else np.zeros((cfg.reps, len(grid), len(effects)), bool)
    fv = np.stack([r[1] for r in results])
    lo, hi = bootstrap_ci(rej, cfg.n_boot, cfg.ci_level, _rng.stream(cfg.seed, _rng.BOOTSTRAP))
    return PowerCurve(mode, np.asarray(grid, dtype=float), effects, [model.label(e) for e in effects],
                      rej, fv, lo, hi, cfg.alpha, meta)


def relative_power_curve(model: DesignModel, table: Optional[RunTable], cfg: CurveConfig,
                         fixed=(), covariate: Optional[Distribution] = None,
                         covariate_coeff: float = 0.0, permute: bool = True) -> PowerCurve:
    """Power versus effect size ``theta`` on a fixed design.

    Each repetition draws its level averages and noise once and reuses them
    along the whole ``theta`` grid; every grid point gets its own shuffles.
    A null is rejected when ``p < alpha``. With ``permute=False`` only the
    observed F-ratios are computed (power is then all zero).
    """
    table = table if table is not None else build_run_table(model)
    if table.model != model:
        raise ValueError("run table was generated from a different model")
    stage = _Stage.build(table)
    grid = cfg.theta_grid()
    effects = list(model.effect_ids)

    def one(rep):
        parts = draw_parts(model, table, cfg.n_responses, cfg.seed, rep, covariate=covariate)
        rej = np.zeros((len(grid), len(effects)), bool)
        fv = np.empty((len(grid), len(effects)))
        for g, theta in enumerate(grid):
            X = assemble_dataset(model, parts, theta, fixed, covariate_coeff).X
            rng = _rng.stream(cfg.seed, rep, g, _rng.PERMUTATIONS)
            r, fv[g] = _test(stage, X, cfg, rng, effects, permute)
            if permute:
                rej[g] = r
        return rej, fv

    log.info("rpc: %d reps x %d grid points x %d perms", cfg.reps, len(grid), cfg.perms)
    results = _map(one, cfg.reps, cfg.workers)
    return _finish("rpc", grid, model, results, cfg, permute, {"fixed": list(fixed)})


def apc_grid(model: DesignModel, cfg: CurveConfig, f_rep=WHOLE):
    if cfg.grid is not None:
        return np.asarray(cfg.grid).astype(int)
    start = 1 if f_rep in (None, WHOLE) else model.factor(f_rep).levels
    return np.arange(start, start + cfg.n_steps)


def absolute_power_curve(model: DesignModel, cfg: CurveConfig, theta: float, f_rep=WHOLE,
                         fixed=(), covariate: Optional[Distribution] = None,
                         covariate_coeff: float = 0.0, permute: bool = True) -> PowerCurve:
    """Power versus sampling size ``eta`` at fixed ``theta``.

    ``f_rep`` is ``"whole"`` (stack ``eta`` copies of the base experiment) or
    a factor name (set that factor's level count to ``eta``). Every grid point
    draws fresh averages and noise for its enlarged design.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    grid = apc_grid(model, cfg, f_rep)
    plans = [ReplicationPlan.whole(eta) if f_rep in (None, WHOLE) else ReplicationPlan.enlarge(f_rep, eta)
             for eta in grid]
    stages = [_Stage.build(build_run_table(model, plan)) for plan in plans]
    effects = list(model.effect_ids)

    def one(rep):
        rej = np.zeros((len(grid), len(effects)), bool)
        fv = np.empty((len(grid), len(effects)))
        for g, stage in enumerate(stages):
            parts = draw_parts(stage.model, stage.table, cfg.n_responses, cfg.seed, rep, g,
                               covariate=covariate)
            X = assemble_dataset(stage.model, parts, theta, fixed, covariate_coeff).X
            rng = _rng.stream(cfg.seed, rep, g, _rng.PERMUTATIONS)
            r, fv[g] = _test(stage, X, cfg, rng, effects, permute)
            if permute:
                rej[g] = r
        return rej, fv

    log.info("apc (%s): %d reps x %d grid points x %d perms", f_rep, cfg.reps, len(grid), cfg.perms)
    results = _map(one, cfg.reps, cfg.workers)
    meta = {"theta": float(theta), "f_rep": f_rep or WHOLE, "fixed": list(fixed)}
    return _finish("apc", grid, model, results, cfg, permute, meta)
