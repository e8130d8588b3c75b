"""Permutation tests on row-shuffled responses.

One shared row shuffle per permutation serves every effect: the coding matrix
stays fixed, ``X`` is permuted and refitted, and all effects' statistics are
harvested from the same refit.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .decompose import LeastSquares, batch_ss, f_statistic
from .design import CodingMatrix, DegreesOfFreedom, DesignModel

# name -> callable(ss, residual_ss, dof, model) -> {effect: array}
STATISTICS = {"F": f_statistic}

# permutations refitted per batched solve; bounds memory at K * N * M floats
BATCH = 64


def p_value(statistic, nulls):
    """``(#{null >= statistic} + 1) / (K + 1)``; ties count as exceedances.

    Larger statistics are more significant. NaN statistics yield NaN.
    """
    nulls = np.asarray(nulls, dtype=float).ravel()
    if nulls.size == 0:
        raise ValueError("p_value needs at least one null sample")
    if np.isnan(statistic):
        return float("nan")
    return (int(np.count_nonzero(nulls >= statistic)) + 1) / (nulls.size + 1)


@dataclass
class PermutationResult:
    observed: dict
    nulls: dict
    pvalues: dict
    n_perms: int

    def to_csv(self):
        """Null-distribution dump; ``perm_index`` 0 holds the observed value."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("effect", "perm_index", "statistic"))
        for e, obs in self.observed.items():
            w.writerow((e, 0, _num(obs)))
            for k, v in enumerate(self.nulls[e], start=1):
                w.writerow((e, k, _num(v)))
        return buf.getvalue()


def _num(v):
    v = float(v)
    return repr(v) if np.isfinite(v) else ""


def draw_permutations(rng, n_runs, n_perms):
    """``(K, N)`` array of independent uniform row permutations."""
    base = np.broadcast_to(np.arange(n_runs), (n_perms, n_runs))
    return rng.permuted(base, axis=1)


def permutation_test(X, coding: CodingMatrix, model: DesignModel, dof: DegreesOfFreedom,
                     n_perms: int, rng, statistic: str | Callable = "F",
                     solver: Optional[LeastSquares] = None) -> PermutationResult:
    """Observed statistics, ``n_perms`` null samples and p-values per effect.

    ``rng`` is a :class:`numpy.random.Generator`; all row shuffles are drawn
    from it up front, so results depend only on its state.
    """
    if n_perms < 1:
        raise ValueError("at least one permutation is required")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != coding.matrix.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but the coding matrix has {coding.matrix.shape[0]}")
    stat = STATISTICS[statistic] if isinstance(statistic, str) else statistic
    solver = solver or LeastSquares(coding)
    perms = draw_permutations(rng, X.shape[0], n_perms)

    ss, rss = batch_ss(solver, X[None])
    observed = {e: float(v[0]) for e, v in stat(ss, rss, dof, model).items()}
    chunks = {e: [] for e in observed}
    for start in range(0, n_perms, BATCH):
        ss, rss = batch_ss(solver, X[perms[start:start + BATCH]])
        for e, v in stat(ss, rss, dof, model).items():
            chunks[e].append(v)
    nulls = {e: np.concatenate(c) for e, c in chunks.items()}
    pvalues = {e: p_value(observed[e], nulls[e]) for e in observed}
    return PermutationResult(observed, nulls, pvalues, n_perms)
