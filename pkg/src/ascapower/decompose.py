"""ASCA+ least-squares partition of a response matrix.

``X = 1 m' + sum_e D_e Theta_e + E``, with ``Theta`` the least-squares
coefficients on the sum-coded matrix ``D``. Sums of squares are squared
Frobenius norms of the per-effect matrices.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .design import CodingMatrix, DegreesOfFreedom, DesignModel, descendants


class RankDeficiencyWarning(UserWarning):
    pass


class LeastSquares:
    """Reusable solver for a fixed coding matrix.

    The coefficient operator ``D^+`` is built once from a column-pivoted QR
    factorization. When ``D`` is numerically rank deficient the
    minimum-norm pseudo-inverse (SVD) is used instead and ``rank`` reports
    the detected rank.
    """

    def __init__(self, coding: CodingMatrix, rcond=None):
        D = np.asarray(coding.matrix, dtype=float)
        self.coding = coding
        n, p = D.shape
        if rcond is None:
            rcond = max(n, p) * np.finfo(float).eps
        q, r, piv = scipy.linalg.qr(D, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        rank = int(np.sum(diag > rcond * diag[0])) if diag.size and diag[0] > 0 else 0
        self.rank = rank
        self.full_rank = rank == p
        if self.full_rank:
            op = np.empty((p, n))
            op[piv] = scipy.linalg.solve_triangular(r, q.T)
            self.condition = float(diag[0] / diag[-1])
        else:
            op = np.linalg.pinv(D, rcond=rcond)
            self.condition = float("inf")
        self.operator = op
        self.gram = {e: D[:, s].T @ D[:, s] for e, s in coding.spans.items()}

    def solve(self, X):
        """Coefficients for ``X`` of shape ``(N, M)`` or a stack ``(K, N, M)``."""
        return self.operator @ X


@dataclass
class CodingFit:
    theta: np.ndarray
    rank: int
    condition: float
    residual: np.ndarray

    @property
    def full_rank(self):
        return self.rank == self.theta.shape[0]


def fit(X, coding: CodingMatrix, solver: Optional[LeastSquares] = None) -> CodingFit:
    """Least-squares fit of ``X`` on the coding matrix.

    A rank-deficient coding matrix triggers a :class:`RankDeficiencyWarning`;
    the minimum-norm solution is returned regardless.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != coding.matrix.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but the coding matrix has {coding.matrix.shape[0]}")
    solver = solver or LeastSquares(coding)
    if not solver.full_rank:
        warnings.warn(
            f"coding matrix is rank deficient (rank {solver.rank} < {coding.n_columns}); "
            "using the minimum-norm solution",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    theta = solver.solve(X)
    return CodingFit(theta, solver.rank, solver.condition, X - coding.matrix @ theta)


@dataclass
class EffectDecomposition:
    mean: np.ndarray
    effects: dict
    residual: np.ndarray
    ss: dict
    dof: dict
    residual_ss: float
    residual_dof: int
    mean_ss: float
    total_ss: float
    n_runs: int
    order: list = field(default_factory=list)

    @property
    def ms(self):
        return {e: self.ss[e] / self.dof[e] if self.dof[e] else float("nan") for e in self.order}

    @property
    def residual_ms(self):
        return self.residual_ss / self.residual_dof

    def reconstruct(self):
        return self.mean + sum(self.effects.values()) + self.residual


def decompose(X, coding: CodingMatrix, model: DesignModel, dof: DegreesOfFreedom,
              solver: Optional[LeastSquares] = None) -> EffectDecomposition:
    """Split ``X`` into mean, per-effect and residual matrices."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    res = fit(X, coding, solver)
    D = coding.matrix
    mean = D[:, :1] @ res.theta[:1]
    effects = {e: D[:, coding.spans[e]] @ res.theta[coding.spans[e]] for e in model.effect_ids}
    ss = {e: float(np.sum(m * m)) for e, m in effects.items()}
    return EffectDecomposition(
        mean=mean,
        effects=effects,
        residual=res.residual,
        ss=ss,
        dof=dict(dof.effects),
        residual_ss=float(np.sum(res.residual ** 2)),
        residual_dof=dof.residual,
        mean_ss=float(np.sum(mean * mean)),
        total_ss=float(np.sum(X * X)),
        n_runs=X.shape[0],
        order=list(model.effect_ids),
    )


def batch_ss(solver: LeastSquares, Xs):
    """Effect and residual sums of squares for a stack of responses.

    ``Xs`` has shape ``(K, N, M)``. Returns ``(ss, residual_ss)`` with ``ss``
    mapping effect id to a length-``K`` array.
    """
    theta = solver.solve(Xs)
    ss = {}
    for e, s in solver.coding.spans.items():
        t = theta[:, s, :]
        # ||D_e t||^2 = tr(t' G_e t)
        ss[e] = np.einsum("kij,kij->k", t, solver.gram[e] @ t)
    resid = Xs - solver.coding.matrix @ theta
    return ss, np.einsum("kij,kij->k", resid, resid)


def denominators(model: DesignModel):
    """For each effect, the effects pooled into its F-ratio denominator.

    An empty list means the residual term.
    """
    order = model.effect_ids
    return {e: [d for d in order if d in descendants(model, e)] for e in order}


def f_statistic(ss, residual_ss, dof, model: DesignModel):
    """F-ratios from sums of squares; works elementwise on arrays.

    Effects without descendants are tested against the residual mean square;
    effects with descendants against the pooled mean square of all of them.
    Undefined ratios (zero denominator) come back as NaN.
    """
    out = {}
    for e, below in denominators(model).items():
        num = np.asarray(ss[e], dtype=float) / dof.effects[e]
        if below:
            den_ss = sum(np.asarray(ss[d], dtype=float) for d in below)
            den_df = sum(dof.effects[d] for d in below)
        else:
            den_ss, den_df = np.asarray(residual_ss, dtype=float), dof.residual
        den = den_ss / den_df
        with np.errstate(divide="ignore", invalid="ignore"):
            out[e] = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return out


def f_ratios(dec: EffectDecomposition, model: DesignModel):
    """Per-effect F-ratio; ``None`` where the denominator is zero."""
    dof = DegreesOfFreedom(dec.dof, dec.residual_dof, dec.n_runs)
    raw = f_statistic(dec.ss, dec.residual_ss, dof, model)
    return {e: (None if np.isnan(v) else float(v)) for e, v in raw.items()}


# -- ASCA table ---------------------------------------------------------------


@dataclass
class AscaRow:
    source: str
    ss: float
    perc: float
    df: int
    ms: float
    f: Optional[float] = None
    p: Optional[float] = None


@dataclass
class AscaTable:
    rows: list
    degenerate: bool = False  # total SS was zero, percentages forced to 0

    HEADER = ("Source", "SumSq", "PercSumSq", "df", "MeanSq", "F", "Pvalue")

    def row(self, source) -> AscaRow:
        for r in self.rows:
            if r.source == source:
                return r
        raise KeyError(source)

    def to_csv(self, digits=6):
        def fmt(v):
            if v is None or (isinstance(v, float) and not np.isfinite(v)):
                return ""
            if isinstance(v, (int, np.integer)):
                return str(int(v))
            return f"{v:.{digits}g}"

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.rows:
            w.writerow([r.source, fmt(r.ss), fmt(r.perc), r.df, fmt(r.ms), fmt(r.f), fmt(r.p)])
        return buf.getvalue()

    def __str__(self):
        lines = ["{:<12}{:>12}{:>11}{:>5}{:>11}{:>9}{:>10}".format(*self.HEADER)]
        for r in self.rows:
            f = "" if r.f is None else f"{r.f:.4f}"
            p = "" if r.p is None else f"{r.p:.6g}"
            lines.append(f"{r.source:<12}{r.ss:>12.5g}{r.perc:>11.4f}{r.df:>5}{r.ms:>11.5g}{f:>9}{p:>10}")
        return "\n".join(lines)


def asca_table(dec: EffectDecomposition, model: DesignModel, f=None, p=None) -> AscaTable:
    """Rows Mean, factors, interactions, Residuals, Total.

    Total SS is the sum of every row above it (including the mean), matching
    the squared norm of the raw data on balanced designs; its df is N.
    """
    f = f or {}
    p = p or {}
    sources = [("Mean", dec.mean_ss, 1, None, None)]
    for e in dec.order:
        sources.append((model.label(e), dec.ss[e], dec.dof[e], f.get(e), p.get(e)))
    sources.append(("Residuals", dec.residual_ss, dec.residual_dof, None, None))
    total = sum(s[1] for s in sources)
    degenerate = not total > 0
    rows = []
    for name, ss, df, fv, pv in sources:
        perc = 0.0 if degenerate else 100.0 * ss / total
        rows.append(AscaRow(name, ss, perc, df, ss / df if df else float("nan"), fv, pv))
    rows.append(AscaRow("Total", total, 0.0 if degenerate else 100.0, dec.n_runs, total / dec.n_runs))
    return AscaTable(rows, degenerate)
