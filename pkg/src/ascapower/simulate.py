"""Synthetic datasets with a prescribed effect structure.

Level (or cell) averages are drawn per effect, normalized so their Frobenius
norm equals the square root of their row count, and expanded to runs
through the run table. Noise is drawn at full ``N x M`` size and normalized
the same way. The dataset is ``X = theta * X_S + k_e * X_E`` with
``X_S = sum_e k_e X_e``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _rng
from .design import DesignModel, RunTable
from .distributions import NORMAL, Distribution  # noqa: F401  (re-exported)

__all__ = [
    "Distribution",
    "SimulationParts",
    "SimulatedDataset",
    "draw_level_averages",
    "normalize_frobenius",
    "expand_to_runs",
    "draw_parts",
    "assemble_dataset",
]


def normalize_frobenius(matrix):
    """Scale ``matrix`` so that its Frobenius norm equals ``sqrt(rows)``."""
    matrix = np.asarray(matrix, dtype=float)
    norm = np.linalg.norm(matrix)
    if norm == 0 or not np.isfinite(norm):
        raise ValueError("cannot normalize a zero (or non-finite) matrix")
    return matrix * (np.sqrt(matrix.shape[0]) / norm)


def draw_level_averages(model: DesignModel, table: RunTable, n_responses: int, rng):
    """Raw level/cell averages for every effect, drawn in effect order.

    Row counts are the global level counts for factors (``r_f`` times the
    number of ancestor cells when nested) and the product of the constituent
    factors' global level counts for interactions.
    """
    out = {}
    for e in model.effect_ids:
        dist = model.effect(e).dist
        out[e] = dist.draw(rng, (table.n_levels(e), n_responses))
    return out


def expand_to_runs(averages, table: RunTable, effect):
    """Give each run the average row of its level (or interaction cell)."""
    averages = np.asarray(averages)
    n = table.n_levels(effect)
    if averages.shape[0] != n:
        raise ValueError(f"{effect}: expected {n} average rows, got {averages.shape[0]}")
    return averages[table.index(effect)]


@dataclass
class SimulationParts:
    """Normalized, expanded effect matrices and normalized noise (unweighted)."""

    effects: dict
    noise: np.ndarray
    averages: dict = field(default_factory=dict)
    covariate: Optional[np.ndarray] = None


def draw_parts(model: DesignModel, table: RunTable, n_responses: int, seed: int, *key,
               covariate: Optional[Distribution] = None) -> SimulationParts:
    """Draw every random ingredient of one repetition.

    Streams are keyed ``(seed, *key, role)`` so effects, noise and covariate
    never share randomness.
    """
    raw = draw_level_averages(model, table, n_responses, _rng.stream(seed, *key, _rng.EFFECTS))
    averages = {e: normalize_frobenius(m) for e, m in raw.items()}
    effects = {e: expand_to_runs(m, table, e) for e, m in averages.items()}
    noise_rng = _rng.stream(seed, *key, _rng.NOISE)
    noise = normalize_frobenius(model.residual_dist.draw(noise_rng, (table.n_runs, n_responses)))
    cv = None
    if covariate is not None:
        cv_rng = _rng.stream(seed, *key, _rng.COVARIATE)
        cv = normalize_frobenius(covariate.draw(cv_rng, (table.n_runs, n_responses)))
    return SimulationParts(effects, noise, averages, cv)


@dataclass
class SimulatedDataset:
    X: np.ndarray
    structural: np.ndarray
    noise: np.ndarray
    components: dict
    theta: float
    coefficients: dict
    fixed: tuple = ()
    covariate_coeff: float = 0.0


def structural_part(model: DesignModel, parts: SimulationParts, exclude=()):
    """``sum_e k_e X_e`` over effects not in ``exclude``."""
    xs = np.zeros_like(parts.noise)
    for e in model.effect_ids:
        k = model.coeff(e)
        if k and e not in exclude:
            xs += k * parts.effects[e]
    return xs


def assemble_dataset(model: DesignModel, parts: SimulationParts, theta: float,
                     fixed=(), covariate_coeff: float = 0.0) -> SimulatedDataset:
    """Build ``X = theta * X_S + k_e * X_E`` (plus held effects and covariate).

    Effects listed in ``fixed`` are kept at their coefficient for every
    ``theta``: they leave ``X_S`` and enter as ``k_f * X_f``. A covariate,
    when the parts carry one, enters as ``covariate_coeff * X_cv``.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    unknown = set(fixed) - set(model.effect_ids)
    if unknown:
        raise ValueError(f"unknown fixed effects {sorted(unknown)}")
    if parts.noise.shape[0] != next(iter(parts.effects.values()), parts.noise).shape[0]:
        raise ValueError("effect and noise matrices have different run counts")
    xs = structural_part(model, parts, exclude=fixed)
    xe = model.residual_coeff * parts.noise
    X = theta * xs + xe
    for e in fixed:
        X = X + model.coeff(e) * parts.effects[e]
    if covariate_coeff:
        if parts.covariate is None:
            raise ValueError("covariate coefficient given but no covariate was drawn")
        X = X + covariate_coeff * parts.covariate
    coeffs = {e: model.coeff(e) for e in model.effect_ids}
    coeffs["residual"] = model.residual_coeff
    return SimulatedDataset(X, xs, xe, parts.effects, float(theta), coeffs, tuple(fixed), covariate_coeff)
