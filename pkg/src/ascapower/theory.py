"""Expected mean squares and F-ratios for the reference design.

The reference design has crossed factors A and B, a factor C nested in A with
``r`` levels per A level, and the AB interaction. All effects are random with
population variances ``sigma2_*``. ``eta`` is the number of copies of the
whole experiment; it multiplies every structural contribution but not the
error variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EFFECTS = ("A", "B", "C", "AB")


@dataclass(frozen=True)
class VarianceParams:
    sigma2_a: float
    sigma2_b: float
    sigma2_c: float
    sigma2_ab: float
    sigma2_e: float = 1.0
    r: int = 4
    levels_a: int = 4
    levels_b: int = 3
    eta: int = 1

    def __post_init__(self):
        if min(self.sigma2_a, self.sigma2_b, self.sigma2_c, self.sigma2_ab) < 0:
            raise ValueError("variances must be nonnegative")
        if not self.sigma2_e > 0:
            raise ValueError("error variance must be positive")
        if min(self.r, self.levels_a, self.levels_b) < 2 or self.eta < 1:
            raise ValueError("level counts must be ≥ 2 and eta ≥ 1")

    @classmethod
    def from_coefficients(cls, theta, k_a=0.2, k_b=0.2, k_c=0.2, k_ab=0.2, k_e=1.0, **design):
        """Variances ``(theta * k)^2`` as used by the simulation."""
        t2 = float(theta) ** 2
        return cls(t2 * k_a ** 2, t2 * k_b ** 2, t2 * k_c ** 2, t2 * k_ab ** 2, k_e ** 2, **design)

    @property
    def dof_c(self):
        return self.levels_a * (self.r - 1)

    @property
    def dof_ab(self):
        return (self.levels_a - 1) * (self.levels_b - 1)


def expected_ms(p: VarianceParams):
    """E(MS) per source, keyed ``A, B, C, AB, E``."""
    e = p.sigma2_e
    ab = p.eta * p.r * p.sigma2_ab
    c = p.eta * p.levels_b * p.sigma2_c
    return {
        "E": e,
        "AB": e + ab,
        "C": e + c,
        "B": e + ab + p.eta * p.levels_a * p.r * p.sigma2_b,
        "A": e + ab + c + p.eta * p.levels_b * p.r * p.sigma2_a,
    }


def expected_f(p: VarianceParams):
    """Ratio of expected mean squares for each effect's F-ratio.

    A is tested against the DoF-weighted pool of C(A) and AB (approximate
    test), B against AB, and C(A), AB against the residuals.
    """
    ms = expected_ms(p)
    pooled = (p.dof_c * ms["C"] + p.dof_ab * ms["AB"]) / (p.dof_c + p.dof_ab)
    return {
        "A": ms["A"] / pooled,
        "B": ms["B"] / ms["AB"],
        "C": ms["C"] / ms["E"],
        "AB": ms["AB"] / ms["E"],
    }


def expected_f_null_a(p: VarianceParams):
    """E(F_A) when A carries no variance; exceeds 1 if C(A) and AB differ."""
    if p.sigma2_a != 0:
        raise ValueError("expected_f_null_a requires sigma2_a == 0")
    return expected_f(p)["A"]


def expected_f_grid(thetas, **coefficients):
    """``{effect: array}`` of expected F over a grid of effect sizes."""
    thetas = np.asarray(thetas, dtype=float)
    out = {e: np.empty(thetas.shape) for e in EFFECTS}
    for j, t in enumerate(thetas):
        for e, v in expected_f(VarianceParams.from_coefficients(t, **coefficients)).items():
            out[e][j] = v
    return out
