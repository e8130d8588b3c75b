"""Deviate generators for level averages, noise and covariates."""

from dataclasses import dataclass

import numpy as np

KINDS = ("normal", "uniform", "exp3")


@dataclass(frozen=True)
class Distribution:
    """Kind of i.i.d. deviates.

    ``normal`` is N(0, 1). ``uniform`` is U(-a, a), with ``a = sqrt(3)`` by
    default so the variance is one. ``exp3`` cubes unit-exponential deviates
    and subtracts their analytic mean (6), giving a severely skewed
    distribution.
    """

    kind: str = "normal"
    a: float = float(np.sqrt(3.0))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution {self.kind!r}; expected one of {KINDS}")
        if self.kind == "uniform" and not self.a > 0:
            raise ValueError("uniform half-width must be positive")

    def draw(self, rng, shape):
        if self.kind == "normal":
            return rng.standard_normal(shape)
        if self.kind == "uniform":
            return rng.uniform(-self.a, self.a, shape)
        return rng.standard_exponential(shape) ** 3 - 6.0

    @classmethod
    def parse(cls, value):
        """Build from a name, a ``{"kind": ..., "a": ...}`` mapping, or pass through."""
        if value is None:
            return NORMAL
        if isinstance(value, Distribution):
            return value
        if isinstance(value, str):
            return cls(value.lower())
        if isinstance(value, dict):
            kw = {"kind": str(value.get("kind", "normal")).lower()}
            if "a" in value:
                kw["a"] = float(value["a"])
            return cls(**kw)
        raise ValueError(f"cannot interpret {value!r} as a distribution")

    def to_config(self):
        if self.kind == "uniform":
            return {"kind": "uniform", "a": self.a}
        return self.kind


NORMAL = Distribution("normal")
