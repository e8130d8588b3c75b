"""Experimental design model, run tables and sum-coded regression matrices.

A design is a set of factors, possibly nested, plus interactions among
crossed factors. Level indices stored in a :class:`RunTable` are *global*: a
factor ``C`` nested in ``A`` with 4 levels per cell and ``L_A = 4`` has 16
global levels. The global index of a nested factor is

    cell * levels_per_cell + local

where ``cell`` is the mixed-radix index of the local coordinates of all its
ancestors (declaration order, first ancestor slowest) and ``local`` is the
position inside that cell.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .distributions import NORMAL, Distribution


class DesignError(ValueError):
    """Invalid design, plan or run table."""


class SaturatedDesignError(DesignError):
    """The design leaves no residual degrees of freedom."""


@dataclass(frozen=True)
class FactorSpec:
    """A factor. For a nested factor ``levels`` counts levels per parent cell."""

    name: str
    levels: int
    nested_in: tuple = ()
    coeff: float = 0.0
    dist: Distribution = NORMAL

    def __post_init__(self):
        object.__setattr__(self, "nested_in", tuple(self.nested_in))
        object.__setattr__(self, "dist", Distribution.parse(self.dist))


@dataclass(frozen=True)
class InteractionSpec:
    factors: tuple
    coeff: float = 0.0
    dist: Distribution = NORMAL
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        object.__setattr__(self, "dist", Distribution.parse(self.dist))
        if not self.name:
            object.__setattr__(self, "name", "".join(self.factors))


@dataclass(frozen=True)
class DesignModel:
    """Factors, interactions and the residual term of an ASCA model.

    Effect identifiers are factor names and interaction names; coefficients
    are the standard-deviation multipliers of each effect (``k_f``, ``k_i``)
    and of the residuals (``k_e``).
    """

    factors: tuple
    interactions: tuple = ()
    residual_coeff: float = 1.0
    residual_dist: Distribution = NORMAL

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        object.__setattr__(self, "interactions", tuple(self.interactions))
        object.__setattr__(self, "residual_dist", Distribution.parse(self.residual_dist))

    # -- lookup -----------------------------------------------------------

    @property
    def factor_names(self):
        return [f.name for f in self.factors]

    @property
    def effect_ids(self):
        """Factors in declaration order, then interactions."""
        return [f.name for f in self.factors] + [i.name for i in self.interactions]

    def factor(self, name) -> FactorSpec:
        for f in self.factors:
            if f.name == name:
                return f
        raise KeyError(f"unknown factor {name!r}")

    def interaction(self, name) -> InteractionSpec:
        for i in self.interactions:
            if i.name == name:
                return i
        raise KeyError(f"unknown interaction {name!r}")

    def is_factor(self, effect):
        return any(f.name == effect for f in self.factors)

    def effect(self, effect):
        return self.factor(effect) if self.is_factor(effect) else self.interaction(effect)

    def coeff(self, effect):
        return self.effect(effect).coeff

    def label(self, effect):
        """Display label, e.g. ``C(A)`` for a nested factor."""
        if self.is_factor(effect):
            f = self.factor(effect)
            if f.nested_in:
                return f"{f.name}({','.join(f.nested_in)})"
            return f.name
        return self.interaction(effect).name

    def ancestors(self, name):
        """Transitive closure of the factors ``name`` is nested in, in declaration order."""
        seen = set()
        stack = list(self.factor(name).nested_in)
        while stack:
            a = stack.pop()
            if a in seen:
                continue
            seen.add(a)
            stack.extend(self.factor(a).nested_in)
        return [f.name for f in self.factors if f.name in seen]

    def n_cells(self, name):
        """Number of ancestor cells of a factor (1 for a top-level factor)."""
        return int(np.prod([self.factor(a).levels for a in self.ancestors(name)], dtype=np.int64))

    def global_levels(self, name):
        return self.factor(name).levels * self.n_cells(name)

    # -- derivation -------------------------------------------------------

    def with_levels(self, name, levels) -> "DesignModel":
        factors = tuple(replace(f, levels=int(levels)) if f.name == name else f for f in self.factors)
        if factors == self.factors and name not in self.factor_names:
            raise DesignError(f"unknown factor {name!r}")
        return replace(self, factors=factors)

    def with_coeffs(self, residual=None, **coeffs) -> "DesignModel":
        """Copy with some coefficients replaced, keyed by effect id."""
        unknown = set(coeffs) - set(self.effect_ids)
        if unknown:
            raise DesignError(f"unknown effects {sorted(unknown)}")
        factors = tuple(replace(f, coeff=coeffs.get(f.name, f.coeff)) for f in self.factors)
        inters = tuple(replace(i, coeff=coeffs.get(i.name, i.coeff)) for i in self.interactions)
        out = replace(self, factors=factors, interactions=inters)
        if residual is not None:
            out = replace(out, residual_coeff=residual)
        return out


def reference_model(k=0.2, k_e=1.0, levels_a=4, levels_b=3, reps_c=4) -> DesignModel:
    """Two crossed factors A and B, C nested in A, and the AB interaction."""
    return DesignModel(
        factors=(
            FactorSpec("A", levels_a, coeff=k),
            FactorSpec("B", levels_b, coeff=k),
            FactorSpec("C", reps_c, nested_in=("A",), coeff=k),
        ),
        interactions=(InteractionSpec(("A", "B"), coeff=k),),
        residual_coeff=k_e,
    )


def validate_model(model: DesignModel):
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    names = [f.name for f in model.factors]
    ids = names + [i.name for i in model.interactions]
    for e in sorted({e for e in ids if ids.count(e) > 1}):
        problems.append(f"effect id {e!r}: duplicated")
    known = set(names)
    for f in model.factors:
        where = f"factor {f.name!r}"
        if not isinstance(f.levels, (int, np.integer)) or f.levels < 2:
            problems.append(f"{where}: levels ≥ 2 required (got {f.levels})")
        if f.coeff < 0:
            problems.append(f"{where}: coefficient must be nonnegative")
        for a in f.nested_in:
            if a not in known:
                problems.append(f"{where}: nested_in refers to unknown factor {a!r}")
            elif a == f.name:
                problems.append(f"{where}: nested in itself")
        if len(set(f.nested_in)) != len(f.nested_in):
            problems.append(f"{where}: nested_in has duplicates")
    # cycle detection on the nesting graph
    parents = {f.name: [a for a in f.nested_in if a in known] for f in model.factors}
    state = {}

    def visit(n):
        state[n] = 1
        for p in parents[n]:
            if state.get(p) == 1 or (p not in state and visit(p)):
                return True
        state[n] = 2
        return False

    for n in names:
        if n not in state and visit(n):
            problems.append(f"factor {n!r}: nesting forms a cycle")
            break
    broken = any(p.endswith("cycle") or "unknown factor" in p for p in problems)
    for i in model.interactions:
        where = f"interaction {i.name!r}"
        if len(i.factors) < 2:
            problems.append(f"{where}: needs at least two factors")
        if len(set(i.factors)) != len(i.factors):
            problems.append(f"{where}: factor list has duplicates")
        if i.coeff < 0:
            problems.append(f"{where}: coefficient must be nonnegative")
        missing = [f for f in i.factors if f not in known]
        for f in missing:
            problems.append(f"{where}: unknown factor {f!r}")
        if missing or broken:
            continue
        for f, g in itertools.permutations(set(i.factors), 2):
            if g in model.ancestors(f):
                problems.append(f"{where}: interaction contains nested pair ({f} nested in {g})")
    if not model.residual_coeff > 0:
        problems.append("residual: coefficient must be positive")
    return problems


def check_model(model: DesignModel):
    problems = validate_model(model)
    if problems:
        raise DesignError("; ".join(problems))


def descendants(model: DesignModel, effect):
    """Effects below ``effect`` in the ancestor/descendant ordering.

    A factor's descendants are the factors nested in it and every interaction
    involving it or one of those nested factors. An interaction's descendants
    are the higher-order interactions that cover it. The result is
    transitively closed.
    """
    if effect not in model.effect_ids:
        raise KeyError(f"unknown effect {effect!r}")

    def cover(inter):
        # factors of the interaction plus all their ancestors
        out = set(inter.factors)
        for f in inter.factors:
            out.update(model.ancestors(f))
        return out

    if model.is_factor(effect):
        below = {f.name for f in model.factors if effect in model.ancestors(f.name)}
        scope = below | {effect}
        for i in model.interactions:
            if scope & cover(i):
                below.add(i.name)
        return below
    base = model.interaction(effect)
    need = set(base.factors)
    return {
        i.name
        for i in model.interactions
        if i.name != effect and need <= cover(i) and len(cover(i)) > len(cover(base))
    }


# -- run tables -------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationPlan:
    """How to derive a run table from a model's base design.

    ``kind`` is ``"base"``, ``"whole"`` (repeat every base run ``eta`` times)
    or ``"factor"`` (set the level count of ``factor`` to ``eta``; for a nested
    factor that is the count per parent cell).
    """

    kind: str = "base"
    eta: int = 1
    factor: Optional[str] = None

    @classmethod
    def base(cls):
        return cls()

    @classmethod
    def whole(cls, eta):
        return cls("whole", int(eta))

    @classmethod
    def enlarge(cls, factor, eta):
        return cls("factor", int(eta), factor)


@dataclass(frozen=True, eq=False)
class RunTable:
    """One row per experimental run, one global level-index column per factor.

    ``model`` is the design the table was generated from (after any factor
    enlargement), so level counts always agree with the table.
    """

    model: DesignModel
    levels: np.ndarray
    balanced: bool = True

    def __post_init__(self):
        arr = np.array(self.levels, dtype=np.int64)
        arr.setflags(write=False)
        object.__setattr__(self, "levels", arr)

    @property
    def n_runs(self):
        return self.levels.shape[0]

    def column(self, name):
        return self.levels[:, self.model.factor_names.index(name)]

    def local(self, name):
        """Position of each run inside its parent cell."""
        return self.column(name) % self.model.factor(name).levels

    def n_levels(self, effect):
        """Level count of a factor or cell count of an interaction."""
        if self.model.is_factor(effect):
            return self.model.global_levels(effect)
        return int(np.prod([self.model.global_levels(f) for f in self.model.interaction(effect).factors]))

    def index(self, effect):
        """Row index into the effect's level/cell averages for every run."""
        if self.model.is_factor(effect):
            return self.column(effect)
        idx = np.zeros(self.n_runs, dtype=np.int64)
        for f in self.model.interaction(effect).factors:
            idx = idx * self.model.global_levels(f) + self.column(f)
        return idx

    def parent_cell(self, name):
        """Mixed-radix cell index of each run from the local coordinates of ancestors."""
        cell = np.zeros(self.n_runs, dtype=np.int64)
        for a in self.model.ancestors(name):
            cell = cell * self.model.factor(a).levels + self.local(a)
        return cell


def _enlarged_model(model, plan):
    if plan.kind not in ("base", "whole", "factor"):
        raise DesignError(f"unknown replication plan {plan.kind!r}")
    if plan.eta < 1:
        raise DesignError(f"eta must be ≥ 1 (got {plan.eta})")
    if plan.kind == "factor":
        if plan.factor not in model.factor_names:
            raise DesignError(f"unknown factor {plan.factor!r} in replication plan")
        model = model.with_levels(plan.factor, plan.eta)
    return model


def build_run_table(model: DesignModel, plan: ReplicationPlan = ReplicationPlan()) -> RunTable:
    """Balanced full factorial of all factors' local coordinates.

    The first declared factor varies slowest. ``whole`` plans stack ``eta``
    copies of the base table.
    """
    model = _enlarged_model(model, plan)
    check_model(model)
    sizes = [f.levels for f in model.factors]
    local = np.indices(sizes).reshape(len(sizes), -1).T
    names = model.factor_names
    cols = []
    for j, f in enumerate(model.factors):
        g = np.zeros(local.shape[0], dtype=np.int64)
        for a in model.ancestors(f.name):
            g = g * model.factor(a).levels + local[:, names.index(a)]
        cols.append(g * f.levels + local[:, j])
    levels = np.column_stack(cols)
    if plan.kind == "whole":
        levels = np.tile(levels, (plan.eta, 1))
    return RunTable(model, levels)


def make_run_table(model: DesignModel, levels) -> RunTable:
    """Validate an externally supplied table of global level indices."""
    check_model(model)
    arr = np.asarray(levels)
    if arr.ndim != 2 or arr.shape[1] != len(model.factors):
        raise DesignError(f"run table needs {len(model.factors)} columns, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise DesignError("run table contains non-integer level indices")
        arr = arr.astype(np.int64)
    table = RunTable(model, arr, balanced=False)
    for j, f in enumerate(model.factors):
        col = arr[:, j]
        top = model.global_levels(f.name)
        bad = np.flatnonzero((col < 0) | (col >= top))
        if bad.size:
            r = int(bad[0])
            raise DesignError(
                f"row {r + 1}, column {f.name!r}: level {int(col[r])} outside [0, {top})"
            )
        if f.nested_in:
            bad = np.flatnonzero(col // f.levels != table.parent_cell(f.name))
            if bad.size:
                r = int(bad[0])
                raise DesignError(
                    f"row {r + 1}, column {f.name!r}: nested level {int(col[r])} "
                    f"does not belong to the ancestor levels of this run"
                )
    counts = _cell_counts(table)
    balanced = counts.size > 0 and np.all(counts == counts.flat[0]) and np.all(counts > 0)
    object.__setattr__(table, "balanced", bool(balanced))
    return table


def _cell_counts(table):
    sizes = [f.levels for f in table.model.factors]
    flat = np.ravel_multi_index(tuple(table.local(f.name) for f in table.model.factors), sizes)
    return np.bincount(flat, minlength=int(np.prod(sizes)))


# -- coding -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CodingMatrix:
    """Regression matrix with an intercept column and one column span per effect."""

    matrix: np.ndarray
    spans: dict = field(default_factory=dict)

    @property
    def n_columns(self):
        return self.matrix.shape[1]

    def block(self, effect):
        return self.matrix[:, self.spans[effect]]


def _sum_code(values, n):
    """Sum-to-zero contrasts: ``n - 1`` columns, the last level coded -1."""
    out = np.zeros((values.shape[0], n - 1))
    for j in range(n - 1):
        out[:, j] = (values == j).astype(float) - (values == n - 1)
    return out


def factor_block(table: RunTable, name):
    f = table.model.factor(name)
    local = table.local(name)
    codes = _sum_code(local, f.levels)
    if not f.nested_in:
        return codes
    cell = table.column(name) // f.levels
    blocks = [codes * (cell == c)[:, None] for c in range(table.model.n_cells(name))]
    return np.hstack(blocks)


def build_coding_matrix(table: RunTable, model: Optional[DesignModel] = None) -> CodingMatrix:
    """Sum-coded regression matrix for the table's design.

    Nested factors are coded within each ancestor cell and are zero outside
    it. Interaction columns are element-wise products of one column from each
    constituent factor block (first factor slowest).
    """
    if model is not None and model != table.model:
        raise DesignError("run table was not generated from this model")
    model = table.model
    n = table.n_runs
    blocks = {f.name: factor_block(table, f.name) for f in model.factors}
    for i in model.interactions:
        parts = [blocks[f] for f in i.factors]
        cols = [np.prod(np.column_stack(combo), axis=1)
                for combo in itertools.product(*[[p[:, j] for j in range(p.shape[1])] for p in parts])]
        blocks[i.name] = np.column_stack(cols) if cols else np.zeros((n, 0))
    spans = {}
    pieces = [np.ones((n, 1))]
    start = 1
    for e in model.effect_ids:
        width = blocks[e].shape[1]
        spans[e] = slice(start, start + width)
        pieces.append(blocks[e])
        start += width
    return CodingMatrix(np.hstack(pieces), spans)


@dataclass(frozen=True)
class DegreesOfFreedom:
    effects: dict
    residual: int
    total: int

    def __getitem__(self, effect):
        if effect == "Residuals":
            return self.residual
        return self.effects[effect]


def degrees_of_freedom(model: DesignModel, table: Optional[RunTable] = None) -> DegreesOfFreedom:
    """Effect, residual and total degrees of freedom.

    Raises :class:`SaturatedDesignError` when the residual DoF is not positive.
    """
    if table is None:
        table = build_run_table(model)
    model = table.model
    dof = {}
    for f in model.factors:
        dof[f.name] = model.n_cells(f.name) * (f.levels - 1)
    for i in model.interactions:
        dof[i.name] = int(np.prod([dof[f] for f in i.factors]))
    n = table.n_runs
    resid = n - 1 - sum(dof.values())
    if resid <= 0:
        raise SaturatedDesignError(f"design is saturated: residual DoF = {resid} with N = {n}")
    return DegreesOfFreedom(dof, resid, n)
