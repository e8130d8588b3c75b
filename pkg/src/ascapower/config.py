"""YAML run configuration and CSV dataset ingestion.

Configuration layout::

    mode: rpc                  # rpc | apc | table | theory | simulate
    factors:
      - {name: A, levels: 4, coeff: 0.2, dist: normal}
      - {name: B, levels: 3, coeff: 0.2}
      - {name: C, levels: 4, nested_in: [A], coeff: 0.2}
    interactions:
      - {factors: [A, B], coeff: 0.2}
    residual: {coeff: 1.0, dist: normal}
    sim: {R: 1000, P: 200, delta: 0.1, steps: 10, alpha: 0.05, M: 400, seed: 1}
    apc: {f_rep: whole, theta: 0.5}
    simulate: {theta: 0.5}
    table: {data: data.csv, design: design.csv}

``dist`` is ``normal``, ``uniform``, ``exp3`` or a mapping such as
``{kind: uniform, a: 2.0}``. Relative paths resolve against the config file.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np
import yaml

from .curves import WHOLE, CurveConfig
from .design import DesignError, DesignModel, FactorSpec, InteractionSpec, make_run_table, validate_model
from .distributions import Distribution

log = logging.getLogger(__name__)

MODES = ("rpc", "apc", "table", "theory", "simulate")

_SIM_KEYS = {
    "R": ("reps", int),
    "P": ("perms", int),
    "delta": ("delta", float),
    "steps": ("n_steps", int),
    "alpha": ("alpha", float),
    "M": ("n_responses", int),
    "seed": ("seed", int),
    "B": ("n_boot", int),
    "level": ("ci_level", float),
    "threads": ("workers", int),
    "statistic": ("statistic", str),
    "grid": ("grid", tuple),
}


class ConfigError(ValueError):
    """Every problem found in a configuration, listed in ``problems``."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


def _as_list(v):
    if v is None:
        return []
    return list(v) if isinstance(v, (list, tuple)) else [v]


def load_yaml(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError([f"{path}: syntax error at {where}: {exc.problem}"]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: syntax error: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return doc


def model_from_dict(doc, problems, warned):
    factors, interactions = [], []
    for j, f in enumerate(_as_list(doc.get("factors"))):
        where = f"factors[{j}]"
        if not isinstance(f, dict) or "name" not in f or "levels" not in f:
            problems.append(f"{where}: needs 'name' and 'levels'")
            continue
        try:
            factors.append(FactorSpec(
                name=str(f["name"]),
                levels=int(f["levels"]),
                nested_in=tuple(str(a) for a in _as_list(f.get("nested_in"))),
                coeff=float(f.get("coeff", 0.0)),
                dist=Distribution.parse(f.get("dist")),
            ))
        except (TypeError, ValueError) as exc:
            problems.append(f"{where}: {exc}")
    if not factors and not problems:
        problems.append("factors: at least one factor is required")
    for j, i in enumerate(_as_list(doc.get("interactions"))):
        where = f"interactions[{j}]"
        if not isinstance(i, dict) or "factors" not in i:
            problems.append(f"{where}: needs 'factors'")
            continue
        try:
            interactions.append(InteractionSpec(
                factors=tuple(str(a) for a in _as_list(i["factors"])),
                coeff=float(i.get("coeff", 0.0)),
                dist=Distribution.parse(i.get("dist")),
                name=str(i.get("name", "")),
            ))
        except (TypeError, ValueError) as exc:
            problems.append(f"{where}: {exc}")
    resid = doc.get("residual") or {}
    if "coeff" not in resid:
        warned.append("residual.coeff missing; using k_e = 1")
    try:
        k_e = float(resid.get("coeff", 1.0))
        dist = Distribution.parse(resid.get("dist"))
    except (TypeError, ValueError) as exc:
        problems.append(f"residual: {exc}")
        k_e, dist = 1.0, Distribution()
    model = DesignModel(tuple(factors), tuple(interactions), k_e, dist)
    problems.extend(validate_model(model))
    return model


def curve_config_from_dict(sim, problems, overrides=None):
    kw = {}
    for key, value in (sim or {}).items():
        if key not in _SIM_KEYS:
            problems.append(f"sim.{key}: unknown key")
            continue
        name, cast = _SIM_KEYS[key]
        try:
            kw[name] = cast(value)
        except (TypeError, ValueError):
            problems.append(f"sim.{key}: cannot interpret {value!r}")
    for name, value in (overrides or {}).items():
        if value is not None:
            kw[name] = value
    try:
        return CurveConfig(**kw)
    except ValueError as exc:
        problems.extend(f"sim: {p}" for p in str(exc).split("; "))
        return None


def parse_config(path, overrides=None):
    """Read a configuration file.

    Returns ``(model, curve_config, options)``; ``options`` holds the mode,
    mode-specific settings and any warnings. Raises :class:`ConfigError`
    listing every problem found.
    """
    path = Path(path)
    doc = load_yaml(path)
    problems, warned = [], []
    overrides = dict(overrides or {})
    mode = overrides.pop("mode", None) or doc.get("mode")
    if mode not in MODES:
        problems.append(f"mode: expected one of {MODES}, got {mode!r}")
    model = model_from_dict(doc, problems, warned)
    theta = overrides.pop("theta", None)
    f_rep = overrides.pop("f_rep", None)
    cfg = curve_config_from_dict(doc.get("sim"), problems, overrides)
    apc = doc.get("apc") or {}
    sim_opts = doc.get("simulate") or {}
    options = {"mode": mode, "warnings": warned, "base_dir": path.parent}
    if mode == "apc":
        options["f_rep"] = str(f_rep or apc.get("f_rep", WHOLE))
        options["theta"] = float(theta if theta is not None else apc.get("theta", 0.5))
        if options["f_rep"] not in (WHOLE, *model.factor_names):
            problems.append(f"apc.f_rep: unknown factor {options['f_rep']!r}")
        if options["theta"] < 0:
            problems.append("apc.theta: must be ≥ 0")
    elif mode == "simulate":
        options["theta"] = float(theta if theta is not None else sim_opts.get("theta", 1.0))
    elif mode == "table":
        tab = doc.get("table") or {}
        for key in ("data", "design"):
            if key in tab:
                options[key] = path.parent / tab[key]
    for key in ("fixed",):
        vals = [str(v) for v in _as_list(doc.get(key))]
        unknown = [v for v in vals if v not in model.effect_ids]
        if unknown:
            problems.append(f"{key}: unknown effects {unknown}")
        options[key] = tuple(vals)
    cov = doc.get("covariate")
    if cov:
        try:
            options["covariate"] = Distribution.parse(cov.get("dist"))
            options["covariate_coeff"] = float(cov.get("coeff", 0.0))
        except (AttributeError, TypeError, ValueError) as exc:
            problems.append(f"covariate: {exc}")
    if problems:
        raise ConfigError(problems)
    for w in warned:
        log.warning(w)
    return model, cfg, options


# -- datasets -----------------------------------------------------------------


class DataError(ValueError):
    pass


def read_matrix(path):
    """Numeric CSV without header into an ``(N, M)`` float array."""
    rows = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for r, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}: row {r} has {len(row)} cells, expected {width} (ragged rows)")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                c = next(j for j, v in enumerate(row) if not _is_float(v))
                raise DataError(f"{path}: row {r}, column {c + 1}: non-numeric cell {row[c]!r}") from None
    if not rows:
        raise DataError(f"{path}: no data")
    return np.asarray(rows)


def _is_float(v):
    try:
        float(v)
        return True
    except ValueError:
        return False


def read_run_table(path, model: DesignModel):
    """Run-table CSV: header of factor names, one row of integer levels per run."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty run table") from None
        missing = [n for n in model.factor_names if n not in header]
        if missing:
            raise DataError(f"{path}: header lacks factor columns {missing}")
        cols = [header.index(n) for n in model.factor_names]
        rows = []
        for r, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            vals = []
            for c in cols:
                try:
                    vals.append(int(row[c]))
                except ValueError:
                    raise DataError(f"{path}: row {r}, column {header[c]!r}: "
                                    f"level {row[c]!r} is not an integer") from None
            rows.append(vals)
    try:
        return make_run_table(model, np.asarray(rows, dtype=np.int64).reshape(-1, len(cols)))
    except DesignError as exc:
        raise DataError(f"{path}: {exc}") from None


def ingest_dataset(data_path, design_path, model: DesignModel):
    """Load a response matrix and its run table, checking they agree."""
    X = read_matrix(data_path)
    table = read_run_table(design_path, model)
    if X.shape[0] != table.n_runs:
        raise DataError(f"{data_path} has {X.shape[0]} rows but {design_path} has {table.n_runs} runs")
    return X, table


def write_run_table(path, table):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.model.factor_names)
        w.writerows(table.levels.tolist())


def write_matrix(path, X):
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.asarray(X, dtype=float).tolist():
            fh.write(",".join(repr(v) for v in row) + "\n")
