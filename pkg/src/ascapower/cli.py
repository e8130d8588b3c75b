"""Command-line entry point: ``ascapower {rpc,apc,table,theory,simulate}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
On failure a JSON error record is printed to stderr and, when possible,
written to ``<out>/error.json``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__, _rng
from .config import ConfigError, DataError, ingest_dataset, parse_config, write_matrix, write_run_table
from .curves import absolute_power_curve, relative_power_curve
from .decompose import LeastSquares, asca_table, decompose, f_ratios
from .design import DesignError, SaturatedDesignError, build_coding_matrix, build_run_table, degrees_of_freedom
from .permute import permutation_test
from .plot import expected_f_svg, power_curve_svg
from .simulate import assemble_dataset, draw_parts
from .theory import VarianceParams, expected_f

log = logging.getLogger("ascapower")

THREADS_ENV = "ASCAPOWER_THREADS"


@dataclass
class RunManifest:
    mode: str
    config: dict
    seed: int
    version: str
    started: str
    finished: str = ""
    files: list = field(default_factory=list)

    def add(self, path):
        data = Path(path).read_bytes()
        self.files.append({"name": Path(path).name, "sha256": hashlib.sha256(data).hexdigest(),
                           "bytes": len(data)})

    def write(self, out):
        path = Path(out) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, default=str) + "\n", encoding="utf-8")
        return path


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _snapshot(model, cfg, options):
    def eff(e):
        spec = model.effect(e)
        return {"coeff": spec.coeff, "dist": spec.dist.to_config()}

    snap = {
        "factors": [{"name": f.name, "levels": f.levels, "nested_in": list(f.nested_in), **eff(f.name)}
                    for f in model.factors],
        "interactions": [{"name": i.name, "factors": list(i.factors), **eff(i.name)}
                         for i in model.interactions],
        "residual": {"coeff": model.residual_coeff, "dist": model.residual_dist.to_config()},
        "sim": asdict(cfg),
    }
    snap.update({k: v for k, v in options.items() if k not in ("base_dir", "covariate")})
    if "covariate" in options:
        snap["covariate"] = options["covariate"].to_config()
    return json.loads(json.dumps(snap, default=str))


def reference_roles(model):
    """Map the reference roles A, B, C, AB onto this model's effect ids."""
    tops = [f for f in model.factors if not f.nested_in]
    nested = [f for f in model.factors if f.nested_in]
    ok = (len(tops) == 2 and len(nested) == 1 and len(model.interactions) == 1
          and len(nested[0].nested_in) == 1 and set(model.interactions[0].factors) == {t.name for t in tops})
    if not ok:
        raise DesignError("theory mode needs two crossed factors, one factor nested in one of them "
                          "and their two-way interaction")
    a = model.factor(nested[0].nested_in[0])
    b = next(t for t in tops if t.name != a.name)
    return {"A": a.name, "B": b.name, "C": nested[0].name, "AB": model.interactions[0].name}


def _theory(model, cfg, out):
    roles = reference_roles(model)
    k = {role: model.coeff(e) for role, e in roles.items()}
    design = {"r": model.factor(roles["C"]).levels, "levels_a": model.factor(roles["A"]).levels,
              "levels_b": model.factor(roles["B"]).levels}
    thetas = cfg.theta_grid()
    profiles = {model.label(e): [] for e in roles.values()}
    lines = ["theta,effect,expected_f"]
    for t in thetas:
        p = VarianceParams.from_coefficients(t, k["A"], k["B"], k["C"], k["AB"], model.residual_coeff, **design)
        ef = expected_f(p)
        for role, e in roles.items():
            profiles[model.label(e)].append(ef[role])
            lines.append(f"{float(t)!r},{model.label(e)},{float(ef[role])!r}")
    csv_path = out / "theory.csv"
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    svg = out / "theory.svg"
    expected_f_svg(thetas, profiles, svg)
    return [csv_path, svg]


def _table(model, cfg, options, out):
    if "data" not in options or "design" not in options:
        raise ConfigError(["table mode needs a data CSV and a design CSV (--data/--design or table.data/design)"])
    X, table = ingest_dataset(options["data"], options["design"], model)
    coding = build_coding_matrix(table)
    dof = degrees_of_freedom(model, table)
    solver = LeastSquares(coding)
    dec = decompose(X, coding, model, dof, solver)
    res = permutation_test(X, coding, model, dof, cfg.perms, _rng.stream(cfg.seed, _rng.PERMUTATIONS),
                           statistic=cfg.statistic, solver=solver)
    tab = asca_table(dec, model, f_ratios(dec, model), res.pvalues)
    p1 = out / "asca_table.csv"
    p1.write_text(tab.to_csv(), encoding="utf-8")
    p2 = out / "null_distribution.csv"
    p2.write_text(res.to_csv(), encoding="utf-8")
    print(tab)
    return [p1, p2]


def _simulate(model, cfg, options, out):
    table = build_run_table(model)
    cov = options.get("covariate")
    parts = draw_parts(model, table, cfg.n_responses, cfg.seed, 0, covariate=cov)
    ds = assemble_dataset(model, parts, options["theta"], options.get("fixed", ()),
                          options.get("covariate_coeff", 0.0))
    files = []
    for name, mat in [("X", ds.X), ("noise", ds.noise), ("structural", ds.structural)]:
        p = out / f"{name}.csv"
        write_matrix(p, mat)
        files.append(p)
    for e, mat in ds.components.items():
        p = out / f"effect_{e}.csv"
        write_matrix(p, mat)
        files.append(p)
    design = out / "design.csv"
    write_run_table(design, table)
    files.append(design)
    prov = out / "provenance.json"
    prov.write_text(json.dumps({"seed": cfg.seed, "theta": ds.theta, "coefficients": ds.coefficients,
                                "n_responses": cfg.n_responses, "fixed": list(ds.fixed),
                                "covariate_coeff": ds.covariate_coeff, "stream_key": [0]},
                               indent=2) + "\n", encoding="utf-8")
    files.append(prov)
    return files


def run(mode, config, out, overrides=None) -> RunManifest:
    """Execute one run and write its outputs plus ``manifest.json`` to ``out``."""
    started = _now()
    overrides = dict(overrides or {})
    table_paths = {k: overrides.pop(k) for k in ("data", "design") if overrides.get(k) is not None}
    overrides.pop("data", None)
    overrides.pop("design", None)
    model, cfg, options = parse_config(config, {"mode": mode, **overrides})
    options.update({k: Path(v) for k, v in table_paths.items()})
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    mode = options["mode"]
    fixed = options.get("fixed", ())
    cov = options.get("covariate")
    cov_k = options.get("covariate_coeff", 0.0)
    if mode == "rpc":
        curve = relative_power_curve(model, build_run_table(model), cfg, fixed, cov, cov_k)
        files = _emit_curve(curve, out, "rpc")
    elif mode == "apc":
        curve = absolute_power_curve(model, cfg, options["theta"], options["f_rep"], fixed, cov, cov_k)
        files = _emit_curve(curve, out, "apc")
    elif mode == "theory":
        files = _theory(model, cfg, out)
    elif mode == "table":
        files = _table(model, cfg, options, out)
    else:
        files = _simulate(model, cfg, options, out)
    manifest = RunManifest(mode, _snapshot(model, cfg, options), cfg.seed, __version__, started)
    for f in files:
        manifest.add(f)
    manifest.finished = _now()
    manifest.write(out)
    return manifest


def _emit_curve(curve, out, mode):
    paths = [out / f"{mode}_curve.csv", out / f"{mode}_indicators.csv", out / f"{mode}_curve.svg"]
    paths[0].write_text(curve.to_csv(), encoding="utf-8")
    paths[1].write_text(curve.indicators_csv(), encoding="utf-8")
    power_curve_svg(curve, paths[2])
    return paths


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML configuration file")
    common.add_argument("--out", default="out", help="output directory (default: ./out)")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--reps", type=int, help="repetitions R override")
    common.add_argument("--perms", type=int, help="permutations P override")
    common.add_argument("--threads", type=int,
                        help=f"worker threads (default: ${THREADS_ENV} or all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ascapower", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="mode", required=True)
    sub.add_parser("rpc", parents=[common], help="relative population curve (power vs θ)")
    apc = sub.add_parser("apc", parents=[common], help="absolute population curve (power vs η)")
    apc.add_argument("--theta", type=float, help="fixed effect size")
    apc.add_argument("--factor", help="factor name to enlarge, or 'whole'")
    tab = sub.add_parser("table", parents=[common], help="permutation-tested ASCA table of a dataset")
    tab.add_argument("--data", help="response matrix CSV (no header)")
    tab.add_argument("--design", help="run table CSV (header of factor names)")
    sub.add_parser("theory", parents=[common], help="expected F-ratios over the θ grid")
    sim = sub.add_parser("simulate", parents=[common], help="dump one simulated dataset")
    sim.add_argument("--theta", type=float, help="effect size")
    return parser


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        return int(env)
    return os.cpu_count() or 1


def _fail(code, exc, out):
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ConfigError):
        record["problems"] = exc.problems
    try:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "error.json").write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    except OSError:
        pass
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {
        "seed": args.seed,
        "reps": args.reps,
        "perms": args.perms,
        "workers": _threads(args.threads),
        "theta": getattr(args, "theta", None),
        "f_rep": getattr(args, "factor", None),
        "data": getattr(args, "data", None),
        "design": getattr(args, "design", None),
    }
    try:
        run(args.mode, args.config, args.out, overrides)
    except SaturatedDesignError as exc:
        return _fail(2, exc, args.out)
    except (ConfigError, DesignError, DataError, FileNotFoundError) as exc:
        return _fail(1, exc, args.out)
    except Exception as exc:  # noqa: BLE001  -- every failure gets an error record
        log.debug("run failed", exc_info=True)
        return _fail(2, exc, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
