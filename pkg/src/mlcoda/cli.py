"""Command-line pipeline: simulate, transform, fit, pivot, substitute, plot.

Every subcommand reads its inputs from and writes its outputs to a working
directory, so the steps can be chained::

    mlcoda --workdir run simulate
    mlcoda --workdir run transform
    mlcoda --workdir run fit
    mlcoda --workdir run pivot
    mlcoda --workdir run substitute
    mlcoda --workdir run plot

Settings come from a JSON file (``--config``); any flag given on the
command line overrides the corresponding config field.

Exit codes: 0 success, 2 configuration or schema error, 3 numerical
failure, 4 missing upstream artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .errors import (
    CodaError,
    ConfigError,
    DegenerateDesign,
    NonFiniteLikelihood,
    NonPDCovariance,
    TooFewDraws,
    UpstreamMissing,
)
from .model import ModelSpec, fit_model, resolve_threads
from .multilevel import complr, summary_complr
from .pivot import pivot_coord
from .plotting import plot_data, plot_substitution
from .simulate import SimulationSpec, reference_spec, simulate
from .substitution import LEVELS, SubstitutionSpec, average_substitution, simple_substitution

log = logging.getLogger("mlcoda")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_UPSTREAM = 0, 2, 3, 4
_NUMERIC_ERRORS = (DegenerateDesign, NonFiniteLikelihood, NonPDCovariance, TooFewDraws)

# Artifact layout inside the working directory.
DATA_CSV = "data.csv"
TRUTH_JSON = "truth.json"
COMPLR_DIR = "complr"
FIT_DIR = "fit"
PIVOT_DIR = "pivot"
SUB_DIR = "substitution"
PLOT_DIR = "plots"


def _csv_list(text, cast=str):
    return [cast(v.strip()) for v in text.split(",") if v.strip()]


def _deltas(text):
    """``"1:10"`` (inclusive integer range) or ``"5,10,30"``."""
    if ":" in text:
        lo, hi = (int(v) for v in text.split(":"))
        return list(range(lo, hi + 1))
    return _csv_list(text, float)


def build_parser():
    p = argparse.ArgumentParser(prog="mlcoda", description=__doc__.split("\n")[0])
    p.add_argument("--workdir", default=None, help="artifact directory (default: .)")
    p.add_argument("--config", default=None, help="JSON configuration file")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $MLCODA_THREADS or core count)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a reference dataset")
    s.add_argument("--seed", type=int)
    s.add_argument("--clusters", type=int, dest="n_clusters")
    s.add_argument("--output", help=f"CSV path (default: <workdir>/{DATA_CSV})")

    s = sub.add_parser("transform", help="between/within log-ratio decomposition")
    s.add_argument("--input", help=f"long-format CSV (default: <workdir>/{DATA_CSV})")
    s.add_argument("--parts", type=_csv_list, help="comma-separated part columns")
    s.add_argument("--idvar", help="cluster id column")
    s.add_argument("--outcome")
    s.add_argument("--timevar")
    s.add_argument("--total", type=float)
    s.add_argument("--sbp", help="CSV of -1/0/1 codes (default: pivot SBP)")
    s.add_argument("--transform", choices=("ilr", "alr", "clr"))

    s = sub.add_parser("fit", help="fit the random-intercept model by Gibbs sampling")
    s.add_argument("--formula")
    s.add_argument("--chains", type=int)
    s.add_argument("--iter", type=int)
    s.add_argument("--warmup", type=int)
    s.add_argument("--seed", type=int)

    s = sub.add_parser("pivot", help="pivot-coordinate effects of every part")
    s.add_argument("--method", choices=("rotate", "refit"))
    s.add_argument("--ci", type=float, dest="ci_level")

    s = sub.add_parser("substitute", help="isotemporal substitution")
    s.add_argument("--deltas", type=_deltas, help='e.g. "1:10" or "5,10,30"')
    s.add_argument("--levels", type=_csv_list, help="between,within")
    s.add_argument("--ref", help="grandmean, clustermean or a CSV grid")
    s.add_argument("--ci", type=float, dest="ci_level")

    s = sub.add_parser("plot", help="SVG figures of substitution results")
    s.add_argument("--kind", choices=("simple", "average"))
    s.add_argument("--to", dest="to_parts", type=_csv_list, help="parts to plot (default: all)")
    s.add_argument("--levels", type=_csv_list)
    return p


def _load_config(path):
    if path is None:
        return {}
    cfg = io.read_json(path, "config file")
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    return cfg


def _merge(section: dict, args, keys):
    """Config values overridden by flags that were actually given."""
    out = dict(section)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _section(cfg, name):
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return sec


def _default_formula(out, outcome):
    if outcome is None:
        raise ConfigError("no outcome given; pass --outcome to transform or a formula to fit")
    terms = out.lr_names("between") + out.lr_names("within")
    return f"{outcome} ~ {' + '.join(terms)} + (1 | {out.idvar})"


def cmd_simulate(args, cfg, workdir):
    sim_cfg = _merge(_section(cfg, "simulation"), args, ("seed", "n_clusters"))
    seed = sim_cfg.pop("seed", 123)
    spec = reference_spec(seed=seed)
    if sim_cfg:
        spec = SimulationSpec.from_dict({**spec.to_dict(), **sim_cfg})
    result = simulate(spec)
    path = Path(args.output) if args.output else workdir / DATA_CSV
    path.parent.mkdir(parents=True, exist_ok=True)
    io._write_csv(result.dataset.data, path)
    truth_path = workdir / TRUTH_JSON
    io.write_json({**result.truth, "u": {str(k): v for k, v in result.truth["u"].items()},
                   "spec": spec.to_dict()}, truth_path)
    transform_defaults = {"parts": list(spec._names()), "idvar": spec.idvar,
                          "outcome": spec.outcome, "timevar": spec.timevar,
                          "total": spec.total}
    io.write_json(transform_defaults, workdir / "simulate.json")
    log.info("simulated %d rows in %d clusters -> %s", len(result.dataset.data),
             spec.n_clusters, path)
    return "simulate", spec.to_dict(), [path, truth_path], spec.seed


def cmd_transform(args, cfg, workdir):
    t_cfg = {}
    sim_defaults = workdir / "simulate.json"
    if sim_defaults.exists():
        t_cfg.update(io.read_json(sim_defaults))
    for key in ("input", "parts", "idvar", "outcome", "timevar", "total", "sbp", "transform"):
        if key in cfg:
            t_cfg[key] = cfg[key]
    t_cfg.update(_section(cfg, "transform"))
    t_cfg = _merge(t_cfg, args, ("input", "parts", "idvar", "outcome", "timevar",
                                 "total", "sbp", "transform"))
    for key in ("parts", "idvar"):
        if not t_cfg.get(key):
            raise ConfigError(f"transform needs {key!r} (flag --{key} or config)")
    path = Path(t_cfg.get("input") or workdir / DATA_CSV)
    schema = io.CsvSchema(tuple(t_cfg["parts"]), t_cfg["idvar"],
                          float(t_cfg.get("total", 1.0)),
                          t_cfg.get("outcome"), t_cfg.get("timevar"))
    dataset = io.ingest_csv(path, schema)
    sbp = io.read_sbp_csv(t_cfg["sbp"]) if t_cfg.get("sbp") else None
    out = complr(dataset, sbp=sbp, transform=t_cfg.get("transform", "ilr"))
    outputs = io.write_complr(out, workdir / COMPLR_DIR)
    summary_path = workdir / COMPLR_DIR / "summary.txt"
    summary_path.write_text(summary_complr(out).to_text() + "\n")
    print(summary_complr(out).to_text())
    settings = {k: (str(v) if isinstance(v, Path) else v) for k, v in t_cfg.items()}
    return "transform", settings, [*outputs, summary_path], None


def _load_complr(workdir):
    d = workdir / COMPLR_DIR
    if not (d / "complr.json").exists():
        raise UpstreamMissing(f"no transform output in {d}; run 'mlcoda transform' first")
    return io.read_complr(d)


def _load_fit(workdir, out):
    d = workdir / FIT_DIR
    if not (d / "spec.json").exists():
        raise UpstreamMissing(f"no fit in {d}; run 'mlcoda fit' first")
    return io.read_fit(d, out)


def cmd_fit(args, cfg, workdir):
    out = _load_complr(workdir)
    m_cfg = _merge(_section(cfg, "model"), args, ("formula", "chains", "iter", "warmup", "seed"))
    formula = m_cfg.pop("formula", None) or _default_formula(out, out.dataset.outcome)
    known = {"chains", "iter", "warmup", "seed", "prior_shape", "prior_rate"}
    unknown = set(m_cfg) - known
    if unknown:
        raise ConfigError(f"unknown model setting(s): {sorted(unknown)}")
    spec = ModelSpec.from_formula(formula, **m_cfg)
    fit = fit_model(out, spec, threads=args.threads)
    paths = io.write_fit(fit, workdir / FIT_DIR)
    print(fit.summary().round(3).to_string())
    return "fit", spec.to_dict(), paths, spec.seed


def cmd_pivot(args, cfg, workdir):
    out = _load_complr(workdir)
    fit = _load_fit(workdir, out)
    p_cfg = _merge(_section(cfg, "pivot"), args, ("method", "ci_level"))
    method = p_cfg.get("method", "rotate")
    table = pivot_coord(fit, method, p_cfg.get("ci_level", 0.95), threads=args.threads)
    d = workdir / PIVOT_DIR
    d.mkdir(parents=True, exist_ok=True)
    path = d / f"pivot_{method}.csv"
    io._write_csv(table.reset_index(), path)
    print(table.round(3).to_string())
    return f"pivot_{method}", p_cfg, [path], fit.spec.seed


def _substitution_spec(out, s_cfg):
    ref = s_cfg.get("ref", "grandmean")
    if ref not in ("grandmean", "clustermean"):
        ref = io._read_csv(io._require(Path(ref), "reference grid"))
    levels = s_cfg.get("levels", list(LEVELS))
    return SubstitutionSpec(deltas=tuple(s_cfg.get("deltas", range(1, 11))),
                            levels=tuple(levels), ref=ref,
                            ci_level=s_cfg.get("ci_level", 0.95))


def cmd_substitute(args, cfg, workdir):
    out = _load_complr(workdir)
    fit = _load_fit(workdir, out)
    s_cfg = _merge(_section(cfg, "substitution"), args, ("deltas", "levels", "ref", "ci_level"))
    spec = _substitution_spec(out, s_cfg)
    if isinstance(spec.ref, str) and spec.ref == "clustermean":
        result = average_substitution(fit, spec)
    else:
        result = simple_substitution(fit, spec)
    paths = io.write_substitution(result, workdir / SUB_DIR)
    print(result.table.round(4).to_string(index=False))
    settings = {**s_cfg, "deltas": list(spec.deltas), "levels": list(spec.levels)}
    return f"substitute_{result.kind}", settings, list(paths), fit.spec.seed


def cmd_plot(args, cfg, workdir):
    meta = io.read_json(workdir / COMPLR_DIR / "complr.json", "complr metadata")
    parts = tuple(meta["parts"])
    p_cfg = _merge(_section(cfg, "plot"), args, ("kind", "to_parts", "levels"))
    kinds = [p_cfg["kind"]] if p_cfg.get("kind") else [
        k for k in ("simple", "average") if (workdir / SUB_DIR / f"{k}.csv").exists()]
    if not kinds:
        raise UpstreamMissing(f"no substitution results in {workdir / SUB_DIR}")
    d = workdir / PLOT_DIR
    d.mkdir(parents=True, exist_ok=True)
    outputs = []
    for kind in kinds:
        result = io.read_substitution(workdir / SUB_DIR / f"{kind}.csv", parts, kind)
        levels = p_cfg.get("levels") or [lv for lv in LEVELS if lv in set(result.table["level"])]
        for level in levels:
            for to in p_cfg.get("to_parts") or parts:
                table = plot_data(result, to=to, level=level)
                if table.empty:
                    continue
                stem = f"{kind}_{level}_{to}"
                io._write_csv(table, d / f"{stem}.csv")
                plot_substitution(result, to, level, d / f"{stem}.svg")
                outputs += [d / f"{stem}.csv", d / f"{stem}.svg"]
    log.info("wrote %d plot files to %s", len(outputs), d)
    return "plot", p_cfg, outputs, None


COMMANDS = {
    "simulate": cmd_simulate,
    "transform": cmd_transform,
    "fit": cmd_fit,
    "pivot": cmd_pivot,
    "substitute": cmd_substitute,
    "plot": cmd_plot,
}


def exit_code(exc):
    if isinstance(exc, UpstreamMissing):
        return EXIT_UPSTREAM
    if isinstance(exc, _NUMERIC_ERRORS):
        return EXIT_NUMERIC
    return EXIT_CONFIG


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        workdir = Path(args.workdir or cfg.get("workdir") or ".")
        workdir.mkdir(parents=True, exist_ok=True)
        if args.threads is None and "threads" in cfg:
            args.threads = int(cfg["threads"])
        resolve_threads(args.threads)
        step, settings, outputs, seed = COMMANDS[args.command](args, cfg, workdir)
        io.update_manifest(workdir, step, json.loads(json.dumps(settings, default=str)),
                           outputs, seed)
    except CodaError as exc:
        print(f"mlcoda {args.command}: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
