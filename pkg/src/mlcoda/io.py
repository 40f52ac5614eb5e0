"""Reading and writing pipeline artifacts.

Floats are written with Python's shortest round-trip representation, so
every CSV written here re-reads to the identical binary value.
"""

from __future__ import annotations

import hashlib
import json
import platform
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .errors import SchemaError, UpstreamMissing
from .model import CodaFit, ModelSpec, PosteriorDraws, build_design, summarize_fit
from .multilevel import ComplrOutput, LongDataset, complr
from .substitution import CSV_COLUMNS, SubstitutionResult

__all__ = [
    "CsvSchema",
    "ingest_csv",
    "write_complr",
    "read_complr",
    "write_fit",
    "read_fit",
    "write_substitution",
    "read_substitution",
    "read_sbp_csv",
    "sha256_file",
    "update_manifest",
    "write_json",
    "read_json",
]


@dataclass(frozen=True)
class CsvSchema:
    """Column roles of a long-format input file."""

    parts: tuple
    idvar: str
    total: float = 1.0
    outcome: Optional[str] = None
    timevar: Optional[str] = None


def _require(path: Path, what: str):
    if not path.exists():
        raise UpstreamMissing(f"{what} not found: {path}")
    return path


def _read_csv(path):
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path} is empty") from exc
    except pd.errors.ParserError as exc:
        raise SchemaError(f"cannot parse {path}: {exc}") from exc


def _write_csv(frame: pd.DataFrame, path: Path):
    # No float_format: pandas then uses repr, which round-trips exactly.
    frame.to_csv(path, index=False, lineterminator="\n")


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path, what="JSON file"):
    path = _require(Path(path), what)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON in {path}: {exc}") from exc


def ingest_csv(path, schema: CsvSchema) -> LongDataset:
    """Read a long-format CSV (header row required) into a dataset.

    Raises
    ------
    UpstreamMissing
        If the file does not exist.
    SchemaError
        If a required column is absent or a part column is not numeric.
    NonPositivePart
        With ``rows`` holding the 1-based data rows that have a part <= 0.
    """
    frame = _read_csv(_require(Path(path), "input CSV"))
    return LongDataset(frame, tuple(schema.parts), schema.idvar, schema.total,
                       schema.outcome, schema.timevar)


def read_sbp_csv(path):
    """SBP matrix from a CSV of -1/0/1 codes (a header row is optional)."""
    path = _require(Path(path), "SBP file")
    raw = pd.read_csv(path, header=None)
    try:
        return raw.to_numpy(dtype=int)
    except ValueError:
        return pd.read_csv(path).to_numpy(dtype=int)


# -- complr -----------------------------------------------------------------

def write_complr(out: ComplrOutput, directory):
    """Write ``complr.csv`` (input columns plus log-ratios) and ``complr.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_csv(out.to_frame(), directory / "complr.csv")
    ds = out.dataset
    meta = {
        "parts": list(ds.parts),
        "idvar": ds.idvar,
        "total": ds.total,
        "outcome": ds.outcome,
        "timevar": ds.timevar,
        "transform": out.transform,
        "input_columns": [str(c) for c in ds.data.columns],
        "sbp": None if out.basis is None else out.basis.sbp.entries.tolist(),
        "basis_id": None if out.basis is None else out.basis.basis_id,
        "nobs": out.nobs,
        "ngrps": out.ngrps,
    }
    write_json(meta, directory / "complr.json")
    return directory / "complr.csv", directory / "complr.json"


def read_complr(directory, atol=1e-12) -> ComplrOutput:
    """Rebuild complr output from disk and check it against the stored columns."""
    directory = Path(directory)
    meta = read_json(directory / "complr.json", "complr metadata")
    frame = _read_csv(_require(directory / "complr.csv", "complr CSV"))
    cols = meta["input_columns"]
    missing = [c for c in cols if c not in frame.columns]
    if missing:
        raise SchemaError(f"complr CSV lacks column(s) {missing}")
    ds = LongDataset(frame[cols].copy(), tuple(meta["parts"]), meta["idvar"],
                     meta["total"], meta.get("outcome"), meta.get("timevar"))
    out = complr(ds, sbp=meta.get("sbp"), transform=meta["transform"])
    if meta.get("basis_id") is not None and out.basis.basis_id != meta["basis_id"]:
        raise SchemaError("stored basis id does not match the stored SBP")
    stored = frame[out.lr_names("total") + out.lr_names("between") + out.lr_names("within")]
    fresh = np.hstack([out.lr, out.blr, out.wlr])
    if not np.allclose(stored.to_numpy(dtype=float), fresh, rtol=0, atol=atol):
        raise SchemaError("stored log-ratio columns disagree with the recomputed ones")
    return out


# -- fit --------------------------------------------------------------------

def write_fit(fit: CodaFit, directory, ci_level=0.95):
    """Write ``draws.csv`` (long format), ``summary.csv`` and ``spec.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_csv(fit.draws.to_long_frame(), directory / "draws.csv")
    summary = summarize_fit(fit.draws, ci_level).reset_index()
    _write_csv(summary, directory / "summary.csv")
    spec = fit.spec.to_dict()
    spec.update({
        "basis_id": fit.draws.basis_id,
        "parameters": list(fit.draws.names),
        "fixed_effects": list(fit.draws.fixed_names),
        "group_ids": [_jsonable(g) for g in fit.draws.group_ids],
        "sampler": "blocked Gibbs (beta with cluster effects integrated out, then cluster effects, then variances)",
    })
    write_json(spec, directory / "spec.json")
    return [directory / n for n in ("draws.csv", "summary.csv", "spec.json")]


def _jsonable(v):
    return v.item() if isinstance(v, np.generic) else v


def read_fit(directory, out: ComplrOutput) -> CodaFit:
    """Load a fit written by :func:`write_fit` against its complr output."""
    directory = Path(directory)
    meta = read_json(directory / "spec.json", "fit spec")
    spec = ModelSpec.from_dict(meta)
    long = _read_csv(_require(directory / "draws.csv", "draws CSV"))
    need = {"chain", "iter", "parameter", "value"}
    if not need <= set(long.columns):
        raise SchemaError(f"draws CSV needs columns {sorted(need)}")
    names = tuple(meta["parameters"])
    chains, iters = long["chain"].max(), long["iter"].max()
    if len(long) != chains * iters * len(names):
        raise SchemaError("draws CSV is not a complete chain x iter x parameter table")
    # Rows were written chain-major, then iteration, then parameter.
    arr = long["value"].to_numpy(dtype=float).reshape(chains, iters, len(names))
    if list(long["parameter"].iloc[: len(names)]) != list(names):
        raise SchemaError("draws CSV parameter order differs from spec.json")
    arr.setflags(write=False)
    draws = PosteriorDraws(arr, names, int(meta["seed"]), meta.get("basis_id"),
                           tuple(meta["fixed_effects"]), tuple(meta.get("group_ids", ())))
    return CodaFit(out, spec, build_design(out, spec), draws)


# -- substitution -----------------------------------------------------------

def write_substitution(result: SubstitutionResult, directory, stem=None):
    """Write ``<stem>.csv`` and ``<stem>.json``; stem defaults to the result kind."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or result.kind
    table = result.table
    csv_path = directory / f"{stem}.csv"
    _write_csv(table[CSV_COLUMNS], csv_path)
    json_path = directory / f"{stem}.json"
    records = json.loads(table.to_json(orient="records", double_precision=15))
    write_json({"kind": result.kind, "parts": list(result.parts),
                "records": records}, json_path)
    return csv_path, json_path


def read_substitution(path, parts, kind=None) -> SubstitutionResult:
    path = _require(Path(path), "substitution CSV")
    table = _read_csv(path)
    missing = [c for c in CSV_COLUMNS if c not in table.columns]
    if missing:
        raise SchemaError(f"substitution CSV lacks column(s) {missing}")
    return SubstitutionResult(table, tuple(parts), kind or path.stem)


# -- manifest -----------------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    import matplotlib
    import scipy

    from . import __version__

    return {
        "mlcoda": __version__,
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "matplotlib": matplotlib.__version__,
    }


def update_manifest(workdir, step, settings, outputs, seed=None):
    """Record one pipeline step in ``run.json`` (versions, seed, output hashes)."""
    workdir = Path(workdir)
    path = workdir / "run.json"
    manifest = json.loads(path.read_text()) if path.exists() else {"steps": {}}
    manifest["versions"] = _versions()
    manifest["steps"][step] = {
        "seed": seed,
        "settings": settings,
        "outputs": {str(Path(p).relative_to(workdir)): sha256_file(p) for p in outputs},
    }
    write_json(manifest, path)
    return path
