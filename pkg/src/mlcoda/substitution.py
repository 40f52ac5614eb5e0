"""Isotemporal substitution around reference compositions.

A reference point carries a between composition ``xb0`` and a within
composition ``xw0``.  Moving ``t`` units from part ``d`` to part ``d'``

* at the between level replaces ``xb0`` by ``xb0 - t e_d + t e_d'`` and
  keeps ``xw0``;
* at the within level replaces ``xw0`` by ``xw0 - t e_d + t e_d'`` and
  keeps ``xb0``.

The recomposed composition is ``C(xb (.) xw)`` in both cases.  Since the
model is linear in the coordinates, the predicted change for a posterior
draw is the level's coefficient block times the coordinate difference;
the intercept, covariates and cluster effect cancel.

*Simple* substitution uses one reference (the grand compositional mean or
user-supplied rows).  *Average* substitution uses every cluster's own mean
composition and averages the per-cluster changes draw by draw.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from . import composition as cm
from .errors import (
    BasisMismatch,
    ConfigError,
    InfeasibleReallocation,
    SamePart,
    UnknownPart,
    UnknownTerm,
)

__all__ = [
    "LEVELS",
    "SubstitutionSpec",
    "ReferencePoint",
    "SubstitutionResult",
    "grand_reference",
    "cluster_references",
    "reallocate",
    "is_feasible",
    "delta_outcome",
    "predict",
    "simple_substitution",
    "average_substitution",
]

LEVELS = ("between", "within")
_BLOCK_PREFIX = {"between": "bilr", "within": "wilr"}
RESULT_COLUMNS = ["level", "from", "to", "delta", "mean", "sd", "lower", "upper",
                  "ci_level", "n_draws", "n_infeasible"]
#: Columns of the exported CSV.
CSV_COLUMNS = ["level", "from", "to", "delta", "mean", "lower", "upper",
               "n_draws", "n_infeasible"]


@dataclass(frozen=True)
class SubstitutionSpec:
    """What to reallocate.

    Parameters
    ----------
    deltas : sequence of float
        Amounts moved, in units of the total (e.g. minutes); all positive.
    levels : sequence of {"between", "within"}
    ref : "grandmean", "clustermean" or DataFrame
        A DataFrame is a user grid: one reference per row, with the part
        columns giving the between composition and optional covariate
        columns.  Only used by :func:`simple_substitution`.
    ci_level : float
    """

    deltas: tuple = tuple(range(1, 11))
    levels: tuple = LEVELS
    ref: object = "grandmean"
    ci_level: float = 0.95

    def __post_init__(self):
        deltas = tuple(float(t) for t in np.atleast_1d(self.deltas))
        levels = tuple(self.levels)
        if not deltas:
            raise ConfigError("at least one delta is required")
        if any(not (np.isfinite(t) and t > 0) for t in deltas):
            raise ConfigError(f"deltas must be positive, got {deltas}")
        if not levels:
            raise ConfigError("at least one level is required")
        bad = [lv for lv in levels if lv not in LEVELS]
        if bad:
            raise ConfigError(f"unknown level(s) {bad}; use {LEVELS}")
        if not 0 < self.ci_level < 1:
            raise ConfigError(f"ci_level must lie in (0, 1), got {self.ci_level}")
        if isinstance(self.ref, str) and self.ref not in ("grandmean", "clustermean"):
            raise ConfigError(f"ref must be 'grandmean', 'clustermean' or a grid, got {self.ref!r}")
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "levels", tuple(dict.fromkeys(levels)))


@dataclass(frozen=True, eq=False)
class ReferencePoint:
    """Starting point of a reallocation.

    ``between`` and ``within`` are compositions closed to ``total``;
    ``covariates`` maps extra model terms to the values used for them;
    ``cluster`` names the cluster whose random effect applies, if any.
    """

    between: np.ndarray
    within: np.ndarray
    total: float
    covariates: dict = field(default_factory=dict)
    cluster: Optional[object] = None

    def __post_init__(self):
        for name in ("between", "within"):
            arr = cm.closure(getattr(self, name), self.total)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.between.shape != self.within.shape:
            raise ConfigError("between and within compositions differ in length")

    @property
    def D(self):
        return self.between.shape[-1]

    @property
    def composition(self):
        """Recomposed composition ``C(between (.) within)``."""
        return cm.perturb(self.between, self.within, self.total)


@dataclass(frozen=True, eq=False)
class SubstitutionResult:
    """Summaries of the predicted change, one row per (level, from, to, delta).

    ``table`` columns: ``level, from, to, delta`` (the cell), ``mean``,
    ``sd``, ``lower``, ``upper`` (posterior summaries of the change),
    ``ci_level``, ``n_draws`` and ``n_infeasible`` (references for which
    the reallocation was impossible; all of them yields NaN summaries).
    """

    table: pd.DataFrame
    parts: tuple
    kind: str

    def __len__(self):
        return len(self.table)


def _covariate_terms(fit):
    return [t for t in fit.spec.terms if not re.fullmatch(r"[bw]?ilr\d+", t)]


def _numeric_means(frame, names):
    out = {}
    for name in names:
        col = frame[name]
        if pd.api.types.is_numeric_dtype(col):
            out[name] = float(col.mean())
        else:
            out[name] = col.mode().iloc[0]
    return out


def grand_reference(out, covariates: Sequence[str] = ()) -> ReferencePoint:
    """Grand compositional mean with a neutral within part.

    The between composition is the closed geometric mean of the clusters'
    between compositions, so every cluster counts once whatever its size.
    Numeric covariates are set to their mean over rows, others to their
    most frequent value.
    """
    xb = cm.geometric_mean_composition(out.cluster_comp, out.total)
    return ReferencePoint(xb, cm.neutral(out.D, out.total), out.total,
                          _numeric_means(out.dataset.data, covariates))


def cluster_references(out, covariates: Sequence[str] = (), data=None):
    """One reference per cluster, ordered like ``out.cluster_ids``.

    Covariates are the cluster's own means (modal value for non-numeric
    columns).  `data` may override the frame covariates are read from; it
    must be row-aligned with the complr input.
    """
    frame = out.dataset.data if data is None else data
    frame = frame.reset_index(drop=True)
    refs = []
    neutral = cm.neutral(out.D, out.total)
    groups = {code: idx for code, idx in
              pd.Series(np.arange(len(frame))).groupby(out.cluster_codes)}
    for code, cid in enumerate(out.cluster_ids):
        rows = frame.iloc[groups[code].to_numpy()]
        refs.append(ReferencePoint(out.cluster_comp[code], neutral, out.total,
                                   _numeric_means(rows, covariates), cid))
    return refs


def _part_index(part, parts):
    if isinstance(part, str):
        if part not in parts:
            raise UnknownPart(f"unknown part {part!r}; parts are {tuple(parts)}")
        return parts.index(part)
    idx = int(part)
    if not 0 <= idx < len(parts):
        raise UnknownPart(f"part index {part} outside 0..{len(parts) - 1}")
    return idx


def is_feasible(comp, d, d2, t, total):
    """``0 < t < min(comp[d], total - comp[d2])`` for a single composition."""
    return bool(0 < t < min(comp[d], total - comp[d2]))


def reallocate(ref: ReferencePoint, d, d2, t, level, parts=None) -> ReferencePoint:
    """Move `t` units from part `d` to part `d2` at one level.

    Parameters
    ----------
    ref : ReferencePoint
    d, d2 : int or str
        0-based indices or part names (names need `parts`).
    t : float
        ``t == 0`` returns an identical reference.
    level : {"between", "within"}

    Raises
    ------
    SamePart
        If ``d == d2``.
    InfeasibleReallocation
        Unless ``0 <= t < min(x_d, total - x_d2)`` on the composition of the
        level, which keeps every part of the recomposed composition inside
        ``(0, total)``.
    """
    parts = tuple(parts) if parts is not None else tuple(f"x{i + 1}" for i in range(ref.D))
    i, j = _part_index(d, parts), _part_index(d2, parts)
    if i == j:
        raise SamePart(f"cannot move time from {parts[i]!r} to itself")
    if level not in LEVELS:
        raise ConfigError(f"level must be one of {LEVELS}, got {level!r}")
    if t == 0:
        return replace(ref)
    comp = ref.between if level == "between" else ref.within
    if not is_feasible(comp, i, j, t, ref.total):
        raise InfeasibleReallocation(
            f"cannot move {t:g} from {parts[i]} ({comp[i]:.6g}) to {parts[j]} "
            f"({comp[j]:.6g}) at the {level} level with total {ref.total:g}"
        )
    new = np.array(comp)
    new[i] -= t
    new[j] += t
    if level == "between":
        return replace(ref, between=new)
    return replace(ref, within=new)


def _block(draws, level, k):
    names = [f"{_BLOCK_PREFIX[level]}{i + 1}" for i in range(k)]
    missing = [n for n in names if n not in draws.names]
    if missing:
        raise UnknownTerm(
            f"{level}-level substitution needs coefficients {', '.join(missing)} in the model"
        )
    return draws.flat(names)


def _check_basis(draws, basis):
    if basis is None:
        raise BasisMismatch("substitution needs an ilr basis")
    if draws.basis_id is not None and draws.basis_id != basis.basis_id:
        raise BasisMismatch(
            f"draws were fitted in basis {draws.basis_id}, got basis {basis.basis_id}"
        )


def _coords(ref, level, basis):
    return cm.ilr_forward(ref.between if level == "between" else ref.within, basis)


def delta_outcome(draws, basis, ref: ReferencePoint, ref2: ReferencePoint, level):
    """Per-draw change in the predicted outcome between two references.

    Returns
    -------
    ndarray, shape (chains * draws,)
        ``beta_level @ (z(ref2) - z(ref))`` for every draw.

    Raises
    ------
    BasisMismatch
        If `draws` were fitted under a different basis.
    """
    _check_basis(draws, basis)
    B = _block(draws, level, basis.D - 1)
    dz = _coords(ref2, level, basis) - _coords(ref, level, basis)
    return _apply(B, dz[None, :])[:, 0]


def _apply(B, dz):
    """``B @ dz.T`` without BLAS so the result never depends on threading."""
    out = np.zeros((B.shape[0], dz.shape[0]))
    for k in range(B.shape[1]):
        out += B[:, k:k + 1] * dz[None, :, k]
    return out


def predict(draws, basis, ref: ReferencePoint, include_group=True):
    """Per-draw prediction at a reference point.

    Uses every fixed effect: the intercept, the between and within
    coordinates of `ref`, and ``ref.covariates`` for any other term.  The
    cluster's random effect is added when `ref` names a cluster and
    `include_group` is set.
    """
    _check_basis(draws, basis)
    zb = cm.ilr_forward(ref.between, basis)
    zw = cm.ilr_forward(ref.within, basis)
    x = []
    for name in draws.fixed_names:
        if name == "Intercept":
            x.append(1.0)
        elif re.fullmatch(r"bilr\d+", name):
            x.append(zb[int(name[4:]) - 1])
        elif re.fullmatch(r"wilr\d+", name):
            x.append(zw[int(name[4:]) - 1])
        elif name in ref.covariates:
            x.append(float(ref.covariates[name]))
        else:
            raise UnknownTerm(f"reference point has no value for term {name!r}")
    yhat = draws.fixed() @ np.asarray(x)
    if include_group and ref.cluster is not None:
        yhat = yhat + draws.flat([f"u[{ref.cluster}]"])[:, 0]
    return yhat


def _summaries(values, ci_level):
    alpha = (1 - ci_level) / 2
    lo, hi = np.quantile(values, [alpha, 1 - alpha])
    sd = float(values.std(ddof=1)) if values.size > 1 else np.nan
    return float(values.mean()), sd, float(lo), float(hi)


def _run(draws, basis, parts, refs, spec: SubstitutionSpec, kind):
    _check_basis(draws, basis)
    D = len(parts)
    n_total = draws.n_total
    total = refs[0].total
    records = []
    for level in spec.levels:
        B = _block(draws, level, D - 1)
        # Rows are the references' compositions at this level; each cell
        # applies the same arithmetic as reallocate() to all of them at once.
        C = np.stack([r.between if level == "between" else r.within for r in refs])
        z0 = cm.ilr_forward(C, basis)
        for i in range(D):
            for j in range(D):
                if i == j:
                    continue
                for t in spec.deltas:
                    ok = (0 < t) & (t < C[:, i]) & (t < total - C[:, j])
                    n_bad = int((~ok).sum())
                    if ok.any():
                        new = C[ok].copy()
                        new[:, i] -= t
                        new[:, j] += t
                        dz = cm.ilr_forward(cm.closure(new, total), basis) - z0[ok]
                        per_ref = _apply(B, dz)
                        mean, sd, lo, hi = _summaries(per_ref.mean(axis=1), spec.ci_level)
                    else:
                        mean = sd = lo = hi = np.nan
                    records.append((level, parts[i], parts[j], t, mean, sd, lo, hi,
                                    spec.ci_level, n_total, n_bad))
    table = pd.DataFrame.from_records(records, columns=RESULT_COLUMNS)
    return SubstitutionResult(table, tuple(parts), kind)


def _grid_references(fit, grid):
    out = fit.complr
    parts = list(out.parts)
    missing = [p for p in parts if p not in grid.columns]
    if missing:
        raise ConfigError(f"reference grid lacks part column(s) {missing}")
    covs = _covariate_terms(fit)
    fallback = _numeric_means(out.dataset.data, covs)
    refs = []
    neutral = cm.neutral(out.D, out.total)
    for _, row in grid.iterrows():
        cov = {c: (row[c] if c in grid.columns else fallback[c]) for c in covs}
        refs.append(ReferencePoint(row[parts].to_numpy(dtype=float), neutral,
                                   out.total, cov))
    return refs


def simple_substitution(fit, spec: SubstitutionSpec = SubstitutionSpec()) -> SubstitutionResult:
    """Substitution effects at the grand mean or at user-given references.

    With a multi-row user grid, each draw's change is averaged over the
    grid rows with equal weight (references for which a reallocation is
    infeasible are left out and counted in ``n_infeasible``).
    """
    out = fit.complr
    if isinstance(spec.ref, pd.DataFrame):
        refs = _grid_references(fit, spec.ref)
    elif spec.ref == "clustermean":
        return average_substitution(fit, spec)
    else:
        refs = [grand_reference(out, _covariate_terms(fit))]
    return _run(fit.draws, out.basis, out.parts, refs, spec, "simple")


def average_substitution(fit, spec: SubstitutionSpec = SubstitutionSpec(),
                         data=None) -> SubstitutionResult:
    """Substitution effects averaged over every cluster's own reference.

    For each draw the change is computed at each cluster's mean composition
    and averaged with one vote per cluster; clusters for which the
    reallocation is infeasible are excluded from that cell and counted in
    ``n_infeasible``.
    """
    out = fit.complr
    refs = cluster_references(out, _covariate_terms(fit), data)
    return _run(fit.draws, out.basis, out.parts, refs, spec, "average")
