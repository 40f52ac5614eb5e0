"""Between/within decomposition of clustered compositions.

For observation ``i`` of cluster ``j`` the composition splits as

    x_ij = xb_j (+) xw_ij

where ``xb_j`` is the closed per-part geometric mean of the cluster and
``xw_ij = x_ij (-) xb_j`` is the deviation from it.  Because every log-ratio
transform used here is linear in ``log x``, the split carries over additively
to the coordinates: ``lr(x_ij) = lr(xb_j) + lr(xw_ij)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from . import composition as cm
from .errors import BasisDimensionMismatch, NonPositivePart, SchemaError
from .sbp import IlrBasis, SbpMatrix, contrast_matrix, default_pivot_sbp, validate_sbp

__all__ = ["LongDataset", "ComplrOutput", "ComplrSummary", "complr", "summary_complr"]

TRANSFORMS = ("ilr", "alr", "clr")


@dataclass(frozen=True)
class LongDataset:
    """Long-format clustered compositional data (one row per observation).

    Parameters
    ----------
    data : DataFrame
        Must contain the part columns and `idvar`; any other columns
        (outcome, time index, covariates) are carried along untouched.
    parts : sequence of str
    idvar : str
        Column identifying the level-2 unit.  Exactly one grouping level is
        supported.
    total : float
    outcome, timevar : str, optional
    """

    data: pd.DataFrame
    parts: tuple
    idvar: str
    total: float = 1.0
    outcome: Optional[str] = None
    timevar: Optional[str] = None

    def __post_init__(self):
        if not isinstance(self.idvar, str):
            raise SchemaError(
                "exactly one cluster column is supported; more than two "
                f"levels cannot be disaggregated (got idvar={self.idvar!r})"
            )
        parts = tuple(self.parts)
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "total", float(self.total))
        if len(parts) < 2:
            raise SchemaError("at least two compositional parts are required")
        wanted = [*parts, self.idvar]
        wanted += [c for c in (self.outcome, self.timevar) if c is not None]
        missing = [c for c in wanted if c not in self.data.columns]
        if missing:
            raise SchemaError(f"missing column(s): {', '.join(missing)}")
        if self.data[self.idvar].isna().any():
            raise SchemaError(f"cluster id column {self.idvar!r} has missing values")
        if not (np.isfinite(self.total) and self.total > 0):
            raise SchemaError(f"total must be positive, got {self.total}")
        values = self.parts_array()
        bad = ~np.isfinite(values) | (values <= 0)
        if bad.any():
            rows = (np.flatnonzero(bad.any(axis=1)) + 1).tolist()
            raise NonPositivePart(
                f"non-positive or missing parts in data row(s) {rows[:10]}"
                + (" ..." if len(rows) > 10 else ""),
                rows=rows,
            )

    def parts_array(self):
        try:
            return self.data.loc[:, list(self.parts)].to_numpy(dtype=float)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"part columns must be numeric: {exc}") from exc

    @property
    def n_clusters(self):
        return self.data[self.idvar].nunique()


@dataclass(frozen=True, eq=False)
class ComplrOutput:
    """Compositions and log-ratios at the total, between and within level.

    Arrays are row-aligned with ``dataset.data``.  ``lr``, ``blr`` and
    ``wlr`` hold the transformed coordinates (``ilr``/``bilr``/``wilr`` for
    the default ilr transform); ``comp``, ``between`` and ``within`` the
    closed compositions.
    """

    dataset: LongDataset
    transform: str
    basis: Optional[IlrBasis]
    comp: np.ndarray
    between: np.ndarray
    within: np.ndarray
    lr: np.ndarray
    blr: np.ndarray
    wlr: np.ndarray
    cluster_ids: np.ndarray
    cluster_codes: np.ndarray = field(repr=False)
    cluster_comp: np.ndarray = field(repr=False)

    @property
    def parts(self):
        return self.dataset.parts

    @property
    def total(self):
        return self.dataset.total

    @property
    def idvar(self):
        return self.dataset.idvar

    @property
    def D(self):
        return len(self.parts)

    @property
    def nobs(self):
        return self.comp.shape[0]

    @property
    def ngrps(self):
        return len(self.cluster_ids)

    def lr_names(self, level="total"):
        prefix = {"total": "", "between": "b", "within": "w"}[level]
        return [f"{prefix}{self.transform}{k + 1}" for k in range(self.lr.shape[1])]

    def cluster_between(self):
        """One between composition per cluster, ordered like ``cluster_ids``."""
        return self.cluster_comp

    def to_frame(self):
        """Original data with the log-ratio columns appended."""
        out = self.dataset.data.reset_index(drop=True).copy()
        for level, arr in (("total", self.lr), ("between", self.blr), ("within", self.wlr)):
            for name, col in zip(self.lr_names(level), arr.T):
                out[name] = col
        return out


def _forward(x, transform, basis):
    if transform == "ilr":
        return cm.ilr_forward(x, basis)
    if transform == "alr":
        return cm.alr_forward(x)
    return cm.clr_forward(x)


def _resolve_basis(sbp, D, parts):
    if sbp is None:
        return contrast_matrix(default_pivot_sbp(D, parts))
    if isinstance(sbp, IlrBasis):
        basis = sbp
    else:
        if not isinstance(sbp, SbpMatrix):
            sbp = np.asarray(sbp)
            if sbp.shape not in ((D - 1, D), (D, D - 1)):
                raise BasisDimensionMismatch(
                    f"SBP of shape {sbp.shape} does not fit {D} parts"
                )
            sbp = validate_sbp(sbp, D, parts)
        basis = contrast_matrix(sbp)
    if basis.D != D:
        raise BasisDimensionMismatch(f"basis for {basis.D} parts, data has {D}")
    return basis


def complr(data, parts=None, idvar=None, total=None, sbp=None, transform="ilr",
           outcome=None, timevar=None):
    """Decompose clustered compositions into between and within components.

    Parameters
    ----------
    data : LongDataset or DataFrame
        When a DataFrame is given, `parts`, `idvar` and `total` are required.
    sbp : array_like, SbpMatrix or IlrBasis, optional
        Defaults to pivot coordinates of the parts in column order.
    transform : {"ilr", "alr", "clr"}

    Returns
    -------
    ComplrOutput

    Notes
    -----
    The between composition of a cluster is the closed geometric mean of its
    rows and the within composition is ``C(x_ij / xb_j)``, so that
    ``xb_j (+) xw_ij == x_ij`` and ``blr + wlr == lr`` row by row.  A cluster
    with a single observation gets a neutral within composition.
    """
    if transform not in TRANSFORMS:
        raise ValueError(f"transform must be one of {TRANSFORMS}, got {transform!r}")
    if not isinstance(data, LongDataset):
        if parts is None or idvar is None:
            raise SchemaError("parts and idvar are required with a plain DataFrame")
        data = LongDataset(pd.DataFrame(data), parts, idvar,
                           1.0 if total is None else total, outcome, timevar)
    D = len(data.parts)
    basis = _resolve_basis(sbp, D, data.parts) if transform == "ilr" else None
    kappa = data.total

    comp = cm.closure(data.parts_array(), kappa)
    ids, codes = np.unique(data.data[data.idvar].to_numpy(), return_inverse=True)
    codes = codes.reshape(-1)

    # Per-cluster mean of log parts; sorted ids make this independent of row order.
    logs = np.log(comp)
    counts = np.bincount(codes, minlength=len(ids)).astype(float)
    sums = np.zeros((len(ids), D))
    np.add.at(sums, codes, logs)
    mean_logs = sums / counts[:, None]
    cluster_b = cm.closure(np.exp(mean_logs - mean_logs.max(axis=1, keepdims=True)), kappa)
    between = cluster_b[codes]
    within = cm.perturb_inv(comp, between, kappa)

    lr = _forward(comp, transform, basis)
    blr_c = _forward(cluster_b, transform, basis)
    blr = blr_c[codes]
    wlr = lr - blr
    for a in (comp, between, within, lr, blr, wlr, cluster_b):
        a.setflags(write=False)
    return ComplrOutput(data, transform, basis, comp, between, within, lr, blr,
                        wlr, ids, codes, cluster_b)


@dataclass(frozen=True)
class ComplrSummary:
    composition_parts: tuple
    logratios: tuple
    idvar: str
    nobs: int
    ngrps: int
    transform_type: str
    total: float

    def to_text(self):
        rows = [
            ("composition_parts", ", ".join(self.composition_parts)),
            ("logratios", ", ".join(self.logratios)),
            ("idvar", self.idvar),
            ("nobs", str(self.nobs)),
            ("ngrps", str(self.ngrps)),
            ("transform_type", self.transform_type),
            ("total", f"{self.total:g}"),
        ]
        width = max(len(k) for k, _ in rows)
        vwidth = max(len(v) for _, v in rows)
        return "\n".join(f"{k:<{width}}  {v:>{vwidth}}" for k, v in rows)

    def __str__(self):
        return self.to_text()


def summary_complr(out: ComplrOutput) -> ComplrSummary:
    return ComplrSummary(
        composition_parts=tuple(out.parts),
        logratios=tuple(out.lr_names()),
        idvar=out.idvar,
        nobs=out.nobs,
        ngrps=out.ngrps,
        transform_type=out.transform,
        total=out.total,
    )
