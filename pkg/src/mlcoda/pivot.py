"""Pivot-coordinate effects of every part.

The first pivot coordinate for part ``p`` contrasts ``p`` with the geometric
mean of all other parts, so its coefficient reads as the effect of ``p``
relative to the rest.  Pivot bases for different ``p`` are rotations of each
other, which gives two routes to the coefficients:

* ``rotate``: with ``z' = R z`` the coefficients obey ``beta' = R beta``, so
  each posterior draw of the between and within blocks is rotated.
* ``refit``: rebuild the coordinates under each pivot basis and fit again.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .errors import BasisMismatch, ConfigError
from .model import PosteriorDraws, fit_model, summarize_fit
from .multilevel import complr
from .sbp import pivot_basis, pivot_sbp_for_part, rotation_between

__all__ = ["pivot_coord", "rotated_draws"]

_BLOCKS = (("between", "bilr"), ("within", "wilr"))


def _present_blocks(draws, k):
    blocks = []
    for level, prefix in _BLOCKS:
        names = [f"{prefix}{i + 1}" for i in range(k)]
        if all(n in draws.names for n in names):
            blocks.append((level, names))
    if not blocks:
        raise ConfigError("the model has no complete bilr or wilr coefficient block")
    return blocks


def _check(fit):
    basis = fit.complr.basis
    if basis is None:
        raise BasisMismatch("pivot coordinates need a fit in ilr coordinates")
    if fit.draws.basis_id is not None and fit.draws.basis_id != basis.basis_id:
        raise BasisMismatch(
            f"draws belong to basis {fit.draws.basis_id}, complr output to {basis.basis_id}"
        )
    return basis


def rotated_draws(fit) -> PosteriorDraws:
    """Draws of the first pivot coefficient of every part at every level.

    Parameters are named ``between_<part>`` and ``within_<part>``.
    """
    basis = _check(fit)
    parts = fit.complr.parts
    D = len(parts)
    draws = fit.draws
    cols, names = [], []
    for level, block in _present_blocks(draws, D - 1):
        B = draws.draws[:, :, [draws.index(n) for n in block]]
        for p, part in enumerate(parts):
            R = rotation_between(basis, pivot_basis(D, p, parts))
            # beta' = R beta; only the first coordinate is kept.
            cols.append(np.tensordot(B, R[0], axes=([2], [0])))
            names.append(f"{level}_{part}")
    arr = np.stack(cols, axis=-1)
    arr.setflags(write=False)
    return PosteriorDraws(arr, tuple(names), draws.seed, None, ())


def _refit(fit, threads, ci_level):
    out0 = fit.complr
    parts = out0.parts
    D = len(parts)
    rows = []
    for p, part in enumerate(parts):
        out = complr(out0.dataset, sbp=pivot_sbp_for_part(D, p, parts),
                     transform=out0.transform)
        refit = fit_model(out, fit.spec, threads=threads)
        table = summarize_fit(refit.draws, ci_level)
        for level, block in _present_blocks(refit.draws, D - 1):
            row = table.loc[block[0]].copy()
            row.name = f"{level}_{part}"
            rows.append(row)
    table = pd.DataFrame(rows)
    table.index.name = "parameter"
    order = [f"{lv}_{pt}" for lv, _ in _BLOCKS for pt in parts]
    return table.loc[[o for o in order if o in table.index]]


def pivot_coord(fit, method="rotate", ci_level=0.95, threads=None) -> pd.DataFrame:
    """Summaries of the first pivot coefficient of every part.

    Parameters
    ----------
    fit : CodaFit
        Fitted under any ilr basis.
    method : {"rotate", "refit"}
    ci_level : float
    threads : int, optional
        Only used by ``refit``.

    Returns
    -------
    DataFrame
        Indexed by ``between_<part>`` / ``within_<part>`` with the columns
        of :func:`~mlcoda.model.summarize_fit`.
    """
    if method == "rotate":
        table = summarize_fit(rotated_draws(fit), ci_level)
    elif method == "refit":
        _check(fit)
        table = _refit(fit, threads, ci_level)
    else:
        raise ConfigError(f"method must be 'rotate' or 'refit', got {method!r}")
    table.attrs["ci_level"] = ci_level
    table.attrs["method"] = method
    return table
