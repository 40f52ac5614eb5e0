"""Tidy tables and SVG figures of substitution results."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from .errors import UnknownPart  # noqa: E402

__all__ = ["plot_data", "plot_substitution", "save_svg"]


def _check_part(part, parts, label):
    if part is not None and part not in parts:
        raise UnknownPart(f"unknown {label} part {part!r}; parts are {tuple(parts)}")


def plot_data(result, to=None, from_=None, level=None):
    """Rows of `result` matching the filters, sorted by pair and delta.

    Parameters
    ----------
    result : SubstitutionResult
    to, from_ : str, optional
        Part receiving / giving the time.
    level : {"between", "within"}, optional

    Returns
    -------
    DataFrame
        Columns ``level, from, to, delta, mean, lower, upper`` plus the
        bookkeeping columns of the result.
    """
    _check_part(to, result.parts, "to")
    _check_part(from_, result.parts, "from")
    t = result.table
    mask = pd.Series(True, index=t.index)
    if to is not None:
        mask &= t["to"] == to
    if from_ is not None:
        mask &= t["from"] == from_
    if level is not None:
        mask &= t["level"] == level
    order = {p: i for i, p in enumerate(result.parts)}
    sub = t[mask].copy()
    sub["_f"] = sub["from"].map(order)
    sub["_t"] = sub["to"].map(order)
    sub = sub.sort_values(["level", "_t", "_f", "delta"], kind="stable")
    return sub.drop(columns=["_f", "_t"]).reset_index(drop=True)


def save_svg(fig, path):
    """Write `fig` as an SVG whose bytes depend only on its content."""
    with matplotlib.rc_context({"svg.hashsalt": "mlcoda", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_substitution(result, to, level, path=None):
    """Line and ribbon plot of the changes from every other part into `to`.

    Returns the matplotlib figure, or writes it to `path` as SVG (and
    closes it) when a path is given.
    """
    data = plot_data(result, to=to, level=level)
    fig, ax = plt.subplots(figsize=(6, 4))
    for src, grp in data.groupby("from", sort=False):
        line, = ax.plot(grp["delta"], grp["mean"], label=f"{src} → {to}")
        ax.fill_between(grp["delta"], grp["lower"], grp["upper"],
                        color=line.get_color(), alpha=0.2, linewidth=0)
    ax.axhline(0.0, color="grey", linewidth=0.8, linestyle=":")
    ax.set_xlabel("Reallocated amount")
    ax.set_ylabel("Change in outcome")
    ax.set_title(f"{level.capitalize()} level: reallocations into {to}")
    ax.legend(frameon=False, fontsize="small")
    fig.tight_layout()
    if path is None:
        return fig
    save_svg(fig, path)
    return None
