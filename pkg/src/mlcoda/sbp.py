"""Sequential binary partitions and the orthonormal ilr bases they define.

An SBP is stored as a ``(D-1) x D`` integer matrix, one row per ilr
coordinate and one column per part: ``+1`` marks the numerator set ``R_k``,
``-1`` the denominator set ``S_k`` and ``0`` parts that take no part in the
coordinate.  A ``D x (D-1)`` matrix is transposed on input.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import BadEntry, BadShape, DimensionMismatch, IndexOutOfRange, NotAPartition

__all__ = [
    "SbpMatrix",
    "IlrBasis",
    "validate_sbp",
    "default_pivot_sbp",
    "pivot_sbp_for_part",
    "contrast_matrix",
    "rotation_between",
    "pivot_basis",
]


def _default_names(D):
    return tuple(f"x{i + 1}" for i in range(D))


@dataclass(frozen=True, eq=False)
class SbpMatrix:
    """A validated sequential binary partition.  Build with :func:`validate_sbp`."""

    entries: np.ndarray
    part_names: tuple

    @property
    def D(self):
        return self.entries.shape[1]

    def numerator(self, k):
        return np.flatnonzero(self.entries[k] == 1)

    def denominator(self, k):
        return np.flatnonzero(self.entries[k] == -1)

    def __eq__(self, other):
        if not isinstance(other, SbpMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())

    def __repr__(self):
        header = " ".join(f"{n:>5}" for n in self.part_names)
        rows = "\n".join(
            f"[{k + 1},] " + " ".join(f"{v:>5d}" for v in row)
            for k, row in enumerate(self.entries)
        )
        return f"SbpMatrix(\n      {header}\n{rows})"


def validate_sbp(m, D=None, part_names=None):
    """Check that `m` encodes a sequential binary partition.

    Parameters
    ----------
    m : array_like of int
        ``(D-1) x D`` (canonical) or ``D x (D-1)`` matrix of -1/0/+1 codes.
    D : int, optional
        Number of parts; inferred from the shape when omitted.
    part_names : sequence of str, optional

    Returns
    -------
    SbpMatrix

    Raises
    ------
    BadShape
        If the matrix is neither ``(D-1) x D`` nor ``D x (D-1)``.
    BadEntry
        If any entry is not -1, 0 or +1.
    NotAPartition
        If the rows do not describe a recursive two-way split: the first
        row must involve every part and each later row must split exactly
        one group created by an earlier row.
    """
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise BadShape(f"SBP must be a 2-d matrix, got shape {arr.shape}")
    if D is None:
        D = max(arr.shape)
    if arr.shape == (D, D - 1):
        arr = arr.T
    if arr.shape != (D - 1, D) or D < 2:
        raise BadShape(f"SBP for D={D} must be {(D - 1, D)}, got {np.asarray(m).shape}")
    if not np.all(np.isin(arr, (-1, 0, 1))):
        raise BadEntry("SBP entries must be -1, 0 or +1")
    entries = arr.astype(np.int8)

    # Replay the splitting process: every row must divide exactly one of the
    # groups that are still open into two non-empty halves.
    open_groups = [frozenset(range(D))]
    for k, row in enumerate(entries):
        num = frozenset(np.flatnonzero(row == 1).tolist())
        den = frozenset(np.flatnonzero(row == -1).tolist())
        if not num or not den:
            raise NotAPartition(f"row {k + 1} needs at least one +1 and one -1")
        support = num | den
        if support not in open_groups:
            raise NotAPartition(
                f"row {k + 1} does not split a group produced by earlier rows"
            )
        open_groups.remove(support)
        open_groups.extend(g for g in (num, den) if len(g) > 1)
    if open_groups:
        raise NotAPartition("rows leave some groups of parts unsplit")

    if part_names is None:
        part_names = _default_names(D)
    part_names = tuple(str(p) for p in part_names)
    if len(part_names) != D:
        raise DimensionMismatch(f"{len(part_names)} part names for {D} parts")
    entries.setflags(write=False)
    return SbpMatrix(entries, part_names)


def default_pivot_sbp(D, part_names=None):
    """Pivot-balance SBP: row k contrasts part k with every later part.

    >>> default_pivot_sbp(3).entries
    array([[ 1, -1, -1],
           [ 0,  1, -1]], dtype=int8)
    """
    if D < 2:
        raise BadShape("an SBP needs at least two parts")
    m = np.zeros((D - 1, D), dtype=np.int8)
    for k in range(D - 1):
        m[k, k] = 1
        m[k, k + 1:] = -1
    return validate_sbp(m, D, part_names)


def _part_index(pivot, D, part_names):
    if isinstance(pivot, str):
        names = tuple(part_names) if part_names is not None else _default_names(D)
        if pivot not in names:
            raise IndexOutOfRange(f"unknown part {pivot!r}; parts are {names}")
        return names.index(pivot)
    if int(pivot) != pivot or not 0 <= pivot < D:
        raise IndexOutOfRange(f"pivot index {pivot!r} outside 0..{D - 1}")
    return int(pivot)


def pivot_sbp_for_part(D, pivot, part_names=None):
    """Pivot SBP whose first coordinate isolates part `pivot`.

    The pivot is moved to the front of the part ordering (the others keep
    their relative order), the default pivot SBP is built for that ordering
    and its columns are put back in the original order.

    Parameters
    ----------
    D : int
    pivot : int or str
        0-based part index or part name.
    part_names : sequence of str, optional
    """
    p = _part_index(pivot, D, part_names)
    order = [p] + [i for i in range(D) if i != p]
    permuted = default_pivot_sbp(D).entries
    m = np.empty_like(permuted)
    m[:, order] = permuted
    return validate_sbp(m, D, part_names)


@dataclass(frozen=True, eq=False)
class IlrBasis:
    """Orthonormal ``D x (D-1)`` contrast matrix derived from an SBP."""

    contrast: np.ndarray
    sbp: SbpMatrix
    basis_id: str

    @property
    def D(self):
        return self.contrast.shape[0]

    @property
    def part_names(self):
        return self.sbp.part_names

    def __eq__(self, other):
        if not isinstance(other, IlrBasis):
            return NotImplemented
        return self.basis_id == other.basis_id

    def __hash__(self):
        return hash(self.basis_id)


def _basis_id(entries):
    h = hashlib.sha256()
    h.update(np.asarray(entries.shape, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(entries, dtype=np.int8).tobytes())
    return h.hexdigest()[:16]


def contrast_matrix(sbp):
    """Build the orthonormal basis of an SBP.

    Column k holds ``+sqrt(s/(r(r+s)))`` on the ``r`` numerator parts and
    ``-sqrt(r/(s(r+s)))`` on the ``s`` denominator parts, so that
    ``clr(x) @ V`` reproduces the normalised balance
    ``sqrt(rs/(r+s)) * ln(g(x_R) / g(x_S))``.
    """
    if not isinstance(sbp, SbpMatrix):
        sbp = validate_sbp(sbp)
    E = sbp.entries
    D = sbp.D
    V = np.zeros((D, D - 1))
    for k in range(D - 1):
        pos, neg = E[k] == 1, E[k] == -1
        r, s = pos.sum(), neg.sum()
        V[pos, k] = np.sqrt(s / (r * (r + s)))
        V[neg, k] = -np.sqrt(r / (s * (r + s)))
    V.setflags(write=False)
    return IlrBasis(V, sbp, _basis_id(E))


def pivot_basis(D, pivot=0, part_names=None):
    """Shorthand for ``contrast_matrix(pivot_sbp_for_part(D, pivot))``."""
    return contrast_matrix(pivot_sbp_for_part(D, pivot, part_names))


def rotation_between(b1, b2):
    """Orthogonal matrix ``R = V2.T @ V1`` carrying b1-coordinates to b2.

    For any composition ``z2 = R @ z1``; coefficients of a linear model in
    the coordinates transform the same way, ``beta2 = R @ beta1``.
    """
    if b1.D != b2.D:
        raise DimensionMismatch(f"bases for {b1.D} and {b2.D} parts")
    return b2.contrast.T @ b1.contrast
