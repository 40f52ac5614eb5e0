"""Aitchison simplex primitives and log-ratio transforms.

All functions work on array-likes whose last axis holds the ``D`` parts of
a composition, so a single composition is a 1-d array and a table of
compositions is an ``(n, D)`` array.  :class:`Composition` and
:class:`IlrVector` are small immutable wrappers for callers that prefer
value objects.

Log-ratio conventions
---------------------
* ``alr_k = ln(x_k / x_D)``, ``k = 1..D-1``
* ``clr_d = ln(x_d / g(x))`` with ``g`` the geometric mean
* ``ilr = clr(x) @ V`` where ``V`` is the ``D x (D-1)`` orthonormal contrast
  matrix of an :class:`~mlcoda.sbp.IlrBasis`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    BasisMismatch,
    DimensionMismatch,
    EmptyList,
    EmptyVector,
    NonPositivePart,
    TotalMismatch,
)

__all__ = [
    "Composition",
    "IlrVector",
    "closure",
    "perturb",
    "perturb_inv",
    "neutral",
    "geometric_mean_composition",
    "ilr_forward",
    "ilr_inverse",
    "alr_forward",
    "alr_inverse",
    "clr_forward",
    "clr_inverse",
]


def _check_total(total):
    total = float(total)
    if not np.isfinite(total) or total <= 0:
        raise ValueError(f"total must be a positive finite number, got {total!r}")
    return total


def _as_parts(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] < 2:
        raise EmptyVector("a composition needs at least two parts")
    bad = ~np.isfinite(x) | (x <= 0)
    if bad.any():
        raise NonPositivePart(
            "compositional parts must be strictly positive and finite; "
            f"found {int(bad.sum())} offending value(s)"
        )
    return x


def closure(x, total=1.0):
    """Rescale positive vectors so that their parts sum to `total`.

    Parameters
    ----------
    x : array_like, shape (..., D)
        Strictly positive parts, ``D >= 2``.
    total : float, optional
        The closure constant kappa (1 for proportions, 1440 for minutes of
        a day, ...).

    Returns
    -------
    ndarray, shape (..., D)
        Closed compositions.  ``x.sum(axis=-1)`` equals `total` up to a few
        ulps (exactly in most cases) and the operation is bit-idempotent.

    Raises
    ------
    NonPositivePart
        If any entry is zero, negative or not finite.
    EmptyVector
        If there are fewer than two parts.

    Examples
    --------
    >>> closure([2, 3, 5], 1440)
    array([288., 432., 720.])
    """
    x = _as_parts(x)
    total = _check_total(total)
    # Rows whose sum is already within rounding of `total` are left alone,
    # which makes closure(closure(x)) == closure(x) bit for bit.
    tol = 4 * x.shape[-1] * np.finfo(float).eps * total
    s = x.sum(axis=-1, keepdims=True)
    keep = np.abs(s - total) <= tol
    out = np.where(keep, x, x * (total / s))
    # Push the rounding residual of the sum into the largest part of every
    # rescaled row.
    for _ in range(4):
        resid = np.where(keep, 0.0, total - out.sum(axis=-1, keepdims=True))
        if not resid.any():
            break
        idx = np.argmax(out, axis=-1)[..., None]
        np.put_along_axis(
            out, idx, np.take_along_axis(out, idx, axis=-1) + resid, axis=-1
        )
    return out


def _same_shape(x, y):
    if x.shape[-1] != y.shape[-1]:
        raise DimensionMismatch(
            f"compositions have {x.shape[-1]} and {y.shape[-1]} parts"
        )


def perturb(x, y, total=1.0):
    """Perturbation ``x (+) y``: closure of the element-wise product."""
    x, y = _as_parts(x), _as_parts(y)
    _same_shape(x, y)
    return closure(x * y, total)


def perturb_inv(x, y, total=1.0):
    """Perturbation difference ``x (-) y = C(x / y)``."""
    x, y = _as_parts(x), _as_parts(y)
    _same_shape(x, y)
    return closure(x / y, total)


def neutral(D, total=1.0):
    """The neutral element of the simplex, ``(total/D, ..., total/D)``."""
    if int(D) != D or D < 2:
        raise EmptyVector("a composition needs at least two parts")
    total = _check_total(total)
    return np.full(int(D), total / int(D))


def geometric_mean_composition(xs, total=1.0):
    """Closed per-part geometric mean of a set of compositions.

    The mean is taken in log space, which keeps it finite for parts far
    from 1.

    Parameters
    ----------
    xs : array_like, shape (n, D), or sequence of Composition
    total : float

    Raises
    ------
    EmptyList
        If `xs` holds no composition.
    """
    if isinstance(xs, Sequence) and xs and isinstance(xs[0], Composition):
        totals = {c.total for c in xs}
        dims = {c.D for c in xs}
        if len(dims) > 1:
            raise DimensionMismatch(f"compositions with {sorted(dims)} parts")
        if len(totals) > 1:
            raise TotalMismatch(f"compositions with totals {sorted(totals)}")
        xs = np.stack([c.parts for c in xs])
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        raise EmptyList("cannot average an empty set of compositions")
    xs = _as_parts(np.atleast_2d(xs))
    logs = np.log(xs).mean(axis=0)
    return closure(np.exp(logs - logs.max()), total)


def _contrast(basis):
    V = np.asarray(getattr(basis, "contrast", basis), dtype=float)
    if V.ndim != 2 or V.shape[1] != V.shape[0] - 1:
        raise DimensionMismatch(f"contrast matrix has shape {V.shape}")
    return V


def clr_forward(x):
    """Centred log-ratios; every output row sums to zero."""
    logs = np.log(_as_parts(x))
    return logs - logs.mean(axis=-1, keepdims=True)


def clr_inverse(c, total=1.0):
    c = np.asarray(c, dtype=float)
    return closure(np.exp(c - c.max(axis=-1, keepdims=True)), total)


def alr_forward(x):
    """Additive log-ratios against the last part."""
    logs = np.log(_as_parts(x))
    return logs[..., :-1] - logs[..., -1:]


def alr_inverse(a, total=1.0):
    a = np.asarray(a, dtype=float)
    full = np.concatenate([a, np.zeros(a.shape[:-1] + (1,))], axis=-1)
    return clr_inverse(full, total)


def ilr_forward(x, basis):
    """Isometric log-ratio coordinates of `x` under `basis`.

    Parameters
    ----------
    x : array_like, shape (..., D)
        Compositions; they need not be closed since the coordinates are
        scale invariant.
    basis : IlrBasis or ndarray of shape (D, D-1)

    Returns
    -------
    ndarray, shape (..., D-1)
    """
    V = _contrast(basis)
    x = _as_parts(x)
    if x.shape[-1] != V.shape[0]:
        raise DimensionMismatch(
            f"composition has {x.shape[-1]} parts, basis expects {V.shape[0]}"
        )
    return clr_forward(x) @ V


def ilr_inverse(z, basis, total=1.0):
    """Map ilr coordinates back to a composition closed to `total`."""
    V = _contrast(basis)
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != V.shape[1]:
        raise DimensionMismatch(
            f"got {z.shape[-1]} coordinates, basis expects {V.shape[1]}"
        )
    return clr_inverse(z @ V.T, total)


@dataclass(frozen=True, eq=False)
class Composition:
    """An immutable composition closed to ``total``.

    The constructor applies closure, so raw (unnormalised) parts are fine.

    >>> Composition([2, 3, 5], total=1440).parts
    array([288., 432., 720.])
    """

    parts: np.ndarray
    total: float = 1.0

    def __post_init__(self):
        parts = np.asarray(self.parts, dtype=float)
        if parts.ndim != 1:
            raise DimensionMismatch("a Composition holds a single 1-d vector")
        parts = closure(parts, self.total)
        parts.setflags(write=False)
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "total", float(self.total))

    @classmethod
    def neutral(cls, D, total=1.0):
        return cls(neutral(D, total), total)

    @property
    def D(self):
        return self.parts.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.array(self.parts, dtype=dtype)

    def __len__(self):
        return self.D

    def _check_compatible(self, other):
        if other.D != self.D:
            raise DimensionMismatch(f"{self.D} vs {other.D} parts")
        if other.total != self.total:
            raise TotalMismatch(f"total {self.total} vs {other.total}")

    def perturb(self, other: "Composition") -> "Composition":
        self._check_compatible(other)
        return Composition(self.parts * other.parts, self.total)

    __add__ = perturb

    def to_ilr(self, basis) -> "IlrVector":
        return IlrVector(ilr_forward(self.parts, basis), basis.basis_id)

    def allclose(self, other, rtol=1e-12, atol=0.0):
        return self.D == other.D and np.allclose(
            self.parts, np.asarray(other), rtol=rtol, atol=atol
        )

    def __repr__(self):
        return f"Composition({np.array2string(self.parts)}, total={self.total:g})"


@dataclass(frozen=True, eq=False)
class IlrVector:
    """ilr coordinates tagged with the id of the basis they belong to."""

    coords: np.ndarray
    basis_id: str

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float).reshape(-1)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    def __len__(self):
        return self.coords.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.array(self.coords, dtype=dtype)

    def to_composition(self, basis, total=1.0) -> Composition:
        if basis.basis_id != self.basis_id:
            raise BasisMismatch(
                f"coordinates use basis {self.basis_id}, got {basis.basis_id}"
            )
        return Composition(ilr_inverse(self.coords, basis, total), total)
