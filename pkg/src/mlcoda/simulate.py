"""Synthetic clustered compositional data with a known generating model.

Cluster ``j`` gets between coordinates ``zb_j ~ N(mu_b, Sigma_b)`` and a
random intercept ``u_j ~ N(0, sigma_u^2)``.  Each of its rows gets within
coordinates ``zw_ij ~ N(0, Sigma_w)``, centred inside the cluster so that the
between/within decomposition of the generated compositions returns exactly
``zb_j`` and ``zw_ij``.  The outcome is

    y_ij = g0 + zb_j' gb + zw_ij' gw + u_j + e_ij,   e_ij ~ N(0, sigma_e^2)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from . import composition as cm
from .errors import ConfigError, NonPDCovariance
from .multilevel import LongDataset
from .sbp import default_pivot_sbp, contrast_matrix, validate_sbp

__all__ = ["SimulationSpec", "SimulationResult", "simulate", "reference_spec",
           "REFERENCE_PARTS"]

REFERENCE_PARTS = ("TST", "WAKE", "MVPA", "LPA", "SB")


@dataclass(frozen=True)
class SimulationSpec:
    """Settings of the generator.

    Parameters
    ----------
    n_clusters : int
    n_obs : int or (int, int)
        Rows per cluster, fixed or drawn uniformly from the inclusive range.
    gamma : sequence of float
        ``[g0, gb_1..gb_{D-1}, gw_1..gw_{D-1}]``.
    sigma_u, sigma_e : float
    between_mean : sequence of float, length D-1
    between_cov, within_cov : array_like, (D-1, D-1)
        Symmetric positive semi-definite.  A zero ``within_cov`` gives
        rows identical to their cluster mean.
    total : float
    part_names : sequence of str, optional
    sbp : array_like, optional
        Basis of the coordinates; default pivot SBP.
    seed : int
    """

    n_clusters: int
    n_obs: object
    gamma: tuple
    sigma_u: float
    sigma_e: float
    between_mean: tuple
    between_cov: object
    within_cov: object
    total: float = 1.0
    part_names: Optional[tuple] = None
    sbp: Optional[object] = None
    seed: int = 1
    idvar: str = "ID"
    outcome: str = "y"
    timevar: str = "Time"

    @property
    def D(self):
        return len(self.between_mean) + 1

    def to_dict(self):
        return {
            "n_clusters": int(self.n_clusters),
            "n_obs": list(self.n_obs) if isinstance(self.n_obs, (tuple, list)) else int(self.n_obs),
            "gamma": [float(g) for g in self.gamma],
            "sigma_u": float(self.sigma_u),
            "sigma_e": float(self.sigma_e),
            "between_mean": [float(v) for v in self.between_mean],
            "between_cov": np.asarray(self.between_cov, dtype=float).tolist(),
            "within_cov": np.asarray(self.within_cov, dtype=float).tolist(),
            "total": float(self.total),
            "part_names": list(self._names()),
            "sbp": None if self.sbp is None else np.asarray(self.sbp).tolist(),
            "seed": int(self.seed),
            "idvar": self.idvar,
            "outcome": self.outcome,
            "timevar": self.timevar,
        }

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown simulation field(s): {sorted(unknown)}")
        kw = dict(d)
        for key in ("gamma", "between_mean", "part_names"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        if isinstance(kw.get("n_obs"), list):
            kw["n_obs"] = tuple(kw["n_obs"])
        return cls(**kw)

    def _names(self):
        if self.part_names is not None:
            return tuple(self.part_names)
        return tuple(f"x{i + 1}" for i in range(self.D))


@dataclass(frozen=True, eq=False)
class SimulationResult:
    dataset: LongDataset
    truth: dict = field(repr=False)


def _factor(cov, k, label):
    """Square-root factor ``F`` with ``F F' = cov``; rejects non-PSD input."""
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (k, k):
        raise NonPDCovariance(f"{label} must be {k} x {k}, got {cov.shape}")
    if not np.all(np.isfinite(cov)) or not np.allclose(cov, cov.T, atol=1e-12):
        raise NonPDCovariance(f"{label} must be finite and symmetric")
    w, Q = np.linalg.eigh(cov)
    if w.min() < -1e-10 * max(1.0, abs(w).max()):
        raise NonPDCovariance(f"{label} is not positive semi-definite (min eigenvalue {w.min():.3g})")
    return Q * np.sqrt(np.clip(w, 0.0, None))


def simulate(spec: SimulationSpec) -> SimulationResult:
    """Draw one dataset from `spec`.

    Returns
    -------
    SimulationResult
        ``dataset`` holds columns ``ID``, ``Time``, the parts and the
        outcome; ``truth`` records the generating parameters, the true
        cluster effects and the basis id of the coordinates.
    """
    D, k = spec.D, spec.D - 1
    names = spec._names()
    if len(names) != D:
        raise ConfigError(f"{len(names)} part names for {D} parts")
    gamma = np.asarray(spec.gamma, dtype=float)
    if gamma.shape != (2 * k + 1,):
        raise ConfigError(f"gamma needs {2 * k + 1} entries, got {gamma.size}")
    if spec.sigma_u < 0 or spec.sigma_e <= 0:
        raise ConfigError("need sigma_u >= 0 and sigma_e > 0")
    if int(spec.n_clusters) < 1:
        raise ConfigError("n_clusters must be positive")
    Fb = _factor(spec.between_cov, k, "between_cov")
    Fw = _factor(spec.within_cov, k, "within_cov")
    sbp = validate_sbp(spec.sbp, D, names) if spec.sbp is not None else default_pivot_sbp(D, names)
    basis = contrast_matrix(sbp)

    rng = np.random.default_rng(int(spec.seed))
    J = int(spec.n_clusters)
    if isinstance(spec.n_obs, (tuple, list)):
        lo, hi = (int(v) for v in spec.n_obs)
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad n_obs range {spec.n_obs}")
        nj = rng.integers(lo, hi + 1, size=J)
    else:
        if int(spec.n_obs) < 1:
            raise ConfigError("n_obs must be positive")
        nj = np.full(J, int(spec.n_obs))
    zb = np.asarray(spec.between_mean, dtype=float) + rng.standard_normal((J, k)) @ Fb.T
    u = spec.sigma_u * rng.standard_normal(J)
    codes = np.repeat(np.arange(J), nj)
    n = codes.size
    zw = rng.standard_normal((n, k)) @ Fw.T
    centre = np.zeros((J, k))
    np.add.at(centre, codes, zw)
    zw = zw - (centre / nj[:, None])[codes]
    eps = spec.sigma_e * rng.standard_normal(n)

    z = zb[codes] + zw
    comp = cm.ilr_inverse(z, basis, spec.total)
    y = gamma[0] + zb[codes] @ gamma[1:k + 1] + zw @ gamma[k + 1:] + u[codes] + eps

    ids = np.arange(1, J + 1)
    frame = pd.DataFrame({spec.idvar: ids[codes],
                          spec.timevar: np.concatenate([np.arange(1, m + 1) for m in nj])})
    for d, name in enumerate(names):
        frame[name] = comp[:, d]
    frame[spec.outcome] = y
    dataset = LongDataset(frame, names, spec.idvar, spec.total, spec.outcome, spec.timevar)

    coef_names = ["Intercept"] + [f"bilr{i + 1}" for i in range(k)] + [f"wilr{i + 1}" for i in range(k)]
    truth = {
        "gamma": dict(zip(coef_names, gamma.tolist())),
        "sd(Intercept)": float(spec.sigma_u),
        "sigma": float(spec.sigma_e),
        "u": dict(zip(ids.tolist(), u.tolist())),
        "basis_id": basis.basis_id,
        "seed": int(spec.seed),
        "n_rows": int(n),
        "n_clusters": J,
    }
    return SimulationResult(dataset, truth)


def reference_spec(seed=123, **overrides) -> SimulationSpec:
    """Desk-scale stand-in for a sleep/activity study.

    Five parts of a 1440-minute day, 266 clusters of 9 to 17 rows (about
    3500 rows), ``sigma_u = 1`` and ``sigma_e = 2.4``.  Coordinates are
    spread widely enough that every coefficient is pinned down to a few
    hundredths.
    """
    k = len(REFERENCE_PARTS) - 1
    base_comp = np.array([480.0, 60.0, 40.0, 300.0, 560.0])
    basis = contrast_matrix(default_pivot_sbp(len(REFERENCE_PARTS)))
    kw = dict(
        n_clusters=266,
        n_obs=(9, 17),
        gamma=(2.59, 0.39, -0.10, 0.11, -0.01, -0.16, -0.30, -0.10, 0.24),
        sigma_u=1.0,
        sigma_e=2.4,
        between_mean=tuple(np.round(cm.ilr_forward(base_comp, basis), 6).tolist()),
        between_cov=(np.eye(k) * 2.5 ** 2).tolist(),
        within_cov=(np.eye(k) * 1.5 ** 2).tolist(),
        total=1440.0,
        part_names=REFERENCE_PARTS,
        seed=seed,
        outcome="Stress",
    )
    kw.update(overrides)
    return SimulationSpec(**kw)
