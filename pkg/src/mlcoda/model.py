"""Gaussian random-intercept linear mixed model fitted by Gibbs sampling.

The model for observation ``i`` in cluster ``j`` is

    y_ij = x_ij' beta + u_j + e_ij,   u_j ~ N(0, tau^2),   e_ij ~ N(0, sigma^2)

with a flat prior on ``beta`` and Inverse-Gamma(a, b) priors on both
variances.  Every full conditional is conjugate.  Each sweep draws
``beta`` with ``u`` integrated out, then ``u | beta``, then the two
variances, which removes the strong ``beta``/``u`` correlation that a
one-at-a-time sampler suffers from when the intercept and cluster effects
are confounded.
"""

from __future__ import annotations

import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd
from scipy import linalg

from . import diagnostics as dg
from .errors import (
    ConfigError,
    DegenerateDesign,
    FormulaError,
    MissingValues,
    NonFiniteLikelihood,
    TooFewDraws,
    UnknownTerm,
)

__all__ = [
    "ModelSpec",
    "Design",
    "PosteriorDraws",
    "CodaFit",
    "parse_formula",
    "build_design",
    "gibbs_fit",
    "fit_model",
    "summarize_fit",
    "resolve_threads",
]

THREADS_ENV = "MLCODA_THREADS"
SD_GROUP = "sd(Intercept)"
SIGMA = "sigma"
INTERCEPT = "Intercept"

_NAME = r"[A-Za-z_.][A-Za-z0-9_.]*"
_GROUP_TERM = re.compile(r"^\(\s*1\s*\|\s*(" + _NAME + r")\s*\)$")


def _split_top_level(rhs):
    parts, depth, cur = [], 0, []
    for ch in rhs:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise FormulaError("unbalanced parentheses in formula")
        if ch == "+" and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if depth:
        raise FormulaError("unbalanced parentheses in formula")
    parts.append("".join(cur).strip())
    return parts


def parse_formula(formula):
    """Parse ``"y ~ a + b + (1 | g)"`` into ``(outcome, terms, group)``.

    Only a random intercept for a single grouping column is understood;
    group-level slopes such as ``(wilr1 | ID)`` are rejected.

    Returns
    -------
    outcome : str
    terms : tuple of str
        Fixed-effect columns, without the intercept.
    group : str or None
    """
    if formula.count("~") != 1:
        raise FormulaError(f"formula needs exactly one '~': {formula!r}")
    lhs, rhs = (s.strip() for s in formula.split("~"))
    if not re.fullmatch(_NAME, lhs):
        raise FormulaError(f"outcome must be a single column name, got {lhs!r}")
    terms, group = [], None
    for tok in _split_top_level(rhs):
        if not tok:
            raise FormulaError(f"empty term in {formula!r}")
        if tok == "1":
            continue
        if tok in ("0", "-1") or tok.endswith("- 1") or tok.endswith("-1"):
            raise FormulaError("models without an intercept are not supported")
        if tok.startswith("("):
            m = _GROUP_TERM.match(tok)
            if m is None:
                raise FormulaError(
                    f"unsupported group-level term {tok!r}: only random intercepts "
                    "of the form (1 | group) are implemented, random slopes are not"
                )
            if group is not None:
                raise FormulaError("only one grouping factor is supported")
            group = m.group(1)
            continue
        if not re.fullmatch(_NAME, tok):
            raise FormulaError(f"cannot parse term {tok!r}; use plain column names")
        if tok in terms:
            raise FormulaError(f"term {tok!r} appears twice")
        terms.append(tok)
    return lhs, tuple(terms), group


@dataclass(frozen=True)
class ModelSpec:
    """What to fit and how to sample it.

    Parameters
    ----------
    outcome : str
    terms : tuple of str
        Fixed-effect columns; an intercept is always added in front.
    group : str or None
        Column holding the cluster id.  ``None`` fits the plain linear model
        (no random intercept).
    chains, iter, warmup : int
        ``iter`` counts warmup, so each chain keeps ``iter - warmup`` draws.
    seed : int
    prior_shape, prior_rate : float
        Inverse-Gamma hyperparameters shared by both variances.
    """

    outcome: str
    terms: tuple = ()
    group: Optional[str] = None
    chains: int = 4
    iter: int = 2000
    warmup: int = 1000
    seed: int = 123
    prior_shape: float = 0.001
    prior_rate: float = 0.001

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if int(self.chains) < 1:
            raise ConfigError(f"chains must be at least 1, got {self.chains}")
        if not 0 <= int(self.warmup) < int(self.iter):
            raise ConfigError(
                f"need 0 <= warmup < iter, got warmup={self.warmup}, iter={self.iter}"
            )
        if self.prior_shape <= 0 or self.prior_rate <= 0:
            raise ConfigError("inverse-gamma hyperparameters must be positive")

    @classmethod
    def from_formula(cls, formula, **kwargs):
        outcome, terms, group = parse_formula(formula)
        return cls(outcome=outcome, terms=terms, group=group, **kwargs)

    @property
    def formula(self):
        rhs = " + ".join(self.terms) if self.terms else "1"
        if self.group is not None:
            rhs += f" + (1 | {self.group})"
        return f"{self.outcome} ~ {rhs}"

    @property
    def n_keep(self):
        return int(self.iter) - int(self.warmup)

    def to_dict(self):
        return {
            "formula": self.formula,
            "outcome": self.outcome,
            "terms": list(self.terms),
            "group": self.group,
            "chains": int(self.chains),
            "iter": int(self.iter),
            "warmup": int(self.warmup),
            "seed": int(self.seed),
            "priors": {
                "beta": "flat",
                "sigma^2": f"InvGamma({self.prior_shape:g}, {self.prior_rate:g})",
                "sd(Intercept)^2": f"InvGamma({self.prior_shape:g}, {self.prior_rate:g})",
                "prior_shape": self.prior_shape,
                "prior_rate": self.prior_rate,
            },
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            outcome=d["outcome"],
            terms=tuple(d.get("terms", ())),
            group=d.get("group"),
            chains=int(d.get("chains", 4)),
            iter=int(d.get("iter", 2000)),
            warmup=int(d.get("warmup", 1000)),
            seed=int(d.get("seed", 123)),
            prior_shape=float(d.get("priors", {}).get("prior_shape", 0.001)),
            prior_rate=float(d.get("priors", {}).get("prior_rate", 0.001)),
        )


@dataclass(frozen=True, eq=False)
class Design:
    """Model matrices: ``X`` (intercept first), ``y`` and cluster codes."""

    X: np.ndarray
    y: np.ndarray
    names: tuple
    group_codes: Optional[np.ndarray] = None
    group_ids: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def n_groups(self):
        return 0 if self.group_ids is None else len(self.group_ids)


def build_design(data, spec: ModelSpec) -> Design:
    """Assemble the design for `spec` from a data frame or complr output.

    Parameters
    ----------
    data : DataFrame or ComplrOutput
        A ComplrOutput is expanded with :meth:`~ComplrOutput.to_frame` so
        that the ``bilr*``/``wilr*`` columns can be referenced.
    spec : ModelSpec

    Raises
    ------
    UnknownTerm
        If the outcome, a term or the group column is missing.
    MissingValues
        If any used cell is missing.
    """
    frame = data.to_frame() if hasattr(data, "to_frame") else pd.DataFrame(data)
    needed = [spec.outcome, *spec.terms] + ([spec.group] if spec.group else [])
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise UnknownTerm(f"unknown column(s) in model: {', '.join(missing)}")
    used = frame[needed]
    if used.isna().any().any():
        cols = [c for c in needed if frame[c].isna().any()]
        raise MissingValues(f"missing values in column(s): {', '.join(cols)}")
    try:
        y = frame[spec.outcome].to_numpy(dtype=float)
        cols = [np.ones(len(frame))] + [frame[t].to_numpy(dtype=float) for t in spec.terms]
    except (TypeError, ValueError) as exc:
        raise FormulaError(f"model columns must be numeric: {exc}") from exc
    X = np.column_stack(cols)
    codes = ids = None
    if spec.group:
        ids, codes = np.unique(frame[spec.group].to_numpy(), return_inverse=True)
        codes = codes.reshape(-1)
    return Design(X, y, (INTERCEPT, *spec.terms), codes, ids)


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Post-warmup draws, shape ``(chains, draws, parameters)``."""

    draws: np.ndarray
    names: tuple
    seed: int
    basis_id: Optional[str] = None
    fixed_names: tuple = ()
    group_ids: tuple = ()

    @property
    def n_chains(self):
        return self.draws.shape[0]

    @property
    def n_draws(self):
        return self.draws.shape[1]

    @property
    def n_total(self):
        return self.n_chains * self.n_draws

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownTerm(f"no parameter named {name!r}") from None

    def param(self, name):
        """Draws of one parameter, shape ``(chains, draws)``."""
        return self.draws[:, :, self.index(name)]

    def flat(self, names=None):
        """Draws stacked over chains, shape ``(chains * draws, k)``."""
        idx = slice(None) if names is None else [self.index(n) for n in names]
        arr = self.draws[:, :, idx]
        return arr.reshape(-1, arr.shape[-1])

    def fixed(self):
        return self.flat(self.fixed_names)

    def to_long_frame(self):
        c, n, p = self.draws.shape
        chain, it, par = np.meshgrid(np.arange(1, c + 1), np.arange(1, n + 1),
                                     np.arange(p), indexing="ij")
        return pd.DataFrame({
            "chain": chain.ravel(),
            "iter": it.ravel(),
            "parameter": np.asarray(self.names, dtype=object)[par.ravel()],
            "value": self.draws.ravel(),
        })


def resolve_threads(threads=None):
    """Thread count: explicit value, else the environment variable, else cores."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        else:
            threads = os.cpu_count() or 1
    threads = int(threads)
    if threads < 1:
        raise ConfigError(f"thread count must be positive, got {threads}")
    return threads


def _inv_gamma(rng, shape, rate):
    return rate / rng.gamma(shape)


@dataclass
class _Suff:
    """Sufficient statistics shared read-only by all chains."""

    X: np.ndarray
    y: np.ndarray
    codes: Optional[np.ndarray]
    XtX: np.ndarray
    Xty: np.ndarray
    S: Optional[np.ndarray] = None      # per-cluster column sums of X
    ysum: Optional[np.ndarray] = None
    nj: Optional[np.ndarray] = None
    beta_ols: np.ndarray = field(default=None)


def _prepare(design: Design) -> _Suff:
    X, y = design.X, design.y
    n, p = X.shape
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NonFiniteLikelihood("design or outcome contains non-finite values")
    if n <= p:
        raise DegenerateDesign(f"{n} observations for {p} fixed effects")
    XtX = X.T @ X
    if np.linalg.matrix_rank(X) < p:
        raise DegenerateDesign(
            "X'X is singular: fixed-effect columns are linearly dependent"
        )
    Xty = X.T @ y
    beta = linalg.solve(XtX, Xty, assume_a="pos")
    resid = y - X @ beta
    if not np.any(np.abs(resid) > 1e-12 * max(1.0, np.abs(y).max())):
        raise NonFiniteLikelihood(
            "outcome is fitted exactly; residual variance is zero"
        )
    suff = _Suff(X, y, design.group_codes, XtX, Xty, beta_ols=beta)
    if design.group_codes is not None:
        J = design.n_groups
        if J < 2:
            raise DegenerateDesign("a random intercept needs at least two clusters")
        codes = design.group_codes
        S = np.zeros((J, p))
        np.add.at(S, codes, X)
        suff.S = S
        suff.ysum = np.bincount(codes, weights=y, minlength=J)
        suff.nj = np.bincount(codes, minlength=J).astype(float)
    return suff


def _initial_values(suff: _Suff, rng):
    resid = suff.y - suff.X @ suff.beta_ols
    if suff.codes is None:
        s2 = resid.var()
        return s2 * np.exp(0.1 * rng.standard_normal()), None
    means = np.bincount(suff.codes, weights=resid) / suff.nj
    within = resid - means[suff.codes]
    s2 = max(within @ within / max(len(resid) - len(suff.nj), 1), 1e-8 * resid.var())
    t2 = max(means.var(ddof=1) - s2 * np.mean(1.0 / suff.nj), 0.01 * resid.var())
    jitter = np.exp(0.1 * rng.standard_normal(2))
    return s2 * jitter[0], t2 * jitter[1]


def _run_chain(suff: _Suff, spec: ModelSpec, seed_seq):
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    X, y = suff.X, suff.y
    n, p = X.shape
    a, b = spec.prior_shape, spec.prior_rate
    keep = spec.n_keep
    grouped = suff.codes is not None
    J = len(suff.nj) if grouped else 0
    out = np.empty((keep, p + (2 + J if grouped else 1)))
    s2, t2 = _initial_values(suff, rng)

    if not grouped:
        L = linalg.cholesky(suff.XtX, lower=True)
        for it in range(spec.iter):
            z = rng.standard_normal(p)
            beta = suff.beta_ols + np.sqrt(s2) * linalg.solve_triangular(L.T, z, lower=False)
            r = y - X @ beta
            s2 = _inv_gamma(rng, a + n / 2, b + r @ r / 2)
            if it >= spec.warmup:
                out[it - spec.warmup, :p] = beta
                out[it - spec.warmup, p] = np.sqrt(s2)
        return out

    S, ysum, nj, codes = suff.S, suff.ysum, suff.nj, suff.codes
    for it in range(spec.iter):
        # beta | sigma^2, tau^2 with u integrated out.
        c = t2 / (s2 + nj * t2)
        A = (suff.XtX - S.T @ (c[:, None] * S)) / s2
        rhs = (suff.Xty - S.T @ (c * ysum)) / s2
        L = linalg.cholesky(A, lower=True)
        mean = linalg.cho_solve((L, True), rhs)
        beta = mean + linalg.solve_triangular(L.T, rng.standard_normal(p), lower=False)
        # u | beta, sigma^2, tau^2
        prec = nj / s2 + 1.0 / t2
        u = ((ysum - S @ beta) / s2) / prec + rng.standard_normal(J) / np.sqrt(prec)
        r = y - X @ beta - u[codes]
        s2 = _inv_gamma(rng, a + n / 2, b + r @ r / 2)
        t2 = _inv_gamma(rng, a + J / 2, b + u @ u / 2)
        if it >= spec.warmup:
            row = out[it - spec.warmup]
            row[:p] = beta
            row[p] = np.sqrt(t2)
            row[p + 1] = np.sqrt(s2)
            row[p + 2:] = u
    return out


def gibbs_fit(design: Design, spec: ModelSpec, threads=None, basis_id=None) -> PosteriorDraws:
    """Sample the posterior of the random-intercept model.

    Parameters
    ----------
    design : Design
    spec : ModelSpec
    threads : int, optional
        Number of chains run concurrently.  Falls back to the
        ``MLCODA_THREADS`` environment variable and then to the core count.
        Draws never depend on it: chain ``k`` always uses the ``k``-th child
        of ``SeedSequence(spec.seed)``.
    basis_id : str, optional
        Recorded with the draws so that downstream consumers can check they
        combine coefficients with coordinates of the same basis.

    Returns
    -------
    PosteriorDraws
        Parameters are ordered: fixed effects (``Intercept`` first),
        ``sd(Intercept)``, ``sigma``, then ``u[<id>]`` per cluster.  Without
        a group the model has no ``sd(Intercept)`` or ``u`` entries.

    Raises
    ------
    DegenerateDesign
        Singular ``X'X``, too few rows or fewer than two clusters.
    NonFiniteLikelihood
        Non-finite data or an exactly fitted outcome.
    """
    suff = _prepare(design)
    children = np.random.SeedSequence(int(spec.seed)).spawn(int(spec.chains))
    workers = min(resolve_threads(threads), int(spec.chains))
    if workers == 1:
        results = [_run_chain(suff, spec, s) for s in children]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: _run_chain(suff, spec, s), children))
    draws = np.stack(results)
    draws.setflags(write=False)
    names = list(design.names)
    group_ids = ()
    if design.group_codes is not None:
        group_ids = tuple(design.group_ids.tolist())
        names += [SD_GROUP, SIGMA] + [f"u[{g}]" for g in group_ids]
    else:
        names += [SIGMA]
    return PosteriorDraws(draws, tuple(names), int(spec.seed), basis_id,
                          tuple(design.names), group_ids)


@dataclass(frozen=True, eq=False)
class CodaFit:
    """A fitted model together with the complr output it was fitted to."""

    complr: object
    spec: ModelSpec
    design: Design
    draws: PosteriorDraws

    @property
    def basis(self):
        return self.complr.basis

    def summary(self, ci_level=0.95, include_group=False):
        return summarize_fit(self.draws, ci_level, include_group)


def fit_model(out, spec, threads=None, **spec_kwargs) -> CodaFit:
    """Build the design from complr output and run :func:`gibbs_fit`.

    `spec` may be a :class:`ModelSpec` or a formula string; in the latter
    case `spec_kwargs` (chains, iter, warmup, seed, ...) are passed on.
    """
    if isinstance(spec, str):
        spec = ModelSpec.from_formula(spec, **spec_kwargs)
    elif spec_kwargs:
        spec = replace(spec, **spec_kwargs)
    design = build_design(out, spec)
    basis_id = out.basis.basis_id if getattr(out, "basis", None) is not None else None
    draws = gibbs_fit(design, spec, threads=threads, basis_id=basis_id)
    return CodaFit(out, spec, design, draws)


def _diag(fn, x):
    try:
        return fn(x)
    except TooFewDraws:
        return np.nan


def summarize_fit(draws: PosteriorDraws, ci_level=0.95, include_group=False):
    """Posterior summary table, one row per parameter.

    Columns are ``Estimate`` (mean), ``Est.Error`` (sd), ``lower`` and
    ``upper`` (equal-tailed quantile interval at `ci_level`), ``Rhat``,
    ``Bulk_ESS``, ``Tail_ESS``, ``MCSE`` (of the mean) and ``degenerate``
    which marks parameters whose draws are all identical.  The cluster
    effects ``u[...]`` are left out unless `include_group` is set.
    """
    if not 0 < ci_level < 1:
        raise ConfigError(f"ci_level must lie in (0, 1), got {ci_level}")
    alpha = (1 - ci_level) / 2
    rows = []
    for k, name in enumerate(draws.names):
        if not include_group and name.startswith("u["):
            continue
        x = draws.draws[:, :, k]
        flat = x.ravel()
        lo, hi = np.quantile(flat, [alpha, 1 - alpha])
        degenerate = bool(np.ptp(flat) == 0)
        rows.append({
            "parameter": name,
            "Estimate": flat.mean(),
            "Est.Error": flat.std(ddof=1) if flat.size > 1 else 0.0,
            "lower": lo,
            "upper": hi,
            "Rhat": _diag(dg.rhat, x) if x.shape[0] > 1 else np.nan,
            "Bulk_ESS": _diag(dg.ess_bulk, x),
            "Tail_ESS": _diag(dg.ess_tail, x),
            "MCSE": _diag(dg.mcse_mean, x),
            "degenerate": degenerate,
        })
    table = pd.DataFrame(rows).set_index("parameter")
    table.attrs["ci_level"] = ci_level
    return table
