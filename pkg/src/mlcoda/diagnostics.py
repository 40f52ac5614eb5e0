"""Convergence diagnostics for MCMC draws.

Rank-normalised split R-hat and bulk/tail effective sample size, following
Vehtari, Gelman, Simpson, Carpenter and Buerkner (2021).  Every function
takes a ``(chains, draws)`` array for a single scalar quantity.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from .errors import TooFewDraws

__all__ = ["rhat", "ess_bulk", "ess_tail", "ess_mean", "mcse_mean", "split_chains"]

_MIN_HALF = 4


def _as_chains(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"expected (chains, draws), got shape {x.shape}")
    return x


def split_chains(x):
    """Split every chain in two halves; the middle draw of odd chains is dropped."""
    x = _as_chains(x)
    half = x.shape[1] // 2
    if half < _MIN_HALF:
        raise TooFewDraws(
            f"need at least {2 * _MIN_HALF} draws per chain, got {x.shape[1]}"
        )
    return np.vstack([x[:, :half], x[:, x.shape[1] - half:]])


def _z_scale(x):
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    return stats.norm.ppf((ranks - 0.375) / (x.size + 0.25))


def _rhat_basic(x):
    m, n = x.shape
    W = x.var(axis=1, ddof=1).mean()
    B = n * x.mean(axis=1).var(ddof=1)
    if W == 0:
        return np.nan if B == 0 else np.inf
    var_hat = (n - 1) / n * W + B / n
    return float(np.sqrt(var_hat / W))


def rhat(x):
    """Rank-normalised split R-hat: the larger of the bulk and folded values.

    Parameters
    ----------
    x : array_like, shape (chains, draws)
        At least two chains.

    Returns
    -------
    float
        ``nan`` when every draw is identical, ``inf`` when chains are
        individually constant but disagree.
    """
    x = _as_chains(x)
    if x.shape[0] < 2:
        raise TooFewDraws("R-hat needs at least two chains")
    xs = split_chains(x)
    if np.ptp(x) == 0:
        return np.nan
    bulk = _rhat_basic(_z_scale(xs))
    folded = np.abs(xs - np.median(xs))
    tail = _rhat_basic(_z_scale(folded))
    return float(np.nanmax([bulk, tail]))


def _autocov(x):
    n = x.shape[1]
    xc = x - x.mean(axis=1, keepdims=True)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, n=nfft, axis=1)
    return np.fft.irfft(f * np.conj(f), n=nfft, axis=1)[:, :n] / n


def _ess_basic(x):
    """ESS of already split chains; Geyer initial monotone sequence truncation."""
    m, n = x.shape
    if np.ptp(x) == 0:
        return float(m * n)
    acov = _autocov(x)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # Initial positive sequence over pairs (rho_2t + rho_2t+1).
    rho_t = np.zeros(n)
    rho_t[0], rho_t[1] = 1.0, rho[1]
    t = 1
    even, odd = 1.0, rho[1]
    while t < n - 3 and even + odd > 0:
        even, odd = rho[t + 1], rho[t + 2]
        if even + odd >= 0:
            rho_t[t + 1], rho_t[t + 2] = even, odd
        t += 2
    max_t = t - 2
    if even > 0:
        rho_t[max_t + 1] = even
    # Initial monotone sequence.
    t = 1
    while t <= max_t - 2:
        if rho_t[t + 1] + rho_t[t + 2] > rho_t[t - 1] + rho_t[t]:
            rho_t[t + 1] = rho_t[t + 2] = (rho_t[t - 1] + rho_t[t]) / 2
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho_t[: max_t + 1].sum() + rho_t[max_t + 1: max_t + 2].sum()
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def ess_bulk(x):
    """Bulk ESS: ESS of the rank-normalised split chains."""
    return _ess_basic(_z_scale(split_chains(x)))


def ess_tail(x):
    """Tail ESS: the smaller ESS of the 5% and 95% quantile indicators."""
    x = _as_chains(x)
    xs = split_chains(x)
    lo, hi = np.quantile(x, [0.05, 0.95])
    return min(_ess_basic((xs <= lo).astype(float)), _ess_basic((xs <= hi).astype(float)))


def ess_mean(x):
    """ESS of the raw (not rank-normalised) split chains."""
    return _ess_basic(split_chains(x))


def mcse_mean(x):
    """Monte Carlo standard error of the posterior mean."""
    x = _as_chains(x)
    sd = x.std(ddof=1)
    if sd == 0:
        return 0.0
    return float(sd / np.sqrt(ess_mean(x)))
