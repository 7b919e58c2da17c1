"""Synthetic data generators shared by the test modules."""

import datetime as dt
import math

import numpy as np
from scipy import special

from tailcluster.copula.sampling import sample_clayton
from tailcluster.ingest import PricePanel, write_prices_wide

GARCH_TRUE = {"omega": 0.05, "alpha": 0.05, "gamma": 0.10, "beta": 0.85, "nu": 6.0}


def block_labels(sizes):
    return tuple(b for b, size in enumerate(sizes) for _ in range(size))


def clayton_blocks(sizes, theta, n, rng):
    """d x n uniforms: exchangeable Clayton within blocks, independent across."""
    return np.vstack([sample_clayton(theta, n, rng, dim=size).T for size in sizes])


def gjr_from_uniforms(u, omega, alpha, gamma, beta, nu, burn=500, rng=None):
    """Feed uniforms through standardized-t quantiles into a GJR-GARCH recursion.

    ``burn`` extra independent shocks (drawn from ``rng``) warm up the variance
    so the returned path starts near stationarity.
    """
    u = np.atleast_2d(u)
    scale = math.sqrt((nu - 2.0) / nu)
    z = special.stdtrit(nu, u) * scale
    if burn and rng is not None:
        warm = rng.standard_t(nu, (u.shape[0], burn)) * scale
        z = np.hstack([warm, z])
    else:
        burn = 0
    out = np.empty_like(z)
    s2 = np.full(z.shape[0], omega / (1.0 - alpha - 0.5 * gamma - beta))
    for t in range(z.shape[1]):
        e = np.sqrt(s2) * z[:, t]
        out[:, t] = e
        s2 = omega + (alpha + gamma * (e < 0.0)) * e * e + beta * s2
    return out[:, burn:]


def business_days(n, start=dt.date(2015, 1, 5)):
    days, day = [], start
    while len(days) < n:
        if day.weekday() < 5:
            days.append(day)
        day += dt.timedelta(days=1)
    return tuple(days)


def price_panel(log_returns, tickers=None, start_price=100.0):
    """PricePanel whose log-returns are exactly ``log_returns`` (d x T)."""
    r = np.asarray(log_returns, dtype=float)
    d, t = r.shape
    tickers = tickers or tuple(f"A{i:02d}" for i in range(d))
    logp = np.log(start_price) + np.concatenate([np.zeros((d, 1)), np.cumsum(r, axis=1)], axis=1)
    return PricePanel(tuple(tickers), business_days(t + 1), np.exp(logp))


def clayton_block_returns(sizes, theta, n, seed, percent=True):
    """Daily log-returns (d x n) with Clayton blocks on GJR-GARCH-t margins.

    With ``percent`` the GARCH parameters are read in percent units and the
    returns divided by 100, giving realistic daily magnitudes.
    """
    rng = np.random.default_rng(seed)
    u = clayton_blocks(sizes, theta, n, rng)
    r = gjr_from_uniforms(u, rng=rng, **GARCH_TRUE)
    return r / 100.0 if percent else r


def write_block_csv(path, sizes, theta, n, seed):
    r = clayton_block_returns(sizes, theta, n, seed)
    panel = price_panel(r)
    write_prices_wide(path, panel)
    return panel
