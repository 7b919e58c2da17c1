"""Random sampling from the copula families.

Test support only: the pipeline itself never draws random numbers. Archimedean
families with a tractable frailty use the Marshall-Olkin construction,
elliptical families use their stochastic representation, and the rest invert
the conditional distribution ``h(v | u) = dC/du`` numerically.
"""

import numpy as np
from scipy import special

from .families import Survival, get_family


def positive_stable(alpha, size, rng):
    """Kanter's sampler for S >= 0 with Laplace transform exp(-t**alpha)."""
    if alpha == 1.0:
        return np.ones(size)
    theta = rng.uniform(0.0, np.pi, size)
    w = rng.exponential(1.0, size)
    a = (
        np.sin(alpha * theta) ** alpha * np.sin((1.0 - alpha) * theta) ** (1.0 - alpha) / np.sin(theta)
    ) ** (1.0 / (1.0 - alpha))
    return (a / w) ** ((1.0 - alpha) / alpha)


def _frailty(psi, v, n, dim, rng):
    e = rng.exponential(1.0, (n, dim))
    return psi(e / v[:, None])


def sample_clayton(theta, n, rng, dim=2):
    """Exchangeable ``dim``-variate Clayton sample via gamma frailty."""
    v = rng.gamma(1.0 / theta, 1.0, n)
    return _frailty(lambda s: (1.0 + s) ** (-1.0 / theta), v, n, dim, rng)


def _gumbel(theta, n, rng):
    v = positive_stable(1.0 / theta, n, rng)
    return _frailty(lambda s: np.exp(-(s ** (1.0 / theta))), v, n, 2, rng)


def _bb1(theta, delta, n, rng):
    g = rng.gamma(1.0 / theta, 1.0, n)
    v = g**delta * positive_stable(1.0 / delta, n, rng)
    return _frailty(lambda s: (1.0 + s ** (1.0 / delta)) ** (-1.0 / theta), v, n, 2, rng)


def _frank(theta, n, rng):
    u = rng.uniform(size=n)
    w = rng.uniform(size=n)
    a = np.expm1(-theta)
    b = np.exp(-theta * u)
    v = -np.log1p(w * a / (b - w * (b - 1.0))) / theta
    return np.column_stack([u, v])


def _joe_h(u, v, theta):
    ub = 1.0 - u
    vb = 1.0 - v
    at = ub**theta
    bt = vb**theta
    s = at + bt - at * bt
    return s ** (1.0 / theta - 1.0) * ub ** (theta - 1.0) * (1.0 - bt)


def _galambos_h(u, v, theta):
    x = -np.log(u)
    y = -np.log(v)
    s = x ** (-theta) + y ** (-theta)
    a = s ** (-1.0 / theta)
    ax = s ** (-1.0 / theta - 1.0) * x ** (-theta - 1.0)
    return v * np.exp(a) * (1.0 - ax)


def _invert_conditional(h, theta, n, rng, iters=60):
    u = rng.uniform(size=n)
    w = rng.uniform(size=n)
    lo = np.zeros(n)
    hi = np.ones(n)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        with np.errstate(all="ignore"):
            below = h(u, mid, theta) < w
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return np.column_stack([u, 0.5 * (lo + hi)])


def sample(family, params, n, rng):
    """Draw ``n`` pairs from ``family`` with ``params``; returns an (n, 2) array."""
    fam = get_family(family)
    params = fam.check_params(params)
    if isinstance(fam, Survival):
        return 1.0 - sample(fam.base, params, n, rng)
    name = fam.name
    if name == "gaussian":
        (rho,) = params
        z = rng.standard_normal((n, 2))
        z[:, 1] = rho * z[:, 0] + np.sqrt(1.0 - rho * rho) * z[:, 1]
        return special.ndtr(z)
    if name == "student_t":
        rho, nu = params
        z = rng.standard_normal((n, 2))
        z[:, 1] = rho * z[:, 0] + np.sqrt(1.0 - rho * rho) * z[:, 1]
        x = z / np.sqrt(rng.chisquare(nu, n) / nu)[:, None]
        return special.stdtr(nu, x)
    if name == "clayton":
        return sample_clayton(params[0], n, rng)
    if name == "gumbel":
        return _gumbel(params[0], n, rng)
    if name == "frank":
        return _frank(params[0], n, rng)
    if name == "bb1":
        return _bb1(params[0], params[1], n, rng)
    if name == "joe":
        return _invert_conditional(_joe_h, params[0], n, rng)
    if name == "galambos":
        return _invert_conditional(_galambos_h, params[0], n, rng)
    raise NotImplementedError(f"no sampler for {name}")
