"""Bivariate copulas: evaluation, maximum-likelihood fitting and tail dependence."""

import numpy as np

from ..errors import DomainError
from .families import ENSEMBLE_FAMILIES, CopulaFamily, Survival, family_names, get_family
from .fitting import CopulaFit, fit_mle, fit_pairs

__all__ = [
    "ENSEMBLE_FAMILIES",
    "CopulaFamily",
    "CopulaFit",
    "Survival",
    "asymptotic_lower_tdc",
    "cdf",
    "family_names",
    "finite_lower_tdc",
    "finite_upper_tdc",
    "fit_mle",
    "fit_pairs",
    "get_family",
    "log_density",
]


def cdf(family, params, u, v):
    return get_family(family).cdf(u, v, params)


def log_density(family, params, u, v):
    out = get_family(family).logpdf(u, v, params)
    if not np.all(np.isfinite(out)):
        raise DomainError("log-density evaluated to a non-finite value")
    return out


def finite_lower_tdc(family, params, q):
    """C(q, q) / q for q in (0, 1/2]."""
    if not 0.0 < q <= 0.5:
        raise DomainError(f"lower-tail level q={q} outside (0, 0.5]")
    return float(get_family(family).cdf(q, q, params)) / q


def finite_upper_tdc(family, params, q):
    """(1 - 2q + C(q, q)) / (1 - q) for q in (1/2, 1).

    Evaluated as the survival copula at (1 - q, 1 - q), which is the same
    quantity without the cancellation in 1 - 2q + C(q, q).
    """
    if not 0.5 < q < 1.0:
        raise DomainError(f"upper-tail level q={q} outside (0.5, 1)")
    p = 1.0 - q
    return float(get_family(family).survival_cdf(p, p, params)) / p


def asymptotic_lower_tdc(family, params):
    """Limit of the finite lower TDC as q -> 0+."""
    return get_family(family).lower_tail(params)
