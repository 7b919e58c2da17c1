"""Bivariate copula families.

Each family exposes a vectorized CDF, the CDF of its survival (180-degree
rotated) version, the log-density and the asymptotic tail-dependence limits.
Survival families are built by wrapping a base family with :class:`Survival`,
so ``Survival(F).cdf`` is ``F.survival_cdf`` and vice versa.
"""

import numpy as np
from scipy import special

from ..errors import DomainError
from ._bivariate import bvn_cdf, bvt_cdf

_RHO_BOUNDS = (-0.999, 0.999)


def _as_arrays(u, v):
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    return u, v


class CopulaFamily:
    """Base class for a one- or two-parameter bivariate copula family.

    Subclasses define ``name``, ``param_names``, ``bounds`` (open intervals),
    ``_cdf`` and ``_logpdf``; everything else has a generic default.
    """

    name = ""
    param_names = ()
    bounds = ()
    radially_symmetric = False

    @property
    def n_params(self):
        return len(self.param_names)

    def __repr__(self):
        return f"{type(self).__name__}()"

    def check_params(self, params):
        params = np.atleast_1d(np.asarray(params, dtype=float))
        if params.shape != (self.n_params,):
            raise DomainError(f"{self.name}: expected {self.n_params} parameter(s), got {params.size}")
        for value, (lo, hi), pname in zip(params, self.bounds, self.param_names):
            if not lo < value < hi:
                raise DomainError(f"{self.name}: {pname}={value} outside ({lo}, {hi})")
        return tuple(float(p) for p in params)

    def cdf(self, u, v, params):
        params = self.check_params(params)
        u, v = _as_arrays(u, v)
        if np.any((u < 0) | (u > 1) | (v < 0) | (v > 1)):
            raise DomainError("copula arguments must lie in [0, 1]")
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = self._cdf(u, v, *params)
        return out

    def survival_cdf(self, u, v, params):
        """C^(u, v) = u + v - 1 + C(1 - u, 1 - v)."""
        params = self.check_params(params)
        u, v = _as_arrays(u, v)
        if np.any((u < 0) | (u > 1) | (v < 0) | (v > 1)):
            raise DomainError("copula arguments must lie in [0, 1]")
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = self._survival_cdf(u, v, *params)
        return out

    def _survival_cdf(self, u, v, *params):
        if self.radially_symmetric:
            return self._cdf(u, v, *params)
        return u + v - 1.0 + self._cdf(1.0 - u, 1.0 - v, *params)

    def logpdf(self, u, v, params):
        params = self.check_params(params)
        u, v = _as_arrays(u, v)
        if np.any((u <= 0) | (u >= 1) | (v <= 0) | (v >= 1)):
            raise DomainError("log-density arguments must lie in the open unit square")
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return self._logpdf(u, v, *params)

    def lower_tail(self, params):
        """Asymptotic lower tail-dependence coefficient."""
        return float(self._lower_tail(*self.check_params(params)))

    def upper_tail(self, params):
        return float(self._upper_tail(*self.check_params(params)))

    def _lower_tail(self, *params):
        return 0.0

    def _upper_tail(self, *params):
        return 0.0

    def tau_start(self, tau):
        """Starting parameters from Kendall's tau, or None if no closed relation."""
        return None

    def neutral_start(self):
        raise NotImplementedError


class Survival(CopulaFamily):
    """Survival copula of ``base``: the copula of (1 - U, 1 - V)."""

    def __init__(self, base, name=None):
        self.base = base
        self.name = name or f"survival_{base.name}"
        self.param_names = base.param_names
        self.bounds = base.bounds
        self.radially_symmetric = base.radially_symmetric

    def __repr__(self):
        return f"Survival({self.base!r})"

    def _cdf(self, u, v, *params):
        return self.base._survival_cdf(u, v, *params)

    def _survival_cdf(self, u, v, *params):
        return self.base._cdf(u, v, *params)

    def _logpdf(self, u, v, *params):
        return self.base._logpdf(1.0 - u, 1.0 - v, *params)

    def _lower_tail(self, *params):
        return self.base._upper_tail(*params)

    def _upper_tail(self, *params):
        return self.base._lower_tail(*params)

    def tau_start(self, tau):
        # Rotation by 180 degrees leaves Kendall's tau unchanged.
        return self.base.tau_start(tau)

    def neutral_start(self):
        return self.base.neutral_start()


class Gaussian(CopulaFamily):
    name = "gaussian"
    param_names = ("rho",)
    bounds = (_RHO_BOUNDS,)
    radially_symmetric = True

    def _cdf(self, u, v, rho):
        return bvn_cdf(special.ndtri(u), special.ndtri(v), rho)

    def _logpdf(self, u, v, rho):
        x = special.ndtri(u)
        y = special.ndtri(v)
        r2 = 1.0 - rho * rho
        return -0.5 * np.log(r2) - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2)

    def tau_start(self, tau):
        return (np.sin(0.5 * np.pi * tau),)

    def neutral_start(self):
        return (0.0,)


class StudentT(CopulaFamily):
    name = "student_t"
    param_names = ("rho", "nu")
    bounds = (_RHO_BOUNDS, (2.0, 60.0))
    radially_symmetric = True

    def _cdf(self, u, v, rho, nu):
        return bvt_cdf(t_quantile(nu, u), t_quantile(nu, v), rho, nu)

    def _logpdf(self, u, v, rho, nu):
        return t_copula_logpdf_from_quantiles(special.stdtrit(nu, u), special.stdtrit(nu, v), rho, nu)

    def _lower_tail(self, rho, nu):
        return 2.0 * special.stdtr(nu + 1.0, -np.sqrt((nu + 1.0) * (1.0 - rho) / (1.0 + rho)))

    _upper_tail = _lower_tail

    def tau_start(self, tau):
        return (np.sin(0.5 * np.pi * tau), 8.0)

    def neutral_start(self):
        return (0.0, 8.0)


def t_quantile(nu, u):
    """Student-t quantile with the endpoints mapped to -inf and inf."""
    x = special.stdtrit(nu, u)
    return np.where(u <= 0, -np.inf, np.where(u >= 1, np.inf, x))


def t_copula_logpdf_from_quantiles(x, y, rho, nu):
    """Student-t copula log-density given the t_nu quantiles of (u, v)."""
    r2 = 1.0 - rho * rho
    const = (
        special.gammaln(0.5 * (nu + 2.0))
        + special.gammaln(0.5 * nu)
        - 2.0 * special.gammaln(0.5 * (nu + 1.0))
        - 0.5 * np.log(r2)
    )
    quad = (x * x + y * y - 2.0 * rho * x * y) / (nu * r2)
    return (
        const
        - 0.5 * (nu + 2.0) * np.log1p(quad)
        + 0.5 * (nu + 1.0) * (np.log1p(x * x / nu) + np.log1p(y * y / nu))
    )


class Clayton(CopulaFamily):
    name = "clayton"
    param_names = ("theta",)
    bounds = ((1e-4, 30.0),)

    @staticmethod
    def _log_sum(u, v, theta):
        # log(u^-theta + v^-theta - 1), factoring out the largest power
        a = -theta * np.log(u)
        b = -theta * np.log(v)
        m = np.maximum(a, b)
        return m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))

    def _cdf(self, u, v, theta):
        out = np.exp(-self._log_sum(u, v, theta) / theta)
        return np.where((u == 0) | (v == 0), 0.0, out)

    def _logpdf(self, u, v, theta):
        return (
            np.log1p(theta)
            - (1.0 + theta) * (np.log(u) + np.log(v))
            - (2.0 + 1.0 / theta) * self._log_sum(u, v, theta)
        )

    def _lower_tail(self, theta):
        return 2.0 ** (-1.0 / theta)

    def tau_start(self, tau):
        return (2.0 * tau / (1.0 - tau),)

    def neutral_start(self):
        return (1.0,)


class Gumbel(CopulaFamily):
    name = "gumbel"
    param_names = ("theta",)
    bounds = ((1.0 + 1e-6, 30.0),)

    @staticmethod
    def _a(x, y, theta):
        # (x^theta + y^theta)^(1/theta) for x, y >= 0
        with np.errstate(divide="ignore"):
            lx = np.log(x)
            ly = np.log(y)
        return np.exp(np.logaddexp(theta * lx, theta * ly) / theta)

    def _cdf(self, u, v, theta):
        return np.exp(-self._a(-np.log(u), -np.log(v), theta))

    def _survival_cdf(self, u, v, theta):
        a = self._a(-np.log1p(-u), -np.log1p(-v), theta)
        return u + v + np.expm1(-a)

    def _logpdf(self, u, v, theta):
        x = -np.log(u)
        y = -np.log(v)
        lx = np.log(x)
        ly = np.log(y)
        log_a = np.logaddexp(theta * lx, theta * ly) / theta
        a = np.exp(log_a)
        return (
            -a
            + x
            + y
            + (theta - 1.0) * (lx + ly)
            + (1.0 - 2.0 * theta) * log_a
            + np.log(a + theta - 1.0)
        )

    def _upper_tail(self, theta):
        return 2.0 - 2.0 ** (1.0 / theta)

    def tau_start(self, tau):
        return (1.0 / (1.0 - tau),)

    def neutral_start(self):
        return (1.5,)


class Frank(CopulaFamily):
    name = "frank"
    param_names = ("theta",)
    bounds = ((-35.0, 35.0),)
    radially_symmetric = True
    # below this |theta| the independence expansion is exact to double precision
    _SMALL = 1e-8

    def _cdf(self, u, v, theta):
        if abs(theta) < self._SMALL:
            return u * v + 0.5 * theta * u * v * (1.0 - u) * (1.0 - v)
        ratio = np.expm1(-theta * u) * np.expm1(-theta * v) / np.expm1(-theta)
        return -np.log1p(ratio) / theta

    def _logpdf(self, u, v, theta):
        if abs(theta) < self._SMALL:
            return 0.5 * theta * (1.0 - 2.0 * u) * (1.0 - 2.0 * v)
        a = -np.expm1(-theta)
        den = a - np.expm1(-theta * u) * np.expm1(-theta * v)
        return np.log(theta * a) - theta * (u + v) - 2.0 * np.log(np.abs(den))

    def neutral_start(self):
        return (1.0,)


class Joe(CopulaFamily):
    name = "joe"
    param_names = ("theta",)
    bounds = ((1.0 + 1e-6, 30.0),)

    @staticmethod
    def _tail_sum(a, b, theta):
        # a^theta + b^theta - a^theta b^theta, with a, b the distances to 1
        at = a**theta
        bt = b**theta
        return at + bt * (1.0 - at)

    def _cdf(self, u, v, theta):
        return 1.0 - self._tail_sum(1.0 - u, 1.0 - v, theta) ** (1.0 / theta)

    def _survival_cdf(self, u, v, theta):
        with np.errstate(divide="ignore"):
            lu = np.log(u)
            lv = np.log(v)
        log_s = np.logaddexp(theta * lu, theta * lv + np.log1p(-np.exp(theta * lu)))
        return u + v - np.exp(log_s / theta)

    def _logpdf(self, u, v, theta):
        ub = 1.0 - u
        vb = 1.0 - v
        s = self._tail_sum(ub, vb, theta)
        return (
            (1.0 / theta - 2.0) * np.log(s)
            + (theta - 1.0) * (np.log(ub) + np.log(vb))
            + np.log(theta - 1.0 + s)
        )

    def _upper_tail(self, theta):
        return 2.0 - 2.0 ** (1.0 / theta)

    def tau_start(self, tau):
        # Gumbel-type inversion; Joe's tau has no closed inverse, this is a start only.
        return (1.0 / (1.0 - tau),)

    def neutral_start(self):
        return (1.5,)


class Galambos(CopulaFamily):
    """Galambos extreme-value copula, C(u, v) = uv exp((x^-t + y^-t)^(-1/t)),
    with x = -log u and y = -log v."""

    name = "galambos"
    param_names = ("theta",)
    bounds = ((1e-4, 30.0),)

    @staticmethod
    def _a(x, y, theta):
        with np.errstate(divide="ignore"):
            lx = np.log(x)
            ly = np.log(y)
        return np.exp(-np.logaddexp(-theta * lx, -theta * ly) / theta)

    def _cdf(self, u, v, theta):
        return u * v * np.exp(self._a(-np.log(u), -np.log(v), theta))

    def _survival_cdf(self, u, v, theta):
        a = self._a(-np.log1p(-u), -np.log1p(-v), theta)
        w = (1.0 - u) * (1.0 - v)
        # a is infinite on the edges u = 1 or v = 1, where the product term vanishes
        return u * v + np.where(w == 0.0, 0.0, w * np.expm1(a))

    def _logpdf(self, u, v, theta):
        x = -np.log(u)
        y = -np.log(v)
        lx = np.log(x)
        ly = np.log(y)
        log_s = np.logaddexp(-theta * lx, -theta * ly)
        a = np.exp(-log_s / theta)
        ax = np.exp((-1.0 / theta - 1.0) * log_s + (-theta - 1.0) * lx)
        ay = np.exp((-1.0 / theta - 1.0) * log_s + (-theta - 1.0) * ly)
        axy = (1.0 + theta) * np.exp((-1.0 / theta - 2.0) * log_s + (-theta - 1.0) * (lx + ly))
        return a + np.log((1.0 - ax) * (1.0 - ay) + axy)

    def _upper_tail(self, theta):
        return 2.0 ** (-1.0 / theta)

    def neutral_start(self):
        return (1.0,)


class BB1(CopulaFamily):
    """Two-parameter Archimedean family with generator (t^-theta - 1)^delta."""

    name = "bb1"
    param_names = ("theta", "delta")
    bounds = ((1e-4, 7.0), (1.0 + 1e-6, 7.0))

    @staticmethod
    def _log_gen(u, theta):
        # log(u^-theta - 1)
        return np.log(np.expm1(-theta * np.log(u)))

    def _cdf(self, u, v, theta, delta):
        lx = self._log_gen(u, theta)
        ly = self._log_gen(v, theta)
        w = np.exp(np.logaddexp(delta * lx, delta * ly) / delta)
        out = np.exp(-np.log1p(w) / theta)
        return np.where((u == 0) | (v == 0), 0.0, out)

    def _logpdf(self, u, v, theta, delta):
        lx = self._log_gen(u, theta)
        ly = self._log_gen(v, theta)
        log_s = np.logaddexp(delta * lx, delta * ly)
        log_w = log_s / delta
        w = np.exp(log_w)
        return (
            np.log(theta)
            - 2.0 * log_s
            + log_w
            + (-1.0 / theta - 2.0) * np.log1p(w)
            + np.log(w * (delta + 1.0 / theta) + delta - 1.0)
            + (delta - 1.0) * (lx + ly)
            - (theta + 1.0) * (np.log(u) + np.log(v))
        )

    def _lower_tail(self, theta, delta):
        return 2.0 ** (-1.0 / (theta * delta))

    def _upper_tail(self, theta, delta):
        return 2.0 - 2.0 ** (1.0 / delta)

    def tau_start(self, tau):
        # tau = 1 - 2 / (delta (theta + 2)) solved for delta at the neutral theta
        theta = 0.5
        return (theta, 2.0 / ((1.0 - tau) * (theta + 2.0)))

    def neutral_start(self):
        return (0.5, 1.5)


GAUSSIAN = Gaussian()
STUDENT_T = StudentT()
CLAYTON = Clayton()
GUMBEL = Gumbel()
FRANK = Frank()
JOE = Joe()
GALAMBOS = Galambos()
BB1_FAMILY = BB1()

SURVIVAL_GUMBEL = Survival(GUMBEL)
SURVIVAL_JOE = Survival(JOE)
SURVIVAL_GALAMBOS = Survival(GALAMBOS)
SURVIVAL_CLAYTON = Survival(CLAYTON)
SURVIVAL_BB1 = Survival(BB1_FAMILY)

#: The ensemble families, in their canonical order C1..C8.
ENSEMBLE_FAMILIES = (
    "gaussian",
    "student_t",
    "clayton",
    "survival_gumbel",
    "frank",
    "survival_joe",
    "survival_galambos",
    "bb1",
)

_REGISTRY = {
    f.name: f
    for f in (
        GAUSSIAN,
        STUDENT_T,
        CLAYTON,
        GUMBEL,
        FRANK,
        JOE,
        GALAMBOS,
        BB1_FAMILY,
        SURVIVAL_GUMBEL,
        SURVIVAL_JOE,
        SURVIVAL_GALAMBOS,
        SURVIVAL_CLAYTON,
        SURVIVAL_BB1,
    )
}


def get_family(family):
    """Look up a family by name; family objects pass through unchanged."""
    if isinstance(family, CopulaFamily):
        return family
    try:
        return _REGISTRY[family]
    except KeyError:
        raise DomainError(f"unknown copula family {family!r}") from None


def family_names():
    return tuple(_REGISTRY)
