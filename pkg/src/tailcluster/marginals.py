"""Per-series marginal models: ARMA mean, GJR-GARCH(1,1) variance with Student-t
innovations, and rank-based pseudo-observations of the standardized residuals.

ARMA(p, q) is written in deviation form

    y_t - mu = sum_i phi_i (y_{t-i} - mu) + e_t + sum_j theta_j e_{t-j}

with intercept ``c = mu * (1 - sum(phi))``. Estimation is by conditional sum of
squares. Every order on the 6 x 6 grid conditions on the same first
``MAX_ORDER`` observations so that the AIC values are comparable.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal, special, stats

from .errors import DomainError, FitError

MAX_ORDER = 5
MIN_ARMA_OBS = 50
MIN_GARCH_OBS = 250

# GARCH variance-targeting start
ALPHA0, GAMMA0, BETA0, NU0 = 0.05, 0.05, 0.85, 8.0

_AIC_TIE = 1e-9
# Candidate orders whose AR and MA inverse roots come this close are treated as
# parameter-redundant and left out of the AIC comparison (see fit_arma_aic).
COMMON_FACTOR_TOL = 0.1
_NU_MIN = 2.0
_NU_MAX = 500.0


# ----------------------------------------------------------------------------
# ARMA
# ----------------------------------------------------------------------------


def pacf_to_ar(r):
    """Map partial autocorrelations in (-1, 1) to stationary AR coefficients.

    Durbin-Levinson recursion; the result has all roots of
    ``1 - phi_1 z - ... - phi_p z^p`` outside the unit circle.
    """
    phi = np.zeros(0)
    for k, rk in enumerate(np.asarray(r, dtype=float)):
        phi = np.append(phi - rk * phi[::-1], rk) if k else np.array([rk])
    return phi


def ar_to_pacf(phi):
    """Inverse of :func:`pacf_to_ar`; returns None if ``phi`` is not stationary."""
    phi = np.asarray(phi, dtype=float).copy()
    r = np.zeros(len(phi))
    for k in range(len(phi), 0, -1):
        rk = phi[-1]
        if not abs(rk) < 1.0:
            return None
        r[k - 1] = rk
        phi = (phi[:-1] + rk * phi[:-1][::-1]) / (1.0 - rk * rk)
    return r


def is_stationary(phi):
    return ar_to_pacf(phi) is not None


def is_invertible(theta):
    return ar_to_pacf(-np.asarray(theta, dtype=float)) is not None


@dataclass(frozen=True)
class ArmaSpec:
    p: int
    q: int
    intercept_included: bool = True

    def __post_init__(self):
        if not (0 <= self.p <= MAX_ORDER and 0 <= self.q <= MAX_ORDER):
            raise DomainError(f"ARMA orders must lie in [0, {MAX_ORDER}], got ({self.p}, {self.q})")


@dataclass(frozen=True)
class ArmaFit:
    spec: ArmaSpec
    intercept: float
    ar_coeffs: np.ndarray
    ma_coeffs: np.ndarray
    residual_variance: float
    aic: float
    loglik: float
    residuals: np.ndarray = field(repr=False)

    @property
    def mean(self):
        return self.intercept / (1.0 - float(np.sum(self.ar_coeffs)))

    def to_dict(self):
        out = {"p": self.spec.p, "q": self.spec.q, "c": float(self.intercept)}
        for i in range(MAX_ORDER):
            out[f"phi_{i + 1}"] = float(self.ar_coeffs[i]) if i < self.spec.p else 0.0
        for j in range(MAX_ORDER):
            out[f"theta_{j + 1}"] = float(self.ma_coeffs[j]) if j < self.spec.q else 0.0
        out["sigma2"] = float(self.residual_variance)
        out["aic"] = float(self.aic)
        out["loglik"] = float(self.loglik)
        return out


def arma_residuals(y, mu, phi, theta):
    """Residuals with pre-sample values of ``y`` set to ``mu`` and of ``e`` to 0."""
    ar_poly = np.concatenate(([1.0], -np.asarray(phi, dtype=float)))
    ma_poly = np.concatenate(([1.0], np.asarray(theta, dtype=float)))
    return signal.lfilter(ar_poly, ma_poly, np.asarray(y, dtype=float) - mu)


def _unpack_arma(z, p, q):
    mu = z[0]
    phi = pacf_to_ar(np.tanh(z[1 : 1 + p]))
    theta = -pacf_to_ar(np.tanh(z[1 + p : 1 + p + q]))
    return mu, phi, theta


def _hannan_rissanen(y, p, q):
    """Two-stage regression start for (phi, theta); None when unusable."""
    n = len(y)
    long_ar = min(max(2 * (p + q), 8), n // 4)
    x = y - y.mean()
    lags = np.column_stack([x[long_ar - i - 1 : n - i - 1] for i in range(long_ar)])
    coef, *_ = np.linalg.lstsq(lags, x[long_ar:], rcond=None)
    e = np.zeros(n)
    e[long_ar:] = x[long_ar:] - lags @ coef
    start = long_ar + max(p, q)
    cols = [x[start - i - 1 : n - i - 1] for i in range(p)] + [e[start - j - 1 : n - j - 1] for j in range(q)]
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), x[start:], rcond=None)
    phi, theta = coef[:p], coef[p:]
    r_ar = ar_to_pacf(phi)
    r_ma = ar_to_pacf(-theta)
    if r_ar is None or r_ma is None:
        return None
    return np.arctanh(np.clip(np.concatenate([r_ar, r_ma]), -0.99, 0.99))


def _fit_arma_order(y, p, q, n_cond):
    y_mean = float(np.mean(y))
    scale = float(np.std(y))

    def resid(z):
        mu, phi, theta = _unpack_arma(z, p, q)
        return arma_residuals(y, mu * scale + y_mean, phi, theta)[n_cond:] / scale

    starts = [np.zeros(1 + p + q)]
    if p + q > 0:
        hr = _hannan_rissanen(y, p, q)
        if hr is not None:
            starts.append(np.concatenate(([0.0], hr)))
    best = None
    for z0 in starts:
        res = optimize.least_squares(resid, z0, method="lm", xtol=1e-10, ftol=1e-12)
        ssr = float(np.sum(res.fun**2))
        if np.isfinite(ssr) and (best is None or ssr < best[1]):
            best = (res.x, ssr)
    if best is None:
        return None
    z = best[0]
    mu, phi, theta = _unpack_arma(z, p, q)
    mu = mu * scale + y_mean
    e = arma_residuals(y, mu, phi, theta)
    n = len(y) - n_cond
    sigma2 = float(np.sum(e[n_cond:] ** 2)) / n
    if not (np.isfinite(sigma2) and sigma2 > 0):
        return None
    loglik = -0.5 * n * (math.log(2.0 * math.pi * sigma2) + 1.0)
    aic = -2.0 * loglik + 2.0 * (p + q + 2)
    return ArmaFit(
        spec=ArmaSpec(p, q),
        intercept=float(mu * (1.0 - np.sum(phi))),
        ar_coeffs=phi,
        ma_coeffs=theta,
        residual_variance=sigma2,
        aic=aic,
        loglik=loglik,
        residuals=e,
    )


def fit_arma(series, p, q):
    """CSS fit of one ARMA(p, q), conditioning on the first ``MAX_ORDER`` points."""
    y = _check_series(series, MIN_ARMA_OBS)
    ArmaSpec(p, q)
    fit = _fit_arma_order(y, p, q, MAX_ORDER)
    if fit is None:
        raise FitError(f"ARMA({p},{q}) fit failed")
    return fit


def _inverse_roots(coeffs):
    """Inverse roots of ``1 + c_1 z + ... + c_n z^n``."""
    c = np.asarray(coeffs, dtype=float)
    if len(c) == 0 or not np.any(c):
        return np.zeros(0, dtype=complex)
    # z^n * poly(1/z) = z^n + c_1 z^{n-1} + ... + c_n has the inverse roots
    return np.roots(np.concatenate(([1.0], c)))


def has_common_factor(phi, theta, tol=COMMON_FACTOR_TOL):
    """True when an AR and an MA inverse root lie within ``tol`` of each other."""
    a = _inverse_roots(-np.asarray(phi, dtype=float))
    b = _inverse_roots(theta)
    if len(a) == 0 or len(b) == 0:
        return False
    return bool(np.min(np.abs(a[:, None] - b[None, :])) < tol)


def fit_arma_aic(series):
    """Fit all ARMA(p, q) with 0 <= p, q <= 5 and return the minimum-AIC model.

    A fit whose AR and MA polynomials nearly share a factor is dropped from the
    comparison: it is an over-parametrized version of a lower order on the same
    grid, and the conditional sum of squares rewards such near-cancelling
    factors close to the unit circle with gains the exact likelihood does not
    give. AIC values within a relative 1e-9 of the minimum count as ties,
    resolved in favour of the smaller p + q and then the smaller p.
    """
    y = _check_series(series, MIN_ARMA_OBS)
    fits = []
    for p in range(MAX_ORDER + 1):
        for q in range(MAX_ORDER + 1):
            fit = _fit_arma_order(y, p, q, MAX_ORDER)
            if fit is not None and not has_common_factor(fit.ar_coeffs, fit.ma_coeffs):
                fits.append(fit)
    if not fits:
        raise FitError("no ARMA order could be fitted")
    best_aic = min(f.aic for f in fits)
    tol = _AIC_TIE * max(1.0, abs(best_aic))
    tied = [f for f in fits if f.aic <= best_aic + tol]
    return min(tied, key=lambda f: (f.spec.p + f.spec.q, f.spec.p))


def _check_series(series, min_obs):
    y = np.asarray(series, dtype=float)
    if y.ndim != 1:
        raise DomainError("expected a one-dimensional series")
    if len(y) < min_obs:
        raise DomainError(f"need at least {min_obs} observations, got {len(y)}")
    if not np.all(np.isfinite(y)):
        raise DomainError("series contains non-finite values")
    if np.ptp(y) == 0.0:
        raise FitError("series is constant")
    return y


# ----------------------------------------------------------------------------
# GJR-GARCH(1,1) with standardized Student-t innovations
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class GjrGarchFit:
    mean: float
    omega: float
    arch: float
    leverage: float
    beta: float
    dof: float
    loglik: float
    conditional_sigmas: np.ndarray = field(repr=False)
    std_residuals: np.ndarray = field(repr=False)

    @property
    def persistence(self):
        return self.arch + 0.5 * self.leverage + self.beta

    def to_dict(self):
        return {
            "mu": float(self.mean),
            "omega": float(self.omega),
            "alpha": float(self.arch),
            "gamma": float(self.leverage),
            "beta": float(self.beta),
            "nu": float(self.dof),
            "loglik": float(self.loglik),
        }


def gjr_variance(eps, omega, alpha, gamma, beta, sigma2_0):
    """Conditional variances with sigma^2 at the first point set to ``sigma2_0``."""
    shock = (alpha + gamma * (eps < 0.0)) * eps * eps
    out = np.empty_like(eps)
    out[0] = sigma2_0
    out[1:], _ = signal.lfilter([1.0], [1.0, -beta], omega + shock[:-1], zi=[beta * sigma2_0])
    return out


def std_t_logpdf(z, nu):
    """Log-density of the unit-variance Student-t distribution."""
    c = special.gammaln(0.5 * (nu + 1.0)) - special.gammaln(0.5 * nu) - 0.5 * math.log(math.pi * (nu - 2.0))
    return c - 0.5 * (nu + 1.0) * np.log1p(z * z / (nu - 2.0))


def gjr_loglik(x, mu, omega, alpha, gamma, beta, nu, sigma2_0=None):
    eps = x - mu
    if sigma2_0 is None:
        sigma2_0 = float(np.var(x))
    s2 = gjr_variance(eps, omega, alpha, gamma, beta, sigma2_0)
    return float(np.sum(std_t_logpdf(eps / np.sqrt(s2), nu) - 0.5 * np.log(s2)))


def _garch_unpack(z):
    mu, log_omega, logit_p, a1, a2, log_nu = z
    persistence = special.expit(logit_p)
    shares = special.softmax([a1, a2, 0.0])
    alpha, half_gamma, beta = persistence * shares
    nu = _NU_MIN + min(math.exp(min(log_nu, 50.0)), _NU_MAX)
    return mu, math.exp(log_omega), alpha, 2.0 * half_gamma, beta, nu


def _garch_pack(mu, omega, alpha, gamma, beta, nu):
    persistence = alpha + 0.5 * gamma + beta
    shares = np.array([alpha, 0.5 * gamma, beta]) / persistence
    return np.array(
        [mu, math.log(omega), special.logit(persistence), math.log(shares[0] / shares[2]),
         math.log(shares[1] / shares[2]), math.log(nu - _NU_MIN)]
    )


def fit_gjr_garch_t(residuals):
    """Maximum-likelihood GJR-GARCH(1,1) with standardized Student-t errors.

    The recursion is

        sigma2_t = omega + (alpha + gamma * 1[eps_{t-1} < 0]) eps_{t-1}^2 + beta sigma2_{t-1}

    with ``eps_t = x_t - mu`` and ``sigma2`` at the first point equal to the
    sample variance. Parameters are searched in an unconstrained space:
    persistence ``alpha + gamma/2 + beta`` through a logistic map and its split
    across the three terms through a softmax, which keeps every fit covariance
    stationary with ``alpha, gamma, beta >= 0``. The data are standardized
    before the search and the location and scale parameters mapped back.
    """
    x = _check_series(residuals, MIN_GARCH_OBS)
    loc = float(np.mean(x))
    scale = float(np.std(x))
    y = (x - loc) / scale
    v0 = float(np.var(y))

    def negloglik(z):
        mu, omega, alpha, gamma, beta, nu = _garch_unpack(z)
        with np.errstate(all="ignore"):
            ll = gjr_loglik(y, mu, omega, alpha, gamma, beta, nu, v0)
        return -ll if np.isfinite(ll) else np.inf

    persistence0 = ALPHA0 + 0.5 * GAMMA0 + BETA0
    z0 = _garch_pack(0.0, v0 * (1.0 - persistence0), ALPHA0, GAMMA0, BETA0, NU0)
    if not np.isfinite(negloglik(z0)):
        raise FitError("GARCH log-likelihood is not finite at the start")
    opts = {"xatol": 1e-7, "fatol": 1e-9, "maxiter": 6000, "maxfev": 6000}
    res = optimize.minimize(negloglik, z0, method="Nelder-Mead", options=opts)
    # a restart from the optimum re-expands a simplex that may have collapsed
    res = optimize.minimize(negloglik, res.x, method="Nelder-Mead", options=opts)
    if not np.isfinite(res.fun):
        raise FitError("GARCH log-likelihood is not finite at the optimum")

    mu, omega, alpha, gamma, beta, nu = _garch_unpack(res.x)
    if not alpha + 0.5 * gamma + beta < 1.0:
        raise FitError("GARCH optimum violates covariance stationarity")
    eps = y - mu
    s2 = gjr_variance(eps, omega, alpha, gamma, beta, v0)
    sigmas = np.sqrt(s2)
    return GjrGarchFit(
        mean=loc + scale * mu,
        omega=omega * scale * scale,
        arch=alpha,
        leverage=gamma,
        beta=beta,
        dof=nu,
        loglik=-res.fun - len(y) * math.log(scale),
        conditional_sigmas=sigmas * scale,
        std_residuals=eps / sigmas,
    )


def simulate_gjr_garch_t(n, omega, alpha, gamma, beta, nu, rng, mu=0.0, burn=1000):
    """Simulate a GJR-GARCH(1,1)-t path (test and example support)."""
    total = n + burn
    scale = math.sqrt((nu - 2.0) / nu)
    z = rng.standard_t(nu, total) * scale
    s2 = omega / (1.0 - alpha - 0.5 * gamma - beta)
    out = np.empty(total)
    for t in range(total):
        e = math.sqrt(s2) * z[t]
        out[t] = e
        s2 = omega + (alpha + gamma * (e < 0.0)) * e * e + beta * s2
    return mu + out[burn:]


# ----------------------------------------------------------------------------
# Pseudo-observations and the combined per-series model
# ----------------------------------------------------------------------------


def pseudo_observations(std_residuals):
    """Average ranks divided by T + 1, row by row."""
    x = np.atleast_2d(np.asarray(std_residuals, dtype=float))
    if np.any(np.ptp(x, axis=1) == 0.0):
        raise DomainError("a row of residuals is constant")
    return stats.rankdata(x, method="average", axis=1) / (x.shape[1] + 1.0)


@dataclass(frozen=True)
class MarginalFit:
    ticker: str
    arma: ArmaFit
    garch: GjrGarchFit

    @property
    def std_residuals(self):
        return self.garch.std_residuals

    def to_dict(self):
        return {"ticker": self.ticker, "arma": self.arma.to_dict(), "garch": self.garch.to_dict()}


def fit_marginal(series, ticker=""):
    """ARMA by AIC, then GJR-GARCH-t on the ARMA residuals."""
    arma = fit_arma_aic(series)
    garch = fit_gjr_garch_t(arma.residuals)
    return MarginalFit(ticker, arma, garch)


def _fit_marginal_star(args):
    return fit_marginal(*args)


def fit_marginals(panel, executor=None):
    """Fit every row of a ReturnPanel; ``executor.map`` keeps the input order."""
    jobs = list(zip(panel.returns, panel.tickers))
    mapper = map if executor is None else executor.map
    return list(mapper(_fit_marginal_star, jobs))
