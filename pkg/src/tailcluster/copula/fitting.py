"""Maximum-likelihood fitting of bivariate copulas to pseudo-observations."""

from dataclasses import dataclass

import numpy as np
from scipy import optimize, special, stats

from ..errors import DomainError, FitError
from .families import get_family, t_copula_logpdf_from_quantiles

MIN_OBSERVATIONS = 50

# Student-t profile grid for the degrees of freedom.
NU_GRID = (2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 15.0, 25.0)

_XATOL = 1e-8
_FATOL = 1e-10
# fraction of the parameter range kept clear of the bounds by a start value
_START_MARGIN = 1e-3
# a fitted parameter this close (relative to the range) to a bound is flagged
_BOUND_FLAG = 1e-6


@dataclass(frozen=True)
class CopulaFit:
    family: str
    params: tuple
    loglik: float
    pair: tuple = None
    at_bound: bool = False
    n_obs: int = 0

    def to_dict(self):
        return {
            "pair": None if self.pair is None else [int(i) for i in self.pair],
            "family": self.family,
            "params": [float(p) for p in self.params],
            "loglik": float(self.loglik),
            "at_bound": bool(self.at_bound),
            "n_obs": int(self.n_obs),
        }

    @classmethod
    def from_dict(cls, record):
        pair = record.get("pair")
        return cls(
            family=record["family"],
            params=tuple(float(p) for p in record["params"]),
            loglik=float(record["loglik"]),
            pair=None if pair is None else tuple(int(i) for i in pair),
            at_bound=bool(record.get("at_bound", False)),
            n_obs=int(record.get("n_obs", 0)),
        )


@dataclass
class _Transform:
    """Logistic map between an open box and R^n."""

    lo: np.ndarray
    hi: np.ndarray

    def to_params(self, z):
        p = self.lo + (self.hi - self.lo) * special.expit(z)
        # expit saturates to exactly 0 or 1; stay strictly inside the open box
        return np.clip(p, np.nextafter(self.lo, self.hi), np.nextafter(self.hi, self.lo))

    def to_free(self, params):
        p = np.asarray(params, dtype=float)
        margin = _START_MARGIN * (self.hi - self.lo)
        p = np.clip(p, self.lo + margin, self.hi - margin)
        return special.logit((p - self.lo) / (self.hi - self.lo))


def _check_pairs(u_pairs):
    x = np.asarray(u_pairs, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise DomainError(f"expected a T x 2 array of pseudo-observations, got shape {x.shape}")
    if x.shape[0] < MIN_OBSERVATIONS:
        raise DomainError(f"need at least {MIN_OBSERVATIONS} observations, got {x.shape[0]}")
    if not np.all((x > 0) & (x < 1)):
        raise DomainError("pseudo-observations must lie strictly inside (0, 1)")
    return x[:, 0], x[:, 1]


def _near_bound(family, params):
    for p, (lo, hi) in zip(params, family.bounds):
        if min(p - lo, hi - p) <= _BOUND_FLAG * (hi - lo):
            return True
    return False


def _nelder_mead(objective, z0):
    res = optimize.minimize(
        objective,
        np.atleast_1d(z0),
        method="Nelder-Mead",
        options={"xatol": _XATOL, "fatol": _FATOL, "maxiter": 4000, "maxfev": 8000},
    )
    return res.x, res.fun


_TAU_MAX = 0.99


def _starts(family, u, v):
    tau = stats.kendalltau(u, v).statistic
    starts = []
    if np.isfinite(tau):
        # |tau| = 1 (perfectly concordant ranks) has no interior inverse
        s = family.tau_start(float(np.clip(tau, -_TAU_MAX, _TAU_MAX)))
        if s is not None:
            starts.append(tuple(float(x) for x in s))
    starts.append(tuple(float(x) for x in family.neutral_start()))
    return starts


def fit_mle(family, u_pairs):
    """Fit ``family`` to a T x 2 array of pseudo-observations by maximum likelihood.

    The search runs Nelder-Mead in logistic-transformed coordinates, started
    from the Kendall's tau inversion where the family has one and from a
    neutral point otherwise. The Student-t copula profiles the likelihood over
    a grid of degrees of freedom, then refines the degrees of freedom between
    the neighbours of the best grid point.
    """
    fam = get_family(family)
    u, v = _check_pairs(u_pairs)
    if fam.name == "student_t":
        params, loglik = _fit_student_t(fam, u, v)
    else:
        params, loglik = _fit_generic(fam, u, v)
    if not np.isfinite(loglik):
        raise FitError(f"{fam.name}: log-likelihood is not finite at the optimum")
    return CopulaFit(
        family=fam.name,
        params=tuple(float(p) for p in params),
        loglik=float(loglik),
        at_bound=_near_bound(fam, params),
        n_obs=len(u),
    )


def _fit_generic(fam, u, v):
    lo = np.array([b[0] for b in fam.bounds])
    hi = np.array([b[1] for b in fam.bounds])
    tr = _Transform(lo, hi)

    def negloglik(z):
        params = tr.to_params(z)
        with np.errstate(all="ignore"):
            ll = np.sum(fam._logpdf(u, v, *params))
        return -ll if np.isfinite(ll) else np.inf

    best = None
    for start in _starts(fam, u, v):
        z0 = tr.to_free(start)
        if not np.isfinite(negloglik(z0)):
            continue
        z, f = _nelder_mead(negloglik, z0)
        if best is None or f < best[1]:
            best = (z, f)
    if best is None or not np.isfinite(best[1]):
        raise FitError(f"{fam.name}: log-likelihood not finite at any start")
    return tr.to_params(best[0]), -best[1]


def _fit_student_t(fam, u, v):
    (rho_lo, rho_hi), (nu_lo, nu_hi) = fam.bounds
    # Pseudo-observations of both margins share one rank grid, and the t
    # quantile is odd about 1/2, so each profile step only needs quantiles of
    # the distinct values in (0, 1/2].
    values, inverse = np.unique(np.concatenate([u, v]), return_inverse=True)
    sign = np.where(values > 0.5, -1.0, 1.0)
    lower, lower_inv = np.unique(np.minimum(values, 1.0 - values), return_inverse=True)
    n = len(u)

    def quantiles(nu):
        q = sign * special.stdtrit(nu, lower)[lower_inv]
        both = q[inverse]
        return both[:n], both[n:]

    def profile(nu):
        """(best rho, negative log-likelihood) at fixed nu."""
        x, y = quantiles(nu)

        def negloglik(rho):
            ll = np.sum(t_copula_logpdf_from_quantiles(x, y, rho, nu))
            return -ll if np.isfinite(ll) else np.inf

        res = optimize.minimize_scalar(
            negloglik, bounds=(rho_lo, rho_hi), method="bounded", options={"xatol": _XATOL}
        )
        return float(res.x), float(res.fun)

    grid = [(nu,) + profile(nu) for nu in NU_GRID]
    finite = [i for i, g in enumerate(grid) if np.isfinite(g[2])]
    if not finite:
        raise FitError("student_t: log-likelihood not finite at any grid point")
    i = min(finite, key=lambda j: grid[j][2])

    # Refine nu between the neighbouring grid points (or the bounds).
    lo = NU_GRID[i - 1] if i > 0 else nu_lo + _START_MARGIN
    hi = NU_GRID[i + 1] if i + 1 < len(NU_GRID) else nu_hi - _START_MARGIN
    res = optimize.minimize_scalar(
        lambda nu: profile(nu)[1], bounds=(lo, hi), method="bounded", options={"xatol": 1e-5}
    )
    best = grid[i]
    if np.isfinite(res.fun) and res.fun < best[2]:
        rho, f = profile(res.x)
        best = (float(res.x), rho, f)
    nu, rho, f = best
    return (rho, nu), -f


def _fit_pair_task(task):
    family, i, j, ui, uj = task
    try:
        fit = fit_mle(family, np.column_stack([ui, uj]))
    except (FitError, DomainError) as exc:
        return f"pair ({i}, {j}): {exc}"
    return CopulaFit(fit.family, fit.params, fit.loglik, (i, j), fit.at_bound, fit.n_obs)


def fit_pairs(pseudo, family, executor=None, pairs=None):
    """Fit ``family`` to every pair of rows of the d x T pseudo-observation matrix.

    Results come back in the order of ``pairs`` (default: all i < j in
    lexicographic order) whatever the executor's scheduling. Raises FitError
    naming the failed pairs if any fit fails.
    """
    u = np.asarray(pseudo, dtype=float)
    d = u.shape[0]
    if pairs is None:
        pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    name = get_family(family).name
    tasks = [(name, i, j, u[i], u[j]) for i, j in pairs]
    if executor is None:
        results = list(map(_fit_pair_task, tasks))
    else:
        workers = getattr(executor, "_max_workers", None) or 1
        chunk = max(1, len(tasks) // (8 * workers))
        results = list(executor.map(_fit_pair_task, tasks, chunksize=chunk))
    failures = [r for r in results if isinstance(r, str)]
    if failures:
        raise FitError(f"{name}: {len(failures)} pair fit(s) failed; first: {failures[0]}")
    return results
