"""Portfolio construction, fixed-weight backtests and performance metrics.

Returns throughout are daily log-returns in a ``d x T`` layout. A fixed-weight
portfolio earns ``log(sum_i w_i exp(r_it))`` per period.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DomainError, NumericError

TRADING_DAYS = 252
DEFAULT_ALPHA = 0.2

# relative tolerance for treating two candidate CVaRs as equal
CVAR_TIE_RTOL = 1e-12
# candidate portfolios evaluated per vectorized block
_CHUNK = 2048
# reciprocal condition number below which the covariance gets a ridge
_RCOND_MIN = 1e-12


@dataclass(frozen=True)
class PortfolioWeights:
    weights: np.ndarray = field(repr=False)
    strategy: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) == 0:
            raise DomainError("weights must be a non-empty vector")
        if not abs(w.sum() - 1.0) < 1e-9:
            raise DomainError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", w)

    def to_dict(self, tickers=None):
        out = {"strategy": self.strategy, "weights": [float(x) for x in self.weights]}
        if tickers is not None:
            out["tickers"] = list(tickers)
        return out


@dataclass(frozen=True)
class BacktestReport:
    strategy: str
    mu_annual: float
    sigma_annual: float
    cvar_annual: float
    mdd: float
    ce: float
    cumulative_curve: np.ndarray = field(repr=False)
    alpha: float = DEFAULT_ALPHA

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "alpha": float(self.alpha),
            "mu": float(self.mu_annual),
            "sigma": float(self.sigma_annual),
            "cvar": float(self.cvar_annual),
            "mdd": float(self.mdd),
            "ce": float(self.ce),
        }


def _n_tail(n, alpha):
    """ceil(alpha * n), robust to products like 0.2 * 55 = 11.000000000000002."""
    k = math.ceil(alpha * n - 1e-9 * max(1.0, alpha * n))
    return min(max(k, 1), n)


def cvar(returns, alpha=DEFAULT_ALPHA):
    """Historical CVaR: minus the mean of the worst ceil(alpha N) returns."""
    r = np.asarray(returns, dtype=float).ravel()
    if r.size == 0:
        raise DomainError("CVaR of an empty return series")
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha={alpha} outside (0, 1]")
    k = _n_tail(r.size, alpha)
    return -float(np.mean(np.partition(r, k - 1)[:k]))


def _cvar_rows(r, alpha):
    """CVaR of every row of a 2-D array."""
    k = _n_tail(r.shape[1], alpha)
    return -np.mean(np.partition(r, k - 1, axis=1)[:, :k], axis=1)


def portfolio_log_returns(weights, returns):
    """Per-period log-return of a fixed-weight portfolio of log-return series."""
    w = np.asarray(weights, dtype=float)
    return np.log(w @ np.exp(np.asarray(returns, dtype=float)))


def equal_weight(d):
    if d < 1:
        raise DomainError("need at least one asset")
    return PortfolioWeights(np.full(d, 1.0 / d), "ew")


def global_min_variance(cov):
    """w = inv(S) 1 / (1' inv(S) 1); a small ridge is added if S is ill-conditioned."""
    s = np.asarray(cov, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DomainError("covariance must be square")
    if not np.allclose(s, s.T):
        raise DomainError("covariance must be symmetric")
    d = s.shape[0]
    ones = np.ones(d)
    if 1.0 / np.linalg.cond(s) < _RCOND_MIN:
        s = s + _RCOND_MIN * np.trace(s) / d * np.eye(d)
    try:
        x = np.linalg.solve(s, ones)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"covariance is singular: {exc}") from None
    if not np.all(np.isfinite(x)) or x.sum() == 0.0:
        raise NumericError("covariance is singular after regularization")
    return PortfolioWeights(x / x.sum(), "gmv")


def _cvar_lp(scenarios, alpha):
    """Min-CVaR linear program over long-only weights on simple-return scenarios.

    Variables are (w_1..w_d, v, s_1..s_T) with loss_t = -R_t w, the objective
    v + (1/K) sum s_t and constraints s_t >= loss_t - v, s_t >= 0, sum w = 1,
    w >= 0. With K = ceil(alpha T) the optimum of the LP equals the mean of
    the K largest losses, which matches :func:`cvar`.
    """
    t, d = scenarios.shape
    k = _n_tail(t, alpha)
    c = np.concatenate([np.zeros(d), [1.0], np.full(t, 1.0 / k)])
    a_ub = np.hstack([-scenarios, -np.ones((t, 1)), -np.eye(t)])
    b_ub = np.zeros(t)
    a_eq = np.concatenate([np.ones(d), [0.0], np.zeros(t)])[None, :]
    bounds = [(0.0, None)] * d + [(None, None)] + [(0.0, None)] * t
    res = optimize.linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=bounds, method="highs")
    if res.status != 0:
        raise NumericError(f"min-CVaR linear program failed: {res.message}")
    return res


def min_cvar_unconstrained(train_returns, alpha=DEFAULT_ALPHA):
    """Long-only weights minimizing the training-sample CVaR.

    Solved as a linear program on simple returns ``exp(r) - 1``. Assets with
    identical return series are merged before solving and the merged weight
    is split equally among them, so exact duplicates never receive an
    arbitrary vertex of their tied optimal face.
    """
    r = np.asarray(train_returns, dtype=float)
    d, t = r.shape
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha={alpha} outside (0, 1)")
    if t * alpha <= 1.0:
        raise DomainError(f"need more than 1/alpha = {1.0 / alpha:g} training periods, got {t}")
    unique, group = np.unique(r, axis=0, return_inverse=True)
    group = np.asarray(group).reshape(-1)
    res = _cvar_lp(np.expm1(unique).T, alpha)
    merged = _clean_weights(res.x[:len(unique)])
    sizes = np.bincount(group, minlength=len(unique))
    return PortfolioWeights(merged[group] / sizes[group], "min_cvar")


def _clean_weights(x):
    w = np.clip(x, 0.0, None)
    return w / w.sum()


def candidate_count(cluster_sizes):
    """Number of non-empty selections with at most one asset per cluster."""
    return math.prod(s + 1 for s in cluster_sizes) - 1


def _candidates(clusters):
    """Yield tuples of selected asset indices; ``None`` entries mean 'skip cluster'."""
    options = [[None, *members] for members in clusters]
    for combo in itertools.product(*options):
        chosen = tuple(i for i in combo if i is not None)
        if chosen:
            yield chosen


def enumerate_cluster_cvar(train_returns, partition, alpha=DEFAULT_ALPHA):
    """Training CVaR of every candidate selection, as a list of (assets, cvar)."""
    r = np.asarray(train_returns, dtype=float)
    growth = np.exp(r)
    out = []
    block = []

    def flush():
        w = np.zeros((len(block), r.shape[0]))
        for row, chosen in enumerate(block):
            w[row, list(chosen)] = 1.0 / len(chosen)
        values = _cvar_rows(np.log(w @ growth), alpha)
        out.extend(zip(block, values.tolist()))
        block.clear()

    for chosen in _candidates(_clusters(partition, r.shape[0])):
        block.append(chosen)
        if len(block) == _CHUNK:
            flush()
    if block:
        flush()
    return out


def _clusters(partition, d):
    labels = getattr(partition, "labels", partition)
    if len(labels) == 0:
        raise DomainError("empty partition")
    if len(labels) != d:
        raise DomainError(f"partition covers {len(labels)} assets, returns have {d}")
    clusters = {}
    for i, lab in enumerate(labels):
        clusters.setdefault(lab, []).append(i)
    return [clusters[k] for k in sorted(clusters)]


def cluster_min_cvar(train_returns, partition, alpha=DEFAULT_ALPHA, tickers=None):
    """Equal-weight portfolio of at most one asset per cluster with minimum CVaR.

    Every non-empty selection is enumerated and scored on the training
    log-returns of its equally weighted portfolio. CVaRs within a relative
    ``CVAR_TIE_RTOL`` of the minimum tie; ties go to fewer assets and then to
    the lexicographically smallest sorted ticker list.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha={alpha} outside (0, 1)")
    r = np.asarray(train_returns, dtype=float)
    d = r.shape[0]
    names = list(tickers) if tickers is not None else [f"{i:06d}" for i in range(d)]
    scored = enumerate_cluster_cvar(r, partition, alpha)
    best = min(v for _, v in scored)
    tol = CVAR_TIE_RTOL * max(1.0, abs(best))
    tied = [c for c, v in scored if v <= best + tol]
    chosen = min(tied, key=lambda c: (len(c), sorted(names[i] for i in c)))
    w = np.zeros(d)
    w[list(chosen)] = 1.0 / len(chosen)
    return PortfolioWeights(w, "cluster_min_cvar")


def max_drawdown(curve):
    c = np.asarray(curve, dtype=float)
    peak = np.maximum.accumulate(c)
    return float(np.max(1.0 - c / peak))


def backtest(weights, test_returns, alpha=DEFAULT_ALPHA, strategy=None):
    """Hold ``weights`` fixed over the test period and report annualized metrics.

    mu is the mean daily portfolio log-return times 252, sigma the sample
    standard deviation (ddof=1) times sqrt(252), CVaR the daily historical
    CVaR times sqrt(252), MDD the largest relative peak-to-trough fall of the
    value curve and CE = mu - sigma^2 / 2. The curve starts at 100.
    """
    w = weights.weights if isinstance(weights, PortfolioWeights) else np.asarray(weights, dtype=float)
    if strategy is None:
        strategy = getattr(weights, "strategy", "")
    r = np.asarray(test_returns, dtype=float)
    if r.ndim != 2 or r.shape[1] == 0:
        raise DomainError("test returns must be a non-empty d x T matrix")
    if r.shape[0] != len(w):
        raise DomainError(f"{len(w)} weights for {r.shape[0]} assets")
    daily = portfolio_log_returns(w, r)
    curve = 100.0 * np.exp(np.concatenate([[0.0], np.cumsum(daily)]))
    mu = float(np.mean(daily)) * TRADING_DAYS
    sigma = float(np.std(daily, ddof=1)) * math.sqrt(TRADING_DAYS) if len(daily) > 1 else 0.0
    return BacktestReport(
        strategy=strategy,
        mu_annual=mu,
        sigma_annual=sigma,
        cvar_annual=cvar(daily, alpha) * math.sqrt(TRADING_DAYS),
        mdd=max_drawdown(curve),
        ce=mu - 0.5 * sigma * sigma,
        cumulative_curve=curve,
        alpha=alpha,
    )
