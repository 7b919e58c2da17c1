"""Acceptance suite: one test per criterion, each recording a pass/fail line.

The recorded lines are printed in the terminal summary under
"acceptance criteria". Tolerances are the contract values; nothing here is
tuned to the implementation.
"""
import itertools
import json
import math
import os
import time

import numpy as np
import pytest
import yaml
from scipy import stats

from synth import GARCH_TRUE, block_labels, clayton_block_returns, price_panel
from tailcluster import copula, marginals, portfolio
from tailcluster.copula.sampling import sample
from tailcluster.config import WORKERS_ENV
from tailcluster.ensemble import accumulate, partition_vote
from tailcluster.hierclust import Partition, adjusted_rand_index
from tailcluster.ingest import write_prices_wide
from tailcluster.pipeline import Pipeline, STAGES
from tailcluster import config

pytestmark = pytest.mark.acceptance

FAMILY_POINTS = {
    "gaussian": (0.6,),
    "student_t": (0.6, 4.0),
    "clayton": (3.0,),
    "survival_gumbel": (2.0,),
    "frank": (5.0,),
    "survival_joe": (2.0,),
    "survival_galambos": (1.5,),
    "bb1": (1.0, 1.5),
}


def _run_pipeline(root, sizes, n_train, n_test, seed, workers=1, **sections):
    """Simulate Clayton blocks on GJR-GARCH-t margins and run every stage."""
    root.mkdir(parents=True, exist_ok=True)
    r = clayton_block_returns(sizes, 4.0, n_train + n_test, seed)
    panel = price_panel(r)
    write_prices_wide(root / "prices.csv", panel)
    raw = {"prices": {"path": "prices.csv"},
           "split": {"test_start": panel.dates[n_train + 1].isoformat()},
           "output": "out", **sections}
    (root / "cfg.yaml").write_text(yaml.safe_dump(raw))
    old = os.environ.get(WORKERS_ENV)
    os.environ[WORKERS_ENV] = str(workers)
    try:
        pipe = Pipeline(config.load(str(root / "cfg.yaml")))
        assert pipe.workers == workers
        pipe.run()
    finally:
        if old is None:
            os.environ.pop(WORKERS_ENV, None)
        else:
            os.environ[WORKERS_ENV] = old
    return root / "out"


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


# criterion 1 -------------------------------------------------------------------

def test_c01_copula_oracle_suite(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    n = 10_000
    worst_bound, worst_rect = 0.0, 0.0
    for family, params in FAMILY_POINTS.items():
        params = (2.0,) if family == "clayton" else params
        u, v = rng.uniform(1e-6, 1 - 1e-6, size=(2, n))
        c = copula.cdf(family, params, u, v)
        worst_bound = max(worst_bound, float(np.max(np.maximum(u + v - 1.0, 0.0) - c)),
                          float(np.max(c - np.minimum(u, v))))
        a, b = np.sort(rng.uniform(1e-6, 1 - 1e-6, size=(2, 2, n)), axis=1)
        vol = (copula.cdf(family, params, a[1], b[1]) - copula.cdf(family, params, a[0], b[1])
               - copula.cdf(family, params, a[1], b[0]) + copula.cdf(family, params, a[0], b[0]))
        worst_rect = max(worst_rect, float(-vol.min()))

    # C(q, q) = (2 q^-theta - 1)^(-1/theta) at theta = 2, q = 0.1 gives 199^(-1/2)
    clayton_closed = 199.0 ** -0.5 / 0.1
    clayton_err = abs(copula.finite_lower_tdc("clayton", (2.0,), 0.1) - clayton_closed)

    dual_err = 0.0
    for base, params in (("clayton", (2.0,)), ("gumbel", (2.0,)), ("joe", (2.0,)), ("galambos", (1.5,))):
        for q in (0.01, 0.05, 0.1, 0.2, 0.3):
            lo = copula.finite_lower_tdc(f"survival_{base}", params, q)
            dual_err = max(dual_err, abs(lo - copula.finite_upper_tdc(base, params, 1.0 - q)))
    elapsed = time.perf_counter() - start

    ok = worst_bound <= 1e-12 and worst_rect <= 1e-12 and clayton_err <= 1e-12 and dual_err <= 1e-14 \
        and elapsed < 60.0
    criterion(1, ok, f"bound viol {worst_bound:.1e}, rect viol {worst_rect:.1e}, clayton err {clayton_err:.1e}, "
                     f"duality err {dual_err:.1e}, {elapsed:.1f}s")
    assert ok


# criterion 2 -------------------------------------------------------------------

def _closed_form_limits():
    rho, nu = 0.6, 4.0
    return {
        "clayton": ((3.0,), 2.0 ** (-1.0 / 3.0)),
        "survival_gumbel": ((2.0,), 2.0 - 2.0 ** 0.5),
        "survival_joe": ((2.0,), 2.0 - 2.0 ** 0.5),
        "survival_galambos": ((1.5,), 2.0 ** (-1.0 / 1.5)),
        "bb1": ((1.0, 1.5), 2.0 ** (-1.0 / 1.5)),
        "student_t": ((rho, nu), 2.0 * stats.t.cdf(-math.sqrt((nu + 1.0) * (1.0 - rho) / (1.0 + rho)), nu + 1.0)),
    }


def test_c02_asymptotic_limits(criterion):
    errs = {f: abs(copula.finite_lower_tdc(f, p, 1e-6) - lam) for f, (p, lam) in _closed_form_limits().items()}
    worst = max(errs, key=errs.get)
    ok = max(errs.values()) <= 1e-3
    criterion(2, ok, f"max |finite(q=1e-6) - limit| = {errs[worst]:.1e} ({worst})")
    assert ok, errs


# criterion 3 -------------------------------------------------------------------

def _within(est, true, is_rho):
    return abs(est - true) <= 0.05 if is_rho else abs(est - true) <= 0.15 * abs(true)


def test_c03_mle_recovery(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(303)
    misses = []
    for family, params in FAMILY_POINTS.items():
        fit = copula.fit_mle(family, sample(family, params, 5000, rng))
        for idx, (est, true) in enumerate(zip(fit.params, params)):
            is_rho = family in ("gaussian", "student_t") and idx == 0
            if not _within(est, true, is_rho):
                misses.append(f"{family}[{idx}]={est:.4f} vs {true}")
    elapsed = time.perf_counter() - start
    ok = not misses and elapsed < 300.0
    criterion(3, ok, f"{len(FAMILY_POINTS)} families at T=5000, misses: {misses or 'none'}, {elapsed:.1f}s")
    assert ok


# criterion 4 -------------------------------------------------------------------

def test_c04_gjr_garch_recovery(criterion):
    x = marginals.simulate_gjr_garch_t(10_000, rng=np.random.default_rng(2024), **GARCH_TRUE)
    fit = marginals.fit_gjr_garch_t(x)
    got = {"omega": fit.omega, "alpha": fit.arch, "gamma": fit.leverage, "beta": fit.beta, "nu": fit.dof}
    rel = {k: abs(got[k] - GARCH_TRUE[k]) / GARCH_TRUE[k] for k in got}
    stationary = fit.arch + 0.5 * fit.leverage + fit.beta < 1.0
    ok = max(rel.values()) <= 0.25 and stationary
    detail = ", ".join(f"{k} {got[k]:.4f}" for k in got)
    criterion(4, ok, f"{detail}; max rel err {max(rel.values()):.3f}, persistence {fit.persistence:.4f}")
    assert ok


# criterion 5 -------------------------------------------------------------------

def test_c05_consensus_algebra(criterion):
    rng = np.random.default_rng(505)
    d = 38
    parts = [Partition.from_labels(rng.integers(0, int(rng.integers(1, 12)), d)) for _ in range(64)]
    state = accumulate(parts)
    recount = np.array([[sum(partition_vote(p, i, j) for p in parts) for j in range(d)] for i in range(d)])
    checks = {
        "symmetric": np.array_equal(state.votes, state.votes.T),
        "unit diagonal": bool(np.all(np.diag(state.consensus) == 1.0)),
        "D = 1 - M": np.array_equal(state.dissimilarity, 1.0 - state.consensus),
        "recount": np.array_equal(state.votes, recount),
        "order invariant": all(np.array_equal(accumulate([parts[i] for i in rng.permutation(64)]).votes,
                                              state.votes) for _ in range(10)),
    }
    ok = all(checks.values()) and state.ensemble_size == 64
    criterion(5, ok, "64 partitions over d=38: " + ", ".join(k for k, v in checks.items() if v) + " exact")
    assert ok, checks


# criteria 6 and 10 share one synthetic end-to-end panel --------------------------

E2E_SIZES = (4, 4, 4)
E2E = {"n_train": 1500, "n_test": 250, "seed": 606,
       "ensemble": {"k_min": 2, "k_max": 6}}


@pytest.fixture(scope="module")
def e2e_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    start = time.perf_counter()
    out = _run_pipeline(root / "w1", E2E_SIZES, E2E["n_train"], E2E["n_test"], E2E["seed"], workers=1,
                        ensemble=E2E["ensemble"])
    return out, time.perf_counter() - start


def test_c06_synthetic_end_to_end(e2e_run, criterion):
    out, elapsed = e2e_run
    summary = json.loads((out / "consensus" / "summary.json").read_text())
    manifest = json.loads((out / "ensemble" / "manifest.json").read_text())
    ari = adjusted_rand_index(Partition(tuple(summary["labels"])), block_labels(E2E_SIZES))
    ok = (ari >= 0.9 and summary["ari_between_linkages"] == 1.0 and manifest["ensemble_size"] == 64
          and elapsed < 600.0)
    criterion(6, ok, f"ARI vs truth {ari:.3f}, ARI average vs complete {summary['ari_between_linkages']:.3f}, "
                     f"k={summary['k']}, {manifest['ensemble_size']} partitions, {elapsed:.0f}s")
    assert ok


def test_c10_determinism_across_workers(e2e_run, tmp_path, criterion):
    out1, _ = e2e_run
    out8 = _run_pipeline(tmp_path / "w8", E2E_SIZES, E2E["n_train"], E2E["n_test"], E2E["seed"], workers=8,
                         ensemble=E2E["ensemble"])
    files = [("consensus", "partition.csv"), ("consensus", "consensus.csv"), ("consensus", "votes.csv"),
             ("consensus", "summary.json"), ("portfolio", "reports.json"), ("portfolio", "weights.json")]
    differing = [os.path.join(*f) for f in files if _read(out1.joinpath(*f)) != _read(out8.joinpath(*f))]
    stage_keys = [s for s in STAGES
                  if _read(out1 / s / "stage.json") != _read(out8 / s / "stage.json")]
    ok = not differing and not stage_keys
    criterion(10, ok, f"workers 1 vs 8: {len(files)} artifacts compared, differing: {differing or 'none'}, "
                      f"stage digests differing: {stage_keys or 'none'}")
    assert ok


# criterion 7 -------------------------------------------------------------------

def test_c07_portfolio_optimality(criterion):
    rng = np.random.default_rng(707)
    r = rng.standard_t(4, (9, 300)) * 0.01
    part = Partition((0, 0, 0, 1, 1, 2, 2, 2, 2))
    w = portfolio.cluster_min_cvar(r, part, 0.2)
    best = portfolio.cvar(portfolio.portfolio_log_returns(w.weights, r), 0.2)
    labels = np.asarray(part.labels)
    groups = [[None] + list(np.flatnonzero(labels == c)) for c in range(part.k)]
    n_cand, beaten = 0, 0
    for combo in itertools.product(*groups):
        sel = [i for i in combo if i is not None]
        if not sel:
            continue
        n_cand += 1
        g = np.zeros(9)
        g[sel] = 1.0 / len(sel)
        if portfolio.cvar(portfolio.portfolio_log_returns(g, r), 0.2) < best:
            beaten += 1

    r3 = rng.normal(0.0, 0.02, (3, 10))
    lp = portfolio.cvar(portfolio.portfolio_log_returns(portfolio.min_cvar_unconstrained(r3, 0.2).weights, r3), 0.2)
    grid = min(portfolio.cvar(portfolio.portfolio_log_returns(np.array([i, j, 100 - i - j]) / 100.0, r3), 0.2)
               for i in range(101) for j in range(101 - i))
    grid_gap = abs(lp - grid)

    var = np.array([1.0, 4.0, 0.25, 2.5])
    inv = 1.0 / var
    gmv_err = float(np.max(np.abs(portfolio.global_min_variance(np.diag(var)).weights - inv / inv.sum())))

    ok = beaten == 0 and n_cand == 4 * 3 * 5 - 1 and grid_gap <= 1e-3 and gmv_err <= 1e-10
    criterion(7, ok, f"cluster CVaR beaten by {beaten}/{n_cand} candidates, LP vs grid gap {grid_gap:.1e}, "
                     f"GMV err {gmv_err:.1e}")
    assert ok


# criterion 8 -------------------------------------------------------------------

def test_c08_backtest_fixtures(criterion):
    rep = portfolio.backtest(portfolio.PortfolioWeights(np.array([1.0])), np.array([[0.1, -0.1]]), 0.2)
    sigma = math.sqrt(0.02) * math.sqrt(252.0)
    expected = {
        "curve": (rep.cumulative_curve, np.array([100.0, 100.0 * math.exp(0.1), 100.0])),
        "mdd": (rep.mdd, 1.0 - math.exp(-0.1)),
        "mu": (rep.mu_annual, 0.0),
        "sigma": (rep.sigma_annual, sigma),
        "cvar": (rep.cvar_annual, 0.1 * math.sqrt(252.0)),
        "ce": (rep.ce, -0.5 * sigma * sigma),
    }
    errs = {k: float(np.max(np.abs(np.asarray(a) - b))) for k, (a, b) in expected.items()}
    cvar_err = abs(portfolio.cvar([-0.03, -0.01, 0.0, 0.01, 0.02], 0.2) - 0.03)
    flat = portfolio.backtest(portfolio.equal_weight(3), np.zeros((3, 40)), 0.2)
    flat_ok = (flat.mu_annual == flat.sigma_annual == flat.mdd == flat.ce == 0.0
               and np.all(flat.cumulative_curve == 100.0))
    rebased = rep.cumulative_curve[0] == 100.0 and flat.cumulative_curve[0] == 100.0
    ok = max(errs.values()) <= 1e-10 and cvar_err <= 1e-10 and flat_ok and rebased
    criterion(8, ok, f"max fixture err {max(errs.values()):.1e}, CVaR example err {cvar_err:.1e}, "
                     f"flat fixture {'ok' if flat_ok else 'wrong'}, curves start at 100: {rebased}")
    assert ok


# criterion 9 -------------------------------------------------------------------

def test_c09_structural_parity_38_assets(tmp_path, criterion):
    out = _run_pipeline(tmp_path, (13, 12, 7, 6), 300, 40, seed=909,
                        portfolio={"strategies": ["ew", "gmv", "min_cvar", "ensemble"]})
    fit_counts = {}
    for family in copula.ENSEMBLE_FAMILIES:
        record = json.loads((out / "copulas" / f"fits_{family}.json").read_text())
        fit_counts[family] = len(record["fits"])
    n_matrices = len(list((out / "ensemble" / "dissimilarity").glob("*.csv")))
    manifest = json.loads((out / "ensemble" / "manifest.json").read_text())
    dropped = json.loads((out / "copulas" / "dropped.json").read_text())
    ok = (set(fit_counts.values()) == {703} and n_matrices == 32 and len(manifest["partitions"]) == 64
          and not dropped)
    criterion(9, ok, f"pair fits per family {sorted(set(fit_counts.values()))}, {n_matrices} matrices, "
                     f"{len(manifest['partitions'])} partitions")
    assert ok
