"""Staged batch pipeline with content-addressed artifact caching.

Stages run in a fixed order, each writing into its own sub-directory of the
output directory:

=========  ======================================================  ===================
stage      artifacts                                               depends on
=========  ======================================================  ===================
ingest     train/test log-return CSVs                              price file
marginals  ARMA/GARCH parameters, standardized residuals,          ingest
           pseudo-observations
copulas    one JSON file of pair fits per copula family            marginals
ensemble   dissimilarity matrices (CSV + JSON sidecar), manifest   marginals, copulas
           of every ensemble partition
consensus  votes, consensus matrix, dendrogram, final partition    ensemble
portfolio  weights, backtest reports, value curves                 ingest, copulas,
                                                                   consensus
=========  ======================================================  ===================

Every stage directory holds a ``stage.json`` with a cache key and the SHA-256
of each output file. The key hashes the stage's config subsection together
with the output digests of its upstream stages, so a stage is reused only if
neither its inputs nor its settings changed and its files are intact.
"""

import concurrent.futures
import csv
import hashlib
import json
import logging
import os
import shutil

import numpy as np

from . import copula, hierclust, marginals, portfolio
from .config import effective_workers
from .dissimilarity import write_labelled_matrix
from .ensemble import EnsembleMember, accumulate, final_partition, run_ensemble, single_copula_partition
from .errors import DataError, DependencyError, FitError
from .ingest import ReturnPanel, load_prices, parse_date, split_train_test, to_log_returns

log = logging.getLogger(__name__)

STAGES = ("ingest", "marginals", "copulas", "ensemble", "consensus", "portfolio")
DEPENDS = {
    "ingest": (),
    "marginals": ("ingest",),
    "copulas": ("marginals",),
    "ensemble": ("marginals", "copulas"),
    "consensus": ("ensemble",),
    "portfolio": ("ingest", "copulas", "consensus"),
}
STAGE_FILE = "stage.json"
FAILED_MARKER = "FAILED"
# bump when an artifact layout changes so old caches are not reused
FORMAT_VERSION = 1


# ----------------------------------------------------------------------------
# Serialization helpers
# ----------------------------------------------------------------------------


def dumps(obj):
    """Canonical JSON: sorted keys, shortest round-trip float repr."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def sha256_text(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_series_csv(path, dates, tickers, values):
    """Wide CSV with one row per date and one column per ticker."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *tickers])
        for t, date in enumerate(dates):
            w.writerow([date.isoformat(), *(repr(float(x)) for x in values[:, t])])


def read_series_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    tickers = tuple(rows[0][1:])
    dates = tuple(parse_date(r[0]) for r in rows[1:])
    values = np.array([[float(x) for x in r[1:]] for r in rows[1:]]).T.reshape(len(tickers), len(dates))
    return ReturnPanel(tickers, dates, values)


# ----------------------------------------------------------------------------
# Orchestration
# ----------------------------------------------------------------------------


class Pipeline:
    """Runs and caches the stages for one validated PipelineConfig."""

    def __init__(self, cfg, workers=None):
        self.cfg = cfg
        self.workers = workers if workers is not None else effective_workers(cfg)
        self.root = cfg.output_dir
        self._executor = None

    # paths -----------------------------------------------------------------

    def stage_dir(self, name):
        return os.path.join(self.root, name)

    def path(self, stage, *parts):
        return os.path.join(self.stage_dir(stage), *parts)

    # cache keys ------------------------------------------------------------

    def _config_part(self, name):
        cfg = self.cfg
        if name == "ingest":
            return {"prices": cfg.section("prices"), "split": cfg.section("split"),
                    "data_sha256": sha256_file(cfg.data_path)}
        if name == "marginals":
            return {}
        if name == "copulas":
            return {"families": list(cfg.copula_families())}
        if name == "ensemble":
            return cfg.section("ensemble")
        if name == "consensus":
            return cfg.section("consensus")
        return cfg.section("portfolio")

    def _record(self, name):
        path = self.path(name, STAGE_FILE)
        if not os.path.isfile(path):
            return None
        try:
            record = read_json(path)
        except (OSError, ValueError):
            return None
        return record if isinstance(record, dict) and "outputs" in record else None

    @staticmethod
    def _digest(record):
        return sha256_text(dumps(record["outputs"]))

    def expected_key(self, name, upstream_records):
        payload = {
            "version": FORMAT_VERSION,
            "stage": name,
            "config": self._config_part(name),
            "upstream": {u: self._digest(upstream_records[u]) for u in DEPENDS[name]},
        }
        return sha256_text(dumps(payload))

    def status(self, name, _memo=None):
        """(is_valid, reason) for the cached artifacts of ``name``."""
        memo = {} if _memo is None else _memo
        if name in memo:
            return memo[name]
        result = self._status(name, memo)
        memo[name] = result
        return result

    def _status(self, name, memo):
        record = self._record(name)
        if record is None:
            return False, "has no artifacts"
        for rel, digest in record["outputs"].items():
            full = self.path(name, rel)
            if not os.path.isfile(full) or sha256_file(full) != digest:
                return False, f"has a missing or corrupt artifact ({rel})"
        upstream = {}
        for u in DEPENDS[name]:
            ok, _ = self.status(u, memo)
            if not ok:
                return False, f"depends on stage '{u}', which is not up to date"
            upstream[u] = self._record(u)
        if name == "ingest" and not os.path.isfile(self.cfg.data_path):
            return False, "has no input data file"
        if record.get("key") != self.expected_key(name, upstream):
            return False, "is stale (inputs or config changed)"
        return True, "up to date"

    def root_cause(self, name):
        """Earliest stage in the dependency chain of ``name`` that must be rerun."""
        memo = {}
        for stage in STAGES:
            if stage != name and name not in _downstream(stage):
                continue
            ok, _ = self.status(stage, memo)
            if not ok:
                return stage
        return None

    # execution -------------------------------------------------------------

    @property
    def executor(self):
        if self.workers > 1 and self._executor is None:
            self._executor = concurrent.futures.ProcessPoolExecutor(max_workers=self.workers)
        return self._executor

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def _check_data(self):
        if not os.path.isfile(self.cfg.data_path):
            raise DataError(f"price file not found: {self.cfg.data_path}")

    def run(self, force=False):
        """Run every stage, reusing up-to-date cached stages unless ``force``."""
        self._check_data()
        try:
            memo = {}
            for name in STAGES:
                ok, reason = self.status(name, memo)
                if ok and not force:
                    log.info("stage %s: cached", name)
                    continue
                log.info("stage %s: running (%s)", name, reason)
                self._execute(name)
                memo = {}  # downstream statuses depend on the fresh outputs
            self._clear_failure()
        finally:
            self.close()

    def run_stage(self, name):
        """Run one stage on top of validated upstream artifacts."""
        if name not in STAGES:
            raise DependencyError(f"unknown stage {name!r}; expected one of {STAGES}")
        if name == "ingest":
            self._check_data()
        memo = {}
        for u in DEPENDS[name]:
            ok, reason = self.status(u, memo)
            if not ok:
                culprit = self.root_cause(u)
                raise DependencyError(
                    f"upstream stage '{u}' {reason}; rerun stage '{culprit}' first "
                    f"(stage {culprit} <config>, or run <config>)",
                    stage=culprit,
                )
        try:
            self._execute(name)
            self._clear_failure()
        finally:
            self.close()

    def _execute(self, name):
        sdir = self.stage_dir(name)
        if os.path.isdir(sdir):
            shutil.rmtree(sdir)
        os.makedirs(sdir)
        try:
            outputs = getattr(self, f"_stage_{name}")()
        except Exception as exc:
            if getattr(exc, "stage", None) is None:
                exc.stage = name
            self._mark_failure(name, exc)
            raise
        upstream = {u: self._record(u) for u in DEPENDS[name]}
        record = {
            "stage": name,
            "key": self.expected_key(name, upstream),
            "outputs": {rel: sha256_file(self.path(name, rel)) for rel in sorted(outputs)},
        }
        write_json(self.path(name, STAGE_FILE), record)

    def _mark_failure(self, name, exc):
        os.makedirs(self.root, exist_ok=True)
        write_json(os.path.join(self.root, FAILED_MARKER),
                   {"stage": name, "error": type(exc).__name__, "message": str(exc)})

    def _clear_failure(self):
        marker = os.path.join(self.root, FAILED_MARKER)
        if os.path.isfile(marker):
            os.remove(marker)

    # loaders ---------------------------------------------------------------

    def load_returns(self):
        return read_series_csv(self.path("ingest", "train_returns.csv")), read_series_csv(
            self.path("ingest", "test_returns.csv"))

    def load_pseudo(self):
        return read_series_csv(self.path("marginals", "pseudo_obs.csv"))

    def load_fits(self):
        """({family: [CopulaFit]}, {family: failure message})."""
        dropped = read_json(self.path("copulas", "dropped.json"))
        fits = {}
        for family in self.cfg.copula_families():
            if family in dropped:
                continue
            record = read_json(self.path("copulas", f"fits_{family}.json"))
            fits[family] = [copula.CopulaFit.from_dict(r) for r in record["fits"]]
        return fits, dropped

    def load_partition(self):
        _, part = hierclust.read_partition(self.path("consensus", "partition.csv"))
        return part

    # stages ----------------------------------------------------------------

    def _stage_ingest(self):
        cfg = self.cfg
        panel = load_prices(cfg.data_path, cfg.prices.format_spec())
        returns = to_log_returns(panel)
        train, test = split_train_test(returns, cfg.split.test_start)
        write_series_csv(self.path("ingest", "train_returns.csv"), train.dates, train.tickers, train.returns)
        write_series_csv(self.path("ingest", "test_returns.csv"), test.dates, test.tickers, test.returns)
        write_json(self.path("ingest", "summary.json"), {
            "tickers": list(panel.tickers),
            "n_price_dates": len(panel.dates),
            "train": {"n": train.T, "first": train.dates[0].isoformat(), "last": train.dates[-1].isoformat()},
            "test": {"n": test.T, "first": test.dates[0].isoformat(), "last": test.dates[-1].isoformat()},
        })
        return ["train_returns.csv", "test_returns.csv", "summary.json"]

    def _stage_marginals(self):
        train, _ = self.load_returns()
        fits = marginals.fit_marginals(train, self.executor)
        std = np.array([f.std_residuals for f in fits])
        pseudo = marginals.pseudo_observations(std)
        write_json(self.path("marginals", "marginals.json"), [f.to_dict() for f in fits])
        write_series_csv(self.path("marginals", "std_residuals.csv"), train.dates, train.tickers, std)
        write_series_csv(self.path("marginals", "pseudo_obs.csv"), train.dates, train.tickers, pseudo)
        return ["marginals.json", "std_residuals.csv", "pseudo_obs.csv"]

    def _stage_copulas(self):
        pseudo = self.load_pseudo()
        outputs, dropped = [], {}
        for family in self.cfg.copula_families():
            log.info("fitting %s to %d pairs", family, pseudo.d * (pseudo.d - 1) // 2)
            try:
                fits = copula.fit_pairs(pseudo.returns, family, self.executor)
            except FitError as exc:
                log.warning("copula family %s dropped: %s", family, exc)
                dropped[family] = str(exc)
                continue
            name = f"fits_{family}.json"
            write_json(self.path("copulas", name),
                       {"family": family, "tickers": list(pseudo.tickers), "fits": [f.to_dict() for f in fits]})
            outputs.append(name)
        write_json(self.path("copulas", "dropped.json"), dropped)
        return outputs + ["dropped.json"]

    def _stage_ensemble(self):
        cfg = self.cfg
        pseudo = self.load_pseudo()
        fits, dropped = self.load_fits()
        layer_fits = {f: fits[f] for f in cfg.ensemble.families if f in fits}
        result = run_ensemble(pseudo.returns, cfg.ensemble, fits=layer_fits, tickers=pseudo.tickers, tail=cfg.tail)
        os.makedirs(self.path("ensemble", "dissimilarity"))
        outputs = []
        for delta in result.matrices:
            stem = os.path.join("dissimilarity", f"{delta.family}_q{delta.quantile:g}")
            delta.write(self.path("ensemble", stem + ".csv"), self.path("ensemble", stem + ".json"))
            outputs += [stem + ".csv", stem + ".json"]
        write_json(self.path("ensemble", "manifest.json"), {
            "tickers": list(pseudo.tickers),
            "ensemble_size": len(result.members),
            "families": [f for f in cfg.ensemble.families if f in layer_fits],
            "dropped_families": sorted(f for f in cfg.ensemble.families if f not in layer_fits),
            "quantiles": list(cfg.ensemble.quantiles),
            "linkages": list(cfg.ensemble.linkages),
            "tail": cfg.tail,
            "partitions": [m.to_dict() for m in result.members],
        })
        return outputs + ["manifest.json"]

    def _stage_consensus(self):
        cc = self.cfg.consensus
        manifest = read_json(self.path("ensemble", "manifest.json"))
        tickers = manifest["tickers"]
        members = [EnsembleMember(p["family"], p["q"], p["linkage"], hierclust.Partition(tuple(p["labels"])),
                                  p["silhouette"]) for p in manifest["partitions"]]
        state = accumulate(m.partition for m in members)
        kwargs = {"rule": cc.cut, "k_min": cc.k_min, "k_max": cc.k_max, "k": cc.k}
        part, dend = final_partition(state, cc.linkage, **kwargs)
        other = "complete" if cc.linkage == "average" else "average"
        alt, _ = final_partition(state, other, **kwargs)

        write_labelled_matrix(self.path("consensus", "votes.csv"), state.votes, tickers)
        write_labelled_matrix(self.path("consensus", "consensus.csv"), state.consensus, tickers)
        write_labelled_matrix(self.path("consensus", "dissimilarity.csv"), state.dissimilarity, tickers)
        write_json(self.path("consensus", "dendrogram.json"), dend.to_dict())
        hierclust.write_partition(self.path("consensus", "partition.csv"), part, tickers)
        write_json(self.path("consensus", "summary.json"), {
            "ensemble_size": state.ensemble_size,
            "linkage": cc.linkage,
            "cut": cc.cut,
            "k": part.k,
            "labels": list(part.labels),
            "alternate_linkage": other,
            "alternate_k": alt.k,
            "ari_between_linkages": hierclust.adjusted_rand_index(part, alt),
        })
        return ["votes.csv", "consensus.csv", "dissimilarity.csv", "dendrogram.json", "partition.csv",
                "summary.json"]

    def _stage_portfolio(self):
        cfg = self.cfg
        alpha = cfg.portfolio.alpha
        train, test = self.load_returns()
        tickers = train.tickers
        weights, extra = {}, {}
        singles = {s: (f, lk) for s, f, lk in cfg.single_copula_strategies()}
        fits = self.load_fits()[0] if singles else {}
        for strategy in cfg.portfolio.strategies:
            if strategy == "ew":
                w = portfolio.equal_weight(train.d)
            elif strategy == "gmv":
                w = portfolio.global_min_variance(np.cov(train.returns))
            elif strategy == "min_cvar":
                w = portfolio.min_cvar_unconstrained(train.returns, alpha)
            elif strategy == "ensemble":
                w = portfolio.cluster_min_cvar(train.returns, self.load_partition(), alpha, tickers)
            else:
                family, linkage = singles[strategy]
                if family not in fits:
                    log.warning("strategy %s skipped: %s copula fits are unavailable", strategy, family)
                    continue
                part, score = single_copula_partition(fits[family], linkage, cfg.ensemble.k_min,
                                                      cfg.ensemble.k_max, d=train.d, tickers=tickers)
                extra[strategy] = {"k": part.k, "silhouette": score, "labels": list(part.labels)}
                w = portfolio.cluster_min_cvar(train.returns, part, alpha, tickers)
            weights[strategy] = portfolio.PortfolioWeights(w.weights, strategy)

        os.makedirs(self.path("portfolio", "curves"))
        reports, outputs = [], []
        curve_dates = (train.dates[-1],) + test.dates
        for strategy, w in weights.items():
            rep = portfolio.backtest(w, test.returns, alpha, strategy)
            reports.append(rep.to_dict())
            rel = os.path.join("curves", f"{strategy}.csv")
            with open(self.path("portfolio", rel), "w", encoding="utf-8", newline="") as fh:
                fh.write("date,value\n")
                for date, value in zip(curve_dates, rep.cumulative_curve):
                    fh.write(f"{date.isoformat()},{float(value)!r}\n")
            outputs.append(rel)
        write_json(self.path("portfolio", "weights.json"), {
            s: {**w.to_dict(tickers), **({"clusters": extra[s]} if s in extra else {})} for s, w in weights.items()
        })
        write_json(self.path("portfolio", "reports.json"), reports)
        return outputs + ["weights.json", "reports.json"]


def _downstream(stage):
    """All stages that depend on ``stage`` directly or transitively."""
    out = set()
    frontier = [stage]
    while frontier:
        s = frontier.pop()
        for child, parents in DEPENDS.items():
            if s in parents and child not in out:
                out.add(child)
                frontier.append(child)
    return out


def report(root):
    """Summary of a finished artifact directory as a dict."""
    out = {"root": root}
    marker = os.path.join(root, FAILED_MARKER)
    if os.path.isfile(marker):
        out["failed"] = read_json(marker)
    for name in STAGES:
        path = os.path.join(root, name, STAGE_FILE)
        out.setdefault("stages", {})[name] = os.path.isfile(path)
    summary = os.path.join(root, "consensus", "summary.json")
    if os.path.isfile(summary):
        out["consensus"] = read_json(summary)
        tickers, part = hierclust.read_partition(os.path.join(root, "consensus", "partition.csv"))
        out["clusters"] = [[tickers[i] for i in members] for members in part.clusters()]
    reports = os.path.join(root, "portfolio", "reports.json")
    if os.path.isfile(reports):
        out["reports"] = read_json(reports)
    return out
