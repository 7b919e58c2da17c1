"""Pipeline configuration: a YAML file validated into frozen dataclasses.

Example::

    prices:
      path: prices.csv          # relative to this file
      layout: wide              # or long
      date_column: date
    split:
      test_start: 2022-07-01
    ensemble:
      families: [gaussian, student_t, clayton, survival_gumbel,
                 frank, survival_joe, survival_galambos, bb1]
      quantiles: [0.05, 0.1, 0.15, 0.2]
      linkages: [average, complete]
      k_min: 5
      k_max: 10
      tail: lower
    consensus:
      linkage: average
      cut: max_gap              # or silhouette, fixed_k
    portfolio:
      alpha: 0.2
      strategies: [ew, gmv, min_cvar, ensemble,
                   student_t_copula_average, student_t_copula_complete,
                   bb1_copula_average, bb1_copula_complete]
    output: results
    workers: 1

Every section except ``prices`` and ``split`` may be omitted; its defaults
apply. The environment variable ``TAILCLUSTER_WORKERS`` overrides ``workers``.
"""

import dataclasses
import datetime as dt
import os
from dataclasses import dataclass, field

import yaml

from . import copula, hierclust
from .ensemble import CUT_RULES, EnsembleConfig
from .errors import ConfigError
from .ingest import FormatSpec

WORKERS_ENV = "TAILCLUSTER_WORKERS"
BASE_STRATEGIES = ("ew", "gmv", "min_cvar", "ensemble")
SINGLE_COPULA_SUFFIX = "_copula_"
DEFAULT_STRATEGIES = BASE_STRATEGIES + (
    "student_t_copula_average",
    "student_t_copula_complete",
    "bb1_copula_average",
    "bb1_copula_complete",
)


@dataclass(frozen=True)
class PricesConfig:
    path: str
    layout: str = "wide"
    date_column: str = "date"
    ticker_column: str = "ticker"
    close_column: str = "close"

    def format_spec(self):
        return FormatSpec(self.layout, self.date_column, self.ticker_column, self.close_column)


@dataclass(frozen=True)
class SplitConfig:
    test_start: dt.date


@dataclass(frozen=True)
class ConsensusConfig:
    linkage: str = "average"
    cut: str = "max_gap"
    k: int = None
    k_min: int = None
    k_max: int = None


@dataclass(frozen=True)
class PortfolioConfig:
    alpha: float = 0.2
    strategies: tuple = DEFAULT_STRATEGIES


@dataclass(frozen=True)
class PipelineConfig:
    prices: PricesConfig
    split: SplitConfig
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    tail: str = "lower"
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)
    portfolio: PortfolioConfig = field(default_factory=PortfolioConfig)
    output: str = "results"
    workers: int = 1
    seed: int = None  # consumed by test oracles only; the pipeline draws no random numbers
    base_dir: str = "."

    @property
    def data_path(self):
        return os.path.join(self.base_dir, self.prices.path)

    @property
    def output_dir(self):
        return os.path.join(self.base_dir, self.output)

    def single_copula_strategies(self):
        """[(strategy, family, linkage)] for the single-copula competitors."""
        return [(s, *parse_single_copula(s)) for s in self.portfolio.strategies if s not in BASE_STRATEGIES]

    def copula_families(self):
        """Families the copula stage must fit: the ensemble's plus the competitors'."""
        names = list(self.ensemble.families)
        for _, family, _ in self.single_copula_strategies():
            if family not in names:
                names.append(family)
        return tuple(names)

    def section(self, name):
        """Plain-data view of one config section (used for cache keys)."""
        if name == "prices":
            return dataclasses.asdict(self.prices)
        if name == "split":
            return {"test_start": self.split.test_start.isoformat()}
        if name == "ensemble":
            out = dataclasses.asdict(self.ensemble)
            out["tail"] = self.tail
            return out
        if name == "consensus":
            return dataclasses.asdict(self.consensus)
        if name == "portfolio":
            out = dataclasses.asdict(self.portfolio)
            out["k_min"], out["k_max"] = self.ensemble.k_min, self.ensemble.k_max
            return out
        raise KeyError(name)


def parse_single_copula(strategy):
    """'<family>_copula_<linkage>' -> (family, linkage)."""
    family, sep, linkage = strategy.rpartition(SINGLE_COPULA_SUFFIX)
    if not sep or family not in copula.family_names() or linkage not in hierclust.LINKAGES:
        raise ConfigError(
            f"unknown strategy {strategy!r}; expected one of {BASE_STRATEGIES} "
            f"or '<family>{SINGLE_COPULA_SUFFIX}<linkage>'"
        )
    return family, linkage


def _section(raw, name, cls, required=False):
    value = raw.get(name)
    if value is None:
        if required:
            raise ConfigError(f"missing required section '{name}'")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(value) - known - ({"tail"} if cls is EnsembleConfig else set())
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {sorted(unknown)}")
    return dict(value)


def _as_date(value, where):
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        raise ConfigError(f"{where}: invalid ISO date {value!r}") from None


def _as_int(value, where, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where} must be >= {minimum}, got {value}")
    return value


def from_dict(raw, base_dir="."):
    """Validate a parsed config mapping."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    top = {"prices", "split", "ensemble", "consensus", "portfolio", "output", "workers", "seed"}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")

    p = _section(raw, "prices", PricesConfig, required=True)
    if "path" not in p:
        raise ConfigError("prices.path is required")
    try:
        prices = PricesConfig(**{k: str(v) for k, v in p.items()})
        prices.format_spec()
    except ValueError as exc:
        raise ConfigError(f"prices: {exc}") from None

    s = _section(raw, "split", SplitConfig, required=True)
    if "test_start" not in s:
        raise ConfigError("split.test_start is required")
    split = SplitConfig(_as_date(s["test_start"], "split.test_start"))

    e = _section(raw, "ensemble", EnsembleConfig)
    tail = e.pop("tail", "lower")
    if tail not in ("lower", "upper"):
        raise ConfigError(f"ensemble.tail must be 'lower' or 'upper', got {tail!r}")
    for key in ("k_min", "k_max"):
        if key in e:
            _as_int(e[key], f"ensemble.{key}", 2)
    for key in ("families", "quantiles", "linkages"):
        if key in e and not isinstance(e[key], (list, tuple)):
            raise ConfigError(f"ensemble.{key} must be a list")
    try:
        ens = EnsembleConfig(**e)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"ensemble: {exc}") from None

    c = _section(raw, "consensus", ConsensusConfig)
    cons = ConsensusConfig(**c)
    if cons.linkage not in hierclust.LINKAGES:
        raise ConfigError(f"consensus.linkage must be one of {hierclust.LINKAGES}")
    if cons.cut not in CUT_RULES:
        raise ConfigError(f"consensus.cut must be one of {CUT_RULES}")
    if cons.cut == "fixed_k":
        if cons.k is None:
            raise ConfigError("consensus.k is required with cut: fixed_k")
        _as_int(cons.k, "consensus.k", 1)
    for key in ("k_min", "k_max"):
        if getattr(cons, key) is not None:
            _as_int(getattr(cons, key), f"consensus.{key}", 2)
    if cons.cut == "silhouette":
        cons = dataclasses.replace(
            cons,
            k_min=ens.k_min if cons.k_min is None else cons.k_min,
            k_max=ens.k_max if cons.k_max is None else cons.k_max,
        )
        if cons.k_min > cons.k_max:
            raise ConfigError("consensus.k_min exceeds consensus.k_max")

    pf = _section(raw, "portfolio", PortfolioConfig)
    alpha = pf.get("alpha", 0.2)
    if isinstance(alpha, bool) or not isinstance(alpha, (int, float)) or not 0.0 < alpha < 1.0:
        raise ConfigError(f"portfolio.alpha must be a number in (0, 1), got {alpha!r}")
    strategies = pf.get("strategies", DEFAULT_STRATEGIES)
    if not isinstance(strategies, (list, tuple)) or not strategies:
        raise ConfigError("portfolio.strategies must be a non-empty list")
    strategies = tuple(str(x) for x in strategies)
    if len(set(strategies)) != len(strategies):
        raise ConfigError("duplicate portfolio strategies")
    for name in strategies:
        if name not in BASE_STRATEGIES:
            parse_single_copula(name)
    port = PortfolioConfig(float(alpha), strategies)

    workers = _as_int(raw.get("workers", 1), "workers", 1)
    seed = raw.get("seed")
    if seed is not None:
        _as_int(seed, "seed")
    output = raw.get("output", "results")
    if not isinstance(output, str) or not output:
        raise ConfigError("output must be a non-empty path string")
    return PipelineConfig(prices, split, ens, tail, cons, port, output, workers, seed, base_dir)


def load(path):
    """Read and validate a YAML config file."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    return from_dict(raw or {}, base_dir=os.path.dirname(os.path.abspath(path)))


def effective_workers(cfg):
    """Worker count after the environment override."""
    value = os.environ.get(WORKERS_ENV)
    if value is None or value == "":
        return cfg.workers
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1, got {n}")
    return n
