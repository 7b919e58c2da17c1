"""Loading, aligning and differencing daily closing prices.

Two CSV layouts are accepted:

``wide``
    a date column followed by one column of closing prices per ticker;
``long``
    one row per observation with date, ticker and close columns.

Rows are aligned on the strict intersection of dates: a date is kept only if
every ticker has a price on it.
"""

import csv
import datetime as dt
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InsufficientDataError, ParseError, RangeError

MIN_ASSETS = 2
MIN_DATES = 30


@dataclass(frozen=True)
class FormatSpec:
    """Column mapping for a price CSV.

    Parameters
    ----------
    layout : {"wide", "long"}
    date_column : str
        Header of the date column in either layout.
    ticker_column, close_column : str
        Headers used by the long layout only.
    """

    layout: str = "wide"
    date_column: str = "date"
    ticker_column: str = "ticker"
    close_column: str = "close"

    def __post_init__(self):
        if self.layout not in ("wide", "long"):
            raise ValueError(f"layout must be 'wide' or 'long', got {self.layout!r}")


@dataclass(frozen=True)
class PricePanel:
    tickers: tuple
    dates: tuple
    prices: np.ndarray = field(repr=False)  # d x (T + 1)

    def __post_init__(self):
        _check_panel_shape(self.tickers, self.dates, self.prices)
        if not np.all(self.prices > 0):
            raise DataError("prices must be strictly positive")


@dataclass(frozen=True)
class ReturnPanel:
    tickers: tuple
    dates: tuple
    returns: np.ndarray = field(repr=False)  # d x T

    def __post_init__(self):
        _check_panel_shape(self.tickers, self.dates, self.returns)

    @property
    def d(self):
        return len(self.tickers)

    @property
    def T(self):
        return len(self.dates)


def _check_panel_shape(tickers, dates, values):
    if values.shape != (len(tickers), len(dates)):
        raise DataError(f"matrix shape {values.shape} does not match {len(tickers)} tickers x {len(dates)} dates")
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raise DataError("dates must be strictly increasing")


def parse_date(text, line=None):
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(f"invalid ISO date {text!r}", line=line) from None


def _parse_price(text, line):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"invalid price {text!r}", line=line) from None
    if not np.isfinite(value):
        raise ParseError(f"non-finite price {text!r}", line=line)
    return value


def _read_rows(path):
    if not os.path.isfile(path):
        raise DataError(f"price file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, a header row is required", line=1) from None
        except csv.Error as exc:
            raise ParseError(str(exc), line=reader.line_num) from None
        header = [h.strip() for h in header]
        rows = []
        try:
            for row in reader:
                if not row or all(not c.strip() for c in row):
                    continue
                rows.append((reader.line_num, row))
        except csv.Error as exc:
            raise ParseError(str(exc), line=reader.line_num) from None
    return header, rows


def _column(header, name):
    try:
        return header.index(name)
    except ValueError:
        raise ParseError(f"missing column {name!r} in header", line=1) from None


def _records_wide(header, rows, spec):
    date_idx = _column(header, spec.date_column)
    tickers = [h for i, h in enumerate(header) if i != date_idx]
    if len(set(tickers)) != len(tickers):
        raise ParseError("duplicate ticker columns in header", line=1)
    for line, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=line)
        date = parse_date(row[date_idx], line)
        for i, cell in enumerate(row):
            if i == date_idx or not cell.strip():
                continue  # an empty cell is a missing price
            yield line, header[i], date, _parse_price(cell, line)


def _records_long(header, rows, spec):
    di = _column(header, spec.date_column)
    ti = _column(header, spec.ticker_column)
    ci = _column(header, spec.close_column)
    for line, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=line)
        ticker = row[ti].strip()
        if not ticker:
            raise ParseError("empty ticker", line=line)
        if not row[ci].strip():
            continue
        yield line, ticker, parse_date(row[di], line), _parse_price(row[ci], line)


def load_prices(path, format_spec=None):
    """Read a price CSV and align it on the dates shared by every ticker.

    Raises
    ------
    ParseError
        Malformed CSV; the message carries the offending line number.
    DataError
        A non-positive price, reported with its ticker and date.
    InsufficientDataError
        Fewer than two tickers or fewer than 30 common dates.
    """
    spec = format_spec or FormatSpec()
    header, rows = _read_rows(path)
    records = _records_wide(header, rows, spec) if spec.layout == "wide" else _records_long(header, rows, spec)

    series = {}
    for line, ticker, date, price in records:
        if price <= 0:
            raise DataError(f"non-positive price {price!r} for {ticker} on {date.isoformat()} (line {line})")
        prices = series.setdefault(ticker, {})
        if date in prices:
            raise ParseError(f"duplicate observation for {ticker} on {date.isoformat()}", line=line)
        prices[date] = price

    if spec.layout == "wide":
        tickers = [h for i, h in enumerate(header) if h != spec.date_column]
        for t in tickers:
            series.setdefault(t, {})
    else:
        tickers = list(series)  # first-appearance order
    if len(tickers) < MIN_ASSETS:
        raise InsufficientDataError(f"need at least {MIN_ASSETS} assets, found {len(tickers)}")
    return align(tickers, series)


def align(tickers, series):
    """Build a PricePanel from per-ticker ``{date: price}`` maps (strict intersection)."""
    common = set.intersection(*(set(series[t]) for t in tickers))
    if len(common) < MIN_DATES:
        raise InsufficientDataError(f"need at least {MIN_DATES} common dates, found {len(common)}")
    dates = tuple(sorted(common))
    prices = np.array([[series[t][d] for d in dates] for t in tickers], dtype=float)
    return PricePanel(tuple(tickers), dates, prices)


def to_log_returns(panel):
    """Daily log-returns, each dated by the later of its two prices."""
    if len(panel.dates) < 2:
        raise InsufficientDataError("need at least two dates to form returns")
    returns = np.diff(np.log(panel.prices), axis=1)
    return ReturnPanel(panel.tickers, panel.dates[1:], returns)


def split_train_test(panel, split_date):
    """Split at ``split_date``: training strictly before, testing from it onward."""
    if isinstance(split_date, str):
        split_date = parse_date(split_date)
    n_train = int(np.searchsorted(np.array(panel.dates, dtype="datetime64[D]"), np.datetime64(split_date, "D")))
    if n_train == 0 or n_train == panel.T:
        raise RangeError(
            f"split date {split_date.isoformat()} leaves an empty side "
            f"(panel covers {panel.dates[0].isoformat()} to {panel.dates[-1].isoformat()})"
        )
    train = ReturnPanel(panel.tickers, panel.dates[:n_train], panel.returns[:, :n_train])
    test = ReturnPanel(panel.tickers, panel.dates[n_train:], panel.returns[:, n_train:])
    return train, test


def write_prices_wide(path, panel, date_column="date"):
    """Write a PricePanel in the wide layout (used for fixtures and round trips)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([date_column, *panel.tickers])
        for t, date in enumerate(panel.dates):
            w.writerow([date.isoformat(), *(repr(float(p)) for p in panel.prices[:, t])])
