"""CSV ingestion: day-ahead and real-time LMPs plus long-format weather.

File schemas (header row required, ISO-8601 dates):

* ``da_lmp.csv``   ``date,hour,node_id,price``
* ``rt_lmp.csv``   ``date,hour,interval,node_id,price`` (interval is 1-based within the hour)
* ``weather.csv``  ``date,hour,node_id,variable,value``

Days that cannot be used end up in an :class:`ExclusionLog` with exactly one
reason each, so every date seen in any input lands either in the training set
or in the log.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import EmptyDataset, InputError, NonpositivePrice, ParseError, UnknownNode
from .estimation import TrainingSet
from .market_model import DEFAULT_PRICE_FLOOR, NodeSet, as_node_set, log_price_diff

DA_HEADER = ("date", "hour", "node_id", "price")
RT_HEADER = ("date", "hour", "interval", "node_id", "price")
WEATHER_HEADER = ("date", "hour", "node_id", "variable", "value")
EXCLUSION_HEADER = ("date", "reason")

REASONS = ("missing_node", "incomplete_intervals", "nonpositive_price", "missing_weather")


@dataclass(frozen=True)
class RawPriceRecord:
    date: date
    hour: int
    node_id: str
    price: float
    interval: int | None = None


@dataclass(frozen=True)
class WeatherRecord:
    date: date
    hour: int
    node_id: str
    variable: str
    value: float


@dataclass
class ExclusionLog:
    entries: list[tuple[date, str]] = field(default_factory=list)

    def add(self, day: date, reason: str) -> None:
        if reason not in REASONS:
            raise ValueError(f"unknown exclusion reason {reason!r}")
        if (day, reason) not in self.entries:
            self.entries.append((day, reason))

    @property
    def dates(self) -> set[date]:
        return {d for d, _ in self.entries}

    def reason_for(self, day: date) -> str | None:
        for d, r in self.entries:
            if d == day:
                return r
        return None

    def sorted(self) -> "ExclusionLog":
        return ExclusionLog(sorted(self.entries))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EXCLUSION_HEADER)
            for d, r in sorted(self.entries):
                w.writerow([d.isoformat(), r])

    @classmethod
    def read_csv(cls, path: str | Path) -> "ExclusionLog":
        log = cls()
        for line, row in _rows(path, EXCLUSION_HEADER):
            log.add(_parse_date(path, line, row["date"]), row["reason"])
        return log


# ---------------------------------------------------------------------------
# low-level row parsing
# ---------------------------------------------------------------------------


def _rows(path, header: Sequence[str]):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{p}: file not found")
    with open(p, newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise ParseError(p, 1, "", "missing header") from None
        if tuple(c.strip() for c in first) != tuple(header):
            raise ParseError(p, 1, "", f"expected header {','.join(header)}, got {','.join(first)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(p, line, "", f"expected {len(header)} fields, got {len(row)}")
            yield line, dict(zip(header, (c.strip() for c in row)))


def _parse_date(path, line, text) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise ParseError(path, line, "date", f"not an ISO date: {text!r}") from None


def _parse_int(path, line, column, text, lo=None, hi=None) -> int:
    try:
        v = int(text)
    except ValueError:
        raise ParseError(path, line, column, f"not an integer: {text!r}") from None
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ParseError(path, line, column, f"{v} outside [{lo}, {hi}]")
    return v


def _parse_float(path, line, column, text) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, line, column, f"not a number: {text!r}") from None
    if not math.isfinite(v):
        raise ParseError(path, line, column, f"non-finite value {text!r}")
    return v


def parse_price_csv(
    path: str | Path,
    kind: Literal["day_ahead", "real_time"],
    nodes: Sequence[str] | NodeSet | None = None,
) -> list[RawPriceRecord]:
    """Parse a day-ahead or real-time price file into records.

    Raises ParseError on malformed rows and UnknownNode for node ids outside
    ``nodes`` (when given).
    """
    if kind not in ("day_ahead", "real_time"):
        raise ValueError(f"unknown price kind {kind!r}")
    header = DA_HEADER if kind == "day_ahead" else RT_HEADER
    node_set = as_node_set(nodes) if nodes is not None else None
    out = []
    seen = set()
    for line, row in _rows(path, header):
        d = _parse_date(path, line, row["date"])
        h = _parse_int(path, line, "hour", row["hour"], 0, 23)
        interval = _parse_int(path, line, "interval", row["interval"], 1) if kind == "real_time" else None
        node = row["node_id"]
        if not node:
            raise ParseError(path, line, "node_id", "empty node id")
        if node_set is not None and node not in node_set:
            raise UnknownNode(path, line, node)
        price = _parse_float(path, line, "price", row["price"])
        key = (d, h, interval, node)
        if key in seen:
            raise ParseError(path, line, "", f"duplicate record for {key}")
        seen.add(key)
        out.append(RawPriceRecord(d, h, node, price, interval))
    return out


def parse_weather_csv(path: str | Path, nodes: Sequence[str] | NodeSet | None = None) -> list[WeatherRecord]:
    node_set = as_node_set(nodes) if nodes is not None else None
    out = []
    seen = set()
    for line, row in _rows(path, WEATHER_HEADER):
        d = _parse_date(path, line, row["date"])
        h = _parse_int(path, line, "hour", row["hour"], 0, 23)
        node = row["node_id"]
        if node_set is not None and node not in node_set:
            raise UnknownNode(path, line, node)
        var = row["variable"]
        if not var:
            raise ParseError(path, line, "variable", "empty variable name")
        value = _parse_float(path, line, "value", row["value"])
        key = (d, h, node, var)
        if key in seen:
            raise ParseError(path, line, "", f"duplicate record for {key}")
        seen.add(key)
        out.append(WeatherRecord(d, h, node, var, value))
    return out


# ---------------------------------------------------------------------------
# aggregation and alignment
# ---------------------------------------------------------------------------


def hourly_average_rt(
    records: Iterable[RawPriceRecord], hour: int, intervals_expected: int
) -> tuple[dict[date, dict[str, float]], ExclusionLog]:
    """Arithmetic mean of the real-time interval prices for ``hour``.

    A date is excluded (``incomplete_intervals``) if any node present that day
    does not have exactly the intervals ``1..intervals_expected``.
    """
    if intervals_expected < 1:
        raise ValueError("intervals_expected must be positive")
    groups: dict[date, dict[str, dict[int, float]]] = defaultdict(lambda: defaultdict(dict))
    for r in records:
        if r.hour != hour:
            continue
        if r.interval is None:
            raise ValueError("hourly_average_rt needs real-time records with intervals")
        groups[r.date][r.node_id][r.interval] = r.price
    expected = set(range(1, intervals_expected + 1))
    averages: dict[date, dict[str, float]] = {}
    log = ExclusionLog()
    for d in sorted(groups):
        by_node = groups[d]
        if any(set(iv) != expected for iv in by_node.values()):
            log.add(d, "incomplete_intervals")
            continue
        # sorted by interval index so the sum does not depend on file order
        averages[d] = {
            node: math.fsum(iv[j] for j in sorted(iv)) / intervals_expected for node, iv in sorted(by_node.items())
        }
    return averages, log


def hour_filter(records: Iterable[RawPriceRecord], hour: int) -> dict[date, dict[str, float]]:
    out: dict[date, dict[str, float]] = defaultdict(dict)
    for r in records:
        if r.hour == hour:
            out[r.date][r.node_id] = r.price
    return dict(out)


def pivot_weather(
    records: Iterable[WeatherRecord], hour: int, nodes: NodeSet, variables: Sequence[str]
) -> tuple[dict[date, np.ndarray], set[date]]:
    """Pivot long-format weather to ``(n, k)`` matrices; returns (complete, incomplete dates)."""
    vidx = {v: j for j, v in enumerate(variables)}
    grids: dict[date, np.ndarray] = {}
    for r in records:
        if r.hour != hour or r.variable not in vidx:
            continue
        g = grids.setdefault(r.date, np.full((nodes.n, len(variables)), np.nan))
        g[nodes.index(r.node_id), vidx[r.variable]] = r.value
    complete = {d: g for d, g in grids.items() if not np.isnan(g).any()}
    return complete, set(grids) - set(complete)


def build_training_set(
    da: Iterable[RawPriceRecord],
    rt_hourly: dict[date, dict[str, float]],
    weather: Iterable[WeatherRecord],
    node_set: Sequence[str] | NodeSet,
    hour: int,
    variables: Sequence[str],
    price_floor: float = DEFAULT_PRICE_FLOOR,
    rt_exclusions: ExclusionLog | None = None,
    extra_dates: Iterable[date] = (),
) -> tuple[TrainingSet, ExclusionLog]:
    """Align prices and weather for ``hour`` into a TrainingSet.

    ``rt_exclusions`` (from :func:`hourly_average_rt`) is merged so its dates
    keep their reason. Each date gets a single reason, checked in the order
    ``missing_node``, ``incomplete_intervals``, ``nonpositive_price``,
    ``missing_weather``.
    """
    nodes = as_node_set(node_set)
    da_by_date = hour_filter(da, hour)
    weather = list(weather)
    wx_complete, _ = pivot_weather(weather, hour, nodes, variables)
    rt_bad = {d: r for d, r in (rt_exclusions or ExclusionLog())}
    all_dates = (
        set(da_by_date) | set(rt_hourly) | set(rt_bad) | {r.date for r in weather if r.hour == hour} | set(extra_dates)
    )
    if not all_dates:
        raise EmptyDataset("no dates found in any input for the configured hour")

    log = ExclusionLog()
    days = []
    for d in sorted(all_dates):
        da_day = da_by_date.get(d, {})
        rt_day = rt_hourly.get(d)
        if any(node not in da_day for node in nodes) or (
            d not in rt_bad and (rt_day is None or any(node not in rt_day for node in nodes))
        ):
            log.add(d, "missing_node")
            continue
        if d in rt_bad:
            log.add(d, rt_bad[d])
            continue
        try:
            f = np.array([log_price_diff(da_day[node], rt_day[node], price_floor) for node in nodes])
        except NonpositivePrice:
            log.add(d, "nonpositive_price")
            continue
        if d not in wx_complete:
            log.add(d, "missing_weather")
            continue
        days.append((d, wx_complete[d], f))

    if not days:
        raise EmptyDataset("no date has complete data at every node")
    ts = TrainingSet(
        dates=tuple(d for d, _, _ in days),
        node_ids=nodes.node_ids,
        variables=tuple(variables),
        weather=np.stack([w for _, w, _ in days]),
        diffs=np.stack([f for _, _, f in days]),
        hour=hour,
    )
    return ts, log


@dataclass(frozen=True)
class IngestResult:
    training_set: TrainingSet
    exclusions: ExclusionLog
    rt_hourly: dict[date, dict[str, float]]


def ingest_files(
    da_path: str | Path,
    rt_path: str | Path,
    weather_path: str | Path,
    nodes: Sequence[str] | NodeSet,
    hour: int,
    variables: Sequence[str],
    intervals_expected: int = 12,
    price_floor: float = DEFAULT_PRICE_FLOOR,
) -> IngestResult:
    node_set = as_node_set(nodes)
    for p in (da_path, rt_path, weather_path):
        if not Path(p).is_file():
            raise InputError(f"{p}: file not found")
    da = parse_price_csv(da_path, "day_ahead", node_set)
    rt = parse_price_csv(rt_path, "real_time", node_set)
    wx = parse_weather_csv(weather_path, node_set)
    rt_hourly, rt_log = hourly_average_rt(rt, hour, intervals_expected)
    ts, log = build_training_set(da, rt_hourly, wx, node_set, hour, variables, price_floor, rt_log)
    return IngestResult(ts, log, rt_hourly)


# ---------------------------------------------------------------------------
# canonical training-set CSV
# ---------------------------------------------------------------------------


def write_training_set(ts: TrainingSet, path: str | Path) -> None:
    """Long format ``date,hour,node_id,price_diff,<variables...>``; floats written with ``repr``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "hour", "node_id", "price_diff", *ts.variables])
        for t, d in enumerate(ts.dates):
            for i, node in enumerate(ts.node_ids):
                w.writerow(
                    [d.isoformat(), ts.hour, node, repr(float(ts.diffs[t, i]))]
                    + [repr(float(x)) for x in ts.weather[t, i]]
                )


def read_training_set(path: str | Path) -> TrainingSet:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{p}: file not found")
    with open(p, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(p, 1, "", "missing header") from None
        if header[:4] != ["date", "hour", "node_id", "price_diff"]:
            raise ParseError(p, 1, "", "expected header date,hour,node_id,price_diff,...")
        variables = tuple(header[4:])
        rows: dict[date, dict[str, tuple[float, list[float]]]] = {}
        node_order: list[str] = []
        hour = 0
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(p, line, "", f"expected {len(header)} fields, got {len(row)}")
            d = _parse_date(p, line, row[0])
            hour = _parse_int(p, line, "hour", row[1], 0, 23)
            node = row[2]
            if node not in node_order:
                node_order.append(node)
            diff = _parse_float(p, line, "price_diff", row[3])
            wx = [_parse_float(p, line, v, x) for v, x in zip(variables, row[4:])]
            rows.setdefault(d, {})[node] = (diff, wx)
    dates = sorted(rows)
    for d in dates:
        if set(rows[d]) != set(node_order):
            raise ParseError(p, 0, "node_id", f"date {d} does not cover every node")
    weather = np.array([[rows[d][node][1] for node in node_order] for d in dates], dtype=float)
    diffs = np.array([[rows[d][node][0] for node in node_order] for d in dates], dtype=float)
    if not dates:
        weather = np.zeros((0, len(node_order), len(variables)))
        diffs = np.zeros((0, len(node_order)))
    return TrainingSet(tuple(dates), tuple(node_order), variables, weather, diffs, hour)
