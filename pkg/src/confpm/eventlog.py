"""Event log ingestion: CSV parsing, cleaning, labeling, prefixes, enrichment.

Timestamps are handled as timezone-naive UTC datetimes with millisecond
precision. Traces keep their events sorted by timestamp (stable, so equal
timestamps preserve file order).
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, TextIO

from .errors import ConfigError, DataError


class Outcome(str, Enum):
    """Binary terminal label of a case; UOUT is the prescriptive target."""

    DOUT = "dout"
    UOUT = "uout"


@dataclass(frozen=True)
class Event:
    case_id: str
    activity: str
    timestamp: datetime
    resource: str | None = None
    attributes: dict[str, object] = field(default_factory=dict)


@dataclass
class Trace:
    case_id: str
    events: list[Event]
    case_attributes: dict[str, object] = field(default_factory=dict)

    @property
    def start_time(self) -> datetime:
        return self.events[0].timestamp

    @property
    def end_time(self) -> datetime:
        return self.events[-1].timestamp

    @property
    def last_activity(self) -> str:
        return self.events[-1].activity

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class SchemaConfig:
    """Column mapping for flat event-log CSVs.

    ``numeric_attrs`` and ``categorical_attrs`` classify every declared
    attribute column; ``case_attrs`` marks which of those are case-level
    (constant per case, read from the first row that carries a value).
    A case attribute not listed in ``numeric_attrs`` is treated as
    categorical.
    """

    case_id: str = "case_id"
    activity: str = "activity"
    timestamp: str = "timestamp"
    timestamp_format: str = "%Y-%m-%d %H:%M:%S.%f"
    resource: str | None = "resource"
    numeric_attrs: tuple[str, ...] = ()
    categorical_attrs: tuple[str, ...] = ()
    case_attrs: tuple[str, ...] = ()

    def event_numeric_attrs(self) -> tuple[str, ...]:
        return tuple(a for a in self.numeric_attrs if a not in self.case_attrs)

    def event_categorical_attrs(self) -> tuple[str, ...]:
        return tuple(a for a in self.categorical_attrs if a not in self.case_attrs)

    def case_numeric_attrs(self) -> tuple[str, ...]:
        return tuple(a for a in self.case_attrs if a in self.numeric_attrs)

    def case_categorical_attrs(self) -> tuple[str, ...]:
        return tuple(a for a in self.case_attrs if a not in self.numeric_attrs)


@dataclass
class EventLog:
    traces: list[Trace]
    schema: SchemaConfig

    def __len__(self) -> int:
        return len(self.traces)

    def trace_by_case(self, case_id: str) -> Trace:
        for tr in self.traces:
            if tr.case_id == case_id:
                return tr
        raise KeyError(case_id)


def parse_csv(
    source: TextIO | str | Path,
    schema: SchemaConfig,
    drop_bad_timestamps: bool = False,
) -> EventLog:
    """Parse a flat CSV into an EventLog, one trace per distinct case id.

    Events are sorted by timestamp within each trace. Raises DataError with
    the offending line number on malformed rows unless ``drop_bad_timestamps``
    is set, in which case rows with unparseable timestamps are skipped.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return parse_csv(fh, schema, drop_bad_timestamps)

    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty input: no header row") from None

    col = {name: i for i, name in enumerate(header)}
    for required in (schema.case_id, schema.activity, schema.timestamp):
        if required not in col:
            raise ConfigError(f"missing required column {required!r} in header")
    declared = set(schema.numeric_attrs) | set(schema.categorical_attrs) | set(schema.case_attrs)
    for name in declared:
        if name not in col:
            raise ConfigError(f"declared attribute column {name!r} not in header")

    event_attrs = [
        (a, True) for a in schema.event_numeric_attrs()
    ] + [(a, False) for a in schema.event_categorical_attrs()]

    traces: dict[str, Trace] = {}
    for row in reader:
        line = reader.line_num
        if len(row) != len(header):
            raise DataError(f"line {line}: expected {len(header)} fields, got {len(row)}")
        case_id = row[col[schema.case_id]]
        activity = row[col[schema.activity]]
        if not case_id:
            raise DataError(f"line {line}: empty case id")
        if not activity:
            raise DataError(f"line {line}: empty activity")
        raw_ts = row[col[schema.timestamp]]
        try:
            ts = datetime.strptime(raw_ts, schema.timestamp_format)
        except ValueError:
            if drop_bad_timestamps:
                continue
            raise DataError(
                f"line {line}: cannot parse timestamp {raw_ts!r} "
                f"with format {schema.timestamp_format!r}"
            ) from None

        attributes: dict[str, object] = {}
        for attr, is_numeric in event_attrs:
            raw = row[col[attr]]
            if raw == "":
                continue
            if is_numeric:
                try:
                    attributes[attr] = float(raw)
                except ValueError:
                    raise DataError(
                        f"line {line}: non-numeric value {raw!r} in column {attr!r}"
                    ) from None
            else:
                attributes[attr] = raw

        resource = None
        if schema.resource is not None and schema.resource in col:
            resource = row[col[schema.resource]] or None

        trace = traces.get(case_id)
        if trace is None:
            trace = Trace(case_id=case_id, events=[])
            traces[case_id] = trace
        trace.events.append(
            Event(case_id=case_id, activity=activity, timestamp=ts,
                  resource=resource, attributes=attributes)
        )

        for attr in schema.case_attrs:
            if attr in trace.case_attributes:
                continue
            raw = row[col[attr]]
            if raw == "":
                continue
            if attr in schema.numeric_attrs:
                try:
                    trace.case_attributes[attr] = float(raw)
                except ValueError:
                    raise DataError(
                        f"line {line}: non-numeric value {raw!r} in column {attr!r}"
                    ) from None
            else:
                trace.case_attributes[attr] = raw

    for trace in traces.values():
        trace.events.sort(key=lambda e: e.timestamp)
    return EventLog(traces=list(traces.values()), schema=schema)


def write_csv(log: EventLog, path: str | Path) -> None:
    """Write an EventLog back to the flat CSV layout parse_csv consumes."""
    schema = log.schema
    attr_cols = list(schema.numeric_attrs) + [
        a for a in schema.categorical_attrs if a not in schema.numeric_attrs
    ]
    for a in schema.case_attrs:
        if a not in attr_cols:
            attr_cols.append(a)
    header = [schema.case_id, schema.activity, schema.timestamp]
    if schema.resource is not None:
        header.append(schema.resource)
    header.extend(attr_cols)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for trace in log.traces:
            for ev in trace.events:
                row = [trace.case_id, ev.activity, ev.timestamp.strftime(schema.timestamp_format)]
                if schema.resource is not None:
                    row.append(ev.resource or "")
                for a in attr_cols:
                    if a in schema.case_attrs:
                        value = trace.case_attributes.get(a)
                    else:
                        value = ev.attributes.get(a)
                    row.append("" if value is None else (repr(value) if isinstance(value, float) else str(value)))
                writer.writerow(row)


@dataclass(frozen=True)
class CleanRules:
    """Trace completion predicate plus valid-timestamp bounds.

    A trace is complete when ``is_complete`` (if given) returns True, else
    when its last activity is in ``terminal_activities`` (if given), else
    always. Events outside [ts_min, ts_max] are dropped before the
    completion check.
    """

    terminal_activities: frozenset[str] | None = None
    ts_min: datetime | None = None
    ts_max: datetime | None = None
    is_complete: Callable[[Trace], bool] | None = None

    def complete(self, trace: Trace) -> bool:
        if self.is_complete is not None:
            return self.is_complete(trace)
        if self.terminal_activities is not None:
            return trace.last_activity in self.terminal_activities
        return True


@dataclass
class CleanStats:
    dropped_events: int = 0
    dropped_empty_traces: int = 0
    dropped_incomplete_traces: int = 0


def clean_log(log: EventLog, rules: CleanRules) -> tuple[EventLog, CleanStats]:
    """Drop timestamp-outlier events, then emptied and incomplete traces."""
    stats = CleanStats()
    kept: list[Trace] = []
    for trace in log.traces:
        events = [
            ev for ev in trace.events
            if (rules.ts_min is None or ev.timestamp >= rules.ts_min)
            and (rules.ts_max is None or ev.timestamp <= rules.ts_max)
        ]
        stats.dropped_events += len(trace.events) - len(events)
        if not events:
            stats.dropped_empty_traces += 1
            continue
        cleaned = Trace(trace.case_id, events, dict(trace.case_attributes))
        if not rules.complete(cleaned):
            stats.dropped_incomplete_traces += 1
            continue
        kept.append(cleaned)
    return EventLog(traces=kept, schema=log.schema), stats


def label_outcomes(log: EventLog, outcome_rules: Mapping[str, Outcome | str]) -> dict[str, Outcome]:
    """Assign each case its outcome from a last-activity -> label rule map."""
    rules = {act: Outcome(value) for act, value in outcome_rules.items()}
    labels: dict[str, Outcome] = {}
    unmapped: list[str] = []
    for trace in log.traces:
        last = trace.last_activity
        if last not in rules:
            if last not in unmapped:
                unmapped.append(last)
            continue
        labels[trace.case_id] = rules[last]
    if unmapped:
        raise DataError(f"unmapped terminal activities: {', '.join(sorted(unmapped))}")
    return labels


@dataclass(frozen=True)
class TreatmentRule:
    activity: str
    min_count: int = 1

    def __post_init__(self) -> None:
        if self.min_count < 1:
            raise ValueError("min_count must be >= 1")


def derive_treatment(log: EventLog, rule: TreatmentRule) -> dict[str, bool]:
    """T=True iff the rule activity occurs at least min_count times in the full trace."""
    return {
        trace.case_id: sum(ev.activity == rule.activity for ev in trace.events) >= rule.min_count
        for trace in log.traces
    }


def prefix_length_cap(log: EventLog, percentile: float) -> int:
    """The ceil(p/100 * n)-th smallest trace length (an order statistic)."""
    if not 0 < percentile <= 100:
        raise ValueError("percentile must be in (0, 100]")
    if not log.traces:
        raise DataError("cannot compute a prefix length cap on an empty log")
    lengths = sorted(len(tr) for tr in log.traces)
    k = math.ceil(percentile * len(lengths) / 100)
    return lengths[max(k, 1) - 1]


def extract_prefixes(
    log: EventLog, min_len: int, max_len: int
) -> list[tuple[str, list[Event]]]:
    """One prefix per length K in [min_len, min(trace length, max_len)] per trace."""
    if not 1 <= min_len <= max_len:
        raise ValueError("need 1 <= min_len <= max_len")
    out: list[tuple[str, list[Event]]] = []
    for trace in log.traces:
        for k in range(min_len, min(len(trace), max_len) + 1):
            out.append((trace.case_id, trace.events[:k]))
    return out


@dataclass(frozen=True)
class Enrichment:
    """Context features of a prefix: calendar position plus inter-case load."""

    day_of_week: int
    hour_of_day: int
    active_cases: int
    idle_resources: int

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (float(self.day_of_week), float(self.hour_of_day),
                float(self.active_cases), float(self.idle_resources))

    FEATURE_NAMES = ("day_of_week", "hour_of_day", "active_cases", "idle_resources")


class LogContext:
    """Precomputed indexes over a log for fast inter-case feature queries.

    A case is active at time t when it has started (start <= t) and not yet
    ended (end > t). A resource is occupied at t when its most recent event
    at or before t belongs to a still-active case.
    """

    def __init__(self, log: EventLog):
        self._span: dict[str, tuple[datetime, datetime]] = {}
        starts: list[datetime] = []
        ends: list[datetime] = []
        res_events: dict[str, list[tuple[datetime, str]]] = {}
        for trace in log.traces:
            if not trace.events:
                continue
            self._span[trace.case_id] = (trace.start_time, trace.end_time)
            starts.append(trace.start_time)
            ends.append(trace.end_time)
            for ev in trace.events:
                if ev.resource is not None:
                    res_events.setdefault(ev.resource, []).append((ev.timestamp, trace.case_id))
        self._starts = sorted(starts)
        self._ends = sorted(ends)
        self._res_events = {
            r: sorted(evs, key=lambda e: (e[0], e[1])) for r, evs in res_events.items()
        }
        self._res_keys = {r: [e[0] for e in evs] for r, evs in self._res_events.items()}

    @property
    def n_resources(self) -> int:
        return len(self._res_events)

    def case_active(self, case_id: str, t: datetime) -> bool:
        span = self._span.get(case_id)
        return span is not None and span[0] <= t < span[1]

    def active_cases(self, t: datetime, exclude: str | None = None) -> int:
        started = bisect_right(self._starts, t)
        ended = bisect_right(self._ends, t)
        count = started - ended
        if exclude is not None and self.case_active(exclude, t):
            count -= 1
        return count

    def idle_resources(self, t: datetime) -> int:
        idle = 0
        for resource, keys in self._res_keys.items():
            i = bisect_right(keys, t) - 1
            if i < 0:
                idle += 1
                continue
            _, case_id = self._res_events[resource][i]
            if not self.case_active(case_id, t):
                idle += 1
        return idle


def enrich(prefix: Iterable[Event], context: "LogContext | EventLog") -> Enrichment:
    """Compute calendar and inter-case features as of the prefix's last event."""
    events = list(prefix)
    if not events:
        raise ValueError("prefix must contain at least one event")
    if isinstance(context, EventLog):
        context = LogContext(context)
    t = events[-1].timestamp
    return Enrichment(
        day_of_week=t.weekday(),
        hour_of_day=t.hour,
        active_cases=context.active_cases(t, exclude=events[-1].case_id),
        idle_resources=context.idle_resources(t),
    )
