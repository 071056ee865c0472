"""Fixed-size prefix encoding and case-wise temporal dataset splits.

The encoding concatenates per-activity frequency counts, value counts for
categorical event attributes, summary statistics (mean/min/max/sum/population
std) for numeric event attributes, case attributes (categoricals one-hot),
and the enrichment features. Unseen categorical values fall into an "other"
bucket; missing numerics are imputed with the training mean and flagged by a
0/1 indicator column.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError
from .eventlog import (
    Enrichment,
    Event,
    EventLog,
    LogContext,
    Outcome,
    SchemaConfig,
    extract_prefixes,
)

OTHER = "__other__"

_AGGREGATES = ("mean", "min", "max", "sum", "std")


@dataclass
class PrefixRecord:
    """A raw prefix together with everything needed to encode it."""

    case_id: str
    prefix_length: int
    events: list[Event]
    case_attributes: dict[str, object]
    enrichment: Enrichment
    treatment: bool
    outcome: Outcome
    case_start_time: datetime
    prefix_end_time: datetime


def build_prefix_records(
    log: EventLog,
    labels: dict[str, Outcome],
    treatments: dict[str, bool],
    min_len: int,
    max_len: int,
    context: LogContext | None = None,
) -> list[PrefixRecord]:
    """Extract, enrich, and annotate all prefixes of a labeled log."""
    if context is None:
        context = LogContext(log)
    by_case = {tr.case_id: tr for tr in log.traces}
    records: list[PrefixRecord] = []
    for case_id, events in extract_prefixes(log, min_len, max_len):
        trace = by_case[case_id]
        if case_id not in labels:
            raise DataError(f"no outcome label for case {case_id!r}")
        last = events[-1].timestamp
        records.append(
            PrefixRecord(
                case_id=case_id,
                prefix_length=len(events),
                events=events,
                case_attributes=trace.case_attributes,
                enrichment=Enrichment(
                    day_of_week=last.weekday(),
                    hour_of_day=last.hour,
                    active_cases=context.active_cases(last, exclude=case_id),
                    idle_resources=context.idle_resources(last),
                ),
                treatment=treatments.get(case_id, False),
                outcome=labels[case_id],
                case_start_time=trace.start_time,
                prefix_end_time=last,
            )
        )
    return records


class PrefixEncoder:
    """Aggregate encoder fitted on training prefixes only.

    The feature index map is frozen at fit time; encode() output length is
    constant afterwards and the encoder is immutable, so concurrent encoding
    is safe.
    """

    def __init__(self) -> None:
        self.fitted = False

    def fit(self, records: Sequence[PrefixRecord], schema: SchemaConfig) -> "PrefixEncoder":
        if not records:
            raise DataError("cannot fit encoder on zero prefixes")
        self.schema = schema
        self.activity_vocab = sorted({ev.activity for r in records for ev in r.events})
        self.event_cat_attrs = sorted(schema.event_categorical_attrs())
        self.event_num_attrs = sorted(schema.event_numeric_attrs())
        self.case_cat_attrs = sorted(schema.case_categorical_attrs())
        self.case_num_attrs = sorted(schema.case_numeric_attrs())

        self.cat_vocab: dict[str, list[str]] = {}
        for attr in self.event_cat_attrs:
            values = {str(ev.attributes[attr]) for r in records for ev in r.events
                      if attr in ev.attributes}
            self.cat_vocab[attr] = sorted(values)
        self.case_cat_vocab: dict[str, list[str]] = {}
        for attr in self.case_cat_attrs:
            values = {str(r.case_attributes[attr]) for r in records
                      if r.case_attributes.get(attr) is not None}
            self.case_cat_vocab[attr] = sorted(values)

        names: list[str] = []
        for act in self.activity_vocab:
            names.append(f"act={act}")
        names.append(f"act={OTHER}")
        for attr in self.event_cat_attrs:
            for value in self.cat_vocab[attr]:
                names.append(f"{attr}={value}")
            names.append(f"{attr}={OTHER}")
        for attr in self.event_num_attrs:
            for agg in _AGGREGATES:
                names.append(f"{attr}_{agg}")
            names.append(f"{attr}_missing")
        for attr in self.case_cat_attrs:
            for value in self.case_cat_vocab[attr]:
                names.append(f"case_{attr}={value}")
            names.append(f"case_{attr}={OTHER}")
        for attr in self.case_num_attrs:
            names.append(f"case_{attr}")
            names.append(f"case_{attr}_missing")
        for name in Enrichment.FEATURE_NAMES:
            names.append(name)
        self.feature_names = names
        self.index = {name: i for i, name in enumerate(names)}
        self.fitted = True

        # imputation means come from the encoded training aggregates
        self.impute_means = {}
        sums: dict[str, float] = {}
        counts: dict[str, int] = {}
        for record in records:
            for attr in self.event_num_attrs:
                values = [float(ev.attributes[attr]) for ev in record.events
                          if attr in ev.attributes]
                if values:
                    for agg, val in zip(_AGGREGATES, _aggregate(values)):
                        key = f"{attr}_{agg}"
                        sums[key] = sums.get(key, 0.0) + val
                        counts[key] = counts.get(key, 0) + 1
            for attr in self.case_num_attrs:
                value = record.case_attributes.get(attr)
                if value is not None:
                    key = f"case_{attr}"
                    sums[key] = sums.get(key, 0.0) + float(value)
                    counts[key] = counts.get(key, 0) + 1
        self.impute_means = {k: sums[k] / counts[k] for k in sums}
        return self

    @property
    def dimension(self) -> int:
        self._check_fitted()
        return len(self.feature_names)

    def _check_fitted(self) -> None:
        if not self.fitted:
            raise RuntimeError("encoder used before fit()")

    def encode(self, record: PrefixRecord) -> np.ndarray:
        self._check_fitted()
        x = np.zeros(len(self.feature_names))
        idx = self.index

        for ev in record.events:
            key = f"act={ev.activity}"
            x[idx[key] if key in idx else idx[f"act={OTHER}"]] += 1.0

        for attr in self.event_cat_attrs:
            for ev in record.events:
                if attr not in ev.attributes:
                    continue
                key = f"{attr}={ev.attributes[attr]}"
                x[idx[key] if key in idx else idx[f"{attr}={OTHER}"]] += 1.0

        for attr in self.event_num_attrs:
            values = [float(ev.attributes[attr]) for ev in record.events
                      if attr in ev.attributes]
            if values:
                for agg, val in zip(_AGGREGATES, _aggregate(values)):
                    x[idx[f"{attr}_{agg}"]] = val
            else:
                for agg in _AGGREGATES:
                    key = f"{attr}_{agg}"
                    x[idx[key]] = self.impute_means.get(key, 0.0)
                x[idx[f"{attr}_missing"]] = 1.0

        for attr in self.case_cat_attrs:
            value = record.case_attributes.get(attr)
            if value is None:
                continue
            key = f"case_{attr}={value}"
            x[idx[key] if key in idx else idx[f"case_{attr}={OTHER}"]] = 1.0

        for attr in self.case_num_attrs:
            value = record.case_attributes.get(attr)
            key = f"case_{attr}"
            if value is None:
                x[idx[key]] = self.impute_means.get(key, 0.0)
                x[idx[f"case_{attr}_missing"]] = 1.0
            else:
                x[idx[key]] = float(value)

        for name, val in zip(Enrichment.FEATURE_NAMES, record.enrichment.as_tuple()):
            x[idx[name]] = val
        return x

    def save(self, path: str | Path) -> None:
        self._check_fitted()
        payload = {
            "format": "confpm-encoder",
            "version": 1,
            "activity_vocab": self.activity_vocab,
            "event_cat_attrs": self.event_cat_attrs,
            "event_num_attrs": self.event_num_attrs,
            "case_cat_attrs": self.case_cat_attrs,
            "case_num_attrs": self.case_num_attrs,
            "cat_vocab": self.cat_vocab,
            "case_cat_vocab": self.case_cat_vocab,
            "feature_names": self.feature_names,
            "impute_means": self.impute_means,
        }
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "PrefixEncoder":
        payload = json.loads(Path(path).read_text())
        if payload.get("format") != "confpm-encoder":
            raise DataError(f"{path}: not an encoder artifact")
        enc = cls()
        for key in ("activity_vocab", "event_cat_attrs", "event_num_attrs",
                    "case_cat_attrs", "case_num_attrs", "cat_vocab",
                    "case_cat_vocab", "feature_names", "impute_means"):
            setattr(enc, key, payload[key])
        enc.index = {name: i for i, name in enumerate(enc.feature_names)}
        enc.fitted = True
        return enc


def _aggregate(values: list[float]) -> tuple[float, float, float, float, float]:
    arr = np.asarray(values)
    return (float(arr.mean()), float(arr.min()), float(arr.max()),
            float(arr.sum()), float(arr.std()))


@dataclass
class PrefixSample:
    """An encoded prefix: feature vector X, treatment flag T, outcome Y."""

    case_id: str
    prefix_length: int
    features: np.ndarray
    treatment: bool
    outcome: Outcome
    prefix_end_time: datetime | None = None
    case_start_time: datetime | None = None


def encode_records(records: Sequence[PrefixRecord], encoder: PrefixEncoder) -> list[PrefixSample]:
    return [
        PrefixSample(
            case_id=r.case_id,
            prefix_length=r.prefix_length,
            features=encoder.encode(r),
            treatment=r.treatment,
            outcome=r.outcome,
            prefix_end_time=r.prefix_end_time,
            case_start_time=r.case_start_time,
        )
        for r in records
    ]


def as_matrix(samples: Sequence[PrefixSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack samples into (X, T, Y) arrays; Y is 1 for the undesired outcome."""
    X = np.stack([s.features for s in samples])
    T = np.array([s.treatment for s in samples], dtype=np.int8)
    Y = np.array([s.outcome == Outcome.UOUT for s in samples], dtype=np.int8)
    return X, T, Y


@dataclass
class DatasetSplits:
    train: list
    cal: list
    test: list

    @property
    def n_train(self) -> int:
        return len(self.train)

    @property
    def n_cal(self) -> int:
        return len(self.cal)

    @property
    def n_test(self) -> int:
        return len(self.test)


def temporal_split(samples: Sequence, ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)) -> DatasetSplits:
    """Split by case, ordered by case start time (ties by case id).

    The first floor(r_train * n) cases go to train, the next floor(r_cal * n)
    to calibration, the remainder to test. All prefixes of a case follow
    their case, which rules out intra-case leakage.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    cases: dict[str, datetime] = {}
    for s in samples:
        start = s.case_start_time
        if start is None:
            raise DataError(f"sample of case {s.case_id!r} lacks a case start time")
        if s.case_id not in cases or start < cases[s.case_id]:
            cases[s.case_id] = start
    n = len(cases)
    if n < 3:
        raise DataError(f"insufficient cases for a 3-way split: {n}")
    ordered = sorted(cases, key=lambda c: (cases[c], c))
    n_train = int(math.floor(ratios[0] * n + 1e-9))
    n_cal = int(math.floor(ratios[1] * n + 1e-9))
    fold_of = {}
    for i, case in enumerate(ordered):
        fold_of[case] = 0 if i < n_train else (1 if i < n_train + n_cal else 2)
    folds: tuple[list, list, list] = ([], [], [])
    for s in samples:
        folds[fold_of[s.case_id]].append(s)
    return DatasetSplits(train=folds[0], cal=folds[1], test=folds[2])


def write_samples_csv(samples: Sequence[PrefixSample], path: str | Path,
                      times_path: str | Path | None = None) -> None:
    """Write the encoded dataset export: case_id, prefix_len, T, Y, f_0..f_{d-1}.

    Timestamps are not part of the export schema; when ``times_path`` is
    given, a sidecar with case start / prefix end instants is written so a
    later stage can replay chronologically.
    """
    dim = len(samples[0].features) if samples else 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_id", "prefix_len", "T", "Y"] + [f"f_{i}" for i in range(dim)])
        for s in samples:
            writer.writerow(
                [s.case_id, s.prefix_length, int(s.treatment), s.outcome.value]
                + [repr(float(v)) for v in s.features]
            )
    if times_path is not None:
        with open(times_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["case_id", "prefix_len", "case_start_time", "prefix_end_time"])
            for s in samples:
                writer.writerow([
                    s.case_id, s.prefix_length,
                    s.case_start_time.isoformat(timespec="milliseconds"),
                    s.prefix_end_time.isoformat(timespec="milliseconds"),
                ])


def read_samples_csv(path: str | Path, times_path: str | Path | None = None) -> list[PrefixSample]:
    times: dict[tuple[str, int], tuple[datetime, datetime]] = {}
    if times_path is not None:
        with open(times_path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                times[(row["case_id"], int(row["prefix_len"]))] = (
                    datetime.fromisoformat(row["case_start_time"]),
                    datetime.fromisoformat(row["prefix_end_time"]),
                )
    samples: list[PrefixSample] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:4] != ["case_id", "prefix_len", "T", "Y"]:
            raise DataError(f"{path}: unexpected dataset header {header[:4]}")
        for row in reader:
            case_id, prefix_len = row[0], int(row[1])
            start, end = times.get((case_id, prefix_len), (None, None))
            samples.append(
                PrefixSample(
                    case_id=case_id,
                    prefix_length=prefix_len,
                    features=np.array([float(v) for v in row[4:]]),
                    treatment=row[2] == "1",
                    outcome=Outcome(row[3]),
                    prefix_end_time=end,
                    case_start_time=start,
                )
            )
    return samples
