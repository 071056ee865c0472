"""Shared fixtures: tiny hand-built logs and a cached synthetic pipeline."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np
import pytest

from confpm.conformal import ConformalMethod, calibrate
from confpm.encoding import (
    PrefixEncoder,
    as_matrix,
    build_prefix_records,
    encode_records,
    temporal_split,
)
from confpm.eventlog import (
    Event,
    EventLog,
    LogContext,
    Outcome,
    SchemaConfig,
    Trace,
    TreatmentRule,
    derive_treatment,
    label_outcomes,
)
from confpm.learners import GbdtParams, train_gbdt, train_tlearner
from confpm.synthgen import OUTCOME_RULES, SynthConfig, TREATMENT_ACTIVITY, generate_log

BASE_TIME = datetime(2024, 1, 1, 8, 0, 0)


def t(minutes: float) -> datetime:
    return BASE_TIME + timedelta(minutes=minutes)


def make_trace(case_id, activities, start_minutes=0.0, step_minutes=1.0,
               resources=None, case_attributes=None, event_attrs=None):
    events = []
    for i, activity in enumerate(activities):
        events.append(Event(
            case_id=case_id,
            activity=activity,
            timestamp=t(start_minutes + i * step_minutes),
            resource=resources[i] if resources else None,
            attributes=dict(event_attrs[i]) if event_attrs else {},
        ))
    return Trace(case_id=case_id, events=events,
                 case_attributes=dict(case_attributes or {}))


def make_log(traces, schema=None) -> EventLog:
    return EventLog(traces=list(traces), schema=schema or SchemaConfig())


@dataclass
class PipelineBundle:
    """A trained pipeline over a synthetic log, shared by expensive tests."""

    config: SynthConfig
    log: EventLog
    truths: list
    train: list
    cal: list
    test: list
    encoder: PrefixEncoder
    model: object
    causal: object


def run_pipeline(cfg: SynthConfig, prefix_min=2, prefix_max=4,
                 params: GbdtParams | None = None) -> PipelineBundle:
    log, truths = generate_log(cfg)
    labels = label_outcomes(log, OUTCOME_RULES)
    treatments = derive_treatment(log, TreatmentRule(TREATMENT_ACTIVITY, 1))
    records = build_prefix_records(log, labels, treatments, prefix_min, prefix_max,
                                   context=LogContext(log))
    splits = temporal_split(records)
    encoder = PrefixEncoder().fit(splits.train, log.schema)
    train = encode_records(splits.train, encoder)
    cal = encode_records(splits.cal, encoder)
    test = encode_records(splits.test, encoder)
    X, T, Y = as_matrix(train)
    params = params or GbdtParams(n_trees=60, max_depth=3, min_leaf=10)
    model = train_gbdt(X, Y, params, seed=cfg.seed)
    causal = train_tlearner(X, T, Y, params, seed=cfg.seed)
    return PipelineBundle(config=cfg, log=log, truths=truths, train=train,
                          cal=cal, test=test, encoder=encoder, model=model,
                          causal=causal)


@pytest.fixture(scope="session")
def coverage_bundle() -> PipelineBundle:
    """5000 exchangeable cases with 10% label noise, one prefix per case."""
    cfg = SynthConfig(n_cases=5000, len_min=5, len_max=9, n_features=6,
                      label_noise=0.1, treatment_effect=0.15, p_treat=0.4,
                      seed=2024)
    return run_pipeline(cfg, prefix_min=4, prefix_max=4)


@pytest.fixture(scope="session")
def imbalance_bundle() -> PipelineBundle:
    """Roughly 80/20 dout/uout imbalance for class-conditional coverage."""
    cfg = SynthConfig(n_cases=5000, len_min=5, len_max=9, n_features=6,
                      intercept=-1.9, label_noise=0.1, treatment_effect=0.15,
                      p_treat=0.4, seed=77)
    return run_pipeline(cfg, prefix_min=4, prefix_max=4)


@pytest.fixture(scope="session")
def calibrators_by_alpha(coverage_bundle):
    def build(method: ConformalMethod, alpha: float):
        return calibrate(method, coverage_bundle.model, coverage_bundle.cal, alpha)
    return build


def rng_probs(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.random(n)
