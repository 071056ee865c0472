"""Synthetic event logs with known outcome probabilities and effects.

Cases are drawn i.i.d.: numeric case features feed a logistic outcome model,
treated cases get their undesired-outcome probability reduced by the
configured effect, and labels are optionally flipped with a noise rate
(globally, or only inside a flagged noisy segment of the population). Case
start times follow an exponential inter-arrival process that is independent
of features, so calibration/test folds of a temporal split stay
exchangeable and the coverage guarantee is testable against ground truth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .eventlog import Event, EventLog, Outcome, SchemaConfig, Trace

START_ACTIVITY = "register"
MIDDLE_ACTIVITIES = ("check", "review", "update", "contact")
TREATMENT_ACTIVITY = "intervene"
END_DESIRED = "end_positive"
END_UNDESIRED = "end_negative"

OUTCOME_RULES = {END_DESIRED: Outcome.DOUT, END_UNDESIRED: Outcome.UOUT}


@dataclass(frozen=True)
class SynthConfig:
    n_cases: int = 200
    len_min: int = 5
    len_max: int = 9
    n_features: int = 6
    coefficients: tuple[float, ...] | None = None
    intercept: float = 0.0
    treatment_effect: float = 0.2
    p_treat: float = 0.35
    label_noise: float = 0.0
    noisy_segment_frac: float = 0.0
    noisy_segment_noise: float = 0.0
    negative_effect_frac: float = 0.0
    mean_interarrival_s: float = 900.0
    mean_gap_s: float = 600.0
    n_resources: int = 5
    start: datetime = datetime(2024, 1, 1, 8, 0, 0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_cases < 3:
            raise ValueError("n_cases must be >= 3")
        if not 3 <= self.len_min <= self.len_max:
            raise ValueError("need 3 <= len_min <= len_max")
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        for name in ("p_treat", "label_noise", "noisy_segment_frac",
                     "noisy_segment_noise", "negative_effect_frac"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.mean_interarrival_s <= 0 or self.mean_gap_s <= 0:
            raise ValueError("time gaps must be positive")

    def weights(self) -> np.ndarray:
        if self.coefficients is not None:
            if len(self.coefficients) != self.n_features:
                raise ValueError("coefficients length must equal n_features")
            return np.asarray(self.coefficients, dtype=np.float64)
        signs = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(self.n_features)])
        return 1.8 * signs / np.sqrt(np.arange(self.n_features) + 1.0)


@dataclass(frozen=True)
class CaseTruth:
    """Generator-side ground truth, written to the sidecar CSV."""

    case_id: str
    p_uout_base: float
    p_uout_treated: float
    p_uout_actual: float
    cate: float
    treated: bool
    noisy: bool
    outcome: Outcome


def _sigmoid(z: float) -> float:
    return float(1.0 / (1.0 + np.exp(-z)))


def _quantize_ms(t: datetime) -> datetime:
    return t.replace(microsecond=(t.microsecond // 1000) * 1000)


def generate_log(cfg: SynthConfig) -> tuple[EventLog, list[CaseTruth]]:
    """Generate an event log plus its per-case ground truth, both seeded."""
    rng = np.random.default_rng(cfg.seed)
    w = cfg.weights()
    has_segment = cfg.noisy_segment_frac > 0.0

    feature_cols = tuple(f"f{i}" for i in range(cfg.n_features))
    if has_segment:
        feature_cols = feature_cols + ("noisy",)
    schema = SchemaConfig(
        numeric_attrs=feature_cols,
        case_attrs=feature_cols,
    )

    traces: list[Trace] = []
    truths: list[CaseTruth] = []
    t = cfg.start
    width = len(str(cfg.n_cases - 1))
    for i in range(cfg.n_cases):
        case_id = f"c{i:0{width}d}"
        t = t + timedelta(seconds=max(float(rng.exponential(cfg.mean_interarrival_s)), 0.001))
        start = _quantize_ms(t)

        x = rng.standard_normal(cfg.n_features)
        noisy = bool(rng.random() < cfg.noisy_segment_frac)
        negative_effect = bool(rng.random() < cfg.negative_effect_frac)
        treated = bool(rng.random() < cfg.p_treat)

        p_base = _sigmoid(float(w @ x) + cfg.intercept)
        effect = -cfg.treatment_effect if negative_effect else cfg.treatment_effect
        p_treated = float(np.clip(p_base - effect, 0.0, 1.0))
        cate = p_base - p_treated
        p_effective = p_treated if treated else p_base
        noise = float(cfg.noisy_segment_noise if noisy else cfg.label_noise)
        p_actual = p_effective * (1.0 - noise) + (1.0 - p_effective) * noise
        outcome = Outcome.UOUT if rng.random() < p_actual else Outcome.DOUT

        length = int(rng.integers(cfg.len_min, cfg.len_max + 1))
        activities = [START_ACTIVITY]
        for _ in range(length - 2):
            activities.append(str(rng.choice(MIDDLE_ACTIVITIES)))
        if treated:
            slot = int(rng.integers(1, length - 1))
            activities[slot] = TREATMENT_ACTIVITY
        activities.append(END_DESIRED if outcome == Outcome.DOUT else END_UNDESIRED)

        case_attributes: dict[str, object] = {f"f{k}": float(x[k]) for k in range(cfg.n_features)}
        if has_segment:
            case_attributes["noisy"] = float(noisy)

        events = []
        ev_time = start
        for k, activity in enumerate(activities):
            if k > 0:
                ev_time = _quantize_ms(
                    ev_time + timedelta(seconds=max(float(rng.exponential(cfg.mean_gap_s)), 0.001))
                )
            events.append(Event(
                case_id=case_id, activity=activity, timestamp=ev_time,
                resource=f"res_{int(rng.integers(cfg.n_resources))}",
            ))
        traces.append(Trace(case_id=case_id, events=events, case_attributes=case_attributes))
        truths.append(CaseTruth(
            case_id=case_id, p_uout_base=p_base, p_uout_treated=p_treated,
            p_uout_actual=p_actual, cate=cate, treated=treated, noisy=noisy,
            outcome=outcome,
        ))
    return EventLog(traces=traces, schema=schema), truths


def write_ground_truth_csv(truths: Sequence[CaseTruth], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_id", "p_uout_base", "p_uout_treated", "p_uout_actual",
                         "cate", "treated", "noisy", "outcome"])
        for tr in truths:
            writer.writerow([
                tr.case_id, repr(tr.p_uout_base), repr(tr.p_uout_treated),
                repr(tr.p_uout_actual), repr(tr.cate), int(tr.treated),
                int(tr.noisy), tr.outcome.value,
            ])


def read_ground_truth_csv(path: str | Path) -> list[CaseTruth]:
    truths = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            truths.append(CaseTruth(
                case_id=row["case_id"],
                p_uout_base=float(row["p_uout_base"]),
                p_uout_treated=float(row["p_uout_treated"]),
                p_uout_actual=float(row["p_uout_actual"]),
                cate=float(row["cate"]),
                treated=row["treated"] == "1",
                noisy=row["noisy"] == "1",
                outcome=Outcome(row["outcome"]),
            ))
    return truths
