"""Inductive conformal prediction sets over the two case outcomes.

Three calibration variants are supported:

* naive        -- one quantile over 1 - p(true outcome) scores;
* outcome_balanced -- the naive scoring calibrated separately per outcome,
                      giving class-conditional coverage;
* adaptive     -- scores are cumulative probability mass down the ranked
                  outcomes; sets grow from the top-ranked outcome and are
                  never empty.

Probability ties rank the undesired outcome first, so deterministic ties
favor the prescriptive target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoding import PrefixSample
from .errors import DataError
from .eventlog import Outcome

Probs = tuple[float, float]  # (p_uout, p_dout)


class ConformalMethod(str, Enum):
    NAIVE = "naive"
    OUTCOME_BALANCED = "outcome_balanced"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class PredictionSet:
    """A subset of {dout, uout} retained at the calibrated confidence."""

    members: frozenset[Outcome]

    @property
    def label(self) -> str:
        if not self.members:
            return "empty"
        if len(self.members) == 2:
            return "both"
        return next(iter(self.members)).value

    def __contains__(self, outcome: Outcome) -> bool:
        return outcome in self.members

    def __len__(self) -> int:
        return len(self.members)

    @classmethod
    def of(cls, *outcomes: Outcome) -> "PredictionSet":
        return cls(frozenset(outcomes))

    @classmethod
    def from_label(cls, label: str) -> "PredictionSet":
        try:
            return {
                "empty": cls.of(),
                "dout": cls.of(Outcome.DOUT),
                "uout": cls.of(Outcome.UOUT),
                "both": cls.of(Outcome.DOUT, Outcome.UOUT),
            }[label]
        except KeyError:
            raise DataError(f"unknown prediction set label {label!r}") from None


ONLY_UOUT = PredictionSet.of(Outcome.UOUT)


def _ranked(probs: Probs) -> list[tuple[Outcome, float]]:
    p_uout, p_dout = probs
    if p_uout >= p_dout:  # ties rank uout first
        return [(Outcome.UOUT, p_uout), (Outcome.DOUT, p_dout)]
    return [(Outcome.DOUT, p_dout), (Outcome.UOUT, p_uout)]


def score_naive(probs: Probs, true_y: Outcome) -> float:
    """One minus the prediction score of the actual outcome."""
    p_uout, p_dout = probs
    return 1.0 - (p_uout if true_y == Outcome.UOUT else p_dout)


def score_adaptive(probs: Probs, true_y: Outcome) -> float:
    """Cumulative probability mass down the ranking, through the true outcome."""
    total = 0.0
    for outcome, p in _ranked(probs):
        total += p
        if outcome == true_y:
            return total
    raise AssertionError("unreachable")


def conformal_quantile(scores: Sequence[float], alpha: float) -> float:
    """The ceil((n+1)(1-alpha))-th smallest score, or +inf when that index
    exceeds n (too little calibration data for the requested confidence)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    if n == 0:
        raise DataError("cannot take a quantile of zero calibration scores")
    k = math.ceil((n + 1) * (1 - alpha))
    if k > n:
        return math.inf
    return float(np.sort(scores)[k - 1])


@dataclass
class ConformalCalibrator:
    """Frozen calibration state; immutable after fitting, safe to share."""

    method: ConformalMethod
    alpha: float
    n_cal: int
    qhat: float | None = None
    qhat_per_outcome: dict[Outcome, float] | None = None
    n_cal_per_outcome: dict[Outcome, int] | None = None
    model_fingerprint: str | None = None

    def prediction_set(self, probs: Probs) -> PredictionSet:
        p_uout, p_dout = probs
        if self.method == ConformalMethod.NAIVE:
            members = {
                out for out, p in ((Outcome.UOUT, p_uout), (Outcome.DOUT, p_dout))
                if p >= 1.0 - self.qhat
            }
            return PredictionSet(frozenset(members))
        if self.method == ConformalMethod.OUTCOME_BALANCED:
            members = {
                out for out, p in ((Outcome.UOUT, p_uout), (Outcome.DOUT, p_dout))
                if p >= 1.0 - self.qhat_per_outcome[out]
            }
            return PredictionSet(frozenset(members))
        # adaptive: always keep the top-ranked outcome, extend while the
        # cumulative sum including the candidate stays within qhat
        ranked = _ranked(probs)
        members = {ranked[0][0]}
        if ranked[0][1] + ranked[1][1] <= self.qhat:
            members.add(ranked[1][0])
        return PredictionSet(frozenset(members))

    def save(self, path: str | Path) -> None:
        lines = [
            "format=confpm-calibration",
            "version=1",
            f"method={self.method.value}",
            f"alpha={self.alpha!r}",
            f"n_cal={self.n_cal}",
        ]
        if self.qhat is not None:
            lines.append(f"qhat={self.qhat!r}")
        if self.qhat_per_outcome is not None:
            for out in (Outcome.DOUT, Outcome.UOUT):
                lines.append(f"qhat_{out.value}={self.qhat_per_outcome[out]!r}")
                lines.append(f"n_cal_{out.value}={self.n_cal_per_outcome[out]}")
        if self.model_fingerprint is not None:
            lines.append(f"model_fingerprint={self.model_fingerprint}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ConformalCalibrator":
        kv: dict[str, str] = {}
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            kv[key] = value
        if kv.get("format") != "confpm-calibration":
            raise DataError(f"{path}: not a calibration artifact")
        method = ConformalMethod(kv["method"])
        qhat_per_outcome = None
        n_cal_per_outcome = None
        if method == ConformalMethod.OUTCOME_BALANCED:
            qhat_per_outcome = {out: float(kv[f"qhat_{out.value}"]) for out in Outcome}
            n_cal_per_outcome = {out: int(kv[f"n_cal_{out.value}"]) for out in Outcome}
        return cls(
            method=method,
            alpha=float(kv["alpha"]),
            n_cal=int(kv["n_cal"]),
            qhat=float(kv["qhat"]) if "qhat" in kv else None,
            qhat_per_outcome=qhat_per_outcome,
            n_cal_per_outcome=n_cal_per_outcome,
            model_fingerprint=kv.get("model_fingerprint"),
        )


def fit_calibrator(
    method: ConformalMethod,
    p_uout: np.ndarray,
    y: Sequence[Outcome],
    alpha: float,
    model_fingerprint: str | None = None,
) -> ConformalCalibrator:
    """Calibrate from raw undesired-outcome probabilities and true outcomes."""
    p_uout = np.asarray(p_uout, dtype=np.float64)
    y = list(y)
    if p_uout.size == 0:
        raise DataError("empty calibration set")
    if p_uout.size != len(y):
        raise ValueError("scores and outcomes differ in length")
    probs = [(float(p), 1.0 - float(p)) for p in p_uout]

    if method == ConformalMethod.OUTCOME_BALANCED:
        qhat_per_outcome: dict[Outcome, float] = {}
        n_per_outcome: dict[Outcome, int] = {}
        for out in Outcome:
            scores = [score_naive(pr, out) for pr, yi in zip(probs, y) if yi == out]
            if not scores:
                raise DataError(f"empty calibration stratum for outcome {out.value!r}")
            qhat_per_outcome[out] = conformal_quantile(scores, alpha)
            n_per_outcome[out] = len(scores)
        return ConformalCalibrator(
            method=method, alpha=alpha, n_cal=len(y),
            qhat_per_outcome=qhat_per_outcome, n_cal_per_outcome=n_per_outcome,
            model_fingerprint=model_fingerprint,
        )

    scorer = score_naive if method == ConformalMethod.NAIVE else score_adaptive
    scores = [scorer(pr, yi) for pr, yi in zip(probs, y)]
    return ConformalCalibrator(
        method=method, alpha=alpha, n_cal=len(y),
        qhat=conformal_quantile(scores, alpha),
        model_fingerprint=model_fingerprint,
    )


def calibrate(method: ConformalMethod, model, cal: Sequence[PrefixSample],
              alpha: float) -> ConformalCalibrator:
    """Fit a calibrator from any scorer exposing score_samples()."""
    if not cal:
        raise DataError("empty calibration set")
    fingerprint = model.fingerprint() if hasattr(model, "fingerprint") else None
    return fit_calibrator(
        method, model.score_samples(cal), [s.outcome for s in cal], alpha,
        model_fingerprint=fingerprint,
    )


def prediction_set(cal: ConformalCalibrator, probs: Probs) -> PredictionSet:
    return cal.prediction_set(probs)


def prediction_sets(cal: ConformalCalibrator, p_uout: np.ndarray) -> list[PredictionSet]:
    return [cal.prediction_set((float(p), 1.0 - float(p))) for p in np.asarray(p_uout)]


def empirical_coverage(
    cal: ConformalCalibrator, model, test: Sequence[PrefixSample]
) -> tuple[float, dict[Outcome, float | None]]:
    """Fraction of test samples whose true outcome lands in the prediction set,
    marginally and within each outcome stratum (None for empty strata)."""
    if not test:
        raise DataError("empty test set")
    p_uout = model.score_samples(test)
    sets = prediction_sets(cal, p_uout)
    hits = {out: 0 for out in Outcome}
    totals = {out: 0 for out in Outcome}
    for s, pset in zip(test, sets):
        totals[s.outcome] += 1
        if s.outcome in pset:
            hits[s.outcome] += 1
    marginal = sum(hits.values()) / len(test)
    per_outcome = {
        out: (hits[out] / totals[out] if totals[out] else None) for out in Outcome
    }
    return marginal, per_outcome


def set_histogram(sets: Sequence[PredictionSet]) -> dict[str, int]:
    counts = {"empty": 0, "dout": 0, "uout": 0, "both": 0}
    for pset in sets:
        counts[pset.label] += 1
    return counts
