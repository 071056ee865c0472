"""Candidate filtering, gain/loss accounting, and deterministic ranking.

A case is an intervention candidate when all of the following hold: the
undesired-outcome probability exceeds tau, the prediction set is exactly
{uout}, the estimated effect is positive, and the resulting net gain is
positive. Gains are net of the intervention cost:

    gain = cate * c_uout - c_in
    loss = c_in + cate * c_uout      (charged when a treated case was fine)
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from typing import Sequence

from .conformal import ONLY_UOUT, PredictionSet


@dataclass(frozen=True)
class CostParams:
    c_uout: float = 20.0
    c_in: float = 1.0
    tau: float = 0.5
    loss_includes_effect: bool = True

    def __post_init__(self) -> None:
        if self.c_uout < 0 or self.c_in < 0:
            raise ValueError("costs must be non-negative")
        if not 0 < self.tau < 1:
            raise ValueError("tau must be in (0, 1)")


def compute_gain(cate: float, costs: CostParams) -> float:
    return cate * costs.c_uout - costs.c_in


def compute_loss(cate: float, costs: CostParams) -> float:
    """Cost of intervening on a case that did not need it."""
    if costs.loss_includes_effect:
        return costs.c_in + cate * costs.c_uout
    return costs.c_in


@dataclass(frozen=True)
class CaseEstimates:
    """Latest runtime estimates for one ongoing case.

    ``costs`` optionally overrides the global cost parameters, for settings
    where benefit and intervention cost vary per case.
    """

    case_id: str
    prefix_length: int
    p_uout: float
    cate: float
    pset: PredictionSet
    estimate_time: datetime | None = None
    costs: CostParams | None = None


@dataclass(frozen=True)
class Candidate:
    estimates: CaseEstimates
    gain: float


def filter_candidates(estimates: Sequence[CaseEstimates], costs: CostParams) -> list[Candidate]:
    """Keep cases passing the three-condition test with a positive net gain."""
    out: list[Candidate] = []
    for est in estimates:
        c = est.costs or costs
        if est.p_uout <= c.tau:
            continue
        if est.pset != ONLY_UOUT:
            continue
        if est.cate <= 0:
            continue
        gain = compute_gain(est.cate, c)
        if gain <= 0:
            continue
        out.append(Candidate(estimates=est, gain=gain))
    return out


def rank(candidates: Sequence[Candidate]) -> list[Candidate]:
    """Descending gain, ties by descending p_uout, then ascending case id."""
    return sorted(
        candidates,
        key=lambda c: (-c.gain, -c.estimates.p_uout, c.estimates.case_id),
    )
