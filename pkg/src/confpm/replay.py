"""Chronological replay of the test fold under a resource-limited policy.

Prefixes arrive in ascending prefix-end-time order (ties broken by case id,
then prefix length). Arrivals sharing a timestamp form one tick: estimates
for all of them are updated first, then each qualifying arrival (of a case
untreated when the tick began) triggers one allocation to the highest-ranked
qualifying case currently active. A snapshot of simultaneous arrivals with
one free resource therefore treats exactly the single best candidate. Cases
are treated at most once and leave the active pool after their final
extracted prefix passes.

Accounting: an allocation records its estimated gain; the realized value is
that gain when the case truly ended undesirably, and minus the loss formula
otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .conformal import (
    ConformalCalibrator,
    ConformalMethod,
    PredictionSet,
    prediction_sets,
    set_histogram,
)
from .encoding import PrefixSample
from .errors import ConfigError, DataError
from .eventlog import Outcome
from .learners import auc as compute_auc
from .learners import f_score as compute_f_score
from .policy import (
    Candidate,
    CaseEstimates,
    CostParams,
    compute_gain,
    compute_loss,
    rank,
)


class PoolMode(str, Enum):
    FIXED_BUDGET = "fixed_budget"
    RENEWABLE = "renewable"


class ResourcePool:
    """Limited intervention capacity; fixed budgets never free a resource,
    renewable pools free each resource block_duration after its allocation."""

    def __init__(self, capacity: int, mode: PoolMode = PoolMode.FIXED_BUDGET,
                 block_duration: timedelta | None = None):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        if mode == PoolMode.RENEWABLE and block_duration is None:
            raise ConfigError("renewable pools need a block duration")
        self.capacity = capacity
        self.mode = mode
        self.block_duration = block_duration
        self._used = 0
        self._busy_until: dict[int, datetime] = {}

    def in_flight(self, t: datetime) -> int:
        if self.mode == PoolMode.FIXED_BUDGET:
            return self._used
        return sum(1 for until in self._busy_until.values() if until > t)

    def available(self, t: datetime) -> int:
        return self.capacity - self.in_flight(t)

    def allocate(self, t: datetime) -> None:
        if self.available(t) <= 0:
            raise RuntimeError("allocation attempted with no free resource")
        if self.mode == PoolMode.FIXED_BUDGET:
            self._used += 1
            return
        for i in range(self.capacity):  # lowest free index, deterministic
            if self._busy_until.get(i) is None or self._busy_until[i] <= t:
                self._busy_until[i] = t + self.block_duration
                return
        raise AssertionError("unreachable: available() said a resource was free")


class PolicyName(str, Enum):
    PURE_PREDICTIVE = "pure_predictive"
    PREDICTIVE_UNCERTAINTY = "predictive_uncertainty"
    PREDICTIVE_CATE = "predictive_cate"
    CONFORMAL = "conformal"
    CONFORMAL_CATE = "conformal_cate"


@dataclass(frozen=True)
class PolicyKind:
    name: PolicyName
    method: ConformalMethod | None = None

    def __post_init__(self) -> None:
        conformal = self.name in (PolicyName.CONFORMAL, PolicyName.CONFORMAL_CATE)
        if conformal and self.method is None:
            raise ConfigError(f"policy {self.name.value} needs a conformal method")
        if not conformal and self.method is not None:
            raise ConfigError(f"policy {self.name.value} does not take a conformal method")

    @property
    def needs_calibrator(self) -> bool:
        return self.method is not None

    @property
    def needs_uncertainty(self) -> bool:
        return self.name == PolicyName.PREDICTIVE_UNCERTAINTY

    @property
    def label(self) -> str:
        if self.method is None:
            return self.name.value
        return f"{self.name.value}[{self.method.value}]"


@dataclass(frozen=True)
class Arrival:
    """One prefix entering the stream, with its estimates and ground truth."""

    case_id: str
    prefix_length: int
    time: datetime
    p_uout: float
    cate: float
    pset: PredictionSet | None
    outcome: Outcome
    uncertainty: float | None = None
    costs: CostParams | None = None

    def estimates(self) -> CaseEstimates:
        return CaseEstimates(
            case_id=self.case_id, prefix_length=self.prefix_length,
            p_uout=self.p_uout, cate=self.cate, pset=self.pset,
            estimate_time=self.time, costs=self.costs,
        )


@dataclass
class LedgerEntry:
    case_id: str
    time: datetime
    prefix_length: int
    p_uout: float
    cate: float
    pset_label: str
    estimated_gain: float
    actual_outcome: Outcome
    realized_value: float


@dataclass
class GainLedger:
    entries: list[LedgerEntry] = field(default_factory=list)

    @property
    def n_allocated(self) -> int:
        return len(self.entries)

    @property
    def n_correct(self) -> int:
        return sum(1 for e in self.entries if e.actual_outcome == Outcome.UOUT)


def total_gain(ledger: GainLedger) -> float:
    return float(sum(e.realized_value for e in ledger.entries))


def accuracy_per_resource(ledger: GainLedger) -> float:
    if ledger.n_allocated == 0:
        return 0.0
    return ledger.n_correct / ledger.n_allocated


def verify_ledger(ledger: GainLedger, default_costs: CostParams,
                  costs_by_case: dict[str, CostParams] | None = None) -> None:
    """Independent recomputation of every realized value; raises on mismatch."""
    for e in ledger.entries:
        costs = (costs_by_case or {}).get(e.case_id, default_costs)
        if e.actual_outcome == Outcome.UOUT:
            expected = compute_gain(e.cate, costs)
        else:
            expected = -compute_loss(e.cate, costs)
        if expected != e.realized_value:
            raise AssertionError(
                f"ledger inconsistency for case {e.case_id}: "
                f"{e.realized_value} != {expected}"
            )


@dataclass
class ReplayReport:
    policy: str
    method: str | None
    alpha: float | None
    capacity: int
    pool_mode: str
    block_secs: float | None
    seed: int
    n_test_samples: int
    n_test_cases: int
    n_allocated: int
    n_correct: int
    total_gain: float
    accuracy_per_resource: float
    auc: float | None
    f_score: float
    coverage_marginal: float | None
    coverage_per_outcome: dict[str, float | None] | None
    set_counts: dict[str, int] | None
    ledger: GainLedger
    uout_argmax: bool = False

    REPORT_COLUMNS = [
        "policy", "method", "alpha", "capacity", "pool_mode", "block_secs",
        "seed", "n_test_samples", "n_test_cases", "n_allocated", "n_correct",
        "total_gain", "accuracy_per_resource", "auc", "f_score",
        "coverage_marginal", "coverage_dout", "coverage_uout",
        "sets_empty", "sets_dout", "sets_uout", "sets_both", "uout_argmax",
    ]

    def row(self) -> list:
        cov = self.coverage_per_outcome or {}
        sets = self.set_counts or {}
        fmt = lambda v: "" if v is None else (repr(v) if isinstance(v, float) else str(v))
        return [fmt(v) for v in [
            self.policy, self.method, self.alpha, self.capacity, self.pool_mode,
            self.block_secs, self.seed, self.n_test_samples, self.n_test_cases,
            self.n_allocated, self.n_correct, self.total_gain,
            self.accuracy_per_resource, self.auc, self.f_score,
            self.coverage_marginal, cov.get("dout"), cov.get("uout"),
            sets.get("empty"), sets.get("dout"), sets.get("uout"), sets.get("both"),
            int(self.uout_argmax),
        ]]


def _qualifies(policy: PolicyKind, est: CaseEstimates, uncertainty: float | None,
               costs: CostParams, u_max: float) -> bool:
    c = est.costs or costs
    if not est.p_uout > c.tau:
        return False
    name = policy.name
    if name == PolicyName.PURE_PREDICTIVE:
        return True
    if name == PolicyName.PREDICTIVE_UNCERTAINTY:
        return uncertainty < u_max
    if name == PolicyName.PREDICTIVE_CATE:
        return est.cate > 0
    only_uout = est.pset is not None and est.pset.label == "uout"
    if name == PolicyName.CONFORMAL:
        return only_uout
    # conformal_cate: the full three-condition filter plus positive gain
    return only_uout and est.cate > 0 and compute_gain(est.cate, c) > 0


def build_arrivals(
    test: Sequence[PrefixSample],
    model,
    causal=None,
    calibrator: ConformalCalibrator | None = None,
    ensemble=None,
    costs_by_case: dict[str, CostParams] | None = None,
) -> list[Arrival]:
    """Score every test prefix once up front and wrap it as a stream arrival."""
    if not test:
        return []
    for s in test:
        if s.prefix_end_time is None:
            raise DataError(f"test sample of case {s.case_id!r} lacks a prefix end time")
    p_uout = np.asarray(model.score_samples(test), dtype=np.float64)
    cate = (np.asarray(causal.cate_samples(test), dtype=np.float64)
            if causal is not None else np.zeros(len(test)))
    psets = prediction_sets(calibrator, p_uout) if calibrator is not None else [None] * len(test)
    unc = (np.asarray(ensemble.uncertainty_samples(test), dtype=np.float64)
           if ensemble is not None else [None] * len(test))
    return [
        Arrival(
            case_id=s.case_id, prefix_length=s.prefix_length, time=s.prefix_end_time,
            p_uout=float(p_uout[i]), cate=float(cate[i]), pset=psets[i],
            outcome=s.outcome,
            uncertainty=None if unc[i] is None else float(unc[i]),
            costs=(costs_by_case or {}).get(s.case_id),
        )
        for i, s in enumerate(test)
    ]


def replay_arrivals(
    arrivals: Sequence[Arrival],
    policy: PolicyKind,
    costs: CostParams,
    pool: ResourcePool,
    seed: int = 0,
    u_max: float = 0.75,
    calibrator: ConformalCalibrator | None = None,
) -> ReplayReport:
    """Run the allocation simulation over a pre-scored arrival stream."""
    if policy.needs_calibrator and any(a.pset is None for a in arrivals):
        raise ConfigError(f"policy {policy.label} needs prediction sets on every arrival")
    if policy.needs_uncertainty and any(a.uncertainty is None for a in arrivals):
        raise ConfigError(f"policy {policy.label} needs uncertainty estimates")
    outcome_of: dict[str, Outcome] = {}
    for a in arrivals:
        if outcome_of.setdefault(a.case_id, a.outcome) != a.outcome:
            raise DataError(f"conflicting ground truth for case {a.case_id!r}")

    order = sorted(range(len(arrivals)),
                   key=lambda i: (arrivals[i].time, arrivals[i].case_id,
                                  arrivals[i].prefix_length))
    stream = [arrivals[i] for i in order]
    last_index = {a.case_id: i for i, a in enumerate(stream)}

    active: dict[str, CaseEstimates] = {}
    uncertainty_of: dict[str, float | None] = {}
    treated: set[str] = set()
    ledger = GainLedger()

    i = 0
    while i < len(stream):
        j = i
        t = stream[i].time
        while j < len(stream) and stream[j].time == t:
            j += 1
        tick = stream[i:j]

        for a in tick:
            active[a.case_id] = a.estimates()
            uncertainty_of[a.case_id] = a.uncertainty

        # one allocation opportunity per qualifying arrival of a case that
        # was untreated when the tick began
        triggers = sum(
            1 for a in tick
            if a.case_id not in treated
            and _qualifies(policy, active[a.case_id], uncertainty_of[a.case_id],
                           costs, u_max)
        )
        for _ in range(triggers):
            if pool.available(t) <= 0:
                break
            candidates = [
                Candidate(est, compute_gain(est.cate, est.costs or costs))
                for case_id, est in active.items()
                if case_id not in treated
                and _qualifies(policy, est, uncertainty_of[case_id], costs, u_max)
            ]
            if not candidates:
                break
            best = rank(candidates)[0]
            est = best.estimates
            pool.allocate(t)
            treated.add(est.case_id)
            actual = outcome_of[est.case_id]
            c = est.costs or costs
            realized = best.gain if actual == Outcome.UOUT else -compute_loss(est.cate, c)
            ledger.entries.append(LedgerEntry(
                case_id=est.case_id, time=t, prefix_length=est.prefix_length,
                p_uout=est.p_uout, cate=est.cate,
                pset_label=est.pset.label if est.pset is not None else "",
                estimated_gain=best.gain, actual_outcome=actual,
                realized_value=realized,
            ))

        for k, a in enumerate(tick, start=i):
            if last_index[a.case_id] == k:
                active.pop(a.case_id, None)
        i = j

    return _build_report(stream, ledger, policy, costs, pool, seed, calibrator)


def _build_report(stream, ledger, policy, costs, pool, seed, calibrator) -> ReplayReport:
    y = np.array([a.outcome == Outcome.UOUT for a in stream], dtype=bool)
    p = np.array([a.p_uout for a in stream])
    taus = np.array([(a.costs or costs).tau for a in stream])
    try:
        auc_value = compute_auc(p, y) if len(stream) else None
    except DataError:
        auc_value = None
    f1 = compute_f_score(p > taus, y) if len(stream) else 0.0

    coverage_marginal = None
    coverage_per_outcome = None
    set_counts = None
    psets = [a.pset for a in stream]
    if stream and all(ps is not None for ps in psets):
        hits = {out: 0 for out in Outcome}
        totals = {out: 0 for out in Outcome}
        for a in stream:
            totals[a.outcome] += 1
            if a.outcome in a.pset:
                hits[a.outcome] += 1
        coverage_marginal = sum(hits.values()) / len(stream)
        coverage_per_outcome = {
            out.value: (hits[out] / totals[out] if totals[out] else None)
            for out in Outcome
        }
        set_counts = set_histogram(psets)

    return ReplayReport(
        policy=policy.label,
        method=policy.method.value if policy.method else None,
        alpha=calibrator.alpha if calibrator is not None else None,
        capacity=pool.capacity,
        pool_mode=pool.mode.value,
        block_secs=(pool.block_duration.total_seconds()
                    if pool.block_duration is not None else None),
        seed=seed,
        n_test_samples=len(stream),
        n_test_cases=len({a.case_id for a in stream}),
        n_allocated=ledger.n_allocated,
        n_correct=ledger.n_correct,
        total_gain=total_gain(ledger),
        accuracy_per_resource=accuracy_per_resource(ledger),
        auc=auc_value,
        f_score=f1,
        coverage_marginal=coverage_marginal,
        coverage_per_outcome=coverage_per_outcome,
        set_counts=set_counts,
        ledger=ledger,
    )


def replay(
    test: Sequence[PrefixSample],
    model,
    causal,
    calibrator: ConformalCalibrator | None,
    policy: PolicyKind,
    costs: CostParams,
    pool: ResourcePool,
    seed: int = 0,
    u_max: float = 0.75,
    ensemble=None,
) -> ReplayReport:
    """Score the test fold, then replay it chronologically under the policy."""
    if policy.needs_calibrator:
        if calibrator is None:
            raise ConfigError(f"policy {policy.label} needs a calibrator")
        if calibrator.method != policy.method:
            raise ConfigError(
                f"calibrator method {calibrator.method.value} does not match "
                f"policy {policy.label}"
            )
    if policy.needs_uncertainty and ensemble is None:
        raise ConfigError(f"policy {policy.label} needs a bagged ensemble")
    arrivals = build_arrivals(
        test, model, causal,
        calibrator=calibrator if policy.needs_calibrator else None,
        ensemble=ensemble if policy.needs_uncertainty else None,
    )
    return replay_arrivals(arrivals, policy, costs, pool, seed=seed,
                           u_max=u_max, calibrator=calibrator)


def sweep(
    model,
    causal,
    cal: Sequence[PrefixSample],
    test: Sequence[PrefixSample],
    policies: Sequence[PolicyKind],
    alphas: Sequence[float],
    capacities: Sequence[int],
    costs: CostParams,
    pool_mode: PoolMode = PoolMode.FIXED_BUDGET,
    block_duration: timedelta | None = None,
    seed: int = 0,
    u_max: float = 0.75,
    ensemble=None,
    n_jobs: int = 1,
) -> list[ReplayReport]:
    """Replay the Cartesian product of (policy, alpha, capacity).

    Calibration runs once per distinct (method, alpha); policies without a
    conformal method ignore the alpha grid. Per conformal method, the report
    rows whose alpha maximizes the count of {uout}-only prediction sets are
    flagged via uout_argmax. Output order is deterministic regardless of
    n_jobs.
    """
    from .conformal import calibrate  # local import avoids a cycle at module load

    distinct_alphas = list(dict.fromkeys(alphas))
    calibrators: dict[tuple[ConformalMethod, float], ConformalCalibrator] = {}
    for policy in policies:
        if policy.method is None:
            continue
        for alpha in distinct_alphas:
            key = (policy.method, alpha)
            if key not in calibrators:
                calibrators[key] = calibrate(policy.method, model, cal, alpha)

    configs: list[tuple[PolicyKind, float | None, int]] = []
    for policy in policies:
        alpha_grid = distinct_alphas if policy.method is not None else [None]
        for alpha in alpha_grid:
            for capacity in capacities:
                configs.append((policy, alpha, capacity))

    def run(config: tuple[PolicyKind, float | None, int]) -> ReplayReport:
        policy, alpha, capacity = config
        calibrator = calibrators.get((policy.method, alpha)) if alpha is not None else None
        pool = ResourcePool(capacity, pool_mode, block_duration)
        return replay(test, model, causal, calibrator, policy, costs, pool,
                      seed=seed, u_max=u_max, ensemble=ensemble)

    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_jobs) as pool_exec:
            reports = list(pool_exec.map(run, configs))
    else:
        reports = [run(c) for c in configs]

    for method in {p.method for p in policies if p.method is not None}:
        rows = [r for r in reports if r.method == method.value and r.set_counts]
        if not rows:
            continue
        best = max(r.set_counts["uout"] for r in rows)
        best_alphas = {r.alpha for r in rows if r.set_counts["uout"] == best}
        for r in rows:
            if r.alpha in best_alphas:
                r.uout_argmax = True
    return reports


def write_reports_csv(reports: Sequence[ReplayReport], path: str | Path,
                      config_json: str = "", fingerprints_json: str = "") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ReplayReport.REPORT_COLUMNS + ["config", "fingerprints"])
        for r in reports:
            writer.writerow(r.row() + [config_json, fingerprints_json])


def write_ledger_csv(ledger: GainLedger, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_id", "time", "prefix_len", "p_uout", "cate",
                         "pset", "estimated_gain", "actual_outcome", "realized_value"])
        for e in ledger.entries:
            writer.writerow([
                e.case_id, e.time.isoformat(timespec="milliseconds"), e.prefix_length,
                repr(e.p_uout), repr(e.cate), e.pset_label, repr(e.estimated_gain),
                e.actual_outcome.value, repr(e.realized_value),
            ])
