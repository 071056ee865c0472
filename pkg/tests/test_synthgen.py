"""Generator determinism, learnability bounds, and exchangeability."""

import math
from datetime import timedelta

import numpy as np
import pytest

from confpm.conformal import ConformalMethod, calibrate, empirical_coverage
from confpm.encoding import as_matrix
from confpm.eventlog import Outcome, parse_csv, write_csv
from confpm.learners import GbdtParams, auc, train_gbdt
from confpm.synthgen import (
    SynthConfig,
    generate_log,
    read_ground_truth_csv,
    write_ground_truth_csv,
)

from conftest import run_pipeline


def case_features(log, cfg):
    return np.array([

        [tr.case_attributes[f"f{i}"] for i in range(cfg.n_features)]
        for tr in log.traces
    ])


def labels_of(truths):
    return np.array([tr.outcome == Outcome.UOUT for tr in truths], dtype=int)


class TestDeterminism:
    def test_same_seed_identical_logs(self):
        cfg = SynthConfig(n_cases=40, seed=13)
        log_a, truths_a = generate_log(cfg)
        log_b, truths_b = generate_log(cfg)
        assert truths_a == truths_b
        for ta, tb in zip(log_a.traces, log_b.traces):
            assert ta.case_attributes == tb.case_attributes
            assert [(e.activity, e.timestamp, e.resource) for e in ta.events] == \
                [(e.activity, e.timestamp, e.resource) for e in tb.events]

    def test_different_seeds_differ(self):
        log_a, _ = generate_log(SynthConfig(n_cases=40, seed=1))
        log_b, _ = generate_log(SynthConfig(n_cases=40, seed=2))
        assert [t.case_attributes for t in log_a.traces] != \
            [t.case_attributes for t in log_b.traces]


class TestLearnability:
    PARAMS = GbdtParams(n_trees=200, max_depth=4, min_leaf=5)

    def test_noise_free_log_is_separable(self):
        cfg = SynthConfig(n_cases=2000, n_features=6,
                          coefficients=(5.0, -5.0, 4.0, -4.0, 3.0, -3.0),
                          treatment_effect=0.0, label_noise=0.0,
                          p_treat=0.0, seed=3)
        log, truths = generate_log(cfg)
        X = case_features(log, cfg)
        y = labels_of(truths)
        half = len(y) // 2
        model = train_gbdt(X[:half], y[:half], self.PARAMS, seed=0)
        assert auc(model.predict_uout(X[half:]), y[half:]) >= 0.95

    def test_pure_noise_is_unlearnable(self):
        cfg = SynthConfig(n_cases=2000, treatment_effect=0.0, label_noise=0.5,
                          p_treat=0.0, seed=4)
        log, truths = generate_log(cfg)
        X = case_features(log, cfg)
        y = labels_of(truths)
        half = len(y) // 2
        model = train_gbdt(X[:half], y[:half], self.PARAMS, seed=0)
        assert auc(model.predict_uout(X[half:]), y[half:]) <= 0.55

    def test_constant_effect_in_ground_truth(self):
        cfg = SynthConfig(n_cases=500, treatment_effect=0.25, seed=5)
        _, truths = generate_log(cfg)
        for tr in truths:
            if tr.p_uout_base >= 0.25:  # effect not clipped
                assert tr.cate == pytest.approx(0.25)
            assert 0.0 <= tr.p_uout_actual <= 1.0
            assert tr.cate == pytest.approx(tr.p_uout_base - tr.p_uout_treated)


class TestExchangeability:
    def test_start_time_permutation_leaves_coverage_intact(self):
        cfg = SynthConfig(n_cases=900, label_noise=0.1, seed=8)
        alpha = 0.2
        coverages = []
        for permute_seed in (None, 123):
            log, truths = generate_log(cfg)
            if permute_seed is not None:
                rng = np.random.default_rng(permute_seed)
                starts = [tr.start_time for tr in log.traces]
                order = rng.permutation(len(starts))
                for tr, j in zip(log.traces, order):
                    shift = starts[j] - tr.start_time
                    tr.events = [
                        type(e)(e.case_id, e.activity, e.timestamp + shift,
                                e.resource, e.attributes)
                        for e in tr.events
                    ]
            bundle = _pipeline_from_log(log, cfg)
            cal = calibrate(ConformalMethod.NAIVE, bundle.model, bundle.cal, alpha)
            marginal, _ = empirical_coverage(cal, bundle.model, bundle.test)
            coverages.append(marginal)
        n_test = 180  # 20% of 900 cases, one prefix each
        band = 3 * math.sqrt(alpha * (1 - alpha) / n_test)
        for cov in coverages:
            assert cov >= 1 - alpha - band
        assert abs(coverages[0] - coverages[1]) <= 2 * band


def _pipeline_from_log(log, cfg):
    from conftest import PipelineBundle
    from confpm.encoding import (PrefixEncoder, build_prefix_records,
                                 encode_records, temporal_split)
    from confpm.eventlog import LogContext, TreatmentRule, derive_treatment, label_outcomes
    from confpm.learners import train_gbdt, train_tlearner
    from confpm.synthgen import OUTCOME_RULES, TREATMENT_ACTIVITY

    labels = label_outcomes(log, OUTCOME_RULES)
    treatments = derive_treatment(log, TreatmentRule(TREATMENT_ACTIVITY, 1))
    records = build_prefix_records(log, labels, treatments, 4, 4,
                                   context=LogContext(log))
    splits = temporal_split(records)
    encoder = PrefixEncoder().fit(splits.train, log.schema)
    train = encode_records(splits.train, encoder)
    cal = encode_records(splits.cal, encoder)
    test = encode_records(splits.test, encoder)
    X, T, Y = as_matrix(train)
    params = GbdtParams(n_trees=60, max_depth=3, min_leaf=10)
    model = train_gbdt(X, Y, params, seed=cfg.seed)
    return PipelineBundle(config=cfg, log=log, truths=[], train=train, cal=cal,
                          test=test, encoder=encoder, model=model, causal=None)


class TestValidationAndIo:
    def test_invalid_fields_rejected(self):
        with pytest.raises(ValueError):
            SynthConfig(n_cases=2)
        with pytest.raises(ValueError):
            SynthConfig(label_noise=1.5)
        with pytest.raises(ValueError):
            SynthConfig(len_min=10, len_max=4)
        with pytest.raises(ValueError):
            SynthConfig(coefficients=(1.0,), n_features=3).weights()

    def test_log_roundtrips_through_csv(self, tmp_path):
        cfg = SynthConfig(n_cases=25, noisy_segment_frac=0.3,
                          noisy_segment_noise=0.3, seed=6)
        log, truths = generate_log(cfg)
        write_csv(log, tmp_path / "log.csv")
        parsed = parse_csv(tmp_path / "log.csv", log.schema)
        assert len(parsed.traces) == len(log.traces)
        for a, b in zip(log.traces, parsed.traces):
            assert a.case_id == b.case_id
            assert [e.activity for e in a.events] == [e.activity for e in b.events]
            assert [e.timestamp for e in a.events] == [e.timestamp for e in b.events]
            assert a.case_attributes == pytest.approx(b.case_attributes)

    def test_ground_truth_roundtrip(self, tmp_path):
        _, truths = generate_log(SynthConfig(n_cases=30, seed=7))
        write_ground_truth_csv(truths, tmp_path / "truth.csv")
        assert read_ground_truth_csv(tmp_path / "truth.csv") == truths

    def test_treatment_activity_matches_flag(self):
        log, truths = generate_log(SynthConfig(n_cases=60, p_treat=0.5, seed=9))
        from confpm.eventlog import TreatmentRule, derive_treatment
        from confpm.synthgen import TREATMENT_ACTIVITY
        derived = derive_treatment(log, TreatmentRule(TREATMENT_ACTIVITY, 1))
        for tr in truths:
            assert derived[tr.case_id] == tr.treated

    def test_interarrival_times_strictly_increasing(self):
        log, _ = generate_log(SynthConfig(n_cases=50, seed=10))
        starts = [tr.start_time for tr in log.traces]
        assert all(a < b for a, b in zip(starts, starts[1:]))
