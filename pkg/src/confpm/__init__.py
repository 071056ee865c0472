"""Confidence-guaranteed outcome prediction and intervention allocation
for business process event logs.

The package covers the full pipeline: log ingestion and prefix encoding
(:mod:`confpm.eventlog`, :mod:`confpm.encoding`), outcome and
treatment-effect models (:mod:`confpm.learners`), conformal prediction sets
(:mod:`confpm.conformal`), the gain-based intervention policy
(:mod:`confpm.policy`), chronological replay under limited resources
(:mod:`confpm.replay`), and a seeded synthetic-log generator
(:mod:`confpm.synthgen`). The ``confpm`` command line wires the stages
together through disk artifacts.
"""

__version__ = "0.1.0"

from .conformal import (
    ConformalCalibrator,
    ConformalMethod,
    PredictionSet,
    calibrate,
    conformal_quantile,
    empirical_coverage,
    prediction_set,
    score_adaptive,
    score_naive,
    set_histogram,
)
from .encoding import (
    DatasetSplits,
    PrefixEncoder,
    PrefixSample,
    as_matrix,
    build_prefix_records,
    encode_records,
    temporal_split,
)
from .errors import ConfigError, DataError, MissingArtifactError
from .eventlog import (
    CleanRules,
    Event,
    EventLog,
    LogContext,
    Outcome,
    SchemaConfig,
    Trace,
    TreatmentRule,
    clean_log,
    derive_treatment,
    enrich,
    extract_prefixes,
    label_outcomes,
    parse_csv,
    prefix_length_cap,
)
from .learners import (
    BaggedEnsemble,
    CausalEstimator,
    GbdtModel,
    GbdtParams,
    ScoreTable,
    auc,
    estimate_cate,
    f_score,
    total_uncertainty,
    train_ensemble,
    train_gbdt,
    train_tlearner,
)
from .policy import (
    Candidate,
    CaseEstimates,
    CostParams,
    compute_gain,
    compute_loss,
    filter_candidates,
    rank,
)
from .replay import (
    GainLedger,
    PolicyKind,
    PolicyName,
    PoolMode,
    ReplayReport,
    ResourcePool,
    accuracy_per_resource,
    replay,
    sweep,
    total_gain,
    verify_ledger,
)
from .synthgen import SynthConfig, generate_log
