"""Command-line pipeline: synth, prepare, train, calibrate, replay, sweep.

Configuration is a flat key=value file (# comments allowed); command-line
flags override file values. Every key has a documented default except the
input log path. Stages communicate through disk artifacts in the output
directory, so external predictors can be spliced in between stages via the
score-import and estimates-import CSVs. Every report embeds the resolved
configuration and the fingerprints of the artifacts it consumed.

Exit codes: 0 success, 2 usage/config error, 3 missing upstream artifact,
4 data error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from datetime import datetime, timedelta
from pathlib import Path

from . import encoding, eventlog, synthgen
from .conformal import ConformalCalibrator, ConformalMethod, PredictionSet, calibrate
from .encoding import PrefixEncoder, as_matrix, build_prefix_records, encode_records
from .errors import ConfigError, DataError, MissingArtifactError
from .eventlog import CleanRules, LogContext, Outcome, SchemaConfig, TreatmentRule
from .learners import (
    BaggedEnsemble,
    CausalEstimator,
    GbdtModel,
    GbdtParams,
    ScoreTable,
    train_ensemble,
    train_gbdt,
    train_tlearner,
)
from .policy import CostParams
from .replay import (
    Arrival,
    PolicyKind,
    PolicyName,
    PoolMode,
    ResourcePool,
    replay,
    replay_arrivals,
    sweep,
    write_ledger_csv,
    write_reports_csv,
)

DEFAULTS: dict[str, str] = {
    "log": "",
    "out_dir": "out",
    "seed": "7",
    "jobs": "1",
    "scores_csv": "",
    "estimates_csv": "",
    "schema.case_id": "case_id",
    "schema.activity": "activity",
    "schema.timestamp": "timestamp",
    "schema.timestamp_format": "%Y-%m-%d %H:%M:%S.%f",
    "schema.resource": "resource",
    "schema.numeric_attrs": "",
    "schema.categorical_attrs": "",
    "schema.case_attrs": "",
    "clean.terminal_activities": "",
    "clean.ts_min": "",
    "clean.ts_max": "",
    "treatment.activity": "intervene",
    "treatment.min_count": "1",
    "prefix.min": "1",
    "prefix.max": "",
    "prefix.percentile": "90",
    "split.train": "0.6",
    "split.cal": "0.2",
    "split.test": "0.2",
    "model.n_trees": "100",
    "model.max_depth": "4",
    "model.min_leaf": "20",
    "model.learning_rate": "0.1",
    "ensemble.size": "0",
    "conformal.method": "naive",
    "conformal.alpha": "0.2",
    "costs.c_uout": "20",
    "costs.c_in": "1",
    "costs.tau": "0.5",
    "costs.u_max": "0.75",
    "costs.loss_includes_effect": "true",
    "replay.policy": "conformal_cate",
    "replay.capacity": "5",
    "replay.pool_mode": "fixed_budget",
    "replay.block_secs": "3600",
    "sweep.policies": "conformal_cate",
    "sweep.methods": "naive,outcome_balanced,adaptive",
    "sweep.alphas": "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
    "sweep.capacities": "1,5,10",
    "synth.n_cases": "200",
    "synth.len_min": "5",
    "synth.len_max": "9",
    "synth.n_features": "6",
    "synth.intercept": "0.0",
    "synth.treatment_effect": "0.2",
    "synth.p_treat": "0.35",
    "synth.label_noise": "0.0",
    "synth.noisy_segment_frac": "0.0",
    "synth.noisy_segment_noise": "0.0",
    "synth.negative_effect_frac": "0.0",
    "synth.mean_interarrival_s": "900",
    "synth.mean_gap_s": "600",
    "synth.n_resources": "5",
}

DEFAULT_OUTCOME_RULES = {
    f"outcome.{synthgen.END_DESIRED}": "dout",
    f"outcome.{synthgen.END_UNDESIRED}": "uout",
}


def load_config_file(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


class RunConfig:
    """Resolved flat configuration with typed accessors."""

    def __init__(self, values: dict[str, str]):
        self.values = values

    @classmethod
    def resolve(cls, file_values: dict[str, str], overrides: dict[str, str]) -> "RunConfig":
        merged = dict(file_values)
        merged.update(overrides)  # flags win
        for key in merged:
            if key not in DEFAULTS and not key.startswith("outcome."):
                raise ConfigError(f"unknown configuration key {key!r}")
        values = dict(DEFAULTS)
        # a user-supplied outcome map replaces the default one wholesale
        if not any(k.startswith("outcome.") for k in merged):
            values.update(DEFAULT_OUTCOME_RULES)
        values.update(merged)
        return cls(values)

    def __getitem__(self, key: str) -> str:
        return self.values[key]

    def get_int(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {self.values[key]!r}") from None

    def get_float(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {self.values[key]!r}") from None

    def get_bool(self, key: str) -> bool:
        value = self.values[key].lower()
        if value in ("true", "1", "yes"):
            return True
        if value in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key} must be true/false, got {self.values[key]!r}")

    def get_list(self, key: str) -> list[str]:
        raw = self.values[key]
        return [item.strip() for item in raw.split(",") if item.strip()]

    def echo_json(self) -> str:
        return json.dumps(self.values, sort_keys=True)

    # assembled sub-configurations ------------------------------------

    def schema(self) -> SchemaConfig:
        resource = self.values["schema.resource"] or None
        return SchemaConfig(
            case_id=self.values["schema.case_id"],
            activity=self.values["schema.activity"],
            timestamp=self.values["schema.timestamp"],
            timestamp_format=self.values["schema.timestamp_format"],
            resource=resource,
            numeric_attrs=tuple(self.get_list("schema.numeric_attrs")),
            categorical_attrs=tuple(self.get_list("schema.categorical_attrs")),
            case_attrs=tuple(self.get_list("schema.case_attrs")),
        )

    def clean_rules(self) -> CleanRules:
        terminals = self.get_list("clean.terminal_activities")
        return CleanRules(
            terminal_activities=frozenset(terminals) if terminals else None,
            ts_min=self._get_ts("clean.ts_min"),
            ts_max=self._get_ts("clean.ts_max"),
        )

    def _get_ts(self, key: str) -> datetime | None:
        raw = self.values[key]
        if not raw:
            return None
        try:
            return datetime.fromisoformat(raw)
        except ValueError:
            raise ConfigError(f"{key} must be an ISO timestamp, got {raw!r}") from None

    def outcome_rules(self) -> dict[str, Outcome]:
        rules = {}
        for key, value in self.values.items():
            if key.startswith("outcome."):
                try:
                    rules[key[len("outcome."):]] = Outcome(value)
                except ValueError:
                    raise ConfigError(f"{key} must be dout or uout, got {value!r}") from None
        if not rules:
            raise ConfigError("no outcome.<activity>=<label> rules configured")
        return rules

    def treatment_rule(self) -> TreatmentRule:
        return TreatmentRule(self.values["treatment.activity"],
                             self.get_int("treatment.min_count"))

    def gbdt_params(self) -> GbdtParams:
        return GbdtParams(
            n_trees=self.get_int("model.n_trees"),
            max_depth=self.get_int("model.max_depth"),
            min_leaf=self.get_int("model.min_leaf"),
            learning_rate=self.get_float("model.learning_rate"),
        )

    def costs(self) -> CostParams:
        return CostParams(
            c_uout=self.get_float("costs.c_uout"),
            c_in=self.get_float("costs.c_in"),
            tau=self.get_float("costs.tau"),
            loss_includes_effect=self.get_bool("costs.loss_includes_effect"),
        )

    def synth_config(self) -> synthgen.SynthConfig:
        return synthgen.SynthConfig(
            n_cases=self.get_int("synth.n_cases"),
            len_min=self.get_int("synth.len_min"),
            len_max=self.get_int("synth.len_max"),
            n_features=self.get_int("synth.n_features"),
            intercept=self.get_float("synth.intercept"),
            treatment_effect=self.get_float("synth.treatment_effect"),
            p_treat=self.get_float("synth.p_treat"),
            label_noise=self.get_float("synth.label_noise"),
            noisy_segment_frac=self.get_float("synth.noisy_segment_frac"),
            noisy_segment_noise=self.get_float("synth.noisy_segment_noise"),
            negative_effect_frac=self.get_float("synth.negative_effect_frac"),
            mean_interarrival_s=self.get_float("synth.mean_interarrival_s"),
            mean_gap_s=self.get_float("synth.mean_gap_s"),
            n_resources=self.get_int("synth.n_resources"),
            seed=self.get_int("seed"),
        )

    def policy(self, name: str | None = None, method: str | None = None) -> PolicyKind:
        name = name or self.values["replay.policy"]
        try:
            policy_name = PolicyName(name)
        except ValueError:
            raise ConfigError(f"unknown policy {name!r}") from None
        if policy_name in (PolicyName.CONFORMAL, PolicyName.CONFORMAL_CATE):
            method_name = method or self.values["conformal.method"]
            try:
                return PolicyKind(policy_name, ConformalMethod(method_name))
            except ValueError:
                raise ConfigError(f"unknown conformal method {method_name!r}") from None
        return PolicyKind(policy_name)

    def out_dir(self) -> Path:
        path = Path(self.values["out_dir"])
        path.mkdir(parents=True, exist_ok=True)
        return path


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing {what}: {path} (run the upstream stage first)")
    return path


def _file_fingerprint(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _fingerprints(out: Path, names: list[str]) -> str:
    fps = {}
    for name in names:
        path = out / name
        if path.exists():
            fps[name] = _file_fingerprint(path)
    return json.dumps(fps, sort_keys=True)


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: RunConfig) -> int:
    out = cfg.out_dir()
    log, truths = synthgen.generate_log(cfg.synth_config())
    eventlog.write_csv(log, out / "log.csv")
    synthgen.write_ground_truth_csv(truths, out / "truth.csv")
    n_events = sum(len(tr) for tr in log.traces)
    print(f"synth: wrote {len(log.traces)} cases / {n_events} events to {out / 'log.csv'}")
    print(f"synth: ground truth sidecar at {out / 'truth.csv'}")
    return 0


def cmd_prepare(cfg: RunConfig) -> int:
    out = cfg.out_dir()
    log_path = cfg["log"]
    if not log_path:
        raise ConfigError("no input log configured (set log=... or pass --log)")
    if not Path(log_path).exists():
        raise ConfigError(f"input log not found: {log_path}")

    log = eventlog.parse_csv(log_path, cfg.schema())
    log, stats = eventlog.clean_log(log, cfg.clean_rules())
    if not log.traces:
        raise DataError("cleaning removed every trace")
    labels = eventlog.label_outcomes(log, cfg.outcome_rules())
    treatments = eventlog.derive_treatment(log, cfg.treatment_rule())

    min_len = cfg.get_int("prefix.min")
    if cfg["prefix.max"]:
        max_len = cfg.get_int("prefix.max")
    else:
        max_len = eventlog.prefix_length_cap(log, cfg.get_float("prefix.percentile"))
    records = build_prefix_records(log, labels, treatments, min_len, max_len,
                                   context=LogContext(log))
    ratios = (cfg.get_float("split.train"), cfg.get_float("split.cal"),
              cfg.get_float("split.test"))
    splits = encoding.temporal_split(records, ratios)

    encoder = PrefixEncoder().fit(splits.train, log.schema)
    for fold, name in ((splits.train, "train"), (splits.cal, "cal"), (splits.test, "test")):
        samples = encode_records(fold, encoder)
        encoding.write_samples_csv(samples, out / f"{name}.csv", out / f"{name}_times.csv")
    encoder.save(out / "encoder.json")

    n_cases = {name: len({r.case_id for r in fold})
               for fold, name in ((splits.train, "train"), (splits.cal, "cal"),
                                  (splits.test, "test"))}
    report = {
        "config": json.loads(cfg.echo_json()),
        "dropped_events": stats.dropped_events,
        "dropped_empty_traces": stats.dropped_empty_traces,
        "dropped_incomplete_traces": stats.dropped_incomplete_traces,
        "prefix_max_len": max_len,
        "n_prefixes": {"train": splits.n_train, "cal": splits.n_cal, "test": splits.n_test},
        "n_cases": n_cases,
        "feature_dimension": encoder.dimension,
    }
    (out / "prepare_report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    print(f"prepare: dropped {stats.dropped_events} events, "
          f"{stats.dropped_incomplete_traces} incomplete traces, "
          f"{stats.dropped_empty_traces} emptied traces")
    print(f"prepare: prefixes train/cal/test = {splits.n_train}/{splits.n_cal}/{splits.n_test} "
          f"(cases {n_cases['train']}/{n_cases['cal']}/{n_cases['test']}), "
          f"d={encoder.dimension}, max prefix length {max_len}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    out = cfg.out_dir()
    train_samples = encoding.read_samples_csv(_require(out / "train.csv", "training data"))
    X, T, Y = as_matrix(train_samples)
    params = cfg.gbdt_params()
    seed = cfg.get_int("seed")

    model = train_gbdt(X, Y, params, seed)
    model.save(out / "model.json")
    causal = train_tlearner(X, T, Y, params, seed)
    causal.save(out / "causal.json")
    artifacts = ["model.json", "causal.json"]

    ensemble_size = cfg.get_int("ensemble.size")
    if ensemble_size >= 2:
        ensemble = train_ensemble(X, Y, ensemble_size, params, seed)
        ensemble.save(out / "ensemble.json")
        artifacts.append("ensemble.json")

    report = {
        "config": json.loads(cfg.echo_json()),
        "fingerprints": json.loads(_fingerprints(out, artifacts)),
        "n_train": len(train_samples),
    }
    (out / "train_report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    print(f"train: fitted outcome model and effect model on {len(train_samples)} prefixes"
          + (f", ensemble of {ensemble_size}" if ensemble_size >= 2 else ""))
    return 0


def _load_scorer(cfg: RunConfig, out: Path):
    if cfg["scores_csv"]:
        return ScoreTable.from_csv(_require(Path(cfg["scores_csv"]), "score table"))
    return GbdtModel.load(_require(out / "model.json", "outcome model"))


def cmd_calibrate(cfg: RunConfig) -> int:
    out = cfg.out_dir()
    cal_samples = encoding.read_samples_csv(_require(out / "cal.csv", "calibration data"))
    scorer = _load_scorer(cfg, out)
    try:
        method = ConformalMethod(cfg["conformal.method"])
    except ValueError:
        raise ConfigError(f"unknown conformal method {cfg['conformal.method']!r}") from None
    alpha = cfg.get_float("conformal.alpha")
    if not 0 < alpha < 1:
        raise ConfigError(f"conformal.alpha must be in (0, 1), got {alpha}")
    calibrator = calibrate(method, scorer, cal_samples, alpha)
    calibrator.save(out / "calibration.txt")
    qhats = (calibrator.qhat if calibrator.qhat is not None
             else {o.value: q for o, q in calibrator.qhat_per_outcome.items()})
    print(f"calibrate: method={method.value} alpha={alpha} n_cal={calibrator.n_cal} "
          f"qhat={qhats}")
    return 0


def _read_estimates_csv(path: Path, costs: CostParams) -> list[Arrival]:
    arrivals = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"case_id", "prefix_len", "time", "p_uout", "cate", "pset", "outcome"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise DataError(f"{path}: estimates need columns {sorted(required)}")
        for row in reader:
            case_costs = None
            if row.get("c_uout") or row.get("c_in"):
                case_costs = CostParams(
                    c_uout=float(row["c_uout"]) if row.get("c_uout") else costs.c_uout,
                    c_in=float(row["c_in"]) if row.get("c_in") else costs.c_in,
                    tau=costs.tau,
                    loss_includes_effect=costs.loss_includes_effect,
                )
            arrivals.append(Arrival(
                case_id=row["case_id"],
                prefix_length=int(row["prefix_len"]),
                time=datetime.fromisoformat(row["time"]),
                p_uout=float(row["p_uout"]),
                cate=float(row["cate"]),
                pset=PredictionSet.from_label(row["pset"]),
                outcome=Outcome(row["outcome"]),
                costs=case_costs,
            ))
    return arrivals


def cmd_replay(cfg: RunConfig) -> int:
    out = cfg.out_dir()
    costs = cfg.costs()
    policy = cfg.policy()
    seed = cfg.get_int("seed")
    mode = PoolMode(cfg["replay.pool_mode"])
    block = (timedelta(seconds=cfg.get_float("replay.block_secs"))
             if mode == PoolMode.RENEWABLE else None)
    pool = ResourcePool(cfg.get_int("replay.capacity"), mode, block)

    fingerprint_names = []
    if cfg["estimates_csv"]:
        arrivals = _read_estimates_csv(
            _require(Path(cfg["estimates_csv"]), "estimates table"), costs)
        report = replay_arrivals(arrivals, policy, costs, pool, seed=seed,
                                 u_max=cfg.get_float("costs.u_max"))
    else:
        test_samples = encoding.read_samples_csv(
            _require(out / "test.csv", "test data"),
            _require(out / "test_times.csv", "test time sidecar"),
        )
        scorer = _load_scorer(cfg, out)
        causal = CausalEstimator.load(_require(out / "causal.json", "effect model"))
        calibrator = None
        if policy.needs_calibrator:
            calibrator = ConformalCalibrator.load(
                _require(out / "calibration.txt", "calibration artifact"))
        ensemble = None
        if policy.needs_uncertainty:
            ensemble = BaggedEnsemble.load(_require(out / "ensemble.json", "ensemble"))
        report = replay(test_samples, scorer, causal, calibrator, policy, costs, pool,
                        seed=seed, u_max=cfg.get_float("costs.u_max"), ensemble=ensemble)
        fingerprint_names = ["model.json", "causal.json", "calibration.txt",
                             "ensemble.json", "test.csv"]

    write_reports_csv([report], out / "replay_report.csv",
                      config_json=cfg.echo_json(),
                      fingerprints_json=_fingerprints(out, fingerprint_names))
    write_ledger_csv(report.ledger, out / "replay_ledger.csv")
    print(f"replay: policy={report.policy} capacity={report.capacity} "
          f"allocated={report.n_allocated} correct={report.n_correct} "
          f"total_gain={report.total_gain:.3f} "
          f"accuracy/resource={report.accuracy_per_resource:.3f}")
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    out = cfg.out_dir()
    test_samples = encoding.read_samples_csv(
        _require(out / "test.csv", "test data"),
        _require(out / "test_times.csv", "test time sidecar"),
    )
    cal_samples = encoding.read_samples_csv(_require(out / "cal.csv", "calibration data"))
    scorer = _load_scorer(cfg, out)
    causal = CausalEstimator.load(_require(out / "causal.json", "effect model"))

    policies = []
    for name in cfg.get_list("sweep.policies"):
        if PolicyName(name) in (PolicyName.CONFORMAL, PolicyName.CONFORMAL_CATE):
            for method in cfg.get_list("sweep.methods"):
                policies.append(cfg.policy(name, method))
        else:
            policies.append(cfg.policy(name))
    alphas = [float(a) for a in cfg.get_list("sweep.alphas")]
    for alpha in alphas:
        if not 0 < alpha < 1:
            raise ConfigError(f"sweep alpha {alpha} outside (0, 1)")
    capacities = [int(c) for c in cfg.get_list("sweep.capacities")]
    ensemble = None
    if any(p.needs_uncertainty for p in policies):
        ensemble = BaggedEnsemble.load(_require(out / "ensemble.json", "ensemble"))

    reports = sweep(scorer, causal, cal_samples, test_samples, policies, alphas,
                    capacities, cfg.costs(),
                    pool_mode=PoolMode(cfg["replay.pool_mode"]),
                    block_duration=(timedelta(seconds=cfg.get_float("replay.block_secs"))
                                    if cfg["replay.pool_mode"] == "renewable" else None),
                    seed=cfg.get_int("seed"), u_max=cfg.get_float("costs.u_max"),
                    ensemble=ensemble, n_jobs=cfg.get_int("jobs"))
    write_reports_csv(reports, out / "sweep.csv",
                      config_json=cfg.echo_json(),
                      fingerprints_json=_fingerprints(
                          out, ["model.json", "causal.json", "test.csv", "cal.csv"]))

    for method in dict.fromkeys(r.method for r in reports if r.method):
        best = [r for r in reports if r.method == method and r.uout_argmax]
        if best:
            counts = best[0].set_counts["uout"]
            print(f"sweep: method={method} argmax-alpha for |{{uout}}| sets: "
                  f"{sorted({r.alpha for r in best})} ({counts} sets)")
    print(f"sweep: wrote {len(reports)} report rows to {out / 'sweep.csv'}")
    return 0


# ----------------------------------------------------------------- parser

# maps argparse dest -> configuration key
FLAG_KEYS = {
    "log": "log",
    "out_dir": "out_dir",
    "seed": "seed",
    "jobs": "jobs",
    "scores_csv": "scores_csv",
    "estimates": "estimates_csv",
    "n_cases": "synth.n_cases",
    "prefix_min": "prefix.min",
    "prefix_max": "prefix.max",
    "percentile": "prefix.percentile",
    "ensemble_size": "ensemble.size",
    "method": "conformal.method",
    "alpha": "conformal.alpha",
    "policy": "replay.policy",
    "capacity": "replay.capacity",
    "pool_mode": "replay.pool_mode",
    "block_secs": "replay.block_secs",
    "methods": "sweep.methods",
    "alphas": "sweep.alphas",
    "capacities": "sweep.capacities",
    "policies": "sweep.policies",
}


def _add_global_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--out-dir", help="artifact directory (default: out)")
    p.add_argument("--seed", help="global random seed")
    p.add_argument("--jobs", help="parallel replays in sweep")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="confpm",
        description="Confidence-guaranteed outcome prediction sets and "
                    "resource-limited intervention replay for process event logs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic event log with ground truth")
    _add_global_flags(p)
    p.add_argument("--n-cases", help="number of cases to generate")

    p = sub.add_parser("prepare", help="parse, clean, label, encode, and split a log")
    _add_global_flags(p)
    p.add_argument("--log", help="input event log CSV (required)")
    p.add_argument("--prefix-min", help="minimum prefix length")
    p.add_argument("--prefix-max", help="maximum prefix length (default: percentile cap)")
    p.add_argument("--percentile", help="trace-length percentile for the prefix cap")

    p = sub.add_parser("train", help="fit the outcome, effect, and ensemble models")
    _add_global_flags(p)
    p.add_argument("--ensemble-size", help="bagged ensemble size (0 disables)")

    p = sub.add_parser("calibrate", help="fit a conformal calibrator on the cal fold")
    _add_global_flags(p)
    p.add_argument("--method", help="naive | outcome_balanced | adaptive")
    p.add_argument("--alpha", help="significance level in (0, 1)")
    p.add_argument("--scores-csv", help="imported scores instead of the built-in model")

    p = sub.add_parser("replay", help="replay the test fold under a policy")
    _add_global_flags(p)
    p.add_argument("--policy", help="pure_predictive | predictive_uncertainty | "
                                    "predictive_cate | conformal | conformal_cate")
    p.add_argument("--capacity", help="resource pool capacity")
    p.add_argument("--pool-mode", help="fixed_budget | renewable")
    p.add_argument("--block-secs", help="resource block duration (renewable mode)")
    p.add_argument("--scores-csv", help="imported scores instead of the built-in model")
    p.add_argument("--estimates", help="replay directly from an estimates CSV")

    p = sub.add_parser("sweep", help="replay the (policy, alpha, capacity) grid")
    _add_global_flags(p)
    p.add_argument("--policies", help="comma list of policy kinds")
    p.add_argument("--methods", help="comma list of conformal methods")
    p.add_argument("--alphas", help="comma list of significance levels")
    p.add_argument("--capacities", help="comma list of capacities")
    p.add_argument("--scores-csv", help="imported scores instead of the built-in model")

    return parser


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "replay": cmd_replay,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    try:
        file_values = load_config_file(args.config) if args.config else {}
        overrides = {
            FLAG_KEYS[dest]: value
            for dest, value in vars(args).items()
            if dest in FLAG_KEYS and value is not None
        }
        cfg = RunConfig.resolve(file_values, overrides)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
