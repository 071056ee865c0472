"""Outcome probability model, treatment-effect estimator, and metrics.

The classifier is a stagewise gradient-boosted ensemble of regression trees
under logistic loss: the base score is the log-odds of the undesired-outcome
prevalence, each stage fits a least-squares tree to the residuals y - p, and
stages are added with a shrinkage rate. Split search is exact greedy over
sorted feature values with deterministic tie-breaking (lowest feature index,
then lowest threshold), so training is reproducible bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .encoding import PrefixSample
from .errors import DataError


@dataclass(frozen=True)
class GbdtParams:
    n_trees: int = 100
    max_depth: int = 4
    min_leaf: int = 20
    learning_rate: float = 0.1

    def __post_init__(self) -> None:
        if self.n_trees < 0 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("invalid gradient-boosting hyperparameters")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")


class _Tree:
    """Axis-aligned regression tree stored as flat parallel arrays."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape[0])
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if self.feature[node] < 0:
                out[idx] = self.value[node]
                continue
            go_left = X[idx, self.feature[node]] <= self.threshold[node]
            stack.append((self.left[node], idx[go_left]))
            stack.append((self.right[node], idx[~go_left]))
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "_Tree":
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"])


def _best_split(X: np.ndarray, grad: np.ndarray, idx: np.ndarray, min_leaf: int):
    """Exact greedy split search; returns (feature, threshold, left mask) or None.

    Gain is the SSE reduction of fitting per-child means instead of the node
    mean. Ties are broken toward the lowest feature index (strict > across
    features) and the lowest threshold (first argmax within a feature).
    """
    n = idx.size
    if n < 2 * min_leaf:
        return None
    g = grad[idx]
    total = g.sum()
    best_gain = 0.0
    best = None
    for j in range(X.shape[1]):
        xj = X[idx, j]
        order = np.argsort(xj, kind="stable")
        xs = xj[order]
        if xs[0] == xs[-1]:
            continue
        csum = np.cumsum(g[order])[:-1]
        k = np.arange(1, n)
        valid = (xs[1:] != xs[:-1]) & (k >= min_leaf) & (n - k >= min_leaf)
        if not valid.any():
            continue
        gain = csum**2 / k + (total - csum) ** 2 / (n - k) - total**2 / n
        gain[~valid] = -np.inf
        pos = int(np.argmax(gain))
        if gain[pos] > best_gain:
            best_gain = float(gain[pos])
            threshold = (xs[pos] + xs[pos + 1]) / 2.0
            best = (j, threshold)
    if best is None:
        return None
    j, threshold = best
    return j, threshold, X[idx, j] <= threshold


def _fit_tree(X: np.ndarray, grad: np.ndarray, params: GbdtParams) -> _Tree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def build(idx: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(grad[idx].mean()))
        if depth >= params.max_depth:
            return node
        split = _best_split(X, grad, idx, params.min_leaf)
        if split is None:
            return node
        j, thr, go_left = split
        feature[node] = j
        threshold[node] = thr
        left[node] = build(idx[go_left], depth + 1)
        right[node] = build(idx[~go_left], depth + 1)
        return node

    build(np.arange(X.shape[0]), 0)
    return _Tree(feature, threshold, left, right, value)


@dataclass
class GbdtModel:
    """Boosted regression trees under logistic loss for P(uout | x)."""

    params: GbdtParams
    base_score: float
    trees: list[_Tree]
    n_features: int
    seed: int = 0

    def _check_dim(self, n: int) -> None:
        if n != self.n_features:
            raise DataError(f"feature dimension {n} != model dimension {self.n_features}")

    def predict_raw(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self._check_dim(X.shape[1])
        raw = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            raw += self.params.learning_rate * tree.predict(X)
        return raw

    def predict_uout(self, X: np.ndarray) -> np.ndarray:
        return expit(self.predict_raw(X))

    def predict_proba(self, x: np.ndarray) -> tuple[float, float]:
        """(p_uout, p_dout) for a single feature vector; sums to 1 exactly."""
        p = float(self.predict_uout(np.asarray(x).reshape(1, -1))[0])
        return p, 1.0 - p

    def score_samples(self, samples: Sequence[PrefixSample]) -> np.ndarray:
        return self.predict_uout(np.stack([s.features for s in samples]))

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": "confpm-gbdt",
                "version": 1,
                "params": {
                    "n_trees": self.params.n_trees,
                    "max_depth": self.params.max_depth,
                    "min_leaf": self.params.min_leaf,
                    "learning_rate": self.params.learning_rate,
                },
                "base_score": self.base_score,
                "n_features": self.n_features,
                "seed": self.seed,
                "trees": [t.to_dict() for t in self.trees],
            },
            sort_keys=True,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "GbdtModel":
        d = json.loads(text)
        if d.get("format") != "confpm-gbdt":
            raise DataError("not a gradient-boosting model artifact")
        return cls(
            params=GbdtParams(**d["params"]),
            base_score=d["base_score"],
            trees=[_Tree.from_dict(t) for t in d["trees"]],
            n_features=d["n_features"],
            seed=d["seed"],
        )

    @classmethod
    def load(cls, path: str | Path) -> "GbdtModel":
        return cls.from_json(Path(path).read_text())

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def train_gbdt(X: np.ndarray, y: np.ndarray, params: GbdtParams | None = None,
               seed: int = 0) -> GbdtModel:
    """Fit the boosted classifier; y is 1 for the undesired outcome.

    The exact greedy split search has no stochastic step, so the seed only
    documents provenance; identical inputs give bit-identical models.
    """
    params = params or GbdtParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, d) with one label per row")
    if X.shape[0] < 2:
        raise DataError("need at least two training samples")
    prevalence = float(y.mean())
    if prevalence in (0.0, 1.0):
        raise DataError("degenerate labels: only one outcome class present")

    base = float(np.log(prevalence / (1.0 - prevalence)))
    raw = np.full(X.shape[0], base)
    trees: list[_Tree] = []
    for _ in range(params.n_trees):
        residual = y - expit(raw)
        tree = _fit_tree(X, residual, params)
        trees.append(tree)
        raw += params.learning_rate * tree.predict(X)
    return GbdtModel(params=params, base_score=base, trees=trees,
                     n_features=X.shape[1], seed=seed)


def logistic_loss(y: np.ndarray, p: np.ndarray) -> float:
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


@dataclass
class CausalEstimator:
    """Two independent outcome models on the treated and control strata.

    The effect estimate is P(uout | x, T=0) - P(uout | x, T=1): the reduction
    in undesired-outcome probability achieved by intervening.
    """

    model_control: GbdtModel
    model_treated: GbdtModel

    def cate(self, X: np.ndarray) -> np.ndarray:
        return self.model_control.predict_uout(X) - self.model_treated.predict_uout(X)

    def cate_samples(self, samples: Sequence[PrefixSample]) -> np.ndarray:
        return self.cate(np.stack([s.features for s in samples]))

    def save(self, path: str | Path) -> None:
        payload = {
            "format": "confpm-tlearner",
            "version": 1,
            "control": json.loads(self.model_control.to_json()),
            "treated": json.loads(self.model_treated.to_json()),
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "CausalEstimator":
        d = json.loads(Path(path).read_text())
        if d.get("format") != "confpm-tlearner":
            raise DataError("not a treatment-effect model artifact")
        return cls(
            model_control=GbdtModel.from_json(json.dumps(d["control"], sort_keys=True)),
            model_treated=GbdtModel.from_json(json.dumps(d["treated"], sort_keys=True)),
        )

    def fingerprint(self) -> str:
        return hashlib.sha256(
            (self.model_control.to_json() + self.model_treated.to_json()).encode()
        ).hexdigest()[:16]


def train_tlearner(X: np.ndarray, T: np.ndarray, y: np.ndarray,
                   params: GbdtParams | None = None, seed: int = 0) -> CausalEstimator:
    T = np.asarray(T).astype(bool)
    models = {}
    for name, mask in (("control", ~T), ("treated", T)):
        if not mask.any():
            raise DataError(f"empty {name} stratum")
        y_s = y[mask]
        if len(np.unique(y_s)) < 2:
            raise DataError(f"single-class labels in {name} stratum")
        models[name] = train_gbdt(X[mask], y_s, params, seed)
    return CausalEstimator(model_control=models["control"], model_treated=models["treated"])


def estimate_cate(est: CausalEstimator, x: np.ndarray) -> float:
    return float(est.cate(np.asarray(x).reshape(1, -1))[0])


@dataclass
class BaggedEnsemble:
    """Bootstrap-resampled classifiers for the total-uncertainty baseline."""

    members: list[GbdtModel]
    seed: int = 0

    def mean_uout(self, X: np.ndarray) -> np.ndarray:
        return np.mean([m.predict_uout(X) for m in self.members], axis=0)

    def uncertainty(self, X: np.ndarray) -> np.ndarray:
        return binary_entropy(self.mean_uout(X))

    def uncertainty_samples(self, samples: Sequence[PrefixSample]) -> np.ndarray:
        return self.uncertainty(np.stack([s.features for s in samples]))

    def save(self, path: str | Path) -> None:
        payload = {
            "format": "confpm-ensemble",
            "version": 1,
            "seed": self.seed,
            "members": [json.loads(m.to_json()) for m in self.members],
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "BaggedEnsemble":
        d = json.loads(Path(path).read_text())
        if d.get("format") != "confpm-ensemble":
            raise DataError("not an ensemble artifact")
        return cls(
            members=[GbdtModel.from_json(json.dumps(m, sort_keys=True)) for m in d["members"]],
            seed=d["seed"],
        )


def train_ensemble(X: np.ndarray, y: np.ndarray, n_members: int,
                   params: GbdtParams | None = None, seed: int = 0) -> BaggedEnsemble:
    if n_members < 2:
        raise ValueError("an ensemble needs at least 2 members")
    rng = np.random.default_rng(seed)
    y = np.asarray(y)
    members = []
    for _ in range(n_members):
        for _attempt in range(1000):
            idx = rng.integers(0, len(y), len(y))
            if len(np.unique(y[idx])) == 2:
                break
        else:
            raise DataError("could not draw a two-class bootstrap resample")
        members.append(train_gbdt(X[idx], y[idx], params, seed))
    return BaggedEnsemble(members=members, seed=seed)


def binary_entropy(p: np.ndarray) -> np.ndarray:
    """Entropy in bits of a Bernoulli(p), with the 0 log 0 := 0 convention."""
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    inner = (p > 0) & (p < 1)
    q = p[inner]
    out[inner] = -q * np.log2(q) - (1 - q) * np.log2(1 - q)
    return out


def total_uncertainty(ensemble: BaggedEnsemble, x: np.ndarray) -> float:
    return float(ensemble.uncertainty(np.asarray(x).reshape(1, -1))[0])


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability a random positive outscores a random negative, ties at 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC undefined: only one class present")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def f_score(predictions: np.ndarray, labels: np.ndarray) -> float:
    """Binary F1 for the undesired-outcome class; 0 when undefined."""
    predictions = np.asarray(predictions).astype(bool)
    labels = np.asarray(labels).astype(bool)
    tp = int(np.sum(predictions & labels))
    fp = int(np.sum(predictions & ~labels))
    fn = int(np.sum(~predictions & labels))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


class ScoreTable:
    """External prediction scores keyed by (case_id, prefix_len).

    Lets a CSV of pre-computed P(uout) values stand in for the built-in
    classifier during calibration and replay.
    """

    def __init__(self, scores: dict[tuple[str, int], float]):
        self._scores = dict(scores)

    @classmethod
    def from_csv(cls, path: str | Path) -> "ScoreTable":
        scores: dict[tuple[str, int], float] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            required = {"case_id", "prefix_len", "p_uout"}
            if reader.fieldnames is None or not required <= set(reader.fieldnames):
                raise DataError(f"{path}: score table needs columns {sorted(required)}")
            for row in reader:
                key = (row["case_id"], int(row["prefix_len"]))
                if key in scores:
                    raise DataError(f"{path}: duplicate score for {key}")
                p = float(row["p_uout"])
                if not 0.0 <= p <= 1.0:
                    raise DataError(f"{path}: p_uout {p} outside [0, 1] for {key}")
                scores[key] = p
        return cls(scores)

    def score_samples(self, samples: Sequence[PrefixSample]) -> np.ndarray:
        out = np.empty(len(samples))
        for i, s in enumerate(samples):
            key = (s.case_id, s.prefix_length)
            if key not in self._scores:
                raise DataError(f"no imported score for case {key[0]!r} prefix {key[1]}")
            out[i] = self._scores[key]
        return out

    def fingerprint(self) -> str:
        blob = json.dumps(sorted((k[0], k[1], v) for k, v in self._scores.items()))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
