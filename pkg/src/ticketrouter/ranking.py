"""Training-set construction and the two learned rankers.

A query is one (ticket, step) pair taken from an archived sequence. Its
positive instances are the groups that actually followed: the resolver
gets label 1 and each group one step further from the resolver gets half
the label of the previous one. Each positive is paired with a uniformly
drawn negative (label 0) from the ticket's candidate universe, excluding
every group of the archived sequence, without replacement inside a query.

Two rankers share the scoring interface:

- pointwise: a random-forest regressor on (vector, label) pairs;
- pairwise: gradient-boosted regression trees driven by LambdaRank
  gradients, where each pair's lambda is weighted by the NDCG change of
  swapping the two documents in the current ranking, with Newton-style
  leaf re-valuation and early stopping on training NDCG@10.

Models remember the feature-schema hash and which blocks were masked out
at training time; scoring re-applies the mask and refuses vectors of the
wrong width, and persistence refuses artifacts from a different schema.
"""

from __future__ import annotations

import pickle
import random
from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestRegressor
from sklearn.tree import DecisionTreeRegressor

from .corpus import RoutingRecord, Ticket
from .errors import ValidationError
from .features import (
    BLOCKS,
    FEATURE_NAMES,
    N_FEATURES,
    FeaturePipeline,
    NormalizationTable,
    mask_blocks,
    schema_hash,
)

MODEL_FORMAT_VERSION = 1
NDCG_CUTOFF = 10


@dataclass(frozen=True)
class TrainingInstance:
    ticket_id: str
    step: int
    group_id: str
    label: float


@dataclass
class TrainingSet:
    instances: list[TrainingInstance]
    raw: np.ndarray
    X: np.ndarray
    y: np.ndarray
    query_rows: dict[tuple[str, int], list[int]]
    masked: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.instances)

    def mask(self, blocks) -> "TrainingSet":
        """Dataset-level ablation: zero the named blocks, keep the layout."""
        blocks = tuple(blocks)
        return TrainingSet(
            instances=self.instances,
            raw=mask_blocks(self.raw, blocks),
            X=mask_blocks(self.X, blocks),
            y=self.y,
            query_rows=self.query_rows,
            masked=tuple(sorted(set(self.masked) | set(blocks))),
        )


def positive_labels(sequence: tuple[str, ...]) -> list[float]:
    """Label per sequence position: resolver 1, halved per step back."""
    m = len(sequence)
    return [2.0 ** -(m - 1 - j) for j in range(m)]


def build_training_set(tickets: list[Ticket], records: list[RoutingRecord],
                       pipeline: FeaturePipeline, candidate_groups: dict,
                       seed: int, ratio: int = 1,
                       fit_normalization: bool = True) -> TrainingSet:
    """Assemble labeled instances and fit the pipeline's normalization.

    candidate_groups maps ticket id to the iterable of groups that the
    negative sampler may draw from; archived-sequence groups are removed
    before sampling.
    """
    if ratio < 1:
        raise ValidationError(f"negative ratio must be >= 1, got {ratio}")
    by_id = {t.id: t for t in tickets}
    rng = random.Random(seed)

    instances: list[TrainingInstance] = []
    rows: list[np.ndarray] = []
    query_rows: dict[tuple[str, int], list[int]] = {}

    for rec in records:
        ticket = by_id.get(rec.ticket_id)
        if ticket is None:
            raise ValidationError(f"no ticket for record {rec.ticket_id!r}")
        seq = rec.sequence
        universe = sorted(set(candidate_groups[rec.ticket_id]) - set(seq))
        labels = positive_labels(seq)
        for t in range(len(seq)):
            needed = (len(seq) - t) * ratio
            if len(universe) < needed:
                raise ValidationError(
                    f"ticket {rec.ticket_id!r}: candidate universe has "
                    f"{len(universe)} groups, need {needed} negatives at step {t}")
            negatives = rng.sample(universe, needed)
            prefix = seq[:t]
            key = (rec.ticket_id, t)
            query_rows[key] = []
            for j in range(t, len(seq)):
                query_rows[key].append(len(rows))
                instances.append(TrainingInstance(rec.ticket_id, t, seq[j], labels[j]))
                rows.append(pipeline.raw_vector(ticket, prefix, seq[j]))
            for g in negatives:
                query_rows[key].append(len(rows))
                instances.append(TrainingInstance(rec.ticket_id, t, g, 0.0))
                rows.append(pipeline.raw_vector(ticket, prefix, g))

    if not rows:
        raise ValidationError("no training instances could be built")
    raw = np.array(rows)
    if fit_normalization or pipeline.normalization is None:
        pipeline.normalization = NormalizationTable.fit(raw)
    X = pipeline.normalization.transform(raw)
    y = np.array([inst.label for inst in instances])
    return TrainingSet(instances, raw, X, y, query_rows)


def _dcg(gains: np.ndarray, k: int) -> float:
    top = gains[:k]
    return float(np.sum(top / np.log2(np.arange(2, len(top) + 2))))


def ndcg_at_k(scores: np.ndarray, labels: np.ndarray, k: int = NDCG_CUTOFF) -> float:
    """NDCG of one query; 1.0 when the query has no relevant documents."""
    order = np.argsort(-scores, kind="stable")
    gains = 2.0 ** labels[order] - 1.0
    ideal = np.sort(2.0 ** labels - 1.0)[::-1]
    idcg = _dcg(ideal, k)
    if idcg <= 0:
        return 1.0
    return _dcg(gains, k) / idcg


def mean_ndcg(scores: np.ndarray, ts: TrainingSet, k: int = NDCG_CUTOFF) -> float:
    values = [ndcg_at_k(scores[rows], ts.y[rows], k)
              for rows in ts.query_rows.values()]
    return float(np.mean(values)) if values else 1.0


class RankerModel:
    """Shared scoring contract of the two trained rankers."""

    kind: str

    def __init__(self, seed: int, importances: np.ndarray, masked: tuple[str, ...]):
        self.seed = seed
        self.schema = schema_hash()
        self.masked = masked
        total = importances.sum()
        self.importances = importances / total if total > 0 \
            else np.full(N_FEATURES, 1.0 / N_FEATURES)

    def _check(self, X) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != N_FEATURES:
            raise ValidationError(
                f"expected vectors of width {N_FEATURES}, got {X.shape[1]}")
        if self.masked:
            X = mask_blocks(X, self.masked)
        return X, single

    def score(self, X):
        X, single = self._check(X)
        out = self._predict(X)
        return float(out[0]) if single else out

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class PointwiseForestModel(RankerModel):
    kind = "pointwise-forest"

    def __init__(self, forest: RandomForestRegressor, seed: int, masked=()):
        super().__init__(seed, np.asarray(forest.feature_importances_), tuple(masked))
        self._forest = forest

    def _predict(self, X: np.ndarray) -> np.ndarray:
        return self._forest.predict(X)


class PairwiseBoostedModel(RankerModel):
    kind = "pairwise-gbt"

    def __init__(self, trees, learning_rate: float, seed: int,
                 importances: np.ndarray, train_ndcg: list[float], masked=()):
        super().__init__(seed, importances, tuple(masked))
        self._trees = trees  # list of (DecisionTreeRegressor, leaf value array)
        self.learning_rate = learning_rate
        self.train_ndcg = train_ndcg

    @property
    def rounds_used(self) -> int:
        return len(self._trees)

    def _predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape[0])
        for tree, leaf_values in self._trees:
            out += self.learning_rate * leaf_values[tree.apply(X)]
        return out


def train_pointwise(ts: TrainingSet, trees: int = 200, seed: int = 0) -> PointwiseForestModel:
    if len(ts) == 0:
        raise ValidationError("empty training set")
    forest = RandomForestRegressor(
        n_estimators=trees, max_features="sqrt", bootstrap=True,
        random_state=seed, n_jobs=1)
    forest.fit(ts.X, ts.y)
    return PointwiseForestModel(forest, seed=seed, masked=ts.masked)


def train_pairwise(ts: TrainingSet, rounds: int = 300, learning_rate: float = 0.1,
                   max_leaves: int = 16, seed: int = 0,
                   early_stop_rounds: int = 25, tol: float = 1e-6) -> PairwiseBoostedModel:
    pair_i: list[int] = []
    pair_j: list[int] = []
    pair_query: list[int] = []
    query_list = list(ts.query_rows.values())
    idcg = np.zeros(len(query_list))
    for q, rows in enumerate(query_list):
        labels = ts.y[rows]
        ideal = np.sort(2.0 ** labels - 1.0)[::-1]
        idcg[q] = _dcg(ideal, NDCG_CUTOFF)
        for a in range(len(rows)):
            for b in range(len(rows)):
                if ts.y[rows[a]] > ts.y[rows[b]]:
                    pair_i.append(rows[a])
                    pair_j.append(rows[b])
                    pair_query.append(q)
    if not pair_i:
        raise ValidationError("no query has a pair of differing labels")
    I = np.array(pair_i)
    J = np.array(pair_j)
    pair_idcg = idcg[np.array(pair_query)]
    pair_idcg[pair_idcg <= 0] = 1.0

    n = len(ts)
    gains = 2.0 ** ts.y - 1.0
    scores = np.zeros(n)
    positions = np.zeros(n)
    trees: list[tuple[DecisionTreeRegressor, np.ndarray]] = []
    importance_acc = np.zeros(N_FEATURES)
    history: list[float] = []
    best = -1.0
    best_round = 0

    for rnd in range(rounds):
        for rows in query_list:
            idx = np.asarray(rows)
            order = np.argsort(-scores[idx], kind="stable")
            positions[idx[order]] = np.arange(1, len(idx) + 1)
        discount = 1.0 / np.log2(1.0 + positions)
        delta = np.abs(gains[I] - gains[J]) * np.abs(discount[I] - discount[J]) / pair_idcg
        rho = 1.0 / (1.0 + np.exp(scores[I] - scores[J]))
        lam = np.zeros(n)
        hess = np.zeros(n)
        np.add.at(lam, I, delta * rho)
        np.add.at(lam, J, -delta * rho)
        np.add.at(hess, I, delta * rho * (1.0 - rho))
        np.add.at(hess, J, delta * rho * (1.0 - rho))

        tree = DecisionTreeRegressor(max_leaf_nodes=max_leaves, random_state=seed + rnd)
        tree.fit(ts.X, lam)
        leaves = tree.apply(ts.X)
        n_nodes = tree.tree_.node_count
        num = np.zeros(n_nodes)
        den = np.zeros(n_nodes)
        np.add.at(num, leaves, lam)
        np.add.at(den, leaves, hess)
        leaf_values = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0)
        scores += learning_rate * leaf_values[leaves]
        trees.append((tree, leaf_values))
        importance_acc += tree.feature_importances_

        current = mean_ndcg(scores, ts)
        history.append(current)
        if current > best + tol:
            best = current
            best_round = rnd
        elif rnd - best_round >= early_stop_rounds:
            break

    return PairwiseBoostedModel(trees, learning_rate, seed, importance_acc,
                                history, masked=ts.masked)


BLOCK_OF = {name: block for block, names in BLOCKS.items() for name in names}


def feature_importance(model: RankerModel) -> list[tuple[str, float, str]]:
    """(slot name, weight, block) in descending weight order; weights sum to 1."""
    ranked = sorted(zip(FEATURE_NAMES, model.importances),
                    key=lambda kv: (-kv[1], kv[0]))
    return [(name, float(w), BLOCK_OF[name]) for name, w in ranked]


def save_model(model: RankerModel, path) -> None:
    artifact = {
        "format_version": MODEL_FORMAT_VERSION,
        "schema_hash": model.schema,
        "kind": model.kind,
        "payload": model,
    }
    with open(path, "wb") as fh:
        pickle.dump(artifact, fh)


def load_model(path) -> RankerModel:
    with open(path, "rb") as fh:
        artifact = pickle.load(fh)
    if artifact.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValidationError(f"unsupported model format {artifact.get('format_version')!r}")
    if artifact.get("schema_hash") != schema_hash():
        raise ValidationError("model was trained on a different feature schema")
    return artifact["payload"]
