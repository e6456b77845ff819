"""Full-ranking top-K evaluation

Every bundle is scored for a user, bundles the user already interacted with
(train, and tune unless told otherwise) are removed, and the rest is sorted by
descending score with ties broken by ascending bundle id.
"""

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from bunca import BuncaError
from bunca.enums import DEFAULT_KS
from bunca.graph import SparseBinaryMatrix
from bunca.log import DebugMixin, warning


class EvaluationError(BuncaError):
    """Raised on unknown users, invalid cut-offs or nothing to evaluate."""


@dataclass(frozen=True, eq=False)
class RankingResult:
    user: int
    bundles: np.ndarray
    scores: np.ndarray

    def top(self, k: int) -> np.ndarray:
        return self.bundles[:k]


@dataclass(frozen=True)
class MetricsReport:
    ks: tuple
    recall: tuple
    ndcg: tuple
    users_evaluated: int

    def get(self, metric: str, k: int) -> float:
        if k not in self.ks:
            raise EvaluationError(f"K={k} was not evaluated, have {list(self.ks)}")
        return getattr(self, metric)[self.ks.index(k)]

    def to_dict(self) -> dict:
        return {
            "K": list(self.ks),
            "recall": list(self.recall),
            "ndcg": list(self.ndcg),
            "users_evaluated": self.users_evaluated,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _check_k(k: int):
    if k <= 0:
        raise EvaluationError(f"K must be positive, got {k}")


def rank_bundles(scores: np.ndarray, user: int, mask: Iterable[int] = ()) -> RankingResult:
    """Rank every bundle for ``user`` from a (users, bundles) score matrix."""
    scores = np.asarray(scores)
    if not 0 <= user < scores.shape[0]:
        raise EvaluationError(f"unknown user id {user}")
    row = scores[user]
    keep = np.ones(len(row), dtype=bool)
    masked = np.fromiter(mask, dtype=np.int64)
    keep[masked] = False
    ids = np.flatnonzero(keep)
    order = np.lexsort((ids, -row[ids]))
    return RankingResult(user, ids[order], row[ids][order])


def _hits(ranking: RankingResult, test: Iterable[int], k: int):
    _check_k(k)
    test = set(int(b) for b in test)
    if not test:
        raise EvaluationError(f"user {ranking.user} has no test bundles")
    return [int(b) in test for b in ranking.top(k)], test


def recall_at_k(ranking: RankingResult, test: Iterable[int], k: int) -> float:
    hits, test = _hits(ranking, test, k)
    return sum(hits) / len(test)


def ndcg_at_k(ranking: RankingResult, test: Iterable[int], k: int) -> float:
    hits, test = _hits(ranking, test, k)
    dcg = sum(1.0 / np.log2(rank + 2) for rank, hit in enumerate(hits) if hit)
    idcg = sum(1.0 / np.log2(rank + 2) for rank in range(min(len(test), k)))
    return float(dcg / idcg)


def evaluate_all(
    scores: np.ndarray,
    test: SparseBinaryMatrix,
    masks: Sequence[SparseBinaryMatrix] = (),
    ks: Sequence[int] = DEFAULT_KS,
) -> MetricsReport:
    """Mean Recall@K and NDCG@K over users with at least one test bundle."""
    ks = tuple(int(k) for k in ks)
    if not ks:
        raise EvaluationError("no cut-offs to evaluate")
    for k in ks:
        _check_k(k)
    scores = np.asarray(scores)
    if scores.shape != test.shape:
        raise EvaluationError(f"score matrix is {scores.shape}, test split is {test.shape}")
    recall = np.zeros(len(ks))
    ndcg = np.zeros(len(ks))
    users = np.flatnonzero(test.row_degrees() > 0)
    if not len(users):
        raise EvaluationError("no user has a test bundle")
    for user in users:
        mask = np.concatenate([m.row(user) for m in masks]) if masks else ()
        ranking = rank_bundles(scores, int(user), mask)
        target = test.row(user)
        for i, k in enumerate(ks):
            recall[i] += recall_at_k(ranking, target, k)
            ndcg[i] += ndcg_at_k(ranking, target, k)
    n = len(users)
    return MetricsReport(
        ks, tuple(float(r / n) for r in recall), tuple(float(v / n) for v in ndcg), n
    )


class Evaluator(DebugMixin):
    """Rankings and metrics for a fixed score matrix."""

    name = "evaluate"

    def __init__(self, scores: np.ndarray, masks: Sequence[SparseBinaryMatrix] = ()):
        self.scores = np.asarray(scores)
        self.masks = tuple(masks)

    def mask_for(self, user: int) -> np.ndarray:
        if not self.masks:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([m.row(user) for m in self.masks])

    def recommend(self, user: int, k: int) -> np.ndarray:
        _check_k(k)
        if not 0 <= user < len(self.scores):
            raise EvaluationError(f"unknown user id {user}")
        ranking = rank_bundles(self.scores, user, self.mask_for(user))
        if not len(ranking.bundles):
            warning(f"user {user} has every bundle masked, nothing to recommend")
        return ranking.top(k)

    def evaluate(self, test: SparseBinaryMatrix, ks: Sequence[int] = DEFAULT_KS) -> MetricsReport:
        report = evaluate_all(self.scores, test, self.masks, ks)
        self.debug(f"evaluated {report.users_evaluated} users: {report.to_json()}")
        return report


def masks_for(ds, split: str, mask_tune: bool = True):
    """Splits whose interactions are hidden when ranking ``split``."""
    masks = [ds.train]
    if split == "test" and mask_tune:
        masks.append(ds.tune)
    return masks
