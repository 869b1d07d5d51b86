"""Five-fold cross-validation protocol, per-user holdout splits, and the
three top-n ranking metrics (NDCG, MRR, RBP) under binary relevance.

Fold membership and every per-user holdout are derived from the global
seed via stable hashing, so evaluation order and parallelism cannot
change the splits.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import floor, log2
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import als
from .errors import ConfigError
from .interactions import InteractionMatrix, UserId
from .util import derive_seed, fmt_float

log = logging.getLogger(__name__)

SCHEME_SAMPLE = "sample"
SCHEME_PARTITION = "partition"

DEFAULT_HOLDOUT_FRACTION = 0.2
DEFAULT_DEPTH = 1000
DEFAULT_RBP_PERSISTENCE = 0.85


@dataclass
class Fold:
    index: int
    test_users: list[int]
    # user index -> held-out item indices; filled by assign_holdouts
    holdout: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass
class FoldPlan:
    folds: list[Fold]
    scheme: str
    seed: int


@dataclass(frozen=True)
class MetricRow:
    user_id: UserId
    fold: int
    ndcg: float
    mrr: float
    rbp: float


@dataclass
class MetricFrame:
    """Per-user evaluation results, one row per (test user, fold)."""

    rows: list[MetricRow] = field(default_factory=list)

    def per_user_mean(self, metric: str) -> dict[UserId, float]:
        """Mean of one metric across the folds each user was tested in."""
        totals: dict[UserId, float] = {}
        counts: dict[UserId, int] = {}
        for row in self.rows:
            value = getattr(row, metric)
            totals[row.user_id] = totals.get(row.user_id, 0.0) + value
            counts[row.user_id] = counts.get(row.user_id, 0) + 1
        return {uid: totals[uid] / counts[uid] for uid in totals}

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user_id", "fold", "ndcg", "mrr", "rbp"])
            for row in self.rows:
                writer.writerow([str(row.user_id), row.fold, fmt_float(row.ndcg),
                                 fmt_float(row.mrr), fmt_float(row.rbp)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "MetricFrame":
        frame = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["user_id", "fold", "ndcg", "mrr", "rbp"]:
                raise ConfigError(f"unexpected metrics CSV header in {path}")
            for rec in reader:
                frame.rows.append(MetricRow(rec[0], int(rec[1]), float(rec[2]),
                                            float(rec[3]), float(rec[4])))
        return frame


def make_folds(users: Sequence[int], k: int, scheme: str, seed: int,
               sample_size: Optional[int] = None) -> FoldPlan:
    """Assign test users to k folds by seeded shuffle.

    PARTITION splits all users into k disjoint chunks whose sizes differ by
    at most one.  SAMPLE takes the first k * sample_size shuffled users and
    chunks them into k disjoint folds of exactly sample_size users.
    """
    n = len(users)
    if scheme == SCHEME_PARTITION:
        if k > n:
            raise ConfigError(f"cannot partition {n} users into {k} folds")
    elif scheme == SCHEME_SAMPLE:
        if sample_size is None or sample_size <= 0:
            raise ConfigError("sample scheme requires a positive sample_size")
        if k * sample_size > n:
            raise ConfigError(
                f"sample scheme needs {k * sample_size} users, have {n}")
    else:
        raise ConfigError(f"unknown fold scheme {scheme!r}")

    rng = np.random.default_rng(derive_seed(seed, "folds"))
    shuffled = np.asarray(users, dtype=np.int64)[rng.permutation(n)]
    if scheme == SCHEME_PARTITION:
        chunks = np.array_split(shuffled, k)
    else:
        chunks = np.split(shuffled[: k * sample_size], k)
    folds = [Fold(index=i, test_users=sorted(int(u) for u in chunk))
             for i, chunk in enumerate(chunks)]
    return FoldPlan(folds=folds, scheme=scheme, seed=seed)


def holdout_split(user_items: np.ndarray, fraction: float,
                  seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split one user's items into (train, held-out) by seeded shuffle.

    The held-out size is max(1, floor(fraction * n)); callers must ensure
    n >= 2 so both sides are non-empty.
    """
    n = len(user_items)
    if n < 2:
        raise ValueError("holdout_split needs at least 2 items")
    n_held = max(1, floor(fraction * n))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    held = user_items[perm[:n_held]]
    train = user_items[perm[n_held:]]
    return train, held


def assign_holdouts(plan: FoldPlan, matrix: InteractionMatrix,
                    user_ids: Sequence, fraction: float = DEFAULT_HOLDOUT_FRACTION) -> FoldPlan:
    """Fill each fold's per-user held-out item sets.

    The per-user RNG is derived from (plan seed, fold index, original user
    id).  Users with fewer than 2 items cannot be both trained and tested;
    they are dropped from the fold with a warning.
    """
    for fold in plan.folds:
        kept: list[int] = []
        for u in fold.test_users:
            items = matrix.user_items(u)
            if len(items) < 2:
                log.warning("user %s has %d item(s); skipped in fold %d",
                            user_ids[u], len(items), fold.index)
                continue
            seed = derive_seed(plan.seed, fold.index, user_ids[u])
            _, held = holdout_split(items, fraction, seed)
            fold.holdout[u] = np.sort(held)
            kept.append(u)
        fold.test_users = kept
    return plan


def fold_training_matrix(matrix: InteractionMatrix, fold: Fold) -> InteractionMatrix:
    """Training matrix for one fold: everything except held-out pairs."""
    drop = np.zeros(matrix.nnz, dtype=bool)
    for u, held in fold.holdout.items():
        lo, hi = matrix.indptr[u], matrix.indptr[u + 1]
        drop[lo:hi] = np.isin(matrix.indices[lo:hi], held)
    return matrix.drop_entries(drop)


def ndcg(ranked: Sequence[int], relevant: set) -> float:
    """Binary-gain normalized discounted cumulative gain.

    DCG sums 1/log2(rank + 1) over relevant items at their 1-based ranks;
    the ideal DCG places all relevant items first.  0 when nothing is
    relevant.
    """
    if not relevant:
        return 0.0
    dcg = 0.0
    for pos, item in enumerate(ranked, start=1):
        if item in relevant:
            dcg += 1.0 / log2(pos + 1)
    ideal_len = min(len(relevant), len(ranked))
    idcg = sum(1.0 / log2(pos + 1) for pos in range(1, ideal_len + 1))
    return dcg / idcg if idcg > 0 else 0.0


def mrr(ranked: Sequence[int], relevant: set) -> float:
    """Reciprocal rank of the first relevant item; 0 if none present."""
    for pos, item in enumerate(ranked, start=1):
        if item in relevant:
            return 1.0 / pos
    return 0.0


def rbp(ranked: Sequence[int], relevant: set,
        persistence: float = DEFAULT_RBP_PERSISTENCE) -> float:
    """Rank-biased precision under a geometric patience model."""
    if not 0.0 < persistence < 1.0:
        raise ConfigError("rbp persistence must lie in (0, 1)")
    total = 0.0
    for pos, item in enumerate(ranked, start=1):
        if item in relevant:
            total += persistence ** (pos - 1)
    return (1.0 - persistence) * total


def _evaluate_user(model: als.AlsModel, matrix: InteractionMatrix, u: int,
                   held: np.ndarray, n: int, persistence: float,
                   filter_train: bool) -> tuple[float, float, float]:
    items = matrix.user_items(u)
    if filter_train:
        exclude = np.setdiff1d(items, held, assume_unique=False)
    else:
        exclude = None
    ranked = [item for item, _ in als.recommend(model, u, n, exclude)]
    relevant = set(int(i) for i in held)
    return (ndcg(ranked, relevant), mrr(ranked, relevant),
            rbp(ranked, relevant, persistence))


def evaluate_fold(model: als.AlsModel, fold: Fold, matrix: InteractionMatrix,
                  user_ids: Sequence, n: int = DEFAULT_DEPTH,
                  persistence: float = DEFAULT_RBP_PERSISTENCE,
                  filter_train: bool = True, threads: int = 1) -> list[MetricRow]:
    """Metrics for every test user of one fold, in user-index order.

    ``matrix`` is the full cleaned matrix (used for each user's training
    items); the model must have been fit on this fold's training matrix.
    By default a user's training items are excluded from their
    recommendation list.
    """
    users = fold.test_users

    def one(u: int) -> tuple[float, float, float]:
        return _evaluate_user(model, matrix, u, fold.holdout[u], n,
                              persistence, filter_train)

    if threads <= 1 or len(users) < 2 * threads:
        results = [one(u) for u in users]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, users))

    return [MetricRow(user_ids[u], fold.index, nd, mr, rb)
            for u, (nd, mr, rb) in zip(users, results)]
