"""Confidence-weighted alternating least squares for implicit feedback.

The model factorizes a binary preference matrix (1 where an interaction
exists, 0 elsewhere) under per-pair confidence weights c = 1 + alpha * r,
minimizing

    sum_{u,i} c_ui (p_ui - x_u . y_i)^2 + reg * (sum ||x_u||^2 + sum ||y_i||^2)

Each half-sweep solves the k x k regularized normal equations row by row,
using the precomputed Gram matrix of the opposite side plus sparse
corrections for the observed entries, so a sweep costs O(nnz * k^2) instead
of touching every user-item pair.  Row solves are independent: any worker
count produces bit-identical factors.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError
from .interactions import InteractionMatrix

INIT_SCALE = 0.01


@dataclass(frozen=True)
class AlsHyperparams:
    factors: int = 50
    regularization: float = 0.01
    iterations: int = 30
    alpha: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.factors <= 0 or self.iterations <= 0:
            raise ValueError("factors and iterations must be positive")
        if self.regularization <= 0 or self.alpha <= 0:
            raise ValueError("regularization and alpha must be positive")


@dataclass
class AlsModel:
    user_factors: np.ndarray  # n_users x k
    item_factors: np.ndarray  # n_items x k
    hyperparams: AlsHyperparams


def init_factors(n: int, k: int, seed: int) -> np.ndarray:
    """Seeded i.i.d. uniform [0, 0.01) factor matrix."""
    rng = np.random.default_rng(seed)
    return rng.random((n, k)) * INIT_SCALE


def confidence(strength: float, alpha: float) -> float:
    """Confidence weight 1 + alpha * strength of one observation."""
    return 1.0 + alpha * strength


def _transpose_csr(m: InteractionMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Item-major (indptr, user indices, strengths) view of the matrix."""
    order = np.argsort(m.indices, kind="stable")
    rows = m.user_index_of_entries()[order]
    cols = m.indices[order]
    vals = m.data[order]
    indptr = np.zeros(m.n_items + 1, dtype=np.int64)
    np.add.at(indptr, cols + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, rows, vals


def _solve_rows(this: np.ndarray, other: np.ndarray, indptr: np.ndarray,
                indices: np.ndarray, data: np.ndarray, reg: float, alpha: float,
                lo: int, hi: int) -> None:
    """Solve the normal equations for rows [lo, hi) of ``this`` in place."""
    k = other.shape[1]
    gram = other.T @ other + reg * np.eye(k)
    for row in range(lo, hi):
        start, end = indptr[row], indptr[row + 1]
        if start == end:
            this[row, :] = 0.0
            continue
        cols = indices[start:end]
        conf_minus_one = alpha * data[start:end]
        m = other[cols, :]
        a = gram + m.T @ (conf_minus_one[:, None] * m)
        b = m.T @ (1.0 + conf_minus_one)
        try:
            this[row, :] = np.linalg.solve(a, b)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular normal equations at row {row}") from exc


def _sweep(this: np.ndarray, other: np.ndarray, indptr: np.ndarray,
           indices: np.ndarray, data: np.ndarray, reg: float, alpha: float,
           threads: int = 1) -> None:
    n_rows = this.shape[0]
    if threads <= 1 or n_rows < 2 * threads:
        _solve_rows(this, other, indptr, indices, data, reg, alpha, 0, n_rows)
    else:
        bounds = np.linspace(0, n_rows, threads + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_solve_rows, this, other, indptr, indices, data,
                            reg, alpha, int(lo), int(hi))
                for lo, hi in zip(bounds[:-1], bounds[1:]) if lo < hi
            ]
            for fut in futures:
                fut.result()
    if not np.isfinite(this).all():
        raise NumericalError("non-finite factors after half-sweep")


def half_sweep(side: str, model: AlsModel, interactions: InteractionMatrix,
               threads: int = 1) -> AlsModel:
    """One alternation step: re-solve all factor rows on one side.

    ``side`` is "users" or "items".  The opposite side's factors are left
    unchanged; the objective never increases.
    """
    hp = model.hyperparams
    if side == "users":
        _sweep(model.user_factors, model.item_factors, interactions.indptr,
               interactions.indices, interactions.data,
               hp.regularization, hp.alpha, threads)
    elif side == "items":
        indptr, rows, vals = _transpose_csr(interactions)
        _sweep(model.item_factors, model.user_factors, indptr, rows, vals,
               hp.regularization, hp.alpha, threads)
    else:
        raise ValueError(f"unknown side {side!r}")
    return model


def fit(interactions: InteractionMatrix, hyperparams: AlsHyperparams,
        threads: int = 1) -> AlsModel:
    """Train by alternating item-then-user half-sweeps for the configured
    number of iterations.  Deterministic given the seed, for any thread count.
    """
    hyperparams.validate()
    if interactions.nnz == 0:
        raise DataError("cannot fit ALS on an empty interaction matrix")
    k = hyperparams.factors
    item_factors = init_factors(interactions.n_items, k, hyperparams.seed)
    user_factors = init_factors(interactions.n_users, k, hyperparams.seed + 1)
    model = AlsModel(user_factors, item_factors, hyperparams)

    item_view = _transpose_csr(interactions)
    hp = hyperparams
    for iteration in range(hp.iterations):
        try:
            _sweep(model.item_factors, model.user_factors, *item_view,
                   hp.regularization, hp.alpha, threads)
            _sweep(model.user_factors, model.item_factors, interactions.indptr,
                   interactions.indices, interactions.data,
                   hp.regularization, hp.alpha, threads)
        except NumericalError as exc:
            raise NumericalError(f"iteration {iteration}: {exc}") from exc
    return model


def loss(model: AlsModel, interactions: InteractionMatrix) -> float:
    """Exact objective over all user-item pairs via the Gram identity.

    The weight-1, preference-0 contribution of every pair is
    sum_u x_u' (Y'Y) x_u; observed pairs are then corrected to their
    confidence-weighted value.  Cost O(nnz * k + (n_users + n_items) * k^2).
    """
    x = model.user_factors
    y = model.item_factors
    hp = model.hyperparams
    gram_y = y.T @ y
    full_term = float(np.sum((x @ gram_y) * x))

    rows = interactions.user_index_of_entries()
    scores = np.sum(x[rows] * y[interactions.indices], axis=1)
    conf = 1.0 + hp.alpha * interactions.data
    obs_correction = float(np.sum(conf * (1.0 - scores) ** 2 - scores ** 2))

    reg_term = hp.regularization * (float(np.sum(x * x)) + float(np.sum(y * y)))
    return full_term + obs_correction + reg_term


def _top_n_full(scores: np.ndarray, n: int) -> np.ndarray:
    """Top-n indices by descending score, ties by ascending index."""
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return order[:n]


def _top_n_partition(scores: np.ndarray, n: int) -> np.ndarray:
    """argpartition-based top-n with the same exact tie rule as a full sort."""
    if n >= scores.shape[0]:
        return _top_n_full(scores, n)
    part = np.argpartition(-scores, n - 1)[:n]
    boundary = scores[part].min()
    strict = np.flatnonzero(scores > boundary)
    # fill the remaining slots with boundary-tied items, lowest index first
    tied = np.flatnonzero(scores == boundary)[: n - strict.shape[0]]
    candidates = np.concatenate([strict, tied])
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order]


_PARTITION_THRESHOLD = 4096


def recommend(model: AlsModel, user: int, n: int,
              exclude: np.ndarray | set | None = None) -> list[tuple[int, float]]:
    """Ranked top-n (item, score) list for one user.

    Items in ``exclude`` are never returned; if fewer than n items remain,
    all remaining items are returned.  Ties break by ascending item index.
    """
    scores = model.item_factors @ model.user_factors[user]
    available = scores.shape[0]
    if exclude is not None:
        excl = np.fromiter(exclude, dtype=np.int64) if not isinstance(exclude, np.ndarray) \
            else exclude.astype(np.int64, copy=False)
        if excl.size:
            scores = scores.copy()
            scores[excl] = -np.inf
            available -= np.unique(excl).shape[0]
    n = min(n, available)
    if n <= 0:
        return []
    if scores.shape[0] > _PARTITION_THRESHOLD and n < scores.shape[0]:
        top = _top_n_partition(scores, n)
    else:
        top = _top_n_full(scores, n)
    return [(int(i), float(scores[i])) for i in top]


def save_model(model: AlsModel, path: str | Path) -> None:
    """Dump factor matrices with a small header (see README for the layout)."""
    hp = model.hyperparams
    np.savez(
        path,
        user_factors=model.user_factors,
        item_factors=model.item_factors,
        header=np.array([model.user_factors.shape[0], model.item_factors.shape[0],
                         hp.factors, hp.seed], dtype=np.int64),
        hyperparams=np.array([hp.regularization, hp.alpha, float(hp.iterations)]),
    )


def load_model(path: str | Path) -> AlsModel:
    with np.load(path) as archive:
        header = archive["header"]
        reg, alpha, iterations = archive["hyperparams"]
        hp = AlsHyperparams(factors=int(header[2]), regularization=float(reg),
                            iterations=int(iterations), alpha=float(alpha),
                            seed=int(header[3]))
        return AlsModel(archive["user_factors"].copy(),
                        archive["item_factors"].copy(), hp)
