"""Sparse interaction matrix, user attribute records, and dataset statistics.

The interaction matrix is stored CSR-style (indptr/indices/data) with dense
contiguous indices assigned in first-seen order, recorded in bidirectional
id maps.  It is immutable after construction and safe to share across
parallel readers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Iterator, Optional

import numpy as np

UserId = Hashable
ItemId = Hashable

GENDER_MALE = "m"
GENDER_FEMALE = "f"
GENDER_NA = "NA"


@dataclass
class UserAttributes:
    """Per-user demographic record plus derived usage and pop-index.

    ``usage`` and ``pop_index`` start unset and are filled by the popularity
    module once the interaction matrix exists.
    """

    user_id: UserId
    gender: str = GENDER_NA
    age: Optional[int] = None
    country: Optional[str] = None
    signup: Optional[str] = None
    usage: Optional[int] = None
    pop_index: Optional[int] = None


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_interactions: int
    sparsity: float


@dataclass(frozen=True)
class IdMap:
    """Bidirectional map between original ids and dense indices."""

    ids: tuple  # index -> original id
    index: dict  # original id -> index

    def __len__(self) -> int:
        return len(self.ids)


class InteractionMatrix:
    """Sparse user x item matrix of positive interaction strengths.

    Invariants: every stored strength is > 0, there are no duplicate
    (user, item) pairs, and entries within a row are sorted by item index.
    """

    __slots__ = ("n_users", "n_items", "indptr", "indices", "data")

    def __init__(self, n_users: int, n_items: int, indptr: np.ndarray,
                 indices: np.ndarray, data: np.ndarray):
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.indptr = indptr
        self.indices = indices
        self.data = data

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def user_items(self, user: int) -> np.ndarray:
        """Item indices of one user's row."""
        return self.indices[self.indptr[user]:self.indptr[user + 1]]

    def user_strengths(self, user: int) -> np.ndarray:
        return self.data[self.indptr[user]:self.indptr[user + 1]]

    def user_degree(self, user: int) -> int:
        return int(self.indptr[user + 1] - self.indptr[user])

    def iter_entries(self) -> Iterator[tuple[int, int, float]]:
        for u in range(self.n_users):
            lo, hi = self.indptr[u], self.indptr[u + 1]
            for k in range(lo, hi):
                yield u, int(self.indices[k]), float(self.data[k])

    def user_index_of_entries(self) -> np.ndarray:
        """Row index for every stored entry, aligned with indices/data."""
        return np.repeat(np.arange(self.n_users), np.diff(self.indptr))

    def drop_entries(self, mask: np.ndarray) -> "InteractionMatrix":
        """New matrix without the entries where ``mask`` is True.

        Index spaces (n_users, n_items) are preserved so factor models keep
        their dimensions.
        """
        keep = ~mask
        rows = self.user_index_of_entries()[keep]
        new_indptr = np.zeros(self.n_users + 1, dtype=np.int64)
        np.add.at(new_indptr, rows + 1, 1)
        np.cumsum(new_indptr, out=new_indptr)
        return InteractionMatrix(self.n_users, self.n_items, new_indptr,
                                 self.indices[keep].copy(), self.data[keep].copy())


def from_triples(
    triples: Iterable[tuple[UserId, ItemId, float]],
) -> tuple[InteractionMatrix, IdMap, IdMap]:
    """Build an interaction matrix from (user_id, item_id, strength) triples.

    Tolerant builder: indices are assigned in first-seen order, duplicate
    (user, item) pairs merge by summing strengths, and non-positive
    strengths are dropped.
    """
    user_index: dict = {}
    item_index: dict = {}
    user_ids: list = []
    item_ids: list = []
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []

    for user_id, item_id, strength in triples:
        strength = float(strength)
        if strength <= 0.0:
            continue
        u = user_index.get(user_id)
        if u is None:
            u = user_index[user_id] = len(user_ids)
            user_ids.append(user_id)
        i = item_index.get(item_id)
        if i is None:
            i = item_index[item_id] = len(item_ids)
            item_ids.append(item_id)
        rows.append(u)
        cols.append(i)
        vals.append(strength)

    n_users = len(user_ids)
    n_items = len(item_ids)
    row_arr = np.asarray(rows, dtype=np.int64)
    col_arr = np.asarray(cols, dtype=np.int64)
    val_arr = np.asarray(vals, dtype=np.float64)
    del rows, cols, vals

    indptr = np.zeros(n_users + 1, dtype=np.int64)
    if row_arr.size:
        # sort by (user, item), then merge duplicate cells by summing runs
        order = np.lexsort((col_arr, row_arr))
        row_arr = row_arr[order]
        col_arr = col_arr[order]
        val_arr = val_arr[order]
        first = np.empty(row_arr.size, dtype=bool)
        first[0] = True
        np.not_equal(row_arr[1:], row_arr[:-1], out=first[1:])
        first[1:] |= col_arr[1:] != col_arr[:-1]
        starts = np.flatnonzero(first)
        val_arr = np.add.reduceat(val_arr, starts)
        row_arr = row_arr[starts]
        col_arr = col_arr[starts]
        np.add.at(indptr, row_arr + 1, 1)
        np.cumsum(indptr, out=indptr)
    else:
        col_arr = np.empty(0, dtype=np.int64)
        val_arr = np.empty(0, dtype=np.float64)

    matrix = InteractionMatrix(n_users, n_items, indptr, col_arr, val_arr)
    umap = IdMap(tuple(user_ids), user_index)
    imap = IdMap(tuple(item_ids), item_index)
    return matrix, umap, imap


def stats(m: InteractionMatrix) -> DatasetStats:
    """Dataset-level counts and sparsity = 1 - nnz / (n_users * n_items)."""
    cells = m.n_users * m.n_items
    sparsity = 1.0 - m.nnz / cells if cells else 0.0
    return DatasetStats(m.n_users, m.n_items, m.nnz, sparsity)
