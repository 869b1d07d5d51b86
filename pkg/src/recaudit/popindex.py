"""The pop-index user statistic and the usage attribute.

The pop-index is an h-index-style measure of how mainstream a user's
consumption is: the largest integer p in [0, 100] such that at least p%
of the user's items have also been consumed by at least p% of the other
users.  It depends only on the interaction support, not on strengths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingest import PROVENANCE_ML1M
from .interactions import InteractionMatrix, UserAttributes


@dataclass(frozen=True)
class ItemPopularity:
    user_counts: np.ndarray  # per item: number of distinct users with an entry
    n_users: int


def item_user_counts(m: InteractionMatrix) -> ItemPopularity:
    """Distinct-user count per item (entries are unique per user-item pair)."""
    counts = np.bincount(m.indices, minlength=m.n_items).astype(np.int64)
    return ItemPopularity(user_counts=counts, n_users=m.n_users)


def pop_index(user: int, m: InteractionMatrix, pop: ItemPopularity) -> int:
    """Largest p such that >= p% of the user's items have coverage >= p.

    Coverage of an item is the percentage of *other* users who interacted
    with it: 100 * (count - 1) / (n_users - 1), the focal user being
    excluded from both sides.  p = 0 always qualifies.
    """
    items = m.user_items(user)
    n_items = len(items)
    if n_items == 0:
        raise ValueError(f"user {user} has no items")
    if pop.n_users < 2:
        return 0
    coverage = 100.0 * (pop.user_counts[items] - 1) / (pop.n_users - 1)
    coverage_sorted = np.sort(coverage)
    for p in range(100, -1, -1):
        # count of items with coverage >= p, via the sorted array
        n_covered = n_items - np.searchsorted(coverage_sorted, p, side="left")
        if 100 * n_covered >= p * n_items:
            return p
    return 0


def usage(user: int, m: InteractionMatrix, provenance: str) -> int:
    """Total listens (play-count datasets) or number of rated items (ML1M)."""
    if provenance == PROVENANCE_ML1M:
        return int(m.user_degree(user))
    return int(round(float(np.sum(m.user_strengths(user)))))


def fill_attributes(attributes: Sequence[UserAttributes], m: InteractionMatrix,
                    user_index: dict, provenance: str) -> None:
    """Fill usage and pop_index on every attribute record with a matrix row.

    Users absent from the matrix, or with an empty row, keep both fields
    unset.
    """
    pop = item_user_counts(m)
    for attr in attributes:
        u = user_index.get(attr.user_id)
        if u is None or m.user_degree(u) == 0:
            continue
        attr.usage = usage(u, m, provenance)
        attr.pop_index = pop_index(u, m, pop)
