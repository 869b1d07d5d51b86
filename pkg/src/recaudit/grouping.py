"""User grouping schemes: categorical attributes, age bucketing variants,
country buckets by prevalence and GDP, the last-digit control, and balanced
sampling.

Every scheme assigns each user exactly one label; users whose source
attribute is missing get the distinguished "N/A" label, which significance
testing later drops.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .ingest import GdpTable
from .interactions import UserAttributes, UserId
from .util import derive_seed

log = logging.getLogger(__name__)

NA_LABEL = "N/A"


@dataclass
class GroupAssignment:
    name: str
    labels: list[str]  # presentation order; N/A last when present
    by_user: dict = field(default_factory=dict)  # user_id -> label

    def sizes(self) -> dict[str, int]:
        counts = {label: 0 for label in self.labels}
        for label in self.by_user.values():
            counts[label] += 1
        return counts

    def members(self, label: str) -> list:
        return [uid for uid, lab in self.by_user.items() if lab == label]

    def non_na_labels(self) -> list[str]:
        return [label for label in self.labels if label != NA_LABEL]


def _finish(name: str, by_user: dict, ordered_labels: list[str]) -> GroupAssignment:
    """Drop empty labels, keep N/A last, and package the assignment."""
    present = {label for label in by_user.values()}
    labels = [lab for lab in ordered_labels if lab in present and lab != NA_LABEL]
    if NA_LABEL in present:
        labels.append(NA_LABEL)
    return GroupAssignment(name=name, labels=labels, by_user=by_user)


def _fmt_value(v) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def bucket_categorical(name: str, values: Mapping[UserId, Optional[str]]) -> GroupAssignment:
    """One group per distinct value, ordered by descending size; missing -> N/A."""
    by_user: dict = {}
    counts: dict[str, int] = {}
    for uid, value in values.items():
        label = NA_LABEL if value is None else str(value)
        by_user[uid] = label
        if label != NA_LABEL:
            counts[label] = counts.get(label, 0) + 1
    ordered = sorted(counts, key=lambda lab: (-counts[lab], lab))
    return _finish(name, by_user, ordered)


def bucket_from_brackets(name: str, values: Mapping[UserId, Optional[int]],
                         lower_bounds: Sequence[int]) -> GroupAssignment:
    """Bucket by a configured bracket list of lower bounds (e.g. the ML1M
    age codes).  Values below the first bound fall into the first bracket.
    """
    bounds = sorted(lower_bounds)
    labels = []
    for i, lo in enumerate(bounds):
        if i + 1 < len(bounds):
            labels.append(f"{lo}-{bounds[i + 1] - 1}")
        else:
            labels.append(f"{lo}+")
    by_user: dict = {}
    for uid, value in values.items():
        if value is None:
            by_user[uid] = NA_LABEL
        else:
            idx = int(np.searchsorted(bounds, value, side="right")) - 1
            by_user[uid] = labels[max(idx, 0)]
    return _finish(name, by_user, labels)


def bucket_equal_range(name: str, values: Mapping[UserId, Optional[int]],
                       width: int, anchor: Optional[int] = None) -> GroupAssignment:
    """Uniform-width bins [lo, lo+width) anchored at ``anchor`` (default:
    the minimum observed value).  Intended for integer attributes like age.
    """
    if width <= 0:
        raise ValueError("bin width must be positive")
    present = [v for v in values.values() if v is not None]
    by_user: dict = {}
    if not present:
        by_user = {uid: NA_LABEL for uid in values}
        return _finish(name, by_user, [])
    lo0 = min(present) if anchor is None else anchor
    n_bins = (max(present) - lo0) // width + 1
    labels = [f"{lo0 + b * width}-{lo0 + (b + 1) * width - 1}" for b in range(n_bins)]
    for uid, value in values.items():
        if value is None:
            by_user[uid] = NA_LABEL
        else:
            by_user[uid] = labels[min(max((value - lo0) // width, 0), n_bins - 1)]
    return _finish(name, by_user, labels)


def bucket_equal_count(name: str, values: Mapping[UserId, Optional[float]],
                       k: int) -> GroupAssignment:
    """Roughly equal-population bins of a numeric attribute.

    Boundaries sit at ranks i*n/k; a value is never split across bins
    (whole tie classes are pushed into the lower bin), so sizes are only
    approximately equal.  If fewer than k distinct values exist the result
    has fewer bins, with a warning.
    """
    if k < 2:
        raise ValueError("equal-count bucketing needs k >= 2")
    items = [(uid, v) for uid, v in values.items() if v is not None]
    by_user: dict = {uid: NA_LABEL for uid, v in values.items() if v is None}
    if len(items) < k:
        raise ValueError(f"need at least {k} non-missing values, have {len(items)}")
    sorted_vals = np.sort(np.array([v for _, v in items], dtype=np.float64))
    n = len(sorted_vals)

    boundaries = [0]
    for i in range(1, k):
        b = (i * n) // k
        if 0 < b < n and sorted_vals[b - 1] == sorted_vals[b]:
            b = int(np.searchsorted(sorted_vals, sorted_vals[b - 1], side="right"))
        if boundaries[-1] < b < n:
            boundaries.append(b)
    boundaries.append(n)
    if len(boundaries) - 1 < k:
        log.warning("%s: ties reduce %d requested bins to %d", name, k,
                    len(boundaries) - 1)

    upper_values = []
    labels = []
    for start, end in zip(boundaries[:-1], boundaries[1:]):
        lo, hi = sorted_vals[start], sorted_vals[end - 1]
        upper_values.append(hi)
        labels.append(f"{_fmt_value(lo)}-{_fmt_value(hi)}" if lo != hi else _fmt_value(lo))
    upper = np.array(upper_values)
    for uid, v in items:
        idx = int(np.searchsorted(upper, v, side="left"))
        by_user[uid] = labels[min(idx, len(labels) - 1)]
    return _finish(name, by_user, labels)


PREVALENCE_LABELS = ("low", "medium", "high")


def _tercile_labels(k: int) -> list[str]:
    if k == 3:
        return list(PREVALENCE_LABELS)
    return [f"bucket{i + 1}" for i in range(k)]


def bucket_countries_by_prevalence(name: str, attributes: Sequence[UserAttributes],
                                   k: int = 3) -> GroupAssignment:
    """Bucket countries by how many users they contribute, low to high.

    Countries are walked in ascending user count; each bucket greedily
    accumulates countries while that brings its total closer to an equal
    share of users, always leaving at least one country per later bucket.
    The most-represented countries therefore land in "high".
    """
    counts: dict[str, int] = {}
    for attr in attributes:
        if attr.country is not None:
            counts[attr.country] = counts.get(attr.country, 0) + 1
    labels = _tercile_labels(k)
    by_user: dict = {}
    if not counts:
        by_user = {a.user_id: NA_LABEL for a in attributes}
        return _finish(name, by_user, labels)

    ordered = sorted(counts, key=lambda c: (counts[c], c))
    country_bucket: dict[str, str] = {}
    pos = 0
    remaining_total = sum(counts.values())
    for j in range(k):
        remaining_buckets = k - j
        if pos >= len(ordered):
            break
        if remaining_buckets == 1:
            chosen = ordered[pos:]
            pos = len(ordered)
        else:
            target = remaining_total / remaining_buckets
            total = 0
            chosen = []
            while pos < len(ordered):
                c = ordered[pos]
                must_reserve = len(ordered) - (pos + 1) < remaining_buckets - 1
                if chosen and (must_reserve or
                               abs(total + counts[c] - target) >= abs(total - target)):
                    break
                chosen.append(c)
                total += counts[c]
                pos += 1
            remaining_total -= total
        for c in chosen:
            country_bucket[c] = labels[j]

    for attr in attributes:
        if attr.country is None or attr.country not in country_bucket:
            by_user[attr.user_id] = NA_LABEL
        else:
            by_user[attr.user_id] = country_bucket[attr.country]
    return _finish(name, by_user, labels)


def bucket_countries_by_gdp(name: str, attributes: Sequence[UserAttributes],
                            gdp: GdpTable, k: int = 3) -> GroupAssignment:
    """Bucket countries into GDP-per-capita terciles (by country count).

    Users inherit their country's bucket; countries absent from the table
    and users without a country go to N/A.
    """
    countries = sorted({a.country for a in attributes if a.country is not None})
    with_gdp = [(gdp.lookup(c), c) for c in countries]
    with_gdp = [(g, c) for g, c in with_gdp if g is not None]
    with_gdp.sort()
    labels = _tercile_labels(k)
    country_bucket: dict[str, str] = {}
    if with_gdp:
        chunks = np.array_split(np.arange(len(with_gdp)), k)
        for j, chunk in enumerate(chunks):
            for idx in chunk:
                country_bucket[with_gdp[idx][1]] = labels[j]
    by_user = {
        a.user_id: country_bucket.get(a.country, NA_LABEL) if a.country else NA_LABEL
        for a in attributes
    }
    return _finish(name, by_user, labels)


def control_last_digit(name: str, user_ids: Sequence[UserId]) -> GroupAssignment:
    """Control grouping by the last decimal digit of a numeric id, or the
    last hex character of a sha1-style id.  Should predict nothing.
    """
    by_user: dict = {}
    for uid in user_ids:
        text = str(uid)
        by_user[uid] = text[-1].lower() if text else NA_LABEL
    present = sorted({lab for lab in by_user.values() if lab != NA_LABEL})
    return _finish(name, by_user, present)


def bucket_integer_values(name: str, values: Mapping[UserId, Optional[int]],
                          merge_at: int = 13) -> GroupAssignment:
    """One group per raw integer value, merging everything >= merge_at
    into a single top group (pop-index presentation).
    """
    top = f"{merge_at}+"
    by_user: dict = {}
    seen: set[int] = set()
    for uid, v in values.items():
        if v is None:
            by_user[uid] = NA_LABEL
        elif v >= merge_at:
            by_user[uid] = top
        else:
            by_user[uid] = str(int(v))
            seen.add(int(v))
    labels = [str(v) for v in sorted(seen)]
    if any(lab == top for lab in by_user.values()):
        labels.append(top)
    return _finish(name, by_user, labels)


def balanced_sample(assignment: GroupAssignment, seed: int) -> list:
    """Equal-size seeded sample: min non-N/A group size users per group."""
    groups = {label: sorted(assignment.members(label), key=str)
              for label in assignment.non_na_labels()}
    groups = {label: members for label, members in groups.items() if members}
    if not groups:
        raise ValueError(f"{assignment.name}: no non-N/A groups to sample")
    m = min(len(members) for members in groups.values())
    sampled: list = []
    for label in assignment.non_na_labels():
        members = groups.get(label)
        if not members:
            continue
        rng = np.random.default_rng(derive_seed(seed, "balanced", assignment.name, label))
        picks = rng.choice(len(members), size=m, replace=False)
        sampled.extend(members[i] for i in sorted(picks))
    return sampled
