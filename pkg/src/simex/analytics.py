"""Rank statistics and greedy class pairing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class RankList:
    """Ids in rank order plus their (possibly fractional) 1-based ranks."""

    ids: tuple
    ranks: Mapping = field(default_factory=dict)

    def __post_init__(self):
        ids = tuple(self.ids)
        if len(set(ids)) != len(ids):
            raise ValueError("rank list ids must be unique")
        object.__setattr__(self, "ids", ids)
        if not self.ranks:
            object.__setattr__(self, "ranks", {k: float(i + 1) for i, k in enumerate(ids)})
        elif set(self.ranks) != set(ids):
            raise ValueError("ranks must cover exactly the listed ids")

    @classmethod
    def coerce(cls, x) -> "RankList":
        return x if isinstance(x, RankList) else cls(tuple(x))

    @property
    def has_ties(self) -> bool:
        return len(set(self.ranks.values())) != len(self.ranks)

    def reversed(self) -> "RankList":
        n = len(self.ids)
        return RankList(self.ids[::-1], {k: n + 1 - r for k, r in self.ranks.items()})

    def __len__(self):
        return len(self.ids)


def rank_of(values: Mapping, ascending: bool = True) -> RankList:
    """Rank ids by value. Tied values share the mean of their positions;
    the ordered id sequence breaks ties by id."""
    for k, v in values.items():
        if not math.isfinite(v):
            raise ValueError(f"non-finite value for {k!r}")
    sign = 1.0 if ascending else -1.0
    ordered = sorted(values, key=lambda k: (sign * values[k], str(k)))
    ranks = {}
    i = 0
    while i < len(ordered):
        j = i
        while j + 1 < len(ordered) and values[ordered[j + 1]] == values[ordered[i]]:
            j += 1
        r = (i + j) / 2.0 + 1.0
        for k in ordered[i:j + 1]:
            ranks[k] = r
        i = j + 1
    return RankList(tuple(ordered), ranks)


def spearman_rho(a, b) -> float:
    """Spearman's rank correlation between two rankings of the same ids.

    Tie-free inputs use 1 - 6 sum(d^2) / (n (n^2 - 1)); otherwise Pearson's r
    on the fractional ranks.
    """
    a, b = RankList.coerce(a), RankList.coerce(b)
    if set(a.ids) != set(b.ids):
        raise ValueError(f"id sets differ: {sorted(map(str, set(a.ids) ^ set(b.ids)))}")
    n = len(a.ids)
    if n < 2:
        raise ValueError("need at least two ids")
    ids = a.ids
    ra = np.array([a.ranks[k] for k in ids])
    rb = np.array([b.ranks[k] for k in ids])
    if not (a.has_ties or b.has_ties):
        d2 = float(np.sum((ra - rb) ** 2))
        return 1.0 - 6.0 * d2 / (n * (n * n - 1))
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(np.sum(ra * ra)) * float(np.sum(rb * rb)))
    if denom == 0:
        raise ValueError("spearman rho undefined: one ranking is constant")
    return float(np.sum(ra * rb)) / denom


@dataclass
class PairingResult:
    pairs: list  # (row id, col id, cost) in selection order
    unpaired_rows: list
    unpaired_cols: list

    @property
    def total(self) -> float:
        return math.fsum(c for _, _, c in self.pairs)

    def as_dict(self) -> dict:
        return {"pairs": [[i, k, c] for i, k, c in self.pairs],
                "unpaired_rows": list(self.unpaired_rows), "unpaired_cols": list(self.unpaired_cols)}


def greedy_pairing(costs, row_ids: Sequence | None = None, col_ids: Sequence | None = None) -> PairingResult:
    """Pick the cheapest unused (row, col) cell until one side is exhausted.

    Ties go to the smaller row index, then the smaller column index. This is
    greedy selection, not an optimal assignment.
    """
    c = np.array(costs, dtype=np.float64)
    if c.ndim != 2 or 0 in c.shape:
        raise ValueError(f"cost matrix must be 2-D and non-empty, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix has non-finite entries")
    rows = list(range(c.shape[0])) if row_ids is None else list(row_ids)
    cols = list(range(c.shape[1])) if col_ids is None else list(col_ids)
    if len(rows) != c.shape[0] or len(cols) != c.shape[1]:
        raise ValueError("id lists do not match cost matrix shape")
    work = c.copy()
    used_r, used_c = set(), set()
    pairs = []
    for _ in range(min(c.shape)):
        flat = int(np.argmin(work))  # first minimum in row-major order
        i, k = divmod(flat, c.shape[1])
        pairs.append((rows[i], cols[k], float(c[i, k])))
        used_r.add(i)
        used_c.add(k)
        work[i, :] = np.inf
        work[:, k] = np.inf
    return PairingResult(pairs,
                         [rows[i] for i in range(c.shape[0]) if i not in used_r],
                         [cols[k] for k in range(c.shape[1]) if k not in used_c])
