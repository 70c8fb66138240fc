"""Scoring and top-M selection of identity trios within one category.

The shape difference of a trio is the mean of the six directed bending
energies among its three faces; large scores mark trios spanning a wide
non-rigid shape region. Trios are unordered, stored as strictly increasing
identity triples.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .bending import PairwiseEnergyTable
from .corpus import ExpressionLabel

_CHUNK = 131072


@dataclass(frozen=True)
class TrioScore:
    """An unordered identity triple with its shape-difference score."""

    category: ExpressionLabel
    ids: tuple[int, int, int]
    score: float

    def __post_init__(self):
        i, j, k = self.ids
        if not i < j < k:
            raise ValueError(f"trio ids must be strictly increasing, got {self.ids}")
        if not (np.isfinite(self.score) and self.score >= 0.0):
            raise ValueError(f"trio score must be finite and non-negative, got {self.score}")


def trio_score(table: PairwiseEnergyTable, i: int, j: int, k: int) -> TrioScore:
    """Mean of the six directed energies among identities i, j, k.

    Invariant to the order of the arguments: the sum is always accumulated
    over the sorted triple, so permuted calls return bit-identical scores.
    """
    if len({i, j, k}) != 3:
        raise ValueError(f"trio identities must be distinct, got ({i}, {j}, {k})")
    a, b, c = sorted((i, j, k))
    g = table.energies
    pa, pb, pc = table.index_of(a), table.index_of(b), table.index_of(c)
    score = (g[pa, pb] + g[pb, pa] + g[pa, pc] + g[pc, pa] + g[pb, pc] + g[pc, pb]) / 6.0
    return TrioScore(category=table.category, ids=(a, b, c), score=float(score))


def _merge_best(best, candidates, limit):
    """Keep the ``limit`` best rows by (score desc, ids asc); exact total order."""
    scores = np.concatenate([best[0], candidates[0]])
    ids = np.concatenate([best[1], candidates[1]])
    order = np.lexsort((ids[:, 2], ids[:, 1], ids[:, 0], -scores))[:limit]
    return scores[order], ids[order]


def select_top_trios(table: PairwiseEnergyTable, m: int) -> list[TrioScore]:
    """Enumerate all C(N, 3) trios and return the ``m`` highest-scoring ones.

    Results are sorted by score descending with ties broken by ascending
    identity triple, which makes the selection deterministic. Enumeration is
    chunked and merged through a bounded best-``m`` buffer rather than
    materializing every score.
    """
    if m < 0:
        raise ValueError(f"selection size must be non-negative, got {m}")
    n = len(table.face_ids)
    if n < 3:
        raise ValueError(f"category {table.category.key} has {n} faces; need at least 3")
    if m == 0:
        return []

    ids = np.asarray(table.face_ids)
    by_identity = np.argsort(ids, kind="stable")
    g = table.energies

    best_scores = np.empty(0)
    best_ids = np.empty((0, 3), dtype=np.int64)
    combos = itertools.combinations(by_identity, 3)
    while True:
        chunk = np.array(list(itertools.islice(combos, _CHUNK)), dtype=np.intp)
        if chunk.size == 0:
            break
        pa, pb, pc = chunk[:, 0], chunk[:, 1], chunk[:, 2]
        scores = (g[pa, pb] + g[pb, pa] + g[pa, pc] + g[pc, pa]
                  + g[pb, pc] + g[pc, pb]) / 6.0
        trio_ids = np.column_stack([ids[pa], ids[pb], ids[pc]]).astype(np.int64)
        best_scores, best_ids = _merge_best(
            (best_scores, best_ids), (scores, trio_ids), m)

    return [
        TrioScore(category=table.category, ids=(int(i), int(j), int(k)), score=float(s))
        for s, (i, j, k) in zip(best_scores, best_ids)
    ]


def save_trio_scores(path, trios) -> None:
    """Debug dump of trio scores as ``category,i,j,k,D`` CSV rows."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("category,i,j,k,D\n")
        for trio in trios:
            i, j, k = trio.ids
            fh.write(f"{trio.category.key},{i},{j},{k},{trio.score:.17g}\n")
