"""Synthesis of new corresponded faces as per-vertex trio centroids."""

from __future__ import annotations

import hashlib

import numpy as np

from .corpus import Corpus, CorpusError, ExpressionLabel, Face
from .trios import TrioScore


def synthetic_identity(category: ExpressionLabel, ids) -> int:
    """Stable 63-bit identity for a face synthesized from a trio.

    Derived by hashing the category key and the sorted identity triple, so
    the id is reproducible across runs and unique per (category, trio) for
    manifest bookkeeping.
    """
    a, b, c = sorted(int(v) for v in ids)
    digest = hashlib.sha256(f"{category.key}:{a}:{b}:{c}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def synthesize_face(corpus: Corpus, trio: TrioScore) -> Face:
    """Vertex-wise mean of the trio's three faces, labeled with their category.

    All three inputs belong to one expression category, so the centroid
    carries that category's label. The accumulation order is fixed by the
    sorted identity triple, making the result exactly invariant to how the
    trio was specified.
    """
    members = []
    for identity in trio.ids:
        try:
            members.append(corpus.face(trio.category, identity))
        except CorpusError as exc:
            raise CorpusError(f"trio {trio.ids} in {trio.category.key}: {exc}") from exc
    a, b, c = (m.vertices for m in members)
    # Shifted mean: exact when the three inputs coincide, and agrees with
    # (a + b + c) / 3 to a few ulps otherwise.
    vertices = a + ((b - a) + (c - a)) / 3.0
    return Face(
        vertices=vertices,
        identity=synthetic_identity(trio.category, trio.ids),
        expression=trio.category,
    )
