"""Independent reference implementations used to verify the production code.

Everything here is deliberately written through a different code path than
the package: dict-based feature accumulation instead of list buckets, an
iterative path enumerator instead of the recursive one, plain-loop cosine.
Production must agree with these, not the other way around.
"""

from __future__ import annotations

import math
import re
import zlib

_SPLIT = re.compile(r"[^0-9a-z]+")


def ref_mock_embedding(text: str, dim: int) -> list[float]:
    """Reference for the hashing mock embedding: token + trigram bucket counts."""
    counts: dict[int, float] = {}
    for token in _SPLIT.split(text.lower()):
        if not token:
            continue
        features = [token] + [token[i : i + 3] for i in range(len(token) - 2)]
        for feature in features:
            bucket = zlib.crc32(feature.encode("utf-8")) % dim
            counts[bucket] = counts.get(bucket, 0.0) + 1.0
    norm = math.sqrt(sum(v * v for v in counts.values()))
    return [counts.get(i, 0.0) / norm for i in range(dim)]


def ref_cosine(a: list[float], b: list[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return dot / (na * nb)


def ref_mock_similarity(text_a: str, text_b: str, dim: int = 64) -> float:
    return ref_cosine(ref_mock_embedding(text_a, dim), ref_mock_embedding(text_b, dim))


def enumerate_all_paths(g, start: int, max_len: int, direction: str = "forward"):
    """All simple paths of length 1..max_len as (labels, entities, steps) tuples.

    Iterative DFS, independent of the package's recursive enumerator.
    """
    results = []
    stack = [((), (start,), ())]
    while stack:
        labels, entities, steps = stack.pop()
        if len(steps) >= max_len:
            continue
        for rid, nid in g.neighbors(entities[-1], direction):
            if nid in entities:
                continue
            label = g.relation_label(rid)
            node = (labels + (label,), entities + (nid,), steps + ((rid, nid),))
            results.append(node)
            stack.append(node)
    return results


def exhaustive_fixed_length_best(g, gateway, start, candidate_labels, direction="forward"):
    """Minimum mean-step-cost path of exactly len(candidate_labels) hops, with ties
    broken like the package: (cost, labels, entities)."""
    n = len(candidate_labels)
    best = None
    for labels, entities, steps in enumerate_all_paths(g, start, n, direction):
        if len(steps) != n:
            continue
        total = 0.0
        for label, cand in zip(labels, candidate_labels):
            total += 1.0 - gateway.similarity(label, cand)
        mean = total / n
        key = (mean, labels, entities)
        if best is None or key < best[0]:
            best = (key, labels, entities, steps, mean)
    return best
