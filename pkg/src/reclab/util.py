"""Small shared helpers: seeding and ranking conventions."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, *labels) -> int:
    """Stable 63-bit seed derived from a root seed and a label path.

    All stage- and user-level generators are split from one root seed this
    way so that pipelines reproduce exactly regardless of execution order.
    """
    key = ":".join([str(root_seed)] + [str(x) for x in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def rng_for(root_seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, *labels))


def top_fraction_ids(ids: np.ndarray, values: np.ndarray, q: float) -> np.ndarray:
    """Ids in the top fraction ``q`` of ``values``.

    "Top q" means rank <= ceil(q * N) when sorted by value descending,
    ties broken by ascending id, so the cut is deterministic.
    """
    ids = np.asarray(ids)
    values = np.asarray(values, dtype=float)
    if ids.size == 0 or q <= 0:
        return ids[:0]
    n_top = int(np.ceil(q * ids.size))
    order = np.lexsort((ids, -values))
    return np.sort(ids[order[:n_top]])
