"""Score the user pool and materialize the expanded audience.

The expanded audience is the m highest-scoring users outside the seed; the
total order (score descending, id ascending) makes the selection equal the
subset of size m maximizing the summed posterior, with deterministic ties.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .training import SeedAudience
from .trees import TreeEnsemble, predict_scores
from .tsne import Embedding


@dataclass
class ExpansionResult:
    ranked: list  # (user id, score) sorted by score desc, id asc
    audience: np.ndarray  # ids of the first m entries
    m: int
    excluded_seed: np.ndarray
    manifest: dict = field(default_factory=dict)


def score_pool(model: TreeEnsemble, emb: Embedding, seed: SeedAudience):
    """One posterior score per non-seed user; returns a list of (id, score)."""
    in_seed = np.isin(emb.ids, seed.member_ids)
    pool_ids = emb.ids[~in_seed]
    if pool_ids.size == 0:
        raise DataError("pool is empty after excluding the seed")
    scores = predict_scores(model, emb.coords[~in_seed])
    return list(zip(pool_ids.tolist(), scores.tolist()))


def rank_scores(scores):
    """Sort (id, score) pairs by score descending then id ascending."""
    ids = np.asarray([s[0] for s in scores], dtype=np.int64)
    vals = np.asarray([s[1] for s in scores], dtype=np.float64)
    if len(np.unique(ids)) != ids.size:
        raise DataError("duplicate ids in score list")
    order = np.lexsort((ids, -vals))
    return ids[order], vals[order]


def expand(scores, m: int, seed: SeedAudience | None = None) -> ExpansionResult:
    """Select the top-m scored users under (score desc, id asc).

    When m exceeds the pool size the whole pool is returned and the manifest
    carries a truncation flag.
    """
    if m < 1:
        raise ConfigError("audience size m must be >= 1")
    ids, vals = rank_scores(scores)
    truncated = m > ids.size
    take = min(m, ids.size)
    excluded = seed.member_ids if seed is not None else np.empty(0, dtype=np.int64)
    return ExpansionResult(
        ranked=list(zip(ids.tolist(), vals.tolist())),
        audience=ids[:take].copy(),
        m=m,
        excluded_seed=excluded,
        manifest={"m": m, "truncated": truncated, "tie_rule": "score_desc_id_asc"},
    )


def resolve_audience_size(spec: str | int, n_users: int) -> int:
    """Turn an absolute count or a percentage string like '10%' into m."""
    if isinstance(spec, str) and spec.strip().endswith("%"):
        pct = float(spec.strip()[:-1])
        if pct <= 0:
            raise ConfigError(f"percentage m must be positive, got {spec!r}")
        return max(1, int(round(n_users * pct / 100.0)))
    m = int(spec)
    if m < 1:
        raise ConfigError(f"audience size must be >= 1, got {spec!r}")
    return m
