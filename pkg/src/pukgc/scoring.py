"""Triple scoring functions and the discriminator parameter tables.

All functions broadcast over leading axes: vectors have shape ``(..., d)``
and scores shape ``(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

DISTMULT = "distmult"
TRANSE = "transe"
SCORING_KINDS = (DISTMULT, TRANSE)


@dataclass
class ModelParams:
    entity_embeddings: np.ndarray  # (|E|, d)
    relation_embeddings: np.ndarray  # (|R|, d), diagonal of each relation matrix
    scoring_kind: str = DISTMULT

    def __post_init__(self) -> None:
        if self.scoring_kind not in SCORING_KINDS:
            raise ValueError(f"unknown scoring kind {self.scoring_kind!r}")
        if self.entity_embeddings.shape[1] != self.relation_embeddings.shape[1]:
            raise ValueError("entity and relation embeddings differ in dimension")

    @property
    def dimension(self) -> int:
        return self.entity_embeddings.shape[1]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.entity_embeddings.copy(), self.relation_embeddings.copy(), self.scoring_kind
        )


class ScoreWithGrad(NamedTuple):
    value: np.ndarray | float
    grad_head: np.ndarray
    grad_relation: np.ndarray
    grad_tail: np.ndarray


def score_vectors(kind: str, head: np.ndarray, rel: np.ndarray, tail: np.ndarray) -> np.ndarray:
    if kind == DISTMULT:
        return np.sum(head * rel * tail, axis=-1)
    if kind == TRANSE:
        return -np.linalg.norm(head + rel - tail, axis=-1)
    raise ValueError(f"unknown scoring kind {kind!r}")


def score_vectors_with_grad(kind: str, head, rel, tail) -> ScoreWithGrad:
    head, rel, tail = np.broadcast_arrays(
        np.asarray(head, dtype=float), np.asarray(rel, dtype=float), np.asarray(tail, dtype=float)
    )
    if kind == DISTMULT:
        return ScoreWithGrad(np.sum(head * rel * tail, axis=-1), rel * tail, head * tail, head * rel)
    if kind == TRANSE:
        diff = head + rel - tail
        dist = np.linalg.norm(diff, axis=-1)
        # zero distance: use the zero subgradient
        safe = np.where(dist > 0, dist, 1.0)[..., None]
        unit = np.where(dist[..., None] > 0, diff / safe, 0.0)
        return ScoreWithGrad(-dist, -unit, -unit, unit)
    raise ValueError(f"unknown scoring kind {kind!r}")


def score(params: ModelParams, head_vec, rel_vec, tail_vec) -> float:
    return float(score_vectors(params.scoring_kind, np.asarray(head_vec, float),
                               np.asarray(rel_vec, float), np.asarray(tail_vec, float)))


def score_with_grad(params: ModelParams, head_vec, rel_vec, tail_vec) -> ScoreWithGrad:
    out = score_vectors_with_grad(params.scoring_kind, head_vec, rel_vec, tail_vec)
    return out._replace(value=float(out.value)) if np.ndim(out.value) == 0 else out


def score_triples(params: ModelParams, triples: np.ndarray) -> np.ndarray:
    triples = np.asarray(triples, dtype=np.int64)
    E, R = params.entity_embeddings, params.relation_embeddings
    return score_vectors(params.scoring_kind, E[triples[..., 0]], R[triples[..., 1]], E[triples[..., 2]])


def score_all_tails(params: ModelParams, heads: np.ndarray, rels: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Scores of ``(h, r, e)`` for every entity ``e``; shape ``(len(heads), |E|)``."""
    E, R = params.entity_embeddings, params.relation_embeddings
    if params.scoring_kind == DISTMULT:
        return (E[heads] * R[rels]) @ E.T
    query = E[heads] + R[rels]
    return _neg_dist_all(query, E, chunk)


def score_all_heads(params: ModelParams, rels: np.ndarray, tails: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Scores of ``(e, r, t)`` for every entity ``e``; shape ``(len(tails), |E|)``."""
    E, R = params.entity_embeddings, params.relation_embeddings
    if params.scoring_kind == DISTMULT:
        return (R[rels] * E[tails]) @ E.T
    # -||e + r - t|| = -||e - (t - r)||
    query = E[tails] - R[rels]
    return _neg_dist_all(query, E, chunk)


def _neg_dist_all(query: np.ndarray, E: np.ndarray, chunk: int) -> np.ndarray:
    out = np.empty((len(query), len(E)))
    for start in range(0, len(query), chunk):
        q = query[start:start + chunk]
        out[start:start + chunk] = -np.linalg.norm(q[:, None, :] - E[None, :, :], axis=-1)
    return out


def init_params(entity_count: int, relation_count: int, d: int, scoring_kind: str = DISTMULT,
                rng: np.random.Generator | None = None) -> ModelParams:
    """Uniform initialisation in ``[-6/sqrt(d), 6/sqrt(d)]``."""
    if min(entity_count, relation_count, d) < 1:
        raise ValueError("entity_count, relation_count and d must be positive")
    rng = np.random.default_rng() if rng is None else rng
    bound = 6.0 / np.sqrt(d)
    ent = rng.uniform(-bound, bound, size=(entity_count, d))
    rel = rng.uniform(-bound, bound, size=(relation_count, d))
    return ModelParams(ent, rel, scoring_kind)
