"""Filtered link-prediction ranking: MRR and Hits@K."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .kg import KnowledgeGraph, Triple
from .scoring import ModelParams, score_all_heads, score_all_tails

HITS_AT = (1, 3, 10)


class DimensionMismatch(ValueError):
    pass


@dataclass
class EvalReport:
    mrr: float
    hits_at: dict[int, float]
    side: str = "both"
    count: int = 0
    ranks: np.ndarray | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        out = {"mrr": self.mrr, "hits_at": {str(k): v for k, v in self.hits_at.items()},
               "side": self.side, "count": self.count}
        if self.ranks is not None:
            out["ranks"] = self.ranks.tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def to_text(self, title: str = "") -> str:
        head = f"{'':<10}{'MRR':>8}" + "".join(f"{'H@' + str(k):>8}" for k in sorted(self.hits_at))
        row = f"{title or self.side:<10}{self.mrr:>8.4f}" + "".join(
            f"{self.hits_at[k]:>8.4f}" for k in sorted(self.hits_at))
        return head + "\n" + row + "\n"


def ranks_from_scores(scores: np.ndarray, targets: np.ndarray, filtered: np.ndarray | None) -> np.ndarray:
    """Expected rank ``1 + greater + ties / 2`` of each target among unfiltered candidates.

    ``scores`` is ``(b, |E|)``; ``filtered`` marks candidates removed from the pool
    (the target itself must not be marked).
    """
    rows = np.arange(len(targets))
    target_scores = scores[rows, targets][:, None]
    live = np.ones_like(scores, dtype=bool) if filtered is None else ~filtered
    greater = np.sum((scores > target_scores) & live, axis=1)
    ties = np.sum((scores == target_scores) & live, axis=1) - 1
    return 1.0 + greater + ties / 2.0


def _filter_mask(g: KnowledgeGraph, queries: np.ndarray, side: str) -> np.ndarray:
    mask = np.zeros((len(queries), g.entity_count), dtype=bool)
    for i, (h, r, t) in enumerate(queries.tolist()):
        known = g.tails_of(h, r) if side == "tail" else g.heads_of(r, t)
        if known:
            mask[i, list(known)] = True
        mask[i, t if side == "tail" else h] = False
    return mask


def side_ranks(params: ModelParams, g: KnowledgeGraph, triples: np.ndarray, side: str,
               filtered: bool = True, batch_size: int = 512) -> np.ndarray:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    out = np.empty(len(triples))
    for start in range(0, len(triples), batch_size):
        q = triples[start:start + batch_size]
        if side == "tail":
            scores, targets = score_all_tails(params, q[:, 0], q[:, 1]), q[:, 2]
        elif side == "head":
            scores, targets = score_all_heads(params, q[:, 1], q[:, 2]), q[:, 0]
        else:
            raise ValueError(f"side must be 'head' or 'tail', got {side!r}")
        mask = _filter_mask(g, q, side) if filtered else None
        out[start:start + len(q)] = ranks_from_scores(scores, targets, mask)
    return out


def rank_one(params: ModelParams, query: Triple | tuple[int, int, int], side: str,
             g: KnowledgeGraph, filtered: bool = True) -> float:
    return float(side_ranks(params, g, np.array([query]), side, filtered)[0])


def summarize(ranks: np.ndarray, side: str = "both", keep_ranks: bool = False) -> EvalReport:
    ranks = np.asarray(ranks, dtype=float)
    return EvalReport(
        mrr=float(np.mean(1.0 / ranks)),
        hits_at={k: float(np.mean(ranks <= k)) for k in HITS_AT},
        side=side,
        count=len(ranks),
        ranks=ranks if keep_ranks else None,
    )


def evaluate(params: ModelParams, g: KnowledgeGraph, split: str = "test", side: str = "both",
             filtered: bool = True, keep_ranks: bool = False, triples: np.ndarray | None = None) -> EvalReport:
    """Rank every triple of ``split`` against all entities, per side."""
    if params.entity_embeddings.shape[0] != g.entity_count or \
            params.relation_embeddings.shape[0] != g.relation_count:
        raise DimensionMismatch("parameter tables do not match the graph's vocabulary")
    triples = g.split(split) if triples is None else np.asarray(triples, dtype=np.int64)
    if len(triples) == 0:
        raise ValueError(f"split {split!r} is empty")
    sides = ("head", "tail") if side == "both" else (side,)
    ranks = np.concatenate([side_ranks(params, g, triples, s, filtered) for s in sides])
    return summarize(ranks, side, keep_ranks)
