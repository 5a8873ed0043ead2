"""Unlabeled-triple corruption, generator noise and training batch assembly."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .kg import KnowledgeGraph, Triple

HEAD, TAIL = 0, 1
RETRY_FACTOR = 100


class EmptyCandidatePool(Exception):
    """No entity substitution yields an unknown triple (within the retry cap)."""


@dataclass
class PuBatch:
    positives: np.ndarray  # (B, 3)
    unlabeled: np.ndarray  # (B, N, 3)
    side: np.ndarray  # (B,) HEAD or TAIL: the slot replaced in unlabeled and synthetic triples
    noise: np.ndarray  # (B, M, d)
    from_negatives: np.ndarray  # (B, N) True where the slot holds an annotated true negative
    skipped: int = 0
    fallbacks: int = 0

    def __len__(self) -> int:
        return len(self.positives)


def sample_unlabeled(g: KnowledgeGraph, positive: Triple | tuple[int, int, int], n: int,
                     side: str | int, rng: np.random.Generator) -> list[Triple]:
    """Draw ``n`` corruptions of ``positive`` (with replacement) that are not known facts.

    Uses rejection sampling with at most ``100 * n`` draws.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    slot = 2 if side in ("tail", TAIL) else 0
    base = list(positive)
    out: list[Triple] = []
    for _ in range(RETRY_FACTOR * n):
        cand = list(base)
        cand[slot] = int(rng.integers(g.entity_count))
        if cand[2] not in g.tails_of(cand[0], cand[1]):
            out.append(Triple(*cand))
            if len(out) == n:
                return out
    raise EmptyCandidatePool(f"no unknown corruption of {tuple(positive)} on the {side} side")


def sample_noise(m: int, d: int, delta: float, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
    """Gaussian noise of standard deviation ``delta``; shape ``(m, d)`` or ``(batch, m, d)``."""
    if m < 1 or d < 1:
        raise ValueError("m and d must be >= 1")
    if not delta > 0:
        raise ValueError("delta must be positive")
    shape = (m, d) if batch is None else (batch, m, d)
    return rng.normal(0.0, delta, size=shape)


def corrupt_batch(g: KnowledgeGraph, positives: np.ndarray, side: np.ndarray, n: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised rejection sampling; returns ``(unlabeled (B, n, 3), ok (B,))``.

    Rows whose pool is still unfilled after ``100`` rounds (at most ``100 * n``
    draws each) come back with ``ok = False``.
    """
    B = len(positives)
    out = np.repeat(positives[:, None, :], n, axis=1)
    slot = np.where(side == TAIL, 2, 0)
    slot_b = np.broadcast_to(slot[:, None], (B, n))
    pending = np.ones((B, n), dtype=bool)
    rows = np.arange(B)[:, None].repeat(n, axis=1)
    cols = np.arange(n)[None, :].repeat(B, axis=0)
    for _ in range(RETRY_FACTOR):
        if not pending.any():
            break
        r, c = rows[pending], cols[pending]
        s = slot_b[pending]
        draws = rng.integers(g.entity_count, size=r.size)
        cand = positives[r].copy()
        cand[np.arange(r.size), s] = draws
        accept = ~g.is_known_array(cand)
        out[r[accept], c[accept]] = cand[accept]
        pending[r[accept], c[accept]] = False
    ok = ~pending.any(axis=1)
    return out, ok


class NegativeIndex:
    """Annotated true negatives keyed by ``(h, r)`` for tail slots and ``(r, t)`` for head slots."""

    def __init__(self, negatives: np.ndarray):
        by_hr: dict[tuple[int, int], list[int]] = defaultdict(list)
        by_rt: dict[tuple[int, int], list[int]] = defaultdict(list)
        for h, r, t in np.asarray(negatives).tolist():
            by_hr[(h, r)].append(t)
            by_rt[(r, t)].append(h)
        self.by_hr = {k: np.array(v) for k, v in by_hr.items()}
        self.by_rt = {k: np.array(v) for k, v in by_rt.items()}

    def candidates(self, positive, side: int) -> np.ndarray | None:
        h, r, t = (int(x) for x in positive)
        return self.by_hr.get((h, r)) if side == TAIL else self.by_rt.get((r, t))


def make_batch(g: KnowledgeGraph, positives: np.ndarray, n: int, m: int, d: int, delta: float,
               rng: np.random.Generator, head_tail_ratio: float = 1.0,
               negative_fraction: float = 0.0, negative_index: NegativeIndex | None = None) -> PuBatch:
    """Assemble a training batch.

    Each positive gets a head/tail coin (``P(head) = ratio / (1 + ratio)``),
    ``n`` unlabeled corruptions and ``m`` noise vectors. When annotated
    negatives are available, ``round(negative_fraction * n)`` of the slots
    are drawn from negatives sharing the positive's ``(h, r)`` or ``(r, t)``;
    positives without a match fall back to ordinary corruption.
    Positives with an exhausted candidate pool are dropped.
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    p_head = head_tail_ratio / (1.0 + head_tail_ratio)
    side = np.where(rng.random(len(positives)) < p_head, HEAD, TAIL)
    unlabeled, ok = corrupt_batch(g, positives, side, n, rng)
    from_neg = np.zeros((len(positives), n), dtype=bool)
    fallbacks = 0

    k = int(round(negative_fraction * n))
    if k > 0 and negative_index is not None:
        for i in range(len(positives)):
            pool = negative_index.candidates(positives[i], side[i])
            if pool is None or len(pool) == 0:
                fallbacks += 1
                continue
            picks = pool[rng.integers(len(pool), size=k)]
            unlabeled[i, :k, 2 if side[i] == TAIL else 0] = picks
            from_neg[i, :k] = True
            # a matched positive has a usable pool even if corruption failed
            ok[i] = ok[i] or k == n

    noise = sample_noise(m, d, delta, rng, batch=len(positives))
    return PuBatch(positives[ok], unlabeled[ok], side[ok], noise[ok], from_neg[ok],
                   skipped=int((~ok).sum()), fallbacks=fallbacks)
