"""Planted-pattern knowledge graphs for desk-scale experiments.

Entities carry a hidden group code of ``bits`` bits. Relation ``r0`` links
``h`` to every ``t`` whose code is ``code(h)`` with bit 0 flipped, ``r1``
flips bit 1, and ``r2`` is their composition (both bits flipped). Only a fraction of the true facts is observed and split into
train/valid/test. The unobserved remainder are true facts that show up as
unlabeled corruptions during training.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kg import KnowledgeGraph, from_label_triples, write_triples


@dataclass
class PlantedGraph:
    train: list[tuple[str, str, str]]
    valid: list[tuple[str, str, str]]
    test: list[tuple[str, str, str]]
    hidden: list[tuple[str, str, str]]

    def graph(self) -> KnowledgeGraph:
        return from_label_triples(self.train, self.valid, self.test)[0]

    def write(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("train", "valid", "test"):
            write_triples(directory / f"{name}.txt", getattr(self, name))
        return directory


def planted_graph(n_entities: int = 300, bits: int = 4, observed: float = 0.12,
                  valid_share: float = 0.1, test_share: float = 0.1, seed: int = 0) -> PlantedGraph:
    if bits < 2:
        raise ValueError("need at least two code bits")
    rng = np.random.default_rng(seed)
    codes = rng.integers(2 ** bits, size=n_entities)
    flips = (0b01, 0b10, 0b11)
    members = {c: np.flatnonzero(codes == c) for c in range(2 ** bits)}

    truth = []
    for r, flip in enumerate(flips):
        for h in range(n_entities):
            for t in members[codes[h] ^ flip]:
                truth.append((h, r, int(t)))
    truth = np.array(truth)
    chosen = rng.permutation(len(truth))
    n_obs = int(round(observed * len(truth)))
    n_valid = int(round(valid_share * n_obs))
    n_test = int(round(test_share * n_obs))
    parts = np.split(chosen[:n_obs], [n_obs - n_valid - n_test, n_obs - n_test])

    def labels(idx):
        return [(f"e{h}", f"r{r}", f"e{t}") for h, r, t in truth[np.sort(idx)].tolist()]

    return PlantedGraph(labels(parts[0]), labels(parts[1]), labels(parts[2]), labels(chosen[n_obs:]))
