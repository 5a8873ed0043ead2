"""Triple store: TSV ingestion, id vocabularies, splits and the filtered index."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class DataError(Exception):
    """Raised for unreadable or malformed triple files."""


@dataclass
class LoadReport:
    entity_count: int
    relation_count: int
    split_sizes: dict[str, int]
    cold_start_entities: int
    cold_start_relations: int
    negatives: int = 0
    dropped_negatives: int = 0

    def as_record(self) -> dict:
        return {"event": "load_graph", **self.__dict__}


@dataclass
class KnowledgeGraph:
    """Immutable id-mapped triple store.

    Splits are ``(n, 3)`` int64 arrays of ``(head, relation, tail)`` rows.
    """

    entity_labels: list[str]
    relation_labels: list[str]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    true_negatives: np.ndarray | None = None
    known_tails: dict[tuple[int, int], frozenset[int]] = field(init=False, repr=False)
    known_heads: dict[tuple[int, int], frozenset[int]] = field(init=False, repr=False)
    _known_keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        tails: dict[tuple[int, int], set[int]] = defaultdict(set)
        heads: dict[tuple[int, int], set[int]] = defaultdict(set)
        everything = self.all_triples()
        for h, r, t in everything.tolist():
            tails[(h, r)].add(t)
            heads[(r, t)].add(h)
        self.known_tails = {k: frozenset(v) for k, v in tails.items()}
        self.known_heads = {k: frozenset(v) for k, v in heads.items()}
        self._known_keys = np.unique(self.encode(everything))

    @property
    def entity_count(self) -> int:
        return len(self.entity_labels)

    @property
    def relation_count(self) -> int:
        return len(self.relation_labels)

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test]).reshape(-1, 3)

    def encode(self, triples: np.ndarray) -> np.ndarray:
        """Pack ``(..., 3)`` triples into unique int64 keys."""
        triples = np.asarray(triples, dtype=np.int64)
        n_e, n_r = self.entity_count, self.relation_count
        return (triples[..., 0] * n_r + triples[..., 1]) * n_e + triples[..., 2]

    def is_known_array(self, triples: np.ndarray) -> np.ndarray:
        """Vectorised membership in train, valid and test."""
        keys = self.encode(triples)
        if self._known_keys.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self._known_keys, keys)
        pos = np.minimum(pos, self._known_keys.size - 1)
        return self._known_keys[pos] == keys

    def tails_of(self, head: int, relation: int) -> frozenset[int]:
        return self.known_tails.get((head, relation), frozenset())

    def heads_of(self, relation: int, tail: int) -> frozenset[int]:
        return self.known_heads.get((relation, tail), frozenset())

    def save_vocab(self, path: str | Path) -> None:
        payload = {"entities": self.entity_labels, "relations": self.relation_labels}
        Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=1), encoding="utf-8")


def is_known(g: KnowledgeGraph, t: Triple | tuple[int, int, int]) -> bool:
    h, r, tail = t
    return tail in g.tails_of(h, r)


def load_vocab(path: str | Path) -> tuple[list[str], list[str]]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return list(payload["entities"]), list(payload["relations"])


def _read_rows(path: Path) -> list[tuple[str, str, str]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        rows.append((parts[0], parts[1], parts[2]))
    return rows


class _Vocab:
    def __init__(self, labels: Iterable[str] = ()):
        self.labels: list[str] = []
        self.index: dict[str, int] = {}
        for label in labels:
            self.get(label)

    def get(self, label: str) -> int:
        idx = self.index.get(label)
        if idx is None:
            idx = self.index[label] = len(self.labels)
            self.labels.append(label)
        return idx


def _to_array(rows, ents: _Vocab, rels: _Vocab) -> np.ndarray:
    out = np.empty((len(rows), 3), dtype=np.int64)
    for i, (h, r, t) in enumerate(rows):
        out[i] = (ents.get(h), rels.get(r), ents.get(t))
    return out


def from_label_triples(
    train: list[tuple[str, str, str]],
    valid: list[tuple[str, str, str]],
    test: list[tuple[str, str, str]],
    negatives: list[tuple[str, str, str]] | None = None,
) -> tuple[KnowledgeGraph, LoadReport]:
    """Build a graph from labelled triples; ids follow first appearance."""
    ents, rels = _Vocab(), _Vocab()
    arrays = {}
    for name, rows in zip(SPLITS, (train, valid, test)):
        arrays[name] = _to_array(rows, ents, rels)
        if name == "train":
            n_train_e, n_train_r = len(ents.labels), len(rels.labels)

    neg_array = None
    dropped = 0
    if negatives is not None:
        # Negatives must not grow the vocabulary and must stay disjoint from the splits.
        kept = [
            row for row in negatives
            if row[0] in ents.index and row[2] in ents.index and row[1] in rels.index
        ]
        dropped = len(negatives) - len(kept)
        neg_array = _to_array(kept, ents, rels)

    g = KnowledgeGraph(ents.labels, rels.labels, arrays["train"], arrays["valid"], arrays["test"])
    if neg_array is not None:
        clash = g.is_known_array(neg_array)
        dropped += int(clash.sum())
        g.true_negatives = neg_array[~clash]

    report = LoadReport(
        entity_count=g.entity_count,
        relation_count=g.relation_count,
        split_sizes={name: len(arrays[name]) for name in SPLITS},
        cold_start_entities=g.entity_count - n_train_e,
        cold_start_relations=g.relation_count - n_train_r,
        negatives=0 if g.true_negatives is None else len(g.true_negatives),
        dropped_negatives=dropped,
    )
    return g, report


def load_graph(
    train_path: str | Path,
    valid_path: str | Path,
    test_path: str | Path,
    negatives_path: str | Path | None = None,
) -> tuple[KnowledgeGraph, LoadReport]:
    """Load three TSV split files (and optionally annotated true negatives).

    Entities or relations that first appear outside ``train`` are kept and
    counted in the report as cold-start.
    """
    rows = [_read_rows(Path(p)) for p in (train_path, valid_path, test_path)]
    negatives = _read_rows(Path(negatives_path)) if negatives_path else None
    g, report = from_label_triples(*rows, negatives=negatives)
    logger.info(json.dumps(report.as_record()))
    if report.cold_start_entities:
        logger.warning("%d entities appear only in valid/test", report.cold_start_entities)
    return g, report


def load_dir(data_dir: str | Path, negatives_path: str | Path | None = None):
    """Load ``train.txt``/``valid.txt``/``test.txt`` from a dataset directory."""
    data_dir = Path(data_dir)
    paths = [data_dir / f"{name}.txt" for name in SPLITS]
    for p in paths:
        if not p.is_file():
            raise DataError(f"missing split file {p}")
    return load_graph(*paths, negatives_path=negatives_path)


def write_triples(path: str | Path, rows: Iterable[tuple[str, str, str]]) -> None:
    Path(path).write_text("".join(f"{h}\t{r}\t{t}\n" for h, r, t in rows), encoding="utf-8")
