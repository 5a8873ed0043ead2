"""Binary checkpoint container.

Layout (little-endian)::

    b"PUKGC1"
    u32 version, u8 scoring kind, u32 d, u32 |E|, u32 |R|
    f64[|E| * d] entity table, f64[|R| * d] relation table (row-major)
    |E| + |R| labels, each u32 byte length + UTF-8 bytes
    tagged sections until EOF: 4-byte tag, u64 payload length, payload

The only section defined so far is ``GEN1`` (generator parameters):
u32 d, u32 hidden, f64 dropout, then W1, b1, W2, b2 as f64 arrays.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .generator import GeneratorParams
from .scoring import SCORING_KINDS, ModelParams

MAGIC = b"PUKGC1"
VERSION = 1
GEN_TAG = b"GEN1"


class CheckpointError(Exception):
    pass


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _read_f64(buf: io.BytesIO, shape: tuple[int, ...]) -> np.ndarray:
    n = int(np.prod(shape))
    raw = buf.read(8 * n)
    if len(raw) != 8 * n:
        raise CheckpointError("truncated checkpoint")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def _read(buf: io.BytesIO, fmt: str):
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise CheckpointError("truncated checkpoint")
    return struct.unpack(fmt, raw)


def dumps(params: ModelParams, entity_labels: list[str], relation_labels: list[str],
          gen: GeneratorParams | None = None) -> bytes:
    E, R = params.entity_embeddings, params.relation_embeddings
    if len(entity_labels) != E.shape[0] or len(relation_labels) != R.shape[0]:
        raise CheckpointError("label maps do not match the parameter tables")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<IBIII", VERSION, SCORING_KINDS.index(params.scoring_kind),
                          params.dimension, E.shape[0], R.shape[0]))
    out.write(_f64(E))
    out.write(_f64(R))
    for label in list(entity_labels) + list(relation_labels):
        raw = label.encode("utf-8")
        out.write(struct.pack("<I", len(raw)))
        out.write(raw)
    if gen is not None:
        payload = struct.pack("<IId", gen.dimension, gen.hidden, gen.dropout_rate)
        payload += b"".join(_f64(a) for a in (gen.W1, gen.b1, gen.W2, gen.b2))
        out.write(GEN_TAG + struct.pack("<Q", len(payload)) + payload)
    return out.getvalue()


def loads(data: bytes):
    """Returns ``(params, entity_labels, relation_labels, generator_or_None)``."""
    buf = io.BytesIO(data)
    if buf.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic header")
    version, kind, d, n_e, n_r = _read(buf, "<IBIII")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    E = _read_f64(buf, (n_e, d))
    R = _read_f64(buf, (n_r, d))
    labels = []
    for _ in range(n_e + n_r):
        (length,) = _read(buf, "<I")
        labels.append(buf.read(length).decode("utf-8"))
    gen = None
    while True:
        tag = buf.read(4)
        if not tag:
            break
        (length,) = _read(buf, "<Q")
        payload = io.BytesIO(buf.read(length))
        if tag == GEN_TAG:
            gd, hidden, rate = _read(payload, "<IId")
            gen = GeneratorParams(_read_f64(payload, (hidden, gd)), _read_f64(payload, (hidden,)),
                                  _read_f64(payload, (gd, hidden)), _read_f64(payload, (gd,)), rate)
        # unknown sections are skipped
    params = ModelParams(E, R, SCORING_KINDS[kind])
    return params, labels[:n_e], labels[n_e:], gen


def save(path: str | Path, params: ModelParams, entity_labels, relation_labels, gen=None) -> None:
    Path(path).write_bytes(dumps(params, entity_labels, relation_labels, gen))


def load(path: str | Path):
    return loads(Path(path).read_bytes())
