"""Two-layer MLP generator mapping Gaussian noise to synthetic entity embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class DimensionTooSmall(ValueError):
    pass


@dataclass
class GeneratorParams:
    W1: np.ndarray  # (hidden, d)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (d, hidden)
    b2: np.ndarray  # (d,)
    dropout_rate: float = 0.5

    def __post_init__(self) -> None:
        if self.W1.shape[0] < 1:
            raise DimensionTooSmall("generator hidden size must be at least 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def dimension(self) -> int:
        return self.W1.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "GeneratorParams":
        return GeneratorParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(),
                               self.dropout_rate)


class Tape(NamedTuple):
    z: np.ndarray
    pre_hidden: np.ndarray
    mask: np.ndarray  # dropout multiplier: 0 or 1/(1-rate); all ones at inference
    hidden: np.ndarray  # after ReLU and dropout
    output: np.ndarray


def hidden_size(d: int) -> int:
    return d // 8


def init_generator(d: int, dropout_rate: float = 0.5,
                   rng: np.random.Generator | None = None) -> GeneratorParams:
    hidden = hidden_size(d)
    if hidden < 1:
        raise DimensionTooSmall(f"d={d} gives hidden size d//8 = 0; need d >= 8")
    rng = np.random.default_rng() if rng is None else rng
    bound = np.sqrt(6.0 / (d + hidden))
    W1 = rng.uniform(-bound, bound, size=(hidden, d))
    W2 = rng.uniform(-bound, bound, size=(d, hidden))
    return GeneratorParams(W1, np.zeros(hidden), W2, np.zeros(d), dropout_rate)


def generate(gen: GeneratorParams, z: np.ndarray, mode: str = "inference",
             rng: np.random.Generator | None = None) -> tuple[np.ndarray, Tape]:
    """Forward pass ``tanh(W2 . dropout(relu(W1 z + b1)) + b2)`` over ``(..., d)`` noise."""
    z = np.asarray(z, dtype=float)
    pre_hidden = z @ gen.W1.T + gen.b1
    act = np.maximum(pre_hidden, 0.0)
    if mode == "train" and gen.dropout_rate > 0:
        if rng is None:
            raise ValueError("train-mode generation needs an rng for dropout")
        keep = rng.random(act.shape) >= gen.dropout_rate
        mask = keep / (1.0 - gen.dropout_rate)
    elif mode in ("train", "inference"):
        mask = np.ones_like(act)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    hidden = act * mask
    out = np.tanh(hidden @ gen.W2.T + gen.b2)
    return out, Tape(z, pre_hidden, mask, hidden, out)


def generator_backward(gen: GeneratorParams, tape: Tape,
                       grad_output: np.ndarray) -> tuple[GeneratorParams, np.ndarray]:
    """Backprop ``grad_output`` (same shape as the output); parameter grads are summed over leading axes."""
    d, h = gen.dimension, gen.hidden
    g_pre2 = np.asarray(grad_output, float) * (1.0 - tape.output ** 2)
    g2 = g_pre2.reshape(-1, d)
    hid = tape.hidden.reshape(-1, h)
    grad_W2 = g2.T @ hid
    grad_b2 = g2.sum(axis=0)
    g_hidden = g_pre2 @ gen.W2
    # ReLU'(0) := 0
    g_pre1 = g_hidden * tape.mask * (tape.pre_hidden > 0)
    g1 = g_pre1.reshape(-1, h)
    grad_W1 = g1.T @ tape.z.reshape(-1, d)
    grad_b1 = g1.sum(axis=0)
    grad_z = g_pre1 @ gen.W1
    return GeneratorParams(grad_W1, grad_b1, grad_W2, grad_b2, gen.dropout_rate), grad_z
