"""Alternating discriminator/generator training with sparse Adam."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import IO

import numpy as np

from . import checkpoint
from .evaluation import evaluate
from .game import SparseRows, forward_backward
from .generator import GeneratorParams, init_generator
from .kg import KnowledgeGraph
from .risk import ADVERSARIAL_MODES, CLAMP_POLICIES, MODES, InvalidPrior, check_prior
from .sampler import NegativeIndex, make_batch, sample_noise
from .scoring import SCORING_KINDS, ModelParams, init_params

logger = logging.getLogger(__name__)

PLUS_MODES = {"pn+": "pn", "puda+": "puda"}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class NonFiniteLoss(RuntimeError):
    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass
class TrainConfig:
    mode: str = "puda"
    scoring: str = "distmult"
    dim: int = 256
    n_unlabeled: int = 16
    m_synthetic: int = 4
    pi_p: float = 1e-5
    delta: float = 1.0
    lr_d: float = 1e-3
    lr_g: float = 1e-3
    l2: float = 0.0
    epochs: int = 100
    batch_size: int = 1024
    seed: int = 0
    clamp_policy: str = "defensive"
    eval_every: int = 5
    patience: int = 5
    head_tail_ratio: float = 1.0
    dropout: float = 0.5
    g_steps: int = 1
    negative_fraction: float = 0.5

    @property
    def base_mode(self) -> str:
        return PLUS_MODES.get(self.mode, self.mode)

    @property
    def uses_negatives(self) -> bool:
        return self.mode in PLUS_MODES

    def validate(self) -> "TrainConfig":
        if self.mode not in MODES and self.mode not in PLUS_MODES:
            raise ConfigError("mode", f"unknown mode {self.mode!r}")
        if self.scoring not in SCORING_KINDS:
            raise ConfigError("scoring", f"unknown scoring function {self.scoring!r}")
        try:
            check_prior(self.pi_p)
        except InvalidPrior as exc:
            raise ConfigError("pi-p", f"InvalidPrior: {exc}") from exc
        positive_ints = {"dim": self.dim, "n-unlabeled": self.n_unlabeled, "epochs": self.epochs,
                         "batch-size": self.batch_size, "eval-every": self.eval_every,
                         "patience": self.patience, "g-steps": self.g_steps}
        if self.base_mode in ADVERSARIAL_MODES:
            positive_ints["m-synthetic"] = self.m_synthetic
            if self.dim < 8:
                raise ConfigError("dim", "adversarial modes need dim >= 8 for the generator")
        for key, value in positive_ints.items():
            if int(value) != value or value < 1:
                raise ConfigError(key, f"must be a positive integer, got {value!r}")
        for key, value in {"lr-d": self.lr_d, "lr-g": self.lr_g, "delta": self.delta,
                           "head-tail-ratio": self.head_tail_ratio}.items():
            if not value > 0:
                raise ConfigError(key, f"must be positive, got {value!r}")
        if self.l2 < 0:
            raise ConfigError("l2", "must be non-negative")
        if self.clamp_policy not in CLAMP_POLICIES:
            raise ConfigError("clamp-policy", f"must be one of {CLAMP_POLICIES}")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout", "must lie in [0, 1)")
        if not 0 <= self.negative_fraction <= 1:
            raise ConfigError("negative-fraction", "must lie in [0, 1]")
        return self

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict, lr: float) -> None:
    """One bias-corrected Adam update, in place.

    Dense gradients update whole arrays. ``SparseRows`` gradients are lazy:
    only listed rows with a non-zero gradient have their moments and values
    touched. The bias correction uses the global step count.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, grad in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if isinstance(grad, SparseRows):
            nz = np.any(grad.values != 0, axis=1)
            rows, gv = grad.rows[nz], grad.values[nz]
            m[rows] = b1 * m[rows] + (1 - b1) * gv
            v[rows] = b2 * v[rows] + (1 - b2) * gv * gv
            p[rows] -= lr * (m[rows] / c1) / (np.sqrt(v[rows] / c2) + state.eps)
        else:
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad * grad
            p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class TrainResult:
    params: ModelParams
    generator: GeneratorParams | None
    history: list[dict]
    best_epoch: int
    best_valid_mrr: float | None


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "shuffle", "sample", "noise", "dropout")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, children)}


def _with_l2(grad: SparseRows, table: np.ndarray, l2: float) -> SparseRows:
    if l2 == 0:
        return grad
    return SparseRows(grad.rows, grad.values + 2.0 * l2 * table[grad.rows])


def _check_finite(name: str, value, batch) -> None:
    if not np.all(np.isfinite(value)):
        dump = {"quantity": name, "positives": batch.positives.tolist(),
                "unlabeled": batch.unlabeled.tolist(), "side": batch.side.tolist()}
        raise NonFiniteLoss(f"non-finite {name}", dump)


def train(g: KnowledgeGraph, cfg: TrainConfig, metrics: IO[str] | None = None,
          checkpoint_path: str | Path | None = None) -> TrainResult:
    """Run the alternating minimax loop and return the best validation snapshot."""
    cfg.validate()
    mode = cfg.base_mode
    adversarial = mode in ADVERSARIAL_MODES
    rngs = _streams(cfg.seed)
    params = init_params(g.entity_count, g.relation_count, cfg.dim, cfg.scoring, rngs["init"])
    gen = init_generator(cfg.dim, cfg.dropout, rngs["init"]) if adversarial else None
    d_state, g_state = AdamState(), AdamState()
    theta = {"entity": params.entity_embeddings, "relation": params.relation_embeddings}

    neg_index = None
    if cfg.uses_negatives:
        if g.true_negatives is None or len(g.true_negatives) == 0:
            raise ConfigError("negatives", f"mode {cfg.mode} needs annotated true negatives")
        neg_index = NegativeIndex(g.true_negatives)

    train_triples = g.train
    has_valid = len(g.valid) > 0
    best = (params.copy(), gen.copy() if gen else None)
    best_mrr, best_epoch, stale = -math.inf, 0, 0
    history: list[dict] = []

    for epoch in range(1, cfg.epochs + 1):
        order = rngs["shuffle"].permutation(len(train_triples))
        sums = {"objective": 0.0, "r_p_plus": 0.0, "r_p_minus": 0.0, "r_u_minus": 0.0,
                "r_star_minus": 0.0}
        n_batches = clamps = skipped = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = make_batch(g, train_triples[order[start:start + cfg.batch_size]],
                               cfg.n_unlabeled, max(cfg.m_synthetic, 1), cfg.dim, cfg.delta,
                               rngs["sample"], cfg.head_tail_ratio,
                               cfg.negative_fraction if neg_index else 0.0, neg_index)
            skipped += batch.skipped
            if len(batch) == 0:
                continue

            # discriminator: fix the generator, minimise
            step = forward_backward(params, gen, batch.positives, batch.unlabeled, batch.side,
                                    batch.noise, mode=mode, pi_p=cfg.pi_p,
                                    clamp_policy=cfg.clamp_policy, rng=rngs["dropout"])
            _check_finite("objective", step.breakdown.objective, batch)
            grads = {"entity": _with_l2(step.theta.entity, params.entity_embeddings, cfg.l2),
                     "relation": _with_l2(step.theta.relation, params.relation_embeddings, cfg.l2)}
            adam_step(d_state, theta, grads, cfg.lr_d)
            _check_finite("entity embeddings", params.entity_embeddings[grads["entity"].rows], batch)

            # generator: fix the discriminator, maximise on fresh noise
            if adversarial:
                for _ in range(cfg.g_steps):
                    noise = sample_noise(cfg.m_synthetic, cfg.dim, cfg.delta, rngs["noise"],
                                         batch=len(batch))
                    g_res = forward_backward(params, gen, batch.positives, batch.unlabeled,
                                             batch.side, noise, mode=mode, pi_p=cfg.pi_p,
                                             clamp_policy=cfg.clamp_policy, rng=rngs["dropout"],
                                             want_theta=False, want_omega=True)
                    adam_step(g_state, gen.arrays(), g_res.omega.arrays(), cfg.lr_g)
                    _check_finite("generator", gen.W2, batch)

            bd = step.breakdown
            n_batches += 1
            clamps += bd.clamp_active
            for key in sums:
                value = getattr(bd, key)
                sums[key] += 0.0 if value is None else value

        record = {"epoch": epoch, "mode": cfg.mode}
        record.update({k: (v / n_batches if n_batches else None) for k, v in sums.items()})
        if not adversarial:
            record["r_star_minus"] = None
        record["clamp_frequency"] = clamps / n_batches if n_batches else 0.0
        record["skipped"] = skipped

        if has_valid and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            mrr = evaluate(params, g, "valid").mrr
            record["valid_mrr"] = mrr
            if mrr > best_mrr:
                best_mrr, best_epoch, stale = mrr, epoch, 0
                best = (params.copy(), gen.copy() if gen else None)
            else:
                stale += 1
        history.append(record)
        if metrics is not None:
            metrics.write(json.dumps(record) + "\n")
            metrics.flush()
        logger.debug("epoch %d: %s", epoch, record)
        if has_valid and stale >= cfg.patience:
            break

    if not has_valid:
        best, best_epoch = (params, gen), len(history)
    best_params, best_gen = best
    if checkpoint_path is not None:
        checkpoint.save(checkpoint_path, best_params, g.entity_labels, g.relation_labels, best_gen)
    return TrainResult(best_params, best_gen, history, best_epoch,
                       None if not has_valid else best_mrr)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
