"""Batch forward/backward for the discriminator and generator steps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .generator import GeneratorParams, generate, generator_backward
from .risk import ADVERSARIAL_MODES, RiskBreakdown, objective_backward
from .sampler import TAIL
from .scoring import ModelParams, score_vectors_with_grad


@dataclass
class SparseRows:
    """Row-sparse gradient of an embedding table (rows are unique and sorted)."""
    rows: np.ndarray
    values: np.ndarray

    @classmethod
    def accumulate(cls, index_parts, value_parts, d: int) -> "SparseRows":
        idx = np.concatenate([np.asarray(i).reshape(-1) for i in index_parts])
        vals = np.concatenate([np.asarray(v).reshape(-1, d) for v in value_parts])
        rows, inverse = np.unique(idx, return_inverse=True)
        # summing through a sparse indicator matrix is fast and has a fixed order
        indicator = sparse.csr_matrix((np.ones(len(idx)), (inverse, np.arange(len(idx)))),
                                      shape=(len(rows), len(idx)))
        return cls(rows, np.asarray(indicator @ vals))

    def dense(self, n_rows: int) -> np.ndarray:
        out = np.zeros((n_rows, self.values.shape[1]))
        out[self.rows] = self.values
        return out


@dataclass
class ThetaGrad:
    entity: SparseRows
    relation: SparseRows


@dataclass
class StepResult:
    breakdown: RiskBreakdown
    theta: ThetaGrad | None
    omega: GeneratorParams | None


def _synthetic_slots(side, pos_head, pos_tail, synth):
    tail_side = (side == TAIL)[:, None, None]
    head = np.where(tail_side, pos_head[:, None, :], synth)
    tail = np.where(tail_side, synth, pos_tail[:, None, :])
    return head, tail


def forward_backward(params: ModelParams, gen: GeneratorParams | None, positives: np.ndarray,
                     unlabeled: np.ndarray, side: np.ndarray, noise: np.ndarray | None, *,
                     mode: str, pi_p: float, clamp_policy: str = "defensive",
                     gen_mode: str = "train", rng: np.random.Generator | None = None,
                     want_theta: bool = True, want_omega: bool = False) -> StepResult:
    """Risks of one batch plus the requested gradients.

    ``theta`` is the gradient of the discriminator's loss; ``omega`` is the
    generator's descent gradient (it maximises the objective).
    """
    kind = params.scoring_kind
    E, R = params.entity_embeddings, params.relation_embeddings
    d = params.dimension
    h, r, t = positives[:, 0], positives[:, 1], positives[:, 2]
    H, Rv, T = E[h], R[r], E[t]

    pos = score_vectors_with_grad(kind, H, Rv, T)
    uh, ur, ut = unlabeled[..., 0], unlabeled[..., 1], unlabeled[..., 2]
    unl = score_vectors_with_grad(kind, E[uh], R[ur], E[ut])

    adversarial = mode in ADVERSARIAL_MODES
    syn = tape = None
    if adversarial:
        if gen is None or noise is None:
            raise ValueError(f"mode {mode} needs a generator and noise")
        synth, tape = generate(gen, noise, gen_mode, rng)
        sh, st = _synthetic_slots(side, H, T, synth)
        syn = score_vectors_with_grad(kind, sh, Rv[:, None, :], st)

    breakdown, g, g_gen = objective_backward(
        mode, pi_p, pos.value, unl.value, None if syn is None else syn.value, clamp_policy
    )

    theta = None
    if want_theta:
        ent_idx = [h, t, uh, ut]
        ent_val = [g.pos[:, None] * pos.grad_head, g.pos[:, None] * pos.grad_tail,
                   g.unlabeled[..., None] * unl.grad_head, g.unlabeled[..., None] * unl.grad_tail]
        rel_idx = [r, ur]
        rel_val = [g.pos[:, None] * pos.grad_relation, g.unlabeled[..., None] * unl.grad_relation]
        if adversarial:
            gs = g.synthetic[..., None]
            tail_side = (side == TAIL)[:, None]
            # only the authentic slot of a synthetic triple maps to an embedding row
            fixed_grad = np.where(tail_side[..., None], gs * syn.grad_head, gs * syn.grad_tail).sum(axis=1)
            ent_idx.append(np.where(side == TAIL, h, t))
            ent_val.append(fixed_grad)
            rel_idx.append(r)
            rel_val.append((gs * syn.grad_relation).sum(axis=1))
        theta = ThetaGrad(SparseRows.accumulate(ent_idx, ent_val, d),
                          SparseRows.accumulate(rel_idx, rel_val, d))

    omega = None
    if want_omega and adversarial:
        tail_side = (side == TAIL)[:, None, None]
        d_synth = g_gen[..., None] * np.where(tail_side, syn.grad_tail, syn.grad_head)
        omega, _ = generator_backward(gen, tape, d_synth)
    return StepResult(breakdown, theta, omega)


def objective(params: ModelParams, gen: GeneratorParams | None, positives, unlabeled, side, noise, *,
              mode: str, pi_p: float) -> float:
    """Inference-mode objective value; the function finite differences are taken of."""
    res = forward_backward(params, gen, positives, unlabeled, side, noise, mode=mode, pi_p=pi_p,
                           gen_mode="inference", want_theta=False)
    return res.breakdown.objective
