"""Risk estimators over triple scores and the clamped PU objective.

Scores arrive batched: positives ``(B,)``, unlabeled ``(B, N)`` and
synthetic ``(B, M)``. Every empirical risk is a batch mean.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

PN, PU_C, PU_R, DA, PUDA = "pn", "pu-c", "pu-r", "da", "puda"
MODES = (PN, PU_C, PU_R, DA, PUDA)
PU_MODES = (PU_C, PU_R, PUDA)
ADVERSARIAL_MODES = (DA, PUDA)
CLAMP_POLICIES = ("defensive", "zero")


class MissingComponent(ValueError):
    pass


class InvalidPrior(ValueError):
    pass


def log_sigmoid(x):
    """Stable ``ln sigmoid(x) = min(x, 0) - ln(1 + exp(-|x|))``."""
    x = np.asarray(x, dtype=float)
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return float(out) if out.ndim == 0 else out


def _nll(x) -> np.ndarray:
    return -log_sigmoid(x)


def risk_p_plus(scores_pos) -> float:
    return float(np.mean(_nll(np.asarray(scores_pos, float))))


def risk_p_minus(scores_pos) -> float:
    return float(np.mean(_nll(-np.asarray(scores_pos, float))))


def risk_u_pointwise(scores_unlabeled) -> float:
    """Double mean of ``-ln sigmoid(-score)`` over ``(B, N)`` unlabeled scores."""
    return float(np.mean(_nll(-np.asarray(scores_unlabeled, float))))


def risk_u_pairwise(score_pos, scores_unlabeled) -> float:
    """Mean of ``-ln sigmoid(pos - unlabeled)``.

    Works per positive (scalar, ``(N,)``) or batched (``(B,)``, ``(B, N)``);
    the batched value is the mean of the per-positive risks.
    """
    pos = np.asarray(score_pos, float)
    other = np.asarray(scores_unlabeled, float)
    return float(np.mean(_nll(pos[..., None] - other)))


def risk_star(score_pos, scores_synthetic) -> float:
    return risk_u_pairwise(score_pos, scores_synthetic)


@dataclass
class RiskBreakdown:
    r_p_plus: float | None
    r_p_minus: float | None
    r_u_minus: float | None
    r_star_minus: float | None
    clamp_active: bool
    objective: float

    def as_record(self) -> dict:
        return asdict(self)


def check_prior(pi_p: float) -> None:
    if not (isinstance(pi_p, (int, float)) and 0.0 < pi_p < 1.0):
        raise InvalidPrior(f"class prior must lie in (0, 1), got {pi_p!r}")


def assemble_objective(mode: str, pi_p: float, *, r_p_plus=None, r_p_minus=None,
                       r_u_minus=None, r_star_minus=None) -> RiskBreakdown:
    """Combine precomputed risks into the objective of ``mode``.

    ``r_u_minus`` is the pointwise unlabeled risk for PU-C and the pairwise
    one for every other mode.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    needed = {"r_u_minus": r_u_minus}
    if mode in PU_MODES:
        check_prior(pi_p)
        needed.update(r_p_plus=r_p_plus, r_p_minus=r_p_minus)
    if mode in ADVERSARIAL_MODES:
        needed["r_star_minus"] = r_star_minus
    missing = [k for k, v in needed.items() if v is None]
    if missing:
        raise MissingComponent(f"mode {mode} requires {', '.join(missing)}")

    clamp = False
    if mode == PN:
        objective = r_u_minus
    elif mode == DA:
        objective = r_u_minus + r_star_minus
    else:
        inner = r_u_minus + (r_star_minus if mode == PUDA else 0.0) - pi_p * r_p_minus
        clamp = inner < 0
        objective = pi_p * r_p_plus + max(0.0, inner)
    return RiskBreakdown(r_p_plus, r_p_minus, r_u_minus, r_star_minus, bool(clamp), float(objective))


class ScoreGrads(NamedTuple):
    """Gradients of a loss with respect to batch scores."""
    pos: np.ndarray
    unlabeled: np.ndarray | None
    synthetic: np.ndarray | None


def component_grads(scores_pos, scores_unlabeled, scores_synthetic=None) -> dict:
    """Score gradients of every risk component.

    Each entry maps a component name to ``(d/d pos, d/d other)`` where
    ``other`` is the unlabeled or synthetic score array (``None`` for the
    positive-only risks).
    """
    sp = np.asarray(scores_pos, float)
    su = np.asarray(scores_unlabeled, float)
    B = sp.shape[0]
    w = expit(su - sp[:, None]) / su.size
    out = {
        "r_p_plus": (-expit(-sp) / B, None),
        "r_p_minus": (expit(sp) / B, None),
        "r_u_pointwise": (np.zeros_like(sp), expit(su) / su.size),
        "r_u_pairwise": (-w.sum(axis=1), w),
    }
    if scores_synthetic is not None:
        ss = np.asarray(scores_synthetic, float)
        w = expit(ss - sp[:, None]) / ss.size
        out["r_star"] = (-w.sum(axis=1), w)
    return out


def objective_backward(mode: str, pi_p: float, scores_pos, scores_unlabeled,
                       scores_synthetic=None, clamp_policy: str = "defensive"
                       ) -> tuple[RiskBreakdown, ScoreGrads, np.ndarray | None]:
    """Forward risks and score gradients of the discriminator's loss.

    Returns ``(breakdown, d_grads, g_synthetic)``. ``d_grads`` is the
    gradient of the loss the discriminator descends (the clamped objective,
    or the defensive surrogate when the clamp is active). ``g_synthetic`` is
    the generator's descent gradient on synthetic scores, i.e. the negation
    of the discriminator's, or ``None`` outside adversarial modes.
    """
    if clamp_policy not in CLAMP_POLICIES:
        raise ValueError(f"unknown clamp policy {clamp_policy!r}")
    sp = np.asarray(scores_pos, float)
    su = np.asarray(scores_unlabeled, float)
    adversarial = mode in ADVERSARIAL_MODES
    if adversarial and scores_synthetic is None:
        raise MissingComponent(f"mode {mode} requires synthetic scores")
    ss = np.asarray(scores_synthetic, float) if adversarial else None

    cg = component_grads(sp, su, ss)
    r_pp, r_pm = risk_p_plus(sp), risk_p_minus(sp)
    d_pp, d_pm = cg["r_p_plus"][0], cg["r_p_minus"][0]
    if mode == PU_C:
        r_u = risk_u_pointwise(su)
        du_pos, du_unl = np.zeros_like(sp), cg["r_u_pointwise"][1]
    else:
        r_u = risk_u_pairwise(sp, su)
        du_pos, du_unl = cg["r_u_pairwise"]
    r_s = None
    ds_pos, ds_syn = np.zeros_like(sp), None
    if adversarial:
        r_s = risk_star(sp, ss)
        ds_pos, ds_syn = cg["r_star"]

    out = assemble_objective(mode, pi_p, r_p_plus=r_pp, r_p_minus=r_pm, r_u_minus=r_u,
                             r_star_minus=r_s)

    if mode in PU_MODES:
        inner_pos = du_pos + ds_pos - pi_p * d_pm
        if not out.clamp_active:
            g_pos, g_unl, g_syn = pi_p * d_pp + inner_pos, du_unl, ds_syn
        elif clamp_policy == "zero":
            g_pos = pi_p * d_pp
            g_unl = np.zeros_like(su)
            g_syn = None if ds_syn is None else np.zeros_like(ds_syn)
        else:
            g_pos, g_unl = -inner_pos, -du_unl
            g_syn = None if ds_syn is None else -ds_syn
    else:
        g_pos, g_unl, g_syn = du_pos + ds_pos, du_unl, ds_syn

    g_gen = None if g_syn is None else -g_syn
    return out, ScoreGrads(g_pos, g_unl, g_syn), g_gen

