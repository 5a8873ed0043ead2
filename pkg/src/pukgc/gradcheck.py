"""Central finite-difference checks of every hand-written gradient.

Three suites: the scoring functions, the generator in inference mode, and the
risk components plus the assembled adversarial PU objective on a tiny graph.
Errors are normwise per array: ``max|analytic - numeric| / max(|numeric|, |analytic|)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .game import forward_backward, objective
from .generator import GeneratorParams, generate, generator_backward
from .risk import (
    PUDA, component_grads, risk_p_minus, risk_p_plus, risk_star, risk_u_pairwise, risk_u_pointwise,
)
from .sampler import HEAD, TAIL
from .scoring import DISTMULT, SCORING_KINDS, ModelParams, score_vectors, score_vectors_with_grad

STEP = 1e-5
TOLERANCE = 1e-5
FLOOR = 1e-6
FAULTS = ("distmult-sign",)


@dataclass
class SuiteResult:
    name: str
    trials: int
    max_rel_err: float
    worst: str

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.name:<10} max_rel_err={self.max_rel_err:.3e} trials={self.trials}"
        if not self.passed:
            text += f" worst={self.worst}"
        return text


class _Tracker:
    def __init__(self):
        self.err, self.where = 0.0, "-"

    def compare(self, label: str, analytic, numeric) -> None:
        analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
        diff = np.abs(analytic - numeric)
        scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), FLOOR)
        err = float(np.max(diff)) / scale
        if err > self.err or not np.isfinite(err):
            idx = np.unravel_index(int(np.argmax(diff)), diff.shape) if diff.ndim else ()
            self.err = err if np.isfinite(err) else np.inf
            self.where = f"{label}{[int(i) for i in idx]} analytic={analytic[idx]:.6g} numeric={numeric[idx]:.6g}"


def numeric_grad(f: Callable[[], float], arr: np.ndarray, step: float = STEP) -> np.ndarray:
    """Central differences of ``f`` with respect to ``arr``, perturbed in place."""
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + step
        up = f()
        arr[idx] = old - step
        down = f()
        arr[idx] = old
        out[idx] = (up - down) / (2 * step)
    return out


def check_scoring(trials: int, rng: np.random.Generator, fault: str | None = None, d: int = 5) -> SuiteResult:
    track = _Tracker()
    for trial in range(trials):
        for kind in SCORING_KINDS:
            vecs = [rng.normal(size=d) for _ in range(3)]
            out = score_vectors_with_grad(kind, *vecs)
            grads = [out.grad_head, out.grad_relation, out.grad_tail]
            if fault == "distmult-sign" and kind == DISTMULT:
                grads = [-g for g in grads]
            for name, vec, analytic in zip("hrt", vecs, grads):
                numeric = numeric_grad(lambda: float(score_vectors(kind, *vecs)), vec)
                track.compare(f"trial {trial} {kind} d/d{name}", analytic, numeric)
    return SuiteResult("scoring", trials, track.err, track.where)


def check_generator(trials: int, rng: np.random.Generator, d: int = 8) -> SuiteResult:
    track = _Tracker()
    for trial in range(trials):
        hidden = int(rng.integers(1, 5))
        gen = GeneratorParams(rng.normal(size=(hidden, d)), rng.normal(size=hidden),
                              rng.normal(size=(d, hidden)), rng.normal(size=d))
        z = rng.normal(size=d)
        weights = rng.normal(size=d)
        _, tape = generate(gen, z)
        grads, grad_z = generator_backward(gen, tape, weights)

        def f():
            return float(weights @ generate(gen, z)[0])

        for name in ("W1", "b1", "W2", "b2"):
            track.compare(f"trial {trial} {name}", getattr(grads, name), numeric_grad(f, getattr(gen, name)))
        track.compare(f"trial {trial} z", grad_z, numeric_grad(f, z))
    return SuiteResult("generator", trials, track.err, track.where)


def _risk_components(track: _Tracker, trial: int, rng: np.random.Generator) -> None:
    sp, su, ss = rng.normal(size=3) * 2, rng.normal(size=(3, 4)) * 2, rng.normal(size=(3, 2)) * 2
    grads = component_grads(sp, su, ss)
    funcs = {
        "r_p_plus": lambda: risk_p_plus(sp),
        "r_p_minus": lambda: risk_p_minus(sp),
        "r_u_pointwise": lambda: risk_u_pointwise(su),
        "r_u_pairwise": lambda: risk_u_pairwise(sp, su),
        "r_star": lambda: risk_star(sp, ss),
    }
    for name, f in funcs.items():
        d_pos, d_other = grads[name]
        track.compare(f"trial {trial} {name} d/dpos", d_pos, numeric_grad(f, sp))
        if d_other is not None:
            other = ss if name == "r_star" else su
            track.compare(f"trial {trial} {name} d/dother", d_other, numeric_grad(f, other))


def tiny_instance(rng: np.random.Generator, kind: str = DISTMULT):
    """|E| = 6, |R| = 2, d = 3, N = 2, M = 2 with a two-unit generator."""
    n_e, n_r, d = 6, 2, 3
    params = ModelParams(rng.normal(size=(n_e, d)), rng.normal(size=(n_r, d)), kind)
    gen = GeneratorParams(rng.normal(size=(2, d)), rng.normal(size=2), rng.normal(size=(d, 2)),
                          rng.normal(size=d))
    positives = np.array([[0, 0, 1], [2, 1, 3]])
    side = np.array([TAIL, HEAD])
    unlabeled = np.array([[[0, 0, 4], [0, 0, 5]], [[4, 1, 3], [5, 1, 3]]])
    noise = rng.normal(size=(2, 2, d))
    return params, gen, positives, unlabeled, side, noise


def check_objective(trials: int, rng: np.random.Generator) -> SuiteResult:
    track = _Tracker()
    done = 0
    while done < trials:
        _risk_components(track, done, rng)
        kind = SCORING_KINDS[done % len(SCORING_KINDS)]
        params, gen, pos, unl, side, noise = tiny_instance(rng, kind)
        pi = float(rng.uniform(0.01, 0.5))
        res = forward_backward(params, gen, pos, unl, side, noise, mode=PUDA, pi_p=pi,
                               clamp_policy="zero", gen_mode="inference", want_omega=True)
        bd = res.breakdown
        if abs(bd.r_u_minus + bd.r_star_minus - pi * bd.r_p_minus) < 1e-3:
            continue  # the clamp kink has no derivative; redraw

        def f():
            return objective(params, gen, pos, unl, side, noise, mode=PUDA, pi_p=pi)

        n_e, n_r = params.entity_embeddings.shape[0], params.relation_embeddings.shape[0]
        track.compare(f"trial {done} {kind} entity", res.theta.entity.dense(n_e),
                      numeric_grad(f, params.entity_embeddings))
        track.compare(f"trial {done} {kind} relation", res.theta.relation.dense(n_r),
                      numeric_grad(f, params.relation_embeddings))
        # the generator ascends, so its descent gradient is the objective's negation
        for name in ("W1", "b1", "W2", "b2"):
            track.compare(f"trial {done} {name}", -getattr(res.omega, name),
                          numeric_grad(f, getattr(gen, name)))
        done += 1
    return SuiteResult("objective", trials, track.err, track.where)


def run_all(trials: int = 100, seed: int = 0, fault: str | None = None) -> list[SuiteResult]:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}")
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]
    return [check_scoring(trials, streams[0], fault), check_generator(trials, streams[1]),
            check_objective(trials, streams[2])]
