import numpy as np
import pytest

from pukgc.game import SparseRows, forward_backward, objective
from pukgc.generator import GeneratorParams
from pukgc.risk import DA, MODES, PN, PU_C, PU_R, PUDA
from pukgc.sampler import HEAD, TAIL
from pukgc.scoring import DISTMULT, TRANSE, ModelParams

N_E, N_R, D = 6, 2, 3


def _setup(rng, kind=DISTMULT, scale=1.0):
    params = ModelParams(rng.normal(size=(N_E, D)) * scale, rng.normal(size=(N_R, D)) * scale, kind)
    # hidden is chosen directly; the default d // 8 sizing would give zero units at d = 3
    gen = GeneratorParams(rng.normal(size=(2, D)), rng.normal(size=2), rng.normal(size=(D, 2)),
                          rng.normal(size=D), 0.5)
    positives = np.array([[0, 0, 1], [2, 1, 3]])
    side = np.array([TAIL, HEAD])
    unlabeled = np.array([[[0, 0, 4], [0, 0, 5]], [[4, 1, 3], [5, 1, 3]]])
    noise = rng.normal(size=(2, 2, D))
    return params, gen, positives, unlabeled, side, noise


def _numeric_grad(f, arr, step=1e-6):
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


def _rel_err(analytic, numeric):
    return np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12)


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("kind", [DISTMULT, TRANSE])
def test_theta_gradient_matches_finite_differences(mode, kind):
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(8):
        params, gen, pos, unl, side, noise = _setup(rng, kind)
        pi = 0.3 if mode in (PU_C, PU_R, PUDA) else 0.0

        def f():
            return objective(params, gen, pos, unl, side, noise, mode=mode, pi_p=pi)

        res = forward_backward(params, gen, pos, unl, side, noise, mode=mode, pi_p=pi,
                               clamp_policy="zero", gen_mode="inference")
        bd = res.breakdown
        if bd.r_p_minus is not None:
            inner = bd.r_u_minus + (bd.r_star_minus or 0.0) - pi * bd.r_p_minus
            if abs(inner) < 1e-4:
                continue  # too close to the kink of max(0, .)
        numeric_e = _numeric_grad(f, params.entity_embeddings)
        numeric_r = _numeric_grad(f, params.relation_embeddings)
        assert _rel_err(res.theta.entity.dense(N_E), numeric_e) < 1e-6
        assert _rel_err(res.theta.relation.dense(N_R), numeric_r) < 1e-6
        checked += 1
    assert checked >= 5


@pytest.mark.parametrize("mode", [DA, PUDA])
def test_omega_gradient_is_negated_objective_gradient(mode):
    rng = np.random.default_rng(12)
    for _ in range(5):
        params, gen, pos, unl, side, noise = _setup(rng)
        pi = 0.3 if mode == PUDA else 0.0

        def f():
            return objective(params, gen, pos, unl, side, noise, mode=mode, pi_p=pi)

        res = forward_backward(params, gen, pos, unl, side, noise, mode=mode, pi_p=pi,
                               clamp_policy="zero", gen_mode="inference", want_omega=True)
        for name in ("W1", "b1", "W2", "b2"):
            numeric = _numeric_grad(f, getattr(gen, name))
            assert _rel_err(-getattr(res.omega, name), numeric) < 1e-6


def test_omega_absent_for_non_adversarial_modes():
    params, gen, pos, unl, side, noise = _setup(np.random.default_rng(0))
    res = forward_backward(params, None, pos, unl, side, None, mode=PN, pi_p=0.0, want_omega=True)
    assert res.omega is None and res.breakdown.r_star_minus is None


def test_clamped_zero_policy_ignores_unlabeled():
    rng = np.random.default_rng(13)
    params, gen, pos, unl, side, noise = _setup(rng)
    # a prior near 1 with confident positives makes the inner term negative
    params.entity_embeddings[:] = 2.0
    params.relation_embeddings[:] = 2.0
    params.entity_embeddings[4:] = -2.0
    res = forward_backward(params, gen, pos, unl, side, noise, mode=PU_R, pi_p=0.9,
                           clamp_policy="zero", gen_mode="inference")
    assert res.breakdown.clamp_active
    touched = set(res.theta.entity.rows[np.any(res.theta.entity.values != 0, axis=1)].tolist())
    assert touched <= {0, 1, 2, 3}


def test_missing_generator_is_an_error():
    params, gen, pos, unl, side, noise = _setup(np.random.default_rng(0))
    with pytest.raises(ValueError):
        forward_backward(params, None, pos, unl, side, noise, mode=PUDA, pi_p=0.1)


def test_sparse_rows_accumulate():
    acc = SparseRows.accumulate([np.array([3, 1, 3]), np.array([1])],
                                [np.ones((3, 2)), np.full((1, 2), 5.0)], 2)
    np.testing.assert_array_equal(acc.rows, [1, 3])
    np.testing.assert_array_equal(acc.values, [[6, 6], [2, 2]])
    np.testing.assert_array_equal(acc.dense(4)[[0, 2]], 0)
