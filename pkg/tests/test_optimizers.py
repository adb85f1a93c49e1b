import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asyncsam.data import MiniBatch
from asyncsam.objectives import DimensionMismatch, ParamVector, QuadraticObjective, eval_gradient, random_quadratic
from asyncsam.optimizers import (
    MomentumState, OptimizerConfig, async_sam_step, gsam_combine, gsam_step, looksam_gradient, looksam_step,
    perturb, sam_step, sgd_step,
)

from oracles import async_oracle, looksam_oracle, sam_oracle

P = ParamVector.flat


def test_perturb_closed_form():
    out = perturb(P([0.0, 0.0]), P([3.0, 4.0]), 0.1)
    np.testing.assert_allclose(out.values, [0.06, 0.08], atol=1e-16)


def test_perturb_degenerate_cases():
    w = P([1.0, 2.0])
    assert perturb(w, P([3.0, 4.0]), 0.0) is w
    assert perturb(w, P([0.0, 0.0]), 0.1) is w
    assert perturb(w, P([1e-13, 0.0]), 0.1) is w
    with pytest.raises(DimensionMismatch):
        perturb(w, P([1.0]), 0.1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.floats(1e-3, 10.0), st.integers(0, 1000))
def test_perturb_moves_exactly_radius(gvals, r, seed):
    g = np.asarray(gvals)
    if np.linalg.norm(g) < 1e-6:
        g = g + 1.0
    w = np.random.default_rng(seed).standard_normal(g.shape[0])
    out = perturb(P(w), P(g), r)
    assert np.linalg.norm(out.values - w) == pytest.approx(r, rel=1e-9)


def test_sgd_step_examples():
    cfg = OptimizerConfig(lr=0.1)
    w, _ = sgd_step(P([1.0, 0.0]), P([1.0, 0.0]), cfg)
    np.testing.assert_allclose(w.values, [0.9, 0.0], atol=1e-16)
    w0 = P([1.0, 2.0])
    w, _ = sgd_step(w0, P([5.0, 5.0]), cfg.with_(lr=0.0))
    np.testing.assert_array_equal(w.values, w0.values)


def test_momentum_hand_unrolled():
    cfg = OptimizerConfig(lr=0.1, momentum=0.9)
    w = P([1.0, 0.0])
    state = MomentumState.zeros_like(w)
    w, state = sgd_step(w, P([1.0, 0.0]), cfg, state)
    w, state = sgd_step(w, P([1.0, 0.0]), cfg, state)
    np.testing.assert_allclose(w.values, [0.71, 0.0], atol=1e-15)
    np.testing.assert_allclose(state.velocity.values, [1.9, 0.0], atol=1e-15)


def test_sgd_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        sgd_step(P([1.0]), P([1.0, 2.0]), OptimizerConfig())


def test_sam_isotropic_closed_form(iso2):
    cfg = OptimizerConfig(rule="sam", lr=0.1, radius=0.1)
    out = sam_step(iso2, P([1.0, 0.0]), MiniBatch([0]), cfg)
    np.testing.assert_allclose(out.values, [0.89, 0.0], atol=1e-15)


def test_sam_radius_zero_is_sgd(quad, rng):
    w = quad.init_params(rng)
    batch = MiniBatch([1, 2, 3])
    cfg = OptimizerConfig(rule="sam", lr=0.05, radius=0.0)
    expected, _ = sgd_step(w, eval_gradient(quad, w, batch), cfg)
    np.testing.assert_array_equal(sam_step(quad, w, batch, cfg).values, expected.values)


def test_sam_anisotropic_matches_oracle():
    obj = QuadraticObjective(np.diag([1.0, 4.0]))
    cfg = OptimizerConfig(rule="sam", lr=0.1, radius=0.1)
    w = np.array([1.0, 1.0])
    expected = sam_oracle(obj, w, [[0]], 0.1, 0.1)[1]
    np.testing.assert_allclose(sam_step(obj, P(w), MiniBatch([0]), cfg).values, expected, atol=1e-12, rtol=0)


def test_async_step_without_stale_gradient_is_sgd(quad, rng):
    w = quad.init_params(rng)
    batch = MiniBatch([0, 4])
    cfg = OptimizerConfig(rule="async_sam", lr=0.1, radius=0.1)
    expected, _ = sgd_step(w, eval_gradient(quad, w, batch), cfg)
    np.testing.assert_array_equal(async_sam_step(quad, w, batch, None, cfg).values, expected.values)


def test_async_step_with_fresh_gradient_is_sam(quad, rng):
    w = quad.init_params(rng)
    batch = MiniBatch([0, 4, 7])
    cfg = OptimizerConfig(rule="async_sam", lr=0.1, radius=0.1)
    fresh = eval_gradient(quad, w, batch)
    np.testing.assert_array_equal(async_sam_step(quad, w, batch, fresh, cfg).values,
                                  sam_step(quad, w, batch, cfg).values)


def test_async_five_steps_match_oracle(quad):
    rng = np.random.default_rng(5)
    cfg = OptimizerConfig(rule="async_sam", lr=0.05, radius=0.1, batch_size=8, ascent_batch_size=4)
    descent = [rng.integers(0, quad.n, 8) for _ in range(5)]
    ascent = [rng.integers(0, quad.n, 4) for _ in range(5)]
    w0 = rng.standard_normal(quad.dim)
    expected = async_oracle(quad, w0, descent, ascent, cfg.lr, cfg.radius)
    traj = [P(w0)]
    for t in range(5):
        stale = None if t == 0 else eval_gradient(quad, traj[t - 1], MiniBatch(ascent[t - 1]))
        traj.append(async_sam_step(quad, traj[t], MiniBatch(descent[t]), stale, cfg))
    for got, want in zip(traj, expected):
        np.testing.assert_allclose(got.values, want, atol=1e-12, rtol=0)


def test_async_dimension_mismatch(quad, rng):
    cfg = OptimizerConfig(rule="async_sam")
    with pytest.raises(DimensionMismatch):
        async_sam_step(quad, quad.init_params(rng), MiniBatch([0]), P([1.0]), cfg)


def test_gsam_combine_examples():
    gp, gq = P([1.0, 0.0]), P([0.0, 1.0])
    assert gsam_combine(gp, gq, 1.0) is gp
    assert gsam_combine(gp, gq, 0.0) is gq
    np.testing.assert_allclose(gsam_combine(gp, gq, 0.7).values, [0.7, 0.3], atol=1e-16)
    for alpha in (-0.1, 1.1):
        with pytest.raises(ValueError):
            gsam_combine(gp, gq, alpha)


def test_gsam_alpha_one_is_sam(quad, rng):
    w = quad.init_params(rng)
    batch = MiniBatch([3, 1])
    cfg = OptimizerConfig(rule="gsam", alpha=1.0, lr=0.1, radius=0.2)
    np.testing.assert_array_equal(gsam_step(quad, w, batch, cfg).values, sam_step(quad, w, batch, cfg).values)


def test_looksam_k1_is_sam(quad, rng):
    w = quad.init_params(rng)
    cfg = OptimizerConfig(rule="looksam", reuse_interval=1, lr=0.1, radius=0.1)
    cache = None
    for t in range(4):
        batch = MiniBatch(rng.integers(0, quad.n, 8))
        w_next, cache = looksam_step(quad, w, batch, cfg, cache, t)
        np.testing.assert_array_equal(w_next.values, sam_step(quad, w, batch, cfg).values)
        w = w_next


def test_looksam_refresh_schedule(quad, rng):
    w = quad.init_params(rng)
    cfg = OptimizerConfig(rule="looksam", reuse_interval=2)
    cache = None
    refreshed = []
    for t in range(7):
        batch = MiniBatch(rng.integers(0, quad.n, 8))
        g, _, _, cache, did = looksam_gradient(quad, w, batch, cfg, cache, t)
        w = w.like(w.values - cfg.lr * g.values)
        refreshed.append(did)
    assert [t for t, did in enumerate(refreshed) if did] == [0, 2, 4, 6]


def test_looksam_six_steps_match_oracle():
    obj = random_quadratic(8, d=6, n=32)
    rng = np.random.default_rng(8)
    cfg = OptimizerConfig(rule="looksam", reuse_interval=2, lr=0.1, radius=0.1)
    batches = [rng.integers(0, obj.n, 8) for _ in range(6)]
    w0 = rng.standard_normal(obj.dim)
    expected = looksam_oracle(obj, w0, batches, cfg.lr, cfg.radius, 2)
    w, cache = P(w0), None
    for t, idx in enumerate(batches):
        w, cache = looksam_step(obj, w, MiniBatch(idx), cfg, cache, t)
        np.testing.assert_allclose(w.values, expected[t + 1], atol=1e-12, rtol=0)


@pytest.mark.parametrize("bad", [dict(lr=-0.1), dict(radius=-1.0), dict(momentum=1.0), dict(alpha=1.5),
                                 dict(reuse_interval=0), dict(staleness=-1), dict(batch_size=0),
                                 dict(batch_size=8, ascent_batch_size=9), dict(ascent_batch_size=0),
                                 dict(rule="adam"), dict(eps_norm=0.0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        OptimizerConfig(**bad)


def test_config_defaults():
    cfg = OptimizerConfig(batch_size=16)
    assert cfg.ascent_batch_size == 16
    assert cfg.radius == 0.1 and cfg.alpha == 0.7 and cfg.reuse_interval == 2 and cfg.eps_norm == 1e-12
    assert OptimizerConfig(**cfg.to_dict()) == cfg
