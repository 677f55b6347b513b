import json
import math

import numpy as np
import pytest

from irguide.denoiser import AnalyticGaussian, predict_x0
from irguide.errors import NegativeRadicand, ShapeMismatch, StepOutOfRange
from irguide.grid import Rng
from irguide.guidance import X0_DETACHED, GuidancePolicy, make_identity_term
from irguide.sampler import (LR_PLUS_NOISE, SamplerConfig, ddim_step, guided_sample, sigma_schedule,
                             step_grid)
from irguide.schedule import NoiseSchedule, build_schedule, forward_diffuse

S2 = NoiseSchedule(np.array([0.5, 0.5]))  # abar = [0.5, 0.25]


def test_step_grid():
    g = step_grid(1000, 50)
    assert g[0] == 1000 and g[-1] == 1 and len(g) == 50
    assert np.all(np.diff(g) < 0)
    assert list(step_grid(5, 1)) == [5]
    with pytest.raises(ValueError):
        step_grid(10, 11)


def test_sigma_eta_zero(sched):
    assert np.all(sigma_schedule(0.0, sched, step_grid(1000, 20)) == 0)


def test_sigma_two_step_transcription():
    sig = sigma_schedule(1.0, S2, np.array([2, 1]))
    # t=2 -> t_prev=1: sqrt((1-0.5)/(1-0.25)) * sqrt(1-0.25/0.5)
    assert abs(sig[0] - math.sqrt(0.5 / 0.75) * math.sqrt(0.5)) < 1e-15
    assert abs(sig[0] - 1 / math.sqrt(3)) < 1e-15
    # t=1 -> t_prev=0 (abar 1): sqrt(0/0.5) = 0
    assert sig[1] == 0.0


def test_sigma_bound(sched):
    for eta in (0.3, 1.0):
        grid = step_grid(1000, 37)
        sig = sigma_schedule(eta, sched, grid)
        prev = [sched.abar(int(t)) for t in list(grid[1:]) + [0]]
        assert np.all(sig ** 2 <= 1 - np.array(prev) + 1e-15)
    with pytest.raises(ValueError):
        sigma_schedule(1.5, sched, grid)


def test_ddim_terminal_step_returns_prediction():
    r = Rng(0)
    x, e = r.normal((4, 4)), r.normal((4, 4))
    np.testing.assert_array_equal(ddim_step(x, e, 2, 0, 0.0, None, S2), predict_x0(x, e, 2, S2))


def test_ddim_pure_noise_branch():
    r = Rng(1)
    e, z = r.normal((4, 4)), r.normal((4, 4))
    x = math.sqrt(0.25) * 0.0 + math.sqrt(0.75) * e  # x0_hat = 0
    sigma = math.sqrt(1 - 0.5)
    np.testing.assert_allclose(ddim_step(x, e, 2, 1, sigma, z, S2), sigma * z, atol=1e-15)
    with pytest.raises(NegativeRadicand):
        ddim_step(x, e, 2, 1, 0.8, z, S2)


def test_ddim_true_noise_interpolates(sched):
    r = Rng(2)
    x0, e = r.uniform((5, 5)), r.normal((5, 5))
    x = forward_diffuse(x0, 700, e, sched)
    a = sched.abar(650)
    out = ddim_step(x, e, 700, 650, 0.0, None, sched)
    np.testing.assert_allclose(out, math.sqrt(a) * x0 + math.sqrt(1 - a) * e, atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(num_steps=0)
    with pytest.raises(ValueError):
        SamplerConfig(eta=1.5)
    with pytest.raises(ValueError):
        SamplerConfig(init="other")
    with pytest.raises(ValueError):
        SamplerConfig(start_t=0)


def test_empty_guidance_is_vanilla(sched):
    m = AnalyticGaussian(np.full((6, 6), 0.4), 0.1)
    target = np.zeros((6, 6))
    a, _ = guided_sample(m, sched, SamplerConfig(num_steps=20, seed=3), shape=(2, 6, 6))
    zero = make_identity_term(target, 0.0)
    b, _ = guided_sample(m, sched, SamplerConfig(num_steps=20, seed=3, terms=[zero]), shape=(2, 6, 6))
    np.testing.assert_array_equal(a, b)


def test_determinism_and_trajectory(sched, tmp_path):
    m = AnalyticGaussian(np.full((4, 4), 0.5), 0.2)
    term = make_identity_term(np.full((4, 4), 0.8), 0.5)
    cfg = SamplerConfig(num_steps=10, seed=5, terms=[term], record=True)
    a, ta = guided_sample(m, sched, cfg, shape=(4, 4))
    b, tb = guided_sample(m, sched, cfg, shape=(4, 4))
    np.testing.assert_array_equal(a, b)
    assert len(ta) == 10
    for sa, sb in zip(ta.steps, tb.steps):
        np.testing.assert_array_equal(sa.x_t, sb.x_t)
        assert abs(sa.losses["identity"] - term.loss(sa.x0_hat)) <= 1e-12
    ta.dump(tmp_path / "t.jsonl")
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    assert len(lines) == 10
    rec = json.loads(lines[0])
    assert rec["step"] == 0 and rec["t"] == 1000 and "identity" in rec["grad_rms"]


def test_output_clamped(sched):
    m = AnalyticGaussian(np.zeros((4, 4)), 4.0)
    x, _ = guided_sample(m, sched, SamplerConfig(num_steps=10), shape=(8, 4, 4))
    assert x.min() >= 0 and x.max() <= 1
    y, _ = guided_sample(m, sched, SamplerConfig(num_steps=10, clip_output=None), shape=(8, 4, 4))
    assert y.min() < 0 or y.max() > 1


def test_noise_argument_and_start_t(sched):
    m = AnalyticGaussian(np.full((4, 4), 0.5), 0.2)
    n = Rng(9).normal((4, 4))
    a, _ = guided_sample(m, sched, SamplerConfig(num_steps=10, seed=9), shape=(4, 4))
    b, _ = guided_sample(m, sched, SamplerConfig(num_steps=10, seed=1), noise=n)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ShapeMismatch):
        guided_sample(m, sched, SamplerConfig(num_steps=10), shape=(3, 3), noise=n)
    cond = np.full((4, 4), 0.5)
    _, tr = guided_sample(m, sched, SamplerConfig(num_steps=5, start_t=200, init=LR_PLUS_NOISE,
                                                  record=True), cond=cond)
    assert tr.steps[0].t == 200
    with pytest.raises(StepOutOfRange):
        guided_sample(m, sched, SamplerConfig(num_steps=5, start_t=2000), shape=(4, 4))
    with pytest.raises(ValueError):
        guided_sample(m, sched, SamplerConfig(init=LR_PLUS_NOISE), shape=(4, 4))


def test_per_term_policy_window(sched):
    m = AnalyticGaussian(np.full((4, 4), 0.5), 0.2)
    off = make_identity_term(np.ones((4, 4)), 1.0)
    off.policy = GuidancePolicy(t_start=0 + 1, t_end=1)  # only at t = 1
    cfg = SamplerConfig(num_steps=10, seed=2, terms=[off], record=True)
    _, tr = guided_sample(m, sched, cfg, shape=(4, 4))
    assert [s.t for s in tr.steps if s.grad_rms] == [1]


def test_step_refinement_converges():
    s = build_schedule()
    m = AnalyticGaussian(np.full((4, 4), 0.5), 0.3)
    n = Rng(4).normal((16, 4, 4))
    cfg = dict(clip_output=None)
    outs = {k: guided_sample(m, s, SamplerConfig(num_steps=k, **cfg), noise=n)[0] for k in (10, 20, 40, 80)}
    d = [np.abs(outs[2 * k] - outs[k]).max() for k in (10, 20, 40)]
    assert d[0] > d[1] > d[2]


def test_small_rho_monotone_loss():
    s = build_schedule()
    m = AnalyticGaussian(np.full((4, 4), 0.5), 0.2)
    target = np.full((4, 4), 0.9)
    n = Rng(6).normal((32, 4, 4))
    losses = []
    for rho in (0.0, 0.05, 0.1, 0.2, 0.4):
        term = make_identity_term(target, rho)
        term.policy = GuidancePolicy(clip=None)
        x, _ = guided_sample(m, s, SamplerConfig(num_steps=25, terms=[term]), noise=n)
        losses.append(float(np.mean(term.loss(x))))
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_jacobian_modes_differ_on_exact_model(sched):
    # N(0, I) data: the exact Jacobian is sqrt(1 - abar) I, so the modes must disagree
    m = AnalyticGaussian(np.zeros((4, 4)), 1.0)
    n = Rng(8).normal((4, 4))
    t1 = make_identity_term(np.full((4, 4), 0.7), 0.3)
    t2 = make_identity_term(np.full((4, 4), 0.7), 0.3)
    t2.policy = GuidancePolicy(jacobian_mode=X0_DETACHED)
    a, _ = guided_sample(m, sched, SamplerConfig(num_steps=10, terms=[t1]), noise=n)
    b, _ = guided_sample(m, sched, SamplerConfig(num_steps=10, terms=[t2]), noise=n)
    assert np.abs(a - b).max() > 1e-6
