from __future__ import annotations

import numpy as np
import pytest

from altlab.diffusion import (DivergenceError, NoiseSchedule, chamfer_distance,
                              constant_schedule, cosine_schedule, denoise_sample,
                              denoiser_net, geometric_schedule,
                              nearest_neighbor_spacing, regime_metrics,
                              timestep_embedding, train_denoiser)
from altlab.manifolds import Star
from altlab.nn import make_rng, mlp


@pytest.mark.parametrize("sched", [geometric_schedule(100), cosine_schedule(50),
                                   geometric_schedule(40, 0.01, 0.9)])
def test_schedule_invariants(sched):
    k = sched.num_steps
    assert len(sched.alpha) == len(sched.gamma) == len(sched.sigma) == len(sched.alpha_bar) == k
    assert np.all(sched.sigma >= 0)
    # noise injected shrinks as denoising approaches the final step
    assert np.all(np.diff(sched.sigma) >= -1e-12)
    assert sched.sigma[0] == 0.0
    assert np.all(np.diff(sched.alpha_bar) <= 1e-15)


def test_geometric_levels_are_geometric():
    sched = geometric_schedule(50, sigma_min=0.01, sigma_max=0.9)
    lvls = sched.noise_level(np.arange(1, 51))
    ratios = lvls[1:] / lvls[:-1]
    assert np.allclose(ratios, ratios[0], rtol=1e-9)
    assert lvls[0] == pytest.approx(0.01)
    assert lvls[-1] == pytest.approx(0.9)


def test_schedule_validation_errors():
    with pytest.raises(ValueError, match="sigma"):
        NoiseSchedule(alpha=np.ones(3), gamma=np.zeros(3),
                      sigma=np.array([0.1, 0.5, 0.2]), alpha_bar=np.ones(3))
    with pytest.raises(ValueError, match="non-negative"):
        NoiseSchedule(alpha=np.ones(3), gamma=np.zeros(3),
                      sigma=np.array([-0.1, 0.0, 0.0]), alpha_bar=np.ones(3))
    with pytest.raises(ValueError, match="length"):
        NoiseSchedule(alpha=np.ones(3), gamma=np.zeros(2),
                      sigma=np.zeros(3), alpha_bar=np.ones(3))
    with pytest.raises(ValueError):
        geometric_schedule(10, sigma_min=0.5, sigma_max=0.4)


def test_zero_net_zero_noise_identity_schedule_passes_seeds_through():
    net = mlp([6, 4, 2], rng=None)  # zero weights => eps == 0
    sched = constant_schedule(20, alpha=1.0, gamma=0.0, sigma=0.0)
    out, flow = denoise_sample(net, sched, 50, make_rng(1))
    assert np.array_equal(out, flow[:, 0])
    assert np.array_equal(out, flow[:, -1])


def test_zero_net_alpha_contraction_closed_form():
    # with eps == 0 and sigma == 0 each step is x -> alpha * x
    net = mlp([6, 4, 2], rng=None)
    sched = constant_schedule(13, alpha=0.9, gamma=0.0, sigma=0.0)
    out, flow = denoise_sample(net, sched, 25, make_rng(2))
    assert np.allclose(out, flow[:, 0] * 0.9 ** 13, rtol=1e-12)


def test_sigma_zero_sampler_is_deterministic():
    net = denoiser_net("low", make_rng(3))
    sched = geometric_schedule(30)
    a, _ = denoise_sample(net, sched, 40, make_rng(7), sigma_scale=0.0, record_flow=False)
    b, _ = denoise_sample(net, sched, 40, make_rng(7), sigma_scale=0.0, record_flow=False)
    assert np.array_equal(a, b)


def test_train_zero_steps_leaves_parameters_unchanged():
    net = denoiser_net("low", make_rng(4))
    before = [arr.copy() for _, arr in net.parameters()]
    trace = train_denoiser(np.zeros((5, 2)), net, geometric_schedule(10), 0, make_rng(5))
    assert trace == []
    for prev, (_, arr) in zip(before, net.parameters()):
        assert np.array_equal(prev, arr)


def test_training_is_deterministic_per_seed():
    data = Star().sample(10, make_rng(6))
    sched = geometric_schedule(20)

    def run():
        net = denoiser_net("low", make_rng(7))
        return train_denoiser(data, net, sched, 40, make_rng(8), batch_size=32)

    assert run() == run()


def test_divergent_training_raises_with_step_index():
    # gelu stack with an absurd learning rate overflows within a few steps
    net = denoiser_net("high", make_rng(9))
    data = np.array([[1e3, -1e3], [2e3, 5e2]])
    with pytest.raises(DivergenceError, match="step"):
        train_denoiser(data, net, geometric_schedule(10), 8, make_rng(10),
                       batch_size=16, lr=1e12)


def test_train_rejects_empty_data():
    with pytest.raises(ValueError):
        train_denoiser(np.zeros((0, 2)), denoiser_net("low", make_rng(0)),
                       geometric_schedule(10), 1, make_rng(0))


def test_timestep_embedding_features():
    sched = geometric_schedule(50)
    e = timestep_embedding(np.array([1, 25, 50]), sched)
    assert e.shape == (3, 4)
    assert e[2, 0] == pytest.approx(1.0)          # t = k/K
    lvl = sched.noise_level(np.array([1, 25, 50]))
    assert np.allclose(e[:, 2], lvl)
    scalar = timestep_embedding(25, sched)
    assert scalar.shape == (4,)
    assert np.allclose(scalar, e[1])


def test_nearest_neighbor_spacing_simple():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
    # nearest-other distances: 1, 1, 2 -> median 1
    assert nearest_neighbor_spacing(pts) == 1.0
    with pytest.raises(ValueError):
        nearest_neighbor_spacing(pts[:1])


def test_chamfer_distance_translated_singletons():
    a = np.array([[0.0, 0.0]])
    b = np.array([[0.0, 3.0]])
    assert chamfer_distance(a, b) == pytest.approx(3.0)


def test_regime_metrics_trivial_cases():
    star = Star()
    train = star.sample(20, make_rng(11))
    m = regime_metrics(train.copy(), train, star)
    assert m.mean_nearest_train == 0.0
    assert m.coverage == 1.0
    fresh = star.sample(10000, make_rng(12))
    m2 = regime_metrics(fresh, train, star, dense_points=10000)
    # 10k true manifold samples vs a 10k discretization: chamfer is at the
    # scale of the discretization spacing
    assert m2.chamfer_to_manifold < 4 * star.perimeter() / 10000


def test_regime_metrics_rejects_empty():
    star = Star()
    with pytest.raises(ValueError):
        regime_metrics(np.zeros((0, 2)), star.sample(5, make_rng(0)), star)


def test_single_point_collapse_oracle():
    # one training point forces the learned flow toward that point
    point = np.array([[0.4, -0.7]])
    sched = geometric_schedule(100)
    net = denoiser_net("high", make_rng(13))
    train_denoiser(point, net, sched, 1200, make_rng(14), batch_size=128)
    samples, _ = denoise_sample(net, sched, 200, make_rng(15), record_flow=False)
    assert np.linalg.norm(samples.mean(axis=0) - point[0]) < 0.05
