import numpy as np
import pytest

from conftest import random_game, random_policy
from mfirl.core import ConfigurationError, _replace, enumerate_trajectories, induce_flow, trajectory_log_prob
from mfirl.envs import make_env
from mfirl.irl import RewardModel
from mfirl.samplers import (
    APPROXIMATOR,
    TABULAR,
    SamplerConfig,
    _categorical,
    _Replay,
    sample_trajectories,
    train_adaptive_samplers,
)
from mfirl.solver import soft_backward_induction, solve_ermfne


def test_tabular_sampler_is_soft_best_response_to_frozen_flow(rng):
    spec = random_game(rng, horizon=4)
    flow = induce_flow(random_policy(rng, 4, 3, 2), spec)
    result = train_adaptive_samplers(None, flow, spec, SamplerConfig(mode="tabular"))
    _, expected = soft_backward_induction(flow, None, spec, 1.0)
    assert result.mode == TABULAR
    np.testing.assert_allclose(result.policy, expected, atol=1e-14)


def test_auto_mode_picks_tabular_for_small_games():
    spec = make_env("virus")
    assert SamplerConfig().resolve_mode(spec) == TABULAR
    assert SamplerConfig(tabular_limit=3).resolve_mode(spec) == APPROXIMATOR


def test_sampler_config_validation():
    with pytest.raises(ConfigurationError):
        SamplerConfig(mode="magic")
    with pytest.raises(ConfigurationError):
        SamplerConfig(batch_size=0)


def test_sampler_needs_simulator(rng):
    spec = random_game(rng)
    flow = induce_flow(random_policy(rng, 3, 3, 2), spec)
    with pytest.raises(ConfigurationError):
        train_adaptive_samplers(None, flow, _replace(spec, transition=None))


def test_approximator_sampler_tracks_exact_soft_policy():
    # Virus with horizon 50: per-step soft-Q and policy networks against exact soft backward induction
    spec = make_env("virus")
    eq = solve_ermfne(None, spec)
    exact = train_adaptive_samplers(None, eq.flow, spec, SamplerConfig(mode="tabular")).policy
    approx = train_adaptive_samplers(None, eq.flow, spec, SamplerConfig(mode="approximator"),
                                     np.random.default_rng(0))
    assert approx.mode == APPROXIMATOR and approx.state is not None
    l1 = np.abs(approx.policy - exact).sum(axis=-1)
    assert l1.mean() < 0.05
    assert l1.max() < 0.1


def test_approximator_warm_start_reuses_parameters():
    spec = make_env("virus", horizon=4)
    flow = solve_ermfne(None, spec).flow
    model = RewardModel.create(2, 2, spec.gamma, np.random.default_rng(0), (8,))
    cfg = SamplerConfig(mode="approximator", steps_per_t=3, hidden=(8,))
    first = train_adaptive_samplers(model, flow, spec, cfg, np.random.default_rng(1))
    saved = [p.copy() for p in first.state.q_params[:-1]]
    second = train_adaptive_samplers(model, flow, spec, cfg, np.random.default_rng(1), first.state)
    assert second.state is first.state
    # the second call starts from the first call's parameters, so it ends elsewhere
    assert any(not np.array_equal(a, b) for a, b in zip(saved, second.state.q_params[:-1]))
    np.testing.assert_allclose(second.policy.sum(axis=-1), 1.0, atol=1e-12)


def test_sample_log_probabilities_match_policy(rng):
    spec = random_game(rng, horizon=3)
    pi = random_policy(rng, 3, 3, 2)
    flow = induce_flow(pi, spec)
    trajs, logq = sample_trajectories(pi, flow, spec, 50, rng)
    for tau, lq in zip(trajs, logq):
        assert lq == pytest.approx(sum(np.log(pi[t, s, a]) for t, (s, a) in enumerate(tau)), abs=1e-12)


def test_sampled_trajectories_follow_product_distribution(rng):
    spec = random_game(rng, 2, 2, 2)
    pi = random_policy(rng, 2, 2, 2)
    flow = induce_flow(pi, spec)
    taus = enumerate_trajectories(2, 2, 2)
    probs = np.array([np.exp(trajectory_log_prob(t, pi, flow, spec)) for t in taus])
    n = 100_000
    trajs, _ = sample_trajectories(pi, flow, spec, n, rng)
    codes = ((trajs[:, 0, 0] * 2 + trajs[:, 0, 1]) * 2 + trajs[:, 1, 0]) * 2 + trajs[:, 1, 1]
    freq = np.bincount(codes, minlength=16) / n
    # multinomial standard error is at most 0.5 / sqrt(n); allow five of them per cell
    np.testing.assert_allclose(freq, probs, atol=5 * 0.5 / np.sqrt(n))


def test_categorical_frequencies(rng):
    p = np.array([0.1, 0.0, 0.6, 0.3])
    draws = _categorical(rng, np.tile(p, (200_000, 1)))
    np.testing.assert_allclose(np.bincount(draws, minlength=4) / 200_000, p, atol=0.005)
    assert not np.any(draws == 1)


def test_replay_is_fifo_with_fixed_capacity(rng):
    replay = _Replay(3)
    replay.add(np.arange(5), np.zeros(5), np.arange(5) * 1.0, np.zeros(5))
    assert replay.size == 3
    s, _, r, _ = replay.sample(rng, 200)
    assert set(s.tolist()) == {2, 3, 4}
    np.testing.assert_array_equal(r, s * 1.0)
