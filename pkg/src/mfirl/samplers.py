"""Adaptive importance samplers for the partition estimate.

The sampler at step ``t`` approximates the soft-optimal policy of the MDP
obtained by freezing the population at the empirical expert flow. Two modes:

* ``tabular``: exact soft backward induction on the reward grid.
* ``approximator``: per-step soft-Q networks fitted by temporal-difference
  regression from a replay memory, and per-step policy networks fitted to
  the induced Boltzmann policy by a sampled KL objective. Steps are trained
  from the last one backwards, each warm-started from its successor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from .core import ConfigurationError, MfgSpec, check_flow
from .envs import state_action_features, state_features
from .nn import AdamState, MlpSpec, adam_step, forward, grad_params, init_params
from .solver import reward_along, soft_backward_induction_tables

TABULAR = "tabular"
APPROXIMATOR = "approximator"


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "auto"
    replay_size: int = 10_000
    batch_size: int = 64
    action_samples: int = 16
    steps_per_t: int = 200
    lr: float = 1e-3
    hidden: tuple = (64, 64)
    tabular_limit: int = 4096
    # share of exploratory states drawn uniformly instead of from the flow
    state_exploration: float = 0.5

    def __post_init__(self):
        if self.mode not in ("auto", TABULAR, APPROXIMATOR):
            raise ConfigurationError(f"unknown sampler mode {self.mode!r}")
        for name in ("replay_size", "batch_size", "action_samples", "steps_per_t"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")

    def resolve_mode(self, spec: MfgSpec) -> str:
        if self.mode != "auto":
            return self.mode
        return TABULAR if spec.n_states * spec.n_actions <= self.tabular_limit else APPROXIMATOR


@dataclass
class ApproximatorState:
    """Per-step network parameters kept between calls for warm starts."""

    q_spec: MlpSpec
    pi_spec: MlpSpec
    q_params: list = field(default_factory=list)
    pi_params: list = field(default_factory=list)


@dataclass
class SamplerResult:
    policy: np.ndarray  # (T, S, A)
    mode: str
    state: Optional[ApproximatorState] = None


def train_adaptive_samplers(
    reward,
    empirical_flow: np.ndarray,
    spec: MfgSpec,
    cfg: SamplerConfig = SamplerConfig(),
    rng: Optional[np.random.Generator] = None,
    warm: Optional[ApproximatorState] = None,
) -> SamplerResult:
    if spec.transition is None:
        raise ConfigurationError("sampler training needs an environment simulator")
    flow = check_flow(empirical_flow, spec.horizon, spec.n_states)
    R = reward_along(reward, flow, spec)
    mode = cfg.resolve_mode(spec)
    if mode == TABULAR:
        _, pi = soft_backward_induction_tables(R, spec.transitions_along(flow), spec.gamma, 1.0)
        return SamplerResult(pi, TABULAR)
    rng = rng if rng is not None else np.random.default_rng(0)
    return _soft_q_samplers(R, flow, spec, cfg, rng, warm)


def _soft_q_samplers(R, flow, spec, cfg, rng, warm):
    T, S, A = spec.horizon, spec.n_states, spec.n_actions
    sa_feats = state_action_features(flow, A)  # (T, S, A, 2S + A)
    s_feats = state_features(flow)  # (T, S, 2S)
    if warm is None:
        q_spec = MlpSpec(2 * S + A, 1, cfg.hidden)
        pi_spec = MlpSpec(2 * S, A, cfg.hidden)
        warm = ApproximatorState(q_spec, pi_spec, [None] * T, [None] * T)
    q_spec, pi_spec = warm.q_spec, warm.pi_spec

    policy = np.empty((T, S, A))
    policy[T - 1] = softmax(R[T - 1], axis=1)
    # soft value of the step after t, as a table over next states
    v_next = logsumexp(R[T - 1], axis=1)
    uniform = np.full(S, 1.0 / S)

    next_q, next_pi = None, None
    for t in range(T - 2, -1, -1):
        q_params = warm.q_params[t]
        if q_params is None:
            q_params = next_q.copy() if next_q is not None else init_params(q_spec, rng)
        pi_params = warm.pi_params[t]
        if pi_params is None:
            pi_params = next_pi.copy() if next_pi is not None else init_params(pi_spec, rng)
        q_opt = AdamState(q_spec.n_params, lr=cfg.lr)
        pi_opt = AdamState(pi_spec.n_params, lr=cfg.lr)

        P = spec.transition_tensor(flow[t])
        state_mix = (1 - cfg.state_exploration) * flow[t] + cfg.state_exploration * uniform
        replay = _Replay(cfg.replay_size)
        for k in range(cfg.steps_per_t):
            # linear decay to zero damps the end-of-budget jitter of both fits
            frac = 1.0 - k / cfg.steps_per_t
            q_opt.lr = pi_opt.lr = cfg.lr * frac
            # collect experience with the current sampler
            logits = forward(pi_params, pi_spec, s_feats[t])
            q_now = softmax(logits, axis=1)
            s = rng.choice(S, size=cfg.batch_size, p=state_mix)
            a = _categorical(rng, q_now[s])
            s_next = _categorical(rng, P[s, a])
            replay.add(s, a, R[t, s, a], s_next)

            # temporal-difference step on the soft Q network
            bs, ba, br, bn = replay.sample(rng, cfg.batch_size)
            target = br + spec.gamma * v_next[bn]
            x = sa_feats[t, bs, ba]
            pred = forward(q_params, q_spec, x)[:, 0]
            g = grad_params(q_params, q_spec, x, (pred - target)[:, None] / len(bs))
            q_opt, q_params = adam_step(q_opt, q_params, g)

            # sampled KL step pulling the sampler towards exp(Q - V)
            q_table = forward(q_params, q_spec, sa_feats[t].reshape(S * A, -1)).reshape(S, A)
            log_boltz = log_softmax(q_table, axis=1)
            logits = forward(pi_params, pi_spec, s_feats[t, bs])
            logq = log_softmax(logits, axis=1)
            probs = np.exp(logq)
            ys = _categorical(rng, np.repeat(probs, cfg.action_samples, axis=0)).reshape(len(bs), -1)
            score = np.take_along_axis(logq, ys, 1) - log_boltz[bs[:, None], ys]
            score -= score.mean(axis=1, keepdims=True)
            onehot = np.eye(A)[ys]  # (X, Y, A)
            dlogits = ((onehot - probs[:, None, :]) * score[..., None]).mean(axis=1) / len(bs)
            g = grad_params(pi_params, pi_spec, s_feats[t, bs], dlogits)
            pi_opt, pi_params = adam_step(pi_opt, pi_params, g)

        warm.q_params[t], warm.pi_params[t] = q_params, pi_params
        next_q, next_pi = q_params, pi_params
        policy[t] = softmax(forward(pi_params, pi_spec, s_feats[t]), axis=1)
        q_table = forward(q_params, q_spec, sa_feats[t].reshape(S * A, -1)).reshape(S, A)
        v_next = logsumexp(q_table, axis=1)
    return SamplerResult(policy, APPROXIMATOR, warm)


class _Replay:
    """Fixed-capacity FIFO of ``(s, a, r, s')`` transitions."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.buf = np.empty((capacity, 4))
        self.size = 0
        self.head = 0

    def add(self, s, a, r, s_next):
        rows = np.column_stack([s, a, r, s_next])
        for row in rows[-self.capacity :]:
            self.buf[self.head] = row
            self.head = (self.head + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def sample(self, rng, n):
        idx = rng.integers(0, self.size, size=n)
        b = self.buf[idx]
        return b[:, 0].astype(np.int64), b[:, 1].astype(np.int64), b[:, 2], b[:, 3].astype(np.int64)


def _categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


def sample_trajectories(
    policy: np.ndarray, flow: np.ndarray, spec: MfgSpec, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Roll out ``n`` independent agents against the frozen ``flow``.

    Returns trajectories ``(n, T, 2)`` and their summed log sampler
    probabilities ``sum_t log policy[t, s_t, a_t]``.
    """
    T = spec.horizon
    traj = np.empty((n, T, 2), dtype=np.int64)
    logq = np.zeros(n)
    s = _categorical(rng, np.broadcast_to(spec.mu0, (n, spec.n_states)))
    with np.errstate(divide="ignore"):
        for t in range(T):
            a = _categorical(rng, policy[t, s])
            traj[:, t, 0], traj[:, t, 1] = s, a
            logq += np.log(policy[t, s, a])
            if t < T - 1:
                s = _categorical(rng, spec.transition_tensor(flow[t])[s, a])
    return traj, logq
