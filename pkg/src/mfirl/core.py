"""Finite mean-field game primitives.

Mean fields are probability vectors of shape ``(S,)``; a flow stacks ``T`` of
them into ``(T, S)``. A policy is a ``(T, S, A)`` array of row-stochastic
per-step tables. Trajectories are integer arrays of shape ``(T, 2)`` holding
``(state, action)`` pairs.

A game's transition model is a callable ``mu -> P`` returning the full
``(S, A, S)`` tensor ``P[s, a, s'] = p(s' | s, a, mu)``; rewards are callables
``mu -> R`` returning the ``(S, A)`` table ``R[s, a] = r(s, a, mu)``. The
pointwise forms ``p(s, a, mu)`` / ``r(s, a, mu)`` are available through
:meth:`MfgSpec.p` and :meth:`MfgSpec.r`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

PROB_ATOL = 1e-9
NEG_INF = float("-inf")

TransitionModel = Callable[[np.ndarray], np.ndarray]
RewardFn = Callable[[np.ndarray], np.ndarray]


class MfgError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgumentError(MfgError, ValueError):
    pass


class ConfigurationError(MfgError):
    pass


class NumericError(MfgError, ArithmeticError):
    pass


def check_mean_field(mu: np.ndarray, n_states: Optional[int] = None) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim != 1:
        raise InvalidArgumentError(f"mean field must be a vector, got shape {mu.shape}")
    if n_states is not None and mu.shape[0] != n_states:
        raise InvalidArgumentError(f"mean field has {mu.shape[0]} entries, expected {n_states}")
    if np.any(mu < -PROB_ATOL) or abs(mu.sum() - 1.0) > PROB_ATOL:
        raise InvalidArgumentError(f"not a probability vector: {mu}")
    return mu


def check_flow(flow: np.ndarray, horizon: int, n_states: int) -> np.ndarray:
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != (horizon, n_states):
        raise InvalidArgumentError(f"flow shape {flow.shape} != {(horizon, n_states)}")
    return flow


def check_policy(pi: np.ndarray, horizon: int, n_states: int, n_actions: int) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (horizon, n_states, n_actions):
        raise InvalidArgumentError(
            f"policy shape {pi.shape} != {(horizon, n_states, n_actions)}"
        )
    if np.any(pi < -PROB_ATOL) or np.any(np.abs(pi.sum(axis=-1) - 1.0) > PROB_ATOL):
        raise InvalidArgumentError("policy rows must be probability vectors")
    return pi


def renormalize(p: np.ndarray, axis: int = -1, what: str = "distribution") -> np.ndarray:
    """Divide out accumulated rounding drift; refuse to hide real errors."""
    total = p.sum(axis=axis, keepdims=True)
    if np.any(np.abs(total - 1.0) > PROB_ATOL):
        raise NumericError(f"{what} drifted from unit mass by {np.max(np.abs(total - 1.0)):.3e}")
    return p / total


@dataclass(frozen=True, eq=False)
class MfgSpec:
    """A finite-horizon mean-field game.

    ``reward`` may be ``None`` when the game is handed to an IRL method.
    ``gamma`` is allowed to equal 1 so that the undiscounted analytic fixtures
    can be expressed.
    """

    states: tuple
    actions: tuple
    transition: TransitionModel
    mu0: np.ndarray
    gamma: float
    horizon: int
    reward: Optional[RewardFn] = None
    name: str = "custom"
    variant: str = "original"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidArgumentError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.horizon < 1:
            raise InvalidArgumentError(f"horizon must be >= 1, got {self.horizon}")
        if len(self.states) < 1 or len(self.actions) < 1:
            raise InvalidArgumentError("empty state or action space")
        mu0 = check_mean_field(self.mu0, len(self.states))
        mu0 = mu0.copy()
        mu0.setflags(write=False)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "actions", tuple(self.actions))

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def with_reward(self, reward: Optional[RewardFn]) -> "MfgSpec":
        return _replace(self, reward=reward)

    def without_reward(self) -> "MfgSpec":
        return _replace(self, reward=None)

    def with_horizon(self, horizon: int) -> "MfgSpec":
        return _replace(self, horizon=horizon)

    def transition_tensor(self, mu: np.ndarray) -> np.ndarray:
        P = np.asarray(self.transition(mu), dtype=np.float64)
        shape = (self.n_states, self.n_actions, self.n_states)
        if P.shape != shape:
            raise InvalidArgumentError(f"transition tensor shape {P.shape} != {shape}")
        return P

    def transitions_along(self, flow: np.ndarray) -> np.ndarray:
        """``(T, S, A, S)`` transition tensors evaluated at each element of a flow."""
        return np.stack([self.transition_tensor(mu) for mu in flow])

    def reward_table(self, mu: np.ndarray) -> np.ndarray:
        if self.reward is None:
            raise ConfigurationError("game has no reward function")
        R = np.asarray(self.reward(mu), dtype=np.float64)
        if R.shape != (self.n_states, self.n_actions):
            raise InvalidArgumentError(f"reward table shape {R.shape}")
        return R

    def p(self, s: int, a: int, mu: np.ndarray) -> np.ndarray:
        return self.transition_tensor(mu)[s, a]

    def r(self, s: int, a: int, mu: np.ndarray) -> float:
        return float(self.reward_table(mu)[s, a])


def _replace(spec: MfgSpec, **changes) -> MfgSpec:
    kwargs = dict(
        states=spec.states,
        actions=spec.actions,
        transition=spec.transition,
        mu0=np.array(spec.mu0),
        gamma=spec.gamma,
        horizon=spec.horizon,
        reward=spec.reward,
        name=spec.name,
        variant=spec.variant,
        meta=dict(spec.meta),
    )
    kwargs.update(changes)
    return MfgSpec(**kwargs)


def uniform_policy(spec: MfgSpec) -> np.ndarray:
    return np.full((spec.horizon, spec.n_states, spec.n_actions), 1.0 / spec.n_actions)


def mkv_step(mu: np.ndarray, pi_t: np.ndarray, P: np.ndarray) -> np.ndarray:
    """One McKean-Vlasov update: push ``mu`` through ``pi_t`` and ``P = p(.|.,.,mu)``.

    ``P`` may also be the transition callable itself, in which case it is
    evaluated at ``mu``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if callable(P):
        P = P(mu)
    P = np.asarray(P, dtype=np.float64)
    pi_t = np.asarray(pi_t, dtype=np.float64)
    S = mu.shape[0]
    if pi_t.ndim != 2 or pi_t.shape[0] != S or P.shape != (S, pi_t.shape[1], S):
        raise InvalidArgumentError(
            f"inconsistent shapes: mu {mu.shape}, pi_t {pi_t.shape}, P {P.shape}"
        )
    nxt = np.einsum("s,sa,sax->x", mu, pi_t, P)
    return renormalize(nxt, what="mean field")


def induce_flow(pi: np.ndarray, spec: MfgSpec) -> np.ndarray:
    """The flow generated from ``spec.mu0`` when every agent follows ``pi``."""
    pi = check_policy(pi, spec.horizon, spec.n_states, spec.n_actions)
    flow = np.empty((spec.horizon, spec.n_states))
    flow[0] = spec.mu0
    for t in range(spec.horizon - 1):
        flow[t + 1] = mkv_step(flow[t], pi[t], spec.transition_tensor(flow[t]))
    return flow


def agent_marginals(pi: np.ndarray, flow: np.ndarray, spec: MfgSpec) -> np.ndarray:
    """State marginals of a representative agent playing ``pi`` against a fixed ``flow``.

    Unlike :func:`induce_flow` the population is not updated, so the pair
    ``(flow, pi)`` need not be consistent.
    """
    pi = check_policy(pi, spec.horizon, spec.n_states, spec.n_actions)
    flow = check_flow(flow, spec.horizon, spec.n_states)
    rho = np.empty_like(flow)
    rho[0] = spec.mu0
    for t in range(spec.horizon - 1):
        P = spec.transition_tensor(flow[t])
        rho[t + 1] = renormalize(np.einsum("s,sa,sax->x", rho[t], pi[t], P), what="marginal")
    return rho


def policy_entropy(pi: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) of each row along the last axis, with 0 log 0 = 0."""
    pi = np.asarray(pi, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pi > 0, pi * np.log(pi), 0.0)
    return -terms.sum(axis=-1)


def reward_tables(spec: MfgSpec, flow: np.ndarray) -> np.ndarray:
    return np.stack([spec.reward_table(mu) for mu in flow])


def expected_return(flow: np.ndarray, pi: np.ndarray, spec: MfgSpec) -> float:
    """Exact discounted return of a representative agent, without entropy bonus."""
    if spec.reward is None:
        raise ConfigurationError("expected_return needs a reward function")
    rho = agent_marginals(pi, flow, spec)
    R = reward_tables(spec, flow)
    disc = spec.gamma ** np.arange(spec.horizon)
    per_step = np.einsum("ts,tsa,tsa->t", rho, pi, R)
    return float(disc @ per_step)


def entropy_regularized_return(
    flow: np.ndarray, pi: np.ndarray, spec: MfgSpec, beta: float
) -> float:
    if not beta > 0:
        raise InvalidArgumentError(f"beta must be positive, got {beta}")
    rho = agent_marginals(pi, flow, spec)
    disc = spec.gamma ** np.arange(spec.horizon)
    bonus = beta * np.einsum("ts,ts->t", rho, policy_entropy(pi))
    return expected_return(flow, pi, spec) + float(disc @ bonus)


def _check_trajectory(tau: np.ndarray, spec: MfgSpec) -> np.ndarray:
    tau = np.asarray(tau)
    if tau.shape != (spec.horizon, 2):
        raise InvalidArgumentError(f"trajectory shape {tau.shape} != {(spec.horizon, 2)}")
    s, a = tau[:, 0], tau[:, 1]
    if np.any(s < 0) or np.any(s >= spec.n_states) or np.any(a < 0) or np.any(a >= spec.n_actions):
        raise InvalidArgumentError("trajectory index out of range")
    return tau.astype(np.int64)


def _safe_log(x: float) -> float:
    return float(np.log(x)) if x > 0 else NEG_INF


def _log_dynamics(tau: np.ndarray, flow: np.ndarray, spec: MfgSpec) -> float:
    total = _safe_log(spec.mu0[tau[0, 0]])
    for t in range(spec.horizon - 1):
        s, a = tau[t]
        total += _safe_log(spec.transition_tensor(flow[t])[s, a, tau[t + 1, 0]])
    return total


def trajectory_log_prob(
    tau: np.ndarray, pi: np.ndarray, flow: np.ndarray, spec: MfgSpec
) -> float:
    """Log-probability of ``tau`` under ``pi`` with dynamics frozen at ``flow``.

    Returns ``-inf`` for impossible trajectories.
    """
    tau = _check_trajectory(tau, spec)
    pi = check_policy(pi, spec.horizon, spec.n_states, spec.n_actions)
    flow = check_flow(flow, spec.horizon, spec.n_states)
    total = _log_dynamics(tau, flow, spec)
    for t, (s, a) in enumerate(tau):
        total += _safe_log(pi[t, s, a])
    return total


def energy_log_weight(
    tau: np.ndarray, flow: np.ndarray, reward: Optional[RewardFn], spec: MfgSpec
) -> float:
    """Unnormalised log-density of the energy model: initial mass, discounted reward, dynamics."""
    tau = _check_trajectory(tau, spec)
    flow = check_flow(flow, spec.horizon, spec.n_states)
    reward = reward if reward is not None else spec.reward
    if reward is None:
        raise ConfigurationError("energy_log_weight needs a reward function")
    total = _log_dynamics(tau, flow, spec)
    for t, (s, a) in enumerate(tau):
        total += spec.gamma**t * float(np.asarray(reward(flow[t]))[s, a])
    return total


def sample_game_play(
    spec: MfgSpec, pi: np.ndarray, n_agents: int, rng_seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``n_agents`` agents that all follow ``pi``.

    Transitions are driven by the live empirical mean field of the agents.
    Returns ``(trajectories, empirical_flow)`` with shapes ``(N, T, 2)`` and
    ``(T, S)``.
    """
    if n_agents < 1:
        raise InvalidArgumentError("need at least one agent")
    pi = check_policy(pi, spec.horizon, spec.n_states, spec.n_actions)
    rng = np.random.default_rng(rng_seed)
    T, S = spec.horizon, spec.n_states
    traj = np.empty((n_agents, T, 2), dtype=np.int64)
    emp = np.empty((T, S))
    states = _draw(rng, np.broadcast_to(spec.mu0, (n_agents, S)))
    for t in range(T):
        mu_hat = np.bincount(states, minlength=S) / n_agents
        emp[t] = mu_hat
        actions = _draw(rng, pi[t, states])
        traj[:, t, 0] = states
        traj[:, t, 1] = actions
        if t < T - 1:
            P = spec.transition_tensor(mu_hat)
            states = _draw(rng, P[states, actions])
    return traj, emp


def _draw(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row of ``probs`` by inverse CDF."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


@dataclass
class DemoSet:
    """``M`` game plays of ``N`` agents each; ``plays`` has shape ``(M, N, T, 2)``."""

    plays: np.ndarray
    env: str = "custom"
    variant: str = "original"
    gamma: float = 0.99

    VERSION = 1

    def __post_init__(self):
        self.plays = np.asarray(self.plays, dtype=np.int64)
        if self.plays.ndim != 4 or self.plays.shape[-1] != 2:
            raise InvalidArgumentError(f"plays must have shape (M, N, T, 2), got {self.plays.shape}")

    @property
    def M(self) -> int:
        return self.plays.shape[0]

    @property
    def N(self) -> int:
        return self.plays.shape[1]

    @property
    def T(self) -> int:
        return self.plays.shape[2]

    def trajectories(self) -> np.ndarray:
        """All agent trajectories flattened to ``(M * N, T, 2)``."""
        return self.plays.reshape(-1, self.T, 2)

    def subset(self, n_plays: int) -> "DemoSet":
        return DemoSet(self.plays[:n_plays], self.env, self.variant, self.gamma)

    def to_json(self) -> dict:
        return {
            "version": self.VERSION,
            "env": self.env,
            "variant": self.variant,
            "T": self.T,
            "N": self.N,
            "M": self.M,
            "gamma": self.gamma,
            "plays": self.plays.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DemoSet":
        if doc.get("version") != cls.VERSION:
            raise ConfigurationError(f"unsupported demo set version {doc.get('version')}")
        plays = np.asarray(doc["plays"], dtype=np.int64)
        if plays.shape[:3] != (doc["M"], doc["N"], doc["T"]):
            raise ConfigurationError("demo set header does not match its plays")
        return cls(plays, doc["env"], doc["variant"], doc["gamma"])


def generate_demos(
    spec: MfgSpec, pi: np.ndarray, n_agents: int, n_plays: int, seed: int
) -> DemoSet:
    """``n_plays`` independent game plays; play ``j`` uses a seed spawned from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n_plays)
    plays = []
    for child in children:
        traj, _ = sample_game_play(spec, pi, n_agents, int(child.generate_state(1)[0]))
        plays.append(traj)
    return DemoSet(np.stack(plays), spec.name, spec.variant, spec.gamma)


def enumerate_trajectories(n_states: int, n_actions: int, horizon: int) -> np.ndarray:
    """Every index combination, shape ``((S*A)**T, T, 2)``; only for tiny games."""
    grids = np.indices((n_states, n_actions) * horizon).reshape(2 * horizon, -1).T
    return grids.reshape(-1, horizon, 2)

