"""Forward problem: soft/hard backward induction and equilibrium iteration.

A *reward* handed to the functions here is any of

* ``None`` - use the game's own reward,
* a callable ``mu -> (S, A)`` table,
* an object with a ``tables(flow, spec)`` method returning the ``(T, S, A)``
  expected one-step reward along a flow (this is how shaped rewards, whose
  value depends on the next state, enter backward induction).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .core import (
    ConfigurationError,
    InvalidArgumentError,
    MfgSpec,
    NumericError,
    check_flow,
    expected_return,
    induce_flow,
    mkv_step,
    uniform_policy,
)


@dataclass(frozen=True)
class ShapedReward:
    """``base(s, a, mu) + gamma * potential(s', mu') - potential(s, mu)``.

    ``potential`` maps a mean field to an ``(S,)`` vector. At the last step
    there is no successor inside the horizon; ``terminal="zero"`` treats the
    successor's potential as 0, which keeps equilibria unchanged, while
    ``terminal="extrapolate"`` evaluates it at one extra population step.
    """

    base: Callable[[np.ndarray], np.ndarray]
    potential: Callable[[np.ndarray], np.ndarray]
    gamma: float
    terminal: str = "zero"

    def __post_init__(self):
        if self.terminal not in ("zero", "extrapolate"):
            raise InvalidArgumentError(f"unknown terminal convention {self.terminal!r}")

    def tables(self, flow: np.ndarray, spec: MfgSpec, policy: Optional[np.ndarray] = None) -> np.ndarray:
        T = flow.shape[0]
        base = np.stack([np.asarray(self.base(mu), dtype=np.float64) for mu in flow])
        g = np.stack([np.asarray(self.potential(mu), dtype=np.float64) for mu in flow])
        out = base - g[:, :, None]
        for t in range(T - 1):
            P = spec.transition_tensor(flow[t])
            out[t] += self.gamma * P @ g[t + 1]
        if self.terminal == "extrapolate":
            pi_last = policy[-1] if policy is not None else np.full((spec.n_states, spec.n_actions), 1.0 / spec.n_actions)
            P = spec.transition_tensor(flow[-1])
            mu_next = mkv_step(flow[-1], pi_last, P)
            out[-1] += self.gamma * P @ np.asarray(self.potential(mu_next), dtype=np.float64)
        return out


def reward_along(reward, flow: np.ndarray, spec: MfgSpec) -> np.ndarray:
    """Expected one-step reward ``(T, S, A)`` along ``flow`` for any supported reward form."""
    if reward is None:
        if spec.reward is None:
            raise ConfigurationError("no reward given and the game has none")
        reward = spec.reward
    if hasattr(reward, "tables"):
        R = np.asarray(reward.tables(flow, spec), dtype=np.float64)
    elif callable(reward):
        R = np.stack([np.asarray(reward(mu), dtype=np.float64) for mu in flow])
    else:
        raise ConfigurationError(f"unsupported reward object {type(reward).__name__}")
    expected = (flow.shape[0], spec.n_states, spec.n_actions)
    if R.shape != expected:
        raise InvalidArgumentError(f"reward tables have shape {R.shape}, expected {expected}")
    return R


@dataclass(frozen=True)
class SoftQTable:
    q: np.ndarray  # (T, S, A)
    v: np.ndarray  # (T, S)


def _check_finite(R: np.ndarray) -> None:
    bad = np.argwhere(~np.isfinite(R))
    if bad.size:
        t, s, a = bad[0]
        raise NumericError(f"non-finite reward at step {t}, state {s}, action {a}: {R[t, s, a]}")


def soft_backward_induction_tables(
    R: np.ndarray, P: np.ndarray, gamma: float, beta: float = 1.0
) -> tuple[SoftQTable, np.ndarray]:
    """Soft backward induction on explicit reward ``(T,S,A)`` and transition ``(T,S,A,S)`` arrays."""
    if not beta > 0:
        raise InvalidArgumentError(f"beta must be positive, got {beta}")
    _check_finite(R)
    T = R.shape[0]
    Q = np.empty_like(R)
    V = np.empty(R.shape[:2])
    for t in range(T - 1, -1, -1):
        Q[t] = R[t] if t == T - 1 else R[t] + gamma * P[t] @ V[t + 1]
        V[t] = beta * logsumexp(Q[t] / beta, axis=1)
    pi = np.exp((Q - V[:, :, None]) / beta)
    pi /= pi.sum(axis=-1, keepdims=True)
    return SoftQTable(Q, V), pi


def soft_backward_induction(
    flow: np.ndarray, reward, spec: MfgSpec, beta: float = 1.0
) -> tuple[SoftQTable, np.ndarray]:
    """Entropy-regularised best response to a fixed flow."""
    flow = check_flow(flow, spec.horizon, spec.n_states)
    R = reward_along(reward, flow, spec)
    return soft_backward_induction_tables(R, spec.transitions_along(flow), spec.gamma, beta)


def ermfne_operator(flow: np.ndarray, reward, spec: MfgSpec, beta: float = 1.0) -> np.ndarray:
    """Flow induced by the soft best response to ``flow``."""
    _, pi = soft_backward_induction(flow, reward, spec, beta)
    return induce_flow(pi, spec)


@dataclass(frozen=True)
class SolverConfig:
    beta: float = 1.0
    tol: float = 1e-10
    max_iter: int = 500
    damping: float = 0.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigurationError("tolerance must be positive")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ConfigurationError("damping must lie in [0, 1)")
        if not self.beta > 0:
            raise ConfigurationError("beta must be positive")


@dataclass(frozen=True)
class Equilibrium:
    flow: np.ndarray
    policy: np.ndarray
    converged: bool
    iterations: int
    residual: float

    def to_json(self) -> dict:
        return {
            "flow": self.flow.tolist(),
            "policy": self.policy.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Equilibrium":
        return cls(
            np.asarray(doc["flow"], dtype=np.float64),
            np.asarray(doc["policy"], dtype=np.float64),
            bool(doc.get("converged", True)),
            int(doc["iterations"]),
            float(doc["residual"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def flow_mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared difference over steps ``t >= 1`` (step 0 is pinned to ``mu0``)."""
    if a.shape[0] <= 1:
        return 0.0
    return float(np.mean((a[1:] - b[1:]) ** 2))


def solve_ermfne(reward, spec: MfgSpec, cfg: SolverConfig = SolverConfig()) -> Equilibrium:
    """Fixed-point iteration of the soft best-response/flow-induction map.

    Starts from the flow of the uniform policy. The returned flow is always
    the one induced by the returned policy; ``residual`` is the mean squared
    change of the last iteration. Non-convergence is reported, not raised.
    """
    flow = induce_flow(uniform_policy(spec), spec)
    best = None
    for it in range(1, cfg.max_iter + 1):
        _, pi = soft_backward_induction(flow, reward, spec, cfg.beta)
        induced = induce_flow(pi, spec)
        res = flow_mse(induced, flow)
        if best is None or res < best.residual:
            best = Equilibrium(induced, pi, False, it, res)
        if res <= cfg.tol:
            return Equilibrium(induced, pi, True, it, res)
        flow = (1.0 - cfg.damping) * induced + cfg.damping * flow
    return best


def solve_ermfne_with_fallback(
    reward, spec: MfgSpec, cfg: SolverConfig = SolverConfig(), dampings=(0.5, 0.8, 0.95)
) -> Equilibrium:
    """Plain iteration first; if it cycles, retry with increasingly heavy damping.

    A fixed point of the damped map is a fixed point of the plain one, so the
    fallback changes only the path, not the equilibrium being sought.
    """
    eq = solve_ermfne(reward, spec, cfg)
    for d in dampings:
        if eq.converged:
            break
        retry = solve_ermfne(
            reward, spec, SolverConfig(cfg.beta, cfg.tol, max(cfg.max_iter, 2000), d)
        )
        if retry.converged or retry.residual < eq.residual:
            eq = retry
    return eq


def hard_backward_induction(
    flow: np.ndarray, reward, spec: MfgSpec, tie_tol: float = 1e-12
) -> tuple[np.ndarray, np.ndarray]:
    """Optimal (unregularised) ``Q`` tables and best response; ties split evenly."""
    flow = check_flow(flow, spec.horizon, spec.n_states)
    R = reward_along(reward, flow, spec)
    _check_finite(R)
    P = spec.transitions_along(flow)
    T = spec.horizon
    Q = np.empty_like(R)
    V = np.empty(R.shape[:2])
    for t in range(T - 1, -1, -1):
        Q[t] = R[t] if t == T - 1 else R[t] + spec.gamma * P[t] @ V[t + 1]
        V[t] = Q[t].max(axis=1)
    scale = np.maximum(1.0, np.abs(V))[:, :, None]
    best = Q >= V[:, :, None] - tie_tol * scale
    pi = best / best.sum(axis=-1, keepdims=True)
    return Q, pi


def hard_best_response(flow: np.ndarray, reward, spec: MfgSpec) -> np.ndarray:
    return hard_backward_induction(flow, reward, spec)[1]


def exploitability(policy: np.ndarray, reward, spec: MfgSpec) -> float:
    """Gain of the best deviation against the flow ``policy`` induces (0 at an MFNE)."""
    flow = induce_flow(policy, spec)
    Q, _ = hard_backward_induction(flow, reward, spec)
    R = reward_along(reward, flow, spec)
    P = spec.transitions_along(flow)
    # value of following `policy` itself, by backward evaluation
    T = spec.horizon
    Vp = np.empty((T, spec.n_states))
    for t in range(T - 1, -1, -1):
        Qp = R[t] if t == T - 1 else R[t] + spec.gamma * P[t] @ Vp[t + 1]
        Vp[t] = np.einsum("sa,sa->s", policy[t], Qp)
    return float(spec.mu0 @ (Q[0].max(axis=1) - Vp[0]))


def fictitious_play(reward, spec: MfgSpec, n_iter: int = 200) -> Equilibrium:
    """Hard-max equilibrium search by fictitious play.

    Each round best-responds to the running average flow; the averaged
    policy is the marginal-weighted mixture of all best responses so far.
    ``residual`` holds the final exploitability.
    """
    pi0 = uniform_policy(spec)
    flow_avg = induce_flow(pi0, spec)
    weighted = flow_avg[:, :, None] * pi0
    mass = flow_avg.copy()
    for k in range(1, n_iter + 1):
        br = hard_best_response(flow_avg, reward, spec)
        rho = induce_flow(br, spec)
        flow_avg = (k * flow_avg + rho) / (k + 1)
        weighted += rho[:, :, None] * br
        mass += rho
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(mass[:, :, None] > 0, weighted / mass[:, :, None], 1.0 / spec.n_actions)
    pi /= pi.sum(axis=-1, keepdims=True)
    gap = exploitability(pi, reward, spec)
    return Equilibrium(induce_flow(pi, spec), pi, gap <= 1e-6, n_iter, gap)


def equilibrium_return(eq: Equilibrium, spec: MfgSpec) -> float:
    """Ground-truth return of a representative agent at ``eq`` (no entropy bonus)."""
    return expected_return(eq.flow, eq.policy, spec)


__all__ = [
    "Equilibrium",
    "ShapedReward",
    "SoftQTable",
    "SolverConfig",
    "equilibrium_return",
    "ermfne_operator",
    "exploitability",
    "fictitious_play",
    "flow_mse",
    "hard_backward_induction",
    "hard_best_response",
    "reward_along",
    "soft_backward_induction",
    "soft_backward_induction_tables",
    "solve_ermfne",
    "solve_ermfne_with_fallback",
]
