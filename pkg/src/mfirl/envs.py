"""Benchmark mean-field games and their feature encoding.

Five tasks, each with an ``original`` and a ``new`` dynamics variant:

* ``invest``  - investment in product quality (10 quality levels)
* ``malware`` - malware spread (10 infection levels)
* ``virus``   - susceptible/infected with social distancing
* ``rps``     - generalised rock-paper-scissors
* ``lr``      - left-right congestion game

Random quality/infection jumps of the form ``floor(chi * (10 - s) / d)`` with
``chi`` uniform are expanded into their exact discrete distribution.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigurationError, InvalidArgumentError, MfgSpec, check_mean_field


class EnvVariant(str, enum.Enum):
    ORIGINAL = "original"
    NEW = "new"


class EnvName(str, enum.Enum):
    INVEST = "invest"
    MALWARE = "malware"
    VIRUS = "virus"
    RPS = "rps"
    LR = "lr"


ENV_NAMES = tuple(e.value for e in EnvName)
VARIANTS = tuple(v.value for v in EnvVariant)

_DEFAULT_PARAMS = {
    EnvName.INVEST: {"d": 0.3, "c": 0.2, "alpha": 0.2, "q": {"original": 4.0, "new": 5.0}},
    EnvName.MALWARE: {
        "k": 0.2,
        "alpha": 0.5,
        "chi": {"original": (0.0, 1.0), "new": (0.5, 1.0)},
    },
    EnvName.VIRUS: {
        "infection": {"original": 0.9, "new": 0.8},
        "recovery": 0.3,
        "distancing_cost": 0.5,
    },
    EnvName.RPS: {"payoff": (2.0, 1.0, 4.0, 2.0, 6.0, 3.0), "noise": {"original": 0.0, "new": 0.2}},
    EnvName.LR: {"slip": {"original": 0.0, "new": 0.2}},
}


@dataclass(frozen=True)
class EnvConfig:
    name: EnvName
    variant: EnvVariant = EnvVariant.ORIGINAL
    horizon: int = 50
    gamma: float = 0.99
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        try:
            object.__setattr__(self, "name", EnvName(self.name))
            object.__setattr__(self, "variant", EnvVariant(self.variant))
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        unknown = set(self.params) - set(_DEFAULT_PARAMS[self.name])
        if unknown:
            raise ConfigurationError(f"unknown parameters for {self.name.value}: {sorted(unknown)}")

    def resolved_params(self) -> dict:
        """Task parameters with per-variant entries collapsed for this variant."""
        out = {}
        for key, value in _DEFAULT_PARAMS[self.name].items():
            if isinstance(value, dict):
                value = value[self.variant.value]
            out[key] = value
        out.update(self.params)
        return out


def jump_distribution(s: int, lo: float, hi: float, divisor: int = 1, n_levels: int = 10) -> np.ndarray:
    """Exact law of ``s + floor(chi * (n_levels - s) / divisor)`` for ``chi ~ U(lo, hi)``.

    ``floor(chi * m / d) = k`` exactly when ``chi`` lies in ``[k d / m, (k + 1) d / m)``,
    so each outcome's probability is the length of that interval inside ``(lo, hi)``
    divided by ``hi - lo``.
    """
    if not 0.0 <= lo < hi <= 1.0:
        raise InvalidArgumentError(f"bad uniform support ({lo}, {hi})")
    m = n_levels - s
    out = np.zeros(n_levels)
    for k in range(m):
        a, b = k * divisor / m, (k + 1) * divisor / m
        overlap = max(0.0, min(b, hi) - max(a, lo))
        if overlap > 0:
            # chi = 1 (measure zero) would overshoot the top level
            out[min(s + k, n_levels - 1)] += overlap / (hi - lo)
    return out


def mean_state(mu: np.ndarray, spec: MfgSpec) -> float:
    """Average level ``sum_s s * mu(s)``; only for games whose states are integers."""
    if not all(isinstance(s, (int, np.integer)) for s in spec.states):
        raise InvalidArgumentError(f"{spec.name} has categorical states")
    mu = check_mean_field(mu, spec.n_states)
    return float(np.dot(np.asarray(spec.states, dtype=np.float64), mu))


def _levels_mean(mu: np.ndarray) -> float:
    return float(np.dot(np.arange(len(mu)), mu))


def _invest(p: dict):
    n = 10
    full = np.stack([jump_distribution(s, 0.0, 1.0, 1, n) for s in range(n)])
    half = np.stack([jump_distribution(s, 0.0, 1.0, 2, n) for s in range(n)])
    stay = np.eye(n)
    q, d, c, alpha = p["q"], p["d"], p["c"], p["alpha"]
    levels = np.arange(n, dtype=np.float64)

    def transition(mu):
        P = np.empty((n, 2, n))
        P[:, 0] = stay
        P[:, 1] = full if _levels_mean(mu) < q else half
        return P

    def reward(mu):
        base = d * levels / 10.0 - c * _levels_mean(mu)
        return base[:, None] - alpha * np.array([0.0, 1.0])[None, :]

    return tuple(range(n)), (0, 1), transition, reward, np.full(n, 1.0 / n)


def _malware(p: dict):
    n = 10
    lo, hi = p["chi"]
    P = np.empty((n, 2, n))
    P[:, 0] = np.stack([jump_distribution(s, lo, hi, 1, n) for s in range(n)])
    P[:, 1] = 0.0
    P[:, 1, 0] = 1.0
    k, alpha = p["k"], p["alpha"]
    levels = np.arange(n, dtype=np.float64)

    def transition(mu):
        return P

    def reward(mu):
        cost = -(k + _levels_mean(mu)) * levels / 10.0
        return cost[:, None] - alpha * np.array([0.0, 1.0])[None, :]

    return tuple(range(n)), (0, 1), transition, reward, np.full(n, 1.0 / n)


def _virus(p: dict):
    S, I = 0, 1
    U, D = 0, 1
    beta, rec, cost = p["infection"], p["recovery"], p["distancing_cost"]

    def transition(mu):
        P = np.zeros((2, 2, 2))
        infect = beta**2 * mu[I]
        P[S, U] = (1.0 - infect, infect)
        P[S, D] = (1.0, 0.0)
        P[I, :] = (rec, 1.0 - rec)
        return P

    def reward(mu):
        R = np.zeros((2, 2))
        R[I, :] -= 1.0
        R[:, D] -= cost
        return R

    return ("S", "I"), ("U", "D"), transition, reward, np.full(2, 0.5)


def _rps(p: dict):
    c_rs, c_rp, c_pr, c_ps, c_sp, c_sr = p["payoff"]
    noise = p["noise"]
    R_, P_, S_ = 0, 1, 2
    P = (1.0 - noise) * np.eye(3)[None, :, :].repeat(3, axis=0) + noise / 3.0

    def transition(mu):
        return P

    def reward(mu):
        per_state = np.array(
            [
                c_rs * mu[S_] - c_rp * mu[P_],
                c_pr * mu[R_] - c_ps * mu[S_],
                c_sp * mu[P_] - c_sr * mu[R_],
            ]
        )
        return np.repeat(per_state[:, None], 3, axis=1)

    return ("R", "P", "S"), ("R", "P", "S"), transition, reward, np.full(3, 1.0 / 3.0)


def _lr_parts(slip: float):
    C, L, R = 0, 1, 2
    P = np.zeros((3, 2, 3))
    for a, target in enumerate((L, R)):
        P[:, a, target] += 1.0 - slip
        P[:, a, L] += slip / 2.0
        P[:, a, R] += slip / 2.0

    def transition(mu):
        return P

    def reward(mu):
        per_state = np.array([0.0, -mu[L], -mu[R]])
        return np.repeat(per_state[:, None], 2, axis=1)

    return ("C", "L", "R"), ("L", "R"), transition, reward


def _lr(p: dict):
    states, actions, transition, reward = _lr_parts(p["slip"])
    return states, actions, transition, reward, np.array([0.0, 0.5, 0.5])


_BUILDERS = {
    EnvName.INVEST: _invest,
    EnvName.MALWARE: _malware,
    EnvName.VIRUS: _virus,
    EnvName.RPS: _rps,
    EnvName.LR: _lr,
}


def build_env(config: EnvConfig) -> MfgSpec:
    if not isinstance(config, EnvConfig):
        raise ConfigurationError(f"expected EnvConfig, got {type(config).__name__}")
    params = config.resolved_params()
    states, actions, transition, reward, mu0 = _BUILDERS[config.name](params)
    return MfgSpec(
        states=states,
        actions=actions,
        transition=transition,
        mu0=mu0,
        gamma=config.gamma,
        horizon=config.horizon,
        reward=reward,
        name=config.name.value,
        variant=config.variant.value,
        meta={"params": params},
    )


def make_env(name: str, variant: str = "original", **kwargs) -> MfgSpec:
    """Catalog lookup by string keys, e.g. ``make_env("virus", "new", horizon=10)``."""
    return build_env(EnvConfig(name, variant, **kwargs))


def swap_variant(spec: MfgSpec, variant: str) -> MfgSpec:
    """Same task and horizon/discount under the other dynamics; reward stays the task's."""
    return build_env(EnvConfig(spec.name, variant, spec.horizon, spec.gamma))


def left_right_fixture(horizon: int = 2, gamma: float = 1.0, action_penalty: float = 0.0) -> MfgSpec:
    """Left-right game with every agent starting in the centre.

    ``action_penalty`` subtracts a constant from the reward of moving left.
    """
    states, actions, transition, base = _lr_parts(0.0)

    def reward(mu):
        R = base(mu)
        R[:, 0] -= action_penalty
        return R

    return MfgSpec(
        states=states,
        actions=actions,
        transition=transition,
        mu0=np.array([1.0, 0.0, 0.0]),
        gamma=gamma,
        horizon=horizon,
        reward=reward,
        name="lr-centre",
    )


def encode_features(s: int, a: int, mu: np.ndarray, n_states: int, n_actions: int) -> np.ndarray:
    """``one_hot(s) ++ one_hot(a) ++ mu``."""
    if not (0 <= s < n_states and 0 <= a < n_actions):
        raise InvalidArgumentError(f"index out of range: s={s}, a={a}")
    mu = np.asarray(mu, dtype=np.float64)
    if mu.shape != (n_states,):
        raise InvalidArgumentError(f"mean field shape {mu.shape}")
    out = np.zeros(2 * n_states + n_actions)
    out[s] = 1.0
    out[n_states + a] = 1.0
    out[n_states + n_actions :] = mu
    return out


def decode_features(x: np.ndarray, n_states: int, n_actions: int) -> tuple[int, int]:
    return int(np.argmax(x[:n_states])), int(np.argmax(x[n_states : n_states + n_actions]))


def state_action_features(flow: np.ndarray, n_actions: int) -> np.ndarray:
    """Features for every ``(t, s, a)`` along a flow: shape ``(T, S, A, 2S + A)``."""
    flow = np.atleast_2d(np.asarray(flow, dtype=np.float64))
    T, S = flow.shape
    eye_s, eye_a = np.eye(S), np.eye(n_actions)
    out = np.empty((T, S, n_actions, 2 * S + n_actions))
    out[..., :S] = eye_s[None, :, None, :]
    out[..., S : S + n_actions] = eye_a[None, None, :, :]
    out[..., S + n_actions :] = flow[:, None, None, :]
    return out


def state_features(flow: np.ndarray) -> np.ndarray:
    """``one_hot(s) ++ mu`` for every ``(t, s)``: shape ``(T, S, 2S)``."""
    flow = np.atleast_2d(np.asarray(flow, dtype=np.float64))
    T, S = flow.shape
    out = np.empty((T, S, 2 * S))
    out[..., :S] = np.eye(S)[None]
    out[..., S:] = flow[:, None, :]
    return out
