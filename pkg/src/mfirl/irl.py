"""Mean-field inverse reinforcement learning with shaped reward models.

Trajectory scores are evaluated along the empirical expert flow. The reward
and potential networks are evaluated once per call on the full
``(t, s, a)`` / ``(t, s)`` grid; every trajectory-level quantity is then a
weighted sum of grid entries, so gradients reduce to one backward pass per
network with a cotangent equal to the accumulated grid weights.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp, softmax

from .core import (
    ConfigurationError,
    DemoSet,
    InvalidArgumentError,
    MfgSpec,
    enumerate_trajectories,
)
from .envs import state_action_features, state_features
from .nn import AdamState, MlpSpec, adam_step, forward, grad_params, init_params
from .samplers import SamplerConfig, sample_trajectories, train_adaptive_samplers
from .solver import ShapedReward

INIT_SCALE = 0.1


@dataclass
class RewardModel:
    """Core reward network on ``(s, a, mu)`` plus a potential network on ``(s, mu)``."""

    n_states: int
    n_actions: int
    gamma: float
    core_spec: MlpSpec
    core_params: np.ndarray
    potential_spec: MlpSpec
    potential_params: np.ndarray

    @classmethod
    def create(cls, n_states, n_actions, gamma, rng, hidden=(64, 64), init_scale=INIT_SCALE):
        core = MlpSpec(2 * n_states + n_actions, 1, hidden, init_scale=init_scale)
        pot = MlpSpec(2 * n_states, 1, hidden, init_scale=init_scale)
        return cls(n_states, n_actions, gamma, core, init_params(core, rng), pot, init_params(pot, rng))

    @classmethod
    def zeros(cls, n_states, n_actions, gamma, hidden=(64, 64)):
        core = MlpSpec(2 * n_states + n_actions, 1, hidden, init_scale=INIT_SCALE)
        pot = MlpSpec(2 * n_states, 1, hidden, init_scale=INIT_SCALE)
        return cls(n_states, n_actions, gamma, core, np.zeros(core.n_params), pot, np.zeros(pot.n_params))

    # flat (core ++ potential) parameter view used by the optimiser
    @property
    def n_params(self) -> int:
        return self.core_spec.n_params + self.potential_spec.n_params

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.core_params, self.potential_params])

    def with_params(self, theta: np.ndarray) -> "RewardModel":
        k = self.core_spec.n_params
        return RewardModel(
            self.n_states, self.n_actions, self.gamma,
            self.core_spec, np.array(theta[:k]), self.potential_spec, np.array(theta[k:]),
        )

    def core_grid(self, flow: np.ndarray) -> np.ndarray:
        """``r(s, a, mu_t)`` for every grid point, shape ``(T, S, A)``."""
        x = state_action_features(flow, self.n_actions)
        return forward(self.core_params, self.core_spec, x)[..., 0]

    def potential_grid(self, flow: np.ndarray) -> np.ndarray:
        """``g(s, mu_t)`` for every grid point, shape ``(T, S)``."""
        return forward(self.potential_params, self.potential_spec, state_features(flow))[..., 0]

    def grid_grads(self, flow, w_core, w_pot) -> tuple[np.ndarray, np.ndarray]:
        """Parameter gradients of ``<w_core, core_grid> + <w_pot, potential_grid>``."""
        x = state_action_features(flow, self.n_actions)
        gc = grad_params(self.core_params, self.core_spec, x.reshape(-1, x.shape[-1]), w_core.reshape(-1, 1))
        xs = state_features(flow)
        gp = grad_params(self.potential_params, self.potential_spec, xs.reshape(-1, xs.shape[-1]), w_pot.reshape(-1, 1))
        return gc, gp

    def __call__(self, mu: np.ndarray) -> np.ndarray:
        """Unshaped reward table at one mean field (usable as a plain game reward)."""
        return self.core_grid(np.asarray(mu)[None, :])[0]

    def potential(self, mu: np.ndarray) -> np.ndarray:
        return self.potential_grid(np.asarray(mu)[None, :])[0]

    def shaped(self) -> ShapedReward:
        return ShapedReward(self, self.potential, self.gamma)

    def to_json(self) -> dict:
        return {
            "core": {"spec": {**asdict(self.core_spec), "hidden": list(self.core_spec.hidden)},
                     "params": self.core_params.tolist()},
            "potential": {"spec": {**asdict(self.potential_spec), "hidden": list(self.potential_spec.hidden)},
                          "params": self.potential_params.tolist()},
            "gamma": self.gamma,
            "n_states": self.n_states,
            "n_actions": self.n_actions,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RewardModel":
        def load(part):
            spec = MlpSpec(**{**part["spec"], "hidden": tuple(part["spec"]["hidden"])})
            params = np.asarray(part["params"], dtype=np.float64)
            if params.shape != (spec.n_params,):
                raise ConfigurationError("stored parameter count does not match the network spec")
            return spec, params

        cs, cp = load(doc["core"])
        ps, pp = load(doc["potential"])
        return cls(int(doc["n_states"]), int(doc["n_actions"]), float(doc["gamma"]), cs, cp, ps, pp)


def estimate_expert_flow(demos: DemoSet, n_states: int) -> np.ndarray:
    """State frequencies per step, averaged over agents and then over plays."""
    if demos.M < 1 or demos.N < 1:
        raise InvalidArgumentError("empty demo set")
    states = demos.plays[..., 0]  # (M, N, T)
    counts = np.stack([np.stack([np.bincount(states[j, :, t], minlength=n_states)
                                 for t in range(demos.T)]) for j in range(demos.M)])
    flow = (counts / demos.N).mean(axis=0)
    return flow / flow.sum(axis=1, keepdims=True)


# -- trajectory scores as grid weights ------------------------------------


def score_weights(trajs: np.ndarray, gamma: float, shape: tuple) -> tuple[np.ndarray, np.ndarray]:
    """Per-trajectory grid weights of the shaped discounted reward sum.

    For trajectory ``i`` returns ``wr[i]`` of shape ``(T, S, A)`` and ``wg[i]``
    of shape ``(T, S)`` such that its score equals
    ``<wr[i], core_grid> + <wg[i], potential_grid>``. The successor potential
    at the last step is taken as zero.
    """
    n, T, _ = trajs.shape
    _, S, A = shape
    disc = gamma ** np.arange(T)
    wr = np.zeros((n, T, S, A))
    wg = np.zeros((n, T, S))
    rows, steps = np.arange(n)[:, None], np.arange(T)[None, :]
    s, a = trajs[..., 0], trajs[..., 1]
    np.add.at(wr, (rows, steps, s, a), disc[None, :])
    # -gamma^t g(s_t, mu_t) at every step ...
    np.add.at(wg, (rows, steps, s), -disc[None, :])
    # ... and +gamma^(t+1) g(s_{t+1}, mu_{t+1}) for t < T - 1
    if T > 1:
        np.add.at(wg, (rows, steps[:, 1:], s[:, 1:]), disc[None, 1:])
    return wr, wg


def trajectory_scores(model: RewardModel, trajs: np.ndarray, flow: np.ndarray) -> np.ndarray:
    rg, gg = model.core_grid(flow), model.potential_grid(flow)
    T = flow.shape[0]
    disc = model.gamma ** np.arange(T)
    s, a = trajs[..., 0], trajs[..., 1]
    t = np.arange(T)[None, :]
    core = (disc * rg[t, s, a]).sum(axis=1)
    g_now = gg[t, s]
    shaping = -(disc * g_now).sum(axis=1) + (disc[1:] * g_now[:, 1:]).sum(axis=1)
    return core + shaping


def demo_reward_sum(tau: np.ndarray, model: RewardModel, flow: np.ndarray) -> float:
    """Discounted shaped reward of one trajectory along ``flow``."""
    tau = np.asarray(tau)
    if tau.shape != (flow.shape[0], 2):
        raise InvalidArgumentError(f"trajectory shape {tau.shape} does not match horizon {flow.shape[0]}")
    return float(trajectory_scores(model, tau[None], flow)[0])


def estimate_partition(
    samples: np.ndarray, sampler_logq: np.ndarray, model: RewardModel, flow: np.ndarray
) -> float:
    """Importance-sampled ``log Z``: ``log mean exp(score - log q)``."""
    samples, sampler_logq = np.asarray(samples), np.asarray(sampler_logq, dtype=np.float64)
    if samples.shape[0] < 1 or sampler_logq.shape != (samples.shape[0],):
        raise InvalidArgumentError("need one log sampler probability per sample, and at least one sample")
    if not np.all(np.isfinite(sampler_logq)):
        raise InvalidArgumentError("a sample has zero probability under its sampler")
    logw = trajectory_scores(model, samples, flow) - sampler_logq
    return float(logsumexp(logw) - np.log(len(logw)))


def exact_log_partition(
    model: RewardModel, flow: np.ndarray, spec: MfgSpec
) -> tuple[float, np.ndarray, np.ndarray]:
    """Enumerated ``log Z`` with dynamics frozen at ``flow``; tiny games only.

    Returns ``(log Z, trajectories, model probabilities)``.
    """
    taus = enumerate_trajectories(spec.n_states, spec.n_actions, spec.horizon)
    P = spec.transitions_along(flow)
    with np.errstate(divide="ignore"):
        log_dyn = np.log(spec.mu0[taus[:, 0, 0]])
        for t in range(spec.horizon - 1):
            log_dyn = log_dyn + np.log(P[t, taus[:, t, 0], taus[:, t, 1], taus[:, t + 1, 0]])
    keep = np.isfinite(log_dyn)
    taus, log_dyn = taus[keep], log_dyn[keep]
    logw = log_dyn + trajectory_scores(model, taus, flow)
    log_z = float(logsumexp(logw))
    return log_z, taus, np.exp(logw - log_z)


@dataclass
class Objective:
    value: float
    grad_core: np.ndarray
    grad_potential: np.ndarray
    log_partition: float

    @property
    def grad(self) -> np.ndarray:
        return np.concatenate([self.grad_core, self.grad_potential])


def _objective_from_weights(model, flow, demo_trajs, sample_trajs, sample_weights, log_z):
    shape = (flow.shape[0], model.n_states, model.n_actions)
    wr_d, wg_d = score_weights(demo_trajs, model.gamma, shape)
    wr_s, wg_s = score_weights(sample_trajs, model.gamma, shape)
    w_core = wr_d.mean(axis=0) - np.tensordot(sample_weights, wr_s, axes=1)
    w_pot = wg_d.mean(axis=0) - np.tensordot(sample_weights, wg_s, axes=1)
    gc, gp = model.grid_grads(flow, w_core, w_pot)
    value = float(trajectory_scores(model, demo_trajs, flow).mean() - log_z)
    return Objective(value, gc, gp, log_z)


def mfirl_objective_and_grads(
    demo_trajs: np.ndarray,
    model: RewardModel,
    flow: np.ndarray,
    samples: np.ndarray,
    sampler_logq: np.ndarray,
) -> Objective:
    """Simplified likelihood and its gradient with an importance-sampled partition.

    The sampler term uses self-normalised importance weights.
    """
    log_z = estimate_partition(samples, sampler_logq, model, flow)
    logw = trajectory_scores(model, samples, flow) - sampler_logq
    return _objective_from_weights(model, flow, demo_trajs, samples, softmax(logw), log_z)


def exact_objective_and_grads(
    demo_trajs: np.ndarray, model: RewardModel, flow: np.ndarray, spec: MfgSpec
) -> Objective:
    """Same objective with the partition summed over every trajectory."""
    log_z, taus, probs = exact_log_partition(model, flow, spec)
    return _objective_from_weights(model, flow, demo_trajs, taus, probs, log_z)


@dataclass(frozen=True)
class IrlConfig:
    epochs: int = 200
    minibatch: int = 32
    n_samples: int = 256
    lr: float = 1e-4
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    hidden: tuple = (64, 64)

    def __post_init__(self):
        for name in ("epochs", "minibatch", "n_samples"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "IrlConfig":
        doc = dict(doc)
        try:
            if "sampler" in doc:
                s = dict(doc["sampler"])
                if "hidden" in s:
                    s["hidden"] = tuple(s["hidden"])
                doc["sampler"] = SamplerConfig(**s)
            if "hidden" in doc:
                doc["hidden"] = tuple(doc["hidden"])
            return cls(**doc)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["sampler"]["hidden"] = list(self.sampler.hidden)
        return d


@dataclass
class TrainingLog:
    epoch: list = field(default_factory=list)
    l_hat: list = field(default_factory=list)
    grad_norm_omega: list = field(default_factory=list)
    grad_norm_phi: list = field(default_factory=list)

    def append(self, epoch, obj: Objective):
        self.epoch.append(epoch)
        self.l_hat.append(obj.value)
        self.grad_norm_omega.append(float(np.linalg.norm(obj.grad_core)))
        self.grad_norm_phi.append(float(np.linalg.norm(obj.grad_potential)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "L_hat", "grad_norm_omega", "grad_norm_phi"])
            for row in zip(self.epoch, self.l_hat, self.grad_norm_omega, self.grad_norm_phi):
                w.writerow([row[0], *(repr(float(v)) for v in row[1:])])


def mfirl_train(
    spec: MfgSpec, demos: DemoSet, cfg: IrlConfig = IrlConfig(), trace: Optional[list] = None
) -> tuple[RewardModel, TrainingLog]:
    """Alternate sampler refits, partition estimates and Adam ascent on the likelihood.

    ``spec`` supplies the simulator; any reward it carries is ignored. When
    ``trace`` is a list, the parameter vector after every epoch is appended.
    """
    if demos.T != spec.horizon:
        raise ConfigurationError(f"demo horizon {demos.T} != game horizon {spec.horizon}")
    rng = np.random.default_rng(cfg.seed)
    flow = estimate_expert_flow(demos, spec.n_states)
    model = RewardModel.create(spec.n_states, spec.n_actions, spec.gamma, rng, cfg.hidden)
    trajs = demos.trajectories()
    opt = AdamState(model.n_params, lr=cfg.lr)
    log = TrainingLog()
    warm = None
    for epoch in range(cfg.epochs):
        sampler = train_adaptive_samplers(model, flow, spec, cfg.sampler, rng, warm)
        warm = sampler.state
        samples, logq = sample_trajectories(sampler.policy, flow, spec, cfg.n_samples, rng)
        batch = trajs[rng.choice(len(trajs), size=min(cfg.minibatch, len(trajs)), replace=False)]
        obj = mfirl_objective_and_grads(batch, model, flow, samples, logq)
        log.append(epoch, obj)
        opt, theta = adam_step(opt, model.get_params(), obj.grad, ascent=True)
        model = model.with_params(theta)
        if trace is not None:
            trace.append(theta.copy())
    return model, log


def save_reward_model(path, model: RewardModel) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_json(), fh)


def load_reward_model(path) -> RewardModel:
    with open(path) as fh:
        return RewardModel.from_json(json.load(fh))


