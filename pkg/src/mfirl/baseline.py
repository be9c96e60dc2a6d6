"""Population-level MaxEnt IRL baseline.

The game is viewed as a deterministic MDP whose state is the mean field and
whose action is a per-step policy table. Each game play yields one
population trajectory ``(mu_t, pi_t)``, and the reward of that MDP is the
population average of the agent-level reward.

The partition function over population trajectories is estimated by
importance sampling from a logistic-normal distribution over policy tables
(one independent Gaussian logit per step, state and action, with the last
action's logit pinned to zero), whose density is taken with respect to the
uniform measure on each simplex. The sampler is refitted each epoch by entropy-
regularised policy-gradient ascent on the current population reward.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from .core import ConfigurationError, DemoSet, MfgSpec, renormalize
from .envs import state_action_features
from .irl import RewardModel
from .nn import AdamState, adam_step, forward, grad_params


@dataclass(frozen=True)
class PopulationTrajectory:
    flow: np.ndarray  # (T, S)
    policy: np.ndarray  # (T, S, A)


def estimate_population_demos(demos: DemoSet, n_states: int, n_actions: int) -> list:
    """One population trajectory per game play, from per-play frequencies.

    Rows of states nobody visited are set to the uniform policy.
    """
    out = []
    for play in demos.plays:  # (N, T, 2)
        s, a = play[..., 0], play[..., 1]
        T = play.shape[1]
        flow = np.stack([np.bincount(s[:, t], minlength=n_states) for t in range(T)]) / play.shape[0]
        counts = np.zeros((T, n_states, n_actions))
        np.add.at(counts, (np.broadcast_to(np.arange(T), s.shape), s, a), 1.0)
        visits = counts.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            pi = np.where(visits > 0, counts / visits, 1.0 / n_actions)
        out.append(PopulationTrajectory(flow, pi))
    return out


def population_reward(mu: np.ndarray, pi_t: np.ndarray, reward) -> float:
    """``sum_s mu(s) sum_a pi(a|s) r(s, a, mu)``."""
    R = np.asarray(reward(mu), dtype=np.float64)
    return float(np.einsum("s,sa,sa->", mu, pi_t, R))


def _unroll(spec: MfgSpec, policies: np.ndarray) -> np.ndarray:
    """Flows ``(K, T, S)`` generated by policy tables ``(K, T, S, A)`` from ``mu0``."""
    K, T = policies.shape[:2]
    flows = np.empty((K, T, spec.n_states))
    flows[:, 0] = spec.mu0
    for t in range(T - 1):
        P = np.stack([spec.transition(mu) for mu in flows[:, t]])
        nxt = np.einsum("ks,ksa,ksax->kx", flows[:, t], policies[:, t], P)
        flows[:, t + 1] = renormalize(nxt, what="mean field")
    return flows


def _population_returns(model: RewardModel, flows, policies):
    """Discounted population returns ``(K,)``, plus the features and weights of their gradient."""
    K, T, S = flows.shape
    A = policies.shape[-1]
    feats = np.stack([state_action_features(f, A) for f in flows])  # (K, T, S, A, F)
    r = forward(model.core_params, model.core_spec, feats)[..., 0]
    disc = model.gamma ** np.arange(T)
    w = disc[None, :, None, None] * flows[..., None] * policies  # dR/dr on the grid
    return (w * r).sum(axis=(1, 2, 3)), feats, w


def population_objective(model: RewardModel, demo_flows, demo_policies, sample_flows, sample_policies, sample_logq):
    """Population-level MaxEnt likelihood and its gradient in the core parameters.

    The demo term averages the discounted population returns of the demo
    trajectories; ``log Z`` is the importance-sampled log mean of
    ``exp(return - log q)`` over the sampled trajectories.
    """
    K = len(sample_logq)
    ret_s, feats_s, w_s = _population_returns(model, sample_flows, sample_policies)
    ret_d, feats_d, w_d = _population_returns(model, demo_flows, demo_policies)
    logw = ret_s - sample_logq
    log_z = float(logsumexp(logw) - np.log(K))
    iw = softmax(logw)
    cot = np.concatenate([w_d.reshape(-1) / len(ret_d), -(iw[:, None] * w_s.reshape(K, -1)).reshape(-1)])
    X = np.concatenate([feats_d.reshape(-1, feats_d.shape[-1]), feats_s.reshape(-1, feats_s.shape[-1])])
    grad = grad_params(model.core_params, model.core_spec, X, cot[:, None])
    return float(ret_d.mean() - log_z), grad


@dataclass(frozen=True)
class BaselineConfig:
    epochs: int = 200
    lr: float = 1e-4
    seed: int = 0
    n_samples: int = 64
    sampler_steps: int = 20
    sampler_lr: float = 0.05
    init_log_std: float = 0.0
    hidden: tuple = (64, 64)

    def __post_init__(self):
        for name in ("epochs", "n_samples", "sampler_steps"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "BaselineConfig":
        doc = dict(doc)
        if "hidden" in doc:
            doc["hidden"] = tuple(doc["hidden"])
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown baseline settings {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


class LogitSampler:
    """Independent Gaussian logits per ``(t, s, a)``; the last action's logit is fixed at 0."""

    def __init__(self, T, S, A, log_std):
        self.mean = np.zeros((T, S, A - 1))
        self.log_std = np.full((T, S, A - 1), float(log_std))

    def sample(self, rng, K):
        eps = rng.standard_normal((K, *self.mean.shape))
        z = self.mean + np.exp(self.log_std) * eps
        logq = (-0.5 * eps**2 - self.log_std - 0.5 * np.log(2 * np.pi)).sum(axis=(1, 2, 3))
        logits = np.concatenate([z, np.zeros((K, *self.mean.shape[:2], 1))], axis=-1)
        log_pi = log_softmax(logits, axis=-1)
        # density on the simplex rather than on logits: the change of variables from
        # additive log-ratios contributes 1 / prod_a pi(a), which keeps the partition
        # function over policy tables finite under a uniform base measure
        logq = logq - log_pi.sum(axis=(1, 2, 3))
        return np.exp(log_pi), logq, eps

    def score(self, eps):
        """Gradients of ``log q`` with respect to (mean, log_std) per sample."""
        std = np.exp(self.log_std)
        return eps / std, eps**2 - 1.0


def mfgmdp_irl_train(spec: MfgSpec, demos: DemoSet, cfg: BaselineConfig = BaselineConfig()):
    """Returns ``(model, log)`` where ``model`` has an inactive (zero) potential."""
    if demos.T != spec.horizon:
        raise ConfigurationError(f"demo horizon {demos.T} != game horizon {spec.horizon}")
    rng = np.random.default_rng(cfg.seed)
    S, A, T = spec.n_states, spec.n_actions, spec.horizon
    pops = estimate_population_demos(demos, S, A)
    demo_flows = np.stack([p.flow for p in pops])
    demo_pols = np.stack([p.policy for p in pops])
    model = RewardModel.create(S, A, spec.gamma, rng, cfg.hidden)
    model = RewardModel(S, A, spec.gamma, model.core_spec, model.core_params,
                        model.potential_spec, np.zeros(model.potential_spec.n_params))
    sampler = LogitSampler(T, S, A, cfg.init_log_std)
    opt = AdamState(model.core_spec.n_params, lr=cfg.lr)
    log = []
    for epoch in range(cfg.epochs):
        # refit the proposal towards exp(population return) by entropy-regularised ascent
        for _ in range(cfg.sampler_steps):
            pols, logq, eps = sampler.sample(rng, cfg.n_samples)
            ret, _, _ = _population_returns(model, _unroll(spec, pols), pols)
            adv = ret - logq
            adv = adv - adv.mean()
            g_mean, g_logstd = sampler.score(eps)
            sampler.mean += cfg.sampler_lr * np.tensordot(adv, g_mean, axes=1) / cfg.n_samples
            sampler.log_std += cfg.sampler_lr * np.tensordot(adv, g_logstd, axes=1) / cfg.n_samples
            sampler.log_std = np.clip(sampler.log_std, -5.0, 2.0)

        pols, logq, _ = sampler.sample(rng, cfg.n_samples)
        value, grad = population_objective(model, demo_flows, demo_pols, _unroll(spec, pols), pols, logq)
        log.append((epoch, value, float(np.linalg.norm(grad))))
        opt, params = adam_step(opt, model.core_params, grad, ascent=True)
        model = RewardModel(S, A, spec.gamma, model.core_spec, params, model.potential_spec, model.potential_params)
    return model, log
