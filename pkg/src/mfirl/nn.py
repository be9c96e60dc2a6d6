"""Flat-parameter multilayer perceptrons with hand-written backprop and Adam.

Parameters live in one flat float64 vector laid out layer by layer as
``W (out x in)`` followed by ``b (out)``. Hidden layers use a leaky ReLU;
the output layer is linear.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import InvalidArgumentError


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    out_dim: int = 1
    hidden: tuple = (64, 64)
    negative_slope: float = 0.01
    # None -> Glorot-uniform bound per layer; a float -> fixed uniform bound
    init_scale: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.in_dim < 1 or self.out_dim < 1 or any(h < 1 for h in self.hidden):
            raise InvalidArgumentError(f"all widths must be >= 1: {self}")

    @property
    def widths(self) -> tuple:
        return (self.in_dim, *self.hidden, self.out_dim)

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum(w[i + 1] * w[i] + w[i + 1] for i in range(len(w) - 1))

    def layers(self, params: np.ndarray):
        """Yield ``(W, b)`` views into ``params``."""
        if params.shape != (self.n_params,):
            raise InvalidArgumentError(f"expected {self.n_params} parameters, got {params.shape}")
        w, off = self.widths, 0
        for i in range(len(w) - 1):
            n_in, n_out = w[i], w[i + 1]
            W = params[off : off + n_out * n_in].reshape(n_out, n_in)
            off += n_out * n_in
            b = params[off : off + n_out]
            off += n_out
            yield W, b


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    parts = []
    w = spec.widths
    for i in range(len(w) - 1):
        n_in, n_out = w[i], w[i + 1]
        bound = spec.init_scale if spec.init_scale is not None else np.sqrt(6.0 / (n_in + n_out))
        parts.append(rng.uniform(-bound, bound, size=n_out * n_in))
        if spec.init_scale is None:
            parts.append(np.zeros(n_out))
        else:
            parts.append(rng.uniform(-bound, bound, size=n_out))
    return np.concatenate(parts)


def _as_batch(x: np.ndarray, spec: MlpSpec) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x.reshape(-1, x.shape[-1])
    if x2.shape[1] != spec.in_dim:
        raise InvalidArgumentError(f"input width {x2.shape[1]} != {spec.in_dim}")
    return x2, single


def forward(params: np.ndarray, spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one input ``(in,)`` or a batch ``(..., in)``."""
    lead = np.shape(x)[:-1]
    h, single = _as_batch(x, spec)
    layers = list(spec.layers(params))
    for W, b in layers[:-1]:
        z = h @ W.T + b
        h = np.where(z > 0, z, spec.negative_slope * z)
    W, b = layers[-1]
    out = h @ W.T + b
    return out[0] if single else out.reshape(*lead, spec.out_dim)


def grad_params(
    params: np.ndarray, spec: MlpSpec, x: np.ndarray, cotangent: np.ndarray
) -> np.ndarray:
    """Gradient of ``sum(forward(params, x) * cotangent)`` with respect to ``params``."""
    h, _ = _as_batch(x, spec)
    g = np.asarray(cotangent, dtype=np.float64).reshape(h.shape[0], spec.out_dim)
    layers = list(spec.layers(params))
    acts, pre = [h], []
    for W, b in layers[:-1]:
        z = acts[-1] @ W.T + b
        pre.append(z)
        acts.append(np.where(z > 0, z, spec.negative_slope * z))
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads.append((g.sum(axis=0), g.T @ acts[i]))
        if i > 0:
            g = g @ W
            g = g * np.where(pre[i - 1] > 0, 1.0, spec.negative_slope)
    flat = []
    for gb, gW in reversed(grads):
        flat.append(gW.ravel())
        flat.append(gb)
    return np.concatenate(flat)


@dataclass
class AdamState:
    n_params: int
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.n_params)
        if self.v is None:
            self.v = np.zeros(self.n_params)


def adam_step(
    state: AdamState, params: np.ndarray, grad: np.ndarray, ascent: bool = False
) -> tuple[AdamState, np.ndarray]:
    """Bias-corrected Adam. Returns fresh ``(state, params)``; inputs are untouched."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape or params.shape != (state.n_params,):
        raise InvalidArgumentError(
            f"length mismatch: params {params.shape}, grad {grad.shape}, state {state.n_params}"
        )
    step = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad**2
    m_hat = m / (1 - state.beta1**step)
    v_hat = v / (1 - state.beta2**step)
    delta = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_params = params + delta if ascent else params - delta
    new_state = AdamState(state.n_params, state.lr, state.beta1, state.beta2, state.eps, step, m, v)
    return new_state, new_params


def mlp_to_json(spec: MlpSpec, params: np.ndarray) -> dict:
    return {"spec": {**asdict(spec), "hidden": list(spec.hidden)}, "params": params.tolist()}


def mlp_from_json(doc: dict) -> tuple[MlpSpec, np.ndarray]:
    spec = MlpSpec(**{**doc["spec"], "hidden": tuple(doc["spec"]["hidden"])})
    params = np.asarray(doc["params"], dtype=np.float64)
    if params.shape != (spec.n_params,):
        raise InvalidArgumentError("stored parameter count does not match the network spec")
    return spec, params


def save_mlp(path, spec: MlpSpec, params: np.ndarray) -> None:
    with open(path, "w") as fh:
        json.dump(mlp_to_json(spec, params), fh)


def load_mlp(path) -> tuple[MlpSpec, np.ndarray]:
    with open(path) as fh:
        return mlp_from_json(json.load(fh))
