"""Feed-forward policy network with hand-rolled backpropagation.

The policy maps (observation, desired return, desired horizon) to an action in
[0,1]^3. The observation splits into three blocks that get their own embedding
subnets (compartments, previous action, holiday flag); the embeddings are
multiplied elementwise, passed through a state subnet, multiplied with the
embedding of the conditioning inputs, and decoded by a fully connected head
whose outputs are squashed by (tanh + 1) / 2.

Two architectures are registered. `dense-big` embeds the 130 compartment
features with two linear layers. `conv1d-big` treats them as 10 age-group
channels over the 13 compartment channels and applies two valid kernel-5
convolutions (13 -> 9 -> 5 positions, 20 filters, flattened to 100) before the
linear embedding.

Conditioning inputs are taken as-is; callers are expected to pre-scale them to
O(1) (see the trainer). Everything here is float64 and functional: forward
passes build explicit caches, so shared parameters are read-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1

OBS_COMPARTMENTS = 130
OBS_ACTION = 3
OBS_FLAG = 1
OBS_SIZE = OBS_COMPARTMENTS + OBS_ACTION + OBS_FLAG
N_ACTION_OUT = 3
N_CONDITION = 3  # two return components + horizon

ARCHITECTURES = {
    "dense-big": {
        "sc_emb": [("linear", 130, 64), ("relu",), ("linear", 64, 64), ("sigmoid",)],
        "sm_emb": [("linear", 3, 64), ("relu",), ("linear", 64, 64), ("sigmoid",)],
        "sh_emb": [("linear", 1, 64), ("relu",), ("linear", 64, 64), ("sigmoid",)],
        "s_emb": [("linear", 64, 64), ("relu",)],
        "c_emb": [("linear", 3, 64), ("sigmoid",)],
        "fc": [("linear", 64, 64), ("relu",), ("linear", 64, 3)],
    },
    "conv1d-big": {
        "sc_emb": [("channels", 13, 10), ("conv1d", 10, 20, 5), ("relu",),
                   ("conv1d", 20, 20, 5), ("relu",), ("flatten",),
                   ("linear", 100, 64), ("sigmoid",)],
        "sm_emb": [("linear", 3, 64), ("relu",), ("linear", 64, 64), ("sigmoid",)],
        "sh_emb": [("linear", 1, 64), ("relu",), ("linear", 64, 64), ("sigmoid",)],
        "s_emb": [("linear", 64, 64), ("relu",)],
        "c_emb": [("linear", 3, 64), ("sigmoid",)],
        "fc": [("linear", 64, 64), ("relu",), ("linear", 64, 3)],
    },
}
SUBNET_ORDER = ("sc_emb", "sm_emb", "sh_emb", "s_emb", "c_emb", "fc")


@dataclass
class NetworkParams:
    arch: str
    seed: int
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, self.seed,
                             {k: v.copy() for k, v in self.weights.items()})


@dataclass
class TrainingBatch:
    """Rows of supervised policy targets.

    `desired_return` and `desired_horizon` must already be in conditioning
    units (pre-scaled); `target_action` lies in [0,1]^3.
    """

    obs: np.ndarray
    desired_return: np.ndarray
    desired_horizon: np.ndarray
    target_action: np.ndarray

    def __post_init__(self):
        self.obs = np.atleast_2d(np.asarray(self.obs, dtype=float))
        self.desired_return = np.atleast_2d(np.asarray(self.desired_return, dtype=float))
        self.desired_horizon = np.atleast_1d(np.asarray(self.desired_horizon, dtype=float))
        self.target_action = np.atleast_2d(np.asarray(self.target_action, dtype=float))
        n = len(self.obs)
        if n == 0:
            raise ValueError("batch must be non-empty")
        if (len(self.desired_return) != n or len(self.desired_horizon) != n
                or len(self.target_action) != n):
            raise ValueError("batch fields disagree on row count")
        if np.any((self.target_action < 0) | (self.target_action > 1)):
            raise ValueError("target actions must lie in [0,1]^3")

    def __len__(self) -> int:
        return len(self.obs)


# --- layer primitives ----------------------------------------------------------

def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(grad_out, cache, w):
    x = cache
    grad_w = x.T @ grad_out
    grad_b = grad_out.sum(axis=0)
    return grad_out @ w.T, grad_w, grad_b


def relu_forward(x):
    return np.maximum(x, 0.0), x


def relu_backward(grad_out, cache):
    return grad_out * (cache > 0)


def sigmoid_forward(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out, out


def sigmoid_backward(grad_out, cache):
    return grad_out * cache * (1.0 - cache)


def conv1d_forward(x, w, b):
    """Valid cross-correlation. x: (B, C_in, L); w: (C_out, C_in, k)."""
    k = w.shape[2]
    l_out = x.shape[2] - k + 1
    out = np.tile(b[None, :, None], (x.shape[0], 1, l_out))
    for d in range(k):
        out += np.einsum("bcl,oc->bol", x[:, :, d:d + l_out], w[:, :, d])
    return out, x


def conv1d_backward(grad_out, cache, w):
    x = cache
    k = w.shape[2]
    l_out = grad_out.shape[2]
    grad_x = np.zeros_like(x)
    grad_w = np.zeros_like(w)
    for d in range(k):
        grad_x[:, :, d:d + l_out] += np.einsum("bol,oc->bcl", grad_out, w[:, :, d])
        grad_w[:, :, d] = np.einsum("bcl,bol->oc", x[:, :, d:d + l_out], grad_out)
    grad_b = grad_out.sum(axis=(0, 2))
    return grad_x, grad_w, grad_b


# --- subnet plumbing -------------------------------------------------------------

def _layer_params(spec):
    """Parameter shapes for one layer spec, or None."""
    kind = spec[0]
    if kind == "linear":
        _, n_in, n_out = spec
        return (n_in, n_out), (n_out,), n_in
    if kind == "conv1d":
        _, c_in, c_out, k = spec
        return (c_out, c_in, k), (c_out,), c_in * k
    return None


def init_network(arch: str, seed: int) -> NetworkParams:
    """Symmetric scaled-uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; have {sorted(ARCHITECTURES)}")
    rng = np.random.default_rng(seed)
    weights = {}
    for subnet in SUBNET_ORDER:
        for idx, spec in enumerate(ARCHITECTURES[arch][subnet]):
            shapes = _layer_params(spec)
            if shapes is None:
                continue
            w_shape, b_shape, fan_in = shapes
            bound = 1.0 / np.sqrt(fan_in)
            weights[f"{subnet}/{idx}/w"] = rng.uniform(-bound, bound, w_shape)
            weights[f"{subnet}/{idx}/b"] = np.zeros(b_shape)
    return NetworkParams(arch=arch, seed=seed, weights=weights)


def _subnet_forward(net: NetworkParams, subnet: str, x: np.ndarray):
    caches = []
    for idx, spec in enumerate(ARCHITECTURES[net.arch][subnet]):
        kind = spec[0]
        if kind == "linear":
            x, cache = linear_forward(x, net.weights[f"{subnet}/{idx}/w"],
                                      net.weights[f"{subnet}/{idx}/b"])
        elif kind == "conv1d":
            x, cache = conv1d_forward(x, net.weights[f"{subnet}/{idx}/w"],
                                      net.weights[f"{subnet}/{idx}/b"])
        elif kind == "relu":
            x, cache = relu_forward(x)
        elif kind == "sigmoid":
            x, cache = sigmoid_forward(x)
        elif kind == "flatten":
            cache = x.shape
            x = x.reshape(x.shape[0], -1)
        elif kind == "channels":
            # (B, channels * groups) -> (B, groups, channels): age groups become
            # conv channels, compartment channels the spatial axis.
            _, n_ch, n_groups = spec
            cache = x.shape
            x = x.reshape(x.shape[0], n_ch, n_groups).transpose(0, 2, 1)
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
        caches.append(cache)
    return x, caches


def _subnet_backward(net: NetworkParams, subnet: str, caches, grad, grads_out: dict):
    for idx in reversed(range(len(ARCHITECTURES[net.arch][subnet]))):
        spec = ARCHITECTURES[net.arch][subnet][idx]
        kind = spec[0]
        cache = caches[idx]
        if kind == "linear":
            grad, gw, gb = linear_backward(grad, cache, net.weights[f"{subnet}/{idx}/w"])
            grads_out[f"{subnet}/{idx}/w"] = gw
            grads_out[f"{subnet}/{idx}/b"] = gb
        elif kind == "conv1d":
            grad, gw, gb = conv1d_backward(grad, cache, net.weights[f"{subnet}/{idx}/w"])
            grads_out[f"{subnet}/{idx}/w"] = gw
            grads_out[f"{subnet}/{idx}/b"] = gb
        elif kind == "relu":
            grad = relu_backward(grad, cache)
        elif kind == "sigmoid":
            grad = sigmoid_backward(grad, cache)
        elif kind in ("flatten", "channels"):
            if kind == "channels":
                grad = grad.transpose(0, 2, 1).reshape(cache)
            else:
                grad = grad.reshape(cache)
    return grad


def _split_obs(obs: np.ndarray):
    if obs.shape[1] != OBS_SIZE:
        raise ValueError(f"observation must have {OBS_SIZE} features, got {obs.shape[1]}")
    return (obs[:, :OBS_COMPARTMENTS],
            obs[:, OBS_COMPARTMENTS:OBS_COMPARTMENTS + OBS_ACTION],
            obs[:, OBS_COMPARTMENTS + OBS_ACTION:])


def _forward(net: NetworkParams, obs, cond):
    xc, xm, xh = _split_obs(obs)
    e_c, cache_c = _subnet_forward(net, "sc_emb", xc)
    e_m, cache_m = _subnet_forward(net, "sm_emb", xm)
    e_h, cache_h = _subnet_forward(net, "sh_emb", xh)
    s_in = e_c * e_m * e_h
    e_s, cache_s = _subnet_forward(net, "s_emb", s_in)
    e_cond, cache_cond = _subnet_forward(net, "c_emb", cond)
    u = e_s * e_cond
    z, cache_fc = _subnet_forward(net, "fc", u)
    t = np.tanh(z)
    action = 0.5 * (t + 1.0)
    cache = dict(c=cache_c, m=cache_m, h=cache_h, s=cache_s, cond=cache_cond, fc=cache_fc,
                 e_c=e_c, e_m=e_m, e_h=e_h, e_s=e_s, e_cond=e_cond, t=t)
    return action, cache


def _backward(net: NetworkParams, cache, grad_action) -> dict[str, np.ndarray]:
    grads: dict[str, np.ndarray] = {}
    grad_z = grad_action * 0.5 * (1.0 - cache["t"] ** 2)
    grad_u = _subnet_backward(net, "fc", cache["fc"], grad_z, grads)
    grad_es = grad_u * cache["e_cond"]
    grad_econd = grad_u * cache["e_s"]
    _subnet_backward(net, "c_emb", cache["cond"], grad_econd, grads)
    grad_sin = _subnet_backward(net, "s_emb", cache["s"], grad_es, grads)
    grad_ec = grad_sin * cache["e_m"] * cache["e_h"]
    grad_em = grad_sin * cache["e_c"] * cache["e_h"]
    grad_eh = grad_sin * cache["e_c"] * cache["e_m"]
    _subnet_backward(net, "sc_emb", cache["c"], grad_ec, grads)
    _subnet_backward(net, "sm_emb", cache["m"], grad_em, grads)
    _subnet_backward(net, "sh_emb", cache["h"], grad_eh, grads)
    return grads


def _conditioning(desired_return, desired_horizon):
    desired_return = np.atleast_2d(np.asarray(desired_return, dtype=float))
    desired_horizon = np.atleast_1d(np.asarray(desired_horizon, dtype=float))
    cond = np.concatenate([desired_return, desired_horizon[:, None]], axis=1)
    if not np.all(np.isfinite(cond)):
        raise ValueError("conditioning inputs must be finite")
    return cond


def policy_forward(net: NetworkParams, obs, desired_return, desired_horizon) -> np.ndarray:
    """Deterministic action(s) in [0,1]^3; accepts a single row or a batch."""
    obs = np.asarray(obs, dtype=float)
    single = obs.ndim == 1
    obs = np.atleast_2d(obs)
    if not np.all(np.isfinite(obs)):
        raise ValueError("observation must be finite")
    cond = _conditioning(desired_return, desired_horizon)
    action, _ = _forward(net, obs, cond)
    return action[0] if single else action


# --- losses and optimization -----------------------------------------------------

def mse_loss_and_grads(net: NetworkParams, batch: TrainingBatch):
    """Mean over rows of (1/3) sum of squared action errors, plus gradients."""
    cond = _conditioning(batch.desired_return, batch.desired_horizon)
    pred, cache = _forward(net, batch.obs, cond)
    err = pred - batch.target_action
    loss = float(np.mean(np.sum(err ** 2, axis=1) / N_ACTION_OUT))
    grad_pred = 2.0 * err / (N_ACTION_OUT * len(batch))
    grads = _backward(net, cache, grad_pred)
    return loss, grads


def batch_loss(net: NetworkParams, batch: TrainingBatch) -> float:
    return mse_loss_and_grads(net, batch)[0]


class Adam:
    """Standard Adam (beta1=0.9, beta2=0.999) over a parameter dict."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def update(self, weights: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for key, g in grads.items():
            m = self.m.setdefault(key, np.zeros_like(g))
            v = self.v.setdefault(key, np.zeros_like(g))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            weights[key] -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def train_batch(net: NetworkParams, adam: Adam, batch: TrainingBatch, lr: float) -> float:
    """One Adam step on the batch; returns the pre-update loss."""
    loss, grads = mse_loss_and_grads(net, batch)
    adam.update(net.weights, grads, lr)
    return loss


def cross_entropy_loss(logits, target_index: int) -> float:
    """Negative log softmax probability of the target class (discrete-action parity)."""
    logits = np.asarray(logits, dtype=float)
    if not (0 <= target_index < logits.size):
        raise IndexError(f"target index {target_index} out of range for {logits.size} actions")
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[target_index])


# --- verification ------------------------------------------------------------------

def gradient_check(net: NetworkParams, batch: TrainingBatch, epsilon: float,
                   rng: np.random.Generator | None = None, n_samples: int = 200,
                   grads: dict[str, np.ndarray] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients over a
    random subsample of weights. A correct implementation stays well below 1e-4
    at epsilon ~1e-5. Passing `grads` overrides the analytic gradients (used to
    prove the check catches corrupted backprop)."""
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon outside the sensible finite-difference window")
    rng = rng or np.random.default_rng(0)
    if grads is None:
        _, grads = mse_loss_and_grads(net, batch)

    keys = sorted(grads)
    sizes = np.array([grads[k].size for k in keys])
    total = sizes.sum()
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    offsets = np.cumsum(sizes) - sizes

    worst = 0.0
    for flat_idx in picks:
        key_idx = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        key = keys[key_idx]
        inner = int(flat_idx - offsets[key_idx])
        w = net.weights[key].ravel()
        orig = w[inner]
        w[inner] = orig + epsilon
        up = batch_loss(net, batch)
        w[inner] = orig - epsilon
        down = batch_loss(net, batch)
        w[inner] = orig
        numeric = (up - down) / (2.0 * epsilon)
        analytic = grads[key].ravel()[inner]
        denom = max(abs(analytic), abs(numeric), 1e-5)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst


# --- checkpoints ---------------------------------------------------------------------

def save_checkpoint(path: str | Path, net: NetworkParams, extra: dict | None = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "arch": net.arch, "seed": net.seed,
            "extra": extra or {}}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             **net.weights)


def load_checkpoint(path: str | Path) -> tuple[NetworkParams, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        weights = {k: data[k] for k in data.files if k != "__meta__"}
    net = NetworkParams(arch=meta["arch"], seed=meta["seed"], weights=weights)
    return net, meta["extra"]
