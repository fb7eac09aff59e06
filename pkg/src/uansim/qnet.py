"""Recurrent action-value network, hand-differentiated.

Architecture per agent (parameters shared across agents):

    x -> ReLU(W1 x + b1) -> GRU cell (width H) -> q = W2 h' + b2

The GRU follows the usual gate equations

    r = sigmoid(W_ir z + b_ir + W_hr h + b_hr)
    u = sigmoid(W_iz z + b_iz + W_hz h + b_hz)
    n = tanh(W_in z + b_in + r * (W_hn h + b_hn))
    h' = (1 - u) * n + u * h

All math is float64 numpy; gradients are computed analytically (backprop
through an unrolled window) and optimized with RMSprop. Checkpoints are a
small binary container: magic, version, JSON header, flat little-endian
parameter vector.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

CHECKPOINT_MAGIC = b"UANQNET1"
CHECKPOINT_VERSION = 1

PARAM_ORDER = (
    "w1", "b1",
    "w_ir", "w_iz", "w_in",
    "w_hr", "w_hz", "w_hn",
    "b_ir", "b_iz", "b_in",
    "b_hr", "b_hz", "b_hn",
    "w2", "b2",
)


@dataclass(frozen=True)
class NetworkSpec:
    input_width: int
    hidden_width: int = 64
    recurrent_width: int = 64
    output_width: int = 7

    def __post_init__(self):
        for name in ("input_width", "hidden_width", "recurrent_width", "output_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def shapes(self) -> dict[str, tuple]:
        i, h1, h, a = (
            self.input_width,
            self.hidden_width,
            self.recurrent_width,
            self.output_width,
        )
        return {
            "w1": (h1, i), "b1": (h1,),
            "w_ir": (h, h1), "w_iz": (h, h1), "w_in": (h, h1),
            "w_hr": (h, h), "w_hz": (h, h), "w_hn": (h, h),
            "b_ir": (h,), "b_iz": (h,), "b_in": (h,),
            "b_hr": (h,), "b_hz": (h,), "b_hn": (h,),
            "w2": (a, h), "b2": (a,),
        }


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] weights, zero biases."""
    params = {}
    for name, shape in spec.shapes().items():
        if name.startswith("b"):
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[1])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def zero_params(spec: NetworkSpec) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape) for name, shape in spec.shapes().items()}


def flatten_params(spec: NetworkSpec, params: dict) -> np.ndarray:
    return np.concatenate([np.ravel(params[k]) for k in PARAM_ORDER])


def unflatten_params(spec: NetworkSpec, flat: np.ndarray) -> dict[str, np.ndarray]:
    shapes = spec.shapes()
    out = {}
    pos = 0
    for k in PARAM_ORDER:
        size = int(np.prod(shapes[k]))
        out[k] = flat[pos : pos + size].reshape(shapes[k]).copy()
        pos += size
    if pos != flat.size:
        raise ValueError(f"parameter vector has {flat.size} entries, expected {pos}")
    return out


def copy_params(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def forward_step(params: dict, x: np.ndarray, h: np.ndarray):
    """One time step for a batch of rows.

    :param x: (R, input_width) observations
    :param h: (R, recurrent_width) carried hidden state
    :returns: (q (R, actions), h_new, cache for backprop)
    """
    a1 = x @ params["w1"].T + params["b1"]
    z1 = np.maximum(a1, 0.0)
    r = _sigmoid(z1 @ params["w_ir"].T + params["b_ir"] + h @ params["w_hr"].T + params["b_hr"])
    u = _sigmoid(z1 @ params["w_iz"].T + params["b_iz"] + h @ params["w_hz"].T + params["b_hz"])
    hn = h @ params["w_hn"].T + params["b_hn"]
    n = np.tanh(z1 @ params["w_in"].T + params["b_in"] + r * hn)
    h_new = (1.0 - u) * n + u * h
    q = h_new @ params["w2"].T + params["b2"]
    cache = (x, h, a1, z1, r, u, hn, n, h_new)
    return q, h_new, cache


def forward(params: dict, obs: np.ndarray, hidden: np.ndarray):
    """Public single-step evaluation: returns (q_values, new_hidden)."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    hidden = np.atleast_2d(np.asarray(hidden, dtype=float))
    q, h_new, _ = forward_step(params, obs, hidden)
    return q, h_new


def _backward_step(params, grads, cache, dq, dh_next):
    """Backprop one step. dq: (R, A) loss gradient on q; dh_next: gradient
    flowing into h_new from the following step. Returns gradient on the
    incoming hidden state."""
    x, h, a1, z1, r, u, hn, n, h_new = cache

    dh_new = dq @ params["w2"] + dh_next
    grads["w2"] += dq.T @ h_new
    grads["b2"] += dq.sum(axis=0)

    du = dh_new * (h - n)
    dn = dh_new * (1.0 - u)
    dh = dh_new * u

    dan = dn * (1.0 - n * n)
    grads["w_in"] += dan.T @ z1
    grads["b_in"] += dan.sum(axis=0)
    dz1 = dan @ params["w_in"]
    dr = dan * hn
    dhn = dan * r
    grads["w_hn"] += dhn.T @ h
    grads["b_hn"] += dhn.sum(axis=0)
    dh += dhn @ params["w_hn"]

    dar = dr * r * (1.0 - r)
    grads["w_ir"] += dar.T @ z1
    grads["b_ir"] += dar.sum(axis=0)
    dz1 += dar @ params["w_ir"]
    grads["w_hr"] += dar.T @ h
    grads["b_hr"] += dar.sum(axis=0)
    dh += dar @ params["w_hr"]

    dau = du * u * (1.0 - u)
    grads["w_iz"] += dau.T @ z1
    grads["b_iz"] += dau.sum(axis=0)
    dz1 += dau @ params["w_iz"]
    grads["w_hz"] += dau.T @ h
    grads["b_hz"] += dau.sum(axis=0)
    dh += dau @ params["w_hz"]

    da1 = dz1 * (a1 > 0.0)
    grads["w1"] += da1.T @ x
    grads["b1"] += da1.sum(axis=0)
    return dh


def td_targets(target_params: dict, obs, rewards, done, h0, gamma: float):
    """Bootstrapped targets from the frozen network.

    obs: (B, W+1, N, I); rewards, done: (B, W); h0: (B, N, H).
    y[b,t] = r[b,t] + gamma * (1 - done[b,t]) * sum_n max_a q(o[b,t+1,n]).
    """
    b, wp1, n_agents, width = obs.shape
    w = wp1 - 1
    rows = obs.transpose(1, 0, 2, 3).reshape(wp1, b * n_agents, width)
    h = h0.reshape(b * n_agents, -1)
    maxq = np.empty((w, b * n_agents))
    for t in range(wp1):
        q, h, _ = forward_step(target_params, rows[t], h)
        if t >= 1:
            maxq[t - 1] = q.max(axis=1)
    boot = maxq.reshape(w, b, n_agents).sum(axis=2).T  # (B, W)
    return rewards + gamma * (1.0 - done) * boot


def loss_and_grad(params: dict, target_params: dict, batch: dict, gamma: float):
    """Squared TD error of the additive team value over a window batch.

    batch keys: obs (B,W+1,N,I) float, actions (B,W,N) int, rewards (B,W),
    done (B,W), h0 (B,N,H). Returns (loss, grads dict).
    """
    obs = np.asarray(batch["obs"], dtype=float)
    actions = np.asarray(batch["actions"], dtype=int)
    rewards = np.asarray(batch["rewards"], dtype=float)
    done = np.asarray(batch["done"], dtype=float)
    h0 = np.asarray(batch["h0"], dtype=float)
    b, wp1, n_agents, width = obs.shape
    w = wp1 - 1

    y = td_targets(target_params, obs, rewards, done, h0, gamma)

    rows = obs.transpose(1, 0, 2, 3).reshape(wp1, b * n_agents, width)
    h = h0.reshape(b * n_agents, -1)
    caches = []
    qs = []
    for t in range(w):
        q, h, cache = forward_step(params, rows[t], h)
        caches.append(cache)
        qs.append(q)

    row_idx = np.arange(b * n_agents)
    q_team = np.empty((b, w))
    chosen = []
    for t in range(w):
        acts = actions[:, t, :].reshape(-1)
        picked = qs[t][row_idx, acts]
        chosen.append(acts)
        q_team[:, t] = picked.reshape(b, n_agents).sum(axis=1)

    delta = q_team - y
    loss = float(np.mean(delta**2))

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dh = np.zeros((b * n_agents, h0.shape[-1]))
    scale = 2.0 / (b * w)
    for t in reversed(range(w)):
        dq = np.zeros_like(qs[t])
        per_row = np.repeat(delta[:, t] * scale, n_agents)
        dq[row_idx, chosen[t]] = per_row
        dh = _backward_step(params, grads, caches[t], dq, dh)
    return loss, grads


class RmsProp:
    """RMSprop with the usual square-average smoothing."""

    def __init__(self, spec: NetworkSpec, smoothing: float = 0.99, eps: float = 1e-8):
        self.smoothing = smoothing
        self.eps = eps
        self.sq = {name: np.zeros(shape) for name, shape in spec.shapes().items()}

    def apply(self, params: dict, grads: dict, lr: float) -> None:
        a = self.smoothing
        for k, g in grads.items():
            self.sq[k] = a * self.sq[k] + (1.0 - a) * g * g
            params[k] -= lr * g / (np.sqrt(self.sq[k]) + self.eps)


def td_update(
    params: dict,
    target_params: dict,
    optimizer: RmsProp,
    batch: dict,
    gamma: float,
    lr: float,
) -> float:
    """One gradient step on a window batch; returns the pre-update loss."""
    loss, grads = loss_and_grad(params, target_params, batch, gamma)
    optimizer.apply(params, grads, lr)
    return loss


def sync_target(params: dict) -> dict:
    """Fresh frozen copy of the online parameters."""
    return copy_params(params)


def save_checkpoint(path, spec: NetworkSpec, params: dict, meta: dict | None = None) -> None:
    """Binary checkpoint: magic, version, JSON header, float64 LE params."""
    header = {
        "spec": {
            "input_width": spec.input_width,
            "hidden_width": spec.hidden_width,
            "recurrent_width": spec.recurrent_width,
            "output_width": spec.output_width,
        },
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    flat = flatten_params(spec, params).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(flat.tobytes())


def load_checkpoint(path):
    """Returns (spec, params, meta)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a value-network checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        spec = NetworkSpec(**header["spec"])
        flat = np.frombuffer(fh.read(), dtype="<f8").astype(float)
    params = unflatten_params(spec, flat)
    return spec, params, header.get("meta", {})
