"""From-scratch neural toolkit: dense layers, an LSTM cell, reverse-mode
gradients (including through time), an adaptive moment optimizer, Gaussian
policy heads, and a versioned binary checkpoint container.

Everything is float64 numpy. Networks expose ``params()`` as a dict of live
arrays (name -> ndarray) so the optimizer updates them in place; gradients
travel as parallel dicts under the same keys.
"""

from __future__ import annotations

import copy
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import MochargeError


class ShapeMismatch(MochargeError):
    """Array shape incompatible with the layer or optimizer state."""


class MissingCache(MochargeError):
    """Backward called without the matching forward cache."""


class CheckpointNotFound(MochargeError):
    """Checkpoint file path does not exist."""


class BadCheckpoint(MochargeError):
    """Checkpoint container malformed."""


class CheckpointVersionMismatch(BadCheckpoint):
    """Checkpoint schema version unsupported by this build."""


_ACTIVATIONS = ("identity", "tanh", "sigmoid")


def _act(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "tanh":
        return np.tanh(z)
    if tag == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _act_backward(tag: str, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # derivative expressed through the activation output y
    if tag == "tanh":
        return dy * (1.0 - y * y)
    if tag == "sigmoid":
        return dy * y * (1.0 - y)
    return dy


class Dense:
    """Fully connected layer y = act(x W + b), x shaped (batch, fan_in)."""

    def __init__(self, fan_in: int, fan_out: int, activation: str = "identity",
                 rng: np.random.Generator | None = None):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.fan_in = fan_in
        self.fan_out = fan_out
        self.activation = activation
        bound = 1.0 / np.sqrt(fan_in)
        if rng is None:
            self.w = np.zeros((fan_in, fan_out))
        else:
            self.w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        self.b = np.zeros(fan_out)

    def forward(self, x: np.ndarray, need_cache: bool = True):
        """Returns (y, cache); cache is None when need_cache is False."""
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise ShapeMismatch(f"expected (*, {self.fan_in}), got {x.shape}")
        y = _act(self.activation, x @ self.w + self.b)
        return y, ({"x": x, "y": y} if need_cache else None)

    def backward(self, cache, dy: np.ndarray):
        """Returns (dx, {"w": dw, "b": db}) for upstream gradient dy."""
        if cache is None:
            raise MissingCache("dense backward without forward cache")
        dz = _act_backward(self.activation, cache["y"], dy)
        dw = cache["x"].T @ dz
        db = dz.sum(axis=0)
        dx = dz @ self.w.T
        return dx, {"w": dw, "b": db}


def dense_forward(layer: Dense, x: np.ndarray):
    """Functional alias for Dense.forward."""
    return layer.forward(x)


class LstmCell:
    """Single LSTM cell; gate blocks ordered (input, forget, candidate, output).

    c_t = f * c_{t-1} + i * g,  h_t = o * tanh(c_t). Forget-gate bias
    initialized to +1; weights scaled-uniform by 1/sqrt(hidden).
    """

    def __init__(self, input_size: int, hidden_size: int,
                 rng: np.random.Generator | None = None):
        self.input_size = input_size
        self.hidden_size = hidden_size
        h = hidden_size
        bound = 1.0 / np.sqrt(h)
        if rng is None:
            self.wx = np.zeros((input_size, 4 * h))
            self.wh = np.zeros((h, 4 * h))
        else:
            self.wx = rng.uniform(-bound, bound, size=(input_size, 4 * h))
            self.wh = rng.uniform(-bound, bound, size=(h, 4 * h))
        self.b = np.zeros(4 * h)
        self.b[h:2 * h] = 1.0

    def step(self, x: np.ndarray, h: np.ndarray, c: np.ndarray, need_cache: bool = True):
        """One time step on a (batch, input_size) slice.

        Returns (h_next, c_next, cache).
        """
        hs = self.hidden_size
        if x.ndim != 2 or x.shape[1] != self.input_size or h.shape != c.shape or h.shape != (x.shape[0], hs):
            raise ShapeMismatch(
                f"x {x.shape}, h {h.shape}, c {c.shape} inconsistent with "
                f"cell ({self.input_size} -> {hs})"
            )
        z = x @ self.wx + h @ self.wh + self.b
        i = _act("sigmoid", z[:, :hs])
        f = _act("sigmoid", z[:, hs:2 * hs])
        g = np.tanh(z[:, 2 * hs:3 * hs])
        o = _act("sigmoid", z[:, 3 * hs:])
        c2 = f * c + i * g
        tc = np.tanh(c2)
        h2 = o * tc
        cache = None
        if need_cache:
            cache = {"x": x, "h": h, "c": c, "i": i, "f": f, "g": g, "o": o, "tc": tc}
        return h2, c2, cache

    def backward_step(self, cache, dh2: np.ndarray, dc2: np.ndarray, grads: dict):
        """Backprop one step; accumulates into grads ("wx", "wh", "b").

        dh2/dc2 are gradients w.r.t. this step's outputs. Returns
        (dx, dh_prev, dc_prev).
        """
        if cache is None:
            raise MissingCache("lstm backward without forward cache")
        i, f, g, o, tc = cache["i"], cache["f"], cache["g"], cache["o"], cache["tc"]
        do = dh2 * tc
        dc = dc2 + dh2 * o * (1.0 - tc * tc)
        df = dc * cache["c"]
        di = dc * g
        dg = dc * i
        dc_prev = dc * f
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        grads["wx"] += cache["x"].T @ dz
        grads["wh"] += cache["h"].T @ dz
        grads["b"] += dz.sum(axis=0)
        dx = dz @ self.wx.T
        dh_prev = dz @ self.wh.T
        return dx, dh_prev, dc_prev

    def zero_grads(self) -> dict:
        return {
            "wx": np.zeros_like(self.wx),
            "wh": np.zeros_like(self.wh),
            "b": np.zeros_like(self.b),
        }


def lstm_step(cell: LstmCell, x: np.ndarray, state: tuple[np.ndarray, np.ndarray]):
    """Functional alias: returns (h_t, c_t, cache)."""
    h, c = state
    return cell.step(x, h, c)


def gaussian_logp(u: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Row-wise log density of a diagonal Gaussian; u, mean (B, A)."""
    z = (u - mean) / np.exp(log_std)
    return -0.5 * (z * z).sum(axis=-1) - log_std.sum() - 0.5 * u.shape[-1] * np.log(2.0 * np.pi)


def gaussian_entropy(log_std: np.ndarray) -> float:
    """Entropy of the diagonal Gaussian (nats)."""
    a = log_std.shape[0]
    return float(log_std.sum() + 0.5 * a * (1.0 + np.log(2.0 * np.pi)))


class RecurrentGaussianPolicy:
    """Actor: obs -> LSTM -> tanh dense -> mean head, learned log-std vector."""

    kind = "recurrent"

    def __init__(self, obs_dim: int, hidden_size: int, action_dim: int = 2,
                 init_log_std: float = 0.0, rng: np.random.Generator | None = None):
        self.obs_dim = obs_dim
        self.hidden_size = hidden_size
        self.action_dim = action_dim
        self.cell = LstmCell(obs_dim, hidden_size, rng)
        self.fc = Dense(hidden_size, hidden_size, "tanh", rng)
        self.head = Dense(hidden_size, action_dim, "identity", rng)
        self.log_std = np.full(action_dim, float(init_log_std))

    def initial_state(self, batch: int):
        h = self.hidden_size
        return (np.zeros((batch, h)), np.zeros((batch, h)))

    def act(self, obs: np.ndarray, state, rng=None, deterministic: bool = False):
        """Sample (or take the mean of) the pre-squash action distribution."""
        h, c = state
        h2, c2, _ = self.cell.step(obs, h, c, need_cache=False)
        y, _ = self.fc.forward(h2, need_cache=False)
        mean, _ = self.head.forward(y, need_cache=False)
        if deterministic:
            u = mean
        else:
            u = mean + np.exp(self.log_std) * rng.standard_normal(mean.shape)
        return u, gaussian_logp(u, mean, self.log_std), (h2, c2)

    def sequence_forward(self, obs_seq: np.ndarray):
        """Forward a (T, B, obs_dim) sequence from zero state.

        Returns (means (T, B, action_dim), ctx for sequence_backward).
        """
        t_len, b_n, _ = obs_seq.shape
        h, c = self.initial_state(b_n)
        caches = []
        hs = np.empty((t_len, b_n, self.hidden_size))
        for t in range(t_len):
            h, c, cache = self.cell.step(obs_seq[t], h, c)
            caches.append(cache)
            hs[t] = h
        flat = hs.reshape(t_len * b_n, self.hidden_size)
        y, fc_cache = self.fc.forward(flat)
        means, head_cache = self.head.forward(y)
        ctx = {"caches": caches, "fc": fc_cache, "head": head_cache, "shape": (t_len, b_n)}
        return means.reshape(t_len, b_n, self.action_dim), ctx

    def sequence_backward(self, ctx, dmeans: np.ndarray) -> dict:
        """Backprop through time; returns grads keyed like params() (log_std
        entry zero-filled, to be added by the loss code)."""
        t_len, b_n = ctx["shape"]
        dflat = dmeans.reshape(t_len * b_n, self.action_dim)
        dy, head_g = self.head.backward(ctx["head"], dflat)
        dhs_flat, fc_g = self.fc.backward(ctx["fc"], dy)
        dhs = dhs_flat.reshape(t_len, b_n, self.hidden_size)
        cell_g = self.cell.zero_grads()
        dh = np.zeros((b_n, self.hidden_size))
        dc = np.zeros((b_n, self.hidden_size))
        for t in range(t_len - 1, -1, -1):
            _, dh, dc = self.cell.backward_step(ctx["caches"][t], dh + dhs[t], dc, cell_g)
        return {
            "cell.wx": cell_g["wx"],
            "cell.wh": cell_g["wh"],
            "cell.b": cell_g["b"],
            "fc.w": fc_g["w"],
            "fc.b": fc_g["b"],
            "head.w": head_g["w"],
            "head.b": head_g["b"],
            "log_std": np.zeros_like(self.log_std),
        }

    def params(self) -> dict:
        return {
            "cell.wx": self.cell.wx,
            "cell.wh": self.cell.wh,
            "cell.b": self.cell.b,
            "fc.w": self.fc.w,
            "fc.b": self.fc.b,
            "head.w": self.head.w,
            "head.b": self.head.b,
            "log_std": self.log_std,
        }

    def checkpoint_meta(self) -> dict:
        return {
            "kind": self.kind,
            "obs_dim": self.obs_dim,
            "hidden_size": self.hidden_size,
            "action_dim": self.action_dim,
        }

    def clone(self):
        return copy.deepcopy(self)


class FeedForwardGaussianPolicy:
    """Actor without recurrence: obs -> tanh dense x2 -> mean head."""

    kind = "feedforward"

    def __init__(self, obs_dim: int, hidden_size: int, action_dim: int = 2,
                 init_log_std: float = 0.0, rng: np.random.Generator | None = None):
        self.obs_dim = obs_dim
        self.hidden_size = hidden_size
        self.action_dim = action_dim
        self.fc1 = Dense(obs_dim, hidden_size, "tanh", rng)
        self.fc2 = Dense(hidden_size, hidden_size, "tanh", rng)
        self.head = Dense(hidden_size, action_dim, "identity", rng)
        self.log_std = np.full(action_dim, float(init_log_std))

    def initial_state(self, batch: int):
        return None

    def act(self, obs: np.ndarray, state, rng=None, deterministic: bool = False):
        y, _ = self.fc1.forward(obs, need_cache=False)
        y, _ = self.fc2.forward(y, need_cache=False)
        mean, _ = self.head.forward(y, need_cache=False)
        if deterministic:
            u = mean
        else:
            u = mean + np.exp(self.log_std) * rng.standard_normal(mean.shape)
        return u, gaussian_logp(u, mean, self.log_std), None

    def sequence_forward(self, obs_seq: np.ndarray):
        t_len, b_n, _ = obs_seq.shape
        flat = obs_seq.reshape(t_len * b_n, self.obs_dim)
        y1, c1 = self.fc1.forward(flat)
        y2, c2 = self.fc2.forward(y1)
        means, c3 = self.head.forward(y2)
        ctx = {"c1": c1, "c2": c2, "c3": c3, "shape": (t_len, b_n)}
        return means.reshape(t_len, b_n, self.action_dim), ctx

    def sequence_backward(self, ctx, dmeans: np.ndarray) -> dict:
        t_len, b_n = ctx["shape"]
        dflat = dmeans.reshape(t_len * b_n, self.action_dim)
        dy, g3 = self.head.backward(ctx["c3"], dflat)
        dy, g2 = self.fc2.backward(ctx["c2"], dy)
        _, g1 = self.fc1.backward(ctx["c1"], dy)
        return {
            "fc1.w": g1["w"],
            "fc1.b": g1["b"],
            "fc2.w": g2["w"],
            "fc2.b": g2["b"],
            "head.w": g3["w"],
            "head.b": g3["b"],
            "log_std": np.zeros_like(self.log_std),
        }

    def params(self) -> dict:
        return {
            "fc1.w": self.fc1.w,
            "fc1.b": self.fc1.b,
            "fc2.w": self.fc2.w,
            "fc2.b": self.fc2.b,
            "head.w": self.head.w,
            "head.b": self.head.b,
            "log_std": self.log_std,
        }

    def checkpoint_meta(self) -> dict:
        return {
            "kind": self.kind,
            "obs_dim": self.obs_dim,
            "hidden_size": self.hidden_size,
            "action_dim": self.action_dim,
        }

    def clone(self):
        return copy.deepcopy(self)


class ValueNet:
    """Critic: obs -> tanh dense x2 -> one linear output per objective."""

    def __init__(self, obs_dim: int, hidden_size: int, n_objectives: int = 2,
                 rng: np.random.Generator | None = None):
        self.obs_dim = obs_dim
        self.hidden_size = hidden_size
        self.n_objectives = n_objectives
        self.fc1 = Dense(obs_dim, hidden_size, "tanh", rng)
        self.fc2 = Dense(hidden_size, hidden_size, "tanh", rng)
        self.out = Dense(hidden_size, n_objectives, "identity", rng)

    def forward(self, x: np.ndarray, need_cache: bool = False):
        y1, c1 = self.fc1.forward(x, need_cache)
        y2, c2 = self.fc2.forward(y1, need_cache)
        v, c3 = self.out.forward(y2, need_cache)
        return v, ({"c1": c1, "c2": c2, "c3": c3} if need_cache else None)

    def backward(self, ctx, dv: np.ndarray) -> dict:
        if ctx is None:
            raise MissingCache("value-net backward without forward cache")
        dy, g3 = self.out.backward(ctx["c3"], dv)
        dy, g2 = self.fc2.backward(ctx["c2"], dy)
        _, g1 = self.fc1.backward(ctx["c1"], dy)
        return {
            "fc1.w": g1["w"],
            "fc1.b": g1["b"],
            "fc2.w": g2["w"],
            "fc2.b": g2["b"],
            "out.w": g3["w"],
            "out.b": g3["b"],
        }

    def params(self) -> dict:
        return {
            "fc1.w": self.fc1.w,
            "fc1.b": self.fc1.b,
            "fc2.w": self.fc2.w,
            "fc2.b": self.fc2.b,
            "out.w": self.out.w,
            "out.b": self.out.b,
        }

    def checkpoint_meta(self) -> dict:
        return {
            "kind": "value",
            "obs_dim": self.obs_dim,
            "hidden_size": self.hidden_size,
            "n_objectives": self.n_objectives,
        }

    def clone(self):
        return copy.deepcopy(self)


class Adam:
    """Bias-corrected adaptive moment optimizer over a named parameter dict."""

    def __init__(self, params: dict, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        """One in-place update; grads must cover a subset of params' keys."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                raise ShapeMismatch(f"unknown parameter {k!r}")
            if g.shape != params[k].shape:
                raise ShapeMismatch(f"gradient shape {g.shape} != param {params[k].shape} for {k!r}")
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(params: dict, grads: dict, state: Adam) -> None:
    """Functional alias for Adam.step."""
    state.step(params, grads)


_MAGIC = b"MCHGCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: dict, meta: dict, seed: int) -> None:
    """Write the versioned binary container.

    Layout: magic (8 bytes), u32 schema version, u64 seed record, u32
    metadata length + canonical JSON metadata, u32 parameter count, then per
    parameter a name/shape record (u16 name length, name bytes, u8 ndim,
    u32 dims), then all payloads as raw little-endian float64 in the same
    order, and a trailing u32 CRC32 of everything before it.
    """
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), struct.pack("<Q", seed)]
    parts.append(struct.pack("<I", len(meta_bytes)))
    parts.append(meta_bytes)
    parts.append(struct.pack("<I", len(params)))
    for name, arr in params.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            parts.append(struct.pack("<I", dim))
    for arr in params.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    blob = b"".join(parts)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(blob)


@dataclass(slots=True)
class CheckpointData:
    params: dict
    meta: dict
    seed: int
    version: int


def load_checkpoint(path) -> CheckpointData:
    """Read a container written by save_checkpoint; validates CRC and version."""
    if not Path(path).is_file():
        raise CheckpointNotFound(f"checkpoint file not found: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(_MAGIC) + 20 or blob[: len(_MAGIC)] != _MAGIC:
        raise BadCheckpoint(f"{path}: not a checkpoint container")
    body, crc_stored = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise BadCheckpoint(f"{path}: checksum mismatch")
    off = len(_MAGIC)
    version = struct.unpack_from("<I", body, off)[0]
    off += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionMismatch(
            f"{path}: schema version {version}, supported {CHECKPOINT_VERSION}"
        )
    seed = struct.unpack_from("<Q", body, off)[0]
    off += 8
    meta_len = struct.unpack_from("<I", body, off)[0]
    off += 4
    meta = json.loads(body[off:off + meta_len].decode("utf-8"))
    off += meta_len
    n_params = struct.unpack_from("<I", body, off)[0]
    off += 4
    shapes = []
    for _ in range(n_params):
        name_len = struct.unpack_from("<H", body, off)[0]
        off += 2
        name = body[off:off + name_len].decode("utf-8")
        off += name_len
        ndim = struct.unpack_from("<B", body, off)[0]
        off += 1
        dims = struct.unpack_from(f"<{ndim}I", body, off) if ndim else ()
        off += 4 * ndim
        shapes.append((name, tuple(dims)))
    params = {}
    for name, shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        params[name] = arr.astype(np.float64, copy=True)
    if off != len(body):
        raise BadCheckpoint(f"{path}: trailing bytes in container")
    return CheckpointData(params=params, meta=meta, seed=int(seed), version=int(version))


def load_params_into(net, params: dict) -> None:
    """Copy a loaded parameter dict into a live network, shape-checked."""
    live = net.params()
    if set(live) != set(params):
        raise BadCheckpoint(
            f"parameter names {sorted(params)} do not match network {sorted(live)}"
        )
    for k, arr in params.items():
        if live[k].shape != arr.shape:
            raise ShapeMismatch(f"{k}: checkpoint {arr.shape} vs network {live[k].shape}")
        live[k][...] = arr


def policy_from_meta(meta: dict):
    """Instantiate an untrained network matching checkpoint metadata."""
    kind = meta.get("kind")
    if kind == "recurrent":
        return RecurrentGaussianPolicy(meta["obs_dim"], meta["hidden_size"], meta["action_dim"])
    if kind == "feedforward":
        return FeedForwardGaussianPolicy(meta["obs_dim"], meta["hidden_size"], meta["action_dim"])
    if kind == "value":
        return ValueNet(meta["obs_dim"], meta["hidden_size"], meta["n_objectives"])
    raise BadCheckpoint(f"unknown network kind {kind!r}")


def load_policy(path) -> tuple:
    """Load a checkpoint and rebuild its network. Returns (net, CheckpointData)."""
    data = load_checkpoint(path)
    net = policy_from_meta(data.meta)
    load_params_into(net, data.params)
    return net, data


def param_checksum(params: dict) -> int:
    """Order-sensitive CRC of all parameter bytes (task-isolation checks)."""
    crc = 0
    for name in sorted(params):
        crc = zlib.crc32(name.encode("utf-8"), crc)
        crc = zlib.crc32(np.ascontiguousarray(params[name], dtype="<f8").tobytes(), crc)
    return crc & 0xFFFFFFFF
