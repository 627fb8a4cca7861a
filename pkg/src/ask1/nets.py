"""The four policy-stack MLPs with manual reverse-mode gradients and a portable checkpoint format.

Parameters are kept in float64 for training; checkpoints store float32, and
initialization rounds through float32 so a freshly built bundle round-trips
losslessly.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

OBS_DIM = 30
HISTORY_LEN = 5
CMD_DIM = 3
GAIT_DIM = 11
PRIV_DIM = 17
HEIGHT_DIM = 187
ACTION_DIM = 12
ENCODED_DIM = 32

CHECKPOINT_MAGIC = b"ASK1CKPT"
CHECKPOINT_VERSION = 1
_ACT_CODES = {"identity": 0, "tanh": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed; the message names the failing section."""


def elu(x: np.ndarray) -> np.ndarray:
    out = np.exp(np.minimum(x, 0.0))
    out -= 1.0
    out += np.maximum(x, 0.0)
    return out


def elu_grad_from_output(a: np.ndarray) -> np.ndarray:
    """ELU'(z) expressed through the activation a = ELU(z): 1 above zero, e^z = a + 1 below."""
    return np.minimum(a + 1.0, 1.0)


@dataclass
class MlpParams:
    """Fully-connected stack: ELU hidden layers, identity or tanh output."""

    weights: list[np.ndarray]  # (out, in) per layer
    biases: list[np.ndarray]   # (out,) per layer
    output_activation: str = "identity"

    def __post_init__(self):
        if self.output_activation not in _ACT_CODES:
            raise ValueError(f"unknown output activation '{self.output_activation}'")
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise ValueError("weight/bias shapes disagree")
        for w_prev, w_next in zip(self.weights, self.weights[1:]):
            if w_next.shape[1] != w_prev.shape[0]:
                raise ValueError("consecutive layer dims do not chain")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def param_list(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    # C-contiguous so forward passes hit the same BLAS path as checkpoint-loaded weights
    return np.ascontiguousarray(gain * q[:rows, :cols])


def mlp_init(
    dims: list[int],
    rng: np.random.Generator,
    output_activation: str = "identity",
    output_gain: float = 1.0,
) -> MlpParams:
    """Orthogonal init, gain sqrt(2) on hidden layers; weights rounded through float32."""
    weights, biases = [], []
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        gain = output_gain if i == len(dims) - 2 else np.sqrt(2.0)
        w = _orthogonal(rng, d_out, d_in, gain).astype(np.float32).astype(np.float64)
        weights.append(w)
        biases.append(np.zeros(d_out))
    return MlpParams(weights=weights, biases=biases, output_activation=output_activation)


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass; returns the output and the tape needed for backward.

    x is (..., d_in). tape[0] is the input, tape[i] the post-activation output
    of layer i (for ELU and tanh the activation determines its own gradient,
    so no pre-activations need to be kept).
    """
    x = np.asarray(x, dtype=np.float64)
    tape = [x]
    h = x
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        if i < n - 1:
            h = elu(z)
        elif params.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
        tape.append(h)
    return h, tape


def mlp_backward(
    params: MlpParams, tape: list[np.ndarray], output_grad: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Exact gradients of the forward map.

    Returns ([dW0, db0, dW1, db1, ...], input_grad); batch dimensions of
    output_grad are summed into the parameter gradients.
    """
    n = len(params.weights)
    grads: list[np.ndarray] = [None] * (2 * n)
    g = np.asarray(output_grad, dtype=np.float64)
    if params.output_activation == "tanh":
        g = g * (1.0 - tape[-1] ** 2)
    for i in range(n - 1, -1, -1):
        h_in = tape[i]
        g2 = g.reshape(-1, g.shape[-1])
        h2 = h_in.reshape(-1, h_in.shape[-1])
        grads[2 * i] = g2.T @ h2
        grads[2 * i + 1] = np.sum(g2, axis=0)
        g = g @ params.weights[i]
        if i > 0:
            g *= elu_grad_from_output(h_in)
    return grads, g


@dataclass
class ActionDistribution:
    """Diagonal Gaussian over joint-offset actions; the mean is tanh-bounded upstream."""

    mean: np.ndarray  # (..., 12)
    std: np.ndarray   # (12,) or broadcastable

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal(self.mean.shape)

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x) - self.mean) / self.std
        dim = self.mean.shape[-1]
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(self.std) * np.ones_like(self.mean), axis=-1) \
            - 0.5 * dim * np.log(2.0 * np.pi)

    def entropy(self) -> np.ndarray:
        dim = self.mean.shape[-1]
        return np.sum(np.log(self.std) * np.ones_like(self.mean), axis=-1) + 0.5 * dim * (1.0 + np.log(2.0 * np.pi))


@dataclass
class NetworkBundle:
    """History encoder, velocity estimator, actor, critic, and the global action log-std."""

    history_encoder: MlpParams
    state_estimator: MlpParams
    actor: MlpParams
    critic: MlpParams
    log_std: np.ndarray  # (12,)

    def networks(self) -> dict[str, MlpParams]:
        return {
            "history_encoder": self.history_encoder,
            "state_estimator": self.state_estimator,
            "actor": self.actor,
            "critic": self.critic,
        }

    def param_list(self) -> list[np.ndarray]:
        out = []
        for net in self.networks().values():
            out.extend(net.param_list())
        out.append(self.log_std)
        return out

    @property
    def history_dim(self) -> int:
        return self.history_encoder.layer_dims[0]

    @property
    def actor_input_dim(self) -> int:
        return self.actor.layer_dims[0]

    @property
    def critic_input_dim(self) -> int:
        return self.critic.layer_dims[0]


def init_bundle(
    rng: np.random.Generator,
    obs_dim: int = OBS_DIM,
    history_len: int = HISTORY_LEN,
    cmd_dim: int = CMD_DIM,
    gait_dim: int = GAIT_DIM,
    priv_dim: int = PRIV_DIM,
    height_dim: int = HEIGHT_DIM,
    action_dim: int = ACTION_DIM,
    encoded_dim: int = ENCODED_DIM,
) -> NetworkBundle:
    """Fresh bundle at the published layer sizes; actor output layer starts near zero."""
    hist = history_len * obs_dim
    critic_in = cmd_dim + gait_dim + height_dim + priv_dim + obs_dim
    return NetworkBundle(
        history_encoder=mlp_init([hist, 256, 128, 64, encoded_dim], rng),
        state_estimator=mlp_init([hist, 256, 128, 64, 3], rng),
        actor=mlp_init([encoded_dim + 3 + cmd_dim + gait_dim, 256, 128, 64, action_dim],
                       rng, output_activation="tanh", output_gain=0.01),
        critic=mlp_init([critic_in, 512, 256, 128, 1], rng),
        log_std=np.zeros(action_dim),
    )


def policy_forward(
    bundle: NetworkBundle, history: np.ndarray, cmd: np.ndarray, gait_vec: np.ndarray
) -> tuple[np.ndarray, np.ndarray, ActionDistribution]:
    """Actor-side pass: encoded history, estimated base velocity, and the action distribution.

    history is (..., 150) flattened oldest frame first (or (..., 5, 30)).
    """
    history = np.asarray(history, dtype=np.float64)
    if history.shape[-1] != bundle.history_dim:
        history = history.reshape(*history.shape[:-2], -1)
    h, _ = mlp_forward(bundle.history_encoder, history)
    v_hat, _ = mlp_forward(bundle.state_estimator, history)
    actor_in = np.concatenate([h, v_hat, np.asarray(cmd, dtype=np.float64),
                               np.asarray(gait_vec, dtype=np.float64)], axis=-1)
    mean, _ = mlp_forward(bundle.actor, actor_in)
    return h, v_hat, ActionDistribution(mean=mean, std=np.exp(bundle.log_std))


def critic_forward(bundle: NetworkBundle, full_state: np.ndarray) -> np.ndarray:
    """Scalar value estimate from the privileged full-state vector."""
    v, _ = mlp_forward(bundle.critic, full_state)
    return v[..., 0]


def _pack_network(params: MlpParams) -> bytes:
    dims = params.layer_dims
    out = struct.pack("<I", len(dims))
    out += struct.pack(f"<{len(dims)}I", *dims)
    out += struct.pack("<B", _ACT_CODES[params.output_activation])
    for w, b in zip(params.weights, params.biases):
        out += w.astype("<f4").tobytes(order="C")
        out += b.astype("<f4").tobytes(order="C")
    return out


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, section: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"checkpoint truncated in section '{section}'")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk


def _unpack_network(reader: _Reader, name: str) -> MlpParams:
    (n_dims,) = struct.unpack("<I", reader.take(4, name))
    if not 2 <= n_dims <= 64:
        raise CheckpointError(f"implausible layer count in section '{name}'")
    dims = struct.unpack(f"<{n_dims}I", reader.take(4 * n_dims, name))
    (act_code,) = struct.unpack("<B", reader.take(1, name))
    if act_code not in _ACT_NAMES:
        raise CheckpointError(f"unknown activation code in section '{name}'")
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        wb = reader.take(4 * d_in * d_out, name)
        w = np.frombuffer(wb, dtype="<f4").reshape(d_out, d_in).astype(np.float64)
        bb = reader.take(4 * d_out, name)
        b = np.frombuffer(bb, dtype="<f4").astype(np.float64)
        weights.append(w)
        biases.append(b)
    return MlpParams(weights=weights, biases=biases, output_activation=_ACT_NAMES[act_code])


def save_checkpoint(bundle: NetworkBundle, path) -> None:
    """Write the bundle: magic, version, four networks with layer-dim headers, log-std, CRC32."""
    body = CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
    for net in bundle.networks().values():
        body += _pack_network(net)
    body += struct.pack("<I", bundle.log_std.shape[0])
    body += bundle.log_std.astype("<f4").tobytes()
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(body)


def load_checkpoint(path) -> NetworkBundle:
    """Read and validate a checkpoint; raises CheckpointError naming the failing section."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(CHECKPOINT_MAGIC) + 8 or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("bad magic: not a checkpoint file")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("checksum mismatch: checkpoint is corrupt or truncated")
    reader = _Reader(data[:-4])
    reader.take(len(CHECKPOINT_MAGIC), "magic")
    (version,) = struct.unpack("<I", reader.take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported version {version} (expected {CHECKPOINT_VERSION})")
    nets = {name: _unpack_network(reader, name)
            for name in ("history_encoder", "state_estimator", "actor", "critic")}
    (std_dim,) = struct.unpack("<I", reader.take(4, "log_std"))
    log_std = np.frombuffer(reader.take(4 * std_dim, "log_std"), dtype="<f4").astype(np.float64)
    if reader.pos != len(reader.data):
        raise CheckpointError("trailing bytes after section 'log_std'")
    return NetworkBundle(log_std=log_std, **nets)
