"""
RMSprop training loop and checkpoint persistence.

Checkpoint layout (all integers little-endian)::

    b"CAE1" | u32 version | u32 header_len | header (UTF-8 JSON)
    | float32 tensors in declaration order | u32 CRC32 of everything before
"""
import json
import logging
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from .model import CaeConfig, ConfigError
from .tensor import ShapeError, as_tensor, mse_loss

log = logging.getLogger(__name__)

MAGIC = b"CAE1"
FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Loss became NaN or infinite."""


class CheckpointFormatError(ValueError):
    """A checkpoint file is corrupt or not a checkpoint at all."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.001
    batch_size: int = 32
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise ConfigError(f"rmsprop_decay must lie in (0, 1), got {self.rmsprop_decay}")
        if self.rmsprop_epsilon <= 0:
            raise ConfigError(f"rmsprop_epsilon must be positive, got {self.rmsprop_epsilon}")

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad training config {d!r}: {exc}") from None


@dataclass
class RmspropState:
    """Running mean of squared gradients, one array per parameter."""

    v: list

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(as_tensor(p)) for p in params])


@dataclass
class TrainHistory:
    epoch_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    state: RmspropState = None

    def __len__(self):
        return len(self.epoch_loss)

    def to_csv(self, path):
        lines = ["epoch,train_loss,val_loss,seconds"]
        for i, loss in enumerate(self.epoch_loss):
            val = self.val_loss[i] if i < len(self.val_loss) else float("nan")
            lines.append(f"{i + 1},{loss!r},{val!r},{self.epoch_seconds[i]:.3f}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def rmsprop_step(param, grad, v, config):
    """One RMSprop update; returns the new (param, v)."""
    param, grad, v = as_tensor(param), as_tensor(grad), as_tensor(v)
    if not param.shape == grad.shape == v.shape:
        raise ShapeError(f"rmsprop shapes disagree: {param.shape}, {grad.shape}, {v.shape}")
    rho = config.rmsprop_decay
    v_new = rho * v + (1.0 - rho) * grad * grad
    param_new = param - config.learning_rate * grad / (np.sqrt(v_new) + config.rmsprop_epsilon)
    return param_new, v_new


def _stack(images):
    return np.stack([as_tensor(x) for x in images])


def batch_loss_and_grads(model, batch):
    """Mean per-image MSE over ``batch`` and the matching parameter gradients."""
    out, cache = M.forward(model, batch)
    loss, grad = mse_loss(out, batch)
    return loss, M.backward(model, cache, out, grad)


def mean_loss(model, images, chunk=64):
    """Mean per-image MSE of ``model`` over ``images``."""
    x = _stack(images)
    total = 0.0
    for i in range(0, len(x), chunk):
        part = x[i : i + chunk]
        out = M.reconstruct(model, part)
        total += float(np.sum((out - part) ** 2))
    return total / x.size


def train(model, train_set, val_set=None, config=None, state=None):
    """Fit ``model`` to ``train_set`` with mini-batch RMSprop.

    Each epoch draws a fresh permutation from a generator seeded with
    ``config.seed``; the last partial batch is kept. The input model is not
    modified. Returns ``(trained_model, history)``; ``history.state`` holds the
    final optimizer state.
    """
    config = config or TrainConfig()
    if len(train_set) == 0:
        raise ValueError("train_set is empty")
    x = _stack(train_set)
    M._check_input(model, x)
    val = _stack(val_set) if val_set is not None and len(val_set) else None

    model = model.copy()
    params = model.parameters()
    state = state or RmspropState.zeros_like(params)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    n = len(x)

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            batch = x[order[start : start + config.batch_size]]
            loss, grads = batch_loss_and_grads(model, batch)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch + 1}, batch {b + 1} "
                    f"(lr={config.learning_rate}, batch_size={len(batch)})"
                )
            total += loss * len(batch)
            updated = [rmsprop_step(p, g, v, config) for p, g, v in zip(params, grads, state.v)]
            params = [u[0] for u in updated]
            state = RmspropState([u[1] for u in updated])
            model.set_parameters(params)
        history.epoch_loss.append(total / n)
        if val is not None:
            history.val_loss.append(mean_loss(model, val))
        history.epoch_seconds.append(time.perf_counter() - t0)
        log.info("epoch %d/%d loss %.6f", epoch + 1, config.epochs, history.epoch_loss[-1])

    history.state = state
    return model, history


# -- checkpoints --------------------------------------------------------------


def _encode(model, state=None, extra=None):
    arrays = [np.asarray(p, dtype="<f4") for p in model.parameters()]
    header = {
        "config": model.config.to_dict(),
        "layers": model.layer_specs(),
        "tensors": [[name, list(a.shape)] for name, a in zip(model.parameter_names(), arrays)],
        "optimizer_state": state is not None,
    }
    if extra:
        header["meta"] = extra
    if state is not None:
        arrays += [np.asarray(v, dtype="<f4") for v in state.v]
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(
        [MAGIC, struct.pack("<II", FORMAT_VERSION, len(head)), head]
        + [a.tobytes(order="C") for a in arrays]
    )
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model, path, state=None, meta=None):
    """Write ``model`` (and optionally the RMSprop state) to ``path``."""
    data = _encode(model, state, meta)
    Path(path).write_bytes(data)
    return len(data)


def read_checkpoint(path):
    """Parse a checkpoint file; returns ``(model, state_or_None, header)``."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointFormatError("bad magic", 0)
    if len(data) < 12:
        raise CheckpointFormatError("truncated preamble", len(data))
    version, head_len = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported format version {version}", 4)
    if len(data) < 12 + head_len:
        raise CheckpointFormatError("truncated header", len(data))
    try:
        header = json.loads(data[12 : 12 + head_len].decode("utf-8"))
        config = CaeConfig.from_dict(header["config"])
        shapes = [tuple(s) for _, s in header["tensors"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ConfigError) as exc:
        raise CheckpointFormatError(f"malformed header: {exc}", 12) from None

    model = M.build_model(config, seed=0)
    expected = [p.shape for p in model.parameters()]
    if shapes != expected:
        raise CheckpointFormatError("tensor shapes do not match the stored config", 12)
    if header.get("optimizer_state"):
        shapes = shapes + shapes

    offset = 12 + head_len
    size = offset + 4 * sum(int(np.prod(s)) for s in shapes) + 4
    if len(data) < size:
        raise CheckpointFormatError(f"truncated file, expected {size} bytes", len(data))
    if len(data) > size:
        raise CheckpointFormatError("trailing bytes after checksum", size)
    (crc,) = struct.unpack_from("<I", data, size - 4)
    if zlib.crc32(data[: size - 4]) != crc:
        raise CheckpointFormatError("CRC32 mismatch", size - 4)

    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        a = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        arrays.append(a.reshape(shape).astype(np.float64))
        offset += 4 * count

    n = len(expected)
    model.set_parameters(arrays[:n])
    state = RmspropState(arrays[n:]) if len(arrays) > n else None
    return model, state, header


def load_checkpoint(path):
    return read_checkpoint(path)[0]


def round_to_float32(model):
    """Copy of ``model`` with every parameter rounded to checkpoint precision."""
    clone = model.copy()
    clone.set_parameters([np.asarray(p, dtype=np.float32).astype(np.float64) for p in model.parameters()])
    return clone

