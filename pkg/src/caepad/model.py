"""
Convolutional autoencoder: three stride-2 conv stages down, three
(upsample x2, conv) stages back up, sigmoid on the reconstruction.

Scores are Euclidean reconstruction errors; an image is accepted as a client
when its error is strictly below the threshold.
"""
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ConvParams, ShapeError

CLIENT = "client"
IMPOSTER = "imposter"
LABELS = (CLIENT, IMPOSTER)

N_STAGES = 3


class ConfigError(ValueError):
    """Invalid model or training configuration."""


@dataclass(frozen=True)
class CaeConfig:
    input_size: tuple = (3, 64, 64)
    encoder_channels: tuple = (16, 32, 64)
    kernel_size: int = 3

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "encoder_channels", tuple(int(v) for v in self.encoder_channels))
        self.validate()

    def validate(self):
        if len(self.encoder_channels) != N_STAGES:
            raise ConfigError(
                f"autoencoder needs exactly {N_STAGES} encoder stages, "
                f"got {len(self.encoder_channels)}"
            )
        if any(c < 1 for c in self.encoder_channels):
            raise ConfigError(f"channel widths must be positive: {self.encoder_channels}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if len(self.input_size) != 3 or min(self.input_size) < 1:
            raise ConfigError(f"input_size must be (C, H, W), got {self.input_size}")
        _, h, w = self.input_size
        if h % 2**N_STAGES or w % 2**N_STAGES:
            raise ConfigError(f"input spatial size {h}x{w} must be divisible by {2**N_STAGES}")

    @property
    def padding(self):
        return (self.kernel_size - 1) // 2

    def latent_shape(self):
        _, h, w = self.input_size
        f = 2**N_STAGES
        return (self.encoder_channels[-1], h // f, w // f)

    def to_dict(self):
        return {
            "input_size": list(self.input_size),
            "encoder_channels": list(self.encoder_channels),
            "kernel_size": self.kernel_size,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad model config {d!r}: {exc}") from None


@dataclass
class CaeModel:
    config: CaeConfig
    encoder: list
    decoder: list

    def layers(self):
        return [*self.encoder, *self.decoder]

    def parameters(self):
        """Parameter arrays in declaration order (w, b per layer)."""
        out = []
        for layer in self.layers():
            out.extend((layer.weights, layer.bias))
        return out

    def parameter_names(self):
        names = []
        for prefix, stack in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i in range(len(stack)):
                names.extend((f"{prefix}.{i}.weights", f"{prefix}.{i}.bias"))
        return names

    def set_parameters(self, arrays):
        arrays = list(arrays)
        layers = self.layers()
        if len(arrays) != 2 * len(layers):
            raise ShapeError(f"expected {2 * len(layers)} parameter arrays, got {len(arrays)}")
        for layer, w, b in zip(layers, arrays[::2], arrays[1::2]):
            w, b = T.as_tensor(w), T.as_tensor(b)
            if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
                raise ShapeError("parameter shapes do not match the architecture")
            layer.weights, layer.bias = w, b

    def copy(self):
        clone = lambda p: ConvParams(p.weights.copy(), p.bias.copy(), p.stride, p.padding)
        return CaeModel(self.config, [clone(p) for p in self.encoder], [clone(p) for p in self.decoder])

    def layer_specs(self):
        """Architecture summary stored in checkpoint headers."""
        specs = []
        for kind, stack in (("encoder", self.encoder), ("decoder", self.decoder)):
            for p in stack:
                specs.append(
                    {
                        "stage": kind,
                        "weights": list(p.weights.shape),
                        "bias": list(p.bias.shape),
                        "stride": p.stride,
                        "padding": p.padding,
                    }
                )
        return specs


@dataclass(frozen=True)
class Threshold:
    value: float
    provenance: str = field(default="")

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"threshold must be non-negative, got {self.value}")


def build_model(config=None, seed=0):
    """Build an autoencoder with fan-in scaled uniform weights and zero biases.

    Weights are drawn from U(-b, b), b = sqrt(6 / (in_channels * k**2)), from a
    PRNG seeded by ``seed``, so the same (config, seed) gives the same model.
    """
    config = config or CaeConfig()
    config.validate()
    rng = np.random.default_rng(seed)
    k, pad = config.kernel_size, config.padding
    in_ch = config.input_size[0]

    def init(cout, cin, stride):
        bound = np.sqrt(6.0 / (cin * k * k))
        w = rng.uniform(-bound, bound, size=(cout, cin, k, k))
        return ConvParams(w, np.zeros(cout), stride=stride, padding=pad)

    widths = [in_ch, *config.encoder_channels]
    encoder = [init(widths[i + 1], widths[i], 2) for i in range(N_STAGES)]
    back = widths[::-1]  # e.g. 64, 32, 16, 3
    decoder = [init(back[i + 1], back[i], 1) for i in range(N_STAGES)]
    return CaeModel(config, encoder, decoder)


def _check_input(model, x):
    x = T.as_tensor(x)
    expected = model.config.input_size
    if x.shape[-3:] != expected or x.ndim not in (3, 4):
        raise ShapeError(f"model expects images of shape {expected}, got {x.shape}")
    return x


def forward(model, x):
    """Run the network and keep the intermediates needed by ``backward``."""
    x = _check_input(model, x)
    cache = []
    h = x
    for p in model.encoder:
        z = T.conv2d_forward(h, p)
        cache.append((h, z))
        h = T.relu(z)
    for idx, p in enumerate(model.decoder):
        u = T.upsample_nearest(h, 2)
        z = T.conv2d_forward(u, p)
        cache.append((u, z))
        h = T.relu(z) if idx < N_STAGES - 1 else T.sigmoid(z)
    return h, cache


def backward(model, cache, out, grad_out):
    """Parameter gradients (declaration order) for upstream ``grad_out``."""
    grads = [None] * (4 * N_STAGES)
    layers = model.layers()
    g = T.sigmoid_backward(out, grad_out)
    for li in range(len(layers) - 1, -1, -1):
        layer_in, z = cache[li]
        if li != len(layers) - 1:
            g = T.relu_backward(z, g)
        g, gw, gb = T.conv2d_backward(layer_in, layers[li], g)
        grads[2 * li], grads[2 * li + 1] = gw, gb
        if li >= N_STAGES:
            g = T.upsample_backward(g, 2)
    return grads


def encode_shapes(model):
    """Output shape of each encoder stage for a single image."""
    shapes = []
    _, h, w = model.config.input_size
    for p in model.encoder:
        h, w = p.output_size(h), p.output_size(w)
        shapes.append((p.out_channels, h, w))
    return shapes


def reconstruct(model, image):
    out, _ = forward(model, image)
    return out


def reconstruction_error(model, image):
    """Euclidean distance between ``image`` and its reconstruction.

    A batch ``[N, C, H, W]`` returns one distance per image.
    """
    x = _check_input(model, image)
    diff = reconstruct(model, x) - x
    if x.ndim == 3:
        return float(np.sqrt(np.sum(diff * diff)))
    return np.sqrt(np.sum(diff * diff, axis=(1, 2, 3)))


def decide(error, threshold):
    """Label for a precomputed error; ties go to imposter."""
    value = threshold.value if isinstance(threshold, Threshold) else float(threshold)
    return CLIENT if error < value else IMPOSTER


def classify(model, image, threshold):
    return decide(reconstruction_error(model, image), threshold)
