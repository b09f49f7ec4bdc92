"""The split-latent encoder/decoder network.

The encoder maps a residual image through 5 convolutions (3x3, first stride 1
then four stride 2, relu after each) to a latent block of L feature maps at
1/16 spatial resolution. The latent is split along channels into a "real"
half h0 and a "fake" half h1; per-class activation strength is the mean
absolute value of each half. Before decoding, the selection step zeroes the
half that does not belong to the sample's class, so reconstruction must work
from the in-class half alone. The decoder mirrors the encoder: four
(nearest-neighbor 2x upsample, conv, relu) stages and a final conv with tanh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .autodiff import DiffTensor
from .errors import ConfigError, ContractError


@dataclass
class ArchConfig:
    input_channels: int = 3
    input_size: int = 64
    latent_maps: int = 128
    encoder_channels: tuple = (16, 32, 64, 128, 128)
    seed: int = 0

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        if self.input_size % 16 != 0:
            raise ConfigError(f"input_size must be divisible by 16, got {self.input_size}")
        if self.latent_maps % 2 != 0:
            raise ConfigError(f"latent_maps must be even, got {self.latent_maps}")
        if len(self.encoder_channels) != 5:
            raise ConfigError(f"need 5 encoder channels, got {self.encoder_channels}")
        if self.encoder_channels[-1] != self.latent_maps:
            raise ConfigError(
                f"last encoder channel {self.encoder_channels[-1]} must equal latent_maps {self.latent_maps}"
            )

    @property
    def latent_size(self) -> int:
        return self.input_size // 16

    def to_dict(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "input_size": self.input_size,
            "latent_maps": self.latent_maps,
            "encoder_channels": list(self.encoder_channels),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(
            input_channels=int(d["input_channels"]),
            input_size=int(d["input_size"]),
            latent_maps=int(d["latent_maps"]),
            encoder_channels=tuple(d["encoder_channels"]),
            seed=int(d["seed"]),
        )


@dataclass
class LatentCode:
    """Encoder output split into the class halves (each (N, L/2, S, S))."""

    h0: DiffTensor
    h1: DiffTensor


@dataclass
class ModelParams:
    """Ordered (name, weight, bias) tuples for the encoder and decoder."""

    arch: ArchConfig
    layers: list = field(default_factory=list)  # list of (name, DiffTensor, DiffTensor)

    def tensors(self) -> list[DiffTensor]:
        out = []
        for _, w, b in self.layers:
            out.append(w)
            out.append(b)
        return out

    def layer(self, name: str):
        for lname, w, b in self.layers:
            if lname == name:
                return w, b
        raise KeyError(name)

    def copy_values(self) -> list[np.ndarray]:
        return [t.value.copy() for t in self.tensors()]

    def load_values(self, values: list[np.ndarray]) -> None:
        tensors = self.tensors()
        if len(values) != len(tensors):
            raise ConfigError(f"expected {len(tensors)} tensors, got {len(values)}")
        for t, v in zip(tensors, values):
            if t.value.shape != v.shape:
                raise ConfigError(f"shape mismatch {t.value.shape} vs {v.shape}")
            t.value[...] = v
            t.zero_grad()


def layer_plan(cfg: ArchConfig) -> list[tuple[str, int, int]]:
    """(name, c_in, c_out) for each convolution in declaration order."""
    enc = cfg.encoder_channels
    plan = []
    c_prev = cfg.input_channels
    for i, c in enumerate(enc):
        plan.append((f"enc{i + 1}", c_prev, c))
        c_prev = c
    dec_out = list(enc[:-1][::-1]) + [cfg.input_channels]
    for i, c in enumerate(dec_out):
        plan.append((f"dec{i + 1}", c_prev, c))
        c_prev = c
    return plan


def init_model(cfg: ArchConfig) -> ModelParams:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases, seeded."""
    rng = np.random.default_rng(cfg.seed)
    params = ModelParams(arch=cfg)
    for name, c_in, c_out in layer_plan(cfg):
        fan_in = c_in * 9
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3)).astype(np.float32)
        b = np.zeros(c_out, dtype=np.float32)
        params.layers.append(
            (name, DiffTensor(w, requires_grad=True), DiffTensor(b, requires_grad=True))
        )
    return params


def encode(params: ModelParams, x: DiffTensor) -> LatentCode:
    """Run the 5-layer encoder and split the latent block into class halves."""
    cfg = params.arch
    if x.value.ndim != 4:
        raise ContractError(f"encode expects a batched NCHW input, got shape {x.shape}")
    if x.value.shape[2] != cfg.input_size or x.value.shape[3] != cfg.input_size:
        raise ContractError(
            f"encode expects {cfg.input_size}x{cfg.input_size} input, got {x.value.shape[2]}x{x.value.shape[3]}"
        )
    h = x
    for i in range(5):
        name, w, b = params.layers[i]
        h = ops.relu(ops.conv2d(h, w, b, stride=1 if i == 0 else 2))
    h0, h1 = ops.channel_split(h, cfg.latent_maps // 2)
    return LatentCode(h0=h0, h1=h1)


def activations(code: LatentCode) -> tuple[DiffTensor, DiffTensor]:
    """Per-sample activation strength of each latent half, each of shape (N,)."""
    return ops.mean_abs_samplewise(code.h0), ops.mean_abs_samplewise(code.h1)


def select(code: LatentCode, labels: np.ndarray) -> DiffTensor:
    """Zero each sample's off-class latent half and concatenate; labels are 0/1."""
    labels = np.asarray(labels)
    if labels.ndim == 0:
        labels = labels.reshape(1)
    if not np.all((labels == 0) | (labels == 1)):
        raise ContractError("labels must be 0 (real) or 1 (fake)")
    return ops.masked_concat(code.h0, code.h1, labels)


def decode(params: ModelParams, z: DiffTensor) -> DiffTensor:
    """Reconstruct the residual image from a (masked) latent block."""
    h = z
    for i in range(4):
        name, w, b = params.layers[5 + i]
        h = ops.relu(ops.conv2d(ops.nn_upsample2x(h), w, b, stride=1))
    name, w, b = params.layers[9]
    return ops.tanh_act(ops.conv2d(h, w, b, stride=1))
