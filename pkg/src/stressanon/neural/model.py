"""CNN / CRNN / CRNN+Attention stress classifiers and their checkpoints."""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from stressanon.dsp import FeatureKind
from stressanon.errors import ConfigError, ShapeError
from stressanon.neural.layers import BiLSTM, Conv2d, Dropout, Linear, MaxPool2d, Module, MultiHeadAttention
from stressanon.neural.tensor import Tensor, no_grad


class Architecture(str, enum.Enum):
    CNN = "cnn"
    CRNN = "crnn"
    CRNN_ATTENTION = "crnn_attention"


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    pool: tuple[int, int] = (2, 2)

    def __post_init__(self) -> None:
        for name in ("kernel", "stride", "pool"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.out_channels < 1:
            raise ConfigError("conv out_channels must be positive")


@dataclass(frozen=True)
class ModelConfig:
    conv_stack: tuple[ConvSpec, ...] = (ConvSpec(64), ConvSpec(128), ConvSpec(256))
    proj_dim: int = 512
    lstm_hidden: int = 256
    attention_heads: int = 4
    dense_hidden: int = 0
    n_classes: int = 2
    dropout_rate: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        stack = tuple(c if isinstance(c, ConvSpec) else ConvSpec(**c) for c in self.conv_stack)
        object.__setattr__(self, "conv_stack", stack)
        if self.proj_dim != 2 * self.lstm_hidden:
            raise ConfigError(f"proj_dim ({self.proj_dim}) must equal 2 * lstm_hidden ({self.lstm_hidden})")
        if self.attention_heads < 1 or self.proj_dim % self.attention_heads:
            raise ConfigError(f"proj_dim {self.proj_dim} is not divisible by {self.attention_heads} heads")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be at least 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["conv_stack"] = [{k: list(v) if isinstance(v, tuple) else v for k, v in c.items()} for c in d["conv_stack"]]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ModelConfig:
        d = dict(d)
        if "conv_stack" in d:
            d["conv_stack"] = tuple(ConvSpec(**c) for c in d["conv_stack"])
        return cls(**d)


REFERENCE_CONFIG = ModelConfig()

# a desk-scale configuration that trains in seconds on the synthetic corpora
SMALL_CONFIG = ModelConfig(conv_stack=(ConvSpec(8), ConvSpec(16)), proj_dim=32, lstm_hidden=16,
                           attention_heads=4, dense_hidden=32, dropout_rate=0.1)


def default_coeffs(kind: FeatureKind | str, n_mels: int = 128, n_mfcc: int = 20) -> int:
    return n_mels if FeatureKind(kind) is FeatureKind.LMS else n_mfcc


@dataclass(eq=False)
class Network(Module):
    """Conv front-end, time-distributed projection, optional BiLSTM and
    attention blocks, mean pooling over time and a dense head."""

    architecture: Architecture
    feature_kind: FeatureKind
    config: ModelConfig
    n_coeffs: int
    convs: list = field(default_factory=list)
    pools: list = field(default_factory=list)
    projection: Linear | None = None
    recurrent: BiLSTM | None = None
    attention: MultiHeadAttention | None = None
    hidden: Linear | None = None
    head: Linear | None = None
    drop: Dropout | None = None
    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None
    class_names: tuple[str, ...] = ()

    def set_input_normalization(self, mean: np.ndarray, std: np.ndarray) -> None:
        self.input_mean = np.asarray(mean, dtype=np.float64)
        self.input_std = np.maximum(np.asarray(std, dtype=np.float64), 1e-6)

    def __call__(self, features: np.ndarray | Tensor) -> Tensor:
        """``features``: (B, T, F) -> logits (B, n_classes)."""
        x = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.n_coeffs:
            raise ShapeError(f"network expects (batch, frames, {self.n_coeffs}) input, got {x.shape}")
        if self.input_mean is not None:
            x = (x - self.input_mean) / self.input_std
        h = Tensor(x[:, None, :, :])
        for conv, pool in zip(self.convs, self.pools):
            h = pool(conv(h).relu())
        B, C, T, F = h.shape
        h = h.transpose(0, 2, 1, 3).reshape(B, T, C * F)
        h = self.drop(self.projection(h).relu())
        if self.recurrent is not None:
            h = self.recurrent(h)
        if self.attention is not None:
            h = self.attention(h)
        h = h.mean(axis=1)
        if self.hidden is not None:
            h = self.drop(self.hidden(h).relu())
        return self.head(h)

    def predict(self, features: np.ndarray, batch_size: int = 64) -> np.ndarray:
        was_training = self.training
        self.eval()
        preds = []
        with no_grad():
            for start in range(0, len(features), batch_size):
                preds.append(self(features[start:start + batch_size]).data.argmax(axis=1))
        self.train(was_training)
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = sorted(set(params) ^ set(state))
            raise ConfigError(f"parameter names differ from the network: {missing[:5]}")
        for name, p in params.items():
            if p.shape != state[name].shape:
                raise ConfigError(f"parameter {name}: shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)


def frontend_output(config: ModelConfig, n_coeffs: int, n_frames: int = 64) -> tuple[int, int, int]:
    """(channels, frames, freq) after the conv stack for an input of ``n_frames`` x ``n_coeffs``."""
    h, w, c = n_frames, n_coeffs, 1
    for spec in config.conv_stack:
        kh, kw = spec.kernel
        h = (h + 2 * (kh // 2) - kh) // spec.stride[0] + 1
        w = (w + 2 * (kw // 2) - kw) // spec.stride[1] + 1
        h, w, c = h // spec.pool[0], w // spec.pool[1], spec.out_channels
        if h < 1 or w < 1:
            raise ConfigError(f"conv stack reduces a {n_frames}x{n_coeffs} input to nothing")
    return c, h, w


def build_network(kind: Architecture | str, feature_kind: FeatureKind | str, cfg: ModelConfig = REFERENCE_CONFIG,
                  n_coeffs: int | None = None, class_names: tuple[str, ...] = ()) -> Network:
    """Instantiate one of the three nested architectures.

    CRNN adds a BiLSTM between projection and pooling; CRNN+Attention adds
    multi-head self-attention after the BiLSTM. Only the projection layer's
    input width depends on the feature kind.
    """
    arch = Architecture(kind)
    feature_kind = FeatureKind(feature_kind)
    n_coeffs = n_coeffs or default_coeffs(feature_kind)
    if class_names and len(class_names) != cfg.n_classes:
        raise ConfigError(f"{len(class_names)} class names for a {cfg.n_classes}-class model")
    rng = np.random.default_rng(cfg.seed)
    net = Network(arch, feature_kind, cfg, n_coeffs, class_names=tuple(class_names))
    in_ch = 1
    for spec in cfg.conv_stack:
        net.convs.append(Conv2d(in_ch, spec.out_channels, spec.kernel, rng, spec.stride))
        net.pools.append(MaxPool2d(spec.pool))
        in_ch = spec.out_channels
    channels, _, freq = frontend_output(cfg, n_coeffs)
    net.projection = Linear(channels * freq, cfg.proj_dim, rng)
    if arch in (Architecture.CRNN, Architecture.CRNN_ATTENTION):
        net.recurrent = BiLSTM(cfg.proj_dim, cfg.lstm_hidden, rng)
    if arch is Architecture.CRNN_ATTENTION:
        net.attention = MultiHeadAttention(cfg.proj_dim, cfg.attention_heads, rng)
    head_in = cfg.proj_dim
    if cfg.dense_hidden:
        net.hidden = Linear(head_in, cfg.dense_hidden, rng)
        head_in = cfg.dense_hidden
    net.head = Linear(head_in, cfg.n_classes, rng)
    net.drop = Dropout(cfg.dropout_rate, np.random.default_rng([cfg.seed, 1]))
    return net


def count_parameters(network: Module | None) -> int:
    return 0 if network is None else network.num_parameters()


def parameter_table(cfg: ModelConfig = REFERENCE_CONFIG, n_mels: int = 128, n_mfcc: int = 20) -> list[dict[str, Any]]:
    """Trainable-parameter counts for every architecture x feature kind."""
    rows = []
    for arch in Architecture:
        row: dict[str, Any] = {"architecture": arch.value}
        for kind in (FeatureKind.MFCC, FeatureKind.LMS):
            coeffs = n_mels if kind is FeatureKind.LMS else n_mfcc
            row[kind.value] = count_parameters(build_network(arch, kind, cfg, coeffs))
        rows.append(row)
    return rows


# -- checkpoints ----------------------------------------------------------

_CKPT_MAGIC = b"SACK"
_CKPT_VERSION = 1


def save_checkpoint(network: Network, path: str | Path, meta: dict[str, Any] | None = None) -> None:
    """Config echo (JSON) followed by named float32 blobs in parameter order."""
    header = {
        "architecture": network.architecture.value,
        "feature_kind": network.feature_kind.value,
        "n_coeffs": network.n_coeffs,
        "class_names": list(network.class_names),
        "config": network.config.to_dict(),
        "meta": meta or {},
    }
    blobs = list(network.state().items())
    if network.input_mean is not None:
        blobs += [("buffer:input_mean", network.input_mean), ("buffer:input_std", network.input_std)]
    head = json.dumps(header, sort_keys=True).encode()
    parts = [_CKPT_MAGIC, struct.pack("<HI", _CKPT_VERSION, len(head)), head, struct.pack("<I", len(blobs))]
    for name, arr in blobs:
        encoded = name.encode()
        parts.append(struct.pack("<HB", len(encoded), arr.ndim) + encoded)
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.asarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path, expect_config: ModelConfig | None = None) -> tuple[Network, dict[str, Any]]:
    blob = Path(path).read_bytes()
    if blob[:4] != _CKPT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint")
    version, head_len = struct.unpack_from("<HI", blob, 4)
    if version != _CKPT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    offset = 10
    header = json.loads(blob[offset:offset + head_len])
    offset += head_len
    config = ModelConfig.from_dict(header["config"])
    if expect_config is not None and expect_config != config:
        raise ConfigError(f"{path}: checkpoint config does not match the requested model config")
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len, ndim = struct.unpack_from("<HB", blob, offset)
        offset += 3
        name = blob[offset:offset + name_len].decode()
        offset += name_len
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += 4 * n
    net = build_network(header["architecture"], header["feature_kind"], config, header["n_coeffs"],
                        tuple(header["class_names"]))
    if "buffer:input_mean" in arrays:
        net.set_input_normalization(arrays.pop("buffer:input_mean"), arrays.pop("buffer:input_std"))
    net.load_state(arrays)
    return net, header["meta"]
