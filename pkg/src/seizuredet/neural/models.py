"""The two detectors: a six-block CNN and a dual-branch CNN + Transformer.

Architectures are described by plain JSON-compatible dicts so that they
can be hashed, stored in checkpoints and versioned under ``configs/``.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass
from importlib import resources
from typing import Iterator, Mapping

import numpy as np

from ..errors import ShapeMismatch
from .layers import (
    BatchNorm1d,
    Conv1d,
    Dropout,
    Flatten,
    Layer,
    Linear,
    MaxPool1d,
    ReLU,
    Sequential,
    TransformerEncoderLayer,
    softmax,
)

CNN6 = "cnn6"
CNN_TRANSFORMER = "cnn-transformer"
MODEL_KINDS = (CNN6, CNN_TRANSFORMER)


@dataclass(frozen=True)
class ConvBlockSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    pool: int = 1
    dropout_p: float = 0.0

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.pool < 1:
            raise ValueError(f"kernel, stride and pool must be >= 1: {self}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1): {self}")


@dataclass(frozen=True)
class TransformerSpec:
    model_dim: int = 64
    heads: int = 2
    ff_dim: int = 128
    rope_base: float = 10000.0
    dropout_p: float = 0.0

    def __post_init__(self):
        if self.model_dim % (2 * self.heads):
            raise ValueError(f"model_dim {self.model_dim} not divisible by 2*heads")


class ModelParams(Mapping):
    """Named parameter tensors of a model (live references, not copies)."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self._tensors = dict(tensors)

    def __getitem__(self, name):
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    @property
    def shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self._tensors.items()}

    @property
    def total_count(self) -> int:
        return int(sum(v.size for v in self._tensors.values()))

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self._tensors.values())

    def copy(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self._tensors.items()}


def _walk(layer: Layer, prefix: str) -> Iterator[tuple[str, Layer]]:
    yield prefix, layer
    for name, child in layer.named_children():
        yield from _walk(child, f"{prefix}.{name}" if prefix else name)


def conv_block(spec: ConvBlockSpec, rng, dtype) -> Sequential:
    layers = [Conv1d(spec.in_channels, spec.out_channels, spec.kernel, spec.stride, rng, dtype),
              BatchNorm1d(spec.out_channels, dtype=dtype), ReLU()]
    if spec.pool > 1:
        layers.append(MaxPool1d(spec.pool))
    if spec.dropout_p > 0:
        layers.append(Dropout(spec.dropout_p, rng))
    return Sequential(*layers)


def block_specs(blocks: list[dict], in_channels: int = 1) -> list[ConvBlockSpec]:
    specs = []
    for b in blocks:
        spec = ConvBlockSpec(in_channels=in_channels, out_channels=b["out"], kernel=b["kernel"],
                             stride=b.get("stride", 1), pool=b.get("pool", 1),
                             dropout_p=b.get("dropout", 0.0))
        specs.append(spec)
        in_channels = spec.out_channels
    return specs


def branch_out_len(specs: list[ConvBlockSpec], length: int) -> int:
    for s in specs:
        length = (length - 1) // s.stride + 1
        length //= s.pool
        if length < 1:
            raise ShapeMismatch("input too short for the configured conv/pool stack")
    return length


class Detector:
    """Shared plumbing: parameter naming, modes, softmax head, RNG for dropout."""

    kind: str

    def __init__(self, config: dict, seed: int = 0, dtype=np.float32):
        self.config = copy.deepcopy(config)
        self.dtype = np.dtype(dtype)
        self.input_len = int(config["input_len"])
        self._rng = np.random.default_rng(seed)
        self._build(self._rng)
        self.params = ModelParams(self._collect("params"))
        self.buffers = self._collect("buffers")

    # subclasses -------------------------------------------------------
    def _build(self, rng):
        raise NotImplementedError

    def _children(self) -> list[tuple[str, Layer]]:
        raise NotImplementedError

    def logits(self, x, training=False):
        raise NotImplementedError

    def backward_logits(self, dlogits):
        raise NotImplementedError

    # shared ------------------------------------------------------------
    def _layers(self):
        for name, child in self._children():
            yield from _walk(child, name)

    def _collect(self, attr):
        out = {}
        for prefix, layer in self._layers():
            for name, arr in getattr(layer, attr).items():
                out[f"{prefix}.{name}"] = arr
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, layer in self._layers():
            for name in layer.params:
                out[f"{prefix}.{name}"] = layer.grads[name]
        return out

    def set_rng(self, rng: np.random.Generator):
        self._rng = rng
        for _, layer in self._layers():
            if isinstance(layer, Dropout):
                layer.rng = rng

    def load_state(self, tensors: Mapping[str, np.ndarray]):
        """Copy values into the live parameter and buffer arrays."""
        for store in (self.params, self.buffers):
            for name in store:
                if name not in tensors:
                    raise KeyError(f"missing tensor {name!r}")
                src = np.asarray(tensors[name])
                if src.shape != store[name].shape:
                    raise ShapeMismatch(f"{name}: expected {store[name].shape}, got {src.shape}")
                store[name][...] = src

    def activation_pattern(self) -> np.ndarray:
        """ReLU on/off flags and max-pool winners from the last forward pass.

        Two parameter settings with the same pattern lie in the same smooth
        piece of the loss surface.
        """
        parts = []
        for _, layer in self._layers():
            if isinstance(layer, ReLU):
                parts.append(layer._mask.ravel().astype(np.int64))
            elif isinstance(layer, MaxPool1d) and layer.size > 1:
                parts.append(layer._cache[0].ravel().astype(np.int64))
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    def state(self) -> dict[str, np.ndarray]:
        out = dict(self.params)
        out.update(self.buffers)
        return out

    def _check_input(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.input_len:
            raise ShapeMismatch(f"expected batch of shape (N, {self.input_len}), got {x.shape}")
        return x[:, None, :]

    def forward(self, x, training=False):
        """Class probabilities ``(N, 2)``: column 0 background, column 1 seizure."""
        return softmax(self.logits(x, training), axis=-1)

    def predict_proba(self, x, batch_size=256):
        x = np.asarray(x)
        if x.shape[0] == 0:
            return np.zeros((0, 2), dtype=self.dtype)
        return np.concatenate([self.forward(x[i:i + batch_size])
                               for i in range(0, x.shape[0], batch_size)])

    def config_hash(self) -> str:
        return config_hash(self.kind, self.config)


class CNN6Model(Detector):
    """Conv -> batchnorm -> ReLU -> max-pool, six times; two dense layers; softmax."""

    kind = CNN6

    def _build(self, rng):
        cfg = self.config
        specs = block_specs(cfg["blocks"])
        self.features = Sequential(*(conv_block(s, rng, self.dtype) for s in specs))
        flat = branch_out_len(specs, self.input_len) * specs[-1].out_channels
        self.head = Sequential(Flatten(), Dropout(cfg.get("dropout", 0.0), rng),
                               Linear(flat, cfg["hidden"], rng, self.dtype), ReLU(),
                               Linear(cfg["hidden"], 2, rng, self.dtype))

    def _children(self):
        return [("features", self.features), ("head", self.head)]

    def logits(self, x, training=False):
        return self.head.forward(self.features.forward(self._check_input(x), training), training)

    def backward_logits(self, dlogits):
        self.features.backward(self.head.backward(dlogits))


class CNNTransformerModel(Detector):
    """Two conv branches (short and long kernels) feeding one encoder layer.

    Each branch yields a ``(N, T_i, d)`` token sequence; the two sequences
    are concatenated along the token axis, passed through a rotary-position
    self-attention encoder layer, averaged over tokens and classified.
    """

    kind = CNN_TRANSFORMER

    def _build(self, rng):
        cfg = self.config
        tspec = TransformerSpec(**cfg["transformer"])
        self.transformer_spec = tspec
        self.branches = []
        self.branch_tokens = []
        for br in cfg["branches"]:
            specs = block_specs(br["blocks"])
            if specs[-1].out_channels != tspec.model_dim:
                raise ValueError("each branch must end with model_dim channels")
            self.branches.append(Sequential(*(conv_block(s, rng, self.dtype) for s in specs)))
            self.branch_tokens.append(branch_out_len(specs, self.input_len))
        self.token_dropout = Dropout(cfg.get("dropout", 0.0), rng)
        self.encoder = TransformerEncoderLayer(tspec.model_dim, tspec.heads, tspec.ff_dim,
                                               tspec.dropout_p, tspec.rope_base, rng, self.dtype)
        self.classifier = Linear(tspec.model_dim, 2, rng, self.dtype)

    @property
    def n_tokens(self) -> int:
        return sum(self.branch_tokens)

    def _children(self):
        kids = [(f"branch{i}", b) for i, b in enumerate(self.branches)]
        return kids + [("token_dropout", self.token_dropout), ("encoder", self.encoder),
                       ("classifier", self.classifier)]

    @property
    def attention_weights(self):
        """Attention matrices ``(N, heads, T, T)`` from the last forward pass."""
        return self.encoder.attn.last_attention

    def logits(self, x, training=False):
        x = self._check_input(x)
        tokens = [b.forward(x, training).transpose(0, 2, 1) for b in self.branches]
        h = self.token_dropout.forward(np.concatenate(tokens, axis=1), training)
        h = self.encoder.forward(h, training)
        self._n_tok = h.shape[1]
        return self.classifier.forward(h.mean(axis=1), training)

    def backward_logits(self, dlogits):
        dpool = self.classifier.backward(dlogits)
        dh = np.repeat(dpool[:, None, :] / self._n_tok, self._n_tok, axis=1)
        dh = self.token_dropout.backward(self.encoder.backward(dh))
        start = 0
        for branch, t in zip(self.branches, self.branch_tokens):
            branch.backward(np.ascontiguousarray(dh[:, start:start + t].transpose(0, 2, 1)))
            start += t


_KIND_CLASSES = {CNN6: CNN6Model, CNN_TRANSFORMER: CNNTransformerModel}


def normalise_kind(kind: str) -> str:
    k = kind.lower().replace("_", "-")
    if k in ("cnn+transformer", "cnn-transformer", "cnntransformer"):
        return CNN_TRANSFORMER
    if k in ("cnn6", "cnn-6"):
        return CNN6
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def config_hash(kind: str, config: dict) -> str:
    blob = json.dumps({"kind": normalise_kind(kind), "config": config}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(kind: str, variant: str = "default", window_s: float | None = None) -> dict:
    """Architecture dict from ``configs/<kind>.json``.

    ``variant`` is ``"default"`` or ``"tiny"``. ``window_s`` overrides the
    input length for 100 Hz windows.
    """
    kind = normalise_kind(kind)
    fname = f"{kind.replace('-', '_')}.json"
    doc = json.loads(resources.files("seizuredet.configs").joinpath(fname).read_text())
    cfg = copy.deepcopy(doc[variant])
    if window_s is not None:
        cfg["input_len"] = int(round(window_s * 100))
    return cfg


def build_model(kind: str, config: dict | None = None, seed: int = 0, dtype=np.float32,
                window_s: float | None = None) -> Detector:
    kind = normalise_kind(kind)
    if config is None:
        config = load_config(kind, window_s=window_s)
    return _KIND_CLASSES[kind](config, seed=seed, dtype=dtype)


def spec_summary(model: Detector) -> dict:
    """Human-readable description of the block stack, for logs."""
    if isinstance(model, CNN6Model):
        return {"blocks": [asdict(s) for s in block_specs(model.config["blocks"])],
                "hidden": model.config["hidden"]}
    return {"branches": [[asdict(s) for s in block_specs(b["blocks"])]
                         for b in model.config["branches"]],
            "transformer": asdict(model.transformer_spec), "tokens": model.branch_tokens}
