"""CNN-BLSTM-CTC line recognizer: configuration, parameters, forward/backward.

Tensor names follow ``<layer>.<part>``::

    conv{i}.kernel, conv{i}.bias
    blstm{i}.fwd.w_input, blstm{i}.fwd.w_recurrent, blstm{i}.fwd.bias  (and .bwd.)
    fc.weight, fc.bias

Images enter as ``[B, W, H]`` with ink = 1 and background = 0. Samples in a
batch may be narrower than the padded width; every conv-stage output is
zeroed beyond the sample's valid width and the reverse LSTM direction starts
at each sample's last valid column, so a sample's output does not depend on
what it was batched with.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import layers as L
from .ctc import CtcInfeasibleError, ctc_forward_backward
from .freeze import FreezeSpec, layer_of
from .optim import AdamState, adam_step
from .tensor import log_softmax, resolve_dtype

PAPER_FILTERS = (16, 32, 48, 64, 80)


@dataclass(frozen=True)
class ModelConfig:
    alphabet_size: int = 79
    conv_filters: tuple = PAPER_FILTERS
    pool_after: tuple = (1, 2, 3)
    lstm_layers: int = 5
    lstm_units: int = 256
    dropout_cnn: float = 0.2
    dropout_lstm: float = 0.5
    input_height: int = 128
    leaky_slope: float = L.LEAKY_SLOPE
    precision: str = "float64"
    profile: str = "paper"

    @classmethod
    def paper(cls, alphabet_size: int = 79, **kw) -> "ModelConfig":
        return cls(alphabet_size=alphabet_size, **kw)

    @classmethod
    def reduced(cls, alphabet_size: int, **kw) -> "ModelConfig":
        """Desk-scale profile: same code paths, minutes on a CPU."""
        base = dict(conv_filters=(8, 16, 16), pool_after=(1, 2, 3), lstm_layers=2,
                    lstm_units=32, input_height=32, profile="reduced")
        base.update(kw)
        return cls(alphabet_size=alphabet_size, **base)

    @classmethod
    def from_profile(cls, profile: str, alphabet_size: int, **kw) -> "ModelConfig":
        if profile == "paper":
            return cls.paper(alphabet_size, **kw)
        if profile == "reduced":
            return cls.reduced(alphabet_size, **kw)
        raise ValueError(f"unknown model profile {profile!r}")

    @property
    def downsample(self) -> int:
        return 2 ** len(self.pool_after)

    @property
    def feature_height(self) -> int:
        return self.input_height // self.downsample

    @property
    def sequence_features(self) -> int:
        return self.conv_filters[-1] * self.feature_height

    @property
    def num_classes(self) -> int:
        return self.alphabet_size + 1

    def layer_names(self) -> list[str]:
        return ([f"conv{i + 1}" for i in range(len(self.conv_filters))]
                + [f"blstm{i + 1}" for i in range(self.lstm_layers)] + ["fc"])

    def validate(self) -> None:
        if self.alphabet_size < 1:
            raise ValueError("alphabet must hold at least one character")
        if not self.conv_filters or any(f < 1 for f in self.conv_filters):
            raise ValueError(f"bad conv filters {self.conv_filters}")
        if self.profile == "paper" and tuple(self.conv_filters) != PAPER_FILTERS:
            raise ValueError(f"paper profile requires filters {PAPER_FILTERS}")
        n = len(self.conv_filters)
        if any(not 1 <= p <= n for p in self.pool_after) or len(set(self.pool_after)) != len(self.pool_after):
            raise ValueError(f"pool_after {self.pool_after} must name distinct conv layers 1..{n}")
        if self.input_height % self.downsample:
            raise ValueError(f"input height {self.input_height} not divisible by {self.downsample}")
        if self.lstm_layers < 1 or self.lstm_units < 1:
            raise ValueError("need at least one BLSTM layer with at least one unit")
        for rate in (self.dropout_cnn, self.dropout_lstm):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rate {rate} outside [0, 1)")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError(f"leaky slope {self.leaky_slope} outside (0, 1)")
        resolve_dtype(self.precision)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_filters"] = list(self.conv_filters)
        d["pool_after"] = list(self.pool_after)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_filters"] = tuple(d["conv_filters"])
        d["pool_after"] = tuple(d["pool_after"])
        return cls(**d)


def parameter_shapes(config: ModelConfig) -> dict[str, tuple]:
    shapes = {}
    c_in = 1
    for i, c_out in enumerate(config.conv_filters, 1):
        shapes[f"conv{i}.kernel"] = (3, 3, c_in, c_out)
        shapes[f"conv{i}.bias"] = (c_out,)
        c_in = c_out
    u = config.lstm_units
    feat = config.sequence_features
    for i in range(1, config.lstm_layers + 1):
        for d in ("fwd", "bwd"):
            shapes[f"blstm{i}.{d}.w_input"] = (4 * u, feat)
            shapes[f"blstm{i}.{d}.w_recurrent"] = (4 * u, u)
            shapes[f"blstm{i}.{d}.bias"] = (4 * u,)
        feat = 2 * u
    shapes["fc.weight"] = (config.num_classes, 2 * u)
    shapes["fc.bias"] = (config.num_classes,)
    return shapes


def count_parameters(config: ModelConfig) -> int:
    """Closed-form parameter total."""
    total = 0
    c_in = 1
    for c_out in config.conv_filters:
        total += 9 * c_in * c_out + c_out
        c_in = c_out
    u = config.lstm_units
    feat = config.sequence_features
    for _ in range(config.lstm_layers):
        total += 2 * 4 * u * (feat + u + 1)
        feat = 2 * u
    total += (2 * u + 1) * config.num_classes
    return total


def _fans(name: str, shape: tuple) -> tuple[int, int]:
    if name.endswith(".kernel"):
        return 9 * shape[2], 9 * shape[3]
    return shape[1], shape[0]


def init_tensor(name: str, shape: tuple, rng: np.random.Generator, dtype) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    if name.endswith("bias"):
        return np.zeros(shape, dtype=dtype)
    fan_in, fan_out = _fans(name, shape)
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


@dataclass
class Model:
    config: ModelConfig
    params: dict
    alphabet: list = field(default_factory=list)

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @property
    def dtype(self) -> np.dtype:
        return resolve_dtype(self.config.precision)

    def layer_names(self) -> list[str]:
        return self.config.layer_names()

    def conv(self, i: int) -> L.ConvParams:
        return L.ConvParams(self.params[f"conv{i}.kernel"], self.params[f"conv{i}.bias"])

    def lstm(self, i: int, direction: str) -> L.LstmParams:
        p = f"blstm{i}.{direction}"
        return L.LstmParams(self.params[f"{p}.w_input"], self.params[f"{p}.w_recurrent"],
                            self.params[f"{p}.bias"])

    def fc(self) -> L.DenseParams:
        return L.DenseParams(self.params["fc.weight"], self.params["fc.bias"])

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()}, list(self.alphabet))


def build_model(config: ModelConfig, rng: np.random.Generator, alphabet: Sequence[str] | None = None) -> Model:
    config.validate()
    if alphabet is not None and len(alphabet) != config.alphabet_size:
        raise ValueError(f"alphabet has {len(alphabet)} characters, config says {config.alphabet_size}")
    dtype = resolve_dtype(config.precision)
    params = {name: init_tensor(name, shape, rng, dtype)
              for name, shape in parameter_shapes(config).items()}
    return Model(config, params, list(alphabet or []))


def swap_head(model: Model, new_alphabet: Sequence[str], rng: np.random.Generator) -> Model:
    """Copy of ``model`` with a freshly initialized output layer for ``new_alphabet``."""
    if len(new_alphabet) == 0:
        raise ValueError("new alphabet is empty")
    config = replace(model.config, alphabet_size=len(new_alphabet))
    params = {k: v.copy() for k, v in model.params.items() if layer_of(k) != "fc"}
    shapes = parameter_shapes(config)
    for name in ("fc.weight", "fc.bias"):
        params[name] = init_tensor(name, shapes[name], rng, model.dtype)
    return Model(config, params, list(new_alphabet))


# --- forward / backward -----------------------------------------------------

def _column_mask(widths: np.ndarray, w: int, dtype) -> np.ndarray:
    return (np.arange(w)[None, :] < widths[:, None]).astype(dtype)[:, :, None, None]


def _prepare_images(model: Model, images: np.ndarray, widths) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(images)
    if x.ndim == 4:
        if x.shape[-1] != 1:
            raise ValueError(f"images must have a single channel, got {x.shape[-1]}")
        x = x[..., 0]
    if x.ndim != 3:
        raise ValueError(f"images must be [B, W, H] or [B, W, H, 1], got shape {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[2] != model.config.input_height:
        raise ValueError(f"image height {x.shape[2]} != model input height {model.config.input_height}")
    widths = np.full(x.shape[0], x.shape[1]) if widths is None else np.asarray(widths, dtype=np.int64)
    if widths.shape != (x.shape[0],) or widths.max() > x.shape[1]:
        raise ValueError("widths do not match the batch")
    if widths.min() < model.config.downsample:
        raise ValueError(f"images must be at least {model.config.downsample} pixels wide")
    return x.astype(model.dtype, copy=False)[..., None], widths


def _forward(model: Model, images, widths, train: bool, rng):
    cfg = model.config
    x, widths = _prepare_images(model, images, widths)
    caches = []
    valid = widths.copy()
    for i in range(1, len(cfg.conv_filters) + 1):
        step = {"layer": f"conv{i}"}
        x, step["conv"] = L.conv2d(model.conv(i), x)
        x, step["act"] = L.leaky_relu(x, cfg.leaky_slope)
        if i in cfg.pool_after:
            x, step["pool"] = L.maxpool2x2(x)
            valid = valid // 2
        step["mask"] = _column_mask(valid, x.shape[1], x.dtype)
        x = x * step["mask"]
        if i > 1:
            x, step["drop"] = L.dropout(x, cfg.dropout_cnn, train, rng)
        caches.append(step)
    step = {"layer": "collapse", "shape": x.shape}
    caches.append(step)
    seq = L.collapse_columns(x)
    lens = valid
    for i in range(1, cfg.lstm_layers + 1):
        step = {"layer": f"blstm{i}"}
        seq, step["blstm"] = L.blstm(model.lstm(i, "fwd"), model.lstm(i, "bwd"), seq, lens)
        seq, step["drop"] = L.dropout(seq, cfg.dropout_lstm, train, rng)
        caches.append(step)
    logits, fc_cache = L.dense(model.fc(), seq)
    caches.append({"layer": "fc", "dense": fc_cache})
    return logits, lens, caches


def _backward(caches, dlogits, stop_layer: str) -> dict:
    """Gradients for every tensor in layers at or above ``stop_layer``."""
    grads = {}
    dx = dlogits
    for step in reversed(caches):
        name = step["layer"]
        if name == "fc":
            dx, g = L.dense_backward(step["dense"], dx)
            grads["fc.weight"], grads["fc.bias"] = g["weight"], g["bias"]
        elif name.startswith("blstm"):
            dx = L.dropout_backward(step["drop"], dx)
            dx, g = L.blstm_backward(step["blstm"], dx)
            for d in ("fwd", "bwd"):
                for part, val in g[d].items():
                    grads[f"{name}.{d}.{part}"] = val
        elif name == "collapse":
            w, h, d = step["shape"][-3:]
            dx = L.expand_columns(dx, h, d)
        else:
            if "drop" in step:
                dx = L.dropout_backward(step["drop"], dx)
            dx = dx * step["mask"]
            if "pool" in step:
                dx = L.maxpool2x2_backward(step["pool"], dx)
            dx = L.leaky_relu_backward(step["act"], dx)
            dx, g = L.conv2d_backward(step["conv"], dx)
            grads[f"{name}.kernel"], grads[f"{name}.bias"] = g["kernel"], g["bias"]
        if name == stop_layer:
            break
    return grads


def forward(model: Model, images, widths=None, mode: str = "infer", rng=None):
    """Log class probabilities ``[B, T, L+1]`` and per-sample valid lengths."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    logits, lens, _ = _forward(model, images, widths, mode == "train", rng)
    return log_softmax(logits, axis=-1), lens


def loss_and_grads(model: Model, images, widths, targets, train: bool = True, rng=None,
                   stop_layer: str | None = None, sample_ids=None):
    """Mean per-sample CTC loss and gradients of every tensor above ``stop_layer``."""
    logits, lens, caches = _forward(model, images, widths, train, rng)
    b = logits.shape[0]
    if len(targets) != b:
        raise ValueError(f"{len(targets)} targets for a batch of {b}")
    dlogits = np.zeros_like(logits)
    total = 0.0
    for j in range(b):
        try:
            loss, g = ctc_forward_backward(logits[j], targets[j], int(lens[j]))
        except CtcInfeasibleError as err:
            who = sample_ids[j] if sample_ids is not None else j
            raise CtcInfeasibleError(f"sample {who}: {err}") from err
        total += loss
        dlogits[j] = g / b
    stop = stop_layer or model.layer_names()[0]
    return total / b, _backward(caches, dlogits, stop)


def lowest_trainable(model: Model, freeze: FreezeSpec | None) -> str:
    names = model.layer_names()
    if freeze is None:
        return names[0]
    unknown = set(freeze.trainable) - set(names)
    if unknown:
        raise ValueError(f"freeze spec names layers this model lacks: {sorted(unknown)}")
    live = [n for n in names if n in freeze.trainable]
    if not live:
        raise ValueError("freeze spec leaves nothing trainable")
    return live[0]


def train_step(model: Model, batch, state: AdamState, freeze: FreezeSpec | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Forward in training mode, CTC on every sample, one Adam update."""
    stop = lowest_trainable(model, freeze)
    loss, grads = loss_and_grads(model, batch.images, batch.widths, batch.targets, train=True,
                                 rng=rng, stop_layer=stop, sample_ids=batch.ids)
    adam_step(state, model.params, grads, freeze)
    return loss
