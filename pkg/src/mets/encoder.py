"""1D ResNet-18 ECG encoder and its linear projection head."""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError
from .ops import (
    BatchNormState,
    batchnorm1d,
    conv1d,
    global_avg_pool1d,
    linear,
    maxpool1d,
    relu,
    residual_add,
)
from .tensor import Tensor

TEMPERATURE_INIT = 0.07
MIN_SAMPLES = 32


@dataclass(frozen=True)
class EncoderConfig:
    in_leads: int = 12
    stage_channels: tuple = (64, 128, 256, 512)
    blocks_per_stage: tuple = (2, 2, 2, 2)
    stem_kernel: int = 7
    stem_stride: int = 2
    pool_kernel: int = 3
    pool_stride: int = 2
    projection_dim: int = 128
    temperature_init: float = TEMPERATURE_INIT

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in self.blocks_per_stage))
        if self.projection_dim <= 0 or self.in_leads <= 0:
            raise ValueError("projection_dim and in_leads must be positive")
        if len(self.stage_channels) != len(self.blocks_per_stage) or not self.stage_channels:
            raise ValueError("stage_channels and blocks_per_stage must have equal nonzero length")
        if any(b >= a for a, b in zip(self.stage_channels[1:], self.stage_channels[:-1])):
            raise ValueError(f"stage_channels must be strictly increasing: {self.stage_channels}")
        if any(b < 1 for b in self.blocks_per_stage):
            raise ValueError("every stage needs at least one block")
        if not self.temperature_init > 0:
            raise ValueError("temperature_init must be positive")

    @property
    def feature_dim(self):
        return self.stage_channels[-1]

    def to_dict(self):
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["blocks_per_stage"] = list(self.blocks_per_stage)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def micro(cls, in_leads=2, projection_dim=128, stage_channels=(4, 8, 16, 32)):
        """Tiny configuration used for gradient checks and desk-scale runs."""
        return cls(in_leads=in_leads, stage_channels=stage_channels, projection_dim=projection_dim)


@dataclass
class ModelParams:
    """Trainable tensors, batchnorm running stats and frozen buffers of one encoder."""

    config: EncoderConfig
    params: dict = field(default_factory=dict)
    bn_states: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)  # JSON-serialisable run facts (text provider, seeds)

    def __getitem__(self, name):
        return self.params[name]

    @property
    def dtype(self):
        return self["log_temperature"].dtype

    @property
    def temperature(self):
        return float(np.exp(self["log_temperature"].data.astype(np.float64)).item())

    def named_parameters(self):
        return list(self.params.items())

    @property
    def num_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def decays(self, name):
        """Whether decoupled weight decay applies to parameter ``name``."""
        return not (".bn" in name or name.startswith("bn") or name == "log_temperature")

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self):
        """Every tensor of the model, by name, in a fixed order."""
        out = {name: p.data for name, p in self.params.items()}
        for name, st in self.bn_states.items():
            out[name + ".running_mean"] = st.running_mean
            out[name + ".running_var"] = st.running_var
        for name, arr in self.buffers.items():
            out["buffer." + name] = arr
        return out

    def copy(self):
        params = {k: Tensor(v.data, requires_grad=True) for k, v in self.params.items()}
        bn = {k: BatchNormState(v.running_mean.copy(), v.running_var.copy()) for k, v in self.bn_states.items()}
        buffers = {k: v.copy() for k, v in self.buffers.items()}
        return ModelParams(self.config, params, bn, buffers, dict(self.meta))

    def astype(self, dtype):
        out = self.copy()
        for p in out.params.values():
            p.data = p.data.astype(dtype)
        for st in out.bn_states.values():
            st.running_mean = st.running_mean.astype(dtype)
            st.running_var = st.running_var.astype(dtype)
        return out


def _he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


def _block_layout(config):
    """Yield ``(prefix, c_in, c_out, stride, has_downsample)`` for every basic block."""
    c_in = config.stage_channels[0]
    for s, (c_out, n_blocks) in enumerate(zip(config.stage_channels, config.blocks_per_stage)):
        for b in range(n_blocks):
            stride = 2 if (s > 0 and b == 0) else 1
            yield f"layer{s + 1}.{b}", c_in, c_out, stride, (stride != 1 or c_in != c_out)
            c_in = c_out


def build_encoder(config=None, seed=0, dtype=np.float32):
    config = config or EncoderConfig()
    rng = np.random.default_rng(seed)
    params, bn = {}, {}

    def conv(name, c_out, c_in, k):
        params[name + ".weight"] = Tensor(_he_normal(rng, (c_out, c_in, k), c_in * k, dtype), requires_grad=True)

    def norm(name, c):
        params[name + ".weight"] = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        params[name + ".bias"] = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        bn[name] = BatchNormState.fresh(c, dtype)

    c0 = config.stage_channels[0]
    conv("stem.conv", c0, config.in_leads, config.stem_kernel)
    norm("stem.bn", c0)
    for prefix, c_in, c_out, _, has_ds in _block_layout(config):
        conv(prefix + ".conv1", c_out, c_in, 3)
        norm(prefix + ".bn1", c_out)
        conv(prefix + ".conv2", c_out, c_out, 3)
        norm(prefix + ".bn2", c_out)
        if has_ds:
            conv(prefix + ".downsample.conv", c_out, c_in, 1)
            norm(prefix + ".downsample.bn", c_out)
    feat = config.feature_dim
    params["proj.weight"] = Tensor(_he_normal(rng, (config.projection_dim, feat), feat, dtype), requires_grad=True)
    params["proj.bias"] = Tensor(np.zeros(config.projection_dim, dtype=dtype), requires_grad=True)
    params["log_temperature"] = Tensor(np.array(math.log(config.temperature_init), dtype=dtype), requires_grad=True)
    return ModelParams(config, params, bn)


def _conv_bn(model, x, name, bn_name, stride, padding, mode):
    p = model.params
    x = conv1d(x, p[name + ".weight"], stride=stride, padding=padding)
    return batchnorm1d(x, p[bn_name + ".weight"], p[bn_name + ".bias"], model.bn_states[bn_name], mode)


def encode(model, batch, mode="train"):
    """Raw ECG features ``[N, feature_dim]`` for a batch ``[N, leads, samples]``."""
    cfg = model.config
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=model.dtype))
    if x.ndim != 3 or x.shape[1] != cfg.in_leads:
        raise DimensionError(f"encode expects [N, {cfg.in_leads}, samples], got {x.shape}")
    if x.shape[2] < MIN_SAMPLES:
        raise DimensionError(f"encode needs at least {MIN_SAMPLES} samples per lead, got {x.shape[2]}")
    if x.dtype != model.dtype:
        x = Tensor(x.data.astype(model.dtype))

    h = _conv_bn(model, x, "stem.conv", "stem.bn", cfg.stem_stride, cfg.stem_kernel // 2, mode)
    h = relu(h)
    h = maxpool1d(h, cfg.pool_kernel, cfg.pool_stride, padding=cfg.pool_kernel // 2)
    for prefix, _, _, stride, has_ds in _block_layout(cfg):
        out = relu(_conv_bn(model, h, prefix + ".conv1", prefix + ".bn1", stride, 1, mode))
        out = _conv_bn(model, out, prefix + ".conv2", prefix + ".bn2", 1, 1, mode)
        if has_ds:
            shortcut = _conv_bn(model, h, prefix + ".downsample.conv", prefix + ".downsample.bn", stride, 0, mode)
        else:
            shortcut = h
        h = relu(residual_add(out, shortcut))
    return global_avg_pool1d(h)


def project(model, raw):
    """Affine map of raw features into the shared ``projection_dim`` space."""
    w = model.params["proj.weight"]
    if raw.ndim != 2 or raw.shape[1] != w.shape[1]:
        raise DimensionError(f"project expects [N, {w.shape[1]}], got {tuple(raw.shape)}")
    return linear(raw, w, model.params["proj.bias"])


def embed_ecg(model, batch, mode="train"):
    return project(model, encode(model, batch, mode))
