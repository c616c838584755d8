"""Contrastive pretraining: batching, loss, Adam with decoupled weight decay, logging."""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .contrastive import batch_loss, similarity_matrix, temperature
from .encoder import embed_ecg
from .errors import FrozenProviderError, NonFiniteGradientError, TrainingError
from .tensor import Tensor, no_grad
from .text_embed import embed, provider_fingerprint, render_report_prompt, text_adapter

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    shuffle: bool = True
    checkpoint_every: int = 0  # epochs; 0 disables intermediate checkpoints
    coupled_weight_decay: bool = False
    clip_grad_norm: float = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (in-batch negatives)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.epochs < 0 or self.checkpoint_every < 0:
            raise ValueError("epochs and checkpoint_every must be non-negative")
        if self.clip_grad_norm is not None and not self.clip_grad_norm > 0:
            raise ValueError("clip_grad_norm must be positive when set")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def _default_decays(name):
    return not (".bn" in name or name == "log_temperature")


def adam_step(params, grads, state, config, decays=_default_decays):
    """One bias-corrected Adam update of every tensor in ``params`` (name -> Tensor).

    Weight decay is decoupled (``p -= lr * wd * p``) unless
    ``config.coupled_weight_decay``, and skipped for names where ``decays`` is false.
    Parameter arrays are replaced, not written in place.
    """
    if hasattr(params, "params"):
        decays = params.decays
        params = params.params
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in {name!r}; step aborted")

    state.step += 1
    lr, wd = config.learning_rate, config.weight_decay
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=p.dtype)
        w = p.data
        if wd and decays(name):
            if config.coupled_weight_decay:
                g = g + wd * w
            else:
                w = w * (1.0 - lr * wd)
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (lr / bc1) * m / (np.sqrt(v / bc2) + config.eps)
        p.data = (w - update).astype(p.dtype, copy=False)
    return params, state


class TrainLog:
    """Per-step records ``{epoch, step, batch_loss, tau, grad_norm}``."""

    def __init__(self, records=None):
        self.records = list(records or [])

    def append(self, **record):
        if not math.isfinite(record["batch_loss"]):
            raise TrainingError("refusing to log a non-finite loss")
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise TrainingError("step counter must increase")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def losses(self):
        return [r["batch_loss"] for r in self.records]

    def to_jsonl(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path):
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def read(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(json.loads(ln) for ln in lines if ln.strip())


def _unpack(dataset):
    signals, reports = [], []
    for item in dataset:
        if hasattr(item, "record"):
            signals.append(item.record.signal)
            reports.append(item.report)
        else:
            sig, rep = item[0], item[1]
            signals.append(getattr(sig, "signal", sig))
            reports.append(rep)
    return signals, reports


def text_targets(model, provider, prompts):
    """Frozen text embeddings in the model's space (random adapter if widths differ)."""
    t = embed(provider, prompts).data
    d = model.config.projection_dim
    if provider.dimension != d:
        adapter = model.buffers.get("text_adapter")
        if adapter is None or adapter.shape != (provider.dimension, d):
            seed = model.meta.get("adapter_seed", 0)
            adapter = text_adapter(provider.dimension, d, seed).astype(np.float32)
            model.buffers["text_adapter"] = adapter
            model.meta["adapter_seed"] = seed
        t = t @ adapter.astype(np.float64)
    return Tensor(t.astype(model.dtype))


def global_grad_norm(grads):
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def pretrain(dataset, provider, model, config=TrainConfig(), out_dir=None):
    """Contrastive pretraining of ``model`` against the frozen ``provider``.

    Returns a trained copy of ``model`` and the :class:`TrainLog`; the input
    model is left untouched. With ``out_dir`` set, checkpoints are written every
    ``config.checkpoint_every`` epochs.
    """
    model = model.copy()
    model.meta["text"] = provider.describe()
    log = TrainLog()
    if config.epochs == 0:
        return model, log

    signals, reports = _unpack(dataset)
    if len(signals) < 2:
        raise TrainingError("pretraining needs at least 2 ECG-text pairs")
    x_all = np.stack(signals).astype(model.dtype)
    prompts = [render_report_prompt(r) for r in reports]
    t_all = text_targets(model, provider, prompts)
    fingerprint = provider_fingerprint(provider, prompts)

    rng = np.random.default_rng(config.seed)
    state = AdamState()
    log_tau = model["log_temperature"]
    step = 0
    n = len(signals)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                logger.warning("epoch %d: dropping short final batch of %d item(s)", epoch, len(idx))
                continue
            step += 1
            model.zero_grad()
            ecg = embed_ecg(model, x_all[idx], mode="train")
            sim = similarity_matrix(Tensor(t_all.data[idx]), ecg)
            tau_value = float(np.exp(log_tau.data.astype(np.float64)))
            loss = batch_loss(sim, temperature(log_tau))
            loss_value = float(loss.item())
            if not math.isfinite(loss_value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}; batch ids {idx.tolist()}")
            loss.backward()
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in model.params.items()}
            norm = global_grad_norm(grads)
            if config.clip_grad_norm is not None and norm > config.clip_grad_norm:
                scale = config.clip_grad_norm / (norm + 1e-12)
                grads = {k: (g * scale).astype(g.dtype) for k, g in grads.items()}
            adam_step(model, grads, state, config)
            log.append(epoch=epoch, step=step, batch_loss=loss_value, tau=tau_value, grad_norm=norm)
        model.zero_grad()
        if provider_fingerprint(provider, prompts) != fingerprint:
            raise FrozenProviderError(f"text provider changed during epoch {epoch}")
        if out_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(model, Path(out_dir) / f"checkpoint_epoch{epoch:03d}.bin")
    return model, log


def retrieval_top1(model, signals, reports, provider, mode="eval"):
    """Fraction of ECGs whose most similar report (among the given ones) is their own."""
    if mode == "train":
        model = model.copy()  # train-mode BN would otherwise update running stats
    x = np.stack([getattr(s, "signal", s) for s in signals]).astype(model.dtype)
    t = text_targets(model, provider, [render_report_prompt(r) for r in reports])
    with no_grad():
        e = embed_ecg(model, x, mode=mode)
        sim = similarity_matrix(t, e).data
    hits = np.argmax(sim, axis=0) == np.arange(len(x))
    return float(hits.mean())
