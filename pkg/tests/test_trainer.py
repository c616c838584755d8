import logging
import math

import numpy as np
import pytest

from mets.encoder import EncoderConfig, build_encoder
from mets.errors import FrozenProviderError, NonFiniteGradientError, TrainingError
from mets.synthetic import make_pair_samples
from mets.tensor import Tensor
from mets.text_embed import EmbeddingProvider, embed, render_report_prompt
from mets import trainer
from mets.trainer import AdamState, TrainConfig, TrainLog, adam_step, pretrain, retrieval_top1


def scalar_adam_reference(p, g, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(p)
    return out


def test_adam_matches_scalar_reference():
    p = {"w": Tensor(np.array(0.7))}
    cfg = TrainConfig(learning_rate=0.01, weight_decay=0.0)
    state = AdamState()
    got = []
    for _ in range(25):
        adam_step(p, {"w": np.array(-0.3)}, state, cfg)
        got.append(float(p["w"].data))
    np.testing.assert_allclose(got, scalar_adam_reference(0.7, -0.3, 25, 0.01), rtol=0, atol=1e-10)


def test_zero_grads_no_decay_leaves_params():
    p = {"w": Tensor(np.array([1.0, -2.0]))}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), TrainConfig(weight_decay=0.0))
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_decoupled_decay_closed_form_and_exemptions():
    model = build_encoder(EncoderConfig.micro(), dtype=np.float64)
    cfg = TrainConfig(learning_rate=0.01, weight_decay=0.1)
    before = {k: v.data.copy() for k, v in model.params.items()}
    state = AdamState()
    for _ in range(3):
        adam_step(model, {k: np.zeros_like(v.data) for k, v in model.params.items()}, state, cfg)
    factor = (1 - 0.01 * 0.1) ** 3
    np.testing.assert_allclose(model["proj.weight"].data, before["proj.weight"] * factor, rtol=1e-12)
    np.testing.assert_array_equal(model["stem.bn.weight"].data, before["stem.bn.weight"])
    np.testing.assert_array_equal(model["log_temperature"].data, before["log_temperature"])


def test_coupled_decay_differs():
    a = {"w": Tensor(np.array(1.0))}
    b = {"w": Tensor(np.array(1.0))}
    adam_step(a, {"w": np.array(0.5)}, AdamState(), TrainConfig(weight_decay=0.1))
    adam_step(b, {"w": np.array(0.5)}, AdamState(), TrainConfig(weight_decay=0.1, coupled_weight_decay=True))
    assert a["w"].data != b["w"].data


def test_non_finite_gradient_aborts_before_mutation():
    p = {"a": Tensor(np.array(1.0)), "b": Tensor(np.array(2.0))}
    state = AdamState()
    with pytest.raises(NonFiniteGradientError, match="'b'"):
        adam_step(p, {"a": np.array(1.0), "b": np.array(np.nan)}, state, TrainConfig())
    assert p["a"].data == 1.0 and state.step == 0


def test_config_validation():
    for bad in ({"batch_size": 1}, {"learning_rate": 0}, {"weight_decay": -1}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_train_log_contract(tmp_path):
    log = TrainLog()
    log.append(epoch=1, step=1, batch_loss=1.0, tau=0.07, grad_norm=1.0)
    with pytest.raises(TrainingError):
        log.append(epoch=1, step=1, batch_loss=1.0, tau=0.07, grad_norm=1.0)
    with pytest.raises(TrainingError):
        log.append(epoch=1, step=2, batch_loss=float("nan"), tau=0.07, grad_norm=1.0)
    log.write(tmp_path / "log.jsonl")
    assert TrainLog.read(tmp_path / "log.jsonl").records == log.records


def _micro(seed=0):
    return build_encoder(EncoderConfig.micro(), seed=seed)


def test_zero_epochs_returns_initial_params():
    model = _micro()
    out, log = pretrain(make_pair_samples(4), EmbeddingProvider.stub(), model, TrainConfig(epochs=0))
    assert len(log) == 0
    for k in model.params:
        np.testing.assert_array_equal(out[k].data, model[k].data)


def test_pretrain_does_not_mutate_input_model():
    model = _micro()
    before = model["proj.weight"].data.copy()
    pretrain(make_pair_samples(4), EmbeddingProvider.stub(), model, TrainConfig(batch_size=4, epochs=2))
    np.testing.assert_array_equal(model["proj.weight"].data, before)


def test_short_final_batch_dropped_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        _, log = pretrain(make_pair_samples(5), EmbeddingProvider.stub(), _micro(), TrainConfig(batch_size=4, epochs=2))
    assert len(log) == 2
    assert "dropping" in caplog.text


def test_log_fields_and_tau_positive():
    _, log = pretrain(make_pair_samples(6), EmbeddingProvider.stub(), _micro(),
                      TrainConfig(batch_size=3, epochs=3, learning_rate=0.05))
    assert [r["step"] for r in log] == list(range(1, 7))
    assert set(log.records[0]) == {"epoch", "step", "batch_loss", "tau", "grad_norm"}
    assert log.records[0]["tau"] == pytest.approx(0.07, rel=1e-6)
    assert all(r["tau"] > 0 and math.isfinite(r["batch_loss"]) for r in log)


def test_deterministic_logs():
    runs = [pretrain(make_pair_samples(6), EmbeddingProvider.stub(), _micro(), TrainConfig(batch_size=3, epochs=2))
            for _ in range(2)]
    assert runs[0][1].to_jsonl() == runs[1][1].to_jsonl()


@pytest.mark.parametrize("n", [8, 32])
def test_initial_loss_near_log_batch(n, rng):
    model = build_encoder(EncoderConfig.micro(), seed=5)
    samples = make_pair_samples(n, n_samples=128, seed=int(rng.integers(1000)))
    _, log = pretrain(samples, EmbeddingProvider.stub(128), model,
                      TrainConfig(batch_size=n, epochs=1, shuffle=False))
    assert abs(log.records[0]["batch_loss"] / math.log(n) - 1) <= 0.15


def test_provider_change_mid_training_is_detected(monkeypatch):
    calls = {"n": 0}
    real = trainer.provider_fingerprint

    def drifting(provider, prompts):
        calls["n"] += 1
        return real(provider, prompts) + ("x" if calls["n"] > 1 else "")
    monkeypatch.setattr(trainer, "provider_fingerprint", drifting)
    with pytest.raises(FrozenProviderError):
        pretrain(make_pair_samples(4), EmbeddingProvider.stub(), _micro(), TrainConfig(batch_size=4, epochs=1))


def test_nan_loss_names_batch(monkeypatch):
    monkeypatch.setattr(trainer, "batch_loss", lambda sim, tau: Tensor(np.array(np.nan)))
    with pytest.raises(TrainingError, match="batch ids"):
        pretrain(make_pair_samples(4), EmbeddingProvider.stub(), _micro(), TrainConfig(batch_size=4, epochs=1))


def test_text_embeddings_frozen_through_training():
    samples = make_pair_samples(4)
    prov = EmbeddingProvider.stub()
    prompts = [render_report_prompt(s.report) for s in samples]
    before = embed(prov, prompts).data.copy()
    pretrain(samples, prov, _micro(), TrainConfig(batch_size=4, epochs=3))
    np.testing.assert_array_equal(embed(prov, prompts).data, before)


def test_adapter_used_when_widths_differ():
    samples = make_pair_samples(4)
    model, log = pretrain(samples, EmbeddingProvider.stub(16), _micro(), TrainConfig(batch_size=4, epochs=1))
    assert model.buffers["text_adapter"].shape == (16, 128)
    assert len(log) == 1


def test_retrieval_train_mode_keeps_running_stats():
    samples = make_pair_samples(4)
    model = _micro()
    before = model.bn_states["stem.bn"].running_mean.copy()
    retrieval_top1(model, [s.signal for s in samples], [s.report for s in samples], EmbeddingProvider.stub(),
                   mode="train")
    np.testing.assert_array_equal(model.bn_states["stem.bn"].running_mean, before)


def test_intermediate_checkpoints(tmp_path):
    pretrain(make_pair_samples(4), EmbeddingProvider.stub(), _micro(),
             TrainConfig(batch_size=4, epochs=4, checkpoint_every=2), out_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["checkpoint_epoch002.bin", "checkpoint_epoch004.bin"]
