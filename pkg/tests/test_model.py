import json

import numpy as np
import pytest
import torch

from diffeditor.config import RunConfig
from diffeditor.data_model import sample_phoneme_span
from diffeditor.errors import ConfigError, DataError
from diffeditor.ingestion.dataset import Dataset
from diffeditor.model import DiffEditorModel, load_checkpoint, make_batch, prepare, provider_for, save_checkpoint
from diffeditor.training import read_loss_log, train

TINY = [
    "model.d=16",
    "model.encoder_ff=32",
    "model.predictor_width=8",
    "model.denoiser_blocks=2",
    "model.denoiser_width=8",
    "word_encoder.d_word=24",
]


def test_config_unknown_key():
    with pytest.raises(ConfigError, match="unknown config key: model.nope"):
        RunConfig({"model": {"nope": 1}})
    with pytest.raises(ConfigError):
        RunConfig.load(None, ["training.bogus=3"])
    with pytest.raises(ConfigError):
        RunConfig()["model.nope"]


def test_config_overrides_and_validation():
    cfg = RunConfig.load("toy", ["loss.lambda_fd=0", "fusion.strategy=pre_predictor"])
    assert cfg["loss.lambda_fd"] == 0 and cfg["fusion.strategy"] == "pre_predictor"
    with pytest.raises(ConfigError):
        RunConfig.load(None, ["fusion.strategy=sideways"])
    with pytest.raises(ConfigError):
        RunConfig.load(None, ["training.mask_ratio=[0.7, 0.2]"])
    with pytest.raises(ConfigError):
        RunConfig.load(None, ["no_equals_sign"])
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.load("/nonexistent.yaml")


def test_config_hash_scope():
    base = RunConfig.load("toy")
    assert base.hash() == RunConfig.load("toy", ["training.steps=7", "paths.cache=/x"]).hash()
    assert base.hash() != RunConfig.load("toy", ["loss.lambda_fd=0"]).hash()


def test_checkpoint_roundtrip(tmp_path, toy_dataset):
    cfg = RunConfig.load("toy", TINY)
    torch.manual_seed(0)
    model = DiffEditorModel(cfg, toy_dataset.speakers)
    model.fit_normalizer([u.mel for u in toy_dataset])
    model.eval()
    path = save_checkpoint(tmp_path / "c.npz", model, 3)
    ck = load_checkpoint(path, expected_hash=cfg.hash())
    assert ck.step == 3
    prov = provider_for(cfg)
    items = [prepare(u, model, prov, None) for u in toy_dataset]
    batch = make_batch(items, [(1, 3)] * len(items))
    with torch.no_grad():
        a = model.condition_for(batch, predict_pitch=True).frames
        b = ck.model.condition_for(batch, predict_pitch=True).frames
    assert torch.equal(a, b)
    with pytest.raises(ConfigError, match="hash mismatch"):
        load_checkpoint(path, expected_hash="0" * 16)
    with pytest.raises(ConfigError, match="not found"):
        load_checkpoint(tmp_path / "missing.npz")


def test_train_log_and_resume_bitwise(tmp_path, toy_dataset):
    cfg = RunConfig.load("toy", TINY + ["training.batch_size=2", "training.log_every=1", "training.ckpt_every=3"])
    full = train(cfg, toy_dataset, tmp_path / "a", steps=6)
    header, rows = read_loss_log(tmp_path / "a" / "loss_log.jsonl")
    assert header["lambda_fd"] == 4.0 and header["config_hash"] == cfg.hash()
    assert [r["step"] for r in rows] == list(range(1, 7))
    assert all(np.isfinite(r["total"]) for r in rows)
    r = rows[0]
    assert r["total"] == pytest.approx(r["l_mel"] + 4 * r["l_fd"] + r["l_dur"] + r["l_pitch"], rel=1e-5)

    train(cfg, toy_dataset, tmp_path / "b", steps=3)
    resumed = train(cfg, toy_dataset, tmp_path / "b", resume=tmp_path / "b" / "ckpt_000003.npz", steps=6)
    assert full.read_bytes() == resumed.read_bytes()


def test_train_rejects_other_audio_config(tmp_path, toy_dataset):
    cfg = RunConfig.load("toy", TINY + ["audio.n_mels=40"])
    with pytest.raises(DataError, match="audio config"):
        train(cfg, toy_dataset, tmp_path, steps=1)


@pytest.fixture(scope="module")
def overfit_one(toy_dataset, tmp_path_factory):
    """Tiny model trained 2000 steps on a single utterance."""
    one = Dataset(toy_dataset.utterances[:1], toy_dataset.audio_config)
    cfg = RunConfig.load("toy", TINY)
    path = train(cfg, one, tmp_path_factory.mktemp("overfit1"), steps=2000)
    model = load_checkpoint(path).model
    return model, prepare(one[0], model, provider_for(cfg), None)


def _predictor_errors(model, item, n=20):
    rng = np.random.default_rng(0)
    dur, lf0 = [], []
    for _ in range(n):
        batch = make_batch([item], [sample_phoneme_span(item.durations, (0.2, 0.6), rng)])
        with torch.no_grad():
            d = model.condition.infer_durations(batch.ph_ids, batch.word_rows, batch.durations, batch.ph_masked)
            pred = model.condition_for(batch, predict_pitch=True).predictions
        dur.append((d - batch.durations)[batch.ph_masked].abs().float().mean().item())
        v = batch.frame_masked & (batch.f0 > 0)
        lf0.append((pred.log_f0[v] - torch.log(batch.f0[v])).abs().mean().item())
    return float(np.mean(dur)), float(np.mean(lf0))


def test_overfit_duration_and_pitch(overfit_one):
    # pilot run: duration MAE 0.0 frames, log-F0 MAE 0.0098
    dur_mae, lf0_mae = _predictor_errors(*overfit_one)
    assert dur_mae < 1.0
    assert lf0_mae < 0.05
