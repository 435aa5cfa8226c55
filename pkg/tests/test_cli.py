import csv
import json

import numpy as np
import pytest

from diffeditor.cli import main
from diffeditor.frontend.g2p import g2p
from diffeditor.ingestion.audio import write_wav
from diffeditor.ingestion.cache import load_array
from diffeditor.ingestion.textgrid import Interval, write_textgrid
from diffeditor.training import read_loss_log

TINY = [
    "model.d=16",
    "model.encoder_ff=32",
    "model.predictor_width=8",
    "model.denoiser_blocks=2",
    "model.denoiser_width=8",
    "word_encoder.d_word=24",
    "training.batch_size=2",
]


def sets(items):
    return [x for item in items for x in ("--set", item)]


def test_make_toy_and_ingest(tmp_path, capsys):
    assert main(["make-toy", "--out", str(tmp_path / "toy"), "--n", "5"]) == 0
    assert main(["ingest", "--manifest", str(tmp_path / "toy" / "manifest.jsonl"), "--out", str(tmp_path / "c")]) == 0
    summary = json.loads((tmp_path / "c" / "summary.json").read_text())
    assert summary["ingested"] == 5 and summary["warnings"] == 0
    assert summary["config_hash"] and summary["code_version"]


def test_ingest_partial_failure(toy_dir, tmp_path):
    lines = (toy_dir / "manifest.jsonl").read_text().splitlines()
    bad = tmp_path / "bad.TextGrid"
    bad.write_text("not a textgrid")
    rows = [json.loads(l) for l in lines]
    for r in rows:
        for k in ("audio", "textgrid"):
            r[k] = str(toy_dir / r[k])
    rows[1]["textgrid"] = str(bad)
    manifest = tmp_path / "m.jsonl"
    manifest.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    assert main(["ingest", "--manifest", str(manifest), "--out", str(tmp_path / "c")]) == 0
    summary = json.loads((tmp_path / "c" / "summary.json").read_text())
    assert summary["ingested"] == 4 and summary["warnings"] == 1


def test_missing_manifest(tmp_path, capsys):
    assert main(["ingest", "--manifest", str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "c")]) == 2
    assert "manifest" in capsys.readouterr().err


def test_usage_errors(toy_data, tmp_path, capsys):
    assert main([]) == 1
    assert main(["train", "--data", "x"]) == 1
    assert main(["bench", "--ckpt", "oracle", "--data", str(toy_data), "--out", str(tmp_path), "--mask-ratio", "bad"]) == 1
    assert main(["bench", "--ckpt", "oracle", "--data", str(tmp_path / "none"), "--out", str(tmp_path)]) == 2


def test_unknown_config_key(toy_data, tmp_path):
    code = main(["train", "--config", "toy", "--data", str(toy_data), "--out", str(tmp_path), "--set", "model.nope=1"])
    assert code == 1


@pytest.fixture(scope="module")
def ckpt(toy_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    args = ["train", "--config", "toy", "--data", str(toy_data), "--out", str(out), "--steps", "4"]
    assert main(args + sets(TINY)) == 0
    return out / "ckpt_000004.npz"


def test_train_writes_log(ckpt):
    header, rows = read_loss_log(ckpt.parent / "loss_log.jsonl")
    assert header["lambda_fd"] == 4.0
    assert rows and set(rows[0]) >= {"l_mel", "l_fd", "l_dur", "l_pitch", "total"}


def test_resume_hash_mismatch(ckpt, toy_data, tmp_path):
    args = ["train", "--config", "toy", "--data", str(toy_data), "--out", str(tmp_path), "--resume", str(ckpt), "--steps", "5"]
    assert main(args + sets(TINY + ["loss.lambda_fd=0"])) == 1


def test_edit_identity(ckpt, toy_dir, toy_dataset, tmp_path):
    utt = toy_dataset[0]
    audio, tg = toy_dir / f"{utt.id}.wav", toy_dir / f"{utt.id}.TextGrid"
    args = ["edit", "--ckpt", str(ckpt), "--audio", str(audio), "--textgrid", str(tg), "--text", utt.text,
            "--edited-text", utt.text, "--out", str(tmp_path)]
    assert main(args) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["noop"] is True
    assert np.array_equal(load_array(tmp_path / "edited.mel"), load_array(tmp_path / "original.mel"))


def _paper_utterance(tmp_path):
    text = "six other people were injured"
    seq, tok = g2p(text)
    hop = 0.06
    phones = [Interval(0.0, 0.1, "SIL")]
    t = 0.1
    for p in seq.phonemes:
        phones.append(Interval(round(t, 4), round(t + hop, 4), p))
        t += hop
    words = [Interval(0.0, 0.1, "")]
    for w, (a, b) in zip(tok.words, tok.spans):
        words.append(Interval(phones[a + 1].start, phones[b].end, w))
    end = round(t + 0.1, 4)
    phones.append(Interval(round(t, 4), end, "SIL"))
    words.append(Interval(round(t, 4), end, ""))
    sr = 22050
    n = int(end * sr)
    wave = 0.2 * np.sin(2 * np.pi * 150 * np.arange(n) / sr) * (1 + 0.5 * np.sin(2 * np.pi * 4 * np.arange(n) / sr))
    write_wav(tmp_path / "six.wav", wave, sr)
    write_textgrid(tmp_path / "six.TextGrid", phones, words, xmax=end)
    return text, tmp_path / "six.wav"


def test_edit_paper_pair(ckpt, tmp_path):
    text, audio = _paper_utterance(tmp_path)
    new = "mozart and five other individuals were injured"
    args = ["edit", "--ckpt", str(ckpt), "--audio", str(audio), "--text", text, "--edited-text", new,
            "--out", str(tmp_path / "out"), "--seed", "3", "--wav"]
    assert main(args) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["replaced_words"] == ["six", "other", "people"]
    assert report["kept_suffix_words"] == 2 and report["seed"] == 3
    assert (tmp_path / "out" / "edited.wav").exists()


def test_edit_missing_checkpoint(tmp_path):
    text, audio = _paper_utterance(tmp_path)
    args = ["edit", "--ckpt", str(tmp_path / "nope.npz"), "--audio", str(audio), "--text", text,
            "--edited-text", "six people", "--out", str(tmp_path / "o")]
    assert main(args) != 0


def test_edit_missing_alignment(ckpt, tmp_path):
    write_wav(tmp_path / "a.wav", np.zeros(2205), 22050)
    args = ["edit", "--ckpt", str(ckpt), "--audio", str(tmp_path / "a.wav"), "--text", "a", "--edited-text", "b",
            "--out", str(tmp_path / "o")]
    assert main(args) == 2


def _bench(data, out, ckpt="oracle", seed="0"):
    args = ["bench", "--ckpt", str(ckpt), "--data", str(data), "--mask-ratio", "0.2:0.6", "--seed", seed, "--out", str(out)]
    assert main(args + sets(["bench.griffin_lim_iters=4"]) if ckpt == "oracle" else args) == 0
    return (out / "metrics.csv").read_text()


def test_bench_oracle(toy_data, tmp_path):
    text = _bench(toy_data, tmp_path / "a")
    rows = list(csv.DictReader(text.splitlines()))
    assert len(rows) == 5
    assert all(float(r["mcd_masked"]) == 0.0 and float(r["stoi"]) == pytest.approx(1.0) for r in rows)
    meta = json.loads((tmp_path / "a" / "metrics.json").read_text())["meta"]
    assert meta["seed"] == 0 and meta["mask_ratio"] == [0.2, 0.6] and meta["code_version"]


def test_bench_checkpoint_repeatable(ckpt, toy_data, tmp_path):
    assert _bench(toy_data, tmp_path / "a", ckpt) == _bench(toy_data, tmp_path / "b", ckpt)
    assert _bench(toy_data, tmp_path / "c", ckpt, seed="1") != _bench(toy_data, tmp_path / "a", ckpt)


def test_evaluate_mel_dumps(ckpt, toy_dir, toy_dataset, tmp_path, capsys):
    utt = toy_dataset[0]
    audio = toy_dir / f"{utt.id}.wav"
    out = tmp_path / "ev.json"
    assert main(["evaluate", "--ref", str(audio), "--test", str(audio), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["mcd"] == 0.0 and doc["stoi"] == pytest.approx(1.0)


def test_cache_env_override(ckpt, toy_data, tmp_path, monkeypatch):
    monkeypatch.setenv("DIFFEDIT_CACHE", str(tmp_path / "envcache"))
    _bench(toy_data, tmp_path / "a", ckpt)
    assert (tmp_path / "envcache").exists()
