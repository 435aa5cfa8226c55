import json

import numpy as np
import pytest

from diffeditor.data_model import MelSpectrogram, validate_pair
from diffeditor.errors import DataError
from diffeditor.ingestion.audio import write_wav
from diffeditor.ingestion.cache import load_array, save_array
from diffeditor.ingestion.dataset import Dataset, durations_from_intervals, ingest_manifest
from diffeditor.ingestion.manifest import load_manifest
from diffeditor.ingestion.textgrid import Interval


def _manifest(tmp_path, rows):
    (tmp_path / "a.wav").write_bytes(b"")
    (tmp_path / "a.TextGrid").write_text("")
    path = tmp_path / "m.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return path


ROW = {"id": "u1", "audio": "a.wav", "text": "hi", "speaker": "s", "textgrid": "a.TextGrid"}


def test_manifest_order(tmp_path):
    entries = load_manifest(_manifest(tmp_path, [ROW, dict(ROW, id="u0")]))
    assert [e.id for e in entries] == ["u1", "u0"]
    assert entries[0].audio == tmp_path / "a.wav"


def test_manifest_missing_field_names_line(tmp_path):
    bad = {k: v for k, v in ROW.items() if k != "text"}
    with pytest.raises(DataError, match="line 2: missing field text"):
        load_manifest(_manifest(tmp_path, [ROW, dict(bad, id="u2")]))


def test_manifest_duplicate_id(tmp_path):
    with pytest.raises(DataError, match="duplicate"):
        load_manifest(_manifest(tmp_path, [ROW, ROW]))


def test_manifest_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_manifest(tmp_path / "nope.jsonl")
    with pytest.raises(DataError, match="not found"):
        load_manifest(_manifest(tmp_path, [dict(ROW, audio="zzz.wav")]))


def test_durations_forced_sum():
    ivs = [Interval(0.0, 0.1, "A"), Interval(0.1, 0.2, "B")]
    a = durations_from_intervals(ivs, 256, 22050, 18)
    assert a.durations.sum() == 18


def test_durations_single_interval():
    a = durations_from_intervals([Interval(0.0, 1.0, "A")], 256, 22050, 87)
    assert a.durations.tolist() == [87]


def test_durations_last_absorbs_remainder():
    ivs = [Interval(0.0, 0.1, "A"), Interval(0.1, 0.2, "B")]
    a = durations_from_intervals(ivs, 256, 22050, 40)
    assert a.durations[0] == 9 and a.durations[1] == 31


def test_durations_negative_rejected():
    ivs = [Interval(0.0, 0.5, "A"), Interval(0.5, 0.6, "B")]
    with pytest.raises(DataError):
        durations_from_intervals(ivs, 256, 22050, 10)


def test_cache_roundtrip_and_invalidation(tmp_path):
    arr = np.arange(12, dtype=np.float32).reshape(3, 4)
    save_array(tmp_path / "x.mel", arr, "h1")
    save_array(tmp_path / "x.f0", arr[:, 0], "h1")
    assert np.array_equal(load_array(tmp_path / "x.mel", "h1"), arr)
    assert np.array_equal(load_array(tmp_path / "x.f0", "h1"), arr[:, 0])
    assert load_array(tmp_path / "x.mel", "h2") is None
    side = json.loads((tmp_path / "x.mel.json").read_text())
    assert side["shape"] == [3, 4] and np.dtype(side["dtype"]) == np.float32


def test_toy_ingest(toy_dataset):
    assert len(toy_dataset) == 5
    for u in toy_dataset:
        assert validate_pair(MelSpectrogram(u.mel), u.alignment).ok
        assert u.f0.shape[0] == u.n_frames
        assert np.all((u.f0 == 0) | ((u.f0 >= 65) & (u.f0 <= 550)))


def test_partial_failure(toy_dir, tmp_path):
    entries = load_manifest(toy_dir / "manifest.jsonl")
    bad = tmp_path / "bad.TextGrid"
    bad.write_text("garbage")
    entries[2] = type(entries[2])(**{**entries[2].__dict__, "textgrid": bad})
    summary = ingest_manifest(entries, tmp_path / "cache", workers=2)
    assert len(summary.ingested) == 4 and list(summary.failures) == [entries[2].id]
    ds = Dataset.load(tmp_path / "cache")
    assert [u.id for u in ds] == [e.id for i, e in enumerate(entries) if i != 2]


def test_parallel_ingest_matches_serial(toy_dir, tmp_path):
    entries = load_manifest(toy_dir / "manifest.jsonl")
    ingest_manifest(entries, tmp_path / "a", workers=1)
    ingest_manifest(entries, tmp_path / "b", workers=3)
    assert (tmp_path / "a" / "index.json").read_text() == (tmp_path / "b" / "index.json").read_text()
    for e in entries:
        assert (tmp_path / "a" / "items" / f"{e.id}.mel.bin").read_bytes() == (tmp_path / "b" / "items" / f"{e.id}.mel.bin").read_bytes()


def test_inline_phonemes_manifest(tmp_path):
    x = 0.1 * np.sin(2 * np.pi * 200 * np.arange(2560) / 22050)
    write_wav(tmp_path / "a.wav", x, 22050)
    row = {"id": "i", "audio": "a.wav", "text": "a", "speaker": "s", "phonemes": ["SIL", "AH0", "SIL"], "durations": [3, 4, 3]}
    (tmp_path / "m.jsonl").write_text(json.dumps(row) + "\n")
    summary = ingest_manifest(load_manifest(tmp_path / "m.jsonl"), tmp_path / "c")
    assert summary.ingested == ["i"]
    u = Dataset.load(tmp_path / "c")[0]
    assert u.spans == ((1, 2),)


def test_transcript_alignment_mismatch(toy_dir, tmp_path):
    entries = load_manifest(toy_dir / "manifest.jsonl")[:1]
    entries[0] = type(entries[0])(**{**entries[0].__dict__, "text": "completely different words"})
    summary = ingest_manifest(entries, tmp_path / "c")
    assert summary.failures and "transcript" in next(iter(summary.failures.values()))
