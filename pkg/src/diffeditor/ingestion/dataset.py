"""Utterance ingestion and the on-disk dataset index."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..data_model import (
    Alignment,
    MelSpectrogram,
    PhonemeSequence,
    WordTokenization,
    is_silence,
    validate_pair,
)
from ..errors import DataError
from ..frontend.g2p import load_lexicon, normalize_words, word_phonemes
from .audio import AudioConfig, PitchTrack, compute_mel, extract_f0, read_wav
from .cache import load_array, save_array
from .manifest import ManifestEntry
from .textgrid import Interval, parse_textgrid

log = logging.getLogger(__name__)

INDEX_NAME = "index.json"


def durations_from_intervals(intervals, hop_length: int, sample_rate: int, n_frames: int) -> Alignment:
    """Round each interval to whole frames; the last phoneme absorbs the residual."""
    if not intervals:
        raise DataError("no intervals")
    frame_rate = sample_rate / hop_length
    durs = np.array([int(round((iv.end - iv.start) * frame_rate)) for iv in intervals], dtype=np.int64)
    durs[-1] += n_frames - durs.sum()
    if np.any(durs < 0):
        raise DataError(f"negative duration after rounding (last phoneme {durs[-1]})")
    return Alignment(durs)


def tokenization_from_tiers(phones: list[Interval], words: list[Interval], tol: float = 1e-4) -> WordTokenization:
    starts = np.array([p.start for p in phones])
    ends = np.array([p.end for p in phones])
    names, spans = [], []
    for w in words:
        if w.label == "SIL":
            continue
        inside = np.flatnonzero((starts >= w.start - tol) & (ends <= w.end + tol))
        if inside.size == 0:
            raise DataError(f"word {w.label!r} at {w.start:.3f}s covers no phones")
        if inside[-1] - inside[0] + 1 != inside.size:
            raise DataError(f"word {w.label!r} covers non-contiguous phones")
        names.append(w.label.lower())
        spans.append((int(inside[0]), int(inside[-1]) + 1))
    return WordTokenization(tuple(names), tuple(spans))


def tokenization_by_g2p(text: str, phonemes: tuple[str, ...], lexicon_path=None) -> WordTokenization:
    """Recover word spans for inline phoneme lists by matching per-word G2P output."""
    lexicon = load_lexicon(lexicon_path)
    words = normalize_words(text)
    spans = []
    i = 0
    for w in words:
        while i < len(phonemes) and is_silence(phonemes[i]):
            i += 1
        expect = word_phonemes(w, lexicon)
        if tuple(phonemes[i : i + len(expect)]) != expect:
            raise DataError(f"inline phonemes do not match G2P of {w!r}; supply word_spans")
        spans.append((i, i + len(expect)))
        i += len(expect)
    return WordTokenization(tuple(words), tuple(spans))


@dataclass
class Utterance:
    id: str
    speaker: str
    text: str
    words: tuple[str, ...]
    spans: tuple[tuple[int, int], ...]
    phonemes: tuple[str, ...]
    durations: np.ndarray
    mel: np.ndarray = field(repr=False)
    f0: np.ndarray = field(repr=False)

    @property
    def n_frames(self) -> int:
        return self.mel.shape[0]

    @property
    def phoneme_seq(self) -> PhonemeSequence:
        return PhonemeSequence(self.phonemes)

    @property
    def tokenization(self) -> WordTokenization:
        return WordTokenization(self.words, self.spans)

    @property
    def alignment(self) -> Alignment:
        return Alignment(self.durations)


def _load_f0(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path).astype(np.float64).reshape(-1)
    return np.loadtxt(path, dtype=np.float64).reshape(-1)


def ingest_entry(entry: ManifestEntry, cfg: AudioConfig, lexicon_path=None) -> Utterance:
    wave, sr = read_wav(entry.audio)
    mel = compute_mel(wave, sr, cfg)
    n_frames = mel.n_frames
    if entry.f0 is not None:
        f0 = _load_f0(entry.f0)
        if f0.size != n_frames:
            raise DataError(f"{entry.id}: precomputed F0 has {f0.size} frames, mel has {n_frames}")
    else:
        f0 = extract_f0(wave, sr, cfg).f0

    if entry.textgrid is not None:
        phones, words = parse_textgrid(entry.textgrid)
        align = durations_from_intervals(phones, cfg.hop_length, cfg.sample_rate, n_frames)
        phonemes = tuple(p.label for p in phones)
        tok = tokenization_from_tiers(phones, words)
        expected = normalize_words(entry.text)
        if list(tok.words) != expected:
            raise DataError(f"{entry.id}: transcript words {expected} != alignment words {list(tok.words)}")
    else:
        phonemes = tuple(entry.phonemes)
        align = Alignment(np.array(entry.durations, dtype=np.int64))
        if entry.word_spans is not None:
            tok = WordTokenization(tuple(normalize_words(entry.text)), entry.word_spans)
        else:
            tok = tokenization_by_g2p(entry.text, phonemes, lexicon_path)

    seq = PhonemeSequence(phonemes)
    tok.check_against(seq)
    if len(align.durations) != len(seq):
        raise DataError(f"{entry.id}: {len(align.durations)} durations for {len(seq)} phonemes")
    report = validate_pair(mel, align)
    if not report.ok:
        raise DataError(f"{entry.id}: " + "; ".join(report.violations))
    return Utterance(
        id=entry.id,
        speaker=entry.speaker,
        text=entry.text,
        words=tok.words,
        spans=tok.spans,
        phonemes=seq.phonemes,
        durations=align.durations,
        mel=mel.data,
        f0=np.asarray(f0, dtype=np.float32),
    )


@dataclass
class IngestSummary:
    ingested: list[str]
    failures: dict[str, str]

    def as_dict(self) -> dict:
        return {"ingested": len(self.ingested), "failed": len(self.failures), "failures": self.failures}


def ingest_manifest(entries, out_dir, cfg: AudioConfig | None = None, workers: int = 1, lexicon_path=None) -> IngestSummary:
    """Ingest every entry (in parallel if asked) and write the dataset cache in manifest order."""
    cfg = cfg or AudioConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h = cfg.hash()

    def work(entry):
        try:
            return ingest_entry(entry, cfg, lexicon_path), None
        except DataError as exc:
            return None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(work, entries))
    else:
        results = [work(e) for e in entries]

    records, failures, ok = [], {}, []
    for entry, (utt, err) in zip(entries, results):
        if err is not None:
            log.warning("skipping %s: %s", entry.id, err)
            failures[entry.id] = err
            continue
        save_array(out_dir / "items" / f"{utt.id}.mel", utt.mel, h)
        save_array(out_dir / "items" / f"{utt.id}.f0", utt.f0, h)
        records.append(
            {
                "id": utt.id,
                "speaker": utt.speaker,
                "text": utt.text,
                "words": list(utt.words),
                "spans": [list(s) for s in utt.spans],
                "phonemes": list(utt.phonemes),
                "durations": utt.durations.tolist(),
            }
        )
        ok.append(utt.id)
    index = {"audio_config": asdict(cfg), "config_hash": h, "utterances": records}
    (out_dir / INDEX_NAME).write_text(json.dumps(index, indent=1))
    return IngestSummary(ok, failures)


class Dataset:
    """Ingested utterances plus the speaker table, loaded from a cache directory."""

    def __init__(self, utterances: list[Utterance], audio_config: AudioConfig, root: Path | None = None):
        if not utterances:
            raise DataError("dataset is empty")
        self.utterances = utterances
        self.audio_config = audio_config
        self.root = root
        self.speakers = sorted({u.speaker for u in utterances})

    def __len__(self) -> int:
        return len(self.utterances)

    def __getitem__(self, i) -> Utterance:
        return self.utterances[i]

    def by_id(self, uid: str) -> Utterance:
        for u in self.utterances:
            if u.id == uid:
                return u
        raise KeyError(uid)

    @classmethod
    def load(cls, root) -> "Dataset":
        root = Path(root)
        index_path = root / INDEX_NAME
        if not index_path.exists():
            raise DataError(f"no dataset index at {index_path}; run ingest first")
        index = json.loads(index_path.read_text())
        cfg = AudioConfig(**index["audio_config"])
        utts = []
        for rec in index["utterances"]:
            mel = load_array(root / "items" / f"{rec['id']}.mel", index["config_hash"])
            f0 = load_array(root / "items" / f"{rec['id']}.f0", index["config_hash"])
            if mel is None or f0 is None:
                raise DataError(f"cache entry for {rec['id']} missing or stale; re-run ingest")
            utts.append(
                Utterance(
                    id=rec["id"],
                    speaker=rec["speaker"],
                    text=rec["text"],
                    words=tuple(rec["words"]),
                    spans=tuple(tuple(s) for s in rec["spans"]),
                    phonemes=tuple(rec["phonemes"]),
                    durations=np.array(rec["durations"], dtype=np.int64),
                    mel=mel.astype(np.float32),
                    f0=f0.astype(np.float32),
                )
            )
        return cls(utts, cfg, root)


def mel_of(utt: Utterance, cfg: AudioConfig) -> MelSpectrogram:
    return MelSpectrogram(utt.mel, cfg.sample_rate, cfg.hop_length)


def pitch_of(utt: Utterance) -> PitchTrack:
    return PitchTrack(utt.f0.astype(np.float64))
