"""Synthetic speech-like corpus with exact alignments, for desk-scale runs.

Each phoneme is rendered from a fixed spectral envelope (formant bumps for
voiced sounds, shaped noise for obstruents) over a smooth F0 contour. Words
carry a small deterministic loudness/pitch accent so word identity matters
beyond the phoneme string.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .frontend.g2p import g2p
from .ingestion.audio import AudioConfig, istft, write_wav
from .ingestion.textgrid import Interval, write_textgrid

TOY_SENTENCES = (
    "six other people were injured",
    "the music was loud and clear",
    "five friends walked to the station",
    "she reads a book every night",
    "mozart wrote music for other people",
    "individuals were seen near the river",
    "the old station was closed at night",
    "people walked along the clear river",
)

# (F1, F2, F3) in Hz
_VOWEL_FORMANTS = {
    "AA": (730, 1090, 2440), "AE": (660, 1720, 2410), "AH": (640, 1190, 2390),
    "AO": (570, 840, 2410), "AW": (680, 1100, 2400), "AY": (700, 1500, 2500),
    "EH": (530, 1840, 2480), "ER": (490, 1350, 1690), "EY": (480, 2000, 2600),
    "IH": (390, 1990, 2550), "IY": (270, 2290, 3010), "OW": (500, 900, 2400),
    "OY": (550, 1000, 2400), "UH": (440, 1020, 2240), "UW": (300, 870, 2240),
}
_SONORANT = {
    "M": (250, 1100, 2300), "N": (250, 1600, 2500), "NG": (250, 2000, 2800),
    "L": (360, 1300, 2800), "R": (420, 1300, 1600), "W": (300, 700, 2200), "Y": (280, 2200, 3000),
}
# (centre Hz, bandwidth Hz, voiced fraction)
_OBSTRUENT = {
    "P": (900, 1500, 0.0), "T": (4000, 2500, 0.0), "K": (2200, 1500, 0.0),
    "B": (700, 1000, 0.6), "D": (3500, 2000, 0.6), "G": (2000, 1200, 0.6),
    "F": (5000, 3000, 0.0), "TH": (5500, 3000, 0.0), "S": (6500, 1500, 0.0), "SH": (3200, 1200, 0.0),
    "HH": (1500, 2500, 0.0), "CH": (3500, 1500, 0.0), "JH": (3000, 1500, 0.5),
    "V": (4500, 3000, 0.6), "DH": (5000, 3000, 0.6), "Z": (6000, 1500, 0.6), "ZH": (3000, 1200, 0.6),
}
_BASE_F0 = {"spk_a": 115.0, "spk_b": 195.0}


def _hash_unit(*parts) -> float:
    digest = hashlib.sha256("\x00".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little") / 2.0**64


def _formant_env(freqs, formants, bw=(90, 120, 160)):
    env = np.full_like(freqs, 1e-3, dtype=np.float64)
    for k, (f, b) in enumerate(zip(formants, bw)):
        env += (0.9**k) * np.exp(-0.5 * ((freqs - f) / b) ** 2)
    return env * np.exp(-freqs / 6000.0)


def _phoneme_durations(phonemes, rng) -> list[int]:
    out = []
    for p in phonemes:
        base = p.rstrip("012")
        if p in ("SIL", "SP"):
            out.append(int(rng.integers(6, 10)))
        elif base in _VOWEL_FORMANTS:
            out.append(int(rng.integers(8, 14)))
        else:
            out.append(int(rng.integers(4, 8)))
    return out


def synthesize(phonemes, durations, word_of_phoneme, speaker: str, cfg: AudioConfig, seed: int = 0) -> np.ndarray:
    """Render a waveform whose frame grid matches ``durations`` exactly."""
    rng = np.random.default_rng(seed)
    hop, sr = cfg.hop_length, cfg.sample_rate
    n_frames = int(sum(durations))
    frame_ph = np.repeat(np.arange(len(phonemes)), durations)
    t_frames = np.arange(n_frames) / n_frames

    base = _BASE_F0.get(speaker, 100.0 + 100.0 * _hash_unit("spk", speaker))
    t_sec = np.arange(n_frames) * hop / sr
    phi = rng.uniform(0, 2 * np.pi, 2)
    intonation = 1.0 + 0.07 * np.sin(2 * np.pi * 0.9 * t_sec + phi[0]) + 0.04 * np.sin(2 * np.pi * 2.3 * t_sec + phi[1])
    f0 = base * (1.08 - 0.16 * t_frames) * intonation  # declination plus slow intonation
    gain = np.ones(n_frames)
    for f in range(n_frames):
        w = word_of_phoneme[frame_ph[f]]
        if w is not None:
            f0[f] *= 1.0 + 0.12 * (_hash_unit("accent", w) - 0.5)
            gain[f] = 0.6 + 0.8 * _hash_unit("loud", w)

    voiced_amt = np.zeros(n_frames)
    noise_amt = np.zeros(n_frames)
    n_harm = int(cfg.f_max // 60)
    harm_amp = np.zeros((n_frames, n_harm))
    n_bins = cfg.n_fft // 2 + 1
    fft_freqs = np.linspace(0, sr / 2, n_bins)
    noise_env = np.zeros((n_frames, n_bins))
    for f in range(n_frames):
        p = phonemes[frame_ph[f]]
        b = p.rstrip("012")
        hf = f0[f] * np.arange(1, n_harm + 1)
        if b in _VOWEL_FORMANTS or b in _SONORANT:
            formants = _VOWEL_FORMANTS.get(b) or _SONORANT[b]
            level = 1.0 if b in _VOWEL_FORMANTS else 0.45
            harm_amp[f] = level * _formant_env(hf, formants) * (hf < cfg.f_max)
            voiced_amt[f] = 1.0
        elif b in _OBSTRUENT:
            centre, bw, vfrac = _OBSTRUENT[b]
            noise_env[f] = 0.35 * np.exp(-0.5 * ((fft_freqs - centre) / bw) ** 2)
            noise_amt[f] = 1.0
            if vfrac:
                harm_amp[f] = 0.3 * vfrac * _formant_env(hf, (300, 1200, 2500)) * (hf < cfg.f_max)
                voiced_amt[f] = vfrac
        else:
            f0[f] = 0.0

    n_samples = n_frames * hop
    centres = (np.arange(n_frames) + 0.5) * hop
    n = np.arange(n_samples)
    f0_s = np.interp(n, centres, np.where(f0 > 0, f0, np.nan_to_num(base)))
    phase = 2 * np.pi * np.cumsum(f0_s) / sr
    gain_s = np.interp(n, centres, gain)
    voiced = np.zeros(n_samples)
    for k in range(n_harm):
        amp = np.interp(n, centres, harm_amp[:, k])
        if amp.max() > 1e-6:
            voiced += amp * np.sin((k + 1) * phase)
    spec = (rng.standard_normal((n_frames, n_bins)) + 1j * rng.standard_normal((n_frames, n_bins))) * noise_env
    noise = istft(spec * 8.0, cfg, n_samples)
    floor = 1e-4 * rng.standard_normal(n_samples)
    wave = gain_s * (0.05 * voiced + noise) + floor
    return 0.9 * wave / max(1e-9, np.max(np.abs(wave)))


def make_toy_corpus(out_dir, n_utterances: int = 5, seed: int = 0, cfg: AudioConfig | None = None) -> Path:
    """Write wavs, TextGrids and a manifest; returns the manifest path."""
    cfg = cfg or AudioConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    frame_sec = cfg.hop_length / cfg.sample_rate
    lines = []
    for i in range(n_utterances):
        text = TOY_SENTENCES[i % len(TOY_SENTENCES)]
        speaker = "spk_a" if i % 2 == 0 else "spk_b"
        seq, tok = g2p(text)
        phonemes = ["SIL"]
        word_of = [None]
        for (a, b), w in zip(tok.spans, tok.words):
            phonemes.extend(seq.phonemes[a:b])
            word_of.extend([w] * (b - a))
        phonemes.append("SIL")
        word_of.append(None)
        durs = _phoneme_durations(phonemes, rng)
        wave = synthesize(phonemes, durs, word_of, speaker, cfg, seed=seed * 1000 + i)

        uid = f"toy{i:03d}"
        ends = np.cumsum(durs)
        phone_ivs = [Interval((e - d) * frame_sec, e * frame_sec, p) for p, d, e in zip(phonemes, durs, ends)]
        word_ivs = [Interval(0.0, phone_ivs[0].end, "SIL")]
        for (a, b), w in zip(tok.spans, tok.words):
            word_ivs.append(Interval(phone_ivs[a + 1].start, phone_ivs[b].end, w))
        word_ivs.append(Interval(phone_ivs[-1].start, phone_ivs[-1].end, "SIL"))
        write_wav(out_dir / f"{uid}.wav", wave, cfg.sample_rate)
        write_textgrid(out_dir / f"{uid}.TextGrid", phone_ivs, word_ivs, xmax=ends[-1] * frame_sec)
        lines.append(
            json.dumps({"id": uid, "audio": f"{uid}.wav", "text": text, "speaker": speaker, "textgrid": f"{uid}.TextGrid"})
        )
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
