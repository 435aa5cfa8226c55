"""Waveform -> log-mel / F0 features, plus a Griffin-Lim inverse for metrics."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .. import kernels
from ..data_model import LOG_FLOOR, MelSpectrogram
from ..errors import DataError


@dataclass(frozen=True)
class AudioConfig:
    sample_rate: int = 22050
    hop_length: int = 256
    win_length: int = 1024
    n_fft: int = 1024
    n_mels: int = 80
    f_min: float = 0.0
    f_max: float = 8000.0
    f0_min: float = 65.0
    f0_max: float = 550.0
    voicing_threshold: float = 0.45
    silence_db: float = -60.0

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class PitchTrack:
    f0: np.ndarray  # Hz per frame, 0 for unvoiced

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0


def hz_to_mel(f):
    # Slaney scale: linear below 1 kHz, logarithmic above
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    lin = f / f_sp
    log = min_log_mel + np.log(np.maximum(f, min_log_hz) / min_log_hz) / logstep
    return np.where(f >= min_log_hz, log, lin)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    lin = f_sp * m
    log = min_log_hz * np.exp(logstep * (m - min_log_mel))
    return np.where(m >= min_log_mel, log, lin)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, f_min: float, f_max: float) -> np.ndarray:
    """Area-normalised triangular filters, shape (n_mels, n_fft // 2 + 1)."""
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    mel_pts = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    fdiff = np.diff(mel_pts)
    ramps = mel_pts[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (mel_pts[2:] - mel_pts[:-2]))[:, None]
    return weights


def n_frames_for(n_samples: int, hop_length: int) -> int:
    return max(1, math.ceil(n_samples / hop_length))


def frame_signal(x: np.ndarray, frame_length: int, hop_length: int, n_frames: int) -> np.ndarray:
    """Centre-padded frames: frame i is centred on sample i * hop."""
    pad = frame_length // 2
    mode = "reflect" if x.size > pad else "constant"
    padded = np.pad(x, (pad, pad + frame_length), mode=mode)
    idx = np.arange(frame_length)[None, :] + hop_length * np.arange(n_frames)[:, None]
    return padded[idx]


def _window(cfg: AudioConfig) -> np.ndarray:
    win = signal.get_window("hann", cfg.win_length, fftbins=True)
    if cfg.win_length < cfg.n_fft:
        left = (cfg.n_fft - cfg.win_length) // 2
        win = np.pad(win, (left, cfg.n_fft - cfg.win_length - left))
    return win


def stft(x: np.ndarray, cfg: AudioConfig) -> np.ndarray:
    n_frames = n_frames_for(x.size, cfg.hop_length)
    frames = frame_signal(x, cfg.n_fft, cfg.hop_length, n_frames) * _window(cfg)
    return np.fft.rfft(frames, n=cfg.n_fft, axis=1)


def istft(spec: np.ndarray, cfg: AudioConfig, length: int | None = None) -> np.ndarray:
    win = _window(cfg)
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=1) * win
    n_frames = spec.shape[0]
    total = cfg.n_fft + cfg.hop_length * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(n_frames):
        s = i * cfg.hop_length
        out[s : s + cfg.n_fft] += frames[i]
        norm[s : s + cfg.n_fft] += win**2
    out = np.divide(out, norm, out=np.zeros_like(out), where=norm > 1e-8)
    pad = cfg.n_fft // 2
    out = out[pad:]
    length = n_frames * cfg.hop_length if length is None else length
    if out.size < length:
        out = np.pad(out, (0, length - out.size))
    return out[:length]


def _prepare(waveform, sample_rate: int, cfg: AudioConfig) -> np.ndarray:
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim == 2 and 1 in x.shape:
        x = x.reshape(-1)
    if x.ndim != 1:
        raise DataError(f"expected mono waveform, got shape {x.shape}")
    if x.size == 0:
        raise DataError("empty waveform")
    if sample_rate != cfg.sample_rate:
        x = resample(x, sample_rate, cfg.sample_rate)
    return x


def resample(x: np.ndarray, orig_sr: int, target_sr: int) -> np.ndarray:
    if orig_sr == target_sr:
        return np.asarray(x, dtype=np.float64)
    if orig_sr <= 0 or target_sr <= 0:
        raise DataError(f"unsupported sample rate {orig_sr} -> {target_sr}")
    ratio = Fraction(int(target_sr), int(orig_sr))
    return signal.resample_poly(np.asarray(x, dtype=np.float64), ratio.numerator, ratio.denominator)


def compute_mel(waveform, sample_rate: int, config: AudioConfig | None = None) -> MelSpectrogram:
    cfg = config or AudioConfig()
    x = _prepare(waveform, sample_rate, cfg)
    mag = np.abs(stft(x, cfg))
    fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.f_min, cfg.f_max)
    mel = mag @ fb.T
    return MelSpectrogram(np.log(np.maximum(mel, LOG_FLOOR)), cfg.sample_rate, cfg.hop_length)


def extract_f0(waveform, sample_rate: int, config: AudioConfig | None = None) -> PitchTrack:
    """Frame-wise normalised autocorrelation pitch on the mel frame grid."""
    cfg = config or AudioConfig()
    x = _prepare(waveform, sample_rate, cfg)
    n_frames = n_frames_for(x.size, cfg.hop_length)
    frames = frame_signal(x, cfg.win_length, cfg.hop_length, n_frames)
    frames = frames - frames.mean(axis=1, keepdims=True)
    min_lag = max(2, int(math.floor(cfg.sample_rate / cfg.f0_max)))
    max_lag = min(cfg.win_length - 2, int(math.ceil(cfg.sample_rate / cfg.f0_min)))
    lags, peaks = kernels.autocorr_frames(frames, min_lag, max_lag)

    peak_abs = np.max(np.abs(x))
    rms = np.sqrt(np.mean(frames**2, axis=1))
    gate = peak_abs * 10 ** (cfg.silence_db / 20) if peak_abs > 0 else np.inf
    with np.errstate(divide="ignore"):
        f0 = np.where(lags > 0, cfg.sample_rate / np.maximum(lags, 1e-9), 0.0)
    voiced = (peaks >= cfg.voicing_threshold) & (rms > gate) & (f0 >= cfg.f0_min) & (f0 <= cfg.f0_max)
    return PitchTrack(np.where(voiced, f0, 0.0))


def griffin_lim(mel: np.ndarray, config: AudioConfig | None = None, n_iter: int = 32) -> np.ndarray:
    """Deterministic waveform estimate from a log-mel matrix (zero-phase start)."""
    cfg = config or AudioConfig()
    fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.f_min, cfg.f_max)
    mel_amp = np.exp(np.asarray(mel, dtype=np.float64))
    mag = np.maximum(mel_amp @ np.linalg.pinv(fb).T, 0.0)
    length = mag.shape[0] * cfg.hop_length
    spec = mag.astype(np.complex128)
    for _ in range(n_iter):
        wave = istft(spec, cfg, length)
        rebuilt = stft(wave, cfg)
        spec = mag * np.exp(1j * np.angle(rebuilt))
    return istft(spec, cfg, length)


def read_wav(path) -> tuple[np.ndarray, int]:
    sr, data = wavfile.read(str(path))
    if data.ndim > 1:
        if data.shape[1] != 1:
            raise DataError(f"{path}: multi-channel audio is not supported")
        data = data[:, 0]
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max)
    return data.astype(np.float64), int(sr)


def write_wav(path, waveform: np.ndarray, sample_rate: int) -> None:
    x = np.clip(np.asarray(waveform, dtype=np.float64), -1.0, 1.0)
    wavfile.write(str(path), sample_rate, (x * 32767).astype(np.int16))
