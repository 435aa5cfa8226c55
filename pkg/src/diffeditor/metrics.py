"""Objective metrics: MCD, STOI, boundary smoothness and an external PESQ adapter."""

from __future__ import annotations

import csv
import json
import logging
import math
import re
import shutil
import subprocess
import tempfile
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct, idct

from . import kernels
from .errors import DataError
from .ingestion.audio import resample, write_wav

log = logging.getLogger(__name__)

MCD_COEFFS = 13
MCD_SCALE = 10.0 / math.log(10.0) * math.sqrt(2.0)


# ---------------------------------------------------------------------------
# Mel-cepstral distortion
# ---------------------------------------------------------------------------


def mel_cepstrum(mel: np.ndarray, n_coeffs: int = MCD_COEFFS) -> np.ndarray:
    """Orthonormal DCT-II of each log-mel frame, coefficients 1..n_coeffs."""
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[0] == 0:
        raise DataError("mel must be a non-empty (frames, n_mels) matrix")
    return dct(mel, type=2, norm="ortho", axis=1)[:, 1 : n_coeffs + 1]


def cepstra_to_mel(ceps: np.ndarray, n_mels: int) -> np.ndarray:
    """Inverse of ``mel_cepstrum`` with c0 and coefficients past ``ceps`` set to zero."""
    ceps = np.atleast_2d(np.asarray(ceps, dtype=np.float64))
    full = np.zeros((ceps.shape[0], n_mels))
    full[:, 1 : ceps.shape[1] + 1] = ceps
    return idct(full, type=2, norm="ortho", axis=1)


def frame_distances(c_ref: np.ndarray, c_test: np.ndarray) -> np.ndarray:
    """(T_ref, T_test) matrix of per-frame cepstral distances in dB."""
    d2 = ((c_ref[:, None, :] - c_test[None, :, :]) ** 2).sum(axis=-1)
    return (10.0 / math.log(10.0)) * np.sqrt(2.0 * d2)


def mcd(ref_mel, test_mel, frame_aligned: bool = True) -> float:
    """Mean mel-cepstral distortion in dB; DTW-aligned when ``frame_aligned`` is False."""
    ref = np.asarray(ref_mel, dtype=np.float64)
    test = np.asarray(test_mel, dtype=np.float64)
    if ref.ndim != 2 or test.ndim != 2 or ref.shape[0] == 0 or test.shape[0] == 0:
        raise DataError("mcd needs non-empty (frames, n_mels) inputs")
    if ref.shape[1] != test.shape[1]:
        raise DataError(f"band mismatch: {ref.shape[1]} vs {test.shape[1]} mels")
    c_ref, c_test = mel_cepstrum(ref), mel_cepstrum(test)
    if frame_aligned:
        if ref.shape[0] != test.shape[0]:
            raise DataError(f"frame-aligned mcd needs equal lengths, got {ref.shape[0]} and {test.shape[0]}")
        per_frame = (10.0 / math.log(10.0)) * np.sqrt(2.0 * ((c_ref - c_test) ** 2).sum(axis=1))
        return float(per_frame.mean())
    dist = frame_distances(c_ref, c_test)
    path = kernels.dtw_backtrack(kernels.dtw_accumulate(dist))
    return float(np.mean([dist[i, j] for i, j in path]))


# ---------------------------------------------------------------------------
# STOI (10 kHz, 15 one-third-octave bands from 150 Hz, 30-frame segments)
# ---------------------------------------------------------------------------

STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30  # frames of 12.8 ms hop -> 384 ms
STOI_BETA = -15.0
STOI_DYN_RANGE = 40.0
_EPS = np.finfo(np.float64).eps


def third_octave_bands(fs: int = STOI_FS, nfft: int = STOI_NFFT, n_bands: int = STOI_BANDS, min_freq: float = STOI_MIN_FREQ) -> np.ndarray:
    """(n_bands, nfft//2+1) 0/1 matrix grouping FFT bins into one-third-octave bands."""
    f = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(n_bands, dtype=np.float64)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((n_bands, f.size))
    for i in range(n_bands):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm


def _hann(n: int) -> np.ndarray:
    return np.hanning(n + 2)[1:-1]


def _frames(x: np.ndarray, n: int, hop: int) -> np.ndarray:
    starts = np.arange(0, len(x) - n, hop)
    return np.stack([x[s : s + n] for s in starts]) if starts.size else np.zeros((0, n))


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    n_frames, n = frames.shape
    out = np.zeros((n_frames - 1) * hop + n) if n_frames else np.zeros(0)
    for i, fr in enumerate(frames):
        out[i * hop : i * hop + n] += fr
    return out


def remove_silent_frames(x: np.ndarray, y: np.ndarray, dyn_range: float = STOI_DYN_RANGE, n: int = STOI_FRAME, hop: int = STOI_FRAME // 2):
    """Drop frames more than ``dyn_range`` dB below the loudest reference frame."""
    w = _hann(n)
    xf = _frames(x, n, hop) * w
    yf = _frames(y, n, hop) * w
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = (energy.max(initial=-np.inf) - dyn_range - energy) < 0
    return _overlap_add(xf[keep], hop), _overlap_add(yf[keep], hop)


def _band_envelopes(x: np.ndarray, obm: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(_frames(x, STOI_FRAME, STOI_FRAME // 2) * _hann(STOI_FRAME), STOI_NFFT, axis=1)
    return np.sqrt(obm @ (np.abs(spec) ** 2).T)  # (bands, frames)


def stoi(ref_wave, test_wave, sample_rate: int) -> float:
    """Short-time objective intelligibility of ``test_wave`` against ``ref_wave``."""
    x = np.asarray(ref_wave, dtype=np.float64).reshape(-1)
    y = np.asarray(test_wave, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise DataError(f"stoi needs equal-length signals, got {x.size} and {y.size}")
    if sample_rate != STOI_FS:
        x = resample(x, sample_rate, STOI_FS)
        y = resample(y, sample_rate, STOI_FS)
    x, y = remove_silent_frames(x, y)
    obm = third_octave_bands()
    xb = _band_envelopes(x, obm) if x.size > STOI_FRAME else np.zeros((STOI_BANDS, 0))
    yb = _band_envelopes(y, obm) if y.size > STOI_FRAME else np.zeros((STOI_BANDS, 0))
    if xb.shape[1] < STOI_SEGMENT:
        raise DataError(f"signal shorter than one {STOI_SEGMENT}-frame STOI segment after silence removal")

    idx = np.arange(STOI_SEGMENT, xb.shape[1] + 1)
    xs = np.stack([xb[:, m - STOI_SEGMENT : m] for m in idx])  # (J, bands, N)
    ys = np.stack([yb[:, m - STOI_SEGMENT : m] for m in idx])
    scale = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + _EPS)
    yp = np.minimum(ys * scale, xs * (1 + 10 ** (-STOI_BETA / 20)))
    yp = yp - yp.mean(axis=2, keepdims=True)
    xs = xs - xs.mean(axis=2, keepdims=True)
    yp /= np.linalg.norm(yp, axis=2, keepdims=True) + _EPS
    xs /= np.linalg.norm(xs, axis=2, keepdims=True) + _EPS
    return float((yp * xs).sum() / (xs.shape[0] * xs.shape[1]))


# ---------------------------------------------------------------------------
# Boundary smoothness
# ---------------------------------------------------------------------------


def boundary_rows(n_frames: int, start: int, end: int) -> list[int]:
    """Difference-row indices (row i = frame i+1 - frame i) that straddle the region edges."""
    rows = []
    if start >= 1:
        rows.append(start - 1)
    if end <= n_frames - 1:
        rows.append(end - 1)
    return rows


def boundary_values(y, y_hat, start: int, end: int) -> list[float]:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DataError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    if not (0 <= start < end <= y.shape[0]):
        raise DataError(f"mask region [{start}, {end}) invalid for {y.shape[0]} frames")
    rows = boundary_rows(y.shape[0], start, end)
    if not rows:
        raise DataError("mask covers the whole signal: no boundary rows")
    dy = np.diff(y, axis=0)
    dh = np.diff(y_hat, axis=0)
    return [float(np.abs(dy[r] - dh[r]).mean()) for r in rows]


def boundary_smoothness(y, y_hat, mask) -> float:
    """Mean over the region's boundary rows of the band-averaged |dY - dY_hat|.

    ``mask`` is a FrameMask, a (start, end) pair or a boolean frame vector.
    """
    start, end = _region(mask, np.asarray(y).shape[0])
    return float(np.mean(boundary_values(y, y_hat, start, end)))


def _region(mask, n_frames: int) -> tuple[int, int]:
    from .data_model import FrameMask

    if isinstance(mask, FrameMask):
        return mask.start, mask.end
    if isinstance(mask, tuple) and len(mask) == 2:
        return int(mask[0]), int(mask[1])
    fm = FrameMask.from_vector(mask)
    if fm.n_frames != n_frames:
        raise DataError("mask length differs from the mel")
    return fm.start, fm.end


# ---------------------------------------------------------------------------
# PESQ via an external scorer
# ---------------------------------------------------------------------------

_NUMBER = re.compile(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


@dataclass
class PesqResult:
    score: float | None
    error: str | None = None


class PesqAdapter:
    """Runs ``<executable> <ref.wav> <test.wav>`` and reads the last number it prints.

    Audio is resampled to ``rate`` (16 kHz wideband by default). A missing or
    failing tool yields an absent score, never an exception.
    """

    def __init__(self, executable: str | None = None, rate: int = 16000, timeout: float = 60.0):
        self.executable = executable
        self.rate = rate
        self.timeout = timeout
        self._lock = threading.Lock()

    @property
    def configured(self) -> bool:
        return self.executable is not None and shutil.which(self.executable) is not None

    def __call__(self, ref_wave, test_wave, sample_rate: int) -> PesqResult:
        if self.executable is None:
            return PesqResult(None)
        exe = shutil.which(self.executable)
        if exe is None:
            log.warning("pesq tool %s not found; score omitted", self.executable)
            return PesqResult(None, f"pesq tool not found: {self.executable}")
        ref = resample(np.asarray(ref_wave, dtype=np.float64), sample_rate, self.rate)
        test = resample(np.asarray(test_wave, dtype=np.float64), sample_rate, self.rate)
        with self._lock, tempfile.TemporaryDirectory() as tmp:
            rp, tp = Path(tmp) / "ref.wav", Path(tmp) / "test.wav"
            write_wav(rp, _peak_normalize(ref), self.rate)
            write_wav(tp, _peak_normalize(test), self.rate)
            try:
                proc = subprocess.run([exe, str(rp), str(tp)], capture_output=True, text=True, timeout=self.timeout)
            except (OSError, subprocess.TimeoutExpired) as exc:
                log.warning("pesq tool failed: %s", exc)
                return PesqResult(None, f"pesq tool failed: {exc}")
        if proc.returncode != 0:
            return PesqResult(None, f"pesq tool exited with {proc.returncode}: {proc.stderr.strip()[:200]}")
        numbers = _NUMBER.findall(proc.stdout)
        if not numbers:
            return PesqResult(None, f"unparseable pesq output: {proc.stdout.strip()[:200]!r}")
        return PesqResult(float(numbers[-1]))


def _peak_normalize(x: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(x)) if x.size else 0.0
    return x / peak * 0.9 if peak > 0 else x


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("utterance_id", "mcd_full", "mcd_masked", "stoi", "boundary_smoothness", "pesq")


@dataclass
class MetricReport:
    utterance_id: str
    mcd_full: float
    mcd_masked: float
    stoi: float | None
    boundary_smoothness: float | None
    pesq: float | None = None
    errors: list[str] = field(default_factory=list)

    def __post_init__(self):
        for name in ("mcd_full", "mcd_masked"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise DataError(f"{name} must be finite and >= 0, got {v}")
        if self.stoi is not None:
            if not math.isfinite(self.stoi):
                raise DataError("stoi is not finite")
            self.stoi = min(1.0, max(0.0, self.stoi))

    def row(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_COLUMNS}


def aggregate(reports: list[MetricReport]) -> dict:
    out = {"n": len(reports)}
    for col in REPORT_COLUMNS[1:]:
        vals = [getattr(r, col) for r in reports if getattr(r, col) is not None]
        out[col] = float(np.mean(vals)) if vals else None
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 6))
    return str(v)


def write_csv(path, reports: list[MetricReport]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow([_fmt(v) for v in r.row().values()])
    return path


def write_json(path, reports: list[MetricReport], meta: dict | None = None) -> Path:
    path = Path(path)
    doc = {
        "meta": meta or {},
        "aggregate": aggregate(reports),
        "utterances": [asdict(r) for r in reports],
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path
