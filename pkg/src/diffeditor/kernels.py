"""Hot numeric loops with a numba path and a pure-numpy fallback.

Set ``DIFFEDITOR_DISABLE_NUMBA=1`` before import to force the numpy path.
Both paths are kept importable as ``*_numpy`` / ``*_numba`` so tests and the
benchmark can compare them directly.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("DIFFEDITOR_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError("disabled by DIFFEDITOR_DISABLE_NUMBA")
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


# ---------------------------------------------------------------------------
# Dynamic time warping
# ---------------------------------------------------------------------------


def _dtw_accumulate_py(dist):
    n, m = dist.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = dist[i - 1, j - 1] + best
    return acc


def dtw_accumulate_numpy(dist: np.ndarray) -> np.ndarray:
    """Accumulated-cost table, vectorised along anti-diagonals."""
    dist = np.asarray(dist, dtype=np.float64)
    n, m = dist.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for k in range(2, n + m + 1):
        i = np.arange(max(1, k - m), min(n, k - 1) + 1)
        j = k - i
        best = np.minimum(np.minimum(acc[i - 1, j - 1], acc[i - 1, j]), acc[i, j - 1])
        acc[i, j] = dist[i - 1, j - 1] + best
    return acc


_dtw_accumulate_jit = njit(cache=True)(_dtw_accumulate_py)


def dtw_accumulate_numba(dist: np.ndarray) -> np.ndarray:
    return _dtw_accumulate_jit(np.ascontiguousarray(dist, dtype=np.float64))


def dtw_backtrack(acc: np.ndarray) -> list[tuple[int, int]]:
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    path = [(i - 1, j - 1)]
    while i > 1 or j > 1:
        steps = ((acc[i - 1, j - 1], i - 1, j - 1), (acc[i - 1, j], i - 1, j), (acc[i, j - 1], i, j - 1))
        _, i, j = min(steps, key=lambda s: s[0])
        path.append((i - 1, j - 1))
    path.reverse()
    return path


# ---------------------------------------------------------------------------
# Autocorrelation pitch search
# ---------------------------------------------------------------------------


def _pick_peak(r, min_lag, rel_threshold):
    # first local maximum within rel_threshold of the global maximum avoids
    # subharmonic (octave-down) picks
    n = r.shape[0]
    top = -np.inf
    for k in range(n):
        if r[k] > top:
            top = r[k]
    if top <= 0.0:
        return 0.0, 0.0
    for k in range(1, n - 1):
        if r[k] >= r[k - 1] and r[k] >= r[k + 1] and r[k] >= rel_threshold * top:
            a, b, c = r[k - 1], r[k], r[k + 1]
            denom = a - 2.0 * b + c
            shift = 0.0
            if denom != 0.0:
                shift = 0.5 * (a - c) / denom
                if shift > 0.5:
                    shift = 0.5
                elif shift < -0.5:
                    shift = -0.5
            return min_lag + k + shift, b - 0.25 * (a - c) * shift
    k = int(np.argmax(r))
    return float(min_lag + k), float(r[k])


def _autocorr_frames_py(frames, min_lag, max_lag, rel_threshold):
    n_frames, width = frames.shape
    n_lags = max_lag - min_lag + 1
    lags = np.zeros(n_frames)
    peaks = np.zeros(n_frames)
    r = np.zeros(n_lags)
    for f in range(n_frames):
        x = frames[f]
        for li in range(n_lags):
            tau = min_lag + li
            num = 0.0
            e0 = 0.0
            e1 = 0.0
            for n in range(width - tau):
                num += x[n] * x[n + tau]
                e0 += x[n] * x[n]
                e1 += x[n + tau] * x[n + tau]
            den = np.sqrt(e0 * e1)
            r[li] = num / den if den > 0.0 else 0.0
        lag, peak = _pick_peak(r, min_lag, rel_threshold)
        lags[f] = lag
        peaks[f] = peak
    return lags, peaks


def autocorr_frames_numpy(
    frames: np.ndarray, min_lag: int, max_lag: int, rel_threshold: float = 0.9
) -> tuple[np.ndarray, np.ndarray]:
    """Normalised autocorrelation peak (lag, height) per frame.

    ``frames`` is (n_frames, width). Lags are searched in [min_lag, max_lag];
    the returned lag is parabolic-interpolated.
    """
    frames = np.asarray(frames, dtype=np.float64)
    n_frames, width = frames.shape
    taus = np.arange(min_lag, max_lag + 1)
    r = np.zeros((n_frames, taus.size))
    sq = frames * frames
    csum = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(sq, axis=1)], axis=1)
    for li, tau in enumerate(taus):
        num = np.einsum("fn,fn->f", frames[:, : width - tau], frames[:, tau:])
        e0 = csum[:, width - tau]
        e1 = csum[:, width] - csum[:, tau]
        den = np.sqrt(e0 * e1)
        r[:, li] = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    lags = np.zeros(n_frames)
    peaks = np.zeros(n_frames)
    for f in range(n_frames):
        lags[f], peaks[f] = _pick_peak(r[f], min_lag, rel_threshold)
    return lags, peaks


_pick_peak_jit = njit(cache=True)(_pick_peak)


@njit(cache=True)
def _autocorr_frames_jit(frames, min_lag, max_lag, rel_threshold):
    n_frames, width = frames.shape
    n_lags = max_lag - min_lag + 1
    lags = np.zeros(n_frames)
    peaks = np.zeros(n_frames)
    r = np.zeros(n_lags)
    for f in range(n_frames):
        x = frames[f]
        for li in range(n_lags):
            tau = min_lag + li
            num = 0.0
            e0 = 0.0
            e1 = 0.0
            for n in range(width - tau):
                num += x[n] * x[n + tau]
                e0 += x[n] * x[n]
                e1 += x[n + tau] * x[n + tau]
            den = np.sqrt(e0 * e1)
            r[li] = num / den if den > 0.0 else 0.0
        lag, peak = _pick_peak_jit(r, min_lag, rel_threshold)
        lags[f] = lag
        peaks[f] = peak
    return lags, peaks


def autocorr_frames_numba(
    frames: np.ndarray, min_lag: int, max_lag: int, rel_threshold: float = 0.9
) -> tuple[np.ndarray, np.ndarray]:
    return _autocorr_frames_jit(
        np.ascontiguousarray(frames, dtype=np.float64), int(min_lag), int(max_lag), float(rel_threshold)
    )


if NUMBA_AVAILABLE:
    dtw_accumulate = dtw_accumulate_numba
    autocorr_frames = autocorr_frames_numba
else:
    dtw_accumulate = dtw_accumulate_numpy
    autocorr_frames = autocorr_frames_numpy

BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"
