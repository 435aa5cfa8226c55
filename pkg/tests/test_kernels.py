import os
import subprocess
import sys

import numpy as np
import pytest

from diffeditor import kernels


def brute_dtw(dist):
    n, m = dist.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = dist[i - 1, j - 1] + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return acc


@pytest.mark.parametrize("shape", [(1, 1), (3, 7), (12, 5), (20, 20)])
def test_dtw_paths_agree_with_bruteforce(shape, rng):
    dist = rng.random(shape)
    ref = brute_dtw(dist)
    np.testing.assert_allclose(kernels.dtw_accumulate_numpy(dist), ref)
    np.testing.assert_allclose(kernels.dtw_accumulate_numba(dist), ref)


def test_dtw_backtrack_is_monotone_and_complete(rng):
    dist = rng.random((9, 13))
    path = kernels.dtw_backtrack(kernels.dtw_accumulate(dist))
    assert path[0] == (0, 0) and path[-1] == (8, 12)
    for (i0, j0), (i1, j1) in zip(path, path[1:]):
        assert (i1 - i0, j1 - j0) in {(1, 0), (0, 1), (1, 1)}
    assert np.isclose(sum(dist[i, j] for i, j in path), kernels.dtw_accumulate(dist)[-1, -1])


def test_dtw_identity_is_diagonal():
    x = np.arange(6.0)
    dist = np.abs(x[:, None] - x[None, :])
    assert kernels.dtw_backtrack(kernels.dtw_accumulate(dist)) == [(i, i) for i in range(6)]


def test_autocorr_backends_agree(rng):
    sr = 22050
    t = np.arange(1024) / sr
    frames = np.stack([np.sin(2 * np.pi * f * t) for f in (110.0, 220.0, 330.0)] + [rng.standard_normal(1024)])
    frames = frames - frames.mean(axis=1, keepdims=True)
    l1, p1 = kernels.autocorr_frames_numpy(frames, 40, 339)
    l2, p2 = kernels.autocorr_frames_numba(frames, 40, 339)
    np.testing.assert_allclose(l1, l2, atol=1e-9)
    np.testing.assert_allclose(p1, p2, atol=1e-9)
    assert abs(sr / l1[1] - 220.0) < 1.0


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, DIFFEDITOR_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from diffeditor import kernels; print(kernels.BACKEND, kernels.NUMBA_AVAILABLE)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.split() == ["numpy", "False"]
