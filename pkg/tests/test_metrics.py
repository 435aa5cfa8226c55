import csv
import json
import math
import os
import stat
import sys
from pathlib import Path

import numpy as np
import pytest

from diffeditor.data_model import FrameMask
from diffeditor.errors import DataError
from diffeditor.metrics import (
    MetricReport,
    PesqAdapter,
    aggregate,
    boundary_smoothness,
    boundary_values,
    mcd,
    mel_cepstrum,
    stoi,
    third_octave_bands,
    write_csv,
    write_json,
)

sys.path.insert(0, str(Path(__file__).parent))
from stoi_signals import FS, cases  # noqa: E402

FIX = Path(__file__).parent / "fixtures"


def dct_basis(n_mels):
    """Orthonormal DCT-II basis rows written out from the definition."""
    k = np.arange(n_mels)[:, None]
    m = np.arange(n_mels)[None, :]
    basis = np.cos(np.pi * k * (2 * m + 1) / (2 * n_mels))
    basis[0] *= math.sqrt(1 / n_mels)
    basis[1:] *= math.sqrt(2 / n_mels)
    return basis


def test_mel_cepstrum_matches_definition(rng):
    mel = rng.standard_normal((4, 80))
    np.testing.assert_allclose(mel_cepstrum(mel), (mel @ dct_basis(80).T)[:, 1:14], atol=1e-12)


def test_mcd_closed_form():
    basis = dct_basis(80)
    ref = np.zeros((5, 80))
    test = ref + basis[1]  # unit change of c1 in every frame
    want = 10 / math.log(10) * math.sqrt(2)
    assert abs(mcd(ref, test) - want) < 1e-6
    assert abs(want - 6.1418) < 1e-4


def test_mcd_ignores_c0_and_high_coeffs():
    basis = dct_basis(80)
    ref = np.zeros((3, 80))
    assert mcd(ref, ref + 5 * basis[0] + 3 * basis[20]) == pytest.approx(0.0, abs=1e-9)


def test_mcd_identity_symmetry(rng):
    a, b = rng.standard_normal((2, 10, 80))
    assert mcd(a, a) == 0.0
    assert mcd(a, b) == pytest.approx(mcd(b, a))
    assert mcd(a, b, frame_aligned=False) <= mcd(a, b) + 1e-12


def test_mcd_dtw_handles_time_stretch(rng):
    a = rng.standard_normal((12, 80))
    stretched = np.repeat(a, 2, axis=0)
    assert mcd(a, stretched, frame_aligned=False) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(DataError):
        mcd(a, stretched)


def test_mcd_errors(rng):
    with pytest.raises(DataError):
        mcd(np.zeros((0, 80)), np.zeros((0, 80)))
    with pytest.raises(DataError):
        mcd(np.zeros((3, 80)), np.zeros((3, 40)))


REFERENCE = json.loads((FIX / "stoi_reference.json").read_text())


@pytest.mark.parametrize("name", sorted(REFERENCE))
def test_stoi_matches_reference_fixtures(name):
    ref, test = cases()[name]
    assert stoi(ref, test, FS) == pytest.approx(REFERENCE[name], abs=1e-6)


def test_stoi_self_and_noise():
    ref, _ = cases()["self"]
    assert stoi(ref, ref, FS) >= 0.99
    _, noise = cases()["white_noise"]
    assert stoi(ref, noise, FS) < 0.2


def test_stoi_scale_invariant():
    ref, test = cases()["snr_5db"]
    assert stoi(ref, 3.0 * test, FS) == pytest.approx(stoi(ref, test, FS), abs=1e-9)


def test_stoi_resamples():
    from diffeditor.ingestion.audio import resample

    ref, test = cases()["snr_0db"]
    up = stoi(resample(ref, FS, 20000), resample(test, FS, 20000), 20000)
    assert up == pytest.approx(REFERENCE["snr_0db"], abs=0.02)


def test_stoi_errors():
    with pytest.raises(DataError):
        stoi(np.ones(100), np.ones(100), FS)
    with pytest.raises(DataError):
        stoi(np.ones(30000), np.ones(29000), FS)


def test_third_octave_bands_shape():
    obm = third_octave_bands()
    assert obm.shape == (15, 257)
    assert np.all(obm.sum(axis=1) >= 1)


def test_boundary_smoothness_examples():
    y = np.zeros((6, 2))
    y_hat = y.copy()
    y_hat[2:4] = 1.0  # region [2, 4): jump of 1 entering and leaving
    assert boundary_values(y, y_hat, 2, 4) == [1.0, 1.0]
    assert boundary_smoothness(y, y_hat, (2, 4)) == 1.0
    assert boundary_smoothness(y, y_hat, FrameMask(6, 2, 4)) == 1.0
    vec = np.zeros(6, bool)
    vec[2:4] = True
    assert boundary_smoothness(y, y_hat, vec) == 1.0
    # region touching the start has a single boundary row
    assert boundary_values(y, y_hat, 0, 2) == [1.0]
    assert boundary_smoothness(y, y, (1, 3)) == 0.0


def test_boundary_smoothness_errors():
    y = np.zeros((4, 2))
    with pytest.raises(DataError):
        boundary_values(y, y, 0, 4)
    with pytest.raises(DataError):
        boundary_values(y, y, 3, 2)
    with pytest.raises(DataError):
        boundary_values(y, np.zeros((5, 2)), 1, 2)


def _script(tmp_path, body):
    path = tmp_path / "fakepesq"
    path.write_text(f"#!{sys.executable}\nimport sys\n{body}\n")
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return str(path)


def test_pesq_adapter_parses_score(tmp_path):
    body = "import os; assert os.path.exists(sys.argv[1]) and os.path.exists(sys.argv[2]); print('P.862 Prediction (Raw MOS, MOS-LQO): = 1.76')"
    res = PesqAdapter(_script(tmp_path, body))(np.ones(1600), np.ones(1600), 16000)
    assert res.score == 1.76 and res.error is None


def test_pesq_adapter_malformed_output(tmp_path):
    res = PesqAdapter(_script(tmp_path, "print('no score here')"))(np.ones(800), np.ones(800), 16000)
    assert res.score is None and "unparseable" in res.error


def test_pesq_adapter_failure_exit(tmp_path):
    res = PesqAdapter(_script(tmp_path, "sys.exit(3)"))(np.ones(800), np.ones(800), 16000)
    assert res.score is None and "exited with 3" in res.error


def test_pesq_adapter_missing_tool():
    res = PesqAdapter("definitely-not-a-pesq-binary")(np.ones(10), np.ones(10), 16000)
    assert res.score is None and "not found" in res.error
    assert PesqAdapter(None)(np.ones(10), np.ones(10), 16000).score is None


def test_report_validation_and_outputs(tmp_path):
    r1 = MetricReport("a", 1.0, 2.0, 1.2, 0.5)
    r2 = MetricReport("b", 3.0, 4.0, -0.3, None, pesq=2.5)
    assert r1.stoi == 1.0 and r2.stoi == 0.0
    with pytest.raises(DataError):
        MetricReport("c", float("nan"), 1.0, None, None)
    with pytest.raises(DataError):
        MetricReport("c", -1.0, 1.0, None, None)
    agg = aggregate([r1, r2])
    assert agg == {"n": 2, "mcd_full": 2.0, "mcd_masked": 3.0, "stoi": 0.5, "boundary_smoothness": 0.5, "pesq": 2.5}
    rows = list(csv.DictReader(write_csv(tmp_path / "m.csv", [r1, r2]).open()))
    assert rows[1]["boundary_smoothness"] == "" and rows[1]["pesq"] == "2.5"
    doc = json.loads(write_json(tmp_path / "m.json", [r1, r2], {"seed": 1}).read_text())
    assert doc["meta"] == {"seed": 1} and doc["aggregate"]["n"] == 2
