"""Text-driven editing: word diff, mask planning, sampling and stitching; reconstruction benchmark."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .data_model import EditPlan, MelSpectrogram, PhonemeSequence, WordTokenization, is_silence, sample_phoneme_span
from .diffusion import sample
from .errors import DataError
from .frontend.embeddings import EmbeddingCache, EmbeddingProvider, embed_words, upsample_word_embeddings
from .frontend.g2p import load_lexicon, normalize_words, word_phonemes
from .ingestion.audio import AudioConfig, griffin_lim
from .ingestion.dataset import Dataset
from .metrics import MetricReport, PesqAdapter, aggregate, boundary_values, mcd, stoi
from .model import DiffEditorModel, Prepared, make_batch, prepare

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Planning
# ---------------------------------------------------------------------------


def common_prefix_suffix(a: list[str], b: list[str]) -> tuple[int, int]:
    """Longest common prefix length p and suffix length s with p + s <= min(len(a), len(b))."""
    p = 0
    while p < min(len(a), len(b)) and a[p] == b[p]:
        p += 1
    s = 0
    while s < min(len(a), len(b)) - p and a[-1 - s] == b[-1 - s]:
        s += 1
    return p, s


def plan_edit(
    original_text: str,
    edited_text: str,
    durations,
    phonemes: PhonemeSequence | tuple[str, ...],
    tokenization: WordTokenization,
    lexicon: dict | None = None,
) -> EditPlan:
    """Plan a single-region edit from the original aligned utterance to ``edited_text``.

    The longest common word prefix and suffix are kept; everything between is
    regenerated. Kept phonemes keep their aligned durations, inserted words
    get predicted ones. When one side of the diff is empty the region is
    widened over neighbouring pauses so there is room to generate.
    """
    orig = normalize_words(original_text)
    new = normalize_words(edited_text)
    if not orig or not new:
        raise DataError("empty text")
    if list(tokenization.words) != orig:
        raise DataError(f"original text {orig} does not match the aligned words {list(tokenization.words)}")
    phonemes = tuple(phonemes.phonemes if isinstance(phonemes, PhonemeSequence) else phonemes)
    durations = np.asarray(durations, dtype=np.int64)
    if durations.size != len(phonemes):
        raise DataError(f"{durations.size} durations for {len(phonemes)} phonemes")
    total = int(durations.sum())
    starts = np.concatenate([[0], np.cumsum(durations)])

    if orig == new:
        return EditPlan(
            tuple(orig), tuple(new), len(orig), 0, (0, total), (total, total),
            PhonemeSequence(phonemes), tokenization, durations.copy(),
            np.ones(len(phonemes), dtype=bool), is_noop=True,
        )

    p, s = common_prefix_suffix(orig, new)
    n = len(orig)
    spans = tokenization.spans
    if p + s < n:  # some original words are replaced or deleted
        a, b = spans[p][0], spans[n - s - 1][1]
    else:  # pure insertion between word p-1 and word p
        a = b = spans[p - 1][1] if p > 0 else spans[0][0]
    lexicon = lexicon if lexicon is not None else load_lexicon()
    ins_ph: list[str] = []
    ins_spans: list[tuple[int, int]] = []
    for w in new[p : len(new) - s]:
        ph = word_phonemes(w, lexicon)
        ins_spans.append((len(ins_ph), len(ins_ph) + len(ph)))
        ins_ph.extend(ph)

    if not ins_ph or a == b:
        while a > 0 and is_silence(phonemes[a - 1]):
            a -= 1
        while b < len(phonemes) and is_silence(phonemes[b]):
            b += 1
    pre = _run(phonemes, a, b, is_silence)
    post = _run(phonemes[::-1], len(phonemes) - b, len(phonemes) - a - pre, is_silence)
    if not ins_ph and pre + post == 0:
        # deletion between abutting words: regenerate the two neighbouring phonemes
        a, b = max(0, a - 1), min(len(phonemes), b + 1)
        pre, post = int(a < spans[p][0]), int(b > spans[n - s - 1][1])

    region = list(phonemes[a : a + pre]) + ins_ph + list(phonemes[b - post : b])
    region_dur = list(durations[a : a + pre]) + [-1] * len(ins_ph) + list(durations[b - post : b])
    truth = np.concatenate([np.ones(a + pre, bool), np.zeros(len(ins_ph), bool), np.ones(post + len(phonemes) - b, bool)])
    new_ph = tuple(phonemes[:a]) + tuple(region) + tuple(phonemes[b:])
    new_dur = np.concatenate([durations[:a], np.asarray(region_dur, dtype=np.int64), durations[b:]])
    shift = len(region) - (b - a)
    new_spans = list(spans[:p]) + [(a + pre + x, a + pre + y) for x, y in ins_spans]
    new_spans += [(x + shift, y + shift) for x, y in spans[n - s :]]
    tok = WordTokenization(tuple(new), tuple(new_spans))
    seq = PhonemeSequence(new_ph)
    tok.check_against(seq)
    return EditPlan(
        tuple(orig), tuple(new), p, s,
        (0, int(starts[a])), (int(starts[b]), total),
        seq, tok, new_dur, truth,
        new_region=(a, a + len(region)),
    )


def _run(seq, lo: int, hi: int, pred) -> int:
    """Length of the run of items satisfying ``pred`` starting at ``lo`` (stopping before ``hi``)."""
    k = lo
    while k < hi and pred(seq[k]):
        k += 1
    return k - lo


# ---------------------------------------------------------------------------
# Editing
# ---------------------------------------------------------------------------


@dataclass
class EditResult:
    mel: MelSpectrogram
    durations: np.ndarray  # durations used for the new phoneme sequence
    masked: tuple[int, int]  # generated frame interval in the output timeline
    report: dict = field(default_factory=dict)


def _word_rows(provider: EmbeddingProvider, tok: WordTokenization, n_phonemes: int, cache: EmbeddingCache | None) -> np.ndarray:
    words = cache.get(provider, tok.words) if cache is not None else embed_words(provider, tok.words)
    return upsample_word_embeddings(words, tok, n_phonemes).astype(np.float32)


def edit(
    mel,
    f0,
    plan: EditPlan,
    model: DiffEditorModel,
    provider: EmbeddingProvider,
    speaker: str,
    seed: int = 0,
    cache: EmbeddingCache | None = None,
) -> EditResult:
    """Regenerate the planned region of ``mel`` and stitch it between the kept frames."""
    t0 = time.perf_counter()
    data = mel.data if isinstance(mel, MelSpectrogram) else np.asarray(mel, dtype=np.float32)
    f0 = np.asarray(f0, dtype=np.float32)
    if f0.shape[0] != data.shape[0]:
        raise DataError(f"f0 has {f0.shape[0]} frames, mel has {data.shape[0]}")
    if plan.kept_suffix_frames[1] != data.shape[0]:
        raise DataError(f"plan covers {plan.kept_suffix_frames[1]} frames, mel has {data.shape[0]}")
    if plan.is_noop:
        out = MelSpectrogram(data.copy()) if not isinstance(mel, MelSpectrogram) else mel
        return EditResult(out, plan.durations.copy(), (data.shape[0], data.shape[0]), {"noop": True, "seed": seed})

    a, b = plan.new_region
    ph_ids = np.array([model_phoneme_id(p) for p in plan.new_phonemes.phonemes], dtype=np.int64)
    rows = _word_rows(provider, plan.new_tokenization, len(ph_ids), cache)
    spk = model.speaker_index(speaker)

    ph_masked = torch.from_numpy(~plan.duration_from_truth)[None]
    gt = torch.from_numpy(np.where(plan.durations < 0, 0, plan.durations))[None]
    with torch.no_grad():
        durs = model.condition.infer_durations(
            torch.from_numpy(ph_ids)[None], torch.from_numpy(rows)[None], gt, ph_masked
        )[0].numpy()
    t1 = time.perf_counter()

    pre_end, suf_start = plan.kept_prefix_frames[1], plan.kept_suffix_frames[0]
    n_region = int(durs[a:b].sum())
    n_new = pre_end + n_region + (data.shape[0] - suf_start)
    y = np.zeros((n_new, data.shape[1]), dtype=np.float32)
    y[:pre_end] = data[:pre_end]
    y[pre_end + n_region :] = data[suf_start:]
    f0_new = np.zeros(n_new, dtype=np.float32)
    f0_new[:pre_end] = f0[:pre_end]
    f0_new[pre_end + n_region :] = f0[suf_start:]

    item = Prepared("edit", ph_ids, rows, durs.astype(np.int64), y, f0_new, spk)
    batch = make_batch([item], [(a, b)])
    with torch.no_grad():
        cond = model.condition_for(batch, predict_pitch=True)
        gen = sample(model, model.schedule, cond.frames, batch.mel, batch.frame_masked, seed)[0].numpy()
    t2 = time.perf_counter()

    out = np.concatenate([data[:pre_end], gen[pre_end : pre_end + n_region], data[suf_start:]], axis=0)
    region = (pre_end, pre_end + n_region)
    jumps = _boundary_jumps(out, *region)
    report = {
        "noop": False,
        "seed": int(seed),
        "replaced_words": list(plan.replaced_words),
        "inserted_words": list(plan.inserted_words),
        "kept_prefix_words": plan.prefix_words,
        "kept_suffix_words": plan.suffix_words,
        "original_masked_frames": list(plan.masked_frames),
        "output_masked_frames": list(region),
        "output_frames": int(n_new),
        "boundary_jump": jumps,
        "original_median_jump": float(np.median(np.abs(np.diff(data, axis=0)).mean(axis=1))) if data.shape[0] > 1 else 0.0,
        "timing_s": {"durations": t1 - t0, "sampling": t2 - t1, "total": time.perf_counter() - t0},
    }
    if n_new == data.shape[0] and region == plan.masked_frames:
        try:
            report["boundary_smoothness"] = boundary_values(data, out, *region)
        except DataError:
            pass
    return EditResult(MelSpectrogram(out, getattr(mel, "sample_rate", 22050), getattr(mel, "hop_length", 256)), durs, region, report)


def model_phoneme_id(symbol: str) -> int:
    from .data_model import PHONEME_TO_ID

    return PHONEME_TO_ID[symbol]


def _boundary_jumps(out: np.ndarray, start: int, end: int) -> list[float]:
    """Band-mean |frame step| across each region edge of the output."""
    dy = np.abs(np.diff(out, axis=0)).mean(axis=1)
    rows = []
    if start >= 1 and start - 1 < dy.size:
        rows.append(float(dy[start - 1]))
    if end <= out.shape[0] - 1:
        rows.append(float(dy[end - 1]))
    return rows


# ---------------------------------------------------------------------------
# Reconstruction benchmark
# ---------------------------------------------------------------------------

ORACLE = "oracle"


def utterance_seed(seed: int, uid: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{uid}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFF


@dataclass
class BenchResult:
    reports: list[MetricReport]
    spans: dict[str, tuple[int, int]]
    skipped: dict[str, str]

    @property
    def aggregate(self) -> dict:
        return aggregate(self.reports)


def reconstruct(model, item: Prepared, span: tuple[int, int], seed: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Regenerate the frames of a phoneme span with ground-truth durations."""
    batch = make_batch([item], [span])
    fm = batch.frame_masked[0].numpy()
    idx = np.flatnonzero(fm)
    region = (int(idx[0]), int(idx[-1]) + 1)
    if model == ORACLE:
        return item.mel.copy(), region
    with torch.no_grad():
        cond = model.condition_for(batch, predict_pitch=True)
        y = batch.mel.masked_fill(batch.frame_masked[..., None], 0.0)
        out = sample(model, model.schedule, cond.frames, y, batch.frame_masked, seed)[0].numpy()
    out = np.where(fm[:, None], out, item.mel)
    return out.astype(np.float32), region


def bench_reconstruct(
    dataset: Dataset,
    model: DiffEditorModel | str,
    mask_ratio_range: tuple[float, float] = (0.2, 0.6),
    seed: int = 0,
    provider: EmbeddingProvider | None = None,
    cache: EmbeddingCache | None = None,
    griffin_lim_iters: int = 32,
    dtw: bool = False,
    pesq: PesqAdapter | None = None,
) -> BenchResult:
    """Mask a random contiguous phoneme span per utterance, regenerate it, and score it.

    ``model`` may be the string ``"oracle"``, which copies the ground truth.
    Each utterance's span and noise come from a seed derived from (seed, id),
    so results do not depend on evaluation order.
    """
    cfg: AudioConfig = dataset.audio_config
    reports, spans, skipped = [], {}, {}
    for utt in dataset:
        useed = utterance_seed(seed, utt.id)
        rng = np.random.default_rng(useed)
        span = sample_phoneme_span(utt.durations, tuple(mask_ratio_range), rng)
        if span is None:
            log.info("skipping %s: no phoneme span covers %s of its frames", utt.id, mask_ratio_range)
            skipped[utt.id] = "too short for the mask ratio range"
            continue
        if model == ORACLE:
            item = Prepared(utt.id, np.zeros(len(utt.phonemes), np.int64), np.zeros((len(utt.phonemes), 1), np.float32),
                            np.asarray(utt.durations), utt.mel, utt.f0, 0)
        else:
            item = prepare(utt, model, provider, cache)
        out, (s, e) = reconstruct(model, item, span, useed)
        if out.shape != utt.mel.shape:
            raise DataError(f"{utt.id}: reconstruction changed the frame count")
        errors = []
        ref_wave = griffin_lim(utt.mel, cfg, griffin_lim_iters)
        test_wave = ref_wave if model == ORACLE else griffin_lim(out, cfg, griffin_lim_iters)
        try:
            st = stoi(ref_wave, test_wave, cfg.sample_rate)
        except DataError as exc:
            st, _ = None, errors.append(f"stoi: {exc}")
        try:
            bs = float(np.mean(boundary_values(utt.mel, out, s, e)))
        except DataError as exc:
            bs, _ = None, errors.append(f"boundary_smoothness: {exc}")
        pq = None
        if pesq is not None:
            res = pesq(ref_wave, test_wave, cfg.sample_rate)
            pq = res.score
            if res.error:
                errors.append(f"pesq: {res.error}")
        reports.append(
            MetricReport(
                utterance_id=utt.id,
                mcd_full=mcd(utt.mel, out, frame_aligned=not dtw),
                mcd_masked=mcd(utt.mel[s:e], out[s:e], frame_aligned=not dtw),
                stoi=st,
                boundary_smoothness=bs,
                pesq=pq,
                errors=errors,
            )
        )
        spans[utt.id] = span
    return BenchResult(reports, spans, skipped)
