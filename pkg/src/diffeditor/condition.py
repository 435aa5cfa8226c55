"""Condition construction: phoneme encoder, masked variance predictors,
length regulation, word/phoneme fusion and the additive condition stream."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data_model import INVENTORY, PHONEME_TO_ID, PhonemeSequence
from .errors import DataError
from .frontend.embeddings import WordProjection

F0_MIN = 65.0
F0_MAX = 550.0


class FusionStrategy(str, enum.Enum):
    PRE_PREDICTOR = "pre_predictor"
    CONDITION_CONCAT = "condition_concat"
    POST_PREDICTOR = "post_predictor"


# ---------------------------------------------------------------------------
# Length regulation
# ---------------------------------------------------------------------------


def length_regulate(rows, durations):
    """Repeat row i ``durations[i]`` times. Works on numpy arrays and torch tensors."""
    if len(rows) != len(durations):
        raise DataError(f"{len(rows)} rows but {len(durations)} durations")
    if isinstance(rows, torch.Tensor):
        d = torch.as_tensor(durations, dtype=torch.long, device=rows.device)
        if bool((d < 0).any()):
            raise DataError("negative duration")
        return torch.repeat_interleave(rows, d, dim=0)
    d = np.asarray(durations, dtype=np.int64)
    if np.any(d < 0):
        raise DataError("negative duration")
    return np.repeat(np.asarray(rows), d, axis=0)


def regulate_batch(rows: torch.Tensor, durations: torch.Tensor, n_frames: int) -> torch.Tensor:
    """Batched length regulation into a zero-padded (B, n_frames, d) tensor."""
    bsz, n_ph, dim = rows.shape
    index = frame_to_phoneme(durations, n_frames)  # n_ph marks padding
    padded = torch.cat([rows, rows.new_zeros(bsz, 1, dim)], dim=1)
    return torch.gather(padded, 1, index[..., None].expand(bsz, n_frames, dim))


def frame_to_phoneme(durations: torch.Tensor, n_frames: int) -> torch.Tensor:
    """(B, n_frames) phoneme index per frame; frames past the total get index P."""
    d = durations.detach().long().cpu()
    if bool((d < 0).any()):
        raise DataError("negative duration")
    bsz, n_ph = d.shape
    ends = torch.cumsum(d, dim=1)
    frames = torch.arange(n_frames)[None, :].expand(bsz, n_frames)
    index = torch.searchsorted(ends, frames.contiguous(), right=True)
    return index.clamp(max=n_ph).to(durations.device)


# ---------------------------------------------------------------------------
# Pitch quantiser
# ---------------------------------------------------------------------------


def quantize_f0(f0, n_bins: int = 256, f_min: float = F0_MIN, f_max: float = F0_MAX):
    """Log-spaced bins over [f_min, f_max]; 0 Hz (unvoiced) maps to bin ``n_bins``."""
    is_t = isinstance(f0, torch.Tensor)
    x = f0.detach().double().cpu().numpy() if is_t else np.asarray(f0, dtype=np.float64)
    voiced = x > 0
    pos = (np.log(np.clip(np.where(voiced, x, f_min), f_min, f_max)) - math.log(f_min)) / (
        math.log(f_max) - math.log(f_min)
    )
    bins = np.where(voiced, np.clip(np.round(pos * (n_bins - 1)), 0, n_bins - 1), n_bins).astype(np.int64)
    return torch.from_numpy(bins).to(f0.device) if is_t else bins


# ---------------------------------------------------------------------------
# Modules
# ---------------------------------------------------------------------------


def sinusoidal_table(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float32)[:, None]
    freq = torch.exp(-math.log(10000.0) * torch.arange(0, d, 2, dtype=torch.float32) / d)
    table = torch.zeros(n, d)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq[: d // 2])
    return table


class PhonemeEncoder(nn.Module):
    def __init__(self, d: int = 192, layers: int = 4, heads: int = 2, ff: int = 768, dropout: float = 0.1):
        super().__init__()
        self.d = d
        self.embed = nn.Embedding(len(INVENTORY), d, padding_idx=0)
        nn.init.normal_(self.embed.weight, 0.0, d**-0.5)
        with torch.no_grad():
            self.embed.weight[0].zero_()
        self.register_buffer("pos", sinusoidal_table(1024, d), persistent=False)
        layer = nn.TransformerEncoderLayer(d, heads, ff, dropout, batch_first=True, norm_first=True)
        self.stack = nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(d)

    def forward(self, ids: torch.Tensor, pad: torch.Tensor | None = None) -> torch.Tensor:
        """ids (B, P) -> (B, P, d); ``pad`` marks padding positions."""
        if pad is None:
            pad = ids == 0
        x = self.embed(ids) * math.sqrt(self.d) + self.pos[: ids.shape[1]]
        x = self.stack(x, src_key_padding_mask=pad)
        return self.norm(x).masked_fill(pad[..., None], 0.0)


class VariancePredictor(nn.Module):
    """Two conv layers (ReLU, LayerNorm, dropout) and a linear head."""

    def __init__(self, d_in: int, width: int = 256, kernel: int = 3, dropout: float = 0.1, d_out: int = 1):
        super().__init__()
        self.convs = nn.ModuleList(
            [nn.Conv1d(d_in, width, kernel, padding=kernel // 2), nn.Conv1d(width, width, kernel, padding=kernel // 2)]
        )
        self.norms = nn.ModuleList([nn.LayerNorm(width), nn.LayerNorm(width)])
        self.drop = nn.Dropout(dropout)
        self.head = nn.Linear(width, d_out)

    def forward(self, x: torch.Tensor, pad: torch.Tensor) -> torch.Tensor:
        keep = (~pad)[..., None].to(x.dtype)
        h = x * keep
        for conv, norm in zip(self.convs, self.norms):
            h = conv(h.transpose(1, 2)).transpose(1, 2)
            h = self.drop(norm(torch.relu(h))) * keep
        return self.head(h) * keep


class MaskedDurationPredictor(nn.Module):
    """Predicts log(1 + frames) per phoneme; known durations outside the mask are fed as context."""

    def __init__(self, d: int, width: int = 256, kernel: int = 3, dropout: float = 0.1):
        super().__init__()
        self.context = nn.Linear(2, d)
        self.net = VariancePredictor(d, width, kernel, dropout, 1)

    def forward(self, x, gt_durations, masked, pad):
        known = torch.log1p(gt_durations.to(x.dtype)) * (~masked).to(x.dtype)
        ctx = self.context(torch.stack([known, masked.to(x.dtype)], dim=-1))
        return self.net(x + ctx, pad)[..., 0]


class MaskedPitchPredictor(nn.Module):
    """Per-frame log-F0 and a voicing logit."""

    def __init__(self, d: int, width: int = 256, kernel: int = 3, dropout: float = 0.1):
        super().__init__()
        self.net = VariancePredictor(d, width, kernel, dropout, 2)

    def forward(self, x, pad):
        out = self.net(x, pad)
        return out[..., 0], out[..., 1]


class PitchEmbedder(nn.Module):
    def __init__(self, d: int = 192, n_bins: int = 256):
        super().__init__()
        self.n_bins = n_bins
        self.table = nn.Embedding(n_bins + 1, d)

    def forward(self, bins: torch.Tensor) -> torch.Tensor:
        return self.table(bins)


class MaskedMelEmbedder(nn.Module):
    """Linear n_mels -> d over the (normalised) mel with masked frames zeroed first."""

    def __init__(self, n_mels: int = 80, d: int = 192):
        super().__init__()
        self.proj = nn.Linear(n_mels, d)

    def forward(self, mel_norm: torch.Tensor, masked: torch.Tensor) -> torch.Tensor:
        return self.proj(mel_norm.masked_fill(masked[..., None], 0.0))


@dataclass
class PredictorOutputs:
    log_durations: torch.Tensor  # (B, P)
    log_f0: torch.Tensor  # (B, T)
    voicing_logit: torch.Tensor  # (B, T)


@dataclass
class ConditionBundle:
    frames: torch.Tensor  # (B, T, d_model)
    masked: torch.Tensor  # (B, T) bool
    pitch_bins: torch.Tensor  # (B, T)
    speaker: torch.Tensor  # (B,)
    durations: torch.Tensor  # (B, P) durations actually used
    predictions: PredictorOutputs | None = None


class ConditionBuilder(nn.Module):
    def __init__(
        self,
        n_speakers: int,
        d: int = 192,
        d_word: int = 768,
        n_mels: int = 80,
        strategy: FusionStrategy | str = FusionStrategy.POST_PREDICTOR,
        encoder_layers: int = 4,
        encoder_heads: int = 2,
        encoder_ff: int = 768,
        predictor_width: int = 256,
        predictor_kernel: int = 3,
        dropout: float = 0.1,
        pitch_bins: int = 256,
        use_word_embeddings: bool = True,
    ):
        super().__init__()
        self.strategy = FusionStrategy(strategy)
        self.d = d
        self.use_word_embeddings = use_word_embeddings
        self.encoder = PhonemeEncoder(d, encoder_layers, encoder_heads, encoder_ff, dropout)
        self.word_proj = WordProjection(d_word, d)
        if self.strategy is not FusionStrategy.CONDITION_CONCAT:
            self.hybrid = nn.Linear(2 * d, d)
        self.duration_predictor = MaskedDurationPredictor(d, predictor_width, predictor_kernel, dropout)
        self.pitch_predictor = MaskedPitchPredictor(d, predictor_width, predictor_kernel, dropout)
        self.pitch_embed = PitchEmbedder(d, pitch_bins)
        self.speakers = nn.Embedding(max(1, n_speakers), d)
        self.mel_embed = MaskedMelEmbedder(n_mels, d)

    @property
    def d_condition(self) -> int:
        return 2 * self.d if self.strategy is FusionStrategy.CONDITION_CONCAT else self.d

    # -- individual stages -------------------------------------------------

    def encode_phonemes(self, ids: torch.Tensor, pad: torch.Tensor | None = None) -> torch.Tensor:
        return self.encoder(ids, pad)

    def project_words(self, word_rows: torch.Tensor) -> torch.Tensor:
        e_word = self.word_proj(word_rows)
        if not self.use_word_embeddings:
            e_word = torch.zeros_like(e_word)
        return e_word

    def fuse(self, e_phoneme: torch.Tensor, e_word: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (predictor input, phoneme-level stream that gets length-regulated)."""
        if e_phoneme.shape[:-1] != e_word.shape[:-1]:
            raise DataError(f"phoneme rows {tuple(e_phoneme.shape)} vs word rows {tuple(e_word.shape)}")
        if self.strategy is FusionStrategy.CONDITION_CONCAT:
            return e_phoneme, e_phoneme
        hybrid = self.hybrid(torch.cat([e_phoneme, e_word], dim=-1))
        if self.strategy is FusionStrategy.PRE_PREDICTOR:
            return hybrid, hybrid
        return e_phoneme, hybrid

    def _check_speaker(self, speaker: torch.Tensor) -> None:
        if bool((speaker < 0).any()) or bool((speaker >= self.speakers.num_embeddings).any()):
            raise DataError(f"unknown speaker index {speaker.tolist()}")

    def assemble(self, e_hybrid_frames, e_pitch, speaker, e_masked_mel, e_word_frames=None) -> torch.Tensor:
        if not (e_hybrid_frames.shape == e_pitch.shape == e_masked_mel.shape):
            raise DataError("condition streams differ in length")
        self._check_speaker(speaker)
        c = e_hybrid_frames + e_pitch + self.speakers(speaker)[:, None, :] + e_masked_mel
        if self.strategy is FusionStrategy.CONDITION_CONCAT:
            if e_word_frames is None:
                raise DataError("condition_concat needs word frames")
            c = torch.cat([c, e_word_frames], dim=-1)
        return c

    # -- full pass ---------------------------------------------------------

    def infer_durations(self, ph_ids, word_rows, gt_durations, ph_masked) -> torch.Tensor:
        """Ground truth on unmasked phonemes, rounded predictions (>= 1 frame) on masked ones."""
        ph_pad = ph_ids == 0
        e_ph = self.encode_phonemes(ph_ids, ph_pad)
        pred_in, _ = self.fuse(e_ph, self.project_words(word_rows))
        log_dur = self.duration_predictor(pred_in, gt_durations, ph_masked, ph_pad)
        pred = torch.clamp(torch.round(torch.expm1(log_dur)), min=1).long()
        return torch.where(ph_masked, pred, gt_durations.long()).masked_fill(ph_pad, 0)

    def forward(
        self,
        ph_ids: torch.Tensor,  # (B, P)
        word_rows: torch.Tensor,  # (B, P, d_word) upsampled word vectors
        durations: torch.Tensor,  # (B, P) frames used by the length regulator
        ph_masked: torch.Tensor,  # (B, P) bool
        mel_norm: torch.Tensor,  # (B, T, n_mels) normalised mel; content under the mask is ignored
        frame_masked: torch.Tensor,  # (B, T) bool
        f0: torch.Tensor,  # (B, T) Hz; ignored on masked frames when predict_pitch
        speaker: torch.Tensor,  # (B,)
        predict_pitch: bool = False,
        pitch_jitter: torch.Tensor | None = None,  # (B, T) integer bin offsets for voiced frames
    ) -> ConditionBundle:
        """Build condition C.

        Training teacher-forces ground-truth pitch everywhere; editing swaps in
        the pitch predictor's output on masked frames (``predict_pitch``).
        """
        ph_pad = ph_ids == 0
        n_frames = mel_norm.shape[1]
        durations = durations.long().masked_fill(ph_pad, 0)
        if bool((durations.sum(dim=1) > n_frames).any()):
            raise DataError(f"durations exceed the {n_frames}-frame mel")
        if frame_masked.shape != mel_norm.shape[:2]:
            raise DataError("frame mask and mel differ in length")
        e_ph = self.encode_phonemes(ph_ids, ph_pad)
        e_word = self.project_words(word_rows)
        pred_in, hybrid = self.fuse(e_ph, e_word)

        log_dur = self.duration_predictor(pred_in, durations, ph_masked, ph_pad)
        frame_pad = torch.arange(n_frames, device=ph_ids.device)[None, :] >= durations.sum(dim=1, keepdim=True)
        self._check_speaker(speaker)
        e_mm = self.mel_embed(mel_norm, frame_masked) * (~frame_pad)[..., None]
        spk = self.speakers(speaker)[:, None, :]
        pitch_in = regulate_batch(pred_in, durations, n_frames) + e_mm + spk
        log_f0, vuv = self.pitch_predictor(pitch_in, frame_pad)

        bins = quantize_f0(f0, self.pitch_embed.n_bins)
        if pitch_jitter is not None:
            n = self.pitch_embed.n_bins
            bins = torch.where(bins < n, (bins + pitch_jitter).clamp(0, n - 1), bins)
        if predict_pitch:
            pred_f0 = torch.where(vuv > 0, torch.exp(log_f0), torch.zeros_like(log_f0))
            bins = torch.where(frame_masked, quantize_f0(pred_f0, self.pitch_embed.n_bins), bins)
        e_pitch = self.pitch_embed(bins) * (~frame_pad)[..., None]
        h_frames = regulate_batch(hybrid, durations, n_frames)
        w_frames = regulate_batch(e_word, durations, n_frames) if self.strategy is FusionStrategy.CONDITION_CONCAT else None
        cond = self.assemble(h_frames, e_pitch, speaker, e_mm, w_frames) * (~frame_pad)[..., None]
        return ConditionBundle(
            frames=cond,
            masked=frame_masked,
            pitch_bins=bins,
            speaker=speaker,
            durations=durations,
            predictions=PredictorOutputs(log_dur, log_f0, vuv),
        )


def phoneme_ids(seq: PhonemeSequence | list[str]) -> np.ndarray:
    phonemes = seq.phonemes if isinstance(seq, PhonemeSequence) else seq
    try:
        return np.array([PHONEME_TO_ID[p] for p in phonemes], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"unknown phoneme {exc.args[0]!r}") from None
