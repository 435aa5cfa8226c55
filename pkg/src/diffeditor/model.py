"""The full editor model, batching, and checkpoint I/O."""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .condition import ConditionBuilder, phoneme_ids
from .config import RunConfig, code_version
from .diffusion import Denoiser, make_schedule
from .errors import ConfigError, DataError
from .frontend.embeddings import EmbeddingCache, EmbeddingProvider, make_provider, upsample_word_embeddings
from .ingestion.dataset import Utterance


@dataclass
class Prepared:
    """One utterance in model-ready numpy form."""

    id: str
    ph_ids: np.ndarray  # (P,)
    word_rows: np.ndarray  # (P, d_word)
    durations: np.ndarray  # (P,)
    mel: np.ndarray  # (T, n_mels)
    f0: np.ndarray  # (T,)
    speaker: int

    @property
    def n_frames(self) -> int:
        return self.mel.shape[0]


@dataclass
class Batch:
    ids: list[str]
    ph_ids: torch.Tensor
    word_rows: torch.Tensor
    durations: torch.Tensor
    ph_masked: torch.Tensor
    mel: torch.Tensor
    frame_masked: torch.Tensor
    f0: torch.Tensor
    speaker: torch.Tensor
    n_frames: torch.Tensor

    @property
    def size(self) -> int:
        return self.ph_ids.shape[0]

    @property
    def frame_valid(self) -> torch.Tensor:
        return torch.arange(self.mel.shape[1])[None, :] < self.n_frames[:, None]

    def select(self, keep: torch.Tensor) -> "Batch":
        idx = torch.nonzero(keep).reshape(-1)
        return Batch(
            [self.ids[i] for i in idx.tolist()],
            *(getattr(self, f)[idx] for f in ("ph_ids", "word_rows", "durations", "ph_masked", "mel", "frame_masked", "f0", "speaker", "n_frames")),
        )


def make_batch(items: list[Prepared], spans: list[tuple[int, int] | None]) -> Batch:
    """Pad items into a batch; ``spans`` are masked phoneme ranges (None = nothing masked)."""
    bsz = len(items)
    max_p = max(len(it.ph_ids) for it in items)
    max_t = max(it.n_frames for it in items)
    d_word = items[0].word_rows.shape[1]
    n_mels = items[0].mel.shape[1]
    ph = np.zeros((bsz, max_p), dtype=np.int64)
    words = np.zeros((bsz, max_p, d_word), dtype=np.float32)
    durs = np.zeros((bsz, max_p), dtype=np.int64)
    ph_m = np.zeros((bsz, max_p), dtype=bool)
    mel = np.zeros((bsz, max_t, n_mels), dtype=np.float32)
    fr_m = np.zeros((bsz, max_t), dtype=bool)
    f0 = np.zeros((bsz, max_t), dtype=np.float32)
    for b, (it, span) in enumerate(zip(items, spans)):
        p, t = len(it.ph_ids), it.n_frames
        ph[b, :p] = it.ph_ids
        words[b, :p] = it.word_rows
        durs[b, :p] = it.durations
        mel[b, :t] = it.mel
        f0[b, :t] = it.f0
        if span is not None:
            a, e = span
            ph_m[b, a:e] = True
            ends = np.cumsum(it.durations)
            fr_m[b, ends[a] - it.durations[a] : ends[e - 1]] = True
    return Batch(
        [it.id for it in items],
        torch.from_numpy(ph),
        torch.from_numpy(words),
        torch.from_numpy(durs),
        torch.from_numpy(ph_m),
        torch.from_numpy(mel),
        torch.from_numpy(fr_m),
        torch.from_numpy(f0),
        torch.tensor([it.speaker for it in items], dtype=torch.long),
        torch.tensor([it.n_frames for it in items], dtype=torch.long),
    )


class DiffEditorModel(nn.Module):
    def __init__(self, cfg: RunConfig, speakers: list[str]):
        super().__init__()
        self.cfg = cfg
        self.speaker_names = list(speakers)
        m = cfg["model"]
        n_mels = cfg["audio.n_mels"]
        self.condition = ConditionBuilder(
            n_speakers=len(speakers),
            d=m["d"],
            d_word=cfg["word_encoder.d_word"],
            n_mels=n_mels,
            strategy=cfg["fusion.strategy"],
            encoder_layers=m["encoder_layers"],
            encoder_heads=m["encoder_heads"],
            encoder_ff=m["encoder_ff"],
            predictor_width=m["predictor_width"],
            predictor_kernel=m["predictor_kernel"],
            dropout=m["dropout"],
            pitch_bins=cfg["pitch.bins"],
            use_word_embeddings=m["use_word_embeddings"],
        )
        self.denoiser = Denoiser(
            n_mels, self.condition.d_condition, m["denoiser_width"], m["denoiser_blocks"], m["dilation_cycle"]
        )
        self.register_buffer("mel_mean", torch.zeros(n_mels))
        self.register_buffer("mel_std", torch.ones(n_mels))
        s = cfg["schedule"]
        self.schedule = make_schedule(s["steps"], s["beta_start"], s["beta_end"])

    def fit_normalizer(self, mels: list[np.ndarray]) -> None:
        stacked = np.concatenate(mels, axis=0).astype(np.float64)
        self.mel_mean.copy_(torch.from_numpy(stacked.mean(axis=0)).float())
        self.mel_std.copy_(torch.from_numpy(np.maximum(stacked.std(axis=0), 1e-3)).float())

    def normalize(self, mel: torch.Tensor) -> torch.Tensor:
        return (mel - self.mel_mean) / self.mel_std

    def denormalize(self, z: torch.Tensor) -> torch.Tensor:
        return z * self.mel_std + self.mel_mean

    def speaker_index(self, name: str) -> int:
        try:
            return self.speaker_names.index(name)
        except ValueError:
            raise DataError(f"unknown speaker {name!r}") from None

    def condition_for(self, batch: Batch, predict_pitch: bool, pitch_jitter: torch.Tensor | None = None):
        mel_norm = self.normalize(batch.mel) * batch.frame_valid[..., None]
        return self.condition(
            batch.ph_ids,
            batch.word_rows,
            batch.durations,
            batch.ph_masked,
            mel_norm,
            batch.frame_masked,
            batch.f0,
            batch.speaker,
            predict_pitch=predict_pitch,
            pitch_jitter=pitch_jitter,
        )


def provider_for(cfg: RunConfig) -> EmbeddingProvider:
    return make_provider(cfg["word_encoder.kind"], cfg["word_encoder.path"], cfg["word_encoder.d_word"])


def prepare(utt: Utterance, model: DiffEditorModel, provider: EmbeddingProvider, cache: EmbeddingCache | None) -> Prepared:
    tok = utt.tokenization
    words = cache.get(provider, tok.words) if cache is not None else None
    if words is None:
        from .frontend.embeddings import embed_words

        words = embed_words(provider, tok.words)
    rows = upsample_word_embeddings(words, tok, len(utt.phonemes))
    return Prepared(
        id=utt.id,
        ph_ids=phoneme_ids(list(utt.phonemes)),
        word_rows=rows.astype(np.float32),
        durations=np.asarray(utt.durations, dtype=np.int64),
        mel=np.asarray(utt.mel, dtype=np.float32),
        f0=np.asarray(utt.f0, dtype=np.float32),
        speaker=model.speaker_index(utt.speaker),
    )


# ---------------------------------------------------------------------------
# Checkpoints: one .npz archive of named arrays plus a JSON meta record
# ---------------------------------------------------------------------------

_FIXED_TIME = (1980, 1, 1, 0, 0, 0)


def _write_npz(path: Path, arrays: dict[str, np.ndarray]) -> None:
    # fixed member timestamps keep identical runs byte-identical
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_FIXED_TIME), buf.getvalue())


def save_checkpoint(path, model: DiffEditorModel, step: int, optimizer: torch.optim.Optimizer | None = None, state: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                st = optimizer.state.get(p)
                if not st:
                    continue
                for key, val in st.items():
                    arrays[f"optim/{names[id(p)]}/{key}"] = val.detach().cpu().numpy()
    state = dict(state or {})
    for key, val in list(state.items()):
        if isinstance(val, np.ndarray):
            arrays[f"state/{key}"] = val
            state.pop(key)
    meta = {
        "config": model.cfg.data,
        "config_hash": model.cfg.hash(),
        "step": int(step),
        "speakers": model.speaker_names,
        "code_version": code_version(),
        "state": state,
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    tmp = path.with_name(path.name + ".tmp")
    _write_npz(tmp, arrays)
    tmp.replace(path)
    return path


@dataclass
class LoadedCheckpoint:
    model: DiffEditorModel
    step: int
    meta: dict
    arrays: dict[str, np.ndarray]

    def restore_optimizer(self, optimizer: torch.optim.Optimizer) -> None:
        params = dict(self.model.named_parameters())
        for key, arr in self.arrays.items():
            if not key.startswith("optim/"):
                continue
            name, field = key[len("optim/") :].rsplit("/", 1)
            optimizer.state[params[name]][field] = torch.from_numpy(arr.copy())


def load_checkpoint(path, expected_hash: str | None = None) -> LoadedCheckpoint:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as npz:
        arrays = {k: npz[k] for k in npz.files}
    meta = json.loads(str(arrays.pop("meta")))
    cfg = RunConfig(meta["config"])
    if cfg.hash() != meta["config_hash"]:
        raise ConfigError(f"{path}: stored config does not match its recorded hash")
    if expected_hash is not None and expected_hash != meta["config_hash"]:
        raise ConfigError(f"config hash mismatch: checkpoint {meta['config_hash']} vs run {expected_hash}")
    model = DiffEditorModel(cfg, meta["speakers"])
    state = {k[len("param/") :]: torch.from_numpy(v.copy()) for k, v in arrays.items() if k.startswith("param/")}
    model.load_state_dict(state)
    model.eval()
    return LoadedCheckpoint(model, meta["step"], meta, arrays)
