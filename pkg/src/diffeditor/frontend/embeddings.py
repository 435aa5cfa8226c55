"""Contextual word embeddings and their phoneme-level upsampling."""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch
from torch import nn

from ..data_model import WordTokenization
from ..errors import DataError, ProviderError
from ..ingestion.cache import load_array, save_array


class EmbeddingProvider(Protocol):
    name: str
    d_word: int

    def embed(self, words: Sequence[str]) -> np.ndarray: ...


@dataclass(frozen=True)
class WordEmbeddingMatrix:
    matrix: np.ndarray  # (n_words, d_word)
    provider: str

    @property
    def n_words(self) -> int:
        return self.matrix.shape[0]


class HashEmbeddingProvider:
    """Deterministic stand-in for a language model: one seeded Gaussian per (word, position)."""

    def __init__(self, d_word: int = 768):
        self.d_word = d_word
        self.name = f"hash-{d_word}"

    def embed(self, words: Sequence[str]) -> np.ndarray:
        rows = []
        for pos, word in enumerate(words):
            digest = hashlib.sha256(f"{pos}\x00{word}".encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            rows.append(rng.standard_normal(self.d_word))
        return np.stack(rows).astype(np.float32)


class BertEmbeddingProvider:
    """Last-layer hidden states of a BERT-family checkpoint, mean-pooled over subwords."""

    def __init__(self, path, d_word: int = 768, device: str = "cpu"):
        self.path = Path(path) if path else None
        self.d_word = d_word
        self.device = device
        self.name = f"bert:{self.path.name if self.path else 'unset'}"
        self._model = None
        self._tokenizer = None
        self._lock = threading.Lock()

    def _load(self):
        if self._model is not None:
            return
        if self.path is None or not self.path.exists():
            raise ProviderError(self.name, f"model asset not found at {self.path} (set word_encoder.path)")
        try:
            from transformers import AutoModel, AutoTokenizer

            self._tokenizer = AutoTokenizer.from_pretrained(str(self.path))
            self._model = AutoModel.from_pretrained(str(self.path)).to(self.device).eval()
        except Exception as exc:  # any loader failure is a provider failure
            raise ProviderError(self.name, f"failed to load model: {exc}") from exc
        hidden = self._model.config.hidden_size
        if hidden != self.d_word:
            raise ProviderError(self.name, f"hidden size {hidden} != d_word {self.d_word}")

    def embed(self, words: Sequence[str]) -> np.ndarray:
        with self._lock:
            self._load()
            enc = self._tokenizer(list(words), is_split_into_words=True, return_tensors="pt", truncation=True)
            with torch.no_grad():
                hidden = self._model(**{k: v.to(self.device) for k, v in enc.items()}).last_hidden_state[0]
            word_ids = enc.word_ids(0)
        out = np.zeros((len(words), self.d_word), dtype=np.float32)
        counts = np.zeros(len(words))
        hidden = hidden.cpu().numpy()
        for tok_idx, w in enumerate(word_ids):
            if w is not None:
                out[w] += hidden[tok_idx]
                counts[w] += 1
        if np.any(counts == 0):
            missing = [words[i] for i in np.flatnonzero(counts == 0)]
            raise ProviderError(self.name, f"no subword tokens for {missing} (input truncated?)")
        return out / counts[:, None].astype(np.float32)


def make_provider(kind: str, path=None, d_word: int = 768) -> EmbeddingProvider:
    if kind == "hash":
        return HashEmbeddingProvider(d_word)
    if kind == "bert":
        return BertEmbeddingProvider(path, d_word)
    raise ValueError(f"unknown word encoder {kind!r}")


def embed_words(provider: EmbeddingProvider, words: Sequence[str]) -> WordEmbeddingMatrix:
    if not words:
        raise DataError("empty word list")
    try:
        mat = np.asarray(provider.embed(list(words)), dtype=np.float32)
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(provider.name, str(exc)) from exc
    if mat.shape != (len(words), provider.d_word) or not np.all(np.isfinite(mat)):
        raise ProviderError(provider.name, f"bad embedding matrix of shape {mat.shape}")
    return WordEmbeddingMatrix(mat, provider.name)


class EmbeddingCache:
    """Per-utterance matrices keyed by (provider name, text hash)."""

    def __init__(self, root):
        self.root = Path(root)

    def _stem(self, provider: EmbeddingProvider, words: Sequence[str]) -> Path:
        key = hashlib.sha256(" ".join(words).encode()).hexdigest()[:20]
        safe = "".join(c if c.isalnum() or c in "-_" else "_" for c in provider.name)
        return self.root / safe / key

    def get(self, provider: EmbeddingProvider, words: Sequence[str]) -> WordEmbeddingMatrix:
        stem = self._stem(provider, words)
        cached = load_array(stem, provider.name)
        if cached is not None and cached.shape == (len(words), provider.d_word):
            return WordEmbeddingMatrix(cached, provider.name)
        mat = embed_words(provider, words)
        save_array(stem, mat.matrix, provider.name)
        return mat


def upsample_word_embeddings(words: WordEmbeddingMatrix | np.ndarray, tok: WordTokenization, n_phonemes: int) -> np.ndarray:
    """Repeat each word vector over its phoneme span; silences get zeros."""
    mat = words.matrix if isinstance(words, WordEmbeddingMatrix) else np.asarray(words)
    if mat.shape[0] != len(tok.words):
        raise DataError(f"{mat.shape[0]} word vectors for {len(tok.words)} words")
    out = np.zeros((n_phonemes, mat.shape[1]), dtype=mat.dtype)
    for row, (a, b) in zip(mat, tok.spans):
        if b > n_phonemes:
            raise DataError(f"word span ({a}, {b}) exceeds phoneme count {n_phonemes}")
        out[a:b] = row
    return out


class WordProjection(nn.Module):
    """Bias-free linear map from language-model width to model width."""

    def __init__(self, d_word: int = 768, d_model: int = 192):
        super().__init__()
        self.proj = nn.Linear(d_word, d_model, bias=False)

    def forward(self, rows: torch.Tensor) -> torch.Tensor:
        if rows.shape[-1] != self.proj.in_features:
            raise DataError(f"expected word vectors of width {self.proj.in_features}, got {rows.shape[-1]}")
        return self.proj(rows)


def project_word(projection: WordProjection, rows) -> torch.Tensor:
    return projection(torch.as_tensor(rows, dtype=torch.float32))
