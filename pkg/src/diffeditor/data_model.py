"""Core domain types shared across the package.

All types are frozen dataclasses holding numpy arrays; treat arrays as
read-only after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

LOG_FLOOR = 1e-5
LOG_FLOOR_VALUE = float(np.log(LOG_FLOOR))

# ARPAbet with lexical stress on vowels, plus silence (SIL) and short pause (SP).
_VOWELS = (
    "AA AE AH AO AW AY EH ER EY IH IY OW OY UH UW"
).split()
_CONSONANTS = (
    "B CH D DH F G HH JH K L M N NG P R S SH T TH V W Y Z ZH"
).split()
SILENCES = ("SIL", "SP")
PAD = "<pad>"
INVENTORY: tuple[str, ...] = (
    (PAD,)
    + SILENCES
    + tuple(_CONSONANTS)
    + tuple(v + s for v in _VOWELS for s in "012")
)
PHONEME_TO_ID = {p: i for i, p in enumerate(INVENTORY)}


def is_silence(symbol: str) -> bool:
    return symbol in SILENCES


@dataclass(frozen=True)
class MelSpectrogram:
    data: np.ndarray  # (T_frames, n_mels), natural-log mel energy
    sample_rate: int = 22050
    hop_length: int = 256

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 2 or data.shape[0] < 1:
            raise DataError(f"mel must be a non-empty (frames, n_mels) matrix, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("mel contains non-finite values")
        if data.min() < np.float32(LOG_FLOOR_VALUE) - 1e-4:
            raise DataError("mel values fall below the log floor")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_mels(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class PhonemeSequence:
    phonemes: tuple[str, ...]

    def __post_init__(self):
        phonemes = tuple(self.phonemes)
        if not phonemes:
            raise DataError("phoneme sequence is empty")
        unknown = [p for p in phonemes if p not in PHONEME_TO_ID or p == PAD]
        if unknown:
            raise DataError(f"unknown phoneme symbol(s): {unknown}")
        object.__setattr__(self, "phonemes", phonemes)

    def __len__(self) -> int:
        return len(self.phonemes)

    def ids(self) -> np.ndarray:
        return np.array([PHONEME_TO_ID[p] for p in self.phonemes], dtype=np.int64)


@dataclass(frozen=True)
class WordTokenization:
    words: tuple[str, ...]
    spans: tuple[tuple[int, int], ...]  # half-open phoneme index ranges, one per word

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(self.words))
        object.__setattr__(self, "spans", tuple((int(a), int(b)) for a, b in self.spans))
        if len(self.words) != len(self.spans):
            raise DataError("word count and span count differ")
        prev = 0
        for a, b in self.spans:
            if a < prev or b <= a:
                raise DataError(f"word spans must be ordered, disjoint and nonempty: {self.spans}")
            prev = b

    def check_against(self, phonemes: PhonemeSequence) -> None:
        n = len(phonemes)
        if self.spans and self.spans[-1][1] > n:
            raise DataError(f"word span {self.spans[-1]} exceeds phoneme count {n}")
        covered = np.zeros(n, dtype=bool)
        for a, b in self.spans:
            covered[a:b] = True
        stray = [phonemes.phonemes[i] for i in np.flatnonzero(~covered) if not is_silence(phonemes.phonemes[i])]
        if stray:
            raise DataError(f"phonemes outside any word span must be silences, got {stray}")


@dataclass(frozen=True)
class Alignment:
    durations: np.ndarray  # whole frames per phoneme

    def __post_init__(self):
        d = np.asarray(self.durations, dtype=np.int64).reshape(-1)
        if np.any(d < 0):
            raise DataError("durations must be nonnegative")
        object.__setattr__(self, "durations", d)

    @property
    def n_frames(self) -> int:
        return int(self.durations.sum())

    def intervals(self) -> np.ndarray:
        """(n_phonemes, 2) half-open frame intervals."""
        ends = np.cumsum(self.durations)
        return np.stack([ends - self.durations, ends], axis=1)


@dataclass(frozen=True)
class FrameMask:
    n_frames: int
    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start <= self.end <= self.n_frames):
            raise DataError(f"mask region [{self.start}, {self.end}) invalid for {self.n_frames} frames")

    @property
    def masked(self) -> np.ndarray:
        m = np.zeros(self.n_frames, dtype=bool)
        m[self.start : self.end] = True
        return m

    @property
    def length(self) -> int:
        return self.end - self.start

    @property
    def is_empty(self) -> bool:
        return self.end == self.start

    @classmethod
    def from_vector(cls, masked) -> "FrameMask":
        masked = np.asarray(masked, dtype=bool)
        idx = np.flatnonzero(masked)
        if idx.size == 0:
            return cls(masked.size, 0, 0)
        start, end = int(idx[0]), int(idx[-1]) + 1
        if idx.size != end - start:
            raise DataError("mask is not a single contiguous region")
        return cls(masked.size, start, end)


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @property
    def n_steps(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas


@dataclass(frozen=True)
class EditPlan:
    original_words: tuple[str, ...]
    edited_words: tuple[str, ...]
    prefix_words: int  # count of kept leading words
    suffix_words: int  # count of kept trailing words
    kept_prefix_frames: tuple[int, int]  # original-timeline frame interval copied verbatim
    kept_suffix_frames: tuple[int, int]
    new_phonemes: PhonemeSequence
    new_tokenization: WordTokenization
    durations: np.ndarray  # per new phoneme; -1 where duration is predicted
    duration_from_truth: np.ndarray  # bool per new phoneme
    is_noop: bool = False
    new_region: tuple[int, int] = (0, 0)  # regenerated phoneme range in the new sequence

    @property
    def removed_word_span(self) -> tuple[int, int]:
        return self.prefix_words, len(self.original_words) - self.suffix_words

    @property
    def inserted_words(self) -> tuple[str, ...]:
        return self.edited_words[self.prefix_words : len(self.edited_words) - self.suffix_words]

    @property
    def replaced_words(self) -> tuple[str, ...]:
        a, b = self.removed_word_span
        return self.original_words[a:b]

    @property
    def masked_frames(self) -> tuple[int, int]:
        """Original-timeline interval that gets regenerated."""
        return self.kept_prefix_frames[1], self.kept_suffix_frames[0]


@dataclass
class CheckReport:
    ok: bool
    violations: list[str] = field(default_factory=list)
    delta: int = 0


def validate_pair(mel: MelSpectrogram, align: Alignment) -> CheckReport:
    """Report whether the alignment's durations tile the mel's frames."""
    if align.durations.size == 0:
        return CheckReport(False, ["empty alignment"])
    delta = mel.n_frames - align.n_frames
    if delta:
        return CheckReport(
            False,
            [f"duration sum {align.n_frames} != mel frames {mel.n_frames} (delta={abs(delta)})"],
            abs(delta),
        )
    return CheckReport(True)


def mask_from_phoneme_span(align: Alignment, span: tuple[int, int]) -> FrameMask:
    a, b = span
    n = align.durations.size
    if not (0 <= a < b <= n):
        raise DataError(f"phoneme span {span} out of bounds for {n} phonemes")
    iv = align.intervals()
    start, end = int(iv[a, 0]), int(iv[b - 1, 1])
    if end == start:
        raise DataError("empty mask")
    return FrameMask(align.n_frames, start, end)


def sample_phoneme_span(durations, ratio_range: tuple[float, float], rng: np.random.Generator) -> tuple[int, int] | None:
    """Contiguous phoneme span whose frame coverage is near a ratio drawn uniformly from ``ratio_range``.

    Only spans whose coverage falls inside the range are eligible; None when
    there is none (utterance too short or too coarse).
    """
    d = np.asarray(durations, dtype=np.int64)
    total = d.sum()
    lo, hi = ratio_range
    target = rng.uniform(lo, hi)
    if total == 0:
        return None
    csum = np.concatenate([[0], np.cumsum(d)])
    a, b = np.triu_indices(d.size + 1, k=1)
    cover = (csum[b] - csum[a]) / total
    ok = (cover >= lo - 1e-12) & (cover <= hi + 1e-12) & (csum[b] > csum[a])
    if not ok.any():
        return None
    gap = np.where(ok, np.abs(cover - target), np.inf)
    best = np.flatnonzero(gap <= gap.min() + 1e-12)
    pick = best[rng.integers(best.size)]
    return int(a[pick]), int(b[pick])
