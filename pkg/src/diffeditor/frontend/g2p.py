"""Grapheme-to-phoneme conversion: CMUdict lookup, letter-to-sound fallback."""

from __future__ import annotations

import re
from functools import lru_cache
from pathlib import Path

from ..data_model import PHONEME_TO_ID, PhonemeSequence, WordTokenization
from ..errors import DataError

_PAUSE = "<sp>"
_DIGITS = "zero one two three four five six seven eight nine".split()

# Greedy longest-match grapheme rules; vowels carry primary stress.
_LTS_RULES: list[tuple[str, tuple[str, ...]]] = sorted(
    [
        ("tch", ("CH",)), ("igh", ("AY1",)), ("ough", ("AO1",)), ("tion", ("SH", "AH0", "N")),
        ("sion", ("ZH", "AH0", "N")), ("ph", ("F",)), ("sh", ("SH",)), ("ch", ("CH",)),
        ("th", ("TH",)), ("wh", ("W",)), ("ng", ("NG",)), ("ck", ("K",)), ("qu", ("K", "W")),
        ("kn", ("N",)), ("wr", ("R",)), ("gh", ()), ("ee", ("IY1",)), ("ea", ("IY1",)),
        ("oo", ("UW1",)), ("ou", ("AW1",)), ("ow", ("OW1",)), ("oi", ("OY1",)), ("oy", ("OY1",)),
        ("ai", ("EY1",)), ("ay", ("EY1",)), ("au", ("AO1",)), ("aw", ("AO1",)), ("ie", ("IY1",)),
        ("ei", ("EY1",)), ("ue", ("UW1",)), ("ew", ("UW1",)), ("er", ("ER0",)), ("ir", ("ER1",)),
        ("ur", ("ER1",)), ("ar", ("AA1", "R")), ("or", ("AO1", "R")), ("ss", ("S",)), ("ll", ("L",)),
        ("tt", ("T",)), ("pp", ("P",)), ("mm", ("M",)), ("nn", ("N",)), ("ff", ("F",)),
        ("dd", ("D",)), ("bb", ("B",)), ("gg", ("G",)), ("rr", ("R",)), ("zz", ("Z",)),
        ("a", ("AE1",)), ("b", ("B",)), ("c", ("K",)), ("d", ("D",)), ("e", ("EH1",)),
        ("f", ("F",)), ("g", ("G",)), ("h", ("HH",)), ("i", ("IH1",)), ("j", ("JH",)),
        ("k", ("K",)), ("l", ("L",)), ("m", ("M",)), ("n", ("N",)), ("o", ("AA1",)),
        ("p", ("P",)), ("q", ("K",)), ("r", ("R",)), ("s", ("S",)), ("t", ("T",)),
        ("u", ("AH1",)), ("v", ("V",)), ("w", ("W",)), ("x", ("K", "S")), ("y", ("Y",)),
        ("z", ("Z",)), ("'", ()),
    ],
    key=lambda r: -len(r[0]),
)


def letter_to_sound(word: str) -> tuple[str, ...]:
    w = word.lower()
    out: list[str] = []
    i = 0
    while i < len(w):
        for graph, phones in _LTS_RULES:
            if w.startswith(graph, i):
                # word-final silent e after a consonant
                if graph == "e" and i == len(w) - 1 and i > 0 and out:
                    phones = ()
                out.extend(phones)
                i += len(graph)
                break
        else:
            i += 1
    if not out and any(c.isalpha() for c in w):
        # spell single letters / degenerate tokens
        for c in w:
            if c.isalpha():
                out.extend(_LTS_SINGLE[c])
    return tuple(out)


_LTS_SINGLE = {g: p for g, p in _LTS_RULES if len(g) == 1 and g.isalpha()}


def _load_lexicon_file(path: Path) -> dict[str, tuple[str, ...]]:
    lex: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="latin-1") as fh:
        for line in fh:
            if not line.strip() or line.startswith(";;;"):
                continue
            head, *phones = line.split("#")[0].split()
            word = re.sub(r"\(\d+\)$", "", head).lower()
            if word not in lex and phones:
                lex[word] = tuple(phones)
    return lex


@lru_cache(maxsize=4)
def load_lexicon(path: str | None = None) -> dict[str, tuple[str, ...]]:
    """CMUdict-style lexicon; the bundled CMUdict when ``path`` is None."""
    if path is not None:
        return _load_lexicon_file(Path(path))
    import cmudict

    return {w: tuple(prons[0]) for w, prons in cmudict.dict().items() if prons}


def normalize(text: str) -> list[str]:
    """Lowercased word tokens with punctuation turned into pause markers."""
    text = text.lower().replace("’", "'")
    text = re.sub(r"[,.;:!?()\[\]\"\u2014\u2013]|--", f" {_PAUSE} ", text)
    tokens: list[str] = []
    for raw in text.split():
        if raw == _PAUSE:
            tokens.append(_PAUSE)
            continue
        raw = re.sub(r"\d", lambda m: f" {_DIGITS[int(m.group())]} ", raw)
        for tok in raw.split():
            tok = re.sub(r"[^a-z']", "", tok).strip("'")
            if tok:
                tokens.append(tok)
    return tokens


def normalize_words(text: str) -> list[str]:
    return [t for t in normalize(text) if t != _PAUSE]


def word_phonemes(word: str, lexicon: dict[str, tuple[str, ...]]) -> tuple[str, ...]:
    phones = lexicon.get(word)
    if phones is None or any(p not in PHONEME_TO_ID for p in phones):
        phones = letter_to_sound(word)
    if not phones:
        raise DataError(f"word {word!r} produced no phonemes")
    return phones


def g2p(text: str, lexicon_path: str | None = None) -> tuple[PhonemeSequence, WordTokenization]:
    tokens = normalize(text)
    if not any(t != _PAUSE for t in tokens):
        raise DataError("empty text")
    lexicon = load_lexicon(lexicon_path)
    phonemes: list[str] = []
    words: list[str] = []
    spans: list[tuple[int, int]] = []
    for tok in tokens:
        if tok == _PAUSE:
            if phonemes and phonemes[-1] != "SP":
                phonemes.append("SP")
            continue
        start = len(phonemes)
        phonemes.extend(word_phonemes(tok, lexicon))
        words.append(tok)
        spans.append((start, len(phonemes)))
    while phonemes and phonemes[-1] == "SP":
        phonemes.pop()
    seq = PhonemeSequence(tuple(phonemes))
    tok = WordTokenization(tuple(words), tuple(spans))
    tok.check_against(seq)
    return seq, tok
