"""Praat TextGrid reader (long and short text formats).

Both formats reduce to the same token stream once key names and bracketed
indices are dropped, so a single walker handles them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from ..errors import DataError

_TOKEN = re.compile(r'"(?:[^"]|"")*"|<exists>|<absent>|[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?')
_INDEX = re.compile(r"\[\s*\d*\s*\]")
_SILENCE_LABELS = {"", "sil", "sp", "spn", "<eps>"}
EPS = 1e-6


@dataclass(frozen=True)
class Interval:
    start: float
    end: float
    label: str


def _tokens(text: str) -> list[str]:
    # key names (xmin, size, text, ...) carry no digits, so only values survive
    return _TOKEN.findall(_INDEX.sub(" ", text))


def _unquote(tok: str) -> str:
    if not (tok.startswith('"') and tok.endswith('"')):
        raise DataError(f"expected a quoted string, got {tok!r}")
    return tok[1:-1].replace('""', '"')


def read_tiers(path) -> tuple[float, float, dict[str, list[Interval]]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read TextGrid ({exc})") from exc
    for enc in ("utf-8-sig", "utf-16"):
        try:
            text = raw.decode(enc)
            break
        except UnicodeDecodeError:
            continue
    else:
        raise DataError(f"{path}: unknown text encoding")

    toks = _tokens(text)
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(toks):
            raise DataError(f"{path}: truncated TextGrid")
        tok = toks[pos]
        pos += 1
        return tok

    if _unquote(take()) != "ooTextFile" or _unquote(take()) != "TextGrid":
        raise DataError(f"{path}: not a TextGrid file")
    xmin, xmax = float(take()), float(take())
    if take() != "<exists>":
        return xmin, xmax, {}
    n_tiers = int(take())
    tiers: dict[str, list[Interval]] = {}
    for _ in range(n_tiers):
        cls = _unquote(take())
        name = _unquote(take())
        float(take()), float(take())
        n = int(take())
        items = []
        if cls == "IntervalTier":
            for _ in range(n):
                a, b = float(take()), float(take())
                items.append(Interval(a, b, _unquote(take()).strip()))
        else:
            for _ in range(n):
                take(), take()
        if cls == "IntervalTier":
            tiers[name] = items
    return xmin, xmax, tiers


def _tidy(intervals: list[Interval], xmin: float, xmax: float, tier: str, path) -> list[Interval]:
    for iv in intervals:
        if iv.end < iv.start - EPS:
            raise DataError(f"{path}: non-monotone times in tier {tier}: {iv}")
    ivs = sorted(intervals, key=lambda iv: (iv.start, iv.end))
    out: list[Interval] = []
    cursor = xmin
    for iv in ivs:
        if iv.start < cursor - EPS:
            raise DataError(f"{path}: overlapping intervals in tier {tier} at {iv.start:.4f}s")
        if iv.start > cursor + EPS:
            out.append(Interval(cursor, iv.start, "SIL"))
        label = "SIL" if iv.label.lower() in _SILENCE_LABELS else iv.label
        if iv.end - iv.start > EPS:
            out.append(Interval(max(iv.start, cursor), iv.end, label))
        cursor = max(cursor, iv.end)
    if xmax > cursor + EPS:
        out.append(Interval(cursor, xmax, "SIL"))
    return out


def parse_textgrid(path) -> tuple[list[Interval], list[Interval]]:
    """Return (phone intervals, word intervals), each tiling [xmin, xmax]."""
    xmin, xmax, tiers = read_tiers(path)
    lowered = {k.lower(): v for k, v in tiers.items()}
    result = []
    for name in ("phones", "words"):
        if name not in lowered:
            raise DataError(f"missing tier: {name}")
        result.append(_tidy(lowered[name], xmin, xmax, name, path))
    phones = [Interval(iv.start, iv.end, _phone_label(iv.label)) for iv in result[0]]
    return phones, result[1]


def _phone_label(label: str) -> str:
    up = label.upper()
    if up in ("SIL", "SPN", ""):
        return "SIL"
    return up


def write_textgrid(path, phones: list[Interval], words: list[Interval], xmax: float | None = None) -> None:
    """Write a long-format TextGrid with ``phones`` and ``words`` tiers."""
    xmax = max(phones[-1].end, words[-1].end) if xmax is None else xmax
    lines = [
        'File type = "ooTextFile"',
        'Object class = "TextGrid"',
        "",
        "xmin = 0",
        f"xmax = {xmax}",
        "tiers? <exists>",
        "size = 2",
        "item []:",
    ]
    for k, (name, tier) in enumerate((("phones", phones), ("words", words)), start=1):
        lines += [
            f"    item [{k}]:",
            '        class = "IntervalTier"',
            f'        name = "{name}"',
            "        xmin = 0",
            f"        xmax = {xmax}",
            f"        intervals: size = {len(tier)}",
        ]
        for j, iv in enumerate(tier, start=1):
            label = "" if iv.label == "SIL" else iv.label
            lines += [
                f"        intervals [{j}]:",
                f"            xmin = {iv.start}",
                f"            xmax = {iv.end}",
                f'            text = "{label}"',
            ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
