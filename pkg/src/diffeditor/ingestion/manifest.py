from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..errors import DataError

REQUIRED = ("id", "audio", "text", "speaker")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    audio: Path
    text: str
    speaker: str
    textgrid: Path | None = None
    phonemes: tuple[str, ...] | None = None
    durations: tuple[int, ...] | None = None
    word_spans: tuple[tuple[int, int], ...] | None = None
    f0: Path | None = None


def _resolve(base: Path, value: str, lineno: int, key: str) -> Path:
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if not p.exists():
        raise DataError(f"line {lineno}: {key} file not found: {p}")
    return p


def load_manifest(path) -> list[ManifestEntry]:
    """Read a JSON-lines manifest; entries come back in file order."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    base = path.parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DataError(f"line {lineno}: expected a JSON object")
            for key in REQUIRED:
                if key not in obj:
                    raise DataError(f"line {lineno}: missing field {key}")
            uid = str(obj["id"])
            if uid in seen:
                raise DataError(f"line {lineno}: duplicate id {uid}")
            seen.add(uid)

            has_inline = "phonemes" in obj and "durations" in obj
            if "textgrid" not in obj and not has_inline:
                raise DataError(f"line {lineno}: missing field textgrid")
            entries.append(
                ManifestEntry(
                    id=uid,
                    audio=_resolve(base, obj["audio"], lineno, "audio"),
                    text=str(obj["text"]),
                    speaker=str(obj["speaker"]),
                    textgrid=_resolve(base, obj["textgrid"], lineno, "textgrid") if "textgrid" in obj else None,
                    phonemes=tuple(obj["phonemes"]) if "phonemes" in obj else None,
                    durations=tuple(int(d) for d in obj["durations"]) if "durations" in obj else None,
                    word_spans=tuple(tuple(s) for s in obj["word_spans"]) if "word_spans" in obj else None,
                    f0=_resolve(base, obj["f0"], lineno, "f0") if "f0" in obj else None,
                )
            )
    return entries
