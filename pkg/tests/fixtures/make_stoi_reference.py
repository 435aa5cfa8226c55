"""Regenerate stoi_reference.json with the reference implementation (pystoi)."""

import json
import sys
from pathlib import Path

from pystoi import stoi

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE.parent))
from stoi_signals import FS, cases  # noqa: E402

if __name__ == "__main__":
    values = {name: stoi(ref, test, FS) for name, (ref, test) in cases().items()}
    (HERE / "stoi_reference.json").write_text(json.dumps(values, indent=2, sort_keys=True) + "\n")
