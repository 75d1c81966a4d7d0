"""Atomic file writes for dumps, reports and caches"""
import os
from pathlib import Path

import numpy as np


def atomic_write_text(path, text):
    """Write `text` to a sibling temp file, then rename it over `path`"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(path.name + ".tmp")
    with open(tmp_path, "w", encoding="utf-8", newline="\n") as tmp_file:
        tmp_file.write(text)
    os.replace(tmp_path, path)


def atomic_savez(path, **arrays):
    """Save `arrays` as an npz archive through a sibling temp file renamed over `path`"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(path.name + ".tmp")
    with open(tmp_path, "wb") as tmp_file:
        np.savez(tmp_file, **arrays)
    os.replace(tmp_path, path)
