"""Canonical, atomic JSON output: byte-identical across runs and schedules."""

from __future__ import annotations

import json
import os
from pathlib import Path


def dumps_canonical(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def dump_atomic(obj, path) -> None:
    """Write canonical JSON via a temp file and rename, so readers never see torn files."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_canonical(obj))
    os.replace(tmp, path)


def load(path):
    with open(path) as f:
        return json.load(f)
