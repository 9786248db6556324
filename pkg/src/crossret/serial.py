"""Versioned npz container shared by the model dumps: a JSON header plus arrays."""

from __future__ import annotations

import json
import zipfile

import numpy as np

from .errors import SerializationError

FORMAT_VERSION = 1


def write_npz(path, fmt: str, header: dict, arrays: dict) -> None:
    head = {"format": fmt, "version": FORMAT_VERSION, **header}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.frombuffer(json.dumps(head).encode(), dtype=np.uint8), **arrays)


def read_npz(path, fmt: str) -> tuple[dict, dict]:
    try:
        with np.load(path, allow_pickle=False) as d:
            header = json.loads(bytes(d["header"]).decode())
            arrays = {k: d[k].copy() for k in d.files if k != "header"}
    except (OSError, EOFError, ValueError, KeyError, zipfile.BadZipFile) as e:
        raise SerializationError(f"{path}: not a readable model file ({e})") from None
    if header.get("format") != fmt or header.get("version") != FORMAT_VERSION:
        raise SerializationError(f"{path}: expected {fmt} v{FORMAT_VERSION}, found "
                                 f"{header.get('format')} v{header.get('version')}")
    return header, arrays
