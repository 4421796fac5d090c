"""Parameter container on disk.

A checkpoint is a numpy ``.npz`` archive with these members:

``__format__``
    int64 scalar, the container format version (currently 1).
``__metadata__``
    UTF-8 JSON, stored as a uint8 array.
``param/<name>``
    one little-endian float64 array per parameter, in its own shape.
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path
from typing import Any, Mapping

import numpy as np

FORMAT_VERSION = 1
_PREFIX = "param/"
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(RuntimeError):
    pass


def save_params(path: str | Path, params: Mapping[str, np.ndarray],
                metadata: Mapping[str, Any] | None = None) -> None:
    path = Path(path)
    arrays = {f"{_PREFIX}{name}": np.ascontiguousarray(value, dtype="<f8")
              for name, value in params.items()}
    meta = json.dumps(dict(metadata or {}), sort_keys=True).encode("utf-8")
    arrays["__format__"] = np.array(FORMAT_VERSION, dtype="<i8")
    arrays["__metadata__"] = np.frombuffer(meta, dtype=np.uint8)
    buf = io.BytesIO()
    # np.savez stamps members with the wall clock; a fixed date keeps equal
    # parameters byte-identical on disk so checkpoint hashes are reproducible
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name, value in arrays.items():
            member = io.BytesIO()
            np.lib.format.write_array(member, value, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH), member.getvalue())
    try:
        path.write_bytes(buf.getvalue())
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def load_params(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        with np.load(io.BytesIO(raw), allow_pickle=False) as archive:
            if "__format__" not in archive.files:
                raise CheckpointError(f"{path}: missing format version")
            version = int(archive["__format__"])
            if version != FORMAT_VERSION:
                raise CheckpointError(
                    f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})")
            metadata = json.loads(bytes(archive["__metadata__"]).decode("utf-8"))
            params = {name[len(_PREFIX):]: archive[name].astype(np.float64)
                      for name in archive.files if name.startswith(_PREFIX)}
    except CheckpointError:
        raise
    except (zipfile.BadZipFile, ValueError, KeyError, EOFError, OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({type(exc).__name__}: {exc})") from exc
    return params, metadata
