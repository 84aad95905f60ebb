"""Named-array archive format used for checkpoints, catalogs, and latents.

An archive is a zip file holding ``manifest.json`` plus one raw binary blob
per array under ``arrays/``. Array values are stored little-endian in
row-major (C) order; dtype and shape live in the manifest so a blob can be
validated before use. Zip entry timestamps are pinned so that writing the
same content twice yields identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import ArchiveFormatError

FORMAT_VERSION = 1

_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "int32": np.dtype("<i4"),
    "uint8": np.dtype("u1"),
}

# Fixed DOS timestamp (1980-01-01) keeps archive bytes reproducible.
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _dtype_name(arr: np.ndarray) -> str:
    for name, dt in _DTYPES.items():
        if arr.dtype == dt:
            return name
    raise ArchiveFormatError(f"unsupported array dtype {arr.dtype}")


def save_archive(path: str | Path, manifest: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write ``manifest`` and ``arrays`` to ``path`` as a version-1 archive."""
    meta = dict(manifest)
    meta["format_version"] = FORMAT_VERSION
    meta["arrays"] = {
        name: {"shape": list(arr.shape), "dtype": _dtype_name(arr)}
        for name, arr in sorted(arrays.items())
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("manifest.json", date_time=_EPOCH)
        zf.writestr(info, json.dumps(meta, sort_keys=True, separators=(",", ":")))
        for name, arr in sorted(arrays.items()):
            blob = np.ascontiguousarray(arr).astype(_DTYPES[_dtype_name(arr)], copy=False)
            info = zipfile.ZipInfo(f"arrays/{name}", date_time=_EPOCH)
            zf.writestr(info, blob.tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_archive(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read an archive, validating version and per-array shape/dtype metadata."""
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as exc:
        raise ArchiveFormatError(f"{path}: not a readable archive ({exc})") from exc
    with zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError as exc:
            raise ArchiveFormatError(f"{path}: missing manifest.json") from exc
        except (json.JSONDecodeError, zipfile.BadZipFile) as exc:
            raise ArchiveFormatError(f"{path}: corrupt manifest ({exc})") from exc
        version = manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise ArchiveFormatError(f"{path}: unsupported format version {version!r}")
        arrays: dict[str, np.ndarray] = {}
        for name, meta in manifest.get("arrays", {}).items():
            dtype = _DTYPES.get(meta.get("dtype"))
            if dtype is None:
                raise ArchiveFormatError(f"{path}: array {name!r} has unknown dtype {meta.get('dtype')!r}")
            shape = tuple(int(s) for s in meta["shape"])
            try:
                blob = zf.read(f"arrays/{name}")
            except (KeyError, zipfile.BadZipFile) as exc:
                raise ArchiveFormatError(f"{path}: array blob {name!r} missing or corrupt") from exc
            expected = int(np.prod(shape)) * dtype.itemsize
            if len(blob) != expected:
                raise ArchiveFormatError(
                    f"{path}: array {name!r} holds {len(blob)} bytes, manifest shape {shape} needs {expected}"
                )
            arrays[name] = np.frombuffer(blob, dtype=dtype).reshape(shape).copy()
    return manifest, arrays


def content_digest(manifest: dict, arrays: dict[str, np.ndarray]) -> str:
    """Stable short digest of archive content (manifest core + array bytes)."""
    import hashlib

    core = {k: v for k, v in manifest.items() if k not in ("arrays", "format_version")}
    h = hashlib.sha256()
    h.update(json.dumps(core, sort_keys=True, separators=(",", ":")).encode())
    for name in sorted(arrays):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arrays[name]).tobytes())
    return h.hexdigest()[:16]
