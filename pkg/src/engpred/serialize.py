"""Binary containers: ENGW named-array checkpoints and ENGF feature bundles.

Both formats share the named-array encoding:

    u32 name_len | name (UTF-8) | u32 rank | u32 dims[rank] | f64 data (row-major)

with all integers little-endian and array payloads little-endian float64.
An ENGW file is ``b"ENGW" | u32 version`` followed by named arrays until
EOF. An ENGF file is ``b"ENGF" | u32 version | u32 id_len | video_id |
u32 n_clips | f64 frame_rate`` followed by named arrays until EOF.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import IO, TYPE_CHECKING

import numpy as np

from .errors import DataError

if TYPE_CHECKING:
    from .model import FeatureBundle

WEIGHTS_MAGIC = b"ENGW"
FEATURES_MAGIC = b"ENGF"
FORMAT_VERSION = 1


def _write_u32(f: IO[bytes], value: int) -> None:
    f.write(struct.pack("<I", value))


def _read_exact(f: IO[bytes], n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise DataError(f"truncated file while reading {what}")
    return buf


def _read_u32(f: IO[bytes], what: str) -> int:
    return struct.unpack("<I", _read_exact(f, 4, what))[0]


def write_named_arrays(f: IO[bytes], arrays: dict[str, np.ndarray]) -> None:
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        data = np.ascontiguousarray(arr, dtype="<f8")
        _write_u32(f, len(encoded))
        f.write(encoded)
        _write_u32(f, data.ndim)
        for dim in data.shape:
            _write_u32(f, dim)
        f.write(data.tobytes(order="C"))


def read_named_arrays(f: IO[bytes]) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    while True:
        head = f.read(4)
        if not head:
            return arrays
        if len(head) != 4:
            raise DataError("truncated file while reading array name length")
        (name_len,) = struct.unpack("<I", head)
        name = _read_exact(f, name_len, "array name").decode("utf-8")
        rank = _read_u32(f, f"rank of {name!r}")
        dims = tuple(_read_u32(f, f"dims of {name!r}") for _ in range(rank))
        count = 1
        for dim in dims:
            count *= dim
        payload = _read_exact(f, 8 * count, f"data of {name!r}")
        arr = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
        if name in arrays:
            raise DataError(f"duplicate array {name!r}")
        arrays[name] = arr


def save_weights(path: Path | str, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        _write_u32(f, FORMAT_VERSION)
        write_named_arrays(f, arrays)


def load_weights(path: Path | str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != WEIGHTS_MAGIC:
            raise DataError(f"not a weights file (magic {magic!r})")
        version = _read_u32(f, "version")
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported weights format version {version}")
        return read_named_arrays(f)


def save_bundle(path: Path | str, bundle: "FeatureBundle") -> None:
    from .model import TEXT_KIND

    with open(path, "wb") as f:
        f.write(FEATURES_MAGIC)
        _write_u32(f, FORMAT_VERSION)
        encoded = bundle.video_id.encode("utf-8")
        _write_u32(f, len(encoded))
        f.write(encoded)
        _write_u32(f, bundle.n_clips)
        f.write(struct.pack("<d", bundle.frame_rate))
        arrays = dict(bundle.clip_features)
        arrays[TEXT_KIND + "_tokens"] = bundle.text_tokens
        write_named_arrays(f, arrays)


def load_bundle(path: Path | str) -> "FeatureBundle":
    from .model import TEXT_KIND, FeatureBundle

    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != FEATURES_MAGIC:
            raise DataError(f"not a feature bundle (magic {magic!r})")
        version = _read_u32(f, "version")
        if version != FORMAT_VERSION:
            raise DataError(f"unsupported bundle format version {version}")
        id_len = _read_u32(f, "video_id length")
        video_id = _read_exact(f, id_len, "video_id").decode("utf-8")
        n_clips = _read_u32(f, "n_clips")
        (frame_rate,) = struct.unpack("<d", _read_exact(f, 8, "frame_rate"))
        arrays = read_named_arrays(f)
    text_key = TEXT_KIND + "_tokens"
    if text_key not in arrays:
        raise DataError(f"bundle {video_id!r} is missing text tokens")
    text_tokens = arrays.pop(text_key)
    bundle = FeatureBundle(
        video_id=video_id,
        n_clips=n_clips,
        frame_rate=frame_rate,
        clip_features=arrays,
        text_tokens=text_tokens,
    )
    bundle.validate()
    return bundle


MANIFEST_REQUIRED_KEYS = (
    "video_id",
    "duration_s",
    "frame_rate",
    "feature_path",
    "nawp_label",
    "ecr_label",
)


def write_manifest(path: Path | str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, separators=(",", ":")))
            f.write("\n")


def read_manifest(path: Path | str) -> list[dict]:
    rows = []
    try:
        f = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open manifest {path}: {exc}") from exc
    with f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"manifest line {line_no}: invalid JSON: {exc.msg}") from exc
            if not isinstance(row, dict):
                raise DataError(f"manifest line {line_no}: not a JSON object")
            missing = [k for k in MANIFEST_REQUIRED_KEYS if k not in row]
            if missing:
                raise DataError(f"manifest line {line_no}: missing keys {missing}")
            rows.append(row)
    if not rows:
        raise DataError(f"manifest {path} is empty")
    return rows
