"""Binary checkpoint container.

Layout (little-endian)::

    b"EGGH" | u32 version | u32 header_len | header JSON (UTF-8)
    | u64 payload_len | float32 parameters in declaration order | float64 extras

The header's ``kind`` field says what the payload holds ("forecaster" or
"static"); the payload length must agree with what the header implies.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EGGH"
VERSION = 1


class CheckpointError(Exception):
    pass


class MagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class LengthError(CheckpointError):
    pass


class IntegrityError(CheckpointError):
    pass


def write_container(path, header: dict, params_f32: np.ndarray, extras_f64: np.ndarray | None = None) -> None:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = np.ascontiguousarray(params_f32, dtype="<f4").tobytes()
    if extras_f64 is not None:
        body += np.ascontiguousarray(extras_f64, dtype="<f8").tobytes()
    blob = MAGIC + struct.pack("<II", VERSION, len(head)) + head + struct.pack("<Q", len(body)) + body
    Path(path).write_bytes(blob)


def read_container(path) -> tuple[dict, bytes]:
    """Validated (header, payload bytes)."""
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise LengthError(f"{path}: file too short for a checkpoint header ({len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise MagicError(f"{path}: bad magic {blob[:4]!r}")
    version, head_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    pos = 12 + head_len
    if len(blob) < pos + 8:
        raise LengthError(f"{path}: truncated inside the header")
    try:
        header = json.loads(blob[12:pos].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"{path}: unreadable header JSON ({exc})") from None
    (payload_len,) = struct.unpack_from("<Q", blob, pos)
    payload = blob[pos + 8:]
    if len(payload) != payload_len:
        raise LengthError(f"{path}: payload is {len(payload)} bytes, header declares {payload_len}")
    return header, payload


def split_payload(payload: bytes, n_f32: int, n_f64: int, where: str = "checkpoint"):
    expected = 4 * n_f32 + 8 * n_f64
    if len(payload) != expected:
        raise IntegrityError(
            f"{where}: header implies {n_f32} float32 + {n_f64} float64 values "
            f"({expected} bytes), payload has {len(payload)}")
    f32 = np.frombuffer(payload[:4 * n_f32], dtype="<f4").astype(np.float64)
    f64 = np.frombuffer(payload[4 * n_f32:], dtype="<f8").astype(np.float64)
    return f32, f64


def save_static(model, path) -> None:
    header = {"kind": "static", "joints": int(model.mean_pose.shape[0]),
              "counts": [int(c) for c in model.counts]}
    write_container(path, header, model.mean_pose.reshape(-1))


def load_static(path):
    from .baselines import StaticModel

    header, payload = read_container(path)
    if header.get("kind") != "static":
        raise IntegrityError(f"{path}: expected a static-baseline container, got kind={header.get('kind')!r}")
    J = int(header["joints"])
    f32, _ = split_payload(payload, 3 * J, 0, str(path))
    return StaticModel(f32.reshape(J, 3), np.asarray(header["counts"], dtype=np.int64))
