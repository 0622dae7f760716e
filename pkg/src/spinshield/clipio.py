"""On-disk formats for patch-signal clips.

Two interchangeable encodings:

* CSV with header ``m,t,value`` plus a sidecar JSON (``<path>.json``) carrying
  ``{"M": ..., "T": ..., "fps": ...}``; values are written with ``repr`` so the
  text round trip is bit-exact;
* a packed little-endian binary format: magic ``SPSC``, u32 M, u32 T, then
  M*T float64 values row-major.  The binary format does not store fps.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .spectral import DEFAULT_FPS, PatchSignalClip

MAGIC = b"SPSC"

_HEADER = struct.Struct("<4sII")


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_clip_csv(clip: PatchSignalClip, path: Path) -> None:
    path = Path(path)
    lines = ["m,t,value"]
    for m in range(clip.patch_count):
        for t in range(clip.frame_count):
            lines.append(f"{m},{t},{float(clip.signals[m, t])!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {"M": clip.patch_count, "T": clip.frame_count, "fps": clip.fps}
    sidecar_path(path).write_text(json.dumps(meta), encoding="utf-8")


def read_clip_csv(path: Path) -> PatchSignalClip:
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise DataFormatError(f"missing sidecar {side}")
    try:
        meta = json.loads(side.read_text(encoding="utf-8"))
        m_count, t_count = int(meta["M"]), int(meta["T"])
        fps = float(meta.get("fps", DEFAULT_FPS))
    except (ValueError, KeyError, TypeError) as exc:
        raise DataFormatError(f"bad sidecar {side}: {exc}") from exc

    signals = np.full((m_count, t_count), np.nan)
    seen = np.zeros((m_count, t_count), dtype=bool)
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "m,t,value":
            raise DataFormatError(f"{path}:1: expected header 'm,t,value', got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                m, t, value = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            if not (0 <= m < m_count and 0 <= t < t_count):
                raise DataFormatError(f"{path}:{lineno}: index ({m},{t}) outside {m_count}x{t_count}")
            if not np.isfinite(value):
                raise DataFormatError(f"{path}:{lineno}: non-finite value {parts[2]!r}")
            if seen[m, t]:
                raise DataFormatError(f"{path}:{lineno}: duplicate entry for ({m},{t})")
            signals[m, t] = value
            seen[m, t] = True
    if not seen.all():
        m, t = np.argwhere(~seen)[0]
        raise DataFormatError(f"{path}: missing entry for ({m},{t})")
    return PatchSignalClip(signals=signals, fps=fps)


def write_clip_binary(clip: PatchSignalClip, path: Path) -> None:
    path = Path(path)
    header = _HEADER.pack(MAGIC, clip.patch_count, clip.frame_count)
    payload = np.ascontiguousarray(clip.signals, dtype="<f8").tobytes()
    path.write_bytes(header + payload)


def read_clip_binary(path: Path, fps: float = DEFAULT_FPS) -> PatchSignalClip:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, m_count, t_count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * m_count * t_count
    if len(raw) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes for M={m_count}, T={t_count}, got {len(raw)}")
    signals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(m_count, t_count)
    if not np.all(np.isfinite(signals)):
        raise DataFormatError(f"{path}: non-finite values in payload")
    return PatchSignalClip(signals=signals.astype(np.float64), fps=fps)


def write_clip(clip: PatchSignalClip, path: Path, format: str) -> None:
    if format == "csv":
        write_clip_csv(clip, path)
    elif format == "binary":
        write_clip_binary(clip, path)
    else:
        raise ValueError(f"unknown clip format {format!r}")


def read_clip(path: Path, format: str) -> PatchSignalClip:
    if format == "csv":
        return read_clip_csv(path)
    if format == "binary":
        return read_clip_binary(path)
    raise ValueError(f"unknown clip format {format!r}")
