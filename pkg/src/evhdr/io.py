"""File formats: EVT1 event files, PFM, 8-bit PNG, JSON manifests, checkpoints."""

from __future__ import annotations

import json
import struct
import zipfile
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from evhdr.errors import CorruptFileError, InvalidInputError
from evhdr.event_sim import EventStream

EVT_MAGIC = b"EVT1"
EVT_VERSION = 1
# magic, version, width, height, count, t_start, t_end
EVT_HEADER = struct.Struct("<4sIIIQdd")
EVT_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<f8"), ("p", "i1")])


def write_events(path, stream: EventStream):
    stream.validate()
    records = np.empty(len(stream), dtype=EVT_RECORD)
    records["x"], records["y"], records["t"], records["p"] = stream.x, stream.y, stream.t, stream.p
    header = EVT_HEADER.pack(EVT_MAGIC, EVT_VERSION, stream.width, stream.height,
                             len(stream), stream.t_start, stream.t_end)
    with open(path, "wb") as f:
        f.write(header)
        f.write(records.tobytes())


def read_events(path) -> EventStream:
    data = Path(path).read_bytes()
    if len(data) < EVT_HEADER.size:
        raise CorruptFileError(f"{path}: truncated header")
    magic, version, width, height, count, t_start, t_end = EVT_HEADER.unpack_from(data)
    if magic != EVT_MAGIC:
        raise CorruptFileError(f"{path}: bad magic {magic!r}")
    if version != EVT_VERSION:
        raise CorruptFileError(f"{path}: unsupported version {version}")
    payload = data[EVT_HEADER.size:]
    if len(payload) != count * EVT_RECORD.itemsize:
        raise CorruptFileError(
            f"{path}: expected {count} records ({count * EVT_RECORD.itemsize} bytes), "
            f"found {len(payload)} bytes")
    records = np.frombuffer(payload, dtype=EVT_RECORD)
    if count and not np.all(np.isin(records["p"], (-1, 1))):
        raise CorruptFileError(f"{path}: polarity outside {{-1, +1}}")
    return EventStream(records["x"].copy(), records["y"].copy(), records["t"].copy(),
                       records["p"].copy(), t_start, t_end, width, height)


def write_pfm(path, image):
    image = np.asarray(image, dtype=np.float32)
    if not np.all(np.isfinite(image)):
        raise InvalidInputError("PFM images must be finite")
    if image.ndim == 3 and image.shape[2] == 3:
        kind = b"PF"
    elif image.ndim == 2 or (image.ndim == 3 and image.shape[2] == 1):
        kind = b"Pf"
        image = image.reshape(image.shape[0], image.shape[1])
    else:
        raise InvalidInputError(f"cannot store image of shape {image.shape} as PFM")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(kind + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        # PFM scanlines run bottom to top
        f.write(np.ascontiguousarray(image[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    try:
        kind, dims, scale, body = data.split(b"\n", 3)
        channels = {b"PF": 3, b"Pf": 1}[kind.strip()]
        w, h = (int(v) for v in dims.split())
        scale = float(scale)
    except (ValueError, KeyError) as exc:
        raise CorruptFileError(f"{path}: malformed PFM header") from exc
    if w <= 0 or h <= 0 or scale == 0:
        raise CorruptFileError(f"{path}: malformed PFM header")
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * channels
    if len(body) < 4 * n:
        raise CorruptFileError(f"{path}: truncated PFM payload")
    img = np.frombuffer(body[:4 * n], dtype=dtype).astype(np.float32)
    img = img.reshape(h, w, channels)[::-1]
    return np.ascontiguousarray(img if channels == 3 else img[..., 0])


def write_png(path, image):
    """Store an image in [0, 1] as 8-bit RGB."""
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise InvalidInputError("PNG images must be finite")
    img8 = np.round(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(img8).save(path)


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise CorruptFileError(f"{path}: unreadable PNG") from exc
    return arr.astype(np.float64) / 255.0


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{path}: invalid JSON ({exc})") from exc


def load_config(path) -> dict:
    """Read a YAML/JSON config file into a plain dict."""
    try:
        cfg = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise CorruptFileError(f"{path}: invalid config ({exc})") from exc
    if not isinstance(cfg, dict):
        raise CorruptFileError(f"{path}: config must be a mapping")
    return cfg


# -- checkpoints -----------------------------------------------------------

CHECKPOINT_FORMAT = "evhdr-checkpoint"


def save_checkpoint(path, state: dict, metadata: dict):
    """Write ``name -> array`` tensors as raw little-endian float32 plus a JSON manifest."""
    entries = []
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for i, (name, value) in enumerate(state.items()):
            arr = np.asarray(value, dtype="<f4")
            member = f"tensors/{i:04d}.bin"
            zf.writestr(member, arr.tobytes())
            entries.append({"name": name, "group": name.split(".", 1)[0],
                            "shape": list(arr.shape), "file": member})
        manifest = {"format": CHECKPOINT_FORMAT, "version": 1, "tensors": entries, **metadata}
        zf.writestr("manifest.json", json.dumps(manifest, indent=2))


def load_checkpoint(path) -> tuple[dict, dict]:
    """Returns ``(tensors, manifest)``."""
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            if manifest.get("format") != CHECKPOINT_FORMAT:
                raise CorruptFileError(f"{path}: not an evhdr checkpoint")
            state = {}
            for entry in manifest["tensors"]:
                raw = zf.read(entry["file"])
                arr = np.frombuffer(raw, dtype="<f4")
                if arr.size != int(np.prod(entry["shape"], dtype=np.int64)):
                    raise CorruptFileError(f"{path}: tensor {entry['name']} has wrong size")
                state[entry["name"]] = arr.reshape(entry["shape"]).copy()
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: unreadable checkpoint ({exc})") from exc
    return state, manifest


__all__ = [
    "EVT_HEADER", "EVT_RECORD", "load_checkpoint", "load_config", "read_events",
    "read_json", "read_pfm", "read_png", "save_checkpoint", "write_events",
    "write_json", "write_pfm", "write_png",
]
