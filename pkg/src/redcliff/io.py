"""On-disk formats: dataset directories, model checkpoints, run manifests.

Binary payloads are little-endian float64 followed by a 4-byte little-endian
CRC32 of everything before it.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import time
import zlib
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .synth import SystemSpec, WindowedDataset

FORMAT_VERSION = 1
TOOL_VERSION = "0.1.0"


class FormatError(ValueError):
    pass


class ChecksumError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _write_blob(path, arrays) -> None:
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    Path(path).write_bytes(payload + struct.pack("<I", zlib.crc32(payload)))


def _read_blob(path) -> bytes:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ChecksumError(f"{path}: file too short for a checksum")
    payload, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) != crc:
        raise ChecksumError(f"{path}: CRC32 mismatch")
    return payload


def _check_version(meta: dict, path) -> None:
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported format_version {version!r}")


# -- datasets --------------------------------------------------------------------


def export_dataset(ds, path, generator_params: dict | None = None, system: SystemSpec | None = None) -> None:
    """Write one dataset directory.

    ``ds`` is a single WindowedDataset or a mapping of split name to dataset
    (normally ``{"train": ..., "val": ...}``).
    """
    splits = {ds.split: ds} if isinstance(ds, WindowedDataset) else dict(ds)
    first = next(iter(splits.values()))
    for s in splits.values():
        if (s.n_c, s.t_window, s.B) != (first.n_c, first.t_window, first.B):
            raise FormatError("splits disagree on n_c, T_window or B")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "n_c": first.n_c,
        "B": first.B,
        "T_window": first.t_window,
        "counts": {name: len(s) for name, s in splits.items()},
        "class_counts": {name: s.class_counts() for name, s in splits.items()},
        "seed": first.seed,
        "generator": generator_params or {},
    }
    for name, s in splits.items():
        _write_blob(path / f"{name}.bin", [s.x, s.y])
    write_json(path / "meta.json", meta)
    if system is not None:
        write_json(path / "system.json", system.to_dict())


def read_meta(path) -> dict:
    meta_path = Path(path) / "meta.json"
    try:
        meta = read_json(meta_path)
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{meta_path}: unreadable header ({exc})") from exc
    _check_version(meta, meta_path)
    for key in ("n_c", "B", "T_window", "counts"):
        if key not in meta:
            raise FormatError(f"{meta_path}: missing field {key!r}")
    return meta


def import_dataset(path, split: str = "train") -> WindowedDataset:
    meta = read_meta(path)
    n = meta["counts"].get(split)
    if n is None:
        raise FormatError(f"{path}: no split {split!r}")
    payload = _read_blob(Path(path) / f"{split}.bin")
    n_c, T, B = meta["n_c"], meta["T_window"], meta["B"]
    expected = n * (n_c * T + B)
    values = np.frombuffer(payload, dtype="<f8")
    if values.size != expected:
        raise FormatError(f"{path}/{split}.bin holds {values.size} values, header implies {expected}")
    x = values[: n * n_c * T].reshape(n, n_c, T).copy()
    y = values[n * n_c * T :].reshape(n, B).copy()
    return WindowedDataset(x, y, split=split, seed=meta.get("seed"))


def load_system(path) -> SystemSpec:
    path = Path(path)
    if path.is_dir():
        path = path / "system.json"
    return SystemSpec.from_dict(read_json(path))


# -- checkpoints -----------------------------------------------------------------


def save_checkpoint(model, path, extra: dict | None = None) -> None:
    """``model.json`` manifest plus ``weights.bin`` in manifest parameter order."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    named = model.named_parameters()
    manifest = {
        "format_version": FORMAT_VERSION,
        "architecture": model.architecture(),
        "parameters": [{"name": name, "shape": list(p.shape)} for name, p in named],
    }
    if extra:
        manifest["extra"] = extra
    _write_blob(path / "weights.bin", [p.data for _, p in named])
    write_json(path / "model.json", manifest)


def load_checkpoint(path):
    from .model import RedcliffModel

    path = Path(path)
    manifest = read_json(path / "model.json")
    _check_version(manifest, path / "model.json")
    model = RedcliffModel.from_architecture(manifest["architecture"])
    named = dict(model.named_parameters())
    values = np.frombuffer(_read_blob(path / "weights.bin"), dtype="<f8")
    offset = 0
    for entry in manifest["parameters"]:
        p = named.get(entry["name"])
        if p is None or list(p.shape) != entry["shape"]:
            raise FormatError(f"{path}: parameter {entry['name']} does not fit the architecture")
        size = int(np.prod(entry["shape"]))
        p.data[...] = values[offset : offset + size].reshape(entry["shape"])
        offset += size
    if offset != values.size:
        raise FormatError(f"{path}: weights.bin length does not match manifest")
    return model


# -- run bookkeeping -------------------------------------------------------------


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_inputs(paths) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for q in files:
            if q.name in ("run_manifest.json", ".lock"):
                continue
            out[str(q)] = file_sha256(q)
    return out


class RunManifest:
    """Collects one command's provenance; ``write`` emits ``run_manifest.json``."""

    def __init__(self, command: str, config: dict, seed, inputs=()):
        self.started = time.time()
        self.data = {
            "command": command,
            "config": config,
            "seed": seed,
            "input_hashes": hash_inputs(inputs),
            "outputs": [],
            "tool_version": TOOL_VERSION,
        }

    def add_output(self, path) -> None:
        self.data["outputs"].append(str(path))

    def write(self, out_dir) -> Path:
        self.data["wall_clock_seconds"] = time.time() - self.started
        target = Path(out_dir) / "run_manifest.json"
        write_json(target, self.data)
        return target


class LockError(RuntimeError):
    pass


@contextmanager
def directory_lock(out_dir):
    """Exclusive ``.lock`` file so two commands never write one directory at once."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise LockError(f"{out_dir} is locked by another command ({lock})") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)
