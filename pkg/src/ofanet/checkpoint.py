"""OFAC checkpoint files: named float32 tensors plus the run config verbatim.

Layout, all little-endian: magic "OFAC", u16 version, u32 config length +
utf-8 config text, u32 tensor count, then per tensor: u32 name length +
name, u8 rank, one u32 extent per axis, raw f32 data. Fixed sin-cos tables
are rebuilt from the config at load time and never stored.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import runconfig
from .modalities import ModalityRegistry
from .model import OfaNet, build_ofanet, named_parameters, rebind_parameters

_MAGIC = b"OFAC"
_VERSION = 1


@dataclass
class Checkpoint:
    config_text: str
    tensors: dict[str, np.ndarray]  # insertion order == file order

    @property
    def total_parameters(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())


def write_checkpoint(path: str | Path, config_text: str, tensors) -> None:
    """Write atomically (temp + rename); tensors is an iterable of (name, array)."""
    path = Path(path)
    items = [(name, np.ascontiguousarray(arr, dtype="<f4")) for name, arr in tensors]
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<H", _VERSION))
            blob = config_text.encode("utf-8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", len(items)))
            for name, arr in items:
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<I", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<B", arr.ndim))
                for extent in arr.shape:
                    fh.write(struct.pack("<I", extent))
                fh.write(arr.tobytes())
        tmp.replace(path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def save_net(path: str | Path, net: OfaNet, config_text: str) -> None:
    write_checkpoint(path, config_text, ((n, t.data) for n, t in named_parameters(net)))


def read_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not an OFAC checkpoint file")
    off = 4
    (version,) = struct.unpack_from("<H", raw, off)
    off += 2
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported OFAC version {version}")
    (cfg_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    config_text = raw[off : off + cfg_len].decode("utf-8")
    off += cfg_len
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", raw, off) if rank else ()
        off += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        tensors[name] = np.array(data)  # own the memory
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes after tensor data")
    return Checkpoint(config_text=config_text, tensors=tensors)


def load_net(
    path: str | Path, registry: ModalityRegistry | None = None
) -> tuple[OfaNet, runconfig.RunConfig]:
    """Rebuild the net described by the embedded config and load its weights."""
    ckpt = read_checkpoint(path)
    cfg = runconfig.parse_config(ckpt.config_text)
    reg = registry if registry is not None else cfg.build_registry()
    specs = [reg.lookup(mid) for mid in cfg.train.modalities]
    net = build_ofanet(cfg.train.model_dims(), specs, cfg.train.seed)
    rebind_parameters(net, ckpt.tensors)
    return net, cfg
