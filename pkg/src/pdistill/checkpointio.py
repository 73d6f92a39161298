"""Binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  "PDWN"
    version u32
    cfg_len u32, config JSON (utf-8)
    n_params u32
    per parameter:
        name_len u16, name utf-8
        ndim u8, dims u32 each
        data: float64 little-endian, C order
    step u64
    seed u64
    crc32 u32 over everything before it

Distinct error types for a corrupt header, an unsupported version, a
truncated file, and a checksum mismatch.
"""

import json
import struct
import zlib

import numpy as np

MAGIC = b"PDWN"
VERSION = 1


class CheckpointError(Exception):
    pass


class CorruptHeaderError(CheckpointError):
    pass


class UnknownVersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def save_checkpoint(path, config: dict, params: dict, step: int, seed: int) -> None:
    """params maps name -> array-like float64 (Parameter or ndarray)."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    blob = json.dumps(config, sort_keys=True).encode()
    chunks.append(struct.pack("<I", len(blob)))
    chunks.append(blob)
    chunks.append(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = params[name]
        data = np.ascontiguousarray(getattr(arr, "data", arr), dtype="<f8")
        enc = name.encode()
        chunks.append(struct.pack("<H", len(enc)))
        chunks.append(enc)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    chunks.append(struct.pack("<QQ", step, seed))
    payload = b"".join(chunks)
    with open(path, "wb") as f:
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"checkpoint truncated at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))


def load_checkpoint(path):
    """Returns (config dict, {name: ndarray}, step, seed)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise TruncatedError("file shorter than the checksum trailer")
    payload, (crc_stored,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise ChecksumError("checkpoint CRC32 mismatch")

    r = _Reader(payload)
    if r.take(4) != MAGIC:
        raise CorruptHeaderError("bad magic; not a checkpoint file")
    (version,) = r.u("<I")
    if version != VERSION:
        raise UnknownVersionError(f"unsupported checkpoint version {version}")
    (cfg_len,) = r.u("<I")
    try:
        config = json.loads(r.take(cfg_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptHeaderError(f"config blob unreadable: {e}") from None
    (n_params,) = r.u("<I")
    params = {}
    for _ in range(n_params):
        (name_len,) = r.u("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.u("<B")
        shape = r.u(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape)
        params[name] = data.astype(np.float64)
    step, seed = r.u("<QQ")
    if r.pos != len(payload):
        raise CorruptHeaderError(f"{len(payload) - r.pos} trailing bytes in payload")
    return config, params, step, seed


def restore_params(net, params: dict) -> None:
    """Overwrite a network's parameters in place, validating names/shapes."""
    missing = set(net.params) - set(params)
    extra = set(params) - set(net.params)
    if missing or extra:
        raise CheckpointError(f"parameter names mismatch: missing {sorted(missing)[:3]}, "
                              f"extra {sorted(extra)[:3]}")
    for name, arr in params.items():
        if net.params[name].data.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {name}: "
                                  f"{net.params[name].data.shape} vs {arr.shape}")
        net.params[name].data = arr.copy()
