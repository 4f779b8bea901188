"""Self-describing binary container used by checkpoints and dataset files.

Layout (little-endian):

    bytes 0..3    magic (4 ASCII bytes)
    bytes 4..7    format version, uint32
    bytes 8..15   header length in bytes, uint64
    header        UTF-8 JSON (sorted keys); lists every payload array
                  under "tensors": [{"name": str, "shape": [int, ...]}, ...]
    payload       raw float64 arrays, C order, concatenated in the
                  declared order

The header byte count and the payload byte count must match the declared
sizes exactly; readers reject anything else.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ContractError

VERSION = 1


def write_blob(path, magic: bytes, header: dict, arrays: dict[str, np.ndarray]) -> None:
    if len(magic) != 4:
        raise ContractError("magic must be 4 bytes")
    tensors = [{"name": name, "shape": list(arrays[name].shape)} for name in arrays]
    header = dict(header)
    header["tensors"] = tensors
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for name in arrays:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def read_blob(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        got = fh.read(4)
        if got != magic:
            raise ContractError(f"bad magic {got!r}, expected {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ContractError(f"unsupported format version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    expected = sum(int(np.prod(t["shape"])) for t in header["tensors"]) * 8
    if len(payload) != expected:
        raise ContractError(
            f"payload length {len(payload)} does not match header-declared {expected}")
    arrays = {}
    ofs = 0
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        n = int(np.prod(shape)) * 8
        arrays[t["name"]] = np.frombuffer(payload[ofs:ofs + n], dtype="<f8").reshape(shape).copy()
        ofs += n
    return header, arrays
